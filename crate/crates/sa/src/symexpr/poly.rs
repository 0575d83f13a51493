//! Polynomial expansion and fraction normalization.
//!
//! Canonicalization alone keeps terms collected only up to structural
//! equality; zero-testing of rational functions additionally needs products
//! distributed over sums and a common denominator. These passes are used by
//! the affine-decomposition check, the equilibrium solver, the symbolic rank
//! oracle, and (estimate-gated) tower compaction in the matrix builder.

use super::{Expr, Kind};
use num_traits::{Signed, ToPrimitive};
use std::collections::HashMap;

/// Upper bound on the monomials [`expand`] would produce, counted before
/// like-term merging — i.e. the distribution work expansion costs. Negative
/// and symbolic powers stay atomic, matching [`expand`].
pub fn term_count_estimate(e: &Expr) -> u64 {
    fn walk(e: &Expr, memo: &mut HashMap<usize, u64>) -> u64 {
        if let Some(&n) = memo.get(&e.ptr()) {
            return n;
        }
        let n = match e.kind() {
            Kind::Num(_) | Kind::Sym(_) | Kind::Log(_) => 1,
            Kind::Sum(ops) => ops.iter().fold(0u64, |a, o| a.saturating_add(walk(o, memo))),
            Kind::Prod(ops) => ops.iter().fold(1u64, |a, o| a.saturating_mul(walk(o, memo))),
            Kind::Pow(b, ex) => match ex.as_int().and_then(|n| n.to_u32()) {
                Some(k) if k <= EXPAND_POW_LIMIT => {
                    let tb = walk(b, memo);
                    (0..k).fold(1u64, |a, _| a.saturating_mul(tb))
                }
                _ => 1,
            },
        };
        memo.insert(e.ptr(), n);
        n
    }
    walk(e, &mut HashMap::new())
}

const EXPAND_POW_LIMIT: u32 = 16;

/// Distribute products over sums and expand small integer powers of sums.
pub fn expand(e: &Expr) -> Expr {
    let mut memo = HashMap::new();
    expand_walk(e, &mut memo)
}

fn expand_walk(e: &Expr, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(r) = memo.get(&e.ptr()) {
        return r.clone();
    }
    let r = match e.kind() {
        Kind::Num(_) | Kind::Sym(_) => e.clone(),
        Kind::Sum(ops) => Expr::add(ops.iter().map(|o| expand_walk(o, memo)).collect()),
        Kind::Prod(ops) => {
            let factors: Vec<Expr> = ops.iter().map(|o| expand_walk(o, memo)).collect();
            distribute(factors)
        }
        Kind::Pow(b, ex) => {
            let bx = expand_walk(b, memo);
            if let Some(n) = ex.as_int() {
                if n.is_positive() {
                    if let Some(k) = n.to_u32() {
                        if k <= EXPAND_POW_LIMIT && matches!(bx.kind(), Kind::Sum(_)) {
                            let mut acc = bx.clone();
                            for _ in 1..k {
                                acc = distribute(vec![acc, bx.clone()]);
                            }
                            memo.insert(e.ptr(), acc.clone());
                            return acc;
                        }
                    }
                }
            }
            Expr::pow(bx, ex.clone())
        }
        Kind::Log(a) => Expr::log(expand_walk(a, memo)),
    };
    memo.insert(e.ptr(), r.clone());
    r
}

fn distribute(factors: Vec<Expr>) -> Expr {
    let mut terms: Vec<Expr> = vec![Expr::one()];
    for f in factors {
        match f.kind() {
            Kind::Sum(ops) => {
                let mut next = Vec::with_capacity(terms.len() * ops.len());
                for t in &terms {
                    for o in ops {
                        next.push(Expr::mul2(t.clone(), o.clone()));
                    }
                }
                terms = next;
            }
            _ => {
                for t in terms.iter_mut() {
                    *t = Expr::mul2(t.clone(), f.clone());
                }
            }
        }
        // a product of non-sums can still canonicalize into a sum via
        // exponent collection; re-split in that case
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t.kind() {
                Kind::Sum(ops) => flat.extend(ops.iter().cloned()),
                _ => flat.push(t),
            }
        }
        terms = flat;
    }
    Expr::add(terms)
}

/// Rewrite as `(numerator, denominator)` with negative powers cleared.
/// Powers with symbolic exponents and logarithms are treated as atomic
/// numerator factors.
pub fn as_fraction(e: &Expr) -> (Expr, Expr) {
    let mut memo = HashMap::new();
    frac_walk(e, &mut memo)
}

fn frac_walk(e: &Expr, memo: &mut HashMap<usize, (Expr, Expr)>) -> (Expr, Expr) {
    if let Some(r) = memo.get(&e.ptr()) {
        return r.clone();
    }
    let r = match e.kind() {
        Kind::Num(_) | Kind::Sym(_) | Kind::Log(_) => (e.clone(), Expr::one()),
        Kind::Sum(ops) => {
            let mut num = Expr::zero();
            let mut den = Expr::one();
            for o in ops {
                let (n_i, d_i) = frac_walk(o, memo);
                if d_i.is_one() {
                    num = Expr::add2(num, Expr::mul2(n_i, den.clone()));
                } else {
                    num = Expr::add2(Expr::mul2(num, d_i.clone()), Expr::mul2(n_i, den.clone()));
                    den = Expr::mul2(den, d_i);
                }
            }
            (num, den)
        }
        Kind::Prod(ops) => {
            let mut nums = Vec::new();
            let mut dens = Vec::new();
            for o in ops {
                let (n_i, d_i) = frac_walk(o, memo);
                nums.push(n_i);
                dens.push(d_i);
            }
            (Expr::mul(nums), Expr::mul(dens))
        }
        Kind::Pow(b, ex) => {
            match ex.as_int() {
                Some(n) => {
                    let (nb, db) = frac_walk(b, memo);
                    let mag = n.magnitude().to_u32();
                    match mag {
                        Some(k) if !n.is_negative() => {
                            (Expr::pow(nb, Expr::int(k as i64)), Expr::pow(db, Expr::int(k as i64)))
                        }
                        Some(k) => (Expr::pow(db, Expr::int(k as i64)), Expr::pow(nb, Expr::int(k as i64))),
                        None => (e.clone(), Expr::one()),
                    }
                }
                // symbolic exponent: atomic
                None => (e.clone(), Expr::one()),
            }
        }
    };
    memo.insert(e.ptr(), r.clone());
    r
}

/// True iff the expression is identically zero as a rational function,
/// decided by clearing denominators and expanding.
pub fn is_zero_rational_fn(e: &Expr) -> bool {
    if e.is_zero() {
        return true;
    }
    let (num, _) = as_fraction(e);
    expand(&num).is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Symbol;

    fn x() -> Expr {
        Expr::sym(Symbol::state("x"))
    }
    fn y() -> Expr {
        Expr::sym(Symbol::state("y"))
    }

    #[test]
    fn binomial_expansion_cancels() {
        // (x+1)^2 - x^2 - 2x - 1 == 0
        let e = Expr::add(vec![
            Expr::pow(Expr::add2(x(), Expr::one()), Expr::int(2)),
            Expr::neg(Expr::pow(x(), Expr::int(2))),
            Expr::neg(Expr::mul2(Expr::int(2), x())),
            Expr::int(-1),
        ]);
        assert!(is_zero_rational_fn(&e));
        assert!(expand(&e).is_zero());
    }

    #[test]
    fn fraction_combination() {
        // 1/x + 1/y - (x+y)/(x*y) == 0
        let e = Expr::add(vec![
            Expr::div(Expr::one(), x()),
            Expr::div(Expr::one(), y()),
            Expr::neg(Expr::div(Expr::add2(x(), y()), Expr::mul2(x(), y()))),
        ]);
        assert!(is_zero_rational_fn(&e));
    }

    #[test]
    fn nonzero_is_not_zero() {
        let e = Expr::sub(Expr::div(Expr::one(), x()), Expr::div(Expr::one(), y()));
        assert!(!is_zero_rational_fn(&e));
    }
}
