//! Sparse multivariate polynomials over a fixed, ordered variable list.
//!
//! Expression DAGs are a poor fit for deep Lie-derivative towers of rational
//! models: the product-rule trees grow a large constant factor faster than
//! the underlying collected polynomials. This module provides the compact
//! alternative — monomial maps with exact integer coefficients — used by the
//! matrix builder whenever a model is rational with integer exponents.
//! Conversion is all-or-nothing: any transcendental atom (symbolic-exponent
//! power, logarithm) or non-integer coefficient makes [`expr_to_spoly`] fail,
//! and callers fall back to the general DAG representation.

use super::{Expr, Kind, SymError, Symbol};
use num_traits::ToPrimitive;
use rustc_hash::FxHashMap;

/// Exponent vector over the ring variables, in ring order.
pub type Mono = Box<[u8]>;

/// Fixed variable universe of a polynomial computation. The order of `vars`
/// is the monomial exponent order and the sampling order of rank probes.
#[derive(Debug, Clone)]
pub struct PolyRing {
    vars: Vec<Symbol>,
    index: FxHashMap<Symbol, usize>,
}

impl PolyRing {
    pub fn new(vars: Vec<Symbol>) -> Self {
        let index = vars.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        PolyRing { vars, index }
    }

    pub fn vars(&self) -> &[Symbol] {
        &self.vars
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn index_of(&self, s: &Symbol) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Sparse polynomial: exponent vector → nonzero i128 coefficient. All
/// arithmetic is checked; overflow surfaces as [`SymError::Overflow`] instead
/// of wrapping.
#[derive(Debug, Clone, Default)]
pub struct SPoly {
    terms: FxHashMap<Mono, i128>,
}

fn ck_add(a: i128, b: i128) -> Result<i128, SymError> {
    a.checked_add(b).ok_or(SymError::Overflow)
}

fn ck_mul(a: i128, b: i128) -> Result<i128, SymError> {
    a.checked_mul(b).ok_or(SymError::Overflow)
}

fn mono_mul(a: &Mono, b: &Mono) -> Result<Mono, SymError> {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| x.checked_add(y).ok_or(SymError::Overflow))
        .collect()
}

pub(crate) fn pow_m(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc: u64 = 1;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = ((acc as u128 * b as u128) % p as u128) as u64;
        }
        b = ((b as u128 * b as u128) % p as u128) as u64;
        e >>= 1;
    }
    acc
}

impl SPoly {
    pub fn zero() -> Self {
        SPoly::default()
    }

    pub fn constant(c: i128, n_vars: usize) -> Self {
        let mut p = SPoly::default();
        if c != 0 {
            p.terms.insert(vec![0u8; n_vars].into_boxed_slice(), c);
        }
        p
    }

    pub fn var(v: usize, n_vars: usize) -> Self {
        let mut m = vec![0u8; n_vars];
        m[v] = 1;
        let mut p = SPoly::default();
        p.terms.insert(m.into_boxed_slice(), 1);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of monomials.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    fn insert(&mut self, m: Mono, c: i128) -> Result<(), SymError> {
        use std::collections::hash_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                let s = ck_add(*e.get(), c)?;
                if s == 0 {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
        Ok(())
    }

    /// `self += k·other`.
    pub fn add_scaled(&mut self, other: &SPoly, k: i128) -> Result<(), SymError> {
        if k == 0 {
            return Ok(());
        }
        for (m, &c) in &other.terms {
            self.insert(m.clone(), ck_mul(c, k)?)?;
        }
        Ok(())
    }

    /// `self += a·b`, failing with [`SymError::BudgetExhausted`] as soon as
    /// the accumulator exceeds `max_len` monomials.
    pub fn add_mul(
        &mut self,
        a: &SPoly,
        b: &SPoly,
        max_len: Option<usize>,
    ) -> Result<(), SymError> {
        for (ma, &ca) in &a.terms {
            for (mb, &cb) in &b.terms {
                self.insert(mono_mul(ma, mb)?, ck_mul(ca, cb)?)?;
            }
            if let Some(cap) = max_len {
                if self.terms.len() > cap {
                    return Err(SymError::BudgetExhausted);
                }
            }
        }
        Ok(())
    }

    pub fn mul(a: &SPoly, b: &SPoly) -> Result<SPoly, SymError> {
        let mut r = SPoly::default();
        r.add_mul(a, b, None)?;
        Ok(r)
    }

    /// Partial derivative with respect to ring variable `v`.
    pub fn diff(&self, v: usize) -> Result<SPoly, SymError> {
        let mut r = SPoly::default();
        for (m, &c) in &self.terms {
            let e = m[v];
            if e == 0 {
                continue;
            }
            let mut m2 = m.clone();
            m2[v] = e - 1;
            r.insert(m2, ck_mul(c, e as i128)?)?;
        }
        Ok(r)
    }

    /// True when some monomial uses variable `v`.
    pub fn depends_on(&self, v: usize) -> bool {
        self.terms.keys().any(|m| m[v] > 0)
    }

    /// Maximum total degree over all monomials.
    pub fn total_degree(&self) -> u64 {
        self.terms
            .keys()
            .map(|m| m.iter().map(|&e| e as u64).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval_mod(&self, vals: &[u64], p: u64) -> u64 {
        let mut acc: u64 = 0;
        for (m, &c) in &self.terms {
            let mut t = coef_mod(c, p);
            for (v, &e) in m.iter().enumerate() {
                if e > 0 {
                    t = ((t as u128 * pow_m(vals[v], e as u64, p) as u128) % p as u128) as u64;
                }
            }
            acc = ((acc as u128 + t as u128) % p as u128) as u64;
        }
        acc
    }

    /// Value and gradient over the first `n_cols` ring variables at a point
    /// with all coordinates nonzero (`inv_vals[v]` = modular inverse of
    /// `vals[v]`). One pass: each monomial's value contributes `e_v·val/x_v`
    /// to coordinate `v` of the gradient.
    pub fn value_and_gradient_mod(
        &self,
        vals: &[u64],
        inv_vals: &[u64],
        n_cols: usize,
        p: u64,
    ) -> (u64, Vec<u64>) {
        let pw = p as u128;
        let mut value: u64 = 0;
        let mut grad = vec![0u64; n_cols];
        for (m, &c) in &self.terms {
            let mut t = coef_mod(c, p);
            for (v, &e) in m.iter().enumerate() {
                if e > 0 {
                    t = ((t as u128 * pow_m(vals[v], e as u64, p) as u128) % pw) as u64;
                }
            }
            value = ((value as u128 + t as u128) % pw) as u64;
            for (v, &e) in m.iter().take(n_cols).enumerate() {
                if e > 0 {
                    let d = (t as u128 * e as u128 % pw) * inv_vals[v] as u128 % pw;
                    grad[v] = ((grad[v] as u128 + d) % pw) as u64;
                }
            }
        }
        (value, grad)
    }
}

fn coef_mod(c: i128, p: u64) -> u64 {
    let r = c.rem_euclid(p as i128);
    r as u64
}

/// Converts a canonical expression into a sparse polynomial over `ring`.
/// Fails (with `None`) on logarithms, negative or symbolic exponents,
/// non-integer coefficients, and symbols outside the ring.
pub fn expr_to_spoly(e: &Expr, ring: &PolyRing) -> Option<SPoly> {
    let mut memo: FxHashMap<usize, SPoly> = FxHashMap::default();
    expr_to_spoly_walk(e, ring, &mut memo)
}

fn expr_to_spoly_walk(
    e: &Expr,
    ring: &PolyRing,
    memo: &mut FxHashMap<usize, SPoly>,
) -> Option<SPoly> {
    if let Some(p) = memo.get(&e.ptr()) {
        return Some(p.clone());
    }
    let nv = ring.n_vars();
    let r = match e.kind() {
        Kind::Num(q) => {
            if !q.is_integer() {
                return None;
            }
            SPoly::constant(q.to_integer().to_i128()?, nv)
        }
        Kind::Sym(s) => SPoly::var(ring.index_of(s)?, nv),
        Kind::Sum(ops) => {
            let mut acc = SPoly::zero();
            for o in ops {
                let q = expr_to_spoly_walk(o, ring, memo)?;
                acc.add_scaled(&q, 1).ok()?;
            }
            acc
        }
        Kind::Prod(ops) => {
            let mut acc = SPoly::constant(1, nv);
            for o in ops {
                let q = expr_to_spoly_walk(o, ring, memo)?;
                acc = SPoly::mul(&acc, &q).ok()?;
            }
            acc
        }
        Kind::Pow(b, ex) => {
            let k = ex.as_int()?.to_u32()?;
            if k > 64 {
                return None;
            }
            let bq = expr_to_spoly_walk(b, ring, memo)?;
            let mut acc = SPoly::constant(1, nv);
            for _ in 0..k {
                acc = SPoly::mul(&acc, &bq).ok()?;
            }
            acc
        }
        Kind::Log(_) => return None,
    };
    memo.insert(e.ptr(), r.clone());
    Some(r)
}

/// One row of a rational-function matrix: `num / Π basis[j]^den_exp[j]`.
/// The basis polynomials live with the owning matrix.
#[derive(Debug, Clone)]
pub struct RatRow {
    pub num: SPoly,
    pub den_exp: Vec<u32>,
}

/// A matrix of rational functions sharing one ring and denominator basis.
#[derive(Debug, Clone)]
pub struct RatMatrix {
    pub ring: PolyRing,
    pub basis: Vec<SPoly>,
    pub rows: Vec<RatRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{eval_mod, Assignment, DEFAULT_PRIME};

    fn ring_xy() -> PolyRing {
        PolyRing::new(vec![Symbol::state("x"), Symbol::state("y")])
    }

    #[test]
    fn convert_and_eval_matches_expr() {
        let ring = ring_xy();
        let x = Expr::sym(Symbol::state("x"));
        let y = Expr::sym(Symbol::state("y"));
        // (x + 2y)^3 - 5xy
        let e = Expr::sub(
            Expr::pow(Expr::add2(x.clone(), Expr::mul2(Expr::int(2), y.clone())), Expr::int(3)),
            Expr::mul(vec![Expr::int(5), x.clone(), y.clone()]),
        );
        let p = expr_to_spoly(&e, &ring).unwrap();
        let mut a = Assignment::new();
        a.bind_u64(Symbol::state("x"), 17);
        a.bind_u64(Symbol::state("y"), 23);
        let want = eval_mod(&e, &a, DEFAULT_PRIME).unwrap();
        assert_eq!(p.eval_mod(&[17, 23], DEFAULT_PRIME), want);
    }

    #[test]
    fn gradient_matches_symbolic_diff() {
        let ring = ring_xy();
        let x = Expr::sym(Symbol::state("x"));
        let y = Expr::sym(Symbol::state("y"));
        let e = Expr::add2(
            Expr::mul(vec![Expr::int(3), x.clone(), x.clone(), y.clone()]),
            Expr::pow(y.clone(), Expr::int(4)),
        );
        let p = expr_to_spoly(&e, &ring).unwrap();
        let prime = DEFAULT_PRIME;
        let vals = [11u64, 7u64];
        let invs = [
            crate::symexpr::mod_inverse(11, prime).unwrap(),
            crate::symexpr::mod_inverse(7, prime).unwrap(),
        ];
        let (v, g) = p.value_and_gradient_mod(&vals, &invs, 2, prime);
        let mut a = Assignment::new();
        a.bind_u64(Symbol::state("x"), 11);
        a.bind_u64(Symbol::state("y"), 7);
        assert_eq!(v, eval_mod(&e, &a, prime).unwrap());
        for (i, s) in [Symbol::state("x"), Symbol::state("y")].iter().enumerate() {
            let d = crate::symexpr::diff(&e, s).unwrap();
            assert_eq!(g[i], eval_mod(&d, &a, prime).unwrap());
        }
    }

    #[test]
    fn diff_and_cancellation() {
        let ring = ring_xy();
        let x = Expr::sym(Symbol::state("x"));
        let e = Expr::pow(x.clone(), Expr::int(3));
        let p = expr_to_spoly(&e, &ring).unwrap();
        let d = p.diff(0).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.eval_mod(&[2, 1], DEFAULT_PRIME), 12);
        // x - x cancels to the empty polynomial
        let mut z = SPoly::zero();
        z.add_scaled(&SPoly::var(0, 2), 1).unwrap();
        z.add_scaled(&SPoly::var(0, 2), -1).unwrap();
        assert!(z.is_zero());
    }

    #[test]
    fn rejects_non_polynomial_forms() {
        let ring = ring_xy();
        let x = Expr::sym(Symbol::state("x"));
        let n = Expr::sym(Symbol::param("n"));
        assert!(expr_to_spoly(&Expr::div(Expr::one(), x.clone()), &ring).is_none());
        assert!(expr_to_spoly(&Expr::pow(x.clone(), n), &ring).is_none());
        assert!(expr_to_spoly(&Expr::ratio(1, 2), &ring).is_none());
        // symbol outside the ring
        assert!(expr_to_spoly(&Expr::sym(Symbol::param("z")), &ring).is_none());
    }

    #[test]
    fn budget_cap_trips_in_add_mul() {
        let n = 6;
        let ring = PolyRing::new((0..n).map(|i| Symbol::state(&format!("v{i}"))).collect());
        // (v0+..+v5)^2 has 21 monomials
        let mut s = SPoly::zero();
        for i in 0..n {
            s.add_scaled(&SPoly::var(i, n), 1).unwrap();
        }
        let mut acc = SPoly::zero();
        let err = acc.add_mul(&s, &s, Some(10)).unwrap_err();
        assert_eq!(err, SymError::BudgetExhausted);
        let _ = ring;
    }
}
