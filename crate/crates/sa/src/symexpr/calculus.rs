//! Differentiation and substitution.

use super::{Expr, Kind, SymError, Symbol};
use std::collections::{HashMap, HashSet};

/// Memo for repeated partial derivatives over shared sub-DAGs. Reusing one
/// cache across a whole matrix build turns the repeated gradients of a Lie
/// derivative tower into near-linear work in the DAG size.
///
/// A cache may carry a storage budget in bytes: every distinct node appearing
/// in a computed derivative (or charged explicitly) is charged once at
/// [`DAG_NODE_COST`], and crossing the budget aborts with
/// [`SymError::BudgetExhausted`]. The check runs per memoized sub-derivative,
/// so runaway derivative towers fail long before they exhaust memory.
#[derive(Default)]
pub struct DiffCache {
    map: HashMap<(usize, Symbol), Expr>,
    // keeps the keyed nodes alive so pointer keys stay valid
    pinned: Vec<Expr>,
    seen: HashSet<usize>,
    used: u64,
    budget: Option<u64>,
}

/// Amortized storage cost of one retained DAG node, covering the node itself
/// plus its share of the memo tables and seen-sets that scale with it.
pub const DAG_NODE_COST: u64 = 256;

impl DiffCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_budget(budget: u64) -> Self {
        DiffCache { budget: Some(budget), ..Self::default() }
    }

    /// Bytes charged so far across distinct expression nodes.
    pub fn bytes_used(&self) -> u64 {
        self.used
    }

    /// Counts the expression's distinct nodes against the byte budget.
    pub fn charge(&mut self, e: &Expr) -> Result<(), SymError> {
        self.used += e.dag_size_into(&mut self.seen).saturating_mul(DAG_NODE_COST);
        match self.budget {
            Some(b) if self.used > b => Err(SymError::BudgetExhausted),
            _ => Ok(()),
        }
    }
}

/// Partial derivative of a canonical expression with respect to `s`.
pub fn diff(e: &Expr, s: &Symbol) -> Result<Expr, SymError> {
    let mut cache = DiffCache::new();
    diff_cached(e, s, &mut cache)
}

pub fn diff_cached(e: &Expr, s: &Symbol, cache: &mut DiffCache) -> Result<Expr, SymError> {
    let key = (e.ptr(), s.clone());
    if let Some(d) = cache.map.get(&key) {
        return Ok(d.clone());
    }
    let d = match e.kind() {
        Kind::Num(_) => Expr::zero(),
        Kind::Sym(t) => {
            if t == s {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Kind::Sum(ops) => {
            let mut parts = Vec::with_capacity(ops.len());
            for o in ops {
                parts.push(diff_cached(o, s, cache)?);
            }
            Expr::add(parts)
        }
        Kind::Prod(ops) => {
            let mut terms = Vec::with_capacity(ops.len());
            for (i, o) in ops.iter().enumerate() {
                let di = diff_cached(o, s, cache)?;
                if di.is_zero() {
                    continue;
                }
                let mut fs: Vec<Expr> = Vec::with_capacity(ops.len());
                fs.push(di);
                for (j, oj) in ops.iter().enumerate() {
                    if j != i {
                        fs.push(oj.clone());
                    }
                }
                terms.push(Expr::mul(fs));
            }
            Expr::add(terms)
        }
        Kind::Pow(b, ex) => {
            let b_dep = b.depends_on(s);
            let e_dep = ex.depends_on(s);
            match (b_dep, e_dep) {
                (false, false) => Expr::zero(),
                (true, false) => {
                    // e * b^(e-1) * b'
                    let db = diff_cached(b, s, cache)?;
                    Expr::mul(vec![
                        ex.clone(),
                        Expr::pow(b.clone(), Expr::add2(ex.clone(), Expr::int(-1))),
                        db,
                    ])
                }
                (false, true) => {
                    // b^e * ln(b) * e'
                    let de = diff_cached(ex, s, cache)?;
                    Expr::mul(vec![e.clone(), Expr::log(b.clone()), de])
                }
                (true, true) => return Err(SymError::UnsupportedDerivative(s.name().to_string())),
            }
        }
        Kind::Log(a) => {
            let da = diff_cached(a, s, cache)?;
            Expr::div(da, a.clone())
        }
    };
    if cache.budget.is_some() {
        cache.charge(&d)?;
    }
    cache.pinned.push(e.clone());
    cache.map.insert(key, d.clone());
    Ok(d)
}

/// Simultaneous substitution of symbols by expressions.
pub fn substitute(e: &Expr, bindings: &HashMap<Symbol, Expr>) -> Expr {
    if bindings.is_empty() {
        return e.clone();
    }
    let mut memo: HashMap<usize, Expr> = HashMap::new();
    subst_walk(e, bindings, &mut memo)
}

fn subst_walk(e: &Expr, bindings: &HashMap<Symbol, Expr>, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(r) = memo.get(&e.ptr()) {
        return r.clone();
    }
    let r = match e.kind() {
        Kind::Num(_) => e.clone(),
        Kind::Sym(s) => bindings.get(s).cloned().unwrap_or_else(|| e.clone()),
        Kind::Sum(ops) => Expr::add(ops.iter().map(|o| subst_walk(o, bindings, memo)).collect()),
        Kind::Prod(ops) => Expr::mul(ops.iter().map(|o| subst_walk(o, bindings, memo)).collect()),
        Kind::Pow(b, ex) => Expr::pow(subst_walk(b, bindings, memo), subst_walk(ex, bindings, memo)),
        Kind::Log(a) => Expr::log(subst_walk(a, bindings, memo)),
    };
    memo.insert(e.ptr(), r.clone());
    r
}

/// Structural replacement: any node equal to a key of `map` is replaced by
/// the mapped expression before its children are visited.
pub fn replace(e: &Expr, map: &HashMap<Expr, Expr>) -> Expr {
    if map.is_empty() {
        return e.clone();
    }
    let mut memo: HashMap<usize, Expr> = HashMap::new();
    replace_walk(e, map, &mut memo)
}

fn replace_walk(e: &Expr, map: &HashMap<Expr, Expr>, memo: &mut HashMap<usize, Expr>) -> Expr {
    if let Some(r) = memo.get(&e.ptr()) {
        return r.clone();
    }
    if let Some(r) = map.get(e) {
        memo.insert(e.ptr(), r.clone());
        return r.clone();
    }
    let r = match e.kind() {
        Kind::Num(_) | Kind::Sym(_) => e.clone(),
        Kind::Sum(ops) => Expr::add(ops.iter().map(|o| replace_walk(o, map, memo)).collect()),
        Kind::Prod(ops) => Expr::mul(ops.iter().map(|o| replace_walk(o, map, memo)).collect()),
        Kind::Pow(b, ex) => Expr::pow(replace_walk(b, map, memo), replace_walk(ex, map, memo)),
        Kind::Log(a) => Expr::log(replace_walk(a, map, memo)),
    };
    memo.insert(e.ptr(), r.clone());
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::SymbolKind;

    fn s(n: &str) -> Symbol {
        Symbol::state(n)
    }
    fn p(n: &str) -> Symbol {
        Symbol::param(n)
    }
    fn e(sym: Symbol) -> Expr {
        Expr::sym(sym)
    }

    #[test]
    fn product_rule() {
        // d/dX (k1*X*Z) = k1*Z
        let k1 = e(p("k1"));
        let xx = e(s("X"));
        let z = e(s("Z"));
        let f = Expr::mul(vec![k1.clone(), xx, z.clone()]);
        let d = diff(&f, &s("X")).unwrap();
        assert_eq!(d, Expr::mul2(k1, z));
    }

    #[test]
    fn power_rule_symbolic_exponent() {
        // d/dT T^nT = nT * T^(nT-1)
        let t = e(s("T"));
        let n = e(p("nT"));
        let f = Expr::pow(t.clone(), n.clone());
        let d = diff(&f, &s("T")).unwrap();
        let want = Expr::mul2(
            n.clone(),
            Expr::pow(t, Expr::add2(n, Expr::int(-1))),
        );
        assert_eq!(d, want);
    }

    #[test]
    fn quotient_rule_michaelis_menten() {
        // d/dX (Vmax*X/(X+Km)) = Vmax*Km/(X+Km)^2
        let v = e(p("Vmax"));
        let km = e(p("Km"));
        let xx = e(s("X"));
        let f = Expr::div(Expr::mul2(v.clone(), xx.clone()), Expr::add2(xx.clone(), km.clone()));
        let d = diff(&f, &s("X")).unwrap();
        let want = Expr::mul(vec![
            v,
            km.clone(),
            Expr::pow(Expr::add2(xx, km), Expr::int(-2)),
        ]);
        // both sides are rational functions; compare via cross-multiplied form
        assert!(crate::symexpr::is_zero_rational_fn(&Expr::sub(d, want)));
    }

    #[test]
    fn exponent_derivative_produces_log() {
        let t = e(s("T"));
        let n_sym = p("nT");
        let n = e(n_sym.clone());
        let f = Expr::pow(t.clone(), n.clone());
        let d = diff(&f, &n_sym).unwrap();
        let want = Expr::mul2(Expr::pow(t.clone(), n), Expr::log(t));
        assert_eq!(d, want);
    }

    #[test]
    fn both_dependent_power_rejected() {
        let xs = s("x");
        let x = e(xs.clone());
        let f = Expr::pow(x.clone(), x);
        assert!(matches!(diff(&f, &xs), Err(SymError::UnsupportedDerivative(_))));
    }

    #[test]
    fn diff_linearity_structural() {
        let xs = s("x");
        let x = e(xs.clone());
        let y = e(s("y"));
        let e1 = Expr::mul2(x.clone(), y.clone());
        let e2 = Expr::pow(x.clone(), Expr::int(3));
        let a = Expr::int(5);
        let b = Expr::ratio(-2, 3);
        let lhs = diff(
            &Expr::add2(Expr::mul2(a.clone(), e1.clone()), Expr::mul2(b.clone(), e2.clone())),
            &xs,
        )
        .unwrap();
        let rhs = Expr::add2(
            Expr::mul2(a, diff(&e1, &xs).unwrap()),
            Expr::mul2(b, diff(&e2, &xs).unwrap()),
        );
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn substitute_simultaneous_and_identity() {
        let xs = s("x");
        let ys = s("y");
        let f = Expr::add2(e(xs.clone()), e(ys.clone()));
        let mut b = HashMap::new();
        b.insert(xs.clone(), Expr::int(2));
        let r = substitute(&f, &b);
        assert_eq!(r, Expr::add2(Expr::int(2), e(ys.clone())));
        // simultaneous: {x -> y, y -> x} swaps, does not chain
        let mut sw = HashMap::new();
        sw.insert(xs.clone(), e(ys.clone()));
        sw.insert(ys.clone(), e(xs.clone()));
        let g = Expr::sub(e(xs.clone()), e(ys.clone()));
        let r = substitute(&g, &sw);
        assert_eq!(r, Expr::sub(e(ys), e(xs)));
        // empty map is identity
        assert_eq!(substitute(&f, &HashMap::new()), f);
    }

    #[test]
    fn substitute_kap_form() {
        // kap*HK with kap -> kapmax*I/(I+Kda)
        let kap = p("kap");
        let hk = e(s("HK"));
        let kapmax = e(p("kapmax"));
        let i = e(Symbol::new("I", SymbolKind::Input));
        let kda = e(p("Kda"));
        let f = Expr::mul2(e(kap.clone()), hk.clone());
        let mut b = HashMap::new();
        b.insert(
            kap,
            Expr::div(Expr::mul2(kapmax.clone(), i.clone()), Expr::add2(i.clone(), kda.clone())),
        );
        let r = substitute(&f, &b);
        let want = Expr::div(Expr::mul(vec![kapmax, i.clone(), hk]), Expr::add2(i, kda));
        assert_eq!(r, want);
    }
}
