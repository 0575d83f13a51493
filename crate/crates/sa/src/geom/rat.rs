//! Compact Lie-derivative towers for rational models.
//!
//! When every dynamics component and output is a rational function with
//! integer exponents, the tower entries can be kept as collected sparse
//! polynomials over a fixed denominator basis: `L^k h = P_k / Π B_j^{e_j}`.
//! Differentiation then merges like terms as it goes, which keeps deep
//! towers an order of magnitude smaller than the equivalent product-rule
//! DAGs. Models with transcendental atoms (e.g. symbolic Hill exponents)
//! cannot be converted and stay on the general DAG path.

use crate::model::{DerivativeClass, OdeModel};
use crate::symexpr::{as_fraction, expr_to_spoly, Expr, Kind, PolyRing, RatRow, SPoly, SymError, Symbol};
use num_traits::{One, Signed, ToPrimitive};
use std::collections::HashMap;

/// Stepping context: ring layout, denominator basis, and the dynamics in
/// numerator/denominator-exponent form.
pub struct RatTower {
    pub ring: PolyRing,
    pub basis: Vec<SPoly>,
    /// ∂B_j/∂v for every (basis index, ring var) pair where it is nonzero.
    basis_diffs: HashMap<(usize, usize), SPoly>,
    /// Basis indices depending on each ring var.
    var_deps: Vec<Vec<usize>>,
    /// (state ring index, numerator, denominator exponents) per nonzero f_i.
    dynamics: Vec<(usize, SPoly, Vec<u32>)>,
    /// Per input: derivative class and ring indices of u^(0), u^(1), ….
    inputs: Vec<(DerivativeClass, Vec<usize>)>,
    /// Initial rows, one per output.
    pub outputs: Vec<RatRow>,
}

/// Splits a cleared denominator into (factor, multiplicity) pairs following
/// its product structure.
fn denom_factors(d: &Expr) -> Vec<(Expr, u32)> {
    fn push(e: &Expr, mult: u32, out: &mut Vec<(Expr, u32)>) {
        match e.kind() {
            Kind::Num(q) if q.is_one() => {}
            Kind::Prod(ops) => {
                for o in ops {
                    push(o, mult, out);
                }
            }
            Kind::Pow(b, ex) => match ex.as_int().filter(|n| n.is_positive()).and_then(|n| n.to_u32()) {
                Some(k) => push(b, mult * k, out),
                None => out.push((e.clone(), mult)),
            },
            _ => out.push((e.clone(), mult)),
        }
    }
    let mut out = Vec::new();
    push(d, 1, &mut out);
    out
}

impl RatTower {
    /// Builds the stepping context, or `None` when the model is not rational
    /// with integer coefficients and exponents.
    pub fn try_new(m: &OdeModel) -> Option<RatTower> {
        let n_cols = m.states.len();
        let mut vars: Vec<Symbol> = m.states.clone();
        let mut input_vars = Vec::with_capacity(m.inputs.len());
        for spec in &m.inputs {
            let mut idxs = Vec::with_capacity(n_cols);
            for j in 0..n_cols as u32 {
                idxs.push(vars.len());
                vars.push(Symbol::input_deriv(spec.symbol.name(), j));
            }
            input_vars.push((spec.derivative_class, idxs));
        }
        let ring = PolyRing::new(vars);

        let mut basis_exprs: Vec<Expr> = Vec::new();
        let mut basis: Vec<SPoly> = Vec::new();
        let mut basis_index: HashMap<Expr, usize> = HashMap::new();
        let mut convert = |e: &Expr,
                           basis_exprs: &mut Vec<Expr>,
                           basis: &mut Vec<SPoly>,
                           basis_index: &mut HashMap<Expr, usize>|
         -> Option<(SPoly, Vec<(usize, u32)>)> {
            let (num, den) = as_fraction(e);
            let np = expr_to_spoly(&num, &ring)?;
            let mut exps = Vec::new();
            for (f, k) in denom_factors(&den) {
                let idx = match basis_index.get(&f) {
                    Some(&i) => i,
                    None => {
                        let p = expr_to_spoly(&f, &ring)?;
                        if p.is_zero() {
                            return None;
                        }
                        basis_exprs.push(f.clone());
                        basis.push(p);
                        basis_index.insert(f, basis.len() - 1);
                        basis.len() - 1
                    }
                };
                exps.push((idx, k));
            }
            Some((np, exps))
        };

        let mut dyn_raw = Vec::new();
        for (i, f) in m.dynamics.iter().enumerate() {
            if f.is_zero() {
                continue;
            }
            let (np, exps) = convert(f, &mut basis_exprs, &mut basis, &mut basis_index)?;
            dyn_raw.push((i, np, exps));
        }
        let mut out_raw = Vec::new();
        for h in &m.outputs {
            out_raw.push(convert(h, &mut basis_exprs, &mut basis, &mut basis_index)?);
        }

        let nb = basis.len();
        let to_vec = |exps: Vec<(usize, u32)>| {
            let mut v = vec![0u32; nb];
            for (i, k) in exps {
                v[i] += k;
            }
            v
        };
        let dynamics = dyn_raw
            .into_iter()
            .map(|(i, np, exps)| (i, np, to_vec(exps)))
            .collect();
        let outputs = out_raw
            .into_iter()
            .map(|(np, exps)| RatRow { num: np, den_exp: to_vec(exps) })
            .collect();

        let mut basis_diffs = HashMap::new();
        let mut var_deps = vec![Vec::new(); ring.n_vars()];
        for (j, b) in basis.iter().enumerate() {
            for v in 0..ring.n_vars() {
                if b.depends_on(v) {
                    basis_diffs.insert((j, v), b.diff(v).ok()?);
                    var_deps[v].push(j);
                }
            }
        }

        Some(RatTower {
            ring,
            basis,
            basis_diffs,
            var_deps,
            dynamics,
            inputs: input_vars,
            outputs,
        })
    }

    /// ∂row/∂v with the quotient rule applied over the basis.
    fn d_dv(&self, row: &RatRow, v: usize, cap: usize) -> Result<RatRow, SymError> {
        let dp = row.num.diff(v)?;
        let dep: Vec<usize> = self.var_deps[v]
            .iter()
            .copied()
            .filter(|&j| row.den_exp[j] > 0)
            .collect();
        if dep.is_empty() {
            return Ok(RatRow { num: dp, den_exp: row.den_exp.clone() });
        }
        // Q = ∂P·Π_{j∈dep}B_j − P·Σ_{j∈dep} e_j·∂B_j·Π_{l∈dep,l≠j}B_l
        let mut q = SPoly::zero();
        if !dp.is_zero() {
            let mut t = dp;
            for &j in &dep {
                let mut r = SPoly::zero();
                r.add_mul(&t, &self.basis[j], Some(cap))?;
                t = r;
            }
            q.add_scaled(&t, 1)?;
        }
        for &j in &dep {
            let db = &self.basis_diffs[&(j, v)];
            let mut t = SPoly::zero();
            t.add_mul(&row.num, db, Some(cap))?;
            for &l in &dep {
                if l != j {
                    let mut r = SPoly::zero();
                    r.add_mul(&t, &self.basis[l], Some(cap))?;
                    t = r;
                }
            }
            q.add_scaled(&t, -(row.den_exp[j] as i128))?;
            if q.len() > cap {
                return Err(SymError::BudgetExhausted);
            }
        }
        let mut den = row.den_exp.clone();
        for &j in &dep {
            den[j] += 1;
        }
        Ok(RatRow { num: q, den_exp: den })
    }

    /// One extended Lie-derivative step: Σ_i ∂row/∂x_i·f_i plus the chain
    /// terms Σ_j ∂row/∂u^(j)·u^(j+1), over a common denominator. `cap` bounds
    /// every intermediate's monomial count.
    pub fn step(&self, row: &RatRow, order: usize, cap: usize) -> Result<RatRow, SymError> {
        let nb = self.basis.len();
        let nv = self.ring.n_vars();
        let mut terms: Vec<(SPoly, Vec<u32>)> = Vec::new();
        for (xi, num_i, den_i) in &self.dynamics {
            let d = self.d_dv(row, *xi, cap)?;
            if d.num.is_zero() {
                continue;
            }
            let mut num = SPoly::zero();
            num.add_mul(&d.num, num_i, Some(cap))?;
            let den: Vec<u32> = d.den_exp.iter().zip(den_i).map(|(a, b)| a + b).collect();
            terms.push((num, den));
        }
        for (class, uvars) in &self.inputs {
            for j in 0..order {
                let next_is_zero = match class {
                    DerivativeClass::Unbounded => false,
                    DerivativeClass::ZeroAbove(k) => j as u32 + 1 > *k,
                };
                if next_is_zero {
                    continue;
                }
                let d = self.d_dv(row, uvars[j], cap)?;
                if d.num.is_zero() {
                    continue;
                }
                let mut num = SPoly::zero();
                num.add_mul(&d.num, &SPoly::var(uvars[j + 1], nv), Some(cap))?;
                terms.push((num, d.den_exp));
            }
        }
        if terms.is_empty() {
            return Ok(RatRow { num: SPoly::zero(), den_exp: vec![0; nb] });
        }
        let mut target = vec![0u32; nb];
        for (_, den) in &terms {
            for (t, &e) in target.iter_mut().zip(den) {
                *t = (*t).max(e);
            }
        }
        let mut acc = SPoly::zero();
        for (num, den) in terms {
            let mut t = num;
            for j in 0..nb {
                for _ in den[j]..target[j] {
                    let mut r = SPoly::zero();
                    r.add_mul(&t, &self.basis[j], Some(cap))?;
                    t = r;
                }
            }
            acc.add_scaled(&t, 1)?;
            if acc.len() > cap {
                return Err(SymError::BudgetExhausted);
            }
        }
        Ok(RatRow { num: acc, den_exp: target })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::symexpr::{eval_mod, Assignment, DEFAULT_PRIME};
    use crate::geom::lie_step;
    use crate::symexpr::DiffCache;
    use rand::{Rng, SeedableRng};

    /// The compact tower and the DAG tower must agree as functions: compare
    /// both representations of L^k h at random points.
    #[test]
    fn rational_tower_matches_dag_tower() {
        let src = "model m\nstates X, Z\nparams k1, b\ninputs u\n\
                   ode X' = k1*u + b - k1*X*Z - X/(1+Z)\node Z' = k1*X - b*Z\noutput X\n";
        let m = parse_model(src).unwrap().augment_with_params();
        let tower = RatTower::try_new(&m).expect("model is rational");
        let mut cache = DiffCache::new();
        let mut dag = m.outputs[0].clone();
        let mut rat = tower.outputs[0].clone();
        let p = DEFAULT_PRIME;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for order in 1..=4 {
            dag = lie_step(&m, &dag, order, &mut cache).unwrap();
            rat = tower.step(&rat, order, usize::MAX).unwrap();
            // evaluate both at a random point
            let vals: Vec<u64> = (0..tower.ring.n_vars()).map(|_| rng.gen_range(2..=p - 2)).collect();
            let mut a = Assignment::new();
            for (s, &v) in tower.ring.vars().iter().zip(&vals) {
                a.bind_u64(s.clone(), v);
            }
            let want = eval_mod(&dag, &a, p).unwrap();
            let mut got = rat.num.eval_mod(&vals, p);
            for (j, b) in tower.basis.iter().enumerate() {
                let bv = b.eval_mod(&vals, p);
                let inv = crate::symexpr::mod_inverse(bv, p).unwrap();
                let f = crate::symexpr::spoly::pow_m(inv, rat.den_exp[j] as u64, p);
                got = ((got as u128 * f as u128) % p as u128) as u64;
            }
            assert_eq!(got, want, "order {order}");
        }
    }

    #[test]
    fn non_rational_model_is_rejected() {
        let src = "model m\nstates T\nparams n\node T' = T^n\noutput T\n";
        let m = parse_model(src).unwrap().augment_with_params();
        assert!(RatTower::try_new(&m).is_none());
    }

    #[test]
    fn step_cap_trips() {
        let src = "model m\nstates X, Z\nparams k1, k2\noutput X\n\
                   ode X' = k1*X*Z + k2*Z\node Z' = k1*Z - k2*X*X\n";
        let m = parse_model(src).unwrap().augment_with_params();
        let tower = RatTower::try_new(&m).unwrap();
        let mut row = tower.outputs[0].clone();
        let mut err = None;
        for order in 1..=5 {
            match tower.step(&row, order, 3) {
                Ok(r) => row = r,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert_eq!(err, Some(SymError::BudgetExhausted));
    }
}
