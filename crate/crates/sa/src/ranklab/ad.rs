//! Numeric gradients over F_p by reverse-mode differentiation of the
//! expression DAG.
//!
//! Rank probes only ever need gradient *values* at random witness points, so
//! the gradients are never built symbolically: one forward evaluation pass
//! and one adjoint sweep per row produce all partial derivatives at once.
//! The rules mirror symbolic differentiation followed by modular evaluation,
//! including the treatment of transcendental atoms: every distinct `log`
//! argument gets an independent sampled value, exactly as the symbolic
//! pipeline samples replaced log atoms.

use crate::symexpr::{
    mod_inverse, pow_mod_rational, rational_mod, Assignment, Expr, Kind, SymError, Symbol,
};
use num_rational::BigRational;
use num_traits::One;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};

#[inline]
fn mul_m(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

#[inline]
fn add_m(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

/// Rejects the one power form whose derivative has no rational-function
/// representation in the sampled atoms: a base and a non-constant exponent
/// sharing a symbol. Mirrors the symbolic differentiator's refusal.
pub fn check_differentiable(funcs: &[Expr]) -> Result<(), SymError> {
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<Expr> = funcs.to_vec();
    while let Some(e) = stack.pop() {
        if !seen.insert(e.ptr()) {
            continue;
        }
        match e.kind() {
            Kind::Num(_) | Kind::Sym(_) => {}
            Kind::Sum(ops) | Kind::Prod(ops) => stack.extend(ops.iter().cloned()),
            Kind::Log(a) => stack.push(a.clone()),
            Kind::Pow(b, ex) => {
                if !matches!(ex.kind(), Kind::Num(_)) {
                    for s in ex.free_symbols() {
                        if b.depends_on(&s) {
                            return Err(SymError::UnsupportedDerivative(s.name().to_string()));
                        }
                    }
                }
                stack.push(b.clone());
                stack.push(ex.clone());
            }
        }
    }
    Ok(())
}

/// Evaluates functions and their gradients at one sampled point.
pub struct GradSampler<'a> {
    p: u64,
    assign: &'a Assignment,
    val: HashMap<usize, u64>,
    /// Sampled values of log atoms, keyed by the argument node.
    logs: HashMap<usize, u64>,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> GradSampler<'a> {
    pub fn new(assign: &'a Assignment, p: u64, rng: &'a mut ChaCha8Rng) -> Self {
        GradSampler { p, assign, val: HashMap::new(), logs: HashMap::new(), rng }
    }

    fn log_value(&mut self, arg: &Expr) -> u64 {
        let p = self.p;
        *self
            .logs
            .entry(arg.ptr())
            .or_insert_with(|| super::sample_value(self.rng, p))
    }

    /// Forward value of a node over F_p, memoized. Log nodes take sampled
    /// atom values; their arguments are still evaluated for the adjoint rule.
    pub fn value(&mut self, e: &Expr) -> Result<u64, SymError> {
        if let Some(&v) = self.val.get(&e.ptr()) {
            return Ok(v);
        }
        let p = self.p;
        let v = match e.kind() {
            Kind::Num(r) => rational_mod(r, p)?,
            Kind::Sym(s) => {
                let r = self
                    .assign
                    .get(s)
                    .ok_or_else(|| SymError::UnboundSymbol(s.name().to_string()))?;
                rational_mod(r, p)?
            }
            Kind::Sum(ops) => {
                let mut acc = 0u64;
                for o in ops {
                    acc = add_m(acc, self.value(o)?, p);
                }
                acc
            }
            Kind::Prod(ops) => {
                let mut acc = 1u64;
                for o in ops {
                    acc = mul_m(acc, self.value(o)?, p);
                }
                acc
            }
            Kind::Pow(b, ex) => {
                let bv = self.value(b)?;
                if !matches!(ex.kind(), Kind::Num(_)) {
                    // interior of the exponent participates in the adjoint
                    // sweep, so it needs field values as well
                    self.value(ex)?;
                }
                let ev = self.exponent(ex)?;
                pow_mod_rational(bv, &ev, p)?
            }
            Kind::Log(a) => {
                self.value(a)?;
                self.log_value(a)
            }
        };
        self.val.insert(e.ptr(), v);
        Ok(v)
    }

    /// Exact rational value of an exponent position.
    fn exponent(&self, ex: &Expr) -> Result<BigRational, SymError> {
        crate::symexpr::eval_rational(ex, self.assign)
    }

    /// Gradient of `f` with respect to `columns` at the sampled point, as one
    /// numeric matrix row.
    pub fn gradient(&mut self, f: &Expr, columns: &[Symbol]) -> Result<Vec<u64>, SymError> {
        let p = self.p;
        self.value(f)?;
        let col_index: HashMap<&Symbol, usize> =
            columns.iter().enumerate().map(|(i, s)| (s, i)).collect();

        // iterative postorder over the distinct nodes reachable from f
        let mut order: Vec<Expr> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Expr, bool)> = vec![(f.clone(), false)];
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                order.push(e);
                continue;
            }
            if !visited.insert(e.ptr()) {
                continue;
            }
            stack.push((e.clone(), true));
            match e.kind() {
                Kind::Num(_) | Kind::Sym(_) => {}
                Kind::Sum(ops) | Kind::Prod(ops) => {
                    stack.extend(ops.iter().map(|o| (o.clone(), false)));
                }
                Kind::Pow(b, ex) => {
                    stack.push((b.clone(), false));
                    if !matches!(ex.kind(), Kind::Num(_)) {
                        stack.push((ex.clone(), false));
                    }
                }
                Kind::Log(a) => stack.push((a.clone(), false)),
            }
        }

        let mut adj: HashMap<usize, u64> = HashMap::new();
        adj.insert(f.ptr(), 1);
        let mut row = vec![0u64; columns.len()];
        for e in order.iter().rev() {
            let a = match adj.get(&e.ptr()) {
                Some(&a) if a != 0 => a,
                _ => continue,
            };
            match e.kind() {
                Kind::Num(_) => {}
                Kind::Sym(s) => {
                    if let Some(&i) = col_index.get(s) {
                        row[i] = add_m(row[i], a, p);
                    }
                }
                Kind::Sum(ops) => {
                    for o in ops {
                        let slot = adj.entry(o.ptr()).or_insert(0);
                        *slot = add_m(*slot, a, p);
                    }
                }
                Kind::Prod(ops) => {
                    // adjoint of each factor is the product of the others
                    let vals: Vec<u64> = ops.iter().map(|o| self.val[&o.ptr()]).collect();
                    let mut suffix = vec![1u64; vals.len() + 1];
                    for i in (0..vals.len()).rev() {
                        suffix[i] = mul_m(suffix[i + 1], vals[i], p);
                    }
                    let mut prefix = 1u64;
                    for (o, (&v, &suf)) in ops.iter().zip(vals.iter().zip(&suffix[1..])) {
                        let others = mul_m(prefix, suf, p);
                        let slot = adj.entry(o.ptr()).or_insert(0);
                        *slot = add_m(*slot, mul_m(a, others, p), p);
                        prefix = mul_m(prefix, v, p);
                    }
                }
                Kind::Pow(b, ex) => {
                    let bv = self.val[&b.ptr()];
                    let k = self.exponent(ex)?;
                    // d/db b^k = k * b^(k-1)
                    let coeff = mul_m(
                        rational_mod(&k, p)?,
                        pow_mod_rational(bv, &(&k - BigRational::one()), p)?,
                        p,
                    );
                    let slot = adj.entry(b.ptr()).or_insert(0);
                    *slot = add_m(*slot, mul_m(a, coeff, p), p);
                    if !matches!(ex.kind(), Kind::Num(_)) {
                        // d/dk b^k = b^k * log b, with log b a sampled atom
                        let node_v = self.val[&e.ptr()];
                        let lv = self.log_value(b);
                        let slot = adj.entry(ex.ptr()).or_insert(0);
                        *slot = add_m(*slot, mul_m(a, mul_m(node_v, lv, p), p), p);
                    }
                }
                Kind::Log(arg) => {
                    let av = self.val[&arg.ptr()];
                    let inv = mod_inverse(av, p).ok_or(SymError::PoleEncountered)?;
                    let slot = adj.entry(arg.ptr()).or_insert(0);
                    *slot = add_m(*slot, mul_m(a, inv, p), p);
                }
            }
        }
        Ok(row)
    }
}
