//! Symbolic equilibrium location for input-affine systems.
//!
//! The solver eliminates states one at a time from `f(x) + sum_i u_i g_i(x) = 0`
//! with the constant input levels `u_i` kept as free symbols. An equation may
//! be solved for a state it is linear in; when a single equation in a single
//! state remains, a quadratic in that state is also accepted (introducing a
//! square-root expression). Solving for an input level instead is allowed only
//! when the equation has no remaining states or depends on a remaining state
//! solely through a transcendental atom (symbolic-exponent power or log), so
//! that no algebraic solve in the states could ever succeed. If the search
//! fails it is retried with all inputs pinned to zero, and finally an exact
//! numeric fallback runs Newton steps from the all-ones point.

use crate::model::AffineDecomposition;
use crate::symexpr::{
    as_fraction, diff, eval_rational, expand, is_zero_rational_fn, substitute, Assignment, Expr,
    Kind, Symbol,
};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EquilibriumStatus {
    /// Symbolic state bindings; states absent from the list are free, and the
    /// bindings are fully resolved (no bound state appears on a right side).
    Parametric(Vec<(Symbol, Expr)>),
    /// Exact rational point found with every parameter and input set to one.
    Numeric(Vec<(Symbol, BigRational)>),
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquilibriumResult {
    pub status: EquilibriumStatus,
    /// Constant input level per input: the input's own symbol when any
    /// constant works, an expression or number when the solve pinned it.
    pub input_values: Vec<(Symbol, Expr)>,
}

impl EquilibriumResult {
    pub fn found(&self) -> bool {
        !matches!(self.status, EquilibriumStatus::NotFound)
    }

    /// Bound states as a substitution map; free states are absent.
    pub fn state_bindings(&self) -> HashMap<Symbol, Expr> {
        match &self.status {
            EquilibriumStatus::Parametric(b) => b.iter().cloned().collect(),
            EquilibriumStatus::Numeric(b) => {
                b.iter().map(|(s, v)| (s.clone(), Expr::num(v.clone()))).collect()
            }
            EquilibriumStatus::NotFound => HashMap::new(),
        }
    }

    pub fn input_map(&self) -> HashMap<Symbol, Expr> {
        self.input_values.iter().cloned().collect()
    }
}

/// Cap on elimination search nodes; the corpus needs well under a hundred.
const DFS_NODE_CAP: usize = 400;
const NEWTON_STEPS: usize = 10;
/// Exact-rational Newton iterates roughly double their digit count per step
/// away from a root; give up once a coordinate exceeds this many bits.
const NEWTON_BIT_CAP: u64 = 4096;

pub fn find_equilibrium(aff: &AffineDecomposition) -> EquilibriumResult {
    let inputs: Vec<Symbol> = aff.control_fields.iter().map(|(u, _)| u.clone()).collect();
    let eqs: Vec<Expr> = (0..aff.states.len())
        .map(|k| {
            let mut terms = vec![aff.drift[k].clone()];
            for (u, g) in &aff.control_fields {
                terms.push(Expr::mul2(Expr::sym(u.clone()), g[k].clone()));
            }
            Expr::add(terms)
        })
        .collect();

    // stage 1: inputs as free constant levels
    if let Some((states, solved_inputs)) = solve_elimination(&eqs, &aff.states, &inputs) {
        let solved: HashMap<Symbol, Expr> = solved_inputs.iter().cloned().collect();
        let input_values = inputs
            .iter()
            .map(|u| (u.clone(), solved.get(u).cloned().unwrap_or_else(|| Expr::sym(u.clone()))))
            .collect();
        return EquilibriumResult { status: EquilibriumStatus::Parametric(states), input_values };
    }

    // stage 2: inputs pinned to zero
    let zero_map: HashMap<Symbol, Expr> = inputs.iter().map(|u| (u.clone(), Expr::zero())).collect();
    let zeroed: Vec<Expr> = eqs.iter().map(|e| substitute(e, &zero_map)).collect();
    if let Some((states, _)) = solve_elimination(&zeroed, &aff.states, &[]) {
        let input_values = inputs.iter().map(|u| (u.clone(), Expr::zero())).collect();
        return EquilibriumResult { status: EquilibriumStatus::Parametric(states), input_values };
    }

    // stage 3: exact numeric fallback with every free symbol at one
    if let Some(point) = numeric_equilibrium(&eqs, &aff.states) {
        let input_values = inputs.iter().map(|u| (u.clone(), Expr::one())).collect();
        return EquilibriumResult { status: EquilibriumStatus::Numeric(point), input_values };
    }

    EquilibriumResult {
        status: EquilibriumStatus::NotFound,
        input_values: inputs.iter().map(|u| (u.clone(), Expr::sym(u.clone()))).collect(),
    }
}

struct Search<'a> {
    original: &'a [Expr],
    nodes: usize,
}

type Bindings = Vec<(Symbol, Expr)>;

fn solve_elimination(
    eqs: &[Expr],
    states: &[Symbol],
    inputs: &[Symbol],
) -> Option<(Bindings, Bindings)> {
    let mut search = Search { original: eqs, nodes: 0 };
    search.dfs(eqs.to_vec(), states.to_vec(), inputs.to_vec(), Vec::new(), Vec::new())
}

impl Search<'_> {
    fn dfs(
        &mut self,
        eqs: Vec<Expr>,
        states: Vec<Symbol>,
        inputs: Vec<Symbol>,
        state_binds: Bindings,
        input_binds: Bindings,
    ) -> Option<(Bindings, Bindings)> {
        if self.nodes >= DFS_NODE_CAP {
            return None;
        }
        self.nodes += 1;

        let mut live: Vec<Expr> = Vec::new();
        for e in eqs {
            if is_zero_rational_fn(&e) {
                continue;
            }
            // a nonzero equation free of all unknowns can never be satisfied
            if !states.iter().chain(&inputs).any(|v| e.depends_on(v)) {
                return None;
            }
            live.push(e);
        }
        if live.is_empty() {
            return self.verified(state_binds, input_binds);
        }

        for i in 0..live.len() {
            for v in &states {
                if let Some(sol) = linear_solve(&live[i], v) {
                    let Some((eqs2, s2)) = bind_state(&live, i, &states, v, &sol) else {
                        continue;
                    };
                    if let Some(hit) = self.dfs(
                        eqs2,
                        s2,
                        inputs.clone(),
                        pushed(&state_binds, v, &sol),
                        input_binds.clone(),
                    ) {
                        return Some(hit);
                    }
                }
            }
            if input_solve_allowed(&live[i], &states) {
                for u in &inputs {
                    if let Some(sol) = linear_solve(&live[i], u) {
                        let map = single(u, &sol);
                        let Some(eqs2) = live
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, e)| subst_numer(e, &map))
                            .collect::<Option<Vec<Expr>>>()
                        else {
                            continue;
                        };
                        let inputs2: Vec<Symbol> =
                            inputs.iter().filter(|w| *w != u).cloned().collect();
                        if let Some(hit) = self.dfs(
                            eqs2,
                            states.clone(),
                            inputs2,
                            state_binds.clone(),
                            pushed(&input_binds, u, &sol),
                        ) {
                            return Some(hit);
                        }
                    }
                }
            }
        }

        // endgame: one equation, one remaining state, quadratic in it
        if live.len() == 1 {
            let present: Vec<&Symbol> =
                states.iter().filter(|s| live[0].depends_on(s)).collect();
            if present.len() == 1 {
                let v = present[0].clone();
                if let Some(roots) = quadratic_solve(&live[0], &v) {
                    for sol in roots {
                        let s2: Vec<Symbol> =
                            states.iter().filter(|s| **s != v).cloned().collect();
                        if let Some(hit) = self.dfs(
                            Vec::new(),
                            s2,
                            inputs.clone(),
                            pushed(&state_binds, &v, &sol),
                            input_binds.clone(),
                        ) {
                            return Some(hit);
                        }
                    }
                }
            }
        }

        None
    }

    /// Resolves the triangular bindings and checks every original equation
    /// vanishes identically under them.
    fn verified(&self, state_binds: Bindings, input_binds: Bindings) -> Option<(Bindings, Bindings)> {
        let mut map: HashMap<Symbol, Expr> = HashMap::new();
        let mut all: Vec<(Symbol, Expr, bool)> = Vec::new();
        for (s, e) in &state_binds {
            all.push((s.clone(), e.clone(), true));
        }
        for (s, e) in &input_binds {
            all.push((s.clone(), e.clone(), false));
        }
        // later bindings never mention earlier-bound unknowns, so resolving in
        // reverse order leaves only free symbols on the right sides
        let mut resolved: Vec<(Symbol, Expr, bool)> = Vec::new();
        for (s, e, is_state) in all.into_iter().rev() {
            let r = substitute(&e, &map);
            map.insert(s.clone(), r.clone());
            resolved.push((s, r, is_state));
        }
        for eq in self.original {
            if !is_zero_rational_fn(&substitute(eq, &map)) {
                return None;
            }
        }
        let mut sb = Vec::new();
        let mut ib = Vec::new();
        for (s, e, is_state) in resolved.into_iter().rev() {
            if is_state {
                sb.push((s, e));
            } else {
                ib.push((s, e));
            }
        }
        Some((sb, ib))
    }
}

fn single(v: &Symbol, e: &Expr) -> HashMap<Symbol, Expr> {
    let mut m = HashMap::new();
    m.insert(v.clone(), e.clone());
    m
}

fn pushed(binds: &Bindings, v: &Symbol, e: &Expr) -> Bindings {
    let mut b = binds.clone();
    b.push((v.clone(), e.clone()));
    b
}

/// Upper bound on the number of monomials `e` would have after expansion,
/// saturating; memoized on shared subterms so the estimate itself is cheap.
/// Monomial budget for any single equation inside the elimination search;
/// branches whose intermediates would expand past this are abandoned.
const TERM_CAP: u64 = 5_000;

fn within_cap(e: &Expr) -> bool {
    crate::symexpr::term_count_estimate(e) <= TERM_CAP
}

/// Substitutes a binding into an equation and keeps only the expanded
/// fraction numerator: the equations are `= 0`, flattening after every step
/// stops nested rational expressions from growing without bound, and the
/// expansion collapses identically-zero coefficients so later linearity
/// checks see through unsimplified ratios. `None` when the expansion would
/// exceed the monomial budget.
fn subst_numer(e: &Expr, map: &HashMap<Symbol, Expr>) -> Option<Expr> {
    let num = as_fraction(&substitute(e, map)).0;
    if !within_cap(&num) {
        return None;
    }
    Some(expand(&num))
}

fn bind_state(
    live: &[Expr],
    skip: usize,
    states: &[Symbol],
    v: &Symbol,
    sol: &Expr,
) -> Option<(Vec<Expr>, Vec<Symbol>)> {
    let map = single(v, sol);
    let eqs = live
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, e)| subst_numer(e, &map))
        .collect::<Option<Vec<_>>>()?;
    let states = states.iter().filter(|s| *s != v).cloned().collect();
    Some((eqs, states))
}

/// Solves the fraction numerator of `eq` for `v` when it is linear in `v`
/// with a coefficient that is not identically zero.
fn linear_solve(eq: &Expr, v: &Symbol) -> Option<Expr> {
    let raw = as_fraction(eq).0;
    if !within_cap(&raw) {
        return None;
    }
    let num = expand(&raw);
    if !num.depends_on(v) {
        return None;
    }
    let a = diff(&num, v).ok()?;
    if a.depends_on(v) || is_zero_rational_fn(&a) {
        return None;
    }
    let b = substitute(&num, &single(v, &Expr::zero()));
    if let Some(r) = monomial_ratio(&b, &a) {
        return Some(Expr::neg(r));
    }
    Some(Expr::neg(Expr::div(b, a)))
}

/// Reduces `b/a` to a ratio of monomials when the two polynomials share their
/// whole non-monomial part (e.g. `p*q / (m*q)` with `p`, `m` monomials). Each
/// candidate pairs a term of `b` with the leading term of `a`; a candidate is
/// kept only if `b - (candidate)*a` vanishes identically, so a miss can never
/// produce a wrong solution, only a less simplified one.
fn monomial_ratio(b: &Expr, a: &Expr) -> Option<Expr> {
    const CANDIDATES: usize = 64;
    fn n_terms(e: &Expr) -> usize {
        match e.kind() {
            Kind::Sum(ops) => ops.len(),
            _ => 1,
        }
    }
    // a monomial ratio maps terms of `a` onto terms of `b` one-to-one
    if n_terms(b) != n_terms(a) {
        return None;
    }
    let ta = match a.kind() {
        Kind::Sum(ops) => ops[0].clone(),
        _ => a.clone(),
    };
    let tb: Vec<Expr> = match b.kind() {
        Kind::Sum(ops) => ops.iter().take(CANDIDATES).cloned().collect(),
        _ => vec![b.clone()],
    };
    for t in tb {
        let r = Expr::div(t, ta.clone());
        let residual = Expr::sub(b.clone(), Expr::mul2(r.clone(), a.clone()));
        if is_zero_rational_fn(&residual) {
            return Some(r);
        }
    }
    None
}

/// Both roots of a numerator that is exactly quadratic in `v`.
fn quadratic_solve(eq: &Expr, v: &Symbol) -> Option<[Expr; 2]> {
    let raw = as_fraction(eq).0;
    if !within_cap(&raw) {
        return None;
    }
    let num = expand(&raw);
    let d1 = diff(&num, v).ok()?;
    let d2 = diff(&d1, v).ok()?;
    if d2.depends_on(v) || is_zero_rational_fn(&d2) {
        return None;
    }
    let a = Expr::div(d2, Expr::int(2));
    let b = substitute(&d1, &single(v, &Expr::zero()));
    let c = substitute(&num, &single(v, &Expr::zero()));
    let disc = Expr::sub(
        Expr::pow(b.clone(), Expr::int(2)),
        Expr::mul(vec![Expr::int(4), a.clone(), c]),
    );
    let root = Expr::pow(disc, Expr::ratio(1, 2));
    let two_a = Expr::mul2(Expr::int(2), a);
    Some([
        Expr::div(Expr::add2(Expr::neg(b.clone()), root.clone()), two_a.clone()),
        Expr::div(Expr::sub(Expr::neg(b), root), two_a),
    ])
}

/// An input may be eliminated from an equation only when no algebraic solve
/// in the states could apply: the equation mentions no unsolved state, or it
/// reaches one through a transcendental atom.
fn input_solve_allowed(eq: &Expr, states: &[Symbol]) -> bool {
    let present: Vec<&Symbol> = states.iter().filter(|s| eq.depends_on(s)).collect();
    present.is_empty() || present.iter().any(|s| occurs_transcendentally(eq, s))
}

/// Whether `s` occurs inside a log or inside a power whose exponent is not an
/// integer constant (treated as an atomic, algebraically unsolvable factor).
pub(crate) fn occurs_transcendentally(e: &Expr, s: &Symbol) -> bool {
    fn walk(e: &Expr, s: &Symbol, inside: bool) -> bool {
        match e.kind() {
            Kind::Num(_) => false,
            Kind::Sym(x) => inside && x == s,
            Kind::Sum(ops) | Kind::Prod(ops) => ops.iter().any(|o| walk(o, s, inside)),
            Kind::Pow(b, ex) => {
                if ex.as_int().is_some() {
                    walk(b, s, inside)
                } else {
                    walk(b, s, true) || walk(ex, s, true)
                }
            }
            Kind::Log(x) => walk(x, s, true),
        }
    }
    walk(e, s, false)
}

/// Newton iteration in exact rational arithmetic, all free symbols at one;
/// succeeds only on an exact root.
fn numeric_equilibrium(eqs: &[Expr], states: &[Symbol]) -> Option<Vec<(Symbol, BigRational)>> {
    let mut base = Assignment::new();
    for e in eqs {
        for s in e.free_symbols() {
            if !states.contains(&s) {
                base.bind_int(s, 1);
            }
        }
    }
    let jac: Vec<Vec<Expr>> = eqs
        .iter()
        .map(|e| states.iter().map(|s| diff(e, s)).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()
        .ok()?;

    let mut x: Vec<BigRational> = vec![BigRational::one(); states.len()];
    for _ in 0..=NEWTON_STEPS {
        let mut a = base.clone();
        for (s, v) in states.iter().zip(&x) {
            a.bind(s.clone(), v.clone());
        }
        let fx: Vec<BigRational> =
            eqs.iter().map(|e| eval_rational(e, &a)).collect::<Result<_, _>>().ok()?;
        if fx.iter().all(|v| v.is_zero()) {
            return Some(states.iter().cloned().zip(x).collect());
        }
        let j: Vec<Vec<BigRational>> = jac
            .iter()
            .map(|row| row.iter().map(|e| eval_rational(e, &a)).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()
            .ok()?;
        let rhs: Vec<BigRational> = fx.into_iter().map(|v| -v).collect();
        let step = solve_rational(j, rhs)?;
        for (xi, di) in x.iter_mut().zip(step) {
            *xi += di;
            if xi.numer().bits() > NEWTON_BIT_CAP || xi.denom().bits() > NEWTON_BIT_CAP {
                return None;
            }
        }
    }
    None
}

/// Gaussian elimination over the rationals; `None` on a singular matrix.
fn solve_rational(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].clone().recip();
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for c in col..n {
                let t = &factor * &a[col][c];
                a[r][c] -= t;
            }
            let t = &factor * &b[col];
            b[r] -= t;
        }
    }
    Some((0..n).map(|i| &b[i] * &a[i][i].clone().recip()).collect())
}
