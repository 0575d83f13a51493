//! Accessibility (Lie algebra rank condition) and small-time local
//! controllability (linearization test, then the Sussmann sufficient
//! condition), both decided numerically over a prime field at a test point
//! built from the equilibrium analysis.

use super::{AnalysisError, EquilibriumResult};
use crate::geom::{enumerate_brackets, HallBasis, VectorField};
use crate::model::AffineDecomposition;
use crate::ranklab::{derive_rng, sample_value, Echelon, ProbeConfig, RankError};
use crate::symexpr::{
    diff_cached, substitute, Assignment, DiffCache, Expr, ModEvaluator, SymError, Symbol,
    DEFAULT_PRIME,
};
use num_rational::BigRational;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone)]
pub struct GeomOptions {
    pub probe: ProbeConfig,
    /// Maximum total bracket degree enumerated.
    pub depth: usize,
    /// Drift weights tried for the Sussmann condition, in order.
    pub weights: Vec<BigRational>,
}

impl Default for GeomOptions {
    fn default() -> Self {
        GeomOptions {
            probe: ProbeConfig { prime: DEFAULT_PRIME, trials: 3, seed: 0 },
            depth: 5,
            weights: vec![
                BigRational::from_integer(1.into()),
                BigRational::new(1.into(), 2.into()),
                BigRational::from_integer(0.into()),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessReport {
    pub accessible: bool,
    /// Whether the test point is an equilibrium (false only for the all-ones
    /// fallback used when no equilibrium was found).
    pub at_equilibrium: bool,
    pub distribution_dim: usize,
    pub n_states: usize,
    pub brackets_used: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlVerdict {
    Stlc,
    NotProven,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlMethod {
    Linearization,
    SussmannCondition,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtrlReport {
    pub verdict: CtrlVerdict,
    pub method: CtrlMethod,
    pub weight_used: Option<BigRational>,
    pub depth: usize,
}

const MAX_POINT_RETRIES: u32 = 32;

#[inline]
fn mul_m(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

#[inline]
fn add_m(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 + b as u128) % p as u128) as u64
}

fn retryable(e: &SymError) -> bool {
    matches!(e, SymError::PoleEncountered | SymError::ZeroPowZero | SymError::NoRoot)
}

/// Bound states substituted by their equilibrium expressions; with no
/// equilibrium every state is pinned to one. Unbound (free) states stay
/// symbols and are sampled generically.
fn test_point(eq: &EquilibriumResult, states: &[Symbol]) -> HashMap<Symbol, Expr> {
    if eq.found() {
        eq.state_bindings()
    } else {
        states.iter().map(|s| (s.clone(), Expr::one())).collect()
    }
}

fn sorted_symbols<'a>(exprs: impl Iterator<Item = &'a Expr>) -> Vec<Symbol> {
    let mut set: BTreeSet<Symbol> = BTreeSet::new();
    for e in exprs {
        set.extend(e.free_symbols());
    }
    set.into_iter().collect()
}

fn sampled_evaluator(syms: &[Symbol], rng: &mut ChaCha8Rng, p: u64) -> ModEvaluator {
    let mut a = Assignment::new();
    for s in syms {
        a.bind_u64(s.clone(), sample_value(rng, p));
    }
    ModEvaluator::new(a, p)
}

/// Bracket element evaluated symbolically (shared subtrees memoized) and
/// specialized at the test point; cached per element.
fn element_at_point(
    id: usize,
    basis: &HallBasis,
    fields: &[VectorField],
    point: &HashMap<Symbol, Expr>,
    memo: &mut Vec<Option<VectorField>>,
    cache: &mut DiffCache,
    at_point: &mut Vec<Option<Vec<Expr>>>,
) -> Result<Vec<Expr>, AnalysisError> {
    if at_point[id].is_none() {
        let vf = basis.evaluate(id, fields, memo, cache).map_err(AnalysisError::Sym)?;
        let comps = vf.components.iter().map(|c| substitute(c, point)).collect();
        at_point[id] = Some(comps);
    }
    Ok(at_point[id].as_ref().unwrap().clone())
}

fn generator_fields(aff: &AffineDecomposition, drift: &[Expr]) -> Vec<VectorField> {
    let mut fields = vec![VectorField::new(aff.states.clone(), drift.to_vec())];
    for (_, g) in &aff.control_fields {
        fields.push(VectorField::new(aff.states.clone(), g.clone()));
    }
    fields
}

/// Lie algebra rank condition: brackets of the drift and control fields are
/// added to a span at the test point, level by level, stopping early at full
/// rank and otherwise exhausting the enumerated depth (a stalled level can
/// still grow one degree higher at a fixed point, so no stall cutoff).
pub fn analyze_accessibility(
    aff: &AffineDecomposition,
    eq: &EquilibriumResult,
    opts: &GeomOptions,
) -> Result<AccessReport, AnalysisError> {
    let n = aff.states.len();
    let point = test_point(eq, &aff.states);
    let fields = generator_fields(aff, &aff.drift);
    let basis = enumerate_brackets(fields.len(), opts.depth);
    let mut memo: Vec<Option<VectorField>> = Vec::new();
    let mut cache = DiffCache::new();
    let mut at_point: Vec<Option<Vec<Expr>>> = vec![None; basis.elements.len()];

    let mut syms: BTreeSet<Symbol> = BTreeSet::new();
    for f in &fields {
        for c in &f.components {
            syms.extend(c.free_symbols());
        }
    }
    for v in point.values() {
        syms.extend(v.free_symbols());
    }
    for s in point.keys() {
        syms.remove(s);
    }
    let syms: Vec<Symbol> = syms.into_iter().collect();

    let p = opts.probe.prime;
    let mut dim = 0usize;
    let mut used = 0usize;
    for trial in 0..opts.probe.trials {
        let mut rng = derive_rng(opts.probe.seed, &format!("access:{trial}"));
        let mut done = false;
        'retry: for _ in 0..MAX_POINT_RETRIES {
            let mut ev = sampled_evaluator(&syms, &mut rng, p);
            let mut ech = Echelon::new(p);
            let mut t_dim = 0usize;
            let mut t_used = 0usize;
            for id in 0..basis.elements.len() {
                let comps =
                    element_at_point(id, &basis, &fields, &point, &mut memo, &mut cache, &mut at_point)?;
                t_used += 1;
                let mut row = Vec::with_capacity(n);
                for c in &comps {
                    match ev.eval(c) {
                        Ok(v) => row.push(v),
                        Err(e) if retryable(&e) => continue 'retry,
                        Err(e) => return Err(AnalysisError::Sym(e)),
                    }
                }
                if ech.add_row(row) {
                    t_dim += 1;
                }
                if t_dim == n {
                    break;
                }
            }
            dim = dim.max(t_dim);
            used = used.max(t_used);
            done = true;
            break;
        }
        if !done {
            return Err(RankError::DegenerateSampling { retries: MAX_POINT_RETRIES }.into());
        }
    }

    Ok(AccessReport {
        accessible: dim == n,
        at_equilibrium: eq.found(),
        distribution_dim: dim,
        n_states: n,
        brackets_used: used,
        depth: opts.depth,
    })
}

/// Small-time local controllability at the equilibrium: controllable
/// linearization first, otherwise the Sussmann sufficient condition on the
/// drift shifted by the equilibrium input levels.
pub fn analyze_stlc(
    aff: &AffineDecomposition,
    eq: &EquilibriumResult,
    access: &AccessReport,
    opts: &GeomOptions,
) -> Result<CtrlReport, AnalysisError> {
    if !eq.found() {
        return Ok(CtrlReport {
            verdict: CtrlVerdict::NotApplicable,
            method: CtrlMethod::None,
            weight_used: None,
            depth: opts.depth,
        });
    }
    let point = test_point(eq, &aff.states);
    let input_map = eq.input_map();
    // drift with the inputs pinned at their equilibrium levels; vanishes at
    // the test point by construction
    let shifted: Vec<Expr> = (0..aff.states.len())
        .map(|k| {
            let mut terms = vec![aff.drift[k].clone()];
            for (u, g) in &aff.control_fields {
                terms.push(Expr::mul2(input_map[u].clone(), g[k].clone()));
            }
            Expr::add(terms)
        })
        .collect();

    if linearization_controllable(aff, &shifted, &point, opts)? {
        return Ok(CtrlReport {
            verdict: CtrlVerdict::Stlc,
            method: CtrlMethod::Linearization,
            weight_used: None,
            depth: opts.depth,
        });
    }
    if access.accessible {
        if let Some(w) = sussmann_weight(aff, &shifted, &point, opts)? {
            return Ok(CtrlReport {
                verdict: CtrlVerdict::Stlc,
                method: CtrlMethod::SussmannCondition,
                weight_used: Some(w),
                depth: opts.depth,
            });
        }
    }
    Ok(CtrlReport {
        verdict: CtrlVerdict::NotProven,
        method: CtrlMethod::None,
        weight_used: None,
        depth: opts.depth,
    })
}

/// Kalman rank of (A, B) at the test point, A the Jacobian of the shifted
/// drift and B the control fields.
fn linearization_controllable(
    aff: &AffineDecomposition,
    shifted: &[Expr],
    point: &HashMap<Symbol, Expr>,
    opts: &GeomOptions,
) -> Result<bool, AnalysisError> {
    let n = aff.states.len();
    if aff.control_fields.is_empty() {
        return Ok(false);
    }
    let mut cache = DiffCache::new();
    let mut a_sym: Vec<Vec<Expr>> = Vec::with_capacity(n);
    for f in shifted {
        let mut row = Vec::with_capacity(n);
        for x in &aff.states {
            let d = diff_cached(f, x, &mut cache).map_err(AnalysisError::Sym)?;
            row.push(substitute(&d, point));
        }
        a_sym.push(row);
    }
    let b_sym: Vec<Vec<Expr>> = aff
        .control_fields
        .iter()
        .map(|(_, g)| g.iter().map(|c| substitute(c, point)).collect())
        .collect();

    let syms = sorted_symbols(a_sym.iter().flatten().chain(b_sym.iter().flatten()));
    let p = opts.probe.prime;
    for trial in 0..opts.probe.trials {
        let mut rng = derive_rng(opts.probe.seed, &format!("ctrl-lin:{trial}"));
        let mut done = false;
        'retry: for _ in 0..MAX_POINT_RETRIES {
            let mut ev = sampled_evaluator(&syms, &mut rng, p);
            let mut a = vec![vec![0u64; n]; n];
            for (r, row) in a_sym.iter().enumerate() {
                for (c, e) in row.iter().enumerate() {
                    match ev.eval(e) {
                        Ok(v) => a[r][c] = v,
                        Err(e) if retryable(&e) => continue 'retry,
                        Err(e) => return Err(AnalysisError::Sym(e)),
                    }
                }
            }
            let mut cols: Vec<Vec<u64>> = Vec::new();
            for g in &b_sym {
                let mut col = Vec::with_capacity(n);
                for e in g {
                    match ev.eval(e) {
                        Ok(v) => col.push(v),
                        Err(e) if retryable(&e) => continue 'retry,
                        Err(e) => return Err(AnalysisError::Sym(e)),
                    }
                }
                cols.push(col);
            }
            let mut ech = Echelon::new(p);
            let mut rank = 0usize;
            for _ in 0..n {
                for col in &cols {
                    if ech.add_row(col.clone()) {
                        rank += 1;
                    }
                }
                if rank == n {
                    return Ok(true);
                }
                cols = cols
                    .iter()
                    .map(|col| {
                        (0..n)
                            .map(|r| {
                                let mut acc = 0u64;
                                for c in 0..n {
                                    acc = add_m(acc, mul_m(a[r][c], col[c], p), p);
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect();
            }
            done = true;
            break;
        }
        if !done {
            return Err(RankError::DegenerateSampling { retries: MAX_POINT_RETRIES }.into());
        }
    }
    Ok(false)
}

/// First weight for which every bad bracket (odd drift count, all control
/// counts even) lies in the span of the good brackets of strictly lower
/// weighted degree, in every trial.
fn sussmann_weight(
    aff: &AffineDecomposition,
    shifted: &[Expr],
    point: &HashMap<Symbol, Expr>,
    opts: &GeomOptions,
) -> Result<Option<BigRational>, AnalysisError> {
    let fields = generator_fields(aff, shifted);
    let basis = enumerate_brackets(fields.len(), opts.depth);
    let n_el = basis.elements.len();
    let mut memo: Vec<Option<VectorField>> = Vec::new();
    let mut cache = DiffCache::new();
    let mut at_point: Vec<Option<Vec<Expr>>> = vec![None; n_el];
    let mut all_sub: Vec<Vec<Expr>> = Vec::with_capacity(n_el);
    for id in 0..n_el {
        all_sub.push(element_at_point(
            id, &basis, &fields, point, &mut memo, &mut cache, &mut at_point,
        )?);
    }
    let syms = sorted_symbols(all_sub.iter().flatten());
    let p = opts.probe.prime;

    let mut trial_values: Vec<Vec<Vec<u64>>> = Vec::new();
    for trial in 0..opts.probe.trials {
        let mut rng = derive_rng(opts.probe.seed, &format!("ctrl-gsc:{trial}"));
        let mut done = false;
        'retry: for _ in 0..MAX_POINT_RETRIES {
            let mut ev = sampled_evaluator(&syms, &mut rng, p);
            let mut values = Vec::with_capacity(n_el);
            for comps in &all_sub {
                let mut row = Vec::with_capacity(comps.len());
                for c in comps {
                    match ev.eval(c) {
                        Ok(v) => row.push(v),
                        Err(e) if retryable(&e) => continue 'retry,
                        Err(e) => return Err(AnalysisError::Sym(e)),
                    }
                }
                values.push(row);
            }
            trial_values.push(values);
            done = true;
            break;
        }
        if !done {
            return Err(RankError::DegenerateSampling { retries: MAX_POINT_RETRIES }.into());
        }
    }

    let is_bad = |degrees: &[usize]| degrees[0] % 2 == 1 && degrees[1..].iter().all(|d| d % 2 == 0);
    for w in &opts.weights {
        let wdegs: Vec<BigRational> = basis
            .elements
            .iter()
            .map(|e| {
                let ctrl: usize = e.degrees[1..].iter().sum();
                w * BigRational::from_integer(e.degrees[0].into())
                    + BigRational::from_integer(ctrl.into())
            })
            .collect();
        let mut good: Vec<usize> = Vec::new();
        let mut bad: Vec<usize> = Vec::new();
        for (id, e) in basis.elements.iter().enumerate() {
            if is_bad(&e.degrees) {
                bad.push(id);
            } else {
                good.push(id);
            }
        }
        good.sort_by(|x, y| wdegs[*x].cmp(&wdegs[*y]).then(x.cmp(y)));
        bad.sort_by(|x, y| wdegs[*x].cmp(&wdegs[*y]).then(x.cmp(y)));

        let neutralized_everywhere = trial_values.iter().all(|values| {
            let mut ech = Echelon::new(p);
            let mut gi = 0usize;
            for &b in &bad {
                while gi < good.len() && wdegs[good[gi]] < wdegs[b] {
                    ech.add_row(values[good[gi]].clone());
                    gi += 1;
                }
                if !ech.in_span(&values[b]) {
                    return false;
                }
            }
            true
        });
        if neutralized_everywhere {
            return Ok(Some(w.clone()));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyses::find_equilibrium;
    use crate::model::parse_model;

    fn affine(src: &str) -> AffineDecomposition {
        let m = parse_model(src).unwrap();
        m.validate().unwrap();
        m.to_affine(&m.input_symbols()).unwrap()
    }

    fn run(src: &str) -> (EquilibriumResult, AccessReport, CtrlReport) {
        let aff = affine(src);
        let eq = find_equilibrium(&aff);
        let opts = GeomOptions::default();
        let acc = analyze_accessibility(&aff, &eq, &opts).unwrap();
        let ctrl = analyze_stlc(&aff, &eq, &acc, &opts).unwrap();
        (eq, acc, ctrl)
    }

    #[test]
    fn double_integrator_controllable_by_linearization() {
        let (eq, acc, ctrl) =
            run("model m\nstates x1, x2\ninputs u\node x1' = x2\node x2' = u\noutput x1\n");
        assert!(eq.found());
        assert!(acc.accessible && acc.at_equilibrium);
        assert_eq!(ctrl.verdict, CtrlVerdict::Stlc);
        assert_eq!(ctrl.method, CtrlMethod::Linearization);
    }

    #[test]
    fn brockett_integrator_needs_sussmann() {
        let (eq, acc, ctrl) = run(
            "model m\nstates x1, x2, x3\ninputs u1, u2\n\
             ode x1' = u1\node x2' = u2\node x3' = x1*u2\noutput x1\n",
        );
        assert!(eq.found());
        assert!(acc.accessible);
        assert_eq!(acc.distribution_dim, 3);
        assert_eq!(ctrl.verdict, CtrlVerdict::Stlc);
        assert_eq!(ctrl.method, CtrlMethod::SussmannCondition);
        assert_eq!(ctrl.weight_used, Some(BigRational::from_integer(1.into())));
    }

    #[test]
    fn square_obstruction_accessible_but_not_proven() {
        // x2' = x1^2 only increases: accessible, never STLC, and the bad
        // bracket [g,[f,g]] is not neutralized at any weight
        let (eq, acc, ctrl) =
            run("model m\nstates x1, x2\ninputs u\node x1' = u\node x2' = x1^2\noutput x1\n");
        assert!(eq.found());
        assert!(acc.accessible);
        assert_eq!(ctrl.verdict, CtrlVerdict::NotProven);
        assert_eq!(ctrl.method, CtrlMethod::None);
    }

    #[test]
    fn no_equilibrium_gives_not_applicable_and_fallback_point() {
        let (eq, acc, ctrl) = run(
            "model m\nstates x, y\nparams a\node x' = y^3 + a\node y' = y^3 + a + 1\noutput x\n",
        );
        assert!(!eq.found());
        assert!(!acc.at_equilibrium);
        assert_eq!(ctrl.verdict, CtrlVerdict::NotApplicable);
        assert_eq!(ctrl.method, CtrlMethod::None);
    }

    #[test]
    fn drift_brackets_needed_for_accessibility() {
        // x1' = u, x2' = x1: control field alone spans one direction, the
        // bracket with the drift supplies the second
        let (_, acc, ctrl) =
            run("model m\nstates x1, x2\ninputs u\node x1' = u\node x2' = x1\noutput x1\n");
        assert!(acc.accessible);
        assert!(acc.brackets_used >= 3);
        assert_eq!(ctrl.verdict, CtrlVerdict::Stlc);
    }

    #[test]
    fn deterministic_reports() {
        let src = "model m\nstates x1, x2, x3\ninputs u1, u2\n\
                   ode x1' = u1\node x2' = u2\node x3' = x1*u2\noutput x1\n";
        let a = run(src);
        let b = run(src);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}
