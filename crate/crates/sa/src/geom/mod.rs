//! Differential-geometric operators: extended Lie derivatives, Lie brackets,
//! and construction of the observability-identifiability matrix.

mod hall;
mod rat;

pub use hall::{enumerate_brackets, BracketNode, FormalBracket, HallBasis};
pub use rat::RatTower;

use crate::model::{DerivativeClass, OdeModel};
use crate::symexpr::{diff_cached, DiffCache, Expr, RatMatrix, RatRow, SymError, Symbol};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeomError {
    #[error("expression budget of {budget} bytes exceeded while building order {order}")]
    ResourceLimitExceeded { budget: u64, order: usize },
    #[error(transparent)]
    Sym(#[from] SymError),
}

/// A vector field over an ordered state list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorField {
    pub states: Vec<Symbol>,
    pub components: Vec<Expr>,
}

impl VectorField {
    pub fn new(states: Vec<Symbol>, components: Vec<Expr>) -> Self {
        assert_eq!(states.len(), components.len());
        VectorField { states, components }
    }

    pub fn zero(states: Vec<Symbol>) -> Self {
        let components = vec![Expr::zero(); states.len()];
        VectorField { states, components }
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }
}

/// Lie bracket [f, g] = (∂g/∂x)·f − (∂f/∂x)·g.
pub fn lie_bracket(f: &VectorField, g: &VectorField) -> Result<VectorField, SymError> {
    lie_bracket_cached(f, g, &mut DiffCache::new())
}

pub fn lie_bracket_cached(
    f: &VectorField,
    g: &VectorField,
    cache: &mut DiffCache,
) -> Result<VectorField, SymError> {
    assert_eq!(f.states, g.states, "bracket of fields over different state lists");
    let n = f.dim();
    let mut components = Vec::with_capacity(n);
    for k in 0..n {
        let mut terms = Vec::with_capacity(2 * n);
        for l in 0..n {
            let x_l = &f.states[l];
            let dg = diff_cached(&g.components[k], x_l, cache)?;
            if !dg.is_zero() && !f.components[l].is_zero() {
                terms.push(Expr::mul2(dg, f.components[l].clone()));
            }
            let df = diff_cached(&f.components[k], x_l, cache)?;
            if !df.is_zero() && !g.components[l].is_zero() {
                terms.push(Expr::neg(Expr::mul2(df, g.components[l].clone())));
            }
        }
        components.push(Expr::add(terms));
    }
    Ok(VectorField { states: f.states.clone(), components })
}

/// One step of the extended Lie derivative: ∂e/∂x·f plus the input-derivative
/// chain terms ∂e/∂u^(j)·u^(j+1), honouring each input's derivative class.
pub fn lie_step(m: &OdeModel, e: &Expr, order: usize, cache: &mut DiffCache) -> Result<Expr, SymError> {
    let mut terms = Vec::new();
    for (x, f_k) in m.states.iter().zip(&m.dynamics) {
        if f_k.is_zero() {
            continue;
        }
        let d = diff_cached(e, x, cache)?;
        if !d.is_zero() {
            terms.push(Expr::mul2(d, f_k.clone()));
        }
    }
    for spec in &m.inputs {
        for j in 0..order as u32 {
            let next_is_zero = match spec.derivative_class {
                DerivativeClass::Unbounded => false,
                DerivativeClass::ZeroAbove(k) => j + 1 > k,
            };
            if next_is_zero {
                continue;
            }
            let u_j = Symbol::input_deriv(spec.symbol.name(), j);
            if !e.depends_on(&u_j) {
                continue;
            }
            let d = diff_cached(e, &u_j, cache)?;
            if !d.is_zero() {
                let u_next = Expr::sym(Symbol::input_deriv(spec.symbol.name(), j + 1));
                terms.push(Expr::mul2(d, u_next));
            }
        }
    }
    Ok(Expr::add(terms))
}

/// Extended Lie derivatives L⁰h..L^max_order h for every output of the model,
/// indexed `result[order][output]`.
pub fn extended_lie_derivatives(
    m: &OdeModel,
    max_order: usize,
) -> Result<Vec<Vec<Expr>>, SymError> {
    let mut cache = DiffCache::new();
    let mut out = vec![m.outputs.clone()];
    for i in 1..=max_order {
        let prev = out.last().unwrap().clone();
        let next: Result<Vec<Expr>, SymError> =
            prev.iter().map(|h| lie_step(m, h, i, &mut cache)).collect();
        out.push(next?);
    }
    Ok(out)
}

/// The observability-identifiability matrix in functional form: one output
/// Lie derivative per row. Rank probes differentiate the rows numerically
/// with respect to the columns, so the gradients are never materialized
/// symbolically.
#[derive(Debug, Clone)]
pub struct ObsIdentMatrix {
    /// Lie derivative per row; the matrix row is its gradient.
    pub rows: OiRows,
    /// (output index, derivative order) per row.
    pub row_meta: Vec<(usize, usize)>,
    /// One augmented-state component per column.
    pub columns: Vec<Symbol>,
    /// Highest derivative order whose rows were appended.
    pub orders_built: usize,
    /// Expression storage charged against the budget, in bytes.
    pub bytes_used: u64,
}

impl ObsIdentMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_meta.len()
    }
}

/// Tower representation: collected rational rows when the model converts,
/// general expression DAGs otherwise.
#[derive(Debug, Clone)]
pub enum OiRows {
    Dag(Vec<Expr>),
    Rational(RatMatrix),
}

/// Builds the matrix order by order, consulting `rank_probe` after each block
/// and stopping early once the rank saturates (reaches the column count or
/// fails to grow between two consecutive orders). Fails cleanly when the
/// cumulative expression storage exceeds `budget` bytes; on the DAG path the
/// budget is enforced inside differentiation as well, so a single runaway
/// derivative cannot exhaust memory first.
pub fn build_oi(
    m: &OdeModel,
    budget: u64,
    rank_probe: impl FnMut(&ObsIdentMatrix) -> usize,
) -> Result<ObsIdentMatrix, GeomError> {
    assert!(m.params.is_empty(), "build_oi expects an augmented model");
    match RatTower::try_new(m) {
        Some(tower) => build_oi_rational(m, tower, budget, rank_probe),
        None => build_oi_dag(m, budget, rank_probe),
    }
}

fn limit_err(budget: u64) -> impl Fn(SymError, usize) -> GeomError {
    move |e, order| match e {
        SymError::BudgetExhausted => GeomError::ResourceLimitExceeded { budget, order },
        other => GeomError::Sym(other),
    }
}

/// Compact path: collected sparse-polynomial rows over a denominator basis.
/// The budget charges each stored monomial at its encoded size and caps every
/// stepping intermediate at the remaining allowance.
fn build_oi_rational(
    m: &OdeModel,
    tower: RatTower,
    budget: u64,
    mut rank_probe: impl FnMut(&ObsIdentMatrix) -> usize,
) -> Result<ObsIdentMatrix, GeomError> {
    let n_cols = m.states.len();
    let limit = limit_err(budget);
    // exponent vector plus coefficient per monomial
    let mono_cost = 16 + tower.ring.n_vars() as u64;
    let mut used: u64 = 0;
    let mut lies = tower.outputs.clone();
    let mut matrix = ObsIdentMatrix {
        rows: OiRows::Rational(RatMatrix {
            ring: tower.ring.clone(),
            basis: tower.basis.clone(),
            rows: Vec::new(),
        }),
        row_meta: Vec::new(),
        columns: m.states.clone(),
        orders_built: 0,
        bytes_used: 0,
    };
    let mut prev_rank: Option<usize> = None;
    for order in 0..n_cols {
        for (j, row) in lies.iter().enumerate() {
            used += row.num.len() as u64 * mono_cost;
            if used > budget {
                return Err(GeomError::ResourceLimitExceeded { budget, order });
            }
            match &mut matrix.rows {
                OiRows::Rational(rm) => rm.rows.push(row.clone()),
                OiRows::Dag(_) => unreachable!(),
            }
            matrix.row_meta.push((j, order));
        }
        matrix.orders_built = order;
        matrix.bytes_used = used;
        let rank = rank_probe(&matrix);
        if rank >= n_cols || prev_rank == Some(rank) || order + 1 == n_cols {
            break;
        }
        prev_rank = Some(rank);
        let cap = ((budget - used) / mono_cost) as usize;
        let stepped: Result<Vec<RatRow>, SymError> =
            lies.iter().map(|row| tower.step(row, order + 1, cap)).collect();
        lies = stepped.map_err(|e| limit(e, order + 1))?;
    }
    matrix.bytes_used = used;
    Ok(matrix)
}

/// General path: tower entries as expression DAGs, with the byte budget
/// enforced inside differentiation so a runaway step fails before it can
/// exhaust memory.
fn build_oi_dag(
    m: &OdeModel,
    budget: u64,
    mut rank_probe: impl FnMut(&ObsIdentMatrix) -> usize,
) -> Result<ObsIdentMatrix, GeomError> {
    let n_cols = m.states.len();
    let mut cache = DiffCache::with_budget(budget);
    let limit = limit_err(budget);
    let mut matrix = ObsIdentMatrix {
        rows: OiRows::Dag(Vec::new()),
        row_meta: Vec::new(),
        columns: m.states.clone(),
        orders_built: 0,
        bytes_used: 0,
    };
    let mut lies = m.outputs.clone();
    let mut prev_rank: Option<usize> = None;
    for order in 0..n_cols {
        for (j, h) in lies.iter().enumerate() {
            cache.charge(h).map_err(|e| limit(e, order))?;
            match &mut matrix.rows {
                OiRows::Dag(rows) => rows.push(h.clone()),
                OiRows::Rational(_) => unreachable!(),
            }
            matrix.row_meta.push((j, order));
        }
        matrix.orders_built = order;
        matrix.bytes_used = cache.bytes_used();
        let rank = rank_probe(&matrix);
        if rank >= n_cols || prev_rank == Some(rank) || order + 1 == n_cols {
            break;
        }
        prev_rank = Some(rank);
        let stepped: Result<Vec<Expr>, SymError> =
            lies.iter().map(|h| lie_step(m, h, order + 1, &mut cache)).collect();
        lies = stepped.map_err(|e| limit(e, order + 1))?;
    }
    matrix.bytes_used = cache.bytes_used();
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn sym_x(n: &str) -> Expr {
        Expr::sym(Symbol::state(n))
    }

    #[test]
    fn bracket_with_itself_vanishes() {
        let states = vec![Symbol::state("x1"), Symbol::state("x2")];
        let f = VectorField::new(states.clone(), vec![Expr::mul2(sym_x("x1"), sym_x("x2")), sym_x("x1")]);
        let b = lie_bracket(&f, &f).unwrap();
        assert!(b.is_zero());
    }

    #[test]
    fn double_integrator_bracket() {
        let states = vec![Symbol::state("x1"), Symbol::state("x2")];
        let f = VectorField::new(states.clone(), vec![sym_x("x2"), Expr::zero()]);
        let g = VectorField::new(states.clone(), vec![Expr::zero(), Expr::one()]);
        let b = lie_bracket(&f, &g).unwrap();
        assert_eq!(b.components, vec![Expr::int(-1), Expr::zero()]);
        // antisymmetry
        let b2 = lie_bracket(&g, &f).unwrap();
        assert_eq!(b2.components, vec![Expr::one(), Expr::zero()]);
    }

    #[test]
    fn biosd1_drift_bracket_matches_jacobian() {
        // drift of biosd_1 with U = 0 against g = (k_in, 0)
        let src = "model m\nstates X, Z\nparams k_in, b, k1, k2, k3, delta\ninputs U\noutput X\n\
                   ode X' = k_in*U + b - k1*X*Z - delta*X\node Z' = k2*X - k3\n";
        let m = parse_model(src).unwrap();
        let a = m.to_affine(&m.input_symbols()).unwrap();
        let f = VectorField::new(a.states.clone(), a.drift.clone());
        let g = VectorField::new(a.states.clone(), a.control_fields[0].1.clone());
        let b = lie_bracket(&f, &g).unwrap();
        let k_in = Expr::sym(Symbol::param("k_in"));
        let k1 = Expr::sym(Symbol::param("k1"));
        let k2 = Expr::sym(Symbol::param("k2"));
        let delta = Expr::sym(Symbol::param("delta"));
        let want0 = Expr::mul2(k_in.clone(), Expr::add2(Expr::mul2(k1, sym_x("Z")), delta));
        let want1 = Expr::neg(Expr::mul2(k2, k_in));
        assert_eq!(b.components[0], want0);
        assert_eq!(b.components[1], want1);
    }

    #[test]
    fn extended_lie_derivative_orders() {
        let src = "model m\nstates X, Z\nparams k_in, b, k1, k2, k3, delta\ninputs U\noutput X\n\
                   ode X' = k_in*U + b - k1*X*Z - delta*X\node Z' = k2*X - k3\n";
        let m = parse_model(src).unwrap();
        let ls = extended_lie_derivatives(&m, 2).unwrap();
        assert_eq!(ls[0][0], m.outputs[0]);
        assert_eq!(ls[1][0], m.dynamics[0]);
        // order 2 picks up the input-derivative chain term k_in * u'
        let u1 = Symbol::input_deriv("U", 1);
        assert!(ls[2][0].depends_on(&u1));
        let d = crate::symexpr::diff(&ls[2][0], &u1).unwrap();
        assert_eq!(d, Expr::sym(Symbol::param("k_in")));
    }

    #[test]
    fn constant_input_class_matches_classical_lie_derivative() {
        let src = "model m\nstates X, Z\nparams k_in, b, k1, k2, k3, delta\ninputs U\n\
                   input_class U zero_above 0\noutput X\n\
                   ode X' = k_in*U + b - k1*X*Z - delta*X\node Z' = k2*X - k3\n";
        let m = parse_model(src).unwrap();
        let ls = extended_lie_derivatives(&m, 3).unwrap();
        for order in &ls {
            for e in order {
                for s in e.free_symbols() {
                    assert!(!matches!(s.kind(), crate::symexpr::SymbolKind::InputDeriv(_)));
                }
            }
        }
    }

    #[test]
    fn build_oi_fully_measured_stops_at_order_zero() {
        let src = "model m\nstates X, Z\noutput X\noutput Z\node X' = Z\node Z' = X\n";
        let m = parse_model(src).unwrap().augment_with_params();
        let mtx = build_oi(&m, 1_000_000, |mtx| mtx.n_rows().min(mtx.columns.len())).unwrap();
        assert_eq!(mtx.orders_built, 0);
        assert_eq!(mtx.n_rows(), 2);
    }

    #[test]
    fn build_oi_rank_saturation_stops() {
        // single state, one parameterless output: rank stalls at 1 < 2 columns
        let src = "model m\nstates X\nparams a\noutput X\node X' = X\n";
        let m = parse_model(src).unwrap().augment_with_params();
        let mtx = build_oi(&m, 1_000_000, |mtx| {
            // the `a` column is identically zero: rank is 1 from order 0 on
            let _ = mtx;
            1
        })
        .unwrap();
        assert_eq!(mtx.orders_built, 1); // order 1 added no rank -> stop
        assert!(mtx.n_rows() <= 2 * mtx.columns.len());
    }

    #[test]
    fn build_oi_budget_is_clean_failure() {
        let src = "model m\nstates X, Z\nparams k1, k2\noutput X\n\
                   ode X' = k1*X*Z + k2*Z\node Z' = k1*Z - k2*X*X\n";
        let m = parse_model(src).unwrap().augment_with_params();
        let err = build_oi(&m, 10, |_| 0).unwrap_err();
        assert!(matches!(err, GeomError::ResourceLimitExceeded { budget: 10, .. }));
    }
}
