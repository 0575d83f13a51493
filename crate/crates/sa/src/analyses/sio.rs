//! Structural identifiability and observability via the rank of the stacked
//! output-derivative gradient matrix over the augmented state (states plus
//! parameters treated as constant states).

use super::AnalysisError;
use crate::geom::{build_oi, ObsIdentMatrix, OiRows};
use crate::model::OdeModel;
use crate::ranklab::{MatrixProbe, ProbeConfig, RankError};
use crate::symexpr::DEFAULT_PRIME;
use rayon::prelude::*;

/// Default storage budget for one matrix build (bytes). Sized so that every
/// builtin analysis except the single-output autorepressor variants
/// completes, while the budget still trips well before physical memory on a
/// laptop-class machine.
pub const DEFAULT_BUDGET: u64 = 2 * 1024 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct SioOptions {
    pub probe: ProbeConfig,
    /// Cap on expression storage while building the matrix, in bytes.
    pub budget: u64,
}

impl Default for SioOptions {
    fn default() -> Self {
        SioOptions {
            probe: ProbeConfig { prime: DEFAULT_PRIME, trials: 3, seed: 0 },
            budget: DEFAULT_BUDGET,
        }
    }
}

fn probe_matrix(mtx: &ObsIdentMatrix, cfg: &ProbeConfig) -> Result<MatrixProbe, RankError> {
    match &mtx.rows {
        OiRows::Dag(rows) => MatrixProbe::from_functions(rows, &mtx.columns, cfg),
        OiRows::Rational(rm) => MatrixProbe::from_rational(rm, &mtx.columns, cfg),
    }
}

#[derive(Debug, Clone)]
pub struct SioReport {
    pub model: String,
    pub variant: String,
    /// Whether the matrix reaches full column rank: every state observable
    /// and every parameter structurally locally identifiable.
    pub full_rank: bool,
    /// (state name, observable) in declaration order.
    pub states: Vec<(String, bool)>,
    /// (parameter name, identifiable) in declaration order.
    pub params: Vec<(String, bool)>,
    pub rank: usize,
    pub n_augmented: usize,
    /// Highest derivative order whose gradients entered the matrix.
    pub orders_built: usize,
    pub nodes_used: u64,
    /// Assignment digests of the rank-decision points, one per trial.
    pub witness_points: Vec<u64>,
}

/// `true` when deleting the variable's column drops the rank, i.e. the
/// variable is observable/identifiable.
pub fn classify_variable(full: usize, without: usize) -> Result<bool, AnalysisError> {
    if without > full {
        return Err(AnalysisError::InconsistentWitness { full, without });
    }
    Ok(without < full)
}

/// Runs the full analysis on a configured model (`variant` is just a label
/// carried into the report).
pub fn analyze_sio(m: &OdeModel, variant: &str, opts: &SioOptions) -> Result<SioReport, AnalysisError> {
    m.validate()?;
    let aug = m.augment_with_params();
    let n = aug.n_states();

    // the per-order probe only guides early stopping; errors surface through
    // the final probe below, so the callback just forces a stop
    let mut probe_err: Option<RankError> = None;
    let matrix = build_oi(&aug, opts.budget, |mtx| {
        match MatrixProbe::from_functions(&mtx.rows, &mtx.columns, &opts.probe) {
            Ok(p) => p.rank().rank,
            Err(e) => {
                probe_err = Some(e);
                n
            }
        }
    })?;
    if let Some(e) = probe_err {
        return Err(e.into());
    }

    // one probe for the full rank and every deletion, so all ranks share
    // witness points and deletion ranks stay within {rank-1, rank}
    let probe = MatrixProbe::from_functions(&matrix.rows, &matrix.columns, &opts.probe)?;
    let full = probe.rank();
    let full_rank = full.rank == n;

    let classes: Vec<bool> = if full_rank {
        vec![true; n]
    } else {
        (0..n)
            .into_par_iter()
            .map(|c| classify_variable(full.rank, probe.rank_without_column(c).rank))
            .collect::<Result<_, _>>()?
    };

    let n_x = m.states.len();
    let states = m
        .states
        .iter()
        .zip(&classes[..n_x])
        .map(|(s, ok)| (s.name().to_string(), *ok))
        .collect();
    let params = m
        .params
        .iter()
        .zip(&classes[n_x..])
        .map(|(s, ok)| (s.name().to_string(), *ok))
        .collect();

    Ok(SioReport {
        model: m.name.clone(),
        variant: variant.to_string(),
        full_rank,
        states,
        params,
        rank: full.rank,
        n_augmented: n,
        orders_built: matrix.orders_built,
        nodes_used: matrix.nodes_used,
        witness_points: full.witness_points,
    })
}
