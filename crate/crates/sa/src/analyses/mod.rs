//! High-level analyses: structural identifiability/observability, equilibrium
//! location, accessibility, and small-time local controllability.

mod control;
mod equilibrium;
mod sio;

pub use control::{
    analyze_accessibility, analyze_stlc, AccessReport, CtrlMethod, CtrlReport, CtrlVerdict,
    GeomOptions,
};
pub use equilibrium::{find_equilibrium, EquilibriumResult, EquilibriumStatus};
pub use sio::{analyze_sio, classify_variable, SioOptions, SioReport};

use crate::geom::GeomError;
use crate::model::ModelError;
use crate::ranklab::RankError;
use crate::symexpr::SymError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("symbolic computation failed: {0}")]
    Sym(#[from] SymError),
    #[error("witness inconsistency: deletion rank {without} exceeds full rank {full}")]
    InconsistentWitness { full: usize, without: usize },
}
