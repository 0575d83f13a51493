//! Structural analysis of nonlinear ODE models.
//!
//! Determines, from the model equations alone, structural identifiability
//! and observability (SIO), accessibility, and small-time local
//! controllability (STLC) of nonlinear ODE models, using exact symbolic
//! differentiation and randomized exact rank computations over a prime
//! field.

pub mod analyses;
pub mod geom;
pub mod model;
pub mod ranklab;
pub mod symexpr;
