//! Model intermediate representation, text DSL, input-affine decomposition
//! and state augmentation.

mod parser;
pub mod corpus;

pub use parser::parse_model;

use crate::symexpr::{self, diff, substitute, Expr, Symbol, SymbolKind};
use num_rational::BigRational;
use std::collections::{BTreeMap, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("undeclared symbol `{name}` at line {line}")]
    UndeclaredSymbol { name: String, line: usize },
    #[error("duplicate declaration of `{name}` at line {line}")]
    DuplicateDeclaration { name: String, line: usize },
    #[error("model has {states} states but {odes} ode lines")]
    ArityMismatch { states: usize, odes: usize },
    #[error("equation for `{equation}` is not affine in input `{input}`")]
    NotInputAffine { equation: String, input: String },
    #[error("unknown state `{0}` in output selection")]
    UnknownOutput(String),
    #[error("unknown input `{0}` in input selection")]
    UnknownInput(String),
    #[error(transparent)]
    Sym(#[from] symexpr::SymError),
}

/// How far the time derivatives of an input are allowed to be nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeClass {
    /// Infinitely differentiable input; u^(j) symbols introduced on demand.
    Unbounded,
    /// u^(j) == 0 for j > k. `ZeroAbove(0)` is a constant input.
    ZeroAbove(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub symbol: Symbol,
    pub derivative_class: DerivativeClass,
}

/// Nonlinear ODE model: x' = f(u, x, theta), y = h(u, x, theta).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OdeModel {
    pub name: String,
    pub states: Vec<Symbol>,
    pub params: Vec<Symbol>,
    pub inputs: Vec<InputSpec>,
    pub known_constants: BTreeMap<Symbol, BigRational>,
    pub dynamics: Vec<Expr>,
    pub outputs: Vec<Expr>,
}

/// Input-affine form x' = f(x,theta) + sum_i u_i * g_i(x,theta).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineDecomposition {
    pub states: Vec<Symbol>,
    pub drift: Vec<Expr>,
    pub control_fields: Vec<(Symbol, Vec<Expr>)>,
}

impl OdeModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }
    pub fn n_params(&self) -> usize {
        self.params.len()
    }
    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }
    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_symbols(&self) -> Vec<Symbol> {
        self.inputs.iter().map(|i| i.symbol.clone()).collect()
    }

    pub fn derivative_class(&self, input: &Symbol) -> DerivativeClass {
        self.inputs
            .iter()
            .find(|i| &i.symbol == input)
            .map(|i| i.derivative_class)
            .unwrap_or(DerivativeClass::Unbounded)
    }

    /// Checks internal consistency: equation counts, declared symbols only,
    /// pairwise disjoint name sets.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dynamics.len() != self.states.len() {
            return Err(ModelError::ArityMismatch {
                states: self.states.len(),
                odes: self.dynamics.len(),
            });
        }
        let mut names: HashSet<&str> = HashSet::new();
        for s in self
            .states
            .iter()
            .chain(self.params.iter())
            .chain(self.inputs.iter().map(|i| &i.symbol))
            .chain(self.known_constants.keys())
        {
            if !names.insert(s.name()) {
                return Err(ModelError::DuplicateDeclaration { name: s.name().to_string(), line: 0 });
            }
        }
        let declared: HashSet<Symbol> = self
            .states
            .iter()
            .chain(self.params.iter())
            .chain(self.inputs.iter().map(|i| &i.symbol))
            .chain(self.known_constants.keys())
            .cloned()
            .collect();
        for e in self.dynamics.iter().chain(self.outputs.iter()) {
            for s in e.free_symbols() {
                let ok = match s.kind() {
                    SymbolKind::InputDeriv(_) => self
                        .inputs
                        .iter()
                        .any(|i| i.symbol.name() == s.name()),
                    _ => declared.contains(&s),
                };
                if !ok {
                    return Err(ModelError::UndeclaredSymbol { name: s.name().to_string(), line: 0 });
                }
            }
        }
        Ok(())
    }

    /// Treats every unknown parameter as a constant state: appends the
    /// parameters to the state vector with zero dynamics. Known constants
    /// are not promoted.
    pub fn augment_with_params(&self) -> OdeModel {
        let mut states = self.states.clone();
        states.extend(self.params.iter().cloned());
        let mut dynamics = self.dynamics.clone();
        dynamics.extend(std::iter::repeat(Expr::zero()).take(self.params.len()));
        OdeModel {
            name: self.name.clone(),
            states,
            params: Vec::new(),
            inputs: self.inputs.clone(),
            known_constants: self.known_constants.clone(),
            dynamics,
            outputs: self.outputs.clone(),
        }
    }

    /// Extracts drift and control fields for the selected inputs, failing
    /// when any selected input enters non-affinely.
    pub fn to_affine(&self, selection: &[Symbol]) -> Result<AffineDecomposition, ModelError> {
        let all_inputs: Vec<Symbol> = self.input_symbols();
        let mut control_fields = Vec::new();
        for u in selection {
            let mut g = Vec::with_capacity(self.dynamics.len());
            for (k, f_k) in self.dynamics.iter().enumerate() {
                let d = diff(f_k, u).map_err(|_| ModelError::NotInputAffine {
                    equation: self.states[k].name().to_string(),
                    input: u.name().to_string(),
                })?;
                if all_inputs.iter().any(|v| d.depends_on(v)) {
                    return Err(ModelError::NotInputAffine {
                        equation: self.states[k].name().to_string(),
                        input: u.name().to_string(),
                    });
                }
                g.push(d);
            }
            control_fields.push((u.clone(), g));
        }
        let zero_map: HashMap<Symbol, Expr> =
            selection.iter().map(|u| (u.clone(), Expr::zero())).collect();
        let drift: Vec<Expr> = self.dynamics.iter().map(|f| substitute(f, &zero_map)).collect();
        // reassembly must reproduce the dynamics exactly
        for (k, f_k) in self.dynamics.iter().enumerate() {
            let mut parts = vec![drift[k].clone()];
            for (u, g) in &control_fields {
                parts.push(Expr::mul2(Expr::sym(u.clone()), g[k].clone()));
            }
            let residual = Expr::sub(f_k.clone(), Expr::add(parts));
            if !symexpr::is_zero_rational_fn(&residual) {
                return Err(ModelError::NotInputAffine {
                    equation: self.states[k].name().to_string(),
                    input: selection
                        .iter()
                        .find(|u| f_k.depends_on(u))
                        .map(|u| u.name().to_string())
                        .unwrap_or_default(),
                });
            }
        }
        Ok(AffineDecomposition { states: self.states.clone(), drift, control_fields })
    }

    /// Variant application: the named symbols become the inputs (reclassifying
    /// parameters if needed), all other current inputs become parameters, and
    /// the outputs become the named states.
    pub fn configure(&self, inputs: &[&str], outputs: &[&str]) -> Result<OdeModel, ModelError> {
        let mut m = self.clone();
        // inputs
        let current_inputs = m.input_symbols();
        let mut rename: HashMap<Symbol, Expr> = HashMap::new();
        let mut new_params = m.params.clone();
        let mut new_inputs: Vec<InputSpec> = Vec::new();
        for name in inputs {
            if let Some(spec) = m.inputs.iter().find(|i| i.symbol.name() == *name) {
                new_inputs.push(spec.clone());
            } else if let Some(pos) = m.params.iter().position(|p| p.name() == *name) {
                let old = m.params[pos].clone();
                let promoted = old.with_kind(SymbolKind::Input);
                rename.insert(old.clone(), Expr::sym(promoted.clone()));
                new_params.retain(|p| p != &old);
                new_inputs.push(InputSpec { symbol: promoted, derivative_class: DerivativeClass::Unbounded });
            } else {
                return Err(ModelError::UnknownInput(name.to_string()));
            }
        }
        for old in &current_inputs {
            if !inputs.contains(&old.name()) {
                let demoted = old.with_kind(SymbolKind::Param);
                rename.insert(old.clone(), Expr::sym(demoted.clone()));
                new_params.push(demoted);
            }
        }
        m.params = new_params;
        m.inputs = new_inputs;
        if !rename.is_empty() {
            m.dynamics = m.dynamics.iter().map(|e| substitute(e, &rename)).collect();
            m.outputs = m.outputs.iter().map(|e| substitute(e, &rename)).collect();
        }
        // outputs
        let mut new_outputs = Vec::new();
        for name in outputs {
            let s = m
                .states
                .iter()
                .find(|s| s.name() == *name)
                .ok_or_else(|| ModelError::UnknownOutput(name.to_string()))?;
            new_outputs.push(Expr::sym(s.clone()));
        }
        if !new_outputs.is_empty() {
            m.outputs = new_outputs;
        }
        m.validate()?;
        Ok(m)
    }

    /// Regenerates DSL source that reparses to a structurally equal model.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model {}\n", self.name));
        if !self.states.is_empty() {
            out.push_str(&format!(
                "states {}\n",
                self.states.iter().map(|s| s.name().to_string()).collect::<Vec<_>>().join(", ")
            ));
        }
        if !self.params.is_empty() {
            out.push_str(&format!(
                "params {}\n",
                self.params.iter().map(|s| s.name().to_string()).collect::<Vec<_>>().join(", ")
            ));
        }
        if !self.inputs.is_empty() {
            out.push_str(&format!(
                "inputs {}\n",
                self.inputs.iter().map(|i| i.symbol.name().to_string()).collect::<Vec<_>>().join(", ")
            ));
        }
        for (s, v) in &self.known_constants {
            if v.is_integer() {
                out.push_str(&format!("known {} = {}\n", s.name(), v.numer()));
            } else {
                out.push_str(&format!("known {} = {}/{}\n", s.name(), v.numer(), v.denom()));
            }
        }
        for i in &self.inputs {
            if let DerivativeClass::ZeroAbove(k) = i.derivative_class {
                out.push_str(&format!("input_class {} zero_above {}\n", i.symbol.name(), k));
            }
        }
        for h in &self.outputs {
            out.push_str(&format!("output {}\n", h));
        }
        for (s, f) in self.states.iter().zip(&self.dynamics) {
            out.push_str(&format!("ode {}' = {}\n", s.name(), f));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Expr;

    const BIOSD1: &str = "\
model biosd_1
states X, Z
params k_in, b, k1, k2, k3, delta
inputs U
output X
ode X' = k_in*U + b - k1*X*Z - delta*X
ode Z' = k2*X - k3
";

    #[test]
    fn parse_biosd1_shape() {
        let m = parse_model(BIOSD1).unwrap();
        assert_eq!(m.n_states(), 2);
        assert_eq!(m.n_params(), 6);
        assert_eq!(m.n_inputs(), 1);
        assert_eq!(m.n_outputs(), 1);
    }

    #[test]
    fn undeclared_state_rejected() {
        let src = "model m\nstates X\nparams a\noutput X\node X' = a*X\node W' = X\n";
        assert!(parse_model(src).is_err());
    }

    #[test]
    fn render_round_trip() {
        let m = parse_model(BIOSD1).unwrap();
        let m2 = parse_model(&m.render()).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn augment_counts() {
        let m = parse_model(BIOSD1).unwrap();
        let a = m.augment_with_params();
        assert_eq!(a.n_states(), 8);
        assert_eq!(a.n_params(), 0);
        assert!(a.dynamics[2..].iter().all(|e| e.is_zero()));
        // augmenting twice is a no-op once there are no parameters left
        let a2 = a.augment_with_params();
        assert_eq!(a2.n_states(), 8);
    }

    #[test]
    fn affine_biosd1() {
        let m = parse_model(BIOSD1).unwrap();
        let sel = m.input_symbols();
        let a = m.to_affine(&sel).unwrap();
        let k_in = Expr::sym(Symbol::param("k_in"));
        assert_eq!(a.control_fields.len(), 1);
        assert_eq!(a.control_fields[0].1[0], k_in);
        assert!(a.control_fields[0].1[1].is_zero());
        assert!(!a.drift[0].depends_on(&Symbol::input("U")));
    }

    #[test]
    fn non_affine_rejected() {
        let src = "model m\nstates X\nparams a\ninputs u\noutput X\node X' = a*u^2 - X\n";
        let m = parse_model(src).unwrap();
        let err = m.to_affine(&m.input_symbols()).unwrap_err();
        match err {
            ModelError::NotInputAffine { equation, input } => {
                assert_eq!(equation, "X");
                assert_eq!(input, "u");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn configure_swaps_roles() {
        let src = "model m\nstates X\nparams a, b\ninputs u\noutput X\node X' = a*u + b - X\n";
        let m = parse_model(src).unwrap();
        let v = m.configure(&["b"], &["X"]).unwrap();
        assert_eq!(v.input_symbols()[0].name(), "b");
        assert!(v.params.iter().any(|p| p.name() == "u"));
        assert!(v.params.iter().any(|p| p.name() == "a"));
        v.validate().unwrap();
    }
}
