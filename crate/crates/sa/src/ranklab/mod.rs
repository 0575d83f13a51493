//! Randomized exact rank computations for symbolic matrices.
//!
//! Entries are rational functions of the model symbols. Ranks are computed
//! by substituting independent uniform field elements for every free symbol
//! and reducing the resulting numeric matrix over F_p by exact elimination.
//! A random point can only under-estimate the generic rank (Schwartz-Zippel,
//! one-sided), so the maximum over trials is reported.

mod ad;

pub use ad::{check_differentiable, GradSampler};

use crate::symexpr::{replace, Expr, Kind, RatMatrix, SymError, Symbol, ModEvaluator, Assignment, DEFAULT_PRIME};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankError {
    #[error("degenerate sampling: {retries} random points all hit a structural pole")]
    DegenerateSampling { retries: u32 },
    #[error(transparent)]
    Sym(#[from] SymError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeConfig {
    pub prime: u64,
    pub trials: u32,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { prime: DEFAULT_PRIME, trials: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankResult {
    pub rank: usize,
    pub trials: u32,
    /// One assignment digest per trial.
    pub witness_points: Vec<u64>,
    pub confidence_note: String,
}

const MAX_RETRIES: u32 = 32;

/// Row-echelon accumulator over F_p with normalized pivots.
#[derive(Debug, Clone)]
pub struct Echelon {
    p: u64,
    rows: Vec<Vec<u64>>,
    pivots: Vec<usize>,
}

impl Echelon {
    pub fn new(p: u64) -> Self {
        Echelon { p, rows: Vec::new(), pivots: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, row: &mut [u64]) {
        let p = self.p;
        for (r, &pc) in self.rows.iter().zip(&self.pivots) {
            let factor = row[pc];
            if factor == 0 {
                continue;
            }
            for (x, &rx) in row.iter_mut().zip(r) {
                let sub = (factor as u128 * rx as u128) % p as u128;
                *x = ((*x as u128 + p as u128 - sub) % p as u128) as u64;
            }
        }
    }

    /// Reduces and stores the row; returns true when it increased the rank.
    pub fn add_row(&mut self, mut row: Vec<u64>) -> bool {
        let p = self.p;
        for x in row.iter_mut() {
            *x %= p;
        }
        self.reduce(&mut row);
        match row.iter().position(|&x| x != 0) {
            None => false,
            Some(pc) => {
                let inv = crate::symexpr::mod_inverse(row[pc], p).unwrap();
                for x in row.iter_mut() {
                    *x = ((*x as u128 * inv as u128) % p as u128) as u64;
                }
                self.rows.push(row);
                self.pivots.push(pc);
                true
            }
        }
    }

    /// True iff the vector lies in the span of the stored rows.
    pub fn in_span(&self, row: &[u64]) -> bool {
        let mut r = row.to_vec();
        for x in r.iter_mut() {
            *x %= self.p;
        }
        self.reduce(&mut r);
        r.iter().all(|&x| x == 0)
    }
}

/// A symbolic matrix evaluated at `trials` random witness points, ready for
/// repeated rank queries. Column-deletion ranks reuse the same points, so
/// deletion ranks are always comparable with the full rank.
#[derive(Debug, Clone)]
pub struct MatrixProbe {
    p: u64,
    n_cols: usize,
    trial_rows: Vec<Vec<Vec<u64>>>,
    witnesses: Vec<u64>,
    note: String,
}

impl MatrixProbe {
    pub fn new(rows: &[Vec<Expr>], cfg: &ProbeConfig) -> Result<Self, RankError> {
        assert!(cfg.trials >= 1);
        let n_cols = rows.first().map_or(0, |r| r.len());
        let rows = replace_log_atoms(rows);
        let mut symbols: BTreeSet<Symbol> = BTreeSet::new();
        for row in &rows {
            for e in row {
                symbols.extend(e.free_symbols());
            }
        }
        let symbols: Vec<Symbol> = symbols.into_iter().collect();

        let mut trial_rows = Vec::with_capacity(cfg.trials as usize);
        let mut witnesses = Vec::with_capacity(cfg.trials as usize);
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.seed, trial);
            let (numeric, digest) =
                sample_and_evaluate(&rows, &symbols, &mut rng, cfg.prime)?;
            trial_rows.push(numeric);
            witnesses.push(digest);
        }
        let degree = minor_degree_bound(&rows);
        let note = format!(
            "Schwartz-Zippel: minor degree <= {degree}, per-trial failure <= {degree}/(p-3), p = {}, one-sided",
            cfg.prime
        );
        Ok(MatrixProbe { p: cfg.prime, n_cols, trial_rows, witnesses, note })
    }

    /// Probe for the Jacobian of `funcs` with respect to `columns`: row `i`
    /// is the gradient of `funcs[i]`, computed numerically by reverse-mode
    /// differentiation at each witness point. The symbolic gradients are
    /// never materialized, which keeps memory proportional to `funcs`.
    pub fn from_functions(
        funcs: &[Expr],
        columns: &[Symbol],
        cfg: &ProbeConfig,
    ) -> Result<Self, RankError> {
        assert!(cfg.trials >= 1);
        check_differentiable(funcs)?;
        let mut symbols: BTreeSet<Symbol> = BTreeSet::new();
        for f in funcs {
            symbols.extend(f.free_symbols());
        }
        let symbols: Vec<Symbol> = symbols.into_iter().collect();

        let mut trial_rows = Vec::with_capacity(cfg.trials as usize);
        let mut witnesses = Vec::with_capacity(cfg.trials as usize);
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.seed, trial);
            let (numeric, digest) =
                sample_and_differentiate(funcs, columns, &symbols, &mut rng, cfg.prime)?;
            trial_rows.push(numeric);
            witnesses.push(digest);
        }
        let degree = jacobian_degree_bound(funcs, columns.len());
        let note = format!(
            "Schwartz-Zippel: minor degree <= {degree}, per-trial failure <= {degree}/(p-3), p = {}, one-sided",
            cfg.prime
        );
        Ok(MatrixProbe { p: cfg.prime, n_cols: columns.len(), trial_rows, witnesses, note })
    }

    /// Probe for the Jacobian of a rational-row matrix with respect to
    /// `columns` (which must be the leading ring variables). Row gradients
    /// come from the quotient rule applied numerically: one pass over the
    /// numerator monomials plus the tiny basis polynomials per point.
    pub fn from_rational(
        mat: &RatMatrix,
        columns: &[Symbol],
        cfg: &ProbeConfig,
    ) -> Result<Self, RankError> {
        assert!(cfg.trials >= 1);
        let n_cols = columns.len();
        debug_assert_eq!(&mat.ring.vars()[..n_cols], columns);
        let mut trial_rows = Vec::with_capacity(cfg.trials as usize);
        let mut witnesses = Vec::with_capacity(cfg.trials as usize);
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.seed, trial);
            let (numeric, digest) = sample_rational(mat, n_cols, &mut rng, cfg.prime)?;
            trial_rows.push(numeric);
            witnesses.push(digest);
        }
        let degree = rational_degree_bound(mat, n_cols);
        let note = format!(
            "Schwartz-Zippel: minor degree <= {degree}, per-trial failure <= {degree}/(p-3), p = {}, one-sided",
            cfg.prime
        );
        Ok(MatrixProbe { p: cfg.prime, n_cols, trial_rows, witnesses, note })
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn rank_skipping(&self, skip: Option<usize>) -> RankResult {
        let mut best = 0;
        for rows in &self.trial_rows {
            let mut ech = Echelon::new(self.p);
            for row in rows {
                let r: Vec<u64> = match skip {
                    None => row.clone(),
                    Some(c) => {
                        row.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, &x)| x).collect()
                    }
                };
                ech.add_row(r);
            }
            best = best.max(ech.rank());
        }
        RankResult {
            rank: best,
            trials: self.trial_rows.len() as u32,
            witness_points: self.witnesses.clone(),
            confidence_note: self.note.clone(),
        }
    }

    pub fn rank(&self) -> RankResult {
        self.rank_skipping(None)
    }

    pub fn rank_without_column(&self, col: usize) -> RankResult {
        assert!(col < self.n_cols);
        self.rank_skipping(Some(col))
    }
}

/// Convenience wrapper: rank of a symbolic matrix.
pub fn generic_rank(rows: &[Vec<Expr>], cfg: &ProbeConfig) -> Result<RankResult, RankError> {
    Ok(MatrixProbe::new(rows, cfg)?.rank())
}

pub fn rank_without_column(
    rows: &[Vec<Expr>],
    col: usize,
    cfg: &ProbeConfig,
) -> Result<RankResult, RankError> {
    Ok(MatrixProbe::new(rows, cfg)?.rank_without_column(col))
}

fn trial_rng(seed: u64, trial: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(trial as u64 + 1)))
}

/// Samples every symbol uniformly from [2, p-2] and evaluates all entries,
/// resampling the whole point when a pole is hit.
fn sample_and_evaluate(
    rows: &[Vec<Expr>],
    symbols: &[Symbol],
    rng: &mut ChaCha8Rng,
    p: u64,
) -> Result<(Vec<Vec<u64>>, u64), RankError> {
    'retry: for _ in 0..MAX_RETRIES {
        let mut assign = Assignment::new();
        for s in symbols {
            assign.bind_u64(s.clone(), rng.gen_range(2..=p - 2));
        }
        let digest = assign.digest();
        let mut ev = ModEvaluator::new(assign, p);
        let mut numeric = Vec::with_capacity(rows.len());
        for row in rows {
            let mut out = Vec::with_capacity(row.len());
            for e in row {
                match ev.eval(e) {
                    Ok(v) => out.push(v),
                    Err(SymError::PoleEncountered)
                    | Err(SymError::ZeroPowZero)
                    | Err(SymError::NoRoot) => continue 'retry,
                    Err(other) => return Err(RankError::Sym(other)),
                }
            }
            numeric.push(out);
        }
        return Ok((numeric, digest));
    }
    Err(RankError::DegenerateSampling { retries: MAX_RETRIES })
}

/// Samples a point and fills one numeric Jacobian of `funcs` w.r.t.
/// `columns`, resampling the whole point on poles, missing roots, and 0^0,
/// exactly like [`sample_and_evaluate`].
fn sample_and_differentiate(
    funcs: &[Expr],
    columns: &[Symbol],
    symbols: &[Symbol],
    rng: &mut ChaCha8Rng,
    p: u64,
) -> Result<(Vec<Vec<u64>>, u64), RankError> {
    'retry: for _ in 0..MAX_RETRIES {
        let mut assign = Assignment::new();
        for s in symbols {
            assign.bind_u64(s.clone(), rng.gen_range(2..=p - 2));
        }
        let digest = assign.digest();
        let mut point_rng = rng.clone();
        let mut sampler = GradSampler::new(&assign, p, &mut point_rng);
        let mut numeric = Vec::with_capacity(funcs.len());
        for f in funcs {
            match sampler.gradient(f, columns) {
                Ok(row) => numeric.push(row),
                Err(SymError::PoleEncountered)
                | Err(SymError::ZeroPowZero)
                | Err(SymError::NoRoot) => continue 'retry,
                Err(other) => return Err(RankError::Sym(other)),
            }
        }
        return Ok((numeric, digest));
    }
    Err(RankError::DegenerateSampling { retries: MAX_RETRIES })
}

/// Samples all ring variables and fills one numeric Jacobian of the rational
/// rows; any vanishing basis polynomial is a pole and triggers resampling.
fn sample_rational(
    mat: &RatMatrix,
    n_cols: usize,
    rng: &mut ChaCha8Rng,
    p: u64,
) -> Result<(Vec<Vec<u64>>, u64), RankError> {
    use crate::symexpr::spoly::pow_m;
    let pw = p as u128;
    'retry: for _ in 0..MAX_RETRIES {
        let vals: Vec<u64> =
            (0..mat.ring.n_vars()).map(|_| rng.gen_range(2..=p - 2)).collect();
        let mut assign = Assignment::new();
        for (s, &v) in mat.ring.vars().iter().zip(&vals) {
            assign.bind_u64(s.clone(), v);
        }
        let digest = assign.digest();
        let inv_vals: Vec<u64> = vals[..n_cols]
            .iter()
            .map(|&v| crate::symexpr::mod_inverse(v, p).unwrap())
            .collect();
        // basis values, inverses and gradients, shared by all rows
        let mut b_inv = Vec::with_capacity(mat.basis.len());
        let mut b_grad = Vec::with_capacity(mat.basis.len());
        for b in &mat.basis {
            let (v, g) = b.value_and_gradient_mod(&vals, &inv_vals, n_cols, p);
            match crate::symexpr::mod_inverse(v, p) {
                Some(inv) => {
                    b_inv.push(inv);
                    b_grad.push(g);
                }
                None => continue 'retry,
            }
        }
        let mut numeric = Vec::with_capacity(mat.rows.len());
        for row in &mat.rows {
            let (val, grad) = row.num.value_and_gradient_mod(&vals, &inv_vals, n_cols, p);
            // 1/Π B_j^{e_j} and Σ_j e_j·∇B_j/B_j
            let mut denfac: u64 = 1;
            let mut chain = vec![0u64; n_cols];
            for (j, &e) in row.den_exp.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                denfac = ((denfac as u128 * pow_m(b_inv[j], e as u64, p) as u128) % pw) as u64;
                for c in 0..n_cols {
                    let t = (b_grad[j][c] as u128 * b_inv[j] as u128 % pw) * e as u128 % pw;
                    chain[c] = ((chain[c] as u128 + t) % pw) as u64;
                }
            }
            let mut out = Vec::with_capacity(n_cols);
            for c in 0..n_cols {
                let sub = val as u128 * chain[c] as u128 % pw;
                let num = (grad[c] as u128 + pw - sub) % pw;
                out.push(((num * denfac as u128) % pw) as u64);
            }
            numeric.push(out);
        }
        return Ok((numeric, digest));
    }
    Err(RankError::DegenerateSampling { retries: MAX_RETRIES })
}

/// Degree bound analogue of [`jacobian_degree_bound`] for rational rows:
/// numerator degree plus the cleared denominator degrees.
fn rational_degree_bound(mat: &RatMatrix, n_cols: usize) -> u64 {
    let b_degs: Vec<u64> = mat.basis.iter().map(|b| b.total_degree()).collect();
    let mut degs: Vec<u64> = mat
        .rows
        .iter()
        .map(|r| {
            r.num.total_degree()
                + r.den_exp
                    .iter()
                    .zip(&b_degs)
                    .map(|(&e, &d)| e as u64 * d)
                    .sum::<u64>()
        })
        .collect();
    degs.sort_unstable_by(|a, b| b.cmp(a));
    degs.iter().take(n_cols.min(mat.rows.len())).sum()
}

/// Crude syntactic degree bound for the Jacobian confidence note: each
/// gradient entry has degree at most that of its function (as a rational
/// function), so the minor bound reuses the function degrees.
fn jacobian_degree_bound(funcs: &[Expr], n_cols: usize) -> u64 {
    let mut memo = HashMap::new();
    let mut degs: Vec<u64> = funcs.iter().map(|f| minor_degree_walk(f, &mut memo)).collect();
    degs.sort_unstable_by(|a, b| b.cmp(a));
    degs.iter().take(n_cols.min(funcs.len())).sum()
}

/// Replaces every distinct logarithmic atom by a fresh auxiliary symbol, so
/// matrices containing transcendental atoms can be probed numerically. The
/// atoms are algebraically independent of the rational symbols generically.
pub fn replace_log_atoms(rows: &[Vec<Expr>]) -> Vec<Vec<Expr>> {
    let mut logs: Vec<Expr> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    for row in rows {
        for e in row {
            e.collect_logs(&mut logs, &mut seen);
        }
    }
    if logs.is_empty() {
        return rows.to_vec();
    }
    let map: HashMap<Expr, Expr> = logs
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), Expr::sym(Symbol::aux(&format!("ln#{i}")))))
        .collect();
    rows.iter().map(|row| row.iter().map(|e| replace(e, &map)).collect()).collect()
}

/// Crude syntactic bound on the degree of any maximal minor, for the
/// confidence note. Symbolic exponents are counted with a fixed cap.
fn minor_degree_bound(rows: &[Vec<Expr>]) -> u64 {
    let mut memo = HashMap::new();
    let mut row_maxes: Vec<u64> = rows
        .iter()
        .map(|r| r.iter().map(|e| minor_degree_walk(e, &mut memo)).max().unwrap_or(0))
        .collect();
    row_maxes.sort_unstable_by(|a, b| b.cmp(a));
    let r = rows.first().map_or(0, |row| row.len()).min(rows.len());
    row_maxes.iter().take(r).sum()
}

fn minor_degree_walk(e: &Expr, memo: &mut HashMap<usize, u64>) -> u64 {
    const SYMBOLIC_EXP_CAP: u64 = 16;
    if let Some(&d) = memo.get(&e.ptr()) {
        return d;
    }
    let d = match e.kind() {
        Kind::Num(_) => 0,
        Kind::Sym(_) | Kind::Log(_) => 1,
        Kind::Sum(ops) => ops.iter().map(|o| minor_degree_walk(o, memo)).max().unwrap_or(0),
        Kind::Prod(ops) => ops.iter().map(|o| minor_degree_walk(o, memo)).sum(),
        Kind::Pow(b, ex) => {
            let bd = minor_degree_walk(b, memo);
            match ex.as_int() {
                Some(k) => {
                    let k = k.magnitude().to_string().parse::<u64>().unwrap_or(SYMBOLIC_EXP_CAP);
                    bd.saturating_mul(k)
                }
                None => bd.saturating_mul(SYMBOLIC_EXP_CAP),
            }
        }
    };
    memo.insert(e.ptr(), d);
    d
}

/// Samples a single field element in [2, p-2]; used by callers that need
/// generic parameter values outside a matrix context.
pub fn sample_value(rng: &mut ChaCha8Rng, p: u64) -> u64 {
    rng.gen_range(2..=p - 2)
}

/// Deterministic per-purpose RNG stream derived from a run seed.
pub fn derive_rng(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in purpose.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Builds an assignment binding the given symbols to fresh random field
/// elements in [2, p-2].
pub fn generic_assignment(symbols: &[Symbol], rng: &mut ChaCha8Rng, p: u64) -> Assignment {
    let mut a = Assignment::new();
    for s in symbols {
        a.bind(s.clone(), BigRational::from_integer(rng.gen_range(2..=p - 2).into()));
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: &str) -> Expr {
        Expr::sym(Symbol::state(n))
    }

    #[test]
    fn identity_rank() {
        let rows = vec![
            vec![Expr::one(), Expr::zero(), Expr::zero()],
            vec![Expr::zero(), Expr::one(), Expr::zero()],
            vec![Expr::zero(), Expr::zero(), Expr::one()],
        ];
        let r = generic_rank(&rows, &ProbeConfig::default()).unwrap();
        assert_eq!(r.rank, 3);
        assert_eq!(r.witness_points.len(), 3);
    }

    #[test]
    fn proportional_rows_rank_one() {
        let rows = vec![
            vec![sym("x"), sym("y")],
            vec![Expr::mul2(Expr::int(2), sym("x")), Expr::mul2(Expr::int(2), sym("y"))],
        ];
        let r = generic_rank(&rows, &ProbeConfig::default()).unwrap();
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn column_deletion_bounds() {
        // full-rank square: deleting any column drops rank by exactly one;
        // deleting an all-zero column never changes it
        let rows = vec![
            vec![sym("x"), Expr::zero(), Expr::one()],
            vec![Expr::one(), Expr::zero(), sym("y")],
        ];
        let probe = MatrixProbe::new(&rows, &ProbeConfig::default()).unwrap();
        let full = probe.rank().rank;
        assert_eq!(full, 2);
        assert_eq!(probe.rank_without_column(1).rank, 2);
        assert_eq!(probe.rank_without_column(0).rank, 1);
        assert_eq!(probe.rank_without_column(2).rank, 1);
    }

    #[test]
    fn pole_resampling_recovers() {
        // 1/(x - y): poles only on the diagonal slice, resampling succeeds
        let e = Expr::div(Expr::one(), Expr::sub(sym("x"), sym("y")));
        let rows = vec![vec![e]];
        let r = generic_rank(&rows, &ProbeConfig::default()).unwrap();
        assert_eq!(r.rank, 1);
    }

    #[test]
    fn repeatability() {
        let rows = vec![vec![sym("x"), sym("y")], vec![sym("y"), sym("x")]];
        let cfg = ProbeConfig { seed: 42, ..Default::default() };
        let a = generic_rank(&rows, &cfg).unwrap();
        let b = generic_rank(&rows, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generic_rank(&rows, &ProbeConfig { seed: 43, ..Default::default() }).unwrap();
        assert_eq!(a.rank, c.rank);
        assert_ne!(a.witness_points, c.witness_points);
    }

    #[test]
    fn log_atoms_probe_as_independent_symbols() {
        // rows (1, ln x) and (1, 1): generically independent
        let lx = Expr::log(sym("x"));
        let rows = vec![vec![Expr::one(), lx], vec![Expr::one(), Expr::one()]];
        let r = generic_rank(&rows, &ProbeConfig::default()).unwrap();
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn echelon_in_span() {
        let p = DEFAULT_PRIME;
        let mut ech = Echelon::new(p);
        assert!(ech.add_row(vec![1, 2, 3]));
        assert!(ech.add_row(vec![0, 1, 1]));
        assert!(ech.in_span(&[0, 0, 0]));
        assert!(ech.in_span(&[1, 2, 3]));
        assert!(ech.in_span(&[1, 3, 4]));
        assert!(!ech.in_span(&[0, 0, 1]));
        assert_eq!(ech.rank(), 2);
    }

    #[test]
    fn symbolic_power_rows() {
        // (T^n, n*T^(n-1)) vs (T^n, T^n): independent generically
        let t = sym("T");
        let n = Expr::sym(Symbol::param("n"));
        let tn = Expr::pow(t.clone(), n.clone());
        let dtn = Expr::mul2(n.clone(), Expr::pow(t.clone(), Expr::sub(n.clone(), Expr::one())));
        let rows = vec![vec![tn.clone(), dtn], vec![tn.clone(), tn.clone()]];
        let r = generic_rank(&rows, &ProbeConfig::default()).unwrap();
        assert_eq!(r.rank, 2);
    }
}
