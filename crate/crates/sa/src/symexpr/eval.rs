//! Exact evaluation over the rationals and over a prime field.
//!
//! An [`Assignment`] always stores exact rational values. Field evaluation
//! reduces multiplicative positions modulo `p` while exponent positions are
//! evaluated in exact integer arithmetic, so identities such as
//! `T^(n-1) * T = T^n` hold exactly for any integer binding of `n`.

use super::{Expr, Kind, SymError, Symbol};
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, HashMap};

/// Mersenne prime 2^61 - 1; fits comfortably in u64/u128 arithmetic.
pub const DEFAULT_PRIME: u64 = (1u64 << 61) - 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    vals: BTreeMap<Symbol, BigRational>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, s: Symbol, v: BigRational) {
        self.vals.insert(s, v);
    }

    pub fn bind_int(&mut self, s: Symbol, v: i64) {
        self.bind(s, BigRational::from_integer(BigInt::from(v)));
    }

    pub fn bind_u64(&mut self, s: Symbol, v: u64) {
        self.bind(s, BigRational::from_integer(BigInt::from(v)));
    }

    pub fn get(&self, s: &Symbol) -> Option<&BigRational> {
        self.vals.get(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Symbol, &BigRational)> {
        self.vals.iter()
    }

    /// Stable digest of the point, for rank-result witnesses.
    pub fn digest(&self) -> u64 {
        let mut h = super::FNV_OFFSET;
        for (s, v) in &self.vals {
            h = super::fnv_bytes(h, s.name().as_bytes());
            h = super::fnv_bytes(h, &v.numer().to_signed_bytes_le());
            h = super::fnv_bytes(h, &v.denom().to_signed_bytes_le());
        }
        h
    }
}

fn pow_m(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc: u64 = 1;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_m(acc, b, p);
        }
        b = mul_m(b, b, p);
        e >>= 1;
    }
    acc
}

#[inline]
fn mul_m(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

#[inline]
fn add_m(a: u64, b: u64, p: u64) -> u64 {
    let s = a as u128 + b as u128;
    (s % p as u128) as u64
}

/// Square root modulo a prime p ≡ 3 (mod 4), via `a^((p+1)/4)`. Returns
/// [`SymError::NoRoot`] when `a` is a non-residue (callers resample) or when
/// the prime has the wrong residue class.
fn sqrt_m(a: u64, p: u64) -> Result<u64, SymError> {
    if p % 4 != 3 {
        return Err(SymError::NoRoot);
    }
    let r = pow_m(a, (p + 1) / 4, p);
    if mul_m(r, r, p) == a % p {
        Ok(r)
    } else {
        Err(SymError::NoRoot)
    }
}

pub fn mod_inverse(a: u64, p: u64) -> Option<u64> {
    if a % p == 0 {
        None
    } else {
        Some(pow_m(a, p - 2, p))
    }
}

/// Image of an exact rational in F_p (inverse of the denominator).
pub fn rational_mod(r: &BigRational, p: u64) -> Result<u64, SymError> {
    let pm = BigInt::from(p);
    let num = r.numer().mod_floor(&pm).to_u64().unwrap();
    let den = r.denom().mod_floor(&pm).to_u64().unwrap();
    let inv = mod_inverse(den, p).ok_or(SymError::PoleEncountered)?;
    Ok(mul_m(num, inv, p))
}

/// `b^k` over F_p for an exact rational exponent. Integer exponents reduce
/// modulo `p - 1` (Fermat); half-integer exponents evaluate as a square root
/// of `b^(2k)`, failing with [`SymError::NoRoot`] on a non-residue.
pub fn pow_mod_rational(bv: u64, ev: &BigRational, p: u64) -> Result<u64, SymError> {
    let (ei, half) = if ev.is_integer() {
        (ev.to_integer(), false)
    } else {
        let doubled = ev * BigRational::from_integer(2.into());
        if doubled.is_integer() {
            (doubled.to_integer(), true)
        } else {
            return Err(SymError::NonIntegerExponent);
        }
    };
    if bv % p == 0 {
        return if ei.is_positive() {
            Ok(0)
        } else if ei.is_zero() {
            Err(SymError::ZeroPowZero)
        } else {
            Err(SymError::PoleEncountered)
        };
    }
    let em = ei.mod_floor(&BigInt::from(p - 1)).to_u64().unwrap();
    let y = pow_m(bv, em, p);
    if half {
        sqrt_m(y, p)
    } else {
        Ok(y)
    }
}

/// Memoizing evaluator for many expressions at a single point.
pub struct ModEvaluator {
    p: u64,
    assign: Assignment,
    cache: HashMap<usize, u64>,
    rat_cache: HashMap<usize, BigRational>,
    pinned: Vec<Expr>,
}

impl ModEvaluator {
    pub fn new(assign: Assignment, p: u64) -> Self {
        ModEvaluator { p, assign, cache: HashMap::new(), rat_cache: HashMap::new(), pinned: Vec::new() }
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assign
    }

    /// Binds a previously unbound symbol. Cached values stay valid because
    /// evaluations that saw the symbol unbound failed without caching.
    pub fn bind(&mut self, s: Symbol, v: BigRational) {
        debug_assert!(self.assign.get(&s).is_none());
        self.assign.bind(s, v);
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn eval(&mut self, e: &Expr) -> Result<u64, SymError> {
        self.pinned.push(e.clone());
        self.eval_inner(e)
    }

    fn eval_inner(&mut self, e: &Expr) -> Result<u64, SymError> {
        if let Some(v) = self.cache.get(&e.ptr()) {
            return Ok(*v);
        }
        let p = self.p;
        let v = match e.kind() {
            Kind::Num(r) => rational_mod(r, p)?,
            Kind::Sym(s) => {
                let r = self
                    .assign
                    .get(s)
                    .ok_or_else(|| SymError::UnboundSymbol(s.name().to_string()))?
                    .clone();
                rational_mod(&r, p)?
            }
            Kind::Sum(ops) => {
                let mut acc = 0u64;
                for o in ops {
                    acc = add_m(acc, self.eval_inner(o)?, p);
                }
                acc
            }
            Kind::Prod(ops) => {
                let mut acc = 1u64;
                for o in ops {
                    acc = mul_m(acc, self.eval_inner(o)?, p);
                }
                acc
            }
            Kind::Pow(b, ex) => {
                let bv = self.eval_inner(b)?;
                // half-integer exponents arise from quadratic equilibrium
                // solutions; b^(k/2) is evaluated as a square root of b^k
                let ev = self.eval_rat_inner(ex)?;
                pow_mod_rational(bv, &ev, p)?
            }
            Kind::Log(_) => return Err(SymError::LogEncountered),
        };
        self.cache.insert(e.ptr(), v);
        Ok(v)
    }

    fn eval_rat_inner(&mut self, e: &Expr) -> Result<BigRational, SymError> {
        if let Some(v) = self.rat_cache.get(&e.ptr()) {
            return Ok(v.clone());
        }
        let v = eval_rational_walk(e, &self.assign, &mut self.rat_cache)?;
        Ok(v)
    }
}

/// Exact evaluation over the rationals.
pub fn eval_rational(e: &Expr, a: &Assignment) -> Result<BigRational, SymError> {
    let mut memo = HashMap::new();
    eval_rational_walk(e, a, &mut memo)
}

fn eval_rational_walk(
    e: &Expr,
    a: &Assignment,
    memo: &mut HashMap<usize, BigRational>,
) -> Result<BigRational, SymError> {
    if let Some(v) = memo.get(&e.ptr()) {
        return Ok(v.clone());
    }
    let v = match e.kind() {
        Kind::Num(r) => r.clone(),
        Kind::Sym(s) => a
            .get(s)
            .ok_or_else(|| SymError::UnboundSymbol(s.name().to_string()))?
            .clone(),
        Kind::Sum(ops) => {
            let mut acc = BigRational::zero();
            for o in ops {
                acc += eval_rational_walk(o, a, memo)?;
            }
            acc
        }
        Kind::Prod(ops) => {
            let mut acc = BigRational::one();
            for o in ops {
                acc *= eval_rational_walk(o, a, memo)?;
            }
            acc
        }
        Kind::Pow(b, ex) => {
            let bv = eval_rational_walk(b, a, memo)?;
            let ev = eval_rational_walk(ex, a, memo)?;
            if !ev.is_integer() {
                return Err(SymError::NonIntegerExponent);
            }
            let ei = ev.to_integer();
            if bv.is_zero() {
                if ei.is_positive() {
                    BigRational::zero()
                } else if ei.is_zero() {
                    return Err(SymError::ZeroPowZero);
                } else {
                    return Err(SymError::PoleEncountered);
                }
            } else {
                let mag = ei.magnitude().to_u32().ok_or(SymError::NonIntegerExponent)?;
                let mut acc = BigRational::one();
                let mut base = bv;
                let mut k = mag;
                while k > 0 {
                    if k & 1 == 1 {
                        acc *= &base;
                    }
                    k >>= 1;
                    if k > 0 {
                        base = &base * &base;
                    }
                }
                if ei.is_negative() {
                    acc = acc.recip();
                }
                acc
            }
        }
        Kind::Log(_) => return Err(SymError::LogEncountered),
    };
    memo.insert(e.ptr(), v.clone());
    Ok(v)
}

/// Evaluation over F_p at a single point (convenience wrapper).
pub fn eval_mod(e: &Expr, a: &Assignment, p: u64) -> Result<u64, SymError> {
    let mut ev = ModEvaluator::new(a.clone(), p);
    ev.eval(e)
}
