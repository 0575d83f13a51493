//! Line-oriented parser for the model DSL.
//!
//! ```text
//! model biosd_1
//! states X, Z
//! params k_in, b, k1, k2, k3, delta
//! inputs U
//! output X
//! ode X' = k_in*U + b - k1*X*Z - delta*X
//! ode Z' = k2*X - k3
//! ```
//!
//! Optional clauses: `known <name> = <rational>`, `input_class <input>
//! zero_above <k>`, multiple `output <expr>` lines. `#` starts a comment.

use super::{DerivativeClass, InputSpec, ModelError, OdeModel};
use crate::symexpr::{Expr, Symbol, SymbolKind};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(BigInt),
    Punct(char),
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<(Tok, usize)>, ModelError> {
    let mut out = Vec::new();
    let mut chars = line.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            '#' => break,
            c if c.is_whitespace() => {
                chars.next();
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), i + 1));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_digit() {
                        s.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((Tok::Num(s.parse().unwrap()), i + 1));
            }
            '+' | '-' | '*' | '/' | '^' | '(' | ')' | ',' | '=' | '\'' => {
                chars.next();
                out.push((Tok::Punct(c), i + 1));
            }
            other => {
                return Err(ModelError::Syntax {
                    line: lineno,
                    col: i + 1,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    symtab: &'a HashMap<String, Symbol>,
}

impl<'a> ExprParser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or_else(|| {
            self.toks.last().map(|(_, c)| c + 1).unwrap_or(1)
        })
    }

    fn err(&self, msg: impl Into<String>) -> ModelError {
        ModelError::Syntax { line: self.line, col: self.col(), msg: msg.into() }
    }

    fn parse_sum(&mut self) -> Result<Expr, ModelError> {
        let mut terms = vec![self.parse_prod()?];
        loop {
            match self.peek() {
                Some(Tok::Punct('+')) => {
                    self.pos += 1;
                    terms.push(self.parse_prod()?);
                }
                Some(Tok::Punct('-')) => {
                    self.pos += 1;
                    terms.push(Expr::neg(self.parse_prod()?));
                }
                _ => break,
            }
        }
        Ok(Expr::add(terms))
    }

    fn parse_prod(&mut self) -> Result<Expr, ModelError> {
        let mut acc = self.parse_unary()?;
        loop {
            match self.peek() {
                Some(Tok::Punct('*')) => {
                    self.pos += 1;
                    acc = Expr::mul2(acc, self.parse_unary()?);
                }
                Some(Tok::Punct('/')) => {
                    self.pos += 1;
                    acc = Expr::div(acc, self.parse_unary()?);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn parse_unary(&mut self) -> Result<Expr, ModelError> {
        if matches!(self.peek(), Some(Tok::Punct('-'))) {
            self.pos += 1;
            return Ok(Expr::neg(self.parse_unary()?));
        }
        self.parse_pow()
    }

    fn parse_pow(&mut self) -> Result<Expr, ModelError> {
        let base = self.parse_atom()?;
        if matches!(self.peek(), Some(Tok::Punct('^'))) {
            self.pos += 1;
            let exp = self.parse_unary()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, ModelError> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::num(BigRational::from_integer(n)))
            }
            Some(Tok::Ident(name)) => {
                let sym = self
                    .symtab
                    .get(&name)
                    .cloned()
                    .ok_or(ModelError::UndeclaredSymbol { name: name.clone(), line: self.line })?;
                self.pos += 1;
                Ok(Expr::sym(sym))
            }
            Some(Tok::Punct('(')) => {
                self.pos += 1;
                let e = self.parse_sum()?;
                if !matches!(self.peek(), Some(Tok::Punct(')'))) {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            _ => Err(self.err("expected number, identifier or `(`")),
        }
    }
}

fn parse_expr(
    toks: &[(Tok, usize)],
    line: usize,
    symtab: &HashMap<String, Symbol>,
) -> Result<Expr, ModelError> {
    let mut p = ExprParser { toks, pos: 0, line, symtab };
    let e = p.parse_sum()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing input after expression"));
    }
    Ok(e)
}

fn idents(toks: &[(Tok, usize)], line: usize) -> Result<Vec<String>, ModelError> {
    let mut out = Vec::new();
    let mut want_ident = true;
    for (t, col) in toks {
        match (t, want_ident) {
            (Tok::Ident(s), true) => {
                out.push(s.clone());
                want_ident = false;
            }
            (Tok::Punct(','), false) => want_ident = true,
            _ => {
                return Err(ModelError::Syntax {
                    line,
                    col: *col,
                    msg: "expected comma-separated identifier list".into(),
                })
            }
        }
    }
    if out.is_empty() || want_ident {
        return Err(ModelError::Syntax { line, col: 1, msg: "empty identifier list".into() });
    }
    Ok(out)
}

/// Parses DSL source into a validated model.
pub fn parse_model(text: &str) -> Result<OdeModel, ModelError> {
    let mut name = String::new();
    let mut states: Vec<Symbol> = Vec::new();
    let mut params: Vec<Symbol> = Vec::new();
    let mut inputs: Vec<InputSpec> = Vec::new();
    let mut known: BTreeMap<Symbol, BigRational> = BTreeMap::new();
    let mut symtab: HashMap<String, Symbol> = HashMap::new();

    struct Deferred {
        line: usize,
        toks: Vec<(Tok, usize)>,
        kind: DeferredKind,
    }
    enum DeferredKind {
        Output,
        Ode(String),
    }
    let mut deferred: Vec<Deferred> = Vec::new();

    let declare = |sym: Symbol, symtab: &mut HashMap<String, Symbol>, line: usize| {
        if symtab.contains_key(sym.name()) {
            Err(ModelError::DuplicateDeclaration { name: sym.name().to_string(), line })
        } else {
            symtab.insert(sym.name().to_string(), sym);
            Ok(())
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = tokenize(raw, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let head = match &toks[0].0 {
            Tok::Ident(s) => s.clone(),
            _ => {
                return Err(ModelError::Syntax {
                    line: lineno,
                    col: toks[0].1,
                    msg: "expected directive".into(),
                })
            }
        };
        let rest = &toks[1..];
        match head.as_str() {
            "model" => match rest {
                [(Tok::Ident(n), _)] => name = n.clone(),
                _ => {
                    return Err(ModelError::Syntax {
                        line: lineno,
                        col: 1,
                        msg: "expected `model <name>`".into(),
                    })
                }
            },
            "states" => {
                for n in idents(rest, lineno)? {
                    let s = Symbol::state(&n);
                    declare(s.clone(), &mut symtab, lineno)?;
                    states.push(s);
                }
            }
            "params" => {
                for n in idents(rest, lineno)? {
                    let s = Symbol::param(&n);
                    declare(s.clone(), &mut symtab, lineno)?;
                    params.push(s);
                }
            }
            "inputs" => {
                for n in idents(rest, lineno)? {
                    let s = Symbol::input(&n);
                    declare(s.clone(), &mut symtab, lineno)?;
                    inputs.push(InputSpec { symbol: s, derivative_class: DerivativeClass::Unbounded });
                }
            }
            "known" => {
                // known <name> = <int> [/ <int>]
                let parsed: Option<(String, BigRational)> = match rest {
                    [(Tok::Ident(n), _), (Tok::Punct('='), _), value @ ..] => {
                        let v = parse_rational(value);
                        v.map(|v| (n.clone(), v))
                    }
                    _ => None,
                };
                match parsed {
                    Some((n, v)) => {
                        let s = Symbol::param(&n);
                        declare(s.clone(), &mut symtab, lineno)?;
                        known.insert(s, v);
                    }
                    None => {
                        return Err(ModelError::Syntax {
                            line: lineno,
                            col: 1,
                            msg: "expected `known <name> = <rational>`".into(),
                        })
                    }
                }
            }
            "input_class" => match rest {
                [(Tok::Ident(n), _), (Tok::Ident(kw), _), (Tok::Num(k), _)]
                    if kw == "zero_above" =>
                {
                    let spec = inputs
                        .iter_mut()
                        .find(|i| i.symbol.name() == n.as_str())
                        .ok_or(ModelError::UndeclaredSymbol { name: n.clone(), line: lineno })?;
                    spec.derivative_class = DerivativeClass::ZeroAbove(
                        u32::try_from(k.clone()).map_err(|_| ModelError::Syntax {
                            line: lineno,
                            col: 1,
                            msg: "derivative order out of range".into(),
                        })?,
                    );
                }
                _ => {
                    return Err(ModelError::Syntax {
                        line: lineno,
                        col: 1,
                        msg: "expected `input_class <input> zero_above <k>`".into(),
                    })
                }
            },
            "output" => deferred.push(Deferred {
                line: lineno,
                toks: rest.to_vec(),
                kind: DeferredKind::Output,
            }),
            "ode" => {
                // ode <state> ' = <expr>
                match rest {
                    [(Tok::Ident(s), _), (Tok::Punct('\''), _), (Tok::Punct('='), _), expr @ ..] => {
                        deferred.push(Deferred {
                            line: lineno,
                            toks: expr.to_vec(),
                            kind: DeferredKind::Ode(s.clone()),
                        });
                    }
                    _ => {
                        return Err(ModelError::Syntax {
                            line: lineno,
                            col: 1,
                            msg: "expected `ode <state>' = <expr>`".into(),
                        })
                    }
                }
            }
            other => {
                return Err(ModelError::Syntax {
                    line: lineno,
                    col: toks[0].1,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        }
    }

    let mut outputs = Vec::new();
    let mut odes: HashMap<String, (Expr, usize)> = HashMap::new();
    for d in &deferred {
        match &d.kind {
            DeferredKind::Output => outputs.push(parse_expr(&d.toks, d.line, &symtab)?),
            DeferredKind::Ode(state) => {
                match symtab.get(state) {
                    Some(s) if s.kind() == SymbolKind::State => {}
                    _ => {
                        return Err(ModelError::UndeclaredSymbol { name: state.clone(), line: d.line })
                    }
                }
                let e = parse_expr(&d.toks, d.line, &symtab)?;
                if odes.insert(state.clone(), (e, d.line)).is_some() {
                    return Err(ModelError::DuplicateDeclaration { name: state.clone(), line: d.line });
                }
            }
        }
    }
    if outputs.is_empty() {
        return Err(ModelError::Syntax {
            line: text.lines().count(),
            col: 1,
            msg: "model declares no output".into(),
        });
    }
    if odes.len() != states.len() {
        return Err(ModelError::ArityMismatch { states: states.len(), odes: odes.len() });
    }
    let mut dynamics = Vec::with_capacity(states.len());
    for s in &states {
        match odes.remove(s.name()) {
            Some((e, _)) => dynamics.push(e),
            None => return Err(ModelError::ArityMismatch { states: states.len(), odes: dynamics.len() }),
        }
    }

    let m = OdeModel { name, states, params, inputs, known_constants: known, dynamics, outputs };
    m.validate()?;
    Ok(m)
}

fn parse_rational(toks: &[(Tok, usize)]) -> Option<BigRational> {
    match toks {
        [(Tok::Num(n), _)] => Some(BigRational::from_integer(n.clone())),
        [(Tok::Punct('-'), _), (Tok::Num(n), _)] => Some(BigRational::from_integer(-n.clone())),
        [(Tok::Num(p), _), (Tok::Punct('/'), _), (Tok::Num(q), _)] if !q.is_zero() => {
            Some(BigRational::new(p.clone(), q.clone()))
        }
        [(Tok::Punct('-'), _), (Tok::Num(p), _), (Tok::Punct('/'), _), (Tok::Num(q), _)]
            if !q.is_zero() =>
        {
            Some(BigRational::new(-p.clone(), q.clone()))
        }
        _ => None,
    }
}
