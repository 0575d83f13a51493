//! Philip Hall basis of the free Lie algebra on a set of generator fields,
//! used to enumerate independent formal brackets for the accessibility and
//! controllability tests.

use super::{lie_bracket_cached, VectorField};
use crate::symexpr::{DiffCache, SymError};

/// A node of a formal bracket. Pairs reference earlier elements of the same
/// `HallBasis` by index, so shared subtrees are evaluated once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketNode {
    /// Generator index: 0 is the drift f, i ≥ 1 the control field g_i.
    Leaf(usize),
    Pair(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalBracket {
    pub node: BracketNode,
    /// Leaf counts per generator: degrees[0] = δ0, degrees[i] = δ_i.
    pub degrees: Vec<usize>,
    pub total_degree: usize,
}

#[derive(Debug, Clone)]
pub struct HallBasis {
    pub n_fields: usize,
    pub elements: Vec<FormalBracket>,
}

impl HallBasis {
    /// Degrees recomputed from the tree; must always equal the stored values.
    pub fn recompute_degrees(&self, id: usize) -> Vec<usize> {
        match self.elements[id].node {
            BracketNode::Leaf(g) => {
                let mut d = vec![0; self.n_fields];
                d[g] = 1;
                d
            }
            BracketNode::Pair(l, r) => {
                let dl = self.recompute_degrees(l);
                let dr = self.recompute_degrees(r);
                dl.iter().zip(&dr).map(|(a, b)| a + b).collect()
            }
        }
    }

    /// Evaluates element `id` over concrete fields, memoizing subtrees within
    /// this call context.
    pub fn evaluate(
        &self,
        id: usize,
        fields: &[VectorField],
        memo: &mut Vec<Option<VectorField>>,
        cache: &mut DiffCache,
    ) -> Result<VectorField, SymError> {
        memo.resize(self.elements.len(), None);
        if let Some(v) = &memo[id] {
            return Ok(v.clone());
        }
        let v = match self.elements[id].node {
            BracketNode::Leaf(g) => fields[g].clone(),
            BracketNode::Pair(l, r) => {
                let fl = self.evaluate(l, fields, memo, cache)?;
                let fr = self.evaluate(r, fields, memo, cache)?;
                lie_bracket_cached(&fl, &fr, cache)?
            }
        };
        memo[id] = Some(v.clone());
        Ok(v)
    }
}

/// Enumerates a Philip Hall basis on `n_fields` generators up to
/// `max_total_degree`. Elements are ordered by (total degree, creation
/// order); a pair [x, y] is kept when x < y and, if y = [u, v], u ≤ x.
pub fn enumerate_brackets(n_fields: usize, max_total_degree: usize) -> HallBasis {
    assert!(max_total_degree >= 1);
    let mut basis = HallBasis { n_fields, elements: Vec::new() };
    for g in 0..n_fields {
        let mut degrees = vec![0; n_fields];
        degrees[g] = 1;
        basis.elements.push(FormalBracket { node: BracketNode::Leaf(g), degrees, total_degree: 1 });
    }
    for degree in 2..=max_total_degree {
        // element ids are already sorted by degree; x < y holds iff x's id is
        // smaller (ties within a degree broken by creation order)
        let upper = basis.elements.len();
        for x in 0..upper {
            let dx = basis.elements[x].total_degree;
            if dx >= degree {
                break;
            }
            for y in (x + 1)..upper {
                if basis.elements[y].total_degree != degree - dx {
                    continue;
                }
                let ok = match basis.elements[y].node {
                    BracketNode::Leaf(_) => true,
                    BracketNode::Pair(u, _) => u <= x,
                };
                if !ok {
                    continue;
                }
                let degrees: Vec<usize> = basis.elements[x]
                    .degrees
                    .iter()
                    .zip(&basis.elements[y].degrees)
                    .map(|(a, b)| a + b)
                    .collect();
                basis.elements.push(FormalBracket {
                    node: BracketNode::Pair(x, y),
                    degrees,
                    total_degree: degree,
                });
            }
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{Expr, Symbol};

    #[test]
    fn two_generators_degree_two() {
        let b = enumerate_brackets(2, 2);
        assert_eq!(b.elements.len(), 3);
        assert_eq!(b.elements[2].node, BracketNode::Pair(0, 1));
        assert_eq!(b.elements[2].degrees, vec![1, 1]);
    }

    #[test]
    fn dimensions_match_witt_formula() {
        // free Lie algebra on 2 generators: dims 2, 1, 2, 3, 6 at degrees 1..5
        let b = enumerate_brackets(2, 5);
        let mut by_degree = vec![0usize; 6];
        for e in &b.elements {
            by_degree[e.total_degree] += 1;
        }
        assert_eq!(&by_degree[1..], &[2, 1, 2, 3, 6]);
    }

    #[test]
    fn stored_degrees_match_recomputed() {
        let b = enumerate_brackets(3, 4);
        for id in 0..b.elements.len() {
            assert_eq!(b.recompute_degrees(id), b.elements[id].degrees);
        }
    }

    #[test]
    fn brockett_integrator_bracket() {
        // g1 = (1, 0, 0), g2 = (0, 1, x1): [g1, g2] = (0, 0, 1)
        let states = vec![Symbol::state("x1"), Symbol::state("x2"), Symbol::state("x3")];
        let g1 = VectorField::new(states.clone(), vec![Expr::one(), Expr::zero(), Expr::zero()]);
        let g2 = VectorField::new(
            states.clone(),
            vec![Expr::zero(), Expr::one(), Expr::sym(Symbol::state("x1"))],
        );
        let b = enumerate_brackets(2, 2);
        let mut memo = Vec::new();
        let mut cache = DiffCache::new();
        let v = b.evaluate(2, &[g1.clone(), g2], &mut memo, &mut cache).unwrap();
        assert_eq!(v.components, vec![Expr::zero(), Expr::zero(), Expr::one()]);
        // leaves evaluate to the fields themselves; [g1, g1] is zero
        let leaf = b.evaluate(0, &[g1.clone(), g1.clone()], &mut memo, &mut cache).unwrap();
        assert_eq!(leaf, g1);
    }
}
