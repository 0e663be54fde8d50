//! Dependency graphs over framed positions and their relation-matrix encoding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::vocab::{word_position, ROOT_POSITION};

/// Heads and labels for the words of one sentence. Entry `k` describes the
/// word at framed position `k + 2`; heads are framed positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DepGraph {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    None,
    HeadToDep,
    DepToHead,
}

/// Relation id for `label` seen from one endpoint. 0 is NONE.
pub fn relation_id(label: usize, direction: Direction, num_labels: usize) -> Result<u16> {
    if direction == Direction::None {
        return Ok(0);
    }
    if label >= num_labels {
        return Err(Error::Graph(format!("label {label} outside [0, {num_labels})")));
    }
    let id = match direction {
        Direction::HeadToDep => label + 1,
        Direction::DepToHead => label + 1 + num_labels,
        Direction::None => unreachable!(),
    };
    u16::try_from(id).map_err(|_| Error::Graph(format!("relation id {id} does not fit in 16 bits")))
}

/// Row-major `size × size` relation ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    pub size: usize,
    pub ids: Arc<[u16]>,
}

impl RelationMatrix {
    pub fn empty(size: usize) -> Self {
        RelationMatrix {
            size,
            ids: vec![0u16; size * size].into(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.ids[i * self.size + j]
    }

    pub fn nonzero(&self) -> usize {
        self.ids.iter().filter(|&&r| r != 0).count()
    }
}

/// Encode `g` for a framed sentence of `size` positions. Where a 2-cycle puts
/// two edges on the same pair, the head→dep reading wins.
pub fn graph_to_relation_matrix(g: &DepGraph, size: usize, num_labels: usize) -> Result<RelationMatrix> {
    if g.heads.len() + 3 != size {
        return Err(Error::Graph(format!("graph of {} words framed as {size} positions", g.heads.len())));
    }
    let mut ids = vec![0u16; size * size];
    for (k, (&h, &l)) in g.heads.iter().zip(&g.labels).enumerate() {
        let j = word_position(k);
        ids[j * size + h] = relation_id(l, Direction::DepToHead, num_labels)?;
    }
    for (k, (&h, &l)) in g.heads.iter().zip(&g.labels).enumerate() {
        let j = word_position(k);
        ids[h * size + j] = relation_id(l, Direction::HeadToDep, num_labels)?;
    }
    Ok(RelationMatrix { size, ids: ids.into() })
}

impl DepGraph {
    pub fn new(heads: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        let g = DepGraph { heads, labels };
        g.validate()?;
        Ok(g)
    }

    /// Build from 0-based raw heads (0 = root).
    pub fn from_raw(heads: &[usize], labels: Vec<usize>) -> Result<Self> {
        DepGraph::new(heads.iter().map(|&h| h + 1).collect(), labels)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn raw_heads(&self) -> Vec<usize> {
        self.heads.iter().map(|&h| h - 1).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.heads.len();
        if self.labels.len() != n {
            return Err(Error::Graph(format!("{n} heads but {} labels", self.labels.len())));
        }
        if let Some((k, &h)) = self.heads.iter().enumerate().find(|(_, &h)| h < ROOT_POSITION || h > n + 1) {
            return Err(Error::Graph(format!("word {k} has head {h} outside [1, {}]", n + 1)));
        }
        if let Some(k) = (0..n).find(|&k| self.heads[k] == word_position(k)) {
            return Err(Error::Graph(format!("word {k} is its own head")));
        }
        Ok(())
    }

    pub fn root_children(&self) -> usize {
        self.heads.iter().filter(|&&h| h == ROOT_POSITION).count()
    }

    /// True iff some word's head chain never reaches ROOT.
    pub fn has_cycle(&self) -> bool {
        const UNKNOWN: u8 = 0;
        const ON_PATH: u8 = 1;
        const ROOTED: u8 = 2;
        let n = self.heads.len();
        let mut state = vec![UNKNOWN; n];
        let mut path = Vec::new();
        for start in 0..n {
            let mut k = start;
            loop {
                match state[k] {
                    ROOTED => break,
                    ON_PATH => return true,
                    _ => {}
                }
                state[k] = ON_PATH;
                path.push(k);
                let h = self.heads[k];
                if h == ROOT_POSITION {
                    break;
                }
                k = h - 2;
            }
            for k in path.drain(..) {
                state[k] = ROOTED;
            }
        }
        false
    }

    /// Projectivity with ROOT placed before the first word: every arc's head
    /// must dominate all words strictly between its endpoints.
    pub fn is_projective(&self) -> Result<bool> {
        if self.has_cycle() {
            return Err(Error::Graph("projectivity is undefined for a cyclic graph".into()));
        }
        let dominates = |h: usize, mut w: usize| {
            while w != ROOT_POSITION {
                if w == h {
                    return true;
                }
                w = self.heads[w - 2];
            }
            h == ROOT_POSITION
        };
        for (k, &h) in self.heads.iter().enumerate() {
            let d = word_position(k);
            let (lo, hi) = if h < d { (h, d) } else { (d, h) };
            if !(lo + 1..hi).all(|w| dominates(h, w)) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Index of the first word whose head or label differs.
pub fn first_difference(a: &DepGraph, b: &DepGraph) -> Result<Option<usize>> {
    if a.len() != b.len() {
        return Err(Error::Graph(format!("comparing graphs of {} and {} words", a.len(), b.len())));
    }
    Ok((0..a.len()).find(|&k| a.heads[k] != b.heads[k] || a.labels[k] != b.labels[k]))
}

pub fn graph_equal(a: &DepGraph, b: &DepGraph) -> Result<bool> {
    Ok(first_difference(a, b)?.is_none())
}

/// Number of words whose head or label differs.
pub fn changed_edges(a: &DepGraph, b: &DepGraph) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Graph(format!("comparing graphs of {} and {} words", a.len(), b.len())));
    }
    Ok((0..a.len())
        .filter(|&k| a.heads[k] != b.heads[k] || a.labels[k] != b.labels[k])
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_ids() {
        assert_eq!(relation_id(1, Direction::HeadToDep, 3).unwrap(), 2);
        assert_eq!(relation_id(1, Direction::DepToHead, 3).unwrap(), 5);
        assert_eq!(relation_id(7, Direction::None, 3).unwrap(), 0);
        assert!(relation_id(3, Direction::HeadToDep, 3).is_err());
    }

    #[test]
    fn single_root_edge() {
        // One word at position 2 attached to ROOT at position 1.
        let g = DepGraph::new(vec![1], vec![0]).unwrap();
        let r = graph_to_relation_matrix(&g, 4, 2).unwrap();
        assert_eq!(r.get(1, 2), 1);
        assert_eq!(r.get(2, 1), 3);
        assert_eq!(r.nonzero(), 2);
    }

    #[test]
    fn cycles() {
        // ROOT -> a -> b
        assert!(!DepGraph::new(vec![1, 2], vec![0, 0]).unwrap().has_cycle());
        // a <-> b
        assert!(DepGraph::new(vec![3, 2], vec![0, 0]).unwrap().has_cycle());
        // self loops are not graphs at all
        assert!(DepGraph::new(vec![2], vec![0]).is_err());
    }

    #[test]
    fn projectivity() {
        // Left-branching chain: each word headed by its right neighbour.
        let chain = DepGraph::from_raw(&[2, 3, 4, 0], vec![0; 4]).unwrap();
        assert!(chain.is_projective().unwrap());
        // Arcs 1->4 and 2->5 cross.
        let crossing = DepGraph::from_raw(&[0, 1, 1, 1, 2], vec![0; 5]).unwrap();
        assert!(!crossing.is_projective().unwrap());
        let cyclic = DepGraph::new(vec![3, 2], vec![0, 0]).unwrap();
        assert!(cyclic.is_projective().is_err());
    }

    #[test]
    fn differences() {
        let a = DepGraph::new(vec![1, 2], vec![0, 1]).unwrap();
        let mut b = a.clone();
        assert!(graph_equal(&a, &b).unwrap());
        b.labels[1] = 0;
        assert_eq!(first_difference(&a, &b).unwrap(), Some(1));
        assert_eq!(changed_edges(&a, &b).unwrap(), 1);
        let c = DepGraph::new(vec![1], vec![0]).unwrap();
        assert!(graph_equal(&a, &c).is_err());
    }
}
