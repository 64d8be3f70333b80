//! Conflict graphs and vertex-set primitives.
//!
//! The central object is the even toric grid: vertices `(x, y)` on
//! `Z_L x Z_L` with nearest-neighbour conflict edges and vertex id
//! `x + y * L`. For even `L` the graph is bipartite; the parity classes
//! (`x + y` even resp. odd) are the two maximum independent sets, called
//! the dominant sets. Arbitrary symmetric conflict graphs are accepted
//! for simulation; torus-specific operations refuse them explicitly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VertexId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("torus side must be even, got {0}")]
    SideOdd(usize),
    #[error("torus side must be at least 4, got {0}")]
    SideTooSmall(usize),
    #[error("adjacency references vertex {v} but the graph has {n} vertices")]
    VertexOutOfRange { v: usize, n: usize },
    #[error("vertex {0} has a self-loop; conflict graphs are irreflexive")]
    SelfLoop(usize),
    #[error("adjacency is not symmetric: {u} lists {v} but not vice versa")]
    Asymmetric { u: usize, v: usize },
    #[error("operation requires a toric grid, got a general graph")]
    NotATorus,
    #[error("malformed graph JSON: {0}")]
    BadJson(String),
}

/// Vertex parity on the torus: `Even` iff `x + y` is even.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Torus { side: usize },
    General,
}

// ======================================================================
// VertexSet: fixed-width bitset over the vertices of one graph
// ======================================================================

/// A subset of the vertices of a fixed graph, stored as a bitset.
///
/// The width is fixed at construction; set algebra across different
/// widths is a programming error and panics.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VertexSet {
    width: usize,
    blocks: Vec<u64>,
}

impl VertexSet {
    pub fn empty(width: usize) -> Self {
        let nb = width.div_ceil(64).max(1);
        VertexSet { width, blocks: vec![0; nb] }
    }

    pub fn full(width: usize) -> Self {
        let mut s = Self::empty(width);
        for b in 0..s.blocks.len() {
            s.blocks[b] = !0u64;
        }
        s.clear_tail();
        s
    }

    pub fn from_members<I: IntoIterator<Item = VertexId>>(width: usize, members: I) -> Self {
        let mut s = Self::empty(width);
        for v in members {
            s.insert(v);
        }
        s
    }

    /// Reconstructs a set from the low 64 bits; only valid for width <= 64.
    pub fn from_bits64(width: usize, bits: u64) -> Self {
        assert!(width <= 64, "from_bits64 requires width <= 64");
        let mut s = Self::empty(width);
        s.blocks[0] = bits;
        s.clear_tail();
        s
    }

    fn clear_tail(&mut self) {
        let tail = self.width % 64;
        if tail != 0 {
            let last = self.blocks.len() - 1;
            self.blocks[last] &= (1u64 << tail) - 1;
        }
        if self.width == 0 {
            self.blocks[0] = 0;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn insert(&mut self, v: VertexId) {
        assert!(v < self.width, "vertex {v} out of range {}", self.width);
        self.blocks[v / 64] |= 1u64 << (v % 64);
    }

    pub fn remove(&mut self, v: VertexId) {
        assert!(v < self.width, "vertex {v} out of range {}", self.width);
        self.blocks[v / 64] &= !(1u64 << (v % 64));
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v < self.width && (self.blocks[v / 64] >> (v % 64)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(|&b| b == 0)
    }

    fn zip_assert(&self, other: &VertexSet) {
        assert_eq!(self.width, other.width, "vertex sets of different graphs");
    }

    pub fn union(&self, other: &VertexSet) -> VertexSet {
        self.zip_assert(other);
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a | b).collect();
        VertexSet { width: self.width, blocks }
    }

    pub fn intersection(&self, other: &VertexSet) -> VertexSet {
        self.zip_assert(other);
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a & b).collect();
        VertexSet { width: self.width, blocks }
    }

    pub fn difference(&self, other: &VertexSet) -> VertexSet {
        self.zip_assert(other);
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a & !b).collect();
        VertexSet { width: self.width, blocks }
    }

    pub fn symmetric_difference(&self, other: &VertexSet) -> VertexSet {
        self.zip_assert(other);
        let blocks = self.blocks.iter().zip(&other.blocks).map(|(a, b)| a ^ b).collect();
        VertexSet { width: self.width, blocks }
    }

    pub fn complement(&self) -> VertexSet {
        let mut s = VertexSet {
            width: self.width,
            blocks: self.blocks.iter().map(|b| !b).collect(),
        };
        s.clear_tail();
        s
    }

    pub fn is_subset_of(&self, other: &VertexSet) -> bool {
        self.zip_assert(other);
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint_from(&self, other: &VertexSet) -> bool {
        self.zip_assert(other);
        self.blocks.iter().zip(&other.blocks).all(|(a, b)| a & b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.blocks.iter().enumerate().flat_map(move |(bi, &b)| {
            let mut bits = b;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(bi * 64 + tz)
            })
        })
    }

    /// Low 64 bits of the set; only valid for width <= 64.
    pub fn to_bits64(&self) -> u64 {
        assert!(self.width <= 64, "to_bits64 requires width <= 64");
        self.blocks[0]
    }

    /// Fixed-width little-endian hex encoding, used by the state-space dump.
    pub fn to_hex(&self) -> String {
        let nibbles = self.width.div_ceil(4).max(1);
        let mut out = String::with_capacity(2 + nibbles);
        out.push_str("0x");
        for i in (0..nibbles).rev() {
            let nib = (self.blocks[i / 16] >> (4 * (i % 16))) & 0xf;
            out.push(char::from_digit(nib as u32, 16).unwrap());
        }
        out
    }

    pub fn from_hex(width: usize, hex: &str) -> Option<VertexSet> {
        let digits = hex.strip_prefix("0x")?;
        let mut s = Self::empty(width);
        for (i, c) in digits.chars().rev().enumerate() {
            let nib = c.to_digit(16)? as u64;
            if i / 16 >= s.blocks.len() {
                if nib != 0 {
                    return None;
                }
                continue;
            }
            s.blocks[i / 16] |= nib << (4 * (i % 16));
        }
        let mut check = s.clone();
        check.clear_tail();
        if check != s {
            return None; // bits beyond the width
        }
        Some(s)
    }
}

impl std::fmt::Debug for VertexSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VertexSet({}, {{", self.width)?;
        for (k, v) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}})")
    }
}

// ======================================================================
// ConflictGraph
// ======================================================================

/// Inner and outer vertex boundaries of a set together with its edge cut.
#[derive(Clone, Debug)]
pub struct Boundary {
    /// Members of the set with at least one neighbour outside it.
    pub inner: VertexSet,
    /// Non-members with at least one neighbour inside.
    pub outer: VertexSet,
    /// Edges `(u, v)` with `u` inside and `v` outside.
    pub edge_cut: Vec<(VertexId, VertexId)>,
}

#[derive(Clone, Debug)]
pub struct ConflictGraph {
    kind: GraphKind,
    adjacency: Vec<Vec<VertexId>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GraphJson {
    Torus {
        #[serde(rename = "L")]
        side: usize,
    },
    General {
        adjacency: Vec<Vec<usize>>,
    },
}

impl ConflictGraph {
    /// Builds the `side x side` toric grid. The side must be even (so the
    /// parity classes are well defined across the wrap-around) and at
    /// least 4 (smaller even tori degenerate to multigraphs).
    pub fn torus(side: usize) -> Result<ConflictGraph, TopologyError> {
        if side % 2 != 0 {
            return Err(TopologyError::SideOdd(side));
        }
        if side < 4 {
            return Err(TopologyError::SideTooSmall(side));
        }
        let n = side * side;
        let mut adjacency = vec![Vec::with_capacity(4); n];
        for y in 0..side {
            for x in 0..side {
                let v = x + y * side;
                let mut nbrs = [
                    (x + 1) % side + y * side,
                    (x + side - 1) % side + y * side,
                    x + ((y + 1) % side) * side,
                    x + ((y + side - 1) % side) * side,
                ];
                nbrs.sort_unstable();
                adjacency[v] = nbrs.to_vec();
            }
        }
        Ok(ConflictGraph { kind: GraphKind::Torus { side }, adjacency })
    }

    /// Wraps an arbitrary adjacency list, validating symmetry and
    /// irreflexivity. Neighbour lists are sorted and deduplicated.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>) -> Result<ConflictGraph, TopologyError> {
        let n = adjacency.len();
        let mut adj: Vec<Vec<usize>> = Vec::with_capacity(n);
        for (u, nbrs) in adjacency.iter().enumerate() {
            let mut list = nbrs.clone();
            list.sort_unstable();
            list.dedup();
            for &v in &list {
                if v >= n {
                    return Err(TopologyError::VertexOutOfRange { v, n });
                }
                if v == u {
                    return Err(TopologyError::SelfLoop(u));
                }
            }
            adj.push(list);
        }
        for u in 0..n {
            for &v in &adj[u] {
                if adj[v].binary_search(&u).is_err() {
                    return Err(TopologyError::Asymmetric { u, v });
                }
            }
        }
        Ok(ConflictGraph { kind: GraphKind::General, adjacency: adj })
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.adjacency[v]
    }

    /// Edges as ordered pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    pub fn side(&self) -> Option<usize> {
        match self.kind {
            GraphKind::Torus { side } => Some(side),
            GraphKind::General => None,
        }
    }

    pub fn vertex_id(&self, x: usize, y: usize) -> Option<VertexId> {
        let side = self.side()?;
        Some((x % side) + (y % side) * side)
    }

    pub fn coords(&self, v: VertexId) -> Option<(usize, usize)> {
        let side = self.side()?;
        Some((v % side, v / side))
    }

    pub fn parity(&self, v: VertexId) -> Option<Parity> {
        let (x, y) = self.coords(v)?;
        Some(if (x + y) % 2 == 0 { Parity::Even } else { Parity::Odd })
    }

    /// All vertices of one parity class (torus only).
    pub fn parity_class(&self, parity: Parity) -> Result<VertexSet, TopologyError> {
        if self.side().is_none() {
            return Err(TopologyError::NotATorus);
        }
        let mut s = VertexSet::empty(self.n_vertices());
        for v in 0..self.n_vertices() {
            if self.parity(v) == Some(parity) {
                s.insert(v);
            }
        }
        Ok(s)
    }

    /// The two dominant states `(E, O)`: the parity classes, which are the
    /// unique maximum independent sets of the even torus.
    pub fn dominant_sets(&self) -> Result<(VertexSet, VertexSet), TopologyError> {
        Ok((self.parity_class(Parity::Even)?, self.parity_class(Parity::Odd)?))
    }

    /// Inner/outer vertex boundaries and the edge cut of `s`.
    pub fn boundary(&self, s: &VertexSet) -> Boundary {
        assert_eq!(s.width(), self.n_vertices(), "set belongs to another graph");
        let n = self.n_vertices();
        let mut inner = VertexSet::empty(n);
        let mut outer = VertexSet::empty(n);
        let mut edge_cut = Vec::new();
        for u in s.iter() {
            for &v in self.neighbors(u) {
                if !s.contains(v) {
                    inner.insert(u);
                    outer.insert(v);
                    edge_cut.push((u, v));
                }
            }
        }
        edge_cut.sort_unstable();
        Boundary { inner, outer, edge_cut }
    }

    pub fn to_json(&self) -> String {
        let doc = match self.kind {
            GraphKind::Torus { side } => GraphJson::Torus { side },
            GraphKind::General => GraphJson::General { adjacency: self.adjacency.clone() },
        };
        serde_json::to_string(&doc).expect("graph serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<ConflictGraph, TopologyError> {
        let doc: GraphJson =
            serde_json::from_str(json).map_err(|e| TopologyError::BadJson(e.to_string()))?;
        match doc {
            GraphJson::Torus { side } => ConflictGraph::torus(side),
            GraphJson::General { adjacency } => ConflictGraph::from_adjacency(adjacency),
        }
    }
}
