//! The hard-core configuration space and its stationary law.
//!
//! A configuration is an independent set of the conflict graph: an active
//! node blocks all its neighbours. For a graph within the enumeration cap
//! the full space is materialized with deterministic state ids (states
//! sorted by their bit pattern), and single-flip adjacency is derived on
//! demand by bit manipulation. The stationary law of the activity process
//! is the product form `pi(I) proportional to prod_{i in I} sigma_i`,
//! handled in log space throughout so that large `sigma` stays exact.

use crate::topology::{ConflictGraph, GraphKind, VertexId, VertexSet};
use serde::Serialize;
use thiserror::Error;

/// Default cap on the number of vertices accepted for exact enumeration.
pub const DEFAULT_ENUM_CAP: usize = 36;

/// Hard representation limit for enumeration: states are stored as `u64`
/// bit patterns.
pub const MAX_ENUM_VERTICES: usize = 64;

pub type StateId = u32;

fn fmt_estimate(estimate: &Option<f64>) -> String {
    match estimate {
        Some(e) => format!(" (roughly {e:.3e} independent sets)"),
        None => String::new(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateSpaceError {
    #[error("graph has {n_vertices} vertices, over the enumeration cap {cap}{}", fmt_estimate(.estimate))]
    CapExceeded { n_vertices: usize, cap: usize, estimate: Option<f64> },
    #[error("enumeration cap {0} exceeds the {MAX_ENUM_VERTICES}-bit state representation")]
    CapBeyondRepresentation(usize),
    #[error("occupied set contains the conflict edge ({u}, {v})")]
    NotIndependent { u: VertexId, v: VertexId },
    #[error("activity parameter must be positive and finite, got {0}")]
    BadActivity(f64),
    #[error("expected {want} per-vertex activity parameters, got {got}")]
    WrongActivityCount { got: usize, want: usize },
    #[error("operation requires a toric grid, got a general graph")]
    NotATorus,
    #[error("law was built for a space with {law} states, used with {space}")]
    LawSpaceMismatch { law: usize, space: usize },
}

/// An independent set of a fixed conflict graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    occupied: VertexSet,
}

impl Configuration {
    /// Validates independence against the graph.
    pub fn new(graph: &ConflictGraph, occupied: VertexSet) -> Result<Self, StateSpaceError> {
        assert_eq!(occupied.width(), graph.n_vertices(), "set belongs to another graph");
        if let Some((u, v)) = first_conflict(graph, &occupied) {
            return Err(StateSpaceError::NotIndependent { u, v });
        }
        Ok(Configuration { occupied })
    }

    pub fn occupied(&self) -> &VertexSet {
        &self.occupied
    }

    pub fn n_active(&self) -> usize {
        self.occupied.len()
    }

    /// Efficiency gap `Delta(I) = L^2/2 - |I|`: the number of active nodes
    /// short of a dominant state.
    pub fn efficiency_gap(&self, side: usize) -> usize {
        debug_assert_eq!(self.occupied.width(), side * side);
        side * side / 2 - self.n_active()
    }
}

fn first_conflict(graph: &ConflictGraph, s: &VertexSet) -> Option<(VertexId, VertexId)> {
    for u in s.iter() {
        for &v in graph.neighbors(u) {
            if v > u && s.contains(v) {
                return Some((u, v));
            }
        }
    }
    None
}

pub fn is_independent(graph: &ConflictGraph, s: &VertexSet) -> bool {
    first_conflict(graph, s).is_none()
}

// ======================================================================
// StateSpace
// ======================================================================

/// The set of all independent sets of a graph, with deterministic ids.
///
/// Ids are ranks in the ascending order of the `u64` occupation patterns;
/// state 0 is always the empty configuration. Single-flip neighbours
/// (one activation or one deactivation) are generated on demand.
#[derive(Clone, Debug)]
pub struct StateSpace {
    graph: ConflictGraph,
    states: Vec<u64>,
    neighbor_masks: Vec<u64>,
    width_mask: u64,
}

impl StateSpace {
    pub fn enumerate(graph: &ConflictGraph) -> Result<StateSpace, StateSpaceError> {
        Self::enumerate_with_cap(graph, DEFAULT_ENUM_CAP)
    }

    pub fn enumerate_with_cap(
        graph: &ConflictGraph,
        cap: usize,
    ) -> Result<StateSpace, StateSpaceError> {
        if cap > MAX_ENUM_VERTICES {
            return Err(StateSpaceError::CapBeyondRepresentation(cap));
        }
        let n = graph.n_vertices();
        if n > cap {
            return Err(StateSpaceError::CapExceeded {
                n_vertices: n,
                cap,
                estimate: state_count_estimate(graph),
            });
        }
        let neighbor_masks: Vec<u64> = (0..n)
            .map(|v| graph.neighbors(v).iter().fold(0u64, |m, &w| m | (1u64 << w)))
            .collect();
        let mut states = Vec::new();
        // Depth-first over vertex ids; a branch includes v only when no
        // chosen earlier vertex blocks it.
        let mut stack: Vec<(usize, u64, u64)> = vec![(0, 0, 0)];
        while let Some((v, acc, blocked)) = stack.pop() {
            if v == n {
                states.push(acc);
                continue;
            }
            if blocked >> v & 1 == 0 {
                stack.push((v + 1, acc | (1u64 << v), blocked | neighbor_masks[v]));
            }
            stack.push((v + 1, acc, blocked));
        }
        states.sort_unstable();
        let width_mask = if n == 64 { !0u64 } else { (1u64 << n) - 1 };
        Ok(StateSpace { graph: graph.clone(), states, neighbor_masks, width_mask })
    }

    pub fn graph(&self) -> &ConflictGraph {
        &self.graph
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    pub fn state_bits(&self, id: StateId) -> u64 {
        self.states[id as usize]
    }

    pub fn state(&self, id: StateId) -> Configuration {
        let occupied = VertexSet::from_bits64(self.n_vertices(), self.states[id as usize]);
        Configuration { occupied }
    }

    pub fn id_of_bits(&self, bits: u64) -> Option<StateId> {
        self.states.binary_search(&bits).ok().map(|i| i as StateId)
    }

    pub fn id_of(&self, s: &VertexSet) -> Option<StateId> {
        self.id_of_bits(s.to_bits64())
    }

    pub fn n_active(&self, id: StateId) -> usize {
        self.states[id as usize].count_ones() as usize
    }

    /// Efficiency gap of a state (torus only).
    pub fn gap(&self, id: StateId) -> Result<usize, StateSpaceError> {
        match self.graph.kind() {
            GraphKind::Torus { .. } => Ok(self.n_vertices() / 2 - self.n_active(id)),
            GraphKind::General => Err(StateSpaceError::NotATorus),
        }
    }

    /// Ids of the dominant states `(E, O)` (torus only).
    pub fn dominant_ids(&self) -> Result<(StateId, StateId), StateSpaceError> {
        let (e, o) = self.graph.dominant_sets().map_err(|_| StateSpaceError::NotATorus)?;
        let eid = self.id_of(&e).expect("dominant state must be enumerated");
        let oid = self.id_of(&o).expect("dominant state must be enumerated");
        Ok((eid, oid))
    }

    /// Union of the neighbour masks of the occupied vertices.
    fn blocked_mask(&self, bits: u64) -> u64 {
        let mut m = bits;
        let mut blocked = 0u64;
        while m != 0 {
            let v = m.trailing_zeros() as usize;
            m &= m - 1;
            blocked |= self.neighbor_masks[v];
        }
        blocked
    }

    /// Calls `f` for every single-flip neighbour of `id`.
    ///
    /// Deactivations always stay inside the space; activations are exactly
    /// the unblocked vacant vertices, so every generated pattern must be
    /// present (the space is flip-closed by construction).
    pub fn for_each_flip_neighbor(&self, id: StateId, mut f: impl FnMut(StateId)) {
        let bits = self.states[id as usize];
        let mut m = bits;
        while m != 0 {
            let v = m.trailing_zeros();
            m &= m - 1;
            let t = bits & !(1u64 << v);
            let j = self.id_of_bits(t).expect("deactivation target must exist");
            f(j);
        }
        let mut free = !bits & !self.blocked_mask(bits) & self.width_mask;
        while free != 0 {
            let v = free.trailing_zeros();
            free &= free - 1;
            let t = bits | (1u64 << v);
            let j = self.id_of_bits(t).expect("activation target must exist");
            f(j);
        }
    }

    pub fn flip_neighbors(&self, id: StateId) -> Vec<StateId> {
        let mut out = Vec::new();
        self.for_each_flip_neighbor(id, |j| out.push(j));
        out
    }

    /// All flip edges as ordered id pairs `(smaller set, larger set)`.
    pub fn flip_edge_pairs(&self) -> Vec<(StateId, StateId)> {
        let mut pairs = Vec::new();
        for id in 0..self.n_states() as StateId {
            let bits = self.states[id as usize];
            let mut m = bits;
            while m != 0 {
                let v = m.trailing_zeros();
                m &= m - 1;
                let sub = self
                    .id_of_bits(bits & !(1u64 << v))
                    .expect("deactivation target must exist");
                pairs.push((sub, id));
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// JSON dump of the space: states as fixed-width hex patterns in id
    /// order plus the flip-edge pairs. Intended for small (`L = 4`)
    /// regression fixtures.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump {
            n_vertices: usize,
            n_states: usize,
            states: Vec<String>,
            flip_edges: Vec<(StateId, StateId)>,
        }
        let n = self.n_vertices();
        let dump = Dump {
            n_vertices: n,
            n_states: self.n_states(),
            states: (0..self.n_states() as StateId)
                .map(|id| VertexSet::from_bits64(n, self.state_bits(id)).to_hex())
                .collect(),
            flip_edges: self.flip_edge_pairs(),
        };
        serde_json::to_string(&dump).expect("state-space serialization cannot fail")
    }
}

/// Rough count of independent sets, used in cap-refusal diagnostics.
/// Exact (in floating point) for tori via the transfer matrix over row
/// patterns; `None` for general graphs.
fn state_count_estimate(graph: &ConflictGraph) -> Option<f64> {
    let side = graph.side()?;
    if side > 20 {
        return None;
    }
    let row_ok = |m: usize| -> bool {
        (0..side).all(|i| {
            let j = (i + 1) % side;
            (m >> i) & 1 == 0 || (m >> j) & 1 == 0
        })
    };
    let rows: Vec<usize> = (0..1usize << side).filter(|&m| row_ok(m)).collect();
    let k = rows.len();
    let compat: Vec<Vec<f64>> = rows
        .iter()
        .map(|&a| rows.iter().map(|&b| if a & b == 0 { 1.0 } else { 0.0 }).collect())
        .collect();
    // trace of T^side
    let mut power: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..side {
        let mut next = vec![vec![0.0; k]; k];
        for i in 0..k {
            for l in 0..k {
                let x = power[i][l];
                if x != 0.0 {
                    for j in 0..k {
                        next[i][j] += x * compat[l][j];
                    }
                }
            }
        }
        power = next;
    }
    Some((0..k).map(|i| power[i][i]).sum())
}

// ======================================================================
// ActivityLaw: the product-form stationary law of the activity process
// ======================================================================

/// Stationary law `pi(I) = Z^{-1} prod_{i in I} sigma_i` over a state
/// space, kept in log space.
#[derive(Clone)]
pub struct ActivityLaw {
    sigmas: Vec<f64>,
    homogeneous: Option<f64>,
    log_probs: Vec<f64>,
    log_z: f64,
}

impl ActivityLaw {
    pub fn homogeneous(space: &StateSpace, sigma: f64) -> Result<ActivityLaw, StateSpaceError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(StateSpaceError::BadActivity(sigma));
        }
        let mut law = Self::build(space, &vec![sigma; space.n_vertices()])?;
        law.homogeneous = Some(sigma);
        Ok(law)
    }

    pub fn heterogeneous(
        space: &StateSpace,
        sigmas: &[f64],
    ) -> Result<ActivityLaw, StateSpaceError> {
        if sigmas.len() != space.n_vertices() {
            return Err(StateSpaceError::WrongActivityCount {
                got: sigmas.len(),
                want: space.n_vertices(),
            });
        }
        Self::build(space, sigmas)
    }

    fn build(space: &StateSpace, sigmas: &[f64]) -> Result<ActivityLaw, StateSpaceError> {
        for &s in sigmas {
            if !(s.is_finite() && s > 0.0) {
                return Err(StateSpaceError::BadActivity(s));
            }
        }
        let log_sigmas: Vec<f64> = sigmas.iter().map(|s| s.ln()).collect();
        let mut log_w: Vec<f64> = Vec::with_capacity(space.n_states());
        for id in 0..space.n_states() {
            let mut bits = space.states[id];
            let mut lw = 0.0;
            while bits != 0 {
                let v = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                lw += log_sigmas[v];
            }
            log_w.push(lw);
        }
        let log_z = log_sum_exp(&log_w);
        for lw in &mut log_w {
            *lw -= log_z;
        }
        Ok(ActivityLaw {
            sigmas: sigmas.to_vec(),
            homogeneous: None,
            log_probs: log_w,
            log_z,
        })
    }

    pub fn n_states(&self) -> usize {
        self.log_probs.len()
    }

    /// The common activity parameter, if the law is homogeneous.
    pub fn sigma(&self) -> Option<f64> {
        self.homogeneous
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn log_prob(&self, id: StateId) -> f64 {
        self.log_probs[id as usize]
    }

    pub fn prob(&self, id: StateId) -> f64 {
        self.log_probs[id as usize].exp()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Total mass; equals 1 up to log-sum-exp rounding.
    pub fn total_mass(&self) -> f64 {
        self.log_probs.iter().map(|lp| lp.exp()).sum()
    }

    /// Combined stationary mass of the two dominant states.
    pub fn dominant_mass(&self, space: &StateSpace) -> Result<f64, StateSpaceError> {
        self.check_space(space)?;
        let (eid, oid) = space.dominant_ids()?;
        Ok(self.prob(eid) + self.prob(oid))
    }

    pub fn check_space(&self, space: &StateSpace) -> Result<(), StateSpaceError> {
        if self.n_states() != space.n_states() {
            return Err(StateSpaceError::LawSpaceMismatch {
                law: self.n_states(),
                space: space.n_states(),
            });
        }
        Ok(())
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
