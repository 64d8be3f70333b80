//! Energy-landscape analysis of the activity process.
//!
//! The activity chain moves on independent sets by single activations and
//! deactivations, so every path between two states climbs through
//! intermediate efficiency gaps. This module computes the resulting
//! landscape quantities exactly on enumerated state spaces:
//!
//! * the communication height `phi(a, b)` (minimax efficiency gap over
//!   flip paths, endpoints included) via bottleneck relaxation,
//! * the basin `S = { I : phi(E, I) <= L }` around the even dominant
//!   state, with its inner/outer flip boundaries and depth,
//! * an explicit even-to-odd reference path whose peak gap is `L + 1`,
//! * the uniformized discrete-time kernel at rate `q_max = L^2 xi`,
//!   `xi = max(p mu, nu)`,
//! * conductance of `S` with its closed-form upper bound, the matching
//!   mixing-time lower bound, and the true mixing time from kernel
//!   powers,
//! * exact mean hitting times and per-state occupation times from dense
//!   LU solves with iterative refinement,
//! * the spectral gap of the kernel by deflated power iteration on the
//!   symmetrized form.

use crate::contour::{classify_configuration, ContourError, GeometryClass};
use crate::state_space::{
    log_sum_exp, ActivityLaw, Configuration, StateId, StateSpace, StateSpaceError,
};
use crate::topology::{ConflictGraph, Parity, TopologyError};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::VecDeque;
use thiserror::Error;

/// Largest state space accepted for dense linear algebra (hitting times,
/// kernel powers, spectral decompositions).
pub const MAX_DENSE_STATES: usize = 5_000;

/// Largest activity factor accepted for linear solves; beyond this the
/// stationary weights span too many orders of magnitude for reliable
/// double-precision answers.
pub const MAX_SIGMA_FOR_SOLVES: f64 = 1.0e3;

/// True-mixing-time computation is restricted to this many states and to
/// `sigma <= MAX_SIGMA_FOR_MIXING`: the step count grows like `sigma^L`.
pub const MAX_MIXING_STATES: usize = 1_000;
pub const MAX_SIGMA_FOR_MIXING: f64 = 10.0;

#[derive(Debug, Error)]
pub enum LandscapeError {
    #[error("state space too large for dense linear algebra: {n_states} states (limit {limit})")]
    TooLarge { n_states: usize, limit: usize },
    #[error("sigma = {sigma} exceeds the conditioning threshold {limit}; refusing to solve")]
    IllConditioned { sigma: f64, limit: f64 },
    #[error("sigma must exceed 1 for the conductance and mixing bounds (got {sigma})")]
    SigmaNotAboveOne { sigma: f64 },
    #[error("epsilon must lie in (0, 1/4), got {epsilon}")]
    BadEpsilon { epsilon: f64 },
    #[error("chain is not reversible: relative flow mismatch {mismatch:.3e} on edge ({x}, {y})")]
    NotReversible { x: StateId, y: StateId, mismatch: f64 },
    #[error(
        "true mixing time supported only up to {limit} states and sigma <= {sigma_limit} \
         (kernel powers grow too costly beyond that); requested {n_states} states, sigma = {sigma}"
    )]
    MixingTooCostly { n_states: usize, sigma: f64, limit: usize, sigma_limit: f64 },
    #[error("target set is empty")]
    EmptyTarget,
    #[error("invalid rate parameter: {0}")]
    BadRates(String),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Contour(#[from] ContourError),
}

// ======================================================================
// Communication height
// ======================================================================

/// Minimax efficiency gap over single-flip paths from `a` to `b`,
/// endpoints included. Computed by bottleneck relaxation: a Dijkstra
/// variant whose path cost is the maximum gap seen so far, processing
/// states in increasing peak order (buckets), smaller ids first within a
/// peak level.
pub fn communication_height(
    space: &StateSpace,
    a: StateId,
    b: StateId,
) -> Result<usize, LandscapeError> {
    let n = space.n_states();
    let max_gap = space.gap(0)?; // empty set has the largest gap
    let delta: Vec<u8> = (0..n).map(|i| space.gap(i as StateId).unwrap() as u8).collect();

    const UNSEEN: u8 = u8::MAX;
    let mut best = vec![UNSEEN; n];
    let mut buckets: Vec<Vec<StateId>> = vec![Vec::new(); max_gap + 1];
    best[a as usize] = delta[a as usize];
    buckets[delta[a as usize] as usize].push(a);

    for peak in 0..=max_gap {
        let mut i = 0;
        // Entries appended during processing land in this same bucket
        // only when their peak equals the current level; sort the batch
        // present at entry for a deterministic sweep.
        buckets[peak].sort_unstable();
        while i < buckets[peak].len() {
            let x = buckets[peak][i];
            i += 1;
            if best[x as usize] as usize != peak {
                continue; // superseded by a lower peak
            }
            if x == b {
                return Ok(peak);
            }
            space.for_each_flip_neighbor(x, |y| {
                let cand = (peak as u8).max(delta[y as usize]);
                if cand < best[y as usize] {
                    best[y as usize] = cand;
                    buckets[cand as usize].push(y);
                }
            });
        }
        buckets[peak] = Vec::new();
    }
    unreachable!("flip graph is connected through the empty configuration")
}

// ======================================================================
// The basin S around the even dominant state
// ======================================================================

/// The set `S` of states reachable from the even dominant state through
/// configurations whose gap never exceeds `L`, with its flip boundaries.
#[derive(Clone, Debug, Serialize)]
pub struct SetS {
    /// Sorted state ids of `S`.
    pub members: Vec<StateId>,
    /// Members with at least one flip neighbor outside `S`.
    pub inner_boundary: Vec<StateId>,
    /// Non-members adjacent to `S`.
    pub outer_boundary: Vec<StateId>,
    /// Smallest gap over the outer boundary (its "bottom").
    pub bottom_gap: usize,
    /// Bottom gap of the outer boundary minus the bottom gap of `S`.
    pub depth: usize,
    #[serde(skip)]
    membership: Vec<bool>,
}

impl SetS {
    pub fn contains(&self, id: StateId) -> bool {
        self.membership[id as usize]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Builds `S` by breadth-first search inside `{ Delta <= L }` from the
/// even dominant state: a state has `phi(E, I) <= L` exactly when it
/// lies in that induced component (endpoint gaps included, and
/// `Delta(E) = 0`). Verifies on return that the odd dominant state is
/// excluded, that every member classifies as a cluster configuration,
/// and that some cluster configuration falls outside `S`.
pub fn build_set_s(space: &StateSpace) -> Result<SetS, LandscapeError> {
    let side = space.graph().side().ok_or(TopologyError::NotATorus)?;
    let n = space.n_states();
    let (e_id, o_id) = space.dominant_ids()?;

    let mut membership = vec![false; n];
    membership[e_id as usize] = true;
    let mut queue = VecDeque::from([e_id]);
    while let Some(x) = queue.pop_front() {
        space.for_each_flip_neighbor(x, |y| {
            if !membership[y as usize] && space.gap(y).unwrap() <= side {
                membership[y as usize] = true;
                queue.push_back(y);
            }
        });
    }

    let members: Vec<StateId> =
        (0..n as StateId).filter(|&i| membership[i as usize]).collect();
    let mut inner = Vec::new();
    let mut outer_mask = vec![false; n];
    for &x in &members {
        let mut exits = false;
        space.for_each_flip_neighbor(x, |y| {
            if !membership[y as usize] {
                exits = true;
                outer_mask[y as usize] = true;
            }
        });
        if exits {
            inner.push(x);
        }
    }
    let outer: Vec<StateId> = (0..n as StateId).filter(|&i| outer_mask[i as usize]).collect();

    assert!(membership[e_id as usize], "even dominant state must lie in S");
    assert!(!membership[o_id as usize], "odd dominant state must not lie in S");
    assert!(!outer.is_empty(), "S has an exit boundary");

    let bottom_gap = outer.iter().map(|&i| space.gap(i).unwrap()).min().unwrap();
    let bottom_s = members.iter().map(|&i| space.gap(i).unwrap()).min().unwrap();
    let depth = bottom_gap - bottom_s;

    // Every member must be a cluster configuration...
    let graph = space.graph();
    for &x in &members {
        let class = classify_configuration(graph, &space.state(x))?;
        assert_eq!(
            class,
            GeometryClass::Cluster,
            "state {x} in S classifies as {class:?}"
        );
    }
    // ...but not every cluster configuration is a member: a single
    // occupied vertex is a cluster with gap L^2/2 - 1 > L.
    let lone = space.id_of_bits(1).expect("single-vertex state exists");
    assert_eq!(
        classify_configuration(graph, &space.state(lone))?,
        GeometryClass::Cluster
    );
    assert!(!membership[lone as usize], "a lone vertex lies outside S");

    Ok(SetS { members, inner_boundary: inner, outer_boundary: outer, bottom_gap, depth, membership })
}

// ======================================================================
// Reference path
// ======================================================================

/// A sequence of configurations in which consecutive members differ by
/// exactly one vertex.
#[derive(Clone, Debug)]
pub struct FlipPath {
    pub states: Vec<Configuration>,
    /// Largest efficiency gap along the path.
    pub peak_gap: usize,
    /// Index of the first state attaining `peak_gap`.
    pub first_peak_index: usize,
}

impl FlipPath {
    /// Checks that consecutive states differ by exactly one vertex.
    /// (Each state is independent by construction of `Configuration`.)
    pub fn is_valid(&self) -> bool {
        self.states.windows(2).all(|w| {
            w[0].occupied().symmetric_difference(w[1].occupied()).len() == 1
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Builds the explicit even-to-odd path whose peak gap is `L + 1`:
///
/// 1. grow a linear cluster of odd column-1 vertices `(1, 0), (1, 2),
///    ..., (1, L-4)`, vacating each one's even neighbours just before
///    activating it (the cluster configuration has gap `L - 1`);
/// 2. vacate the two remaining even neighbours of `v = (1, L-2)` — the
///    second removal is the path's peak, gap `L + 1` — then activate `v`,
///    closing the column into a stripe (gap `L`);
/// 3. sweep the remaining columns `2, 3, ..., L-1, 0`, activating each
///    odd vertex after vacating its unique remaining even neighbour, so
///    the gap oscillates between `L` and `L + 1` and then drains to `0`
///    at the odd dominant state.
pub fn reference_path(graph: &ConflictGraph) -> Result<FlipPath, LandscapeError> {
    let side = graph.side().ok_or(TopologyError::NotATorus)?;
    let half_area = side * side / 2;
    let mut cur = graph.parity_class(Parity::Even)?;
    let mut states = vec![Configuration::new(graph, cur.clone())?];

    let remove = |cur: &mut crate::topology::VertexSet,
                      states: &mut Vec<Configuration>,
                      v: usize|
     -> Result<(), LandscapeError> {
        cur.remove(v);
        states.push(Configuration::new(graph, cur.clone())?);
        Ok(())
    };
    let activate = |cur: &mut crate::topology::VertexSet,
                        states: &mut Vec<Configuration>,
                        v: usize|
     -> Result<(), LandscapeError> {
        for &u in graph.neighbors(v) {
            debug_assert!(!cur.contains(u));
        }
        cur.insert(v);
        states.push(Configuration::new(graph, cur.clone())?);
        Ok(())
    };

    let clear_neighbors_and_activate = |cur: &mut crate::topology::VertexSet,
                                            states: &mut Vec<Configuration>,
                                            v: usize|
     -> Result<(), LandscapeError> {
        let occupied: Vec<usize> =
            graph.neighbors(v).iter().copied().filter(|&u| cur.contains(u)).collect();
        for u in occupied {
            remove(cur, states, u)?;
        }
        activate(cur, states, v)
    };

    // Phase 1: linear cluster along column 1.
    for j in 0..side / 2 - 1 {
        let v = graph.vertex_id(1, 2 * j).unwrap();
        clear_neighbors_and_activate(&mut cur, &mut states, v)?;
    }

    // Phase 2: close the column into a stripe.
    let v = graph.vertex_id(1, side - 2).unwrap();
    let blockers: Vec<usize> =
        graph.neighbors(v).iter().copied().filter(|&u| cur.contains(u)).collect();
    assert_eq!(blockers.len(), 2, "exactly two even vertices still flank the missing odd one");
    for u in blockers {
        remove(&mut cur, &mut states, u)?;
    }
    activate(&mut cur, &mut states, v)?;

    // Phase 3: sweep the remaining columns.
    for c in (2..side).chain([0]) {
        for y in 0..side {
            if (c + y) % 2 == 1 {
                let v = graph.vertex_id(c, y).unwrap();
                if !cur.contains(v) {
                    clear_neighbors_and_activate(&mut cur, &mut states, v)?;
                }
            }
        }
    }

    let odd = graph.parity_class(Parity::Odd)?;
    assert_eq!(cur, odd, "the path must end at the odd dominant state");

    let gaps: Vec<usize> = states.iter().map(|s| half_area - s.n_active()).collect();
    let peak_gap = *gaps.iter().max().unwrap();
    let first_peak_index = gaps.iter().position(|&g| g == peak_gap).unwrap();
    Ok(FlipPath { states, peak_gap, first_peak_index })
}

// ======================================================================
// Uniformized chain
// ======================================================================

/// Discrete-time kernel of the activity process uniformized at rate
/// `q_max = L^2 xi`, `xi = max(p mu, nu)`: activations move with
/// probability `nu / q_max`, deactivations with `p mu / q_max`, and the
/// remainder stays put. For `sigma >= 1` the off-diagonal entries take
/// the Metropolis-like form `c(I, J) sigma^{-[H(J) - H(I)]^+}` with
/// `H(I) = -|I|` and connectivity `c = 1 / L^2`.
pub struct UniformizedChain<'a> {
    space: &'a StateSpace,
    law: ActivityLaw,
    nu: f64,
    p: f64,
    mu: f64,
    sigma: f64,
    q_max: f64,
    /// Off-diagonal transition probabilities, each row sorted by column.
    rows: Vec<Vec<(StateId, f64)>>,
    diag: Vec<f64>,
}

impl<'a> UniformizedChain<'a> {
    pub fn build(
        space: &'a StateSpace,
        nu: f64,
        p: f64,
        mu: f64,
    ) -> Result<UniformizedChain<'a>, LandscapeError> {
        if !(nu > 0.0) || !(mu > 0.0) || !(p > 0.0 && p <= 1.0) {
            return Err(LandscapeError::BadRates(format!(
                "need nu > 0, mu > 0, 0 < p <= 1; got nu = {nu}, p = {p}, mu = {mu}"
            )));
        }
        let n = space.n_states();
        if n > MAX_DENSE_STATES {
            return Err(LandscapeError::TooLarge { n_states: n, limit: MAX_DENSE_STATES });
        }
        let sigma = nu / (p * mu);
        let law = ActivityLaw::homogeneous(space, sigma)?;
        let xi = (p * mu).max(nu);
        let q_max = space.n_vertices() as f64 * xi;
        let p_up = nu / q_max;
        let p_down = p * mu / q_max;

        let mut rows = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        for x in 0..n as StateId {
            let kx = space.n_active(x);
            let mut row = Vec::new();
            space.for_each_flip_neighbor(x, |y| {
                let prob = if space.n_active(y) > kx { p_up } else { p_down };
                row.push((y, prob));
            });
            row.sort_unstable_by_key(|&(j, _)| j);
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            debug_assert!(total <= 1.0 + 1e-12);
            diag.push((1.0 - total).max(0.0));
            rows.push(row);
        }
        Ok(UniformizedChain { space, law, nu, p, mu, sigma, q_max, rows, diag })
    }

    pub fn space(&self) -> &StateSpace {
        self.space
    }

    pub fn law(&self) -> &ActivityLaw {
        &self.law
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rates(&self) -> (f64, f64, f64) {
        (self.nu, self.p, self.mu)
    }

    pub fn rows(&self) -> &[Vec<(StateId, f64)>] {
        &self.rows
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn hamiltonian(&self, id: StateId) -> f64 {
        -(self.space.n_active(id) as f64)
    }

    pub fn connectivity(&self) -> f64 {
        1.0 / self.space.n_vertices() as f64
    }

    /// Off-diagonal transition probability, 0 when not flip-adjacent.
    pub fn prob(&self, x: StateId, y: StateId) -> f64 {
        if x == y {
            return self.diag[x as usize];
        }
        match self.rows[x as usize].binary_search_by_key(&y, |&(j, _)| j) {
            Ok(k) => self.rows[x as usize][k].1,
            Err(_) => 0.0,
        }
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n_states())
            .map(|x| {
                let s: f64 =
                    self.rows[x].iter().map(|&(_, p)| p).sum::<f64>() + self.diag[x];
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Verifies detailed balance `pi(x) p(x, y) = pi(y) p(y, x)` on every
    /// flip edge, in log space; returns the worst relative mismatch.
    pub fn check_reversibility(&self, tol: f64) -> Result<f64, LandscapeError> {
        let mut worst = 0.0f64;
        let mut worst_edge = (0, 0);
        for x in 0..self.n_states() as StateId {
            for &(y, pxy) in &self.rows[x as usize] {
                if y < x {
                    continue;
                }
                let pyx = self.prob(y, x);
                let lhs = self.law.log_prob(x) + pxy.ln();
                let rhs = self.law.log_prob(y) + pyx.ln();
                let mismatch = (lhs - rhs).abs();
                if mismatch > worst {
                    worst = mismatch;
                    worst_edge = (x, y);
                }
            }
        }
        if worst > tol {
            return Err(LandscapeError::NotReversible {
                x: worst_edge.0,
                y: worst_edge.1,
                mismatch: worst,
            });
        }
        Ok(worst)
    }

    /// Dense copy of the kernel (row-stochastic).
    pub fn dense_kernel(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n, n);
        for x in 0..n {
            m[(x, x)] = self.diag[x];
            for &(y, p) in &self.rows[x] {
                m[(x, y as usize)] = p;
            }
        }
        m
    }

    /// Stationary probabilities in linear scale.
    pub fn stationary_vector(&self) -> Vec<f64> {
        (0..self.n_states() as StateId).map(|i| self.law.prob(i)).collect()
    }
}

// ======================================================================
// Conductance and mixing
// ======================================================================

/// Conductance of `S` under the continuous-time activity process with
/// `p = 1`, `mu = 1` (so `sigma = nu`), together with its closed-form
/// upper bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Conductance {
    /// `sum_{x in S, y outside} pi(x) q(x, y) / pi(S)`.
    pub phi: f64,
    /// `|inner boundary| (L^2/2 - L) / sigma^L`.
    pub bound: f64,
    pub pi_s: f64,
    pub n_inner: usize,
    /// Exit transitions per inner-boundary state (all deactivations).
    pub exits_per_state: usize,
}

pub fn conductance_of_s(
    space: &StateSpace,
    set_s: &SetS,
    sigma: f64,
) -> Result<Conductance, LandscapeError> {
    if !(sigma > 1.0) {
        return Err(LandscapeError::SigmaNotAboveOne { sigma });
    }
    let side = space.graph().side().ok_or(TopologyError::NotATorus)?;
    let expected_exits = side * side / 2 - side;
    let law = ActivityLaw::homogeneous(space, sigma)?;

    // Exits out of S happen only by deactivation: an activation from
    // x in S has gap Delta(x) - 1 < L, so extending a witness path for x
    // keeps the peak at most L. Each inner-boundary state therefore sits
    // at gap exactly L and all of its |x| = L^2/2 - L deactivations leave.
    let mut exit_log_weights = Vec::with_capacity(set_s.inner_boundary.len());
    for &x in &set_s.inner_boundary {
        assert_eq!(space.gap(x)?, side, "inner boundary of S sits at gap L");
        let kx = space.n_active(x);
        let mut n_exits = 0usize;
        space.for_each_flip_neighbor(x, |y| {
            if !set_s.contains(y) {
                assert_eq!(
                    space.n_active(y),
                    kx - 1,
                    "exits from S must be deactivations"
                );
                n_exits += 1;
            }
        });
        assert_eq!(n_exits, expected_exits, "every deactivation of an inner state exits");
        // Rate q(x, y) = p mu = 1 per exit edge.
        exit_log_weights.push(law.log_prob(x) + (n_exits as f64).ln());
    }

    let log_num = log_sum_exp(&exit_log_weights);
    let member_logs: Vec<f64> = set_s.members.iter().map(|&x| law.log_prob(x)).collect();
    let log_pi_s = log_sum_exp(&member_logs);
    let phi = (log_num - log_pi_s).exp();
    let bound = ((set_s.inner_boundary.len() * expected_exits) as f64).ln() - side as f64 * sigma.ln();
    let bound = bound.exp();
    assert!(phi <= bound * (1.0 + 1e-12), "conductance exceeds its closed-form bound");
    Ok(Conductance {
        phi,
        bound,
        pi_s: log_pi_s.exp(),
        n_inner: set_s.inner_boundary.len(),
        exits_per_state: expected_exits,
    })
}

/// Lower bound on the mixing time implied by the conductance bound:
/// `(1/2 - 2 eps) sigma^L / (|inner| (L^2/2 - L))`.
pub fn mixing_time_bound(
    space: &StateSpace,
    set_s: &SetS,
    sigma: f64,
    epsilon: f64,
) -> Result<f64, LandscapeError> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(LandscapeError::BadEpsilon { epsilon });
    }
    if !(sigma > 1.0) {
        return Err(LandscapeError::SigmaNotAboveOne { sigma });
    }
    let side = space.graph().side().ok_or(TopologyError::NotATorus)?;
    let exits = (side * side / 2 - side) as f64;
    Ok((0.5 - 2.0 * epsilon) * sigma.powi(side as i32)
        / (set_s.inner_boundary.len() as f64 * exits))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MixingTime {
    /// Smallest step count with worst-case total-variation distance from
    /// stationarity at most `epsilon`.
    pub n_steps: u64,
    /// `n_steps / q_max`.
    pub time: f64,
    pub epsilon: f64,
}

/// True mixing time of the uniformized kernel, from repeated squaring
/// plus a power bisection: `d(n) = max_x || P^n(x, .) - pi ||_TV` is
/// non-increasing, so the first `n` with `d(n) <= epsilon` is pinned
/// between consecutive dyadic powers.
pub fn true_mixing_time(
    chain: &UniformizedChain,
    epsilon: f64,
) -> Result<MixingTime, LandscapeError> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(LandscapeError::BadEpsilon { epsilon });
    }
    let n = chain.n_states();
    if n > MAX_MIXING_STATES || chain.sigma() > MAX_SIGMA_FOR_MIXING {
        return Err(LandscapeError::MixingTooCostly {
            n_states: n,
            sigma: chain.sigma(),
            limit: MAX_MIXING_STATES,
            sigma_limit: MAX_SIGMA_FOR_MIXING,
        });
    }
    let pi = chain.stationary_vector();
    // Worst-row total variation distance; column-major accumulation.
    let dist = |m: &DMatrix<f64>| -> f64 {
        let mut acc = vec![0.0f64; n];
        for y in 0..n {
            let col = m.column(y);
            let py = pi[y];
            for x in 0..n {
                acc[x] += (col[x] - py).abs();
            }
        }
        0.5 * acc.into_iter().fold(0.0, f64::max)
    };

    let p1 = chain.dense_kernel();
    if dist(&p1) <= epsilon {
        return Ok(MixingTime { n_steps: 1, time: 1.0 / chain.q_max(), epsilon });
    }
    // powers[j] = P^(2^j)
    let mut powers = vec![p1];
    loop {
        let last = powers.last().unwrap();
        let next = last * last;
        let done = dist(&next) <= epsilon;
        powers.push(next);
        if done {
            break;
        }
        assert!(powers.len() < 42, "mixing time out of representable range");
    }
    let k = powers.len() - 1; // d(2^k) <= eps < d(2^(k-1))
    let mut exponent: u64 = 1 << (k - 1);
    let mut cur = powers[k - 1].clone();
    for j in (0..k - 1).rev() {
        let trial = &cur * &powers[j];
        if dist(&trial) > epsilon {
            cur = trial;
            exponent += 1 << j;
        }
    }
    let n_steps = exponent + 1;
    Ok(MixingTime { n_steps, time: n_steps as f64 / chain.q_max(), epsilon })
}

// ======================================================================
// Hitting and occupation times
// ======================================================================

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HittingTime {
    /// Expected number of uniformized steps.
    pub steps: f64,
    /// Expected continuous time, `steps / q_max`.
    pub time: f64,
    /// Final infinity-norm of the refinement correction, relative to the
    /// solution scale.
    pub refinement_residual: f64,
}

/// Solves `(I - P_TT) h = b` over the complement `T` of the target set
/// by dense LU with compensated-residual iterative refinement.
fn restricted_solve(
    chain: &UniformizedChain,
    in_target: &[bool],
    b_of: impl Fn(StateId) -> f64,
) -> Result<(Vec<f64>, f64), LandscapeError> {
    let n = chain.n_states();
    let free: Vec<StateId> =
        (0..n as StateId).filter(|&x| !in_target[x as usize]).collect();
    let m = free.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &x) in free.iter().enumerate() {
        pos[x as usize] = k;
    }

    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (k, &x) in free.iter().enumerate() {
        a[(k, k)] = 1.0 - chain.diagonal()[x as usize];
        for &(y, p) in &chain.rows()[x as usize] {
            if !in_target[y as usize] {
                a[(k, pos[y as usize])] -= p;
            }
        }
        b[k] = b_of(x);
    }

    let lu = a.clone().lu();
    let mut h = lu.solve(&b).expect("hitting-time system is non-singular");

    // Iterative refinement with Neumaier-compensated residuals, using
    // the sparse rows (the dense matrix is only needed for the LU).
    let mut residual_scale = f64::INFINITY;
    for _ in 0..30 {
        let mut r = DVector::<f64>::zeros(m);
        for (k, &x) in free.iter().enumerate() {
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            let mut add = |v: f64| {
                let t = sum + v;
                comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
                sum = t;
            };
            add((1.0 - chain.diagonal()[x as usize]) * h[k]);
            for &(y, p) in &chain.rows()[x as usize] {
                if !in_target[y as usize] {
                    add(-p * h[pos[y as usize]]);
                }
            }
            r[k] = b[k] - (sum + comp);
        }
        let delta = lu.solve(&r).expect("refinement solve");
        let h_scale = h.amax().max(1.0);
        let step = delta.amax() / h_scale;
        h += delta;
        if step >= residual_scale || step < 1e-15 {
            residual_scale = step;
            break;
        }
        residual_scale = step;
    }

    let mut full = vec![0.0; n];
    for (k, &x) in free.iter().enumerate() {
        full[x as usize] = h[k];
    }
    Ok((full, residual_scale))
}

fn validate_solve_inputs(
    chain: &UniformizedChain,
    target: &[StateId],
) -> Result<Vec<bool>, LandscapeError> {
    if target.is_empty() {
        return Err(LandscapeError::EmptyTarget);
    }
    if chain.sigma() > MAX_SIGMA_FOR_SOLVES {
        return Err(LandscapeError::IllConditioned {
            sigma: chain.sigma(),
            limit: MAX_SIGMA_FOR_SOLVES,
        });
    }
    let n = chain.n_states();
    let mut in_target = vec![false; n];
    for &t in target {
        in_target[t as usize] = true;
    }
    Ok(in_target)
}

/// Exact expected hitting time of `target` from `from`, in uniformized
/// steps and in continuous time.
pub fn mean_hitting_time(
    chain: &UniformizedChain,
    from: StateId,
    target: &[StateId],
) -> Result<HittingTime, LandscapeError> {
    let in_target = validate_solve_inputs(chain, target)?;
    if in_target[from as usize] {
        return Ok(HittingTime { steps: 0.0, time: 0.0, refinement_residual: 0.0 });
    }
    let (h, res) = restricted_solve(chain, &in_target, |_| 1.0)?;
    let steps = h[from as usize];
    Ok(HittingTime { steps, time: steps / chain.q_max(), refinement_residual: res })
}

/// Expected number of uniformized steps spent in `in_state` before the
/// chain started at `from` hits `target`.
pub fn mean_occupation_steps(
    chain: &UniformizedChain,
    from: StateId,
    target: &[StateId],
    in_state: StateId,
) -> Result<HittingTime, LandscapeError> {
    let in_target = validate_solve_inputs(chain, target)?;
    if in_target[from as usize] {
        return Ok(HittingTime { steps: 0.0, time: 0.0, refinement_residual: 0.0 });
    }
    let (h, res) = restricted_solve(chain, &in_target, |x| if x == in_state { 1.0 } else { 0.0 })?;
    let steps = h[from as usize];
    Ok(HittingTime { steps, time: steps / chain.q_max(), refinement_residual: res })
}

// ======================================================================
// Spectral gap
// ======================================================================

/// Spectral gap `1 - lambda_2` of the uniformized kernel, computed by
/// power iteration on the symmetrized half-shifted kernel
/// `(A + I) / 2 - v v^T` with `A(x, y) = sqrt(p(x, y) p(y, x))` and
/// `v = sqrt(pi)`: its eigenvalues lie in `[0, 1]` and the largest is
/// `(1 + lambda_2) / 2`.
pub fn spectral_gap(chain: &UniformizedChain) -> Result<f64, LandscapeError> {
    chain.check_reversibility(1e-10)?;
    let n = chain.n_states();

    let mut sym_rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for x in 0..n as StateId {
        let row = chain.rows()[x as usize]
            .iter()
            .map(|&(y, pxy)| (y, (pxy * chain.prob(y, x)).sqrt()))
            .collect();
        sym_rows.push(row);
    }
    let diag = chain.diagonal();
    let v: Vec<f64> = (0..n as StateId).map(|i| (0.5 * chain.law().log_prob(i)).exp()).collect();

    // Deterministic start vector, orthogonal to v.
    let mut u: Vec<f64> = (0..n)
        .map(|i| ((i as u64).wrapping_mul(2654435761) % 10_000) as f64 / 10_000.0 - 0.5)
        .collect();
    orthogonalize(&mut u, &v);
    normalize(&mut u);

    let mut lambda_prev = f64::NAN;
    let mut stable = 0;
    let mut lambda = 0.0;
    for _ in 0..400_000 {
        // w = ((A + I) / 2) u, then deflate the top eigenvector.
        let mut w = vec![0.0f64; n];
        for x in 0..n {
            let mut acc = (diag[x] + 1.0) * 0.5 * u[x];
            for &(y, a) in &sym_rows[x] {
                acc += 0.5 * a * u[y as usize];
            }
            w[x] = acc;
        }
        orthogonalize(&mut w, &v);
        lambda = dot(&u, &w);
        let norm = normalize(&mut w);
        u = w;
        if norm == 0.0 {
            break;
        }
        if (lambda - lambda_prev).abs() <= 1e-14 * lambda.abs().max(1.0) {
            stable += 1;
            if stable >= 8 {
                break;
            }
        } else {
            stable = 0;
        }
        lambda_prev = lambda;
    }
    let lambda2 = 2.0 * lambda - 1.0;
    let gap = 1.0 - lambda2;
    assert!(gap > 0.0, "kernel gap must be positive for an irreducible chain");
    Ok(gap)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthogonalize(u: &mut [f64], v: &[f64]) {
    let c = dot(u, v);
    for (ui, vi) in u.iter_mut().zip(v) {
        *ui -= c * vi;
    }
}

fn normalize(u: &mut [f64]) -> f64 {
    let norm = dot(u, u).sqrt();
    if norm > 0.0 {
        for ui in u.iter_mut() {
            *ui /= norm;
        }
    }
    norm
}

/// Dense symmetrized kernel, for eigensolver cross-checks.
pub fn symmetrized_dense_kernel(chain: &UniformizedChain) -> DMatrix<f64> {
    let n = chain.n_states();
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n as StateId {
        m[(x as usize, x as usize)] = chain.diagonal()[x as usize];
        for &(y, pxy) in &chain.rows()[x as usize] {
            m[(x as usize, y as usize)] = (pxy * chain.prob(y, x)).sqrt();
        }
    }
    m
}

// ======================================================================
// Combined report
// ======================================================================

/// All landscape quantities for one torus and one activity factor.
/// Quantities that require `sigma > 1` (conductance, mixing bound) or
/// bounded conditioning (hitting times) are `None` outside their range.
#[derive(Clone, Debug, Serialize)]
pub struct LandscapeReport {
    pub side: usize,
    pub n_states: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub gamma: usize,
    pub set_s: Vec<StateId>,
    pub inner_boundary: Vec<StateId>,
    pub outer_boundary: Vec<StateId>,
    pub bottom_gap: usize,
    pub depth: usize,
    pub conductance: Option<f64>,
    pub conductance_bound: Option<f64>,
    pub tmix_lower: Option<f64>,
    pub spectral_gap: f64,
    pub q_max: f64,
    pub mean_hit_tau: Option<f64>,
    pub mean_hit_eo: Option<f64>,
}

/// Runs the full landscape analysis with the `p = 1`, `mu = 1`
/// normalization (`nu = sigma`).
pub fn analyze_landscape(
    space: &StateSpace,
    sigma: f64,
    epsilon: f64,
) -> Result<LandscapeReport, LandscapeError> {
    let side = space.graph().side().ok_or(TopologyError::NotATorus)?;
    let (e_id, o_id) = space.dominant_ids()?;
    let gamma = communication_height(space, e_id, o_id)?;
    let set_s = build_set_s(space)?;
    assert_eq!(set_s.depth, gamma, "the depth of S equals the communication height");

    let (conductance, conductance_bound, tmix_lower) = if sigma > 1.0 {
        let c = conductance_of_s(space, &set_s, sigma)?;
        let bound = mixing_time_bound(space, &set_s, sigma, epsilon)?;
        (Some(c.phi), Some(c.bound), Some(bound))
    } else {
        (None, None, None)
    };

    let chain = UniformizedChain::build(space, sigma, 1.0, 1.0)?;
    let spectral_gap_value = spectral_gap(&chain)?;
    let (mean_hit_tau, mean_hit_eo) = if sigma <= MAX_SIGMA_FOR_SOLVES {
        let ht = mean_hitting_time(&chain, e_id, &[o_id])?;
        (Some(ht.steps), Some(ht.time))
    } else {
        (None, None)
    };

    Ok(LandscapeReport {
        side,
        n_states: space.n_states(),
        sigma,
        epsilon,
        gamma,
        set_s: set_s.members.clone(),
        inner_boundary: set_s.inner_boundary.clone(),
        outer_boundary: set_s.outer_boundary.clone(),
        bottom_gap: set_s.bottom_gap,
        depth: set_s.depth,
        conductance,
        conductance_bound,
        tmix_lower,
        spectral_gap: spectral_gap_value,
        q_max: chain.q_max(),
        mean_hit_tau,
        mean_hit_eo,
    })
}
