//! Event-driven simulation of the joint activity/queue process.
//!
//! Nodes of a conflict graph alternate between inactive and active
//! (transmitting). An inactive node with no active neighbour activates
//! at rate `nu`; an active node completes a transmission at rate `mu`
//! and then backs off (deactivates) with probability `p` or immediately
//! starts the next transmission with probability `1 - p`. Packets arrive
//! at each node at rate `lambda` and are served FIFO; an active node
//! with an empty queue transmits a dummy. Because all clocks are
//! exponential, sampling the next event by a total-rate race reproduces
//! the continuous-time Markov chain exactly — including the convention
//! that a back-off countdown pauses while the node is blocked, which by
//! memorylessness is the same as activating at rate `nu` exactly while
//! unblocked.
//!
//! The module provides the joint simulator, an activity-only fast path
//! (the activity marginal does not depend on the queues), transition
//! time sampling between the two dominant states, occupancy sampling
//! for goodness-of-fit testing, a tagged-node delay experiment with
//! renewal-cycle bookkeeping, and a necessary-condition stability
//! screen.

use crate::state_space::{StateId, StateSpace};
use crate::stats::{t_quantile, RunningStats};
use crate::topology::{ConflictGraph, Parity, TopologyError, VertexId, VertexSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid rate parameter: {0}")]
    BadRates(String),
    #[error("normalized load rho = {rho} >= 1: queues cannot be stable")]
    Overloaded { rho: f64 },
    #[error(
        "sigma = {sigma} is at or below the stability threshold rho/(2(1-rho)) = {threshold}"
    )]
    BelowSigmaThreshold { sigma: f64, threshold: f64 },
    #[error("need at least {need} complete renewal cycles, got {got}")]
    TooFewCycles { got: usize, need: usize },
    #[error("invalid time window: {0}")]
    BadWindow(String),
    #[error("node {node} out of range for a graph with {n} vertices")]
    NodeOutOfRange { node: VertexId, n: usize },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

// ======================================================================
// Parameters
// ======================================================================

/// Rates of a single node: arrivals `lambda`, transmission completions
/// `mu`, activation attempts `nu`, back-off probability `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRates {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub p: f64,
}

impl NodeRates {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(SimError::BadRates(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(SimError::BadRates(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(SimError::BadRates(format!("nu must be > 0, got {}", self.nu)));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(SimError::BadRates(format!("p must lie in (0, 1], got {}", self.p)));
        }
        Ok(())
    }

    /// Activity factor `nu / (p mu)`.
    pub fn sigma(&self) -> f64 {
        self.nu / (self.p * self.mu)
    }

    /// Normalized load `2 lambda / mu`: the arrival rate relative to the
    /// long-run capacity `mu / 2` of a node that can be active at most
    /// half the time.
    pub fn rho(&self) -> f64 {
        2.0 * self.lambda / self.mu
    }
}

/// Network-wide rates: a homogeneous base plus optional whole-rate
/// overrides for individual nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub base: NodeRates,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<VertexId, NodeRates>,
}

impl NetworkParams {
    pub fn homogeneous(lambda: f64, mu: f64, nu: f64, p: f64) -> Result<Self, SimError> {
        let base = NodeRates { lambda, mu, nu, p };
        base.validate()?;
        Ok(NetworkParams { base, overrides: BTreeMap::new() })
    }

    /// Convenience constructor in the `(rho, sigma)` parametrization
    /// with `p = 1`: `lambda = rho mu / 2`, `nu = sigma mu`.
    pub fn from_rho_sigma(rho: f64, sigma: f64, mu: f64) -> Result<Self, SimError> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(SimError::BadRates(format!("rho must be >= 0, got {rho}")));
        }
        Self::homogeneous(0.5 * rho * mu, mu, sigma * mu, 1.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.base.validate()?;
        for rates in self.overrides.values() {
            rates.validate()?;
        }
        Ok(())
    }

    pub fn rates_for(&self, node: VertexId) -> NodeRates {
        self.overrides.get(&node).copied().unwrap_or(self.base)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.overrides.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.base.sigma()
    }

    pub fn rho(&self) -> f64 {
        self.base.rho()
    }

    fn resolve(&self, n: usize) -> Result<Resolved, SimError> {
        self.validate()?;
        if let Some(&node) = self.overrides.keys().find(|&&v| v >= n) {
            return Err(SimError::NodeOutOfRange { node, n });
        }
        let per: Vec<NodeRates> = (0..n).map(|v| self.rates_for(v)).collect();
        let lambda_total = per.iter().map(|r| r.lambda).sum();
        Ok(Resolved { per, lambda_total })
    }
}

struct Resolved {
    per: Vec<NodeRates>,
    lambda_total: f64,
}

// ======================================================================
// Stability screen
// ======================================================================

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    BelowSigmaThreshold,
    Overloaded,
}

/// Necessary-condition screen on the base rates: `Overloaded` when
/// `rho >= 1`; `BelowSigmaThreshold` when `sigma <= rho / (2 (1 - rho))`
/// (each node must be active a fraction `rho / 2` of the time, and the
/// activity factor controls the attainable activity); otherwise
/// `Stable`. This is a screen, not a sufficiency proof.
pub fn stability_probe(params: &NetworkParams) -> StabilityVerdict {
    let rho = params.rho();
    if rho >= 1.0 {
        return StabilityVerdict::Overloaded;
    }
    let threshold = rho / (2.0 * (1.0 - rho));
    if params.sigma() <= threshold {
        StabilityVerdict::BelowSigmaThreshold
    } else {
        StabilityVerdict::Stable
    }
}

// ======================================================================
// Simulator state and events
// ======================================================================

/// What an active node is currently transmitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    /// Node inactive.
    Idle,
    /// Active but the queue was empty at service start: dummy packet.
    Dummy,
    /// Active and transmitting a real packet.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Activation,
    /// Transmission completed and the node backed off (deactivated).
    CompletionBackOff,
    /// Transmission completed and the node kept the medium.
    CompletionContinue,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Event {
    pub time: f64,
    pub node: VertexId,
    pub kind: EventKind,
    /// Change in the node's waiting-queue length.
    pub queue_change: i64,
}

/// Joint state: activity set `X(t)`, waiting-queue lengths `Q(t)`
/// (excluding any packet in service), and per-node service status.
#[derive(Clone, Debug)]
pub struct SimState {
    pub clock: f64,
    pub active: VertexSet,
    pub queues: Vec<u64>,
    pub in_service: Vec<Service>,
}

struct TaggedQueue {
    node: VertexId,
    /// Arrival times of waiting packets, FIFO.
    waiting: VecDeque<f64>,
    in_service_arrival: Option<f64>,
}

/// Event-driven simulator of the joint chain. Each step draws an
/// exponential holding time at the total enabled rate and then picks
/// one enabled transition proportionally to its rate, walking nodes in
/// id order — fully deterministic given the seed.
pub struct Simulator<'a> {
    graph: &'a ConflictGraph,
    rates: Resolved,
    state: SimState,
    /// Number of active neighbours per node.
    blocked_count: Vec<u32>,
    tagged: Option<TaggedQueue>,
    rng: ChaCha12Rng,
    n_events: u64,
    /// Delay samples collected at the tagged node (departure - arrival).
    pub completed_delays: Vec<(f64, f64)>,
}

impl<'a> Simulator<'a> {
    /// Starts in the given activity configuration with empty queues.
    pub fn new(
        graph: &'a ConflictGraph,
        params: &NetworkParams,
        start_active: &VertexSet,
        tagged_node: Option<VertexId>,
        seed: u64,
    ) -> Result<Simulator<'a>, SimError> {
        let n = graph.n_vertices();
        let rates = params.resolve(n)?;
        if let Some(t) = tagged_node {
            if t >= n {
                return Err(SimError::NodeOutOfRange { node: t, n });
            }
        }
        let mut blocked_count = vec![0u32; n];
        for v in start_active.iter() {
            for &u in graph.neighbors(v) {
                blocked_count[u] += 1;
            }
        }
        let in_service: Vec<Service> = (0..n)
            .map(|v| if start_active.contains(v) { Service::Dummy } else { Service::Idle })
            .collect();
        let state = SimState {
            clock: 0.0,
            active: start_active.clone(),
            queues: vec![0; n],
            in_service,
        };
        Ok(Simulator {
            graph,
            rates,
            state,
            blocked_count,
            tagged: tagged_node.map(|node| TaggedQueue {
                node,
                waiting: VecDeque::new(),
                in_service_arrival: None,
            }),
            rng: ChaCha12Rng::seed_from_u64(seed),
            n_events: 0,
            completed_delays: Vec::new(),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    fn eligible(&self, v: VertexId) -> bool {
        !self.state.active.contains(v) && self.blocked_count[v] == 0
    }

    /// Performs one event and returns it.
    pub fn step(&mut self) -> Event {
        let n = self.graph.n_vertices();
        // Total enabled rates, recomputed exactly every step (the
        // selection walk is linear in n anyway).
        let mut act_rate = 0.0f64;
        let mut mu_rate = 0.0f64;
        for v in 0..n {
            if self.state.active.contains(v) {
                mu_rate += self.rates.per[v].mu;
            } else if self.blocked_count[v] == 0 {
                act_rate += self.rates.per[v].nu;
            }
        }
        let total = self.rates.lambda_total + act_rate + mu_rate;
        debug_assert!(total > 0.0, "at least one transition is always enabled");

        let u: f64 = self.rng.gen();
        let dt = -(1.0 - u).ln() / total;
        self.state.clock += dt;
        let time = self.state.clock;
        self.n_events += 1;

        let mut r = self.rng.gen::<f64>() * total;
        if r < self.rates.lambda_total {
            // Arrival.
            let mut node = n - 1;
            for v in 0..n {
                r -= self.rates.per[v].lambda;
                if r < 0.0 {
                    node = v;
                    break;
                }
            }
            self.state.queues[node] += 1;
            if let Some(t) = self.tagged.as_mut() {
                if t.node == node {
                    t.waiting.push_back(time);
                }
            }
            return Event { time, node, kind: EventKind::Arrival, queue_change: 1 };
        }
        r -= self.rates.lambda_total;

        if r < act_rate {
            // Activation of an eligible node.
            let mut node = usize::MAX;
            for v in 0..n {
                if self.eligible(v) {
                    node = v;
                    r -= self.rates.per[v].nu;
                    if r < 0.0 {
                        break;
                    }
                }
            }
            debug_assert!(node != usize::MAX);
            return self.apply_activation(time, node);
        }

        // Completion at an active node, split p : (1 - p).
        r -= act_rate;
        let mut node = usize::MAX;
        for v in 0..n {
            if self.state.active.contains(v) {
                node = v;
                r -= self.rates.per[v].mu;
                if r < 0.0 {
                    break;
                }
            }
        }
        debug_assert!(node != usize::MAX);
        let back_off = self.rng.gen::<f64>() < self.rates.per[node].p;
        if back_off {
            self.apply_completion_back_off(time, node)
        } else {
            self.apply_completion_continue(time, node)
        }
    }

    fn start_service(&mut self, node: VertexId) -> i64 {
        if self.state.queues[node] > 0 {
            self.state.queues[node] -= 1;
            self.state.in_service[node] = Service::Real;
            if let Some(t) = self.tagged.as_mut() {
                if t.node == node {
                    t.in_service_arrival =
                        Some(t.waiting.pop_front().expect("tagged queue in sync"));
                }
            }
            -1
        } else {
            self.state.in_service[node] = Service::Dummy;
            0
        }
    }

    fn finish_service(&mut self, time: f64, node: VertexId) {
        if self.state.in_service[node] == Service::Real {
            if let Some(t) = self.tagged.as_mut() {
                if t.node == node {
                    let arrival = t.in_service_arrival.take().expect("tagged service in sync");
                    self.completed_delays.push((time, time - arrival));
                }
            }
        }
        self.state.in_service[node] = Service::Idle;
    }

    fn apply_activation(&mut self, time: f64, node: VertexId) -> Event {
        debug_assert!(self.eligible(node), "activations only fire at unblocked inactive nodes");
        self.state.active.insert(node);
        for &u in self.graph.neighbors(node) {
            self.blocked_count[u] += 1;
        }
        let queue_change = self.start_service(node);
        Event { time, node, kind: EventKind::Activation, queue_change }
    }

    fn apply_completion_back_off(&mut self, time: f64, node: VertexId) -> Event {
        self.finish_service(time, node);
        self.state.active.remove(node);
        for &u in self.graph.neighbors(node) {
            self.blocked_count[u] -= 1;
        }
        Event { time, node, kind: EventKind::CompletionBackOff, queue_change: 0 }
    }

    fn apply_completion_continue(&mut self, time: f64, node: VertexId) -> Event {
        self.finish_service(time, node);
        let queue_change = self.start_service(node);
        Event { time, node, kind: EventKind::CompletionContinue, queue_change }
    }

    /// Full consistency check of the redundant bookkeeping; used in
    /// tests and debug runs.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.graph.n_vertices();
        for v in 0..n {
            let active = self.state.active.contains(v);
            let nbr_active =
                self.graph.neighbors(v).iter().filter(|&&u| self.state.active.contains(u)).count();
            if self.blocked_count[v] as usize != nbr_active {
                return Err(format!("blocked count mismatch at node {v}"));
            }
            if active && nbr_active > 0 {
                return Err(format!("independence violated at node {v}"));
            }
            if active == (self.state.in_service[v] == Service::Idle) {
                return Err(format!("service flag out of sync at node {v}"));
            }
        }
        if let Some(t) = self.tagged.as_ref() {
            if t.waiting.len() as u64 != self.state.queues[t.node] {
                return Err("tagged waiting queue out of sync".into());
            }
            let real = self.state.in_service[t.node] == Service::Real;
            if real != t.in_service_arrival.is_some() {
                return Err("tagged service marker out of sync".into());
            }
        }
        Ok(())
    }
}

// ======================================================================
// Activity-only fast path
// ======================================================================

/// Simulator of the activity marginal alone. The activity process does
/// not depend on the queues: it activates eligible nodes at rate `nu`
/// and deactivates active nodes at rate `p mu` (completions that keep
/// the medium do not change the activity state and are skipped).
pub struct ActivitySim<'a> {
    graph: &'a ConflictGraph,
    nu: Vec<f64>,
    pmu: Vec<f64>,
    active: VertexSet,
    blocked_count: Vec<u32>,
    clock: f64,
    rng: ChaCha12Rng,
    n_events: u64,
}

impl<'a> ActivitySim<'a> {
    pub fn new(
        graph: &'a ConflictGraph,
        params: &NetworkParams,
        start_active: &VertexSet,
        seed: u64,
    ) -> Result<ActivitySim<'a>, SimError> {
        let n = graph.n_vertices();
        let rates = params.resolve(n)?;
        let mut blocked_count = vec![0u32; n];
        for v in start_active.iter() {
            for &u in graph.neighbors(v) {
                blocked_count[u] += 1;
            }
        }
        Ok(ActivitySim {
            graph,
            nu: rates.per.iter().map(|r| r.nu).collect(),
            pmu: rates.per.iter().map(|r| r.p * r.mu).collect(),
            active: start_active.clone(),
            blocked_count,
            clock: 0.0,
            rng: ChaCha12Rng::seed_from_u64(seed),
            n_events: 0,
        })
    }

    pub fn active(&self) -> &VertexSet {
        &self.active
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    /// Advances one activity event; returns the holding time spent in
    /// the pre-event configuration.
    pub fn step(&mut self) -> f64 {
        let n = self.graph.n_vertices();
        let mut act_rate = 0.0f64;
        let mut deact_rate = 0.0f64;
        for v in 0..n {
            if self.active.contains(v) {
                deact_rate += self.pmu[v];
            } else if self.blocked_count[v] == 0 {
                act_rate += self.nu[v];
            }
        }
        let total = act_rate + deact_rate;
        debug_assert!(total > 0.0);
        let u: f64 = self.rng.gen();
        let dt = -(1.0 - u).ln() / total;
        self.clock += dt;
        self.n_events += 1;

        let mut r = self.rng.gen::<f64>() * total;
        if r < act_rate {
            let mut node = usize::MAX;
            for v in 0..n {
                if !self.active.contains(v) && self.blocked_count[v] == 0 {
                    node = v;
                    r -= self.nu[v];
                    if r < 0.0 {
                        break;
                    }
                }
            }
            self.active.insert(node);
            for &u in self.graph.neighbors(node) {
                self.blocked_count[u] += 1;
            }
        } else {
            r -= act_rate;
            let mut node = usize::MAX;
            for v in 0..n {
                if self.active.contains(v) {
                    node = v;
                    r -= self.pmu[v];
                    if r < 0.0 {
                        break;
                    }
                }
            }
            self.active.remove(node);
            for &u in self.graph.neighbors(node) {
                self.blocked_count[u] -= 1;
            }
        }
        dt
    }
}

/// Durations of first passages between activity configurations.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionSamples {
    pub durations: Vec<f64>,
    /// Samples that hit the event cap before reaching the target; they
    /// are excluded from `durations`, never averaged in silently.
    pub n_censored: usize,
    pub event_cap: u64,
}

impl TransitionSamples {
    pub fn mean(&self) -> f64 {
        self.durations.iter().sum::<f64>() / self.durations.len() as f64
    }
}

/// Default per-sample event cap for first-passage sampling.
pub const DEFAULT_EVENT_CAP: u64 = 10_000_000_000;

/// Samples independent first-passage times of the activity process from
/// one dominant configuration to the other. Each sample runs on its own
/// random stream seeded `base_seed + index`, in parallel.
pub fn sample_transition_times(
    graph: &ConflictGraph,
    params: &NetworkParams,
    from: Parity,
    n_samples: usize,
    base_seed: u64,
    event_cap: u64,
) -> Result<TransitionSamples, SimError> {
    let (even, odd) = graph.dominant_sets()?;
    let (start, target) = match from {
        Parity::Even => (&even, &odd),
        Parity::Odd => (&odd, &even),
    };
    params.resolve(graph.n_vertices())?;

    let results: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut sim = ActivitySim::new(graph, params, start, base_seed + k as u64)
                .expect("params validated above");
            while sim.active() != target {
                sim.step();
                if sim.n_events() >= event_cap {
                    return None;
                }
            }
            Some(sim.clock())
        })
        .collect();

    let mut durations = Vec::with_capacity(n_samples);
    let mut n_censored = 0;
    for r in results {
        match r {
            Some(t) => durations.push(t),
            None => n_censored += 1,
        }
    }
    Ok(TransitionSamples { durations, n_censored, event_cap })
}

/// Samples the activity configuration at evenly spaced times after a
/// burn-in and returns per-state counts. The spacing should be a few
/// relaxation times of the chain so the draws decorrelate.
pub fn sample_occupancy(
    space: &StateSpace,
    params: &NetworkParams,
    n_samples: usize,
    spacing: f64,
    burn_in: f64,
    seed: u64,
) -> Result<(Vec<u64>, u64), SimError> {
    if !(spacing > 0.0) || !(burn_in >= 0.0) {
        return Err(SimError::BadWindow(format!(
            "need spacing > 0 and burn_in >= 0, got {spacing} and {burn_in}"
        )));
    }
    let graph = space.graph();
    let (even, _) = graph.dominant_sets()?;
    let mut sim = ActivitySim::new(graph, params, &even, seed)?;
    let mut counts = vec![0u64; space.n_states()];
    let mut next_sample = burn_in;
    let mut taken = 0usize;
    while taken < n_samples {
        let before = sim.active().to_bits64();
        let t0 = sim.clock();
        sim.step();
        let t1 = sim.clock();
        while taken < n_samples && next_sample >= t0 && next_sample < t1 {
            let id: StateId = space
                .id_of_bits(before)
                .expect("simulated configuration must be a state");
            counts[id as usize] += 1;
            next_sample += spacing;
            taken += 1;
        }
    }
    Ok((counts, sim.n_events()))
}

// ======================================================================
// Delay experiment
// ======================================================================

/// One completed renewal cycle: an even period (first entrance into the
/// even dominant state after a visit to the odd one, until the first
/// entrance into the odd dominant state) followed by the odd period
/// back. `s_e` is the time spent exactly in the even dominant state
/// during the even period; `u_e = t_even - s_e` is the remainder.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CycleStats {
    pub start: f64,
    pub t_even: f64,
    pub t_odd: f64,
    pub s_e: f64,
    pub u_e: f64,
    /// Integral of the tagged queue length over the cycle.
    pub queue_area: f64,
    /// Delay samples completed during the cycle at the tagged node.
    pub n_delays: u64,
    pub delay_sum: f64,
}

impl CycleStats {
    pub fn duration(&self) -> f64 {
        self.t_even + self.t_odd
    }
}

/// A point estimate with a symmetric confidence half-width.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
    pub confidence: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.value).abs() <= self.half_width
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    /// Delay samples kept verbatim in the record (streamed statistics
    /// always cover all of them).
    pub max_stored_delays: usize,
    /// Batches for the within-run confidence intervals.
    pub n_batches: usize,
    pub confidence: f64,
}

impl ExperimentConfig {
    pub fn new(horizon: f64, warmup: f64, seed: u64) -> Self {
        ExperimentConfig {
            horizon,
            warmup,
            seed,
            max_stored_delays: 200_000,
            n_batches: 32,
            confidence: 0.95,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon > 0.0) || !(self.warmup >= 0.0) || self.warmup >= self.horizon {
            return Err(SimError::BadWindow(format!(
                "need 0 <= warmup < horizon, got warmup = {}, horizon = {}",
                self.warmup, self.horizon
            )));
        }
        if self.n_batches < 2 {
            return Err(SimError::BadWindow("need at least two batches".into()));
        }
        Ok(())
    }
}

/// Per-node event tallies over the measurement window.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct NodeCounts {
    pub arrivals: u64,
    pub activations: u64,
    pub back_offs: u64,
    pub continues: u64,
}

/// Result of one delay-experiment run. Queueing discipline at every
/// node is FIFO; delay samples are per-packet sojourn times
/// (departure minus arrival) at the tagged node. Dummy transmissions
/// never contribute delay samples and count zero toward the queue
/// length `L(t) = Q(t) + 1{real packet in service}`.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationRecord {
    pub params: NetworkParams,
    pub config: ExperimentConfig,
    pub tagged_node: VertexId,
    pub discipline: &'static str,
    pub n_events: u64,
    pub measured_time: f64,
    /// Time-average of `L(t)` at the tagged node over the window.
    pub queue_time_average: Estimate,
    /// Mean per-packet delay at the tagged node over the window.
    pub mean_delay: Estimate,
    pub n_delays: u64,
    /// `|E L - lambda E W|` and the joint half-width it must stay
    /// within for Little's-law consistency.
    pub little_residual: f64,
    pub little_joint_half_width: f64,
    pub little_consistent: bool,
    /// Fraction of the window each node was active.
    pub activity_fraction: Vec<f64>,
    /// Fraction of the window each node was inactive with no active
    /// neighbour.
    pub unblocked_fraction: Vec<f64>,
    pub event_counts: Vec<NodeCounts>,
    pub cycles: Vec<CycleStats>,
    /// Even-period durations, i.i.d. copies of the even-to-odd
    /// first-passage time.
    pub t_even_samples: Vec<f64>,
    pub t_odd_samples: Vec<f64>,
    pub delays: Vec<f64>,
    pub delays_truncated: bool,
    /// Total waiting queue across all nodes at mid-window and at the
    /// end, as a crude divergence diagnostic.
    pub mid_total_queue: u64,
    pub end_total_queue: u64,
}

/// Runs one tagged-node delay experiment on a torus. The tagged node is
/// the smallest odd-parity vertex id. Starts in the even dominant
/// configuration with empty queues; statistics cover
/// `[warmup, horizon]`, and renewal cycles straddling either boundary
/// are discarded whole. Refuses to run when the necessary stability
/// condition fails.
pub fn run_delay_experiment(
    graph: &ConflictGraph,
    params: &NetworkParams,
    config: &ExperimentConfig,
) -> Result<SimulationRecord, SimError> {
    config.validate()?;
    match stability_probe(params) {
        StabilityVerdict::Overloaded => {
            return Err(SimError::Overloaded { rho: params.rho() });
        }
        StabilityVerdict::BelowSigmaThreshold => {
            let rho = params.rho();
            return Err(SimError::BelowSigmaThreshold {
                sigma: params.sigma(),
                threshold: rho / (2.0 * (1.0 - rho)),
            });
        }
        StabilityVerdict::Stable => {}
    }
    let (even, odd) = graph.dominant_sets()?;
    let tagged_node = (0..graph.n_vertices())
        .find(|&v| graph.parity(v) == Some(Parity::Odd))
        .expect("a torus has odd vertices");
    let lambda_tagged = params.rates_for(tagged_node).lambda;

    let mut sim = Simulator::new(graph, params, &even, Some(tagged_node), config.seed)?;
    let n = graph.n_vertices();
    let window = config.horizon - config.warmup;
    let batch_len = window / config.n_batches as f64;

    // Accumulators over the measurement window.
    let mut queue_area = 0.0f64; // integral of L(t)
    let mut active_time = vec![0.0f64; n];
    let mut unblocked_time = vec![0.0f64; n];
    let mut counts = vec![NodeCounts::default(); n];
    let mut batch_area = vec![0.0f64; config.n_batches];
    let mut batch_delay = vec![RunningStats::new(); config.n_batches];
    let mut delays_all = RunningStats::new();
    let mut stored_delays = Vec::new();
    let mut delays_truncated = false;
    let mut mid_total_queue = 0u64;
    let mut delay_cursor = 0usize;

    // Renewal bookkeeping.
    #[derive(Clone, Copy, PartialEq)]
    enum Phase {
        /// No complete cycle can start yet (waiting for an entrance to
        /// the even dominant state after a visit to the odd one).
        Priming,
        Even,
        Odd,
    }
    let mut phase = Phase::Priming;
    let mut last_dominant = Parity::Even; // start state is the even dominant one
    let mut cycle_start = 0.0f64;
    let mut odd_start = 0.0f64;
    let mut s_e = 0.0f64;
    let mut cycle_area = 0.0f64;
    let mut cycle_delays = 0u64;
    let mut cycle_delay_sum = 0.0f64;
    let mut cycles: Vec<CycleStats> = Vec::new();

    let mid = 0.5 * (config.warmup + config.horizon);
    let mut seen_mid = false;

    loop {
        let t0 = sim.state().clock;
        if t0 >= config.horizon {
            break;
        }
        let l_before = sim.state().queues[tagged_node]
            + u64::from(sim.state().in_service[tagged_node] == Service::Real);
        let in_even_dominant = sim.state().active == even;
        let event = sim.step();
        let t1 = event.time;

        // Window overlap of the holding interval [t0, t1).
        let lo = t0.max(config.warmup);
        let hi = t1.min(config.horizon);
        if hi > lo {
            let dt = hi - lo;
            queue_area += l_before as f64 * dt;
            // Pre-event activity/unblocked occupation: only the event
            // node's activity can differ from the post-event state.
            for v in 0..n {
                let was_active = if v == event.node {
                    match event.kind {
                        EventKind::Activation => false,
                        EventKind::CompletionBackOff => true,
                        _ => sim.state().active.contains(v),
                    }
                } else {
                    sim.state().active.contains(v)
                };
                if was_active {
                    active_time[v] += dt;
                }
            }
            // Unblocked (inactive, no active neighbour) before the event:
            // reconstruct from the post-event state and the event.
            for v in 0..n {
                if was_unblocked_before(&sim, &event, v) {
                    unblocked_time[v] += dt;
                }
            }
            // Batched queue integral.
            let b0 = (((lo - config.warmup) / batch_len) as usize).min(config.n_batches - 1);
            let b1 = (((hi - config.warmup) / batch_len) as usize).min(config.n_batches - 1);
            if b0 == b1 {
                batch_area[b0] += l_before as f64 * dt;
            } else {
                let mut a = lo;
                for b in b0..=b1 {
                    let end = (config.warmup + (b + 1) as f64 * batch_len).min(hi);
                    batch_area[b] += l_before as f64 * (end - a);
                    a = end;
                }
            }
        }
        if !seen_mid && t1 >= mid {
            seen_mid = true;
            mid_total_queue = sim.state().queues.iter().sum();
        }

        // Event tallies within the window.
        if t1 >= config.warmup && t1 < config.horizon {
            let c = &mut counts[event.node];
            match event.kind {
                EventKind::Arrival => c.arrivals += 1,
                EventKind::Activation => c.activations += 1,
                EventKind::CompletionBackOff => c.back_offs += 1,
                EventKind::CompletionContinue => c.continues += 1,
            }
        }

        // Delay samples completed by this event.
        while delay_cursor < sim.completed_delays.len() {
            let (dep, w) = sim.completed_delays[delay_cursor];
            delay_cursor += 1;
            if dep >= config.warmup && dep < config.horizon {
                delays_all.push(w);
                let b = (((dep - config.warmup) / batch_len) as usize).min(config.n_batches - 1);
                batch_delay[b].push(w);
                if stored_delays.len() < config.max_stored_delays {
                    stored_delays.push(w);
                } else {
                    delays_truncated = true;
                }
                if phase != Phase::Priming {
                    cycle_delays += 1;
                    cycle_delay_sum += w;
                }
            }
        }
        if delay_cursor == sim.completed_delays.len() && delay_cursor > 65_536 {
            sim.completed_delays.clear();
            delay_cursor = 0;
        }

        // Renewal bookkeeping (independent of the window; cycles are
        // filtered by the window afterwards).
        if phase == Phase::Even {
            cycle_area += l_before as f64 * (t1 - t0);
            if in_even_dominant {
                s_e += t1 - t0;
            }
        } else if phase == Phase::Odd {
            cycle_area += l_before as f64 * (t1 - t0);
        }
        let now_even = sim.state().active == even;
        let now_odd = sim.state().active == odd;
        if now_even && last_dominant == Parity::Odd {
            // First entrance into E after a visit to O.
            if phase == Phase::Odd {
                cycles.push(CycleStats {
                    start: cycle_start,
                    t_even: odd_start - cycle_start,
                    t_odd: t1 - odd_start,
                    s_e,
                    u_e: (odd_start - cycle_start) - s_e,
                    queue_area: cycle_area,
                    n_delays: cycle_delays,
                    delay_sum: cycle_delay_sum,
                });
            }
            phase = Phase::Even;
            cycle_start = t1;
            s_e = 0.0;
            cycle_area = 0.0;
            cycle_delays = 0;
            cycle_delay_sum = 0.0;
        } else if now_odd && last_dominant == Parity::Even && phase == Phase::Even {
            phase = Phase::Odd;
            odd_start = t1;
        }
        if now_even {
            last_dominant = Parity::Even;
        } else if now_odd {
            last_dominant = Parity::Odd;
        }
    }

    // Keep only cycles fully inside the window.
    let complete: Vec<CycleStats> = cycles
        .into_iter()
        .filter(|c| c.start >= config.warmup && c.start + c.duration() <= config.horizon)
        .collect();

    // Within-run confidence intervals from batch means.
    let mut batch_l = RunningStats::new();
    for b in 0..config.n_batches {
        batch_l.push(batch_area[b] / batch_len);
    }
    let queue_time_average = Estimate {
        value: queue_area / window,
        half_width: batch_l.ci_half_width(config.confidence),
        confidence: config.confidence,
    };
    let mut batch_w = RunningStats::new();
    for b in 0..config.n_batches {
        if batch_delay[b].count() > 0 {
            batch_w.push(batch_delay[b].mean());
        }
    }
    let mean_delay = Estimate {
        value: delays_all.mean(),
        half_width: batch_w.ci_half_width(config.confidence),
        confidence: config.confidence,
    };

    let little_residual = (queue_time_average.value - lambda_tagged * mean_delay.value).abs();
    let little_joint_half_width = (queue_time_average.half_width.powi(2)
        + (lambda_tagged * mean_delay.half_width).powi(2))
    .sqrt();
    let little_consistent = little_residual <= little_joint_half_width;

    Ok(SimulationRecord {
        params: params.clone(),
        config: config.clone(),
        tagged_node,
        discipline: "FIFO",
        n_events: sim.n_events(),
        measured_time: window,
        queue_time_average,
        mean_delay,
        n_delays: delays_all.count(),
        little_residual,
        little_joint_half_width,
        little_consistent,
        activity_fraction: active_time.iter().map(|t| t / window).collect(),
        unblocked_fraction: unblocked_time.iter().map(|t| t / window).collect(),
        event_counts: counts,
        t_even_samples: complete.iter().map(|c| c.t_even).collect(),
        t_odd_samples: complete.iter().map(|c| c.t_odd).collect(),
        cycles: complete,
        delays: stored_delays,
        delays_truncated,
        mid_total_queue,
        end_total_queue: sim.state().queues.iter().sum(),
    })
}

/// Whether node `v` was inactive with no active neighbour just before
/// `event`, reconstructed from the post-event state.
fn was_unblocked_before(sim: &Simulator, event: &Event, v: VertexId) -> bool {
    let active_now = |u: VertexId| sim.state().active.contains(u);
    let was_active = |u: VertexId| {
        if u == event.node {
            match event.kind {
                EventKind::Activation => false,
                EventKind::CompletionBackOff => true,
                _ => active_now(u),
            }
        } else {
            active_now(u)
        }
    };
    !was_active(v) && sim.graph.neighbors(v).iter().all(|&u| !was_active(u))
}

/// Replica-aggregated delay experiment: replicas run in parallel on
/// seeds `base_seed + index` and are combined with replica-level
/// t-intervals.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicatedDelayReport {
    pub replicas: Vec<SimulationRecord>,
    pub mean_delay: Estimate,
    pub queue_time_average: Estimate,
    pub mean_t_even: Estimate,
    /// Per-replica ratio (mean delay) / (mean even-period duration),
    /// aggregated across replicas.
    pub delay_over_transition: Estimate,
    pub little_residual: f64,
    pub little_joint_half_width: f64,
    pub little_consistent: bool,
    pub n_cycles_total: usize,
}

pub fn run_replicated_delay_experiment(
    graph: &ConflictGraph,
    params: &NetworkParams,
    config: &ExperimentConfig,
    n_replicas: usize,
) -> Result<ReplicatedDelayReport, SimError> {
    if n_replicas < 2 {
        return Err(SimError::BadWindow("need at least two replicas".into()));
    }
    let records: Result<Vec<SimulationRecord>, SimError> = (0..n_replicas)
        .into_par_iter()
        .map(|k| {
            let mut cfg = config.clone();
            cfg.seed = config.seed + k as u64;
            run_delay_experiment(graph, params, &cfg)
        })
        .collect();
    let records = records?;

    let agg = |xs: Vec<f64>, confidence: f64| -> Estimate {
        let mut st = RunningStats::new();
        for x in &xs {
            st.push(*x);
        }
        Estimate { value: st.mean(), half_width: st.ci_half_width(confidence), confidence }
    };
    let c = config.confidence;
    let mean_delay = agg(records.iter().map(|r| r.mean_delay.value).collect(), c);
    let queue_time_average =
        agg(records.iter().map(|r| r.queue_time_average.value).collect(), c);
    let t_even_means: Vec<f64> = records
        .iter()
        .map(|r| r.t_even_samples.iter().sum::<f64>() / r.t_even_samples.len().max(1) as f64)
        .collect();
    let mean_t_even = agg(t_even_means.clone(), c);
    let ratios: Vec<f64> = records
        .iter()
        .zip(&t_even_means)
        .map(|(r, t)| r.mean_delay.value / t)
        .collect();
    let delay_over_transition = agg(ratios, c);

    let lambda_tagged = params.rates_for(records[0].tagged_node).lambda;
    let little_residual =
        (queue_time_average.value - lambda_tagged * mean_delay.value).abs();
    let little_joint_half_width = (queue_time_average.half_width.powi(2)
        + (lambda_tagged * mean_delay.half_width).powi(2))
    .sqrt();

    Ok(ReplicatedDelayReport {
        n_cycles_total: records.iter().map(|r| r.cycles.len()).sum(),
        little_consistent: little_residual <= little_joint_half_width,
        little_residual,
        little_joint_half_width,
        replicas: records,
        mean_delay,
        queue_time_average,
        mean_t_even,
        delay_over_transition,
    })
}

// ======================================================================
// Renewal statistics
// ======================================================================

/// Minimum number of complete cycles for renewal summaries.
pub const MIN_CYCLES: usize = 30;

#[derive(Clone, Debug, Serialize)]
pub struct RenewalSummary {
    pub n_cycles: usize,
    pub mean_t_even: Estimate,
    pub mean_t_odd: Estimate,
    pub mean_s_e: Estimate,
    pub mean_u_e: Estimate,
    /// `sum s_e / sum (t_even + t_odd)`: the renewal-reward estimate of
    /// the stationary probability of the even dominant state.
    pub even_dominant_fraction: Estimate,
    /// `mean u_e / mean t_even`.
    pub starvation_ratio: f64,
    pub total_cycle_time: f64,
}

/// Summarizes complete renewal cycles: means of the period lengths and
/// the ratio estimators, with cycle-level confidence intervals (the
/// ratio interval uses the delta method).
pub fn renewal_statistics(
    cycles: &[CycleStats],
    confidence: f64,
) -> Result<RenewalSummary, SimError> {
    if cycles.len() < MIN_CYCLES {
        return Err(SimError::TooFewCycles { got: cycles.len(), need: MIN_CYCLES });
    }
    let n = cycles.len() as f64;
    let stat = |f: &dyn Fn(&CycleStats) -> f64| -> Estimate {
        let mut st = RunningStats::new();
        for c in cycles {
            st.push(f(c));
        }
        Estimate { value: st.mean(), half_width: st.ci_half_width(confidence), confidence }
    };
    let mean_t_even = stat(&|c| c.t_even);
    let mean_t_odd = stat(&|c| c.t_odd);
    let mean_s_e = stat(&|c| c.s_e);
    let mean_u_e = stat(&|c| c.u_e);

    // Ratio estimator sum(s_e) / sum(duration) with a delta-method CI.
    let a_bar = mean_s_e.value;
    let b_bar: f64 = cycles.iter().map(|c| c.duration()).sum::<f64>() / n;
    let ratio = a_bar / b_bar;
    let mut s_aa = 0.0;
    let mut s_ab = 0.0;
    let mut s_bb = 0.0;
    for c in cycles {
        let da = c.s_e - a_bar;
        let db = c.duration() - b_bar;
        s_aa += da * da;
        s_ab += da * db;
        s_bb += db * db;
    }
    let var = (s_aa - 2.0 * ratio * s_ab + ratio * ratio * s_bb) / (n - 1.0);
    let se = (var / n).sqrt() / b_bar;
    let t = t_quantile(0.5 + confidence / 2.0, n - 1.0);
    let even_dominant_fraction =
        Estimate { value: ratio, half_width: t * se, confidence };

    Ok(RenewalSummary {
        n_cycles: cycles.len(),
        starvation_ratio: mean_u_e.value / mean_t_even.value,
        total_cycle_time: cycles.iter().map(|c| c.duration()).sum(),
        mean_t_even,
        mean_t_odd,
        mean_s_e,
        mean_u_e,
        even_dominant_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_space::ActivityLaw;
    use crate::stats::chi_square_gof;
    use approx::assert_relative_eq;

    fn torus(side: usize) -> ConflictGraph {
        ConflictGraph::torus(side).unwrap()
    }

    #[test]
    fn params_convention_and_validation() {
        let p = NetworkParams::from_rho_sigma(0.5, 50.0, 1.0).unwrap();
        assert_relative_eq!(p.base.lambda, 0.25);
        assert_relative_eq!(p.base.nu, 50.0);
        assert_relative_eq!(p.sigma(), 50.0);
        assert_relative_eq!(p.rho(), 0.5);
        assert!(NetworkParams::homogeneous(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(NetworkParams::homogeneous(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(NetworkParams::homogeneous(1.0, 1.0, 1.0, 1.5).is_err());

        let mut h = NetworkParams::homogeneous(0.1, 1.0, 2.0, 0.5).unwrap();
        h.overrides.insert(3, NodeRates { lambda: 0.2, mu: 1.0, nu: 2.0, p: 0.5 });
        assert!(!h.is_homogeneous());
        assert_relative_eq!(h.rates_for(3).lambda, 0.2);
        assert_relative_eq!(h.rates_for(2).lambda, 0.1);
        let json = serde_json::to_string(&h).unwrap();
        let back: NetworkParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn stability_probe_matches_threshold_formula() {
        let probe = |rho: f64, sigma: f64| {
            stability_probe(&NetworkParams::from_rho_sigma(rho, sigma, 1.0).unwrap())
        };
        assert_eq!(probe(0.5, 50.0), StabilityVerdict::Stable);
        assert_eq!(probe(0.5, 0.5), StabilityVerdict::BelowSigmaThreshold);
        assert_eq!(probe(0.5, 0.51), StabilityVerdict::Stable);
        assert_eq!(probe(1.0, 100.0), StabilityVerdict::Overloaded);
        assert_eq!(probe(0.8, 1.0), StabilityVerdict::BelowSigmaThreshold);
        assert_eq!(probe(0.8, 2.1), StabilityVerdict::Stable);
    }

    #[test]
    fn joint_simulator_preserves_independence_over_a_million_events() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.6, 5.0, 1.0).unwrap();
        let (even, _) = g.dominant_sets().unwrap();
        let mut sim = Simulator::new(&g, &params, &even, Some(1), 7).unwrap();
        for k in 0..1_000_000u64 {
            sim.step();
            if k % 100_000 == 0 {
                sim.check_invariants().unwrap();
            }
        }
        sim.check_invariants().unwrap();
        assert_eq!(sim.n_events(), 1_000_000);
    }

    #[test]
    fn from_even_start_no_odd_node_activates_first() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.4, 2.0, 1.0).unwrap();
        let (even, _) = g.dominant_sets().unwrap();
        for seed in 0..20 {
            let mut sim = Simulator::new(&g, &params, &even, None, seed).unwrap();
            let first_activity = loop {
                let e = sim.step();
                match e.kind {
                    EventKind::Activation => break e,
                    EventKind::CompletionBackOff => break e,
                    _ => {}
                }
            };
            // From the even dominant state every odd node is blocked, so
            // the first activity event must be an even node backing off.
            assert_eq!(first_activity.kind, EventKind::CompletionBackOff);
            assert_eq!(g.parity(first_activity.node), Some(Parity::Even));
        }
    }

    #[test]
    fn with_unit_backoff_probability_every_completion_deactivates() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.5, 3.0, 1.0).unwrap();
        assert_relative_eq!(params.base.p, 1.0);
        let (even, _) = g.dominant_sets().unwrap();
        let mut sim = Simulator::new(&g, &params, &even, None, 11).unwrap();
        for _ in 0..200_000 {
            let e = sim.step();
            assert_ne!(e.kind, EventKind::CompletionContinue);
        }
    }

    #[test]
    fn continue_events_appear_when_backoff_probability_is_partial() {
        let g = torus(4);
        let params = NetworkParams::homogeneous(0.1, 1.0, 1.0, 0.5).unwrap();
        let (even, _) = g.dominant_sets().unwrap();
        let mut sim = Simulator::new(&g, &params, &even, None, 13).unwrap();
        let mut back_offs = 0u64;
        let mut continues = 0u64;
        for _ in 0..200_000 {
            match sim.step().kind {
                EventKind::CompletionBackOff => back_offs += 1,
                EventKind::CompletionContinue => continues += 1,
                _ => {}
            }
        }
        let total = (back_offs + continues) as f64;
        let share = back_offs as f64 / total;
        // Binomial(total, 1/2): five-sigma envelope.
        assert!((share - 0.5).abs() < 5.0 * 0.5 / total.sqrt());
    }

    #[test]
    fn activity_only_path_matches_joint_marginal_rates() {
        // The activity marginal activates eligible nodes at nu and
        // deactivates active nodes at p*mu. Audit empirical per-node
        // rates on the fast path.
        let g = torus(4);
        let params = NetworkParams::homogeneous(0.3, 2.0, 3.0, 0.5).unwrap();
        let (even, _) = g.dominant_sets().unwrap();
        let mut sim = ActivitySim::new(&g, &params, &even, 17).unwrap();
        let n = g.n_vertices();
        let mut unblocked_time = vec![0.0f64; n];
        let mut active_time = vec![0.0f64; n];
        let mut activations = vec![0u64; n];
        let mut deactivations = vec![0u64; n];
        for _ in 0..2_000_000 {
            let before = sim.active().clone();
            let blocked: Vec<bool> = (0..n)
                .map(|v| g.neighbors(v).iter().any(|&u| before.contains(u)))
                .collect();
            let dt = sim.step();
            for v in 0..n {
                if before.contains(v) {
                    active_time[v] += dt;
                } else if !blocked[v] {
                    unblocked_time[v] += dt;
                }
            }
            let after = sim.active();
            for v in 0..n {
                match (before.contains(v), after.contains(v)) {
                    (false, true) => activations[v] += 1,
                    (true, false) => deactivations[v] += 1,
                    _ => {}
                }
            }
        }
        for v in 0..n {
            // Poisson counts: five-sigma envelopes around rate * time.
            let expect_act = 3.0 * unblocked_time[v];
            let tol = 5.0 * expect_act.sqrt();
            assert!(
                ((activations[v] as f64) - expect_act).abs() < tol,
                "activation rate off at node {v}: {} vs {expect_act}",
                activations[v]
            );
            let expect_deact = 0.5 * 2.0 * active_time[v];
            let tol = 5.0 * expect_deact.sqrt();
            assert!(
                ((deactivations[v] as f64) - expect_deact).abs() < tol,
                "deactivation rate off at node {v}: {} vs {expect_deact}",
                deactivations[v]
            );
        }
    }

    #[test]
    fn occupancy_chi_square_against_exact_stationary_law() {
        let g = torus(4);
        let space = StateSpace::enumerate(&g).unwrap();
        let sigma = 2.0;
        let params = NetworkParams::from_rho_sigma(0.0, sigma, 1.0).unwrap();
        let law = ActivityLaw::homogeneous(&space, sigma).unwrap();
        // Kernel spectral gap at sigma = 2 is 2.310e-3 per uniformized
        // step, i.e. 7.39e-2 per unit time at q_max = 32; five
        // relaxation times spacing decorrelates the draws.
        let spacing = 5.0 / (2.309910034835e-3 * 32.0);
        let (counts, n_events) =
            sample_occupancy(&space, &params, 4_000, spacing, 10.0 * spacing, 20250823).unwrap();
        assert!(n_events > 1_000_000);
        let probs: Vec<f64> = (0..space.n_states() as StateId).map(|i| law.prob(i)).collect();
        let outcome = chi_square_gof(&counts, &probs, 8.0, 0.01);
        assert!(
            outcome.passed,
            "chi-square {} above critical {} with {} bins",
            outcome.statistic, outcome.critical, outcome.n_bins
        );
    }

    #[test]
    fn transition_time_sampling_agrees_with_exact_solver() {
        let g = torus(4);
        let sigma = 10.0;
        let params = NetworkParams::from_rho_sigma(0.0, sigma, 1.0).unwrap();
        let samples =
            sample_transition_times(&g, &params, Parity::Even, 200, 4242, DEFAULT_EVENT_CAP)
                .unwrap();
        assert_eq!(samples.n_censored, 0);
        assert_eq!(samples.durations.len(), 200);
        // Exact mean first-passage time from the uniformized-kernel
        // solve: 2.680142936572e5 steps at q_max = 160.
        let exact = 2.680142936572e5 / 160.0;
        let mut st = RunningStats::new();
        for &d in &samples.durations {
            st.push(d);
        }
        let half = st.ci_half_width(0.99);
        assert!(
            (st.mean() - exact).abs() <= half,
            "sample mean {} outside 99% CI {} of exact {exact}",
            st.mean(),
            half
        );
        // Symmetry: the reverse passage has the same mean.
        let back =
            sample_transition_times(&g, &params, Parity::Odd, 200, 993311, DEFAULT_EVENT_CAP)
                .unwrap();
        let mut st_back = RunningStats::new();
        for &d in &back.durations {
            st_back.push(d);
        }
        let joint = (half.powi(2) + st_back.ci_half_width(0.99).powi(2)).sqrt();
        assert!((st.mean() - st_back.mean()).abs() <= joint);
        // Low-sigma passages are quick.
        let quick = sample_transition_times(
            &g,
            &NetworkParams::from_rho_sigma(0.0, 1.0, 1.0).unwrap(),
            Parity::Even,
            200,
            5,
            DEFAULT_EVENT_CAP,
        )
        .unwrap();
        let mean_quick = quick.mean();
        // Exact solve gives 2.053037135514e3 steps at q_max = 16.
        let exact_quick = 2.053037135514e3 / 16.0;
        let mut st_quick = RunningStats::new();
        for &d in &quick.durations {
            st_quick.push(d);
        }
        assert!(
            (mean_quick - exact_quick).abs() <= st_quick.ci_half_width(0.99),
            "sigma = 1 passage mean {mean_quick} outside CI of exact {exact_quick}"
        );
    }

    #[test]
    fn censoring_flags_samples_instead_of_averaging_them() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.0, 10.0, 1.0).unwrap();
        let samples = sample_transition_times(&g, &params, Parity::Even, 20, 77, 500).unwrap();
        assert!(samples.n_censored > 0, "a 500-event cap must censor some passages");
        assert_eq!(samples.durations.len() + samples.n_censored, 20);
    }

    #[test]
    fn delay_experiment_record_is_internally_consistent() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.5, 5.0, 1.0).unwrap();
        let config = ExperimentConfig::new(30_000.0, 3_000.0, 99);
        let record = run_delay_experiment(&g, &params, &config).unwrap();

        assert_eq!(record.tagged_node, 1, "tagged node is the smallest odd id");
        assert_eq!(record.discipline, "FIFO");
        assert!(record.cycles.len() >= MIN_CYCLES, "got {} cycles", record.cycles.len());
        // Accounting identity: consecutive complete cycles tile the span
        // between the first start and the last end.
        let first = record.cycles.first().unwrap();
        let last = record.cycles.last().unwrap();
        let span = last.start + last.duration() - first.start;
        let summed: f64 = record.cycles.iter().map(|c| c.duration()).sum();
        assert!(summed <= span * (1.0 + 1e-9));
        assert!(
            summed >= 0.95 * span,
            "complete cycles should cover nearly the whole span: {summed} vs {span}"
        );
        for c in &record.cycles {
            assert!(c.t_even > 0.0 && c.t_odd > 0.0);
            assert!(c.s_e >= 0.0 && c.s_e <= c.t_even);
            assert_relative_eq!(c.u_e, c.t_even - c.s_e, epsilon = 1e-9);
        }
        assert!(record.little_consistent, "Little residual {} > {}",
            record.little_residual, record.little_joint_half_width);
        assert!(record.n_delays > 1000);
        // theta <= 1/2 per node, and the tagged node gets some service.
        for &theta in &record.activity_fraction {
            assert!(theta < 0.5);
        }
        assert!(record.activity_fraction[record.tagged_node] > 0.05);
    }

    #[test]
    fn generator_audit_on_the_joint_chain() {
        let g = torus(4);
        let params = NetworkParams::homogeneous(0.2, 1.5, 4.0, 0.8).unwrap();
        let config = ExperimentConfig::new(40_000.0, 2_000.0, 314159);
        let record = run_delay_experiment(&g, &params, &config).unwrap();
        let window = record.measured_time;
        for v in 0..g.n_vertices() {
            let c = &record.event_counts[v];
            // Arrivals: Poisson(lambda * window).
            let expect = 0.2 * window;
            assert!(
                ((c.arrivals as f64) - expect).abs() < 5.0 * expect.sqrt(),
                "arrival count off at node {v}"
            );
            // Activations: rate nu while unblocked.
            let expect = 4.0 * record.unblocked_fraction[v] * window;
            assert!(
                ((c.activations as f64) - expect).abs() < 5.0 * expect.sqrt().max(1.0),
                "activation count off at node {v}: {} vs {expect}",
                c.activations
            );
            // Completions: rate mu while active, split p : 1 - p.
            let expect = 1.5 * record.activity_fraction[v] * window;
            let got = (c.back_offs + c.continues) as f64;
            assert!((got - expect).abs() < 5.0 * expect.sqrt().max(1.0));
            let share = c.back_offs as f64 / got;
            assert!((share - 0.8).abs() < 5.0 * (0.8f64 * 0.2 / got).sqrt());
        }
    }

    #[test]
    fn renewal_statistics_recover_even_dominant_fraction() {
        let g = torus(4);
        let space = StateSpace::enumerate(&g).unwrap();
        let sigma = 5.0;
        let params = NetworkParams::from_rho_sigma(0.5, sigma, 1.0).unwrap();
        let config = ExperimentConfig::new(60_000.0, 2_000.0, 2024);
        let record = run_delay_experiment(&g, &params, &config).unwrap();
        let summary = renewal_statistics(&record.cycles, 0.99).unwrap();
        assert!(summary.n_cycles >= MIN_CYCLES);

        // Renewal-reward: fraction of cycle time in the even dominant
        // state equals its stationary probability.
        let law = ActivityLaw::homogeneous(&space, sigma).unwrap();
        let (e_id, _) = space.dominant_ids().unwrap();
        let pi_e = law.prob(e_id);
        assert_relative_eq!(pi_e, 1.123444110795e-1, max_relative = 1e-9);
        assert!(
            summary.even_dominant_fraction.contains(pi_e),
            "estimate {} +/- {} misses pi(E) = {pi_e}",
            summary.even_dominant_fraction.value,
            summary.even_dominant_fraction.half_width
        );
        // Mean even and odd periods agree within joint CIs (symmetry).
        let d = (summary.mean_t_even.value - summary.mean_t_odd.value).abs();
        let joint = (summary.mean_t_even.half_width.powi(2)
            + summary.mean_t_odd.half_width.powi(2))
        .sqrt();
        assert!(d <= joint);
        assert!(matches!(
            renewal_statistics(&record.cycles[..10], 0.95),
            Err(SimError::TooFewCycles { .. })
        ));
    }

    #[test]
    fn mean_activity_rises_toward_half_with_sigma() {
        let g = torus(4);
        let space = StateSpace::enumerate(&g).unwrap();
        let n = g.n_vertices() as f64;
        let mut last = 0.0;
        for sigma in [5.0, 20.0, 100.0] {
            let params = NetworkParams::from_rho_sigma(0.0, sigma, 1.0).unwrap();
            let (even, _) = g.dominant_sets().unwrap();
            let mut sim = ActivitySim::new(&g, &params, &even, 606).unwrap();
            let mut active_time = 0.0f64;
            let mut total = 0.0f64;
            while total < 50_000.0 {
                let k = sim.active().len() as f64;
                let dt = sim.step();
                active_time += k * dt;
                total += dt;
            }
            let theta_bar = active_time / (n * total);
            // Exact network-mean activity from the stationary law.
            let law = ActivityLaw::homogeneous(&space, sigma).unwrap();
            let exact: f64 = (0..space.n_states() as StateId)
                .map(|i| law.prob(i) * space.n_active(i) as f64)
                .sum::<f64>()
                / n;
            assert!((theta_bar - exact).abs() < 0.01, "sigma={sigma}: {theta_bar} vs {exact}");
            assert!(theta_bar > last && theta_bar < 0.5);
            last = theta_bar;
        }
        assert!(last > 0.49, "at sigma = 100 mean activity approaches 1/2");
    }

    #[test]
    fn experiment_refuses_unstable_parameters() {
        let g = torus(4);
        let config = ExperimentConfig::new(1_000.0, 100.0, 1);
        let over = NetworkParams::from_rho_sigma(1.2, 50.0, 1.0).unwrap();
        assert!(matches!(
            run_delay_experiment(&g, &over, &config),
            Err(SimError::Overloaded { .. })
        ));
        let below = NetworkParams::from_rho_sigma(0.8, 1.0, 1.0).unwrap();
        assert!(matches!(
            run_delay_experiment(&g, &below, &config),
            Err(SimError::BelowSigmaThreshold { .. })
        ));
    }

    #[test]
    fn identical_seeds_reproduce_records_byte_for_byte() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.5, 5.0, 1.0).unwrap();
        let config = ExperimentConfig::new(5_000.0, 500.0, 4321);
        let a = run_delay_experiment(&g, &params, &config).unwrap();
        let b = run_delay_experiment(&g, &params, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let mut other = config.clone();
        other.seed = 4322;
        let c = run_delay_experiment(&g, &params, &other).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn replicated_experiment_aggregates_across_seeds() {
        let g = torus(4);
        let params = NetworkParams::from_rho_sigma(0.5, 5.0, 1.0).unwrap();
        let config = ExperimentConfig::new(20_000.0, 2_000.0, 1000);
        let report = run_replicated_delay_experiment(&g, &params, &config, 4).unwrap();
        assert_eq!(report.replicas.len(), 4);
        let seeds: Vec<u64> = report.replicas.iter().map(|r| r.config.seed).collect();
        assert_eq!(seeds, vec![1000, 1001, 1002, 1003]);
        assert!(report.mean_delay.value > 0.0);
        assert!(report.delay_over_transition.value > 0.0);
        assert!(report.n_cycles_total >= 4 * MIN_CYCLES);
        assert!(report.little_consistent);
    }
}
