//! Hard-core interference model on toric conflict graphs.
//!
//! A library for studying a random-access network whose activity process
//! is a hard-core (independent-set) Markov chain on an even `L x L` torus,
//! together with the per-node queues it serves. It provides:
//!
//! * exact enumeration of the independent-set configuration space and its
//!   product-form stationary law ([`state_space`]);
//! * the contour geometry of configurations (regions, cutsets, dual-torus
//!   curves) and the stripe / cross / cluster classification ([`contour`]);
//! * energy-landscape analysis: communication heights, the metastable
//!   valley around a dominant state, conductance and mixing-time bounds,
//!   and exact mean hitting times via the uniformized kernel
//!   ([`landscape`]);
//! * event-driven simulation of the joint activity-and-queue process,
//!   with delay, renewal-cycle, and stability diagnostics ([`sim`]).
//!
//! Exact analysis is limited to graphs small enough to enumerate
//! (`state_space::DEFAULT_ENUM_CAP` vertices by default); the simulator
//! accepts any conflict graph.

pub mod contour;
pub mod landscape;
pub mod sim;
pub mod state_space;
pub mod stats;
pub mod topology;
