//! Contour geometry of hard-core configurations on the even torus.
//!
//! A configuration `I` splits the vertices into the odd phase
//! `R_O(I) = I^O  u  (E \ I^E)` (occupied odd plus vacant even vertices)
//! and its complement, the even phase. Connected components of the two
//! phases are the regions of `I`. Each region `R` carries the edge cutset
//! `grad(R)`; replacing every cut edge by its orthogonal edge on the dual
//! torus yields the contour of `R`, a disjoint union of closed curves.
//! Two identities tie the geometry to the efficiency gap: for an odd
//! region `|grad(R)| = 4 (|R inter E| - |R inter O|)`, and summing over
//! odd regions the total contour length is `l(I) = 4 Delta(I)`.
//!
//! Odd regions are classified by homotopy: a region is a *stripe* when a
//! contour curve winds around the torus, a *cross* when the curves are
//! contractible but the distance-2 graph on its occupied odd vertices
//! contains a non-contractible cycle, and a *cluster* otherwise. A
//! configuration is in the stripe class when it has a stripe region, in
//! the cross class when it has a cross (and no stripe), else in the
//! cluster class. Winding numbers are computed by lifting walks to the
//! universal cover, so wrap-around multi-edges (relevant at `L = 4`) are
//! handled exactly.

use crate::state_space::{Configuration, StateId, StateSpace, StateSpaceError};
use crate::topology::{ConflictGraph, Parity, VertexId, VertexSet};
use serde::Serialize;
use std::collections::BTreeSet;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContourError {
    #[error("contour geometry requires a toric grid")]
    NotATorus,
    #[error("state is not in the cross class (it is {got:?})")]
    NotACross { got: GeometryClass },
    #[error("malformed contour: {0}")]
    Malformed(String),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
}

/// Stripe / cross / cluster, used both for single odd regions and for
/// whole configurations (where stripe takes precedence over cross).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryClass {
    Stripe,
    Cross,
    Cluster,
}

/// An edge of the dual torus, keyed by its left (horizontal) or lower
/// (vertical) endpoint in face coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct DualEdge {
    pub horizontal: bool,
    pub x: usize,
    pub y: usize,
}

/// A closed curve on the dual torus, with its homology class.
#[derive(Clone, Debug, Serialize)]
pub struct ContourCurve {
    pub edges: Vec<DualEdge>,
    /// Net number of wraps in the x and y directions.
    pub winding: (i64, i64),
    pub n_horizontal: usize,
    pub n_vertical: usize,
}

impl ContourCurve {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_winding(&self) -> bool {
        self.winding != (0, 0)
    }
}

/// A maximal connected component of one phase of a configuration.
#[derive(Clone, Debug)]
pub struct Region {
    pub phase: Parity,
    pub vertices: VertexSet,
    /// Members of the even parity class (vacant ones for an odd region).
    pub even_part: VertexSet,
    /// Members of the odd parity class (occupied ones for an odd region).
    pub odd_part: VertexSet,
    /// Edge cutset `grad(R)` as (inside, outside) pairs, sorted.
    pub cutset: Vec<(VertexId, VertexId)>,
    pub curves: Vec<ContourCurve>,
    /// Stripe/cross/cluster; only odd regions are classified.
    pub class: Option<GeometryClass>,
}

impl Region {
    pub fn contour_length(&self) -> usize {
        self.curves.iter().map(|c| c.len()).sum()
    }
}

/// All regions of a configuration, odd phase first, each phase ordered by
/// smallest contained vertex.
#[derive(Clone, Debug)]
pub struct RegionDecomposition {
    side: usize,
    delta: usize,
    regions: Vec<Region>,
}

impl RegionDecomposition {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn odd_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.phase == Parity::Odd)
    }

    pub fn even_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.phase == Parity::Even)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Efficiency gap of the underlying configuration.
    pub fn delta(&self) -> usize {
        self.delta
    }

    /// Total contour length `l(I)`: the odd regions' curves.
    pub fn total_contour_length(&self) -> usize {
        self.odd_regions().map(|r| r.contour_length()).sum()
    }

    pub fn has_stripe(&self) -> bool {
        self.odd_regions().any(|r| r.class == Some(GeometryClass::Stripe))
    }

    pub fn has_cross(&self) -> bool {
        self.odd_regions().any(|r| r.class == Some(GeometryClass::Cross))
    }

    /// Configuration class: stripe if any stripe region, else cross if
    /// any cross region, else cluster.
    pub fn class(&self) -> GeometryClass {
        if self.has_stripe() {
            GeometryClass::Stripe
        } else if self.has_cross() {
            GeometryClass::Cross
        } else {
            GeometryClass::Cluster
        }
    }
}

// ======================================================================
// Decomposition
// ======================================================================

pub fn decompose(
    graph: &ConflictGraph,
    cfg: &Configuration,
) -> Result<RegionDecomposition, ContourError> {
    let side = graph.side().ok_or(ContourError::NotATorus)?;
    let n = graph.n_vertices();
    let occupied = cfg.occupied();
    let even_class = graph.parity_class(Parity::Even).expect("torus has parity classes");
    let odd_class = graph.parity_class(Parity::Odd).expect("torus has parity classes");

    // R_O = occupied odd + vacant even; R_E is its complement.
    let r_odd = occupied.intersection(&odd_class).union(&even_class.difference(occupied));
    let r_even = r_odd.complement();
    let delta = n / 2 - cfg.n_active();

    let mut regions = Vec::new();
    for (phase, phase_set) in [(Parity::Odd, &r_odd), (Parity::Even, &r_even)] {
        for component in connected_components(graph, phase_set) {
            let even_part = component.intersection(&even_class);
            let odd_part = component.intersection(&odd_class);
            let cutset = graph.boundary(&component).edge_cut;
            let curves = contour_curves(side, &cutset, graph)?;
            let class = if phase == Parity::Odd {
                Some(classify_odd_region(side, graph, &odd_part, &curves))
            } else {
                None
            };
            regions.push(Region { phase, vertices: component, even_part, odd_part, cutset, curves, class });
        }
    }
    Ok(RegionDecomposition { side, delta, regions })
}

/// Components in ascending order of their smallest vertex.
fn connected_components(graph: &ConflictGraph, set: &VertexSet) -> Vec<VertexSet> {
    let n = graph.n_vertices();
    let mut seen = VertexSet::empty(n);
    let mut out = Vec::new();
    for start in set.iter() {
        if seen.contains(start) {
            continue;
        }
        let mut comp = VertexSet::empty(n);
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        comp.insert(start);
        while let Some(u) = queue.pop_front() {
            for &v in graph.neighbors(u) {
                if set.contains(v) && !seen.contains(v) {
                    seen.insert(v);
                    comp.insert(v);
                    queue.push_back(v);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Maps a primal cut edge to the orthogonal dual edge.
fn dual_of_primal(side: usize, u: VertexId, v: VertexId, graph: &ConflictGraph) -> DualEdge {
    let (ux, uy) = graph.coords(u).expect("torus coords");
    let (vx, vy) = graph.coords(v).expect("torus coords");
    if uy == vy {
        // horizontal primal edge between (x, y) and (x + 1, y): the dual
        // edge is vertical, joining faces (x, y - 1) and (x, y).
        let x = if (ux + 1) % side == vx { ux } else { vx };
        DualEdge { horizontal: false, x, y: (uy + side - 1) % side }
    } else {
        // vertical primal edge between (x, y) and (x, y + 1): the dual
        // edge is horizontal, joining faces (x - 1, y) and (x, y).
        let y = if (uy + 1) % side == vy { uy } else { vy };
        DualEdge { horizontal: true, x: (ux + side - 1) % side, y }
    }
}

/// The dual edge traversed when stepping from the lifted dual vertex `pos`
/// in unit direction `dir`.
fn dual_edge_from(side: usize, pos: (i64, i64), dir: (i64, i64)) -> DualEdge {
    let l = side as i64;
    let px = pos.0.rem_euclid(l) as usize;
    let py = pos.1.rem_euclid(l) as usize;
    match dir {
        (1, 0) => DualEdge { horizontal: true, x: px, y: py },
        (-1, 0) => DualEdge { horizontal: true, x: (px + side - 1) % side, y: py },
        (0, 1) => DualEdge { horizontal: false, x: px, y: py },
        (0, -1) => DualEdge { horizontal: false, x: px, y: (py + side - 1) % side },
        _ => unreachable!("unit steps only"),
    }
}

/// Splits a cutset's dual edges into closed curves.
///
/// The walk always turns (independence forbids straight runs through a
/// face), preferring the left turn where both are available; this fixes
/// the pairing at degree-4 dual vertices. Each curve's displacement in
/// the universal cover is a multiple of `L`, giving its winding numbers.
fn contour_curves(
    side: usize,
    cutset: &[(VertexId, VertexId)],
    graph: &ConflictGraph,
) -> Result<Vec<ContourCurve>, ContourError> {
    let l = side as i64;
    let mut remaining: BTreeSet<DualEdge> =
        cutset.iter().map(|&(u, v)| dual_of_primal(side, u, v, graph)).collect();
    if remaining.len() != cutset.len() {
        return Err(ContourError::Malformed("duplicate dual edges in one cutset".into()));
    }
    let mut curves = Vec::new();
    while let Some(&e0) = remaining.iter().next() {
        remaining.remove(&e0);
        let start = (e0.x as i64, e0.y as i64);
        let (mut pos, mut dir) = if e0.horizontal {
            ((start.0 + 1, start.1), (1i64, 0i64))
        } else {
            ((start.0, start.1 + 1), (0i64, 1i64))
        };
        let mut edges = vec![e0];
        loop {
            let left = (-dir.1, dir.0);
            let right = (dir.1, -dir.0);
            let mut stepped = false;
            for nd in [left, right] {
                let e = dual_edge_from(side, pos, nd);
                if remaining.remove(&e) {
                    edges.push(e);
                    pos = (pos.0 + nd.0, pos.1 + nd.1);
                    dir = nd;
                    stepped = true;
                    break;
                }
            }
            if !stepped {
                let (dx, dy) = (pos.0 - start.0, pos.1 - start.1);
                if dx.rem_euclid(l) != 0 || dy.rem_euclid(l) != 0 {
                    return Err(ContourError::Malformed(format!(
                        "contour walk stuck off-lattice at displacement ({dx}, {dy})"
                    )));
                }
                let n_horizontal = edges.iter().filter(|e| e.horizontal).count();
                let n_vertical = edges.len() - n_horizontal;
                curves.push(ContourCurve {
                    edges,
                    winding: (dx / l, dy / l),
                    n_horizontal,
                    n_vertical,
                });
                break;
            }
        }
    }
    Ok(curves)
}

// ======================================================================
// Classification
// ======================================================================

/// Steps between odd vertices at graph distance 2. Opposite double steps
/// are distinct multigraph edges: at `L = 4` both connect the same pair
/// of vertices but lift differently.
const LAMBDA_STEPS: [(i64, i64); 8] =
    [(2, 0), (-2, 0), (0, 2), (0, -2), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Detects a non-contractible cycle in the distance-2 graph restricted to
/// `members`, by checking consistency of a lift to the universal cover.
fn lambda_has_winding_cycle(side: usize, graph: &ConflictGraph, members: &VertexSet) -> bool {
    let l = side as i64;
    let n = graph.n_vertices();
    let mut lift: Vec<Option<(i64, i64)>> = vec![None; n];
    for start in members.iter() {
        if lift[start].is_some() {
            continue;
        }
        lift[start] = Some((0, 0));
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let (ux, uy) = graph.coords(u).expect("torus coords");
            let pu = lift[u].expect("queued vertices are lifted");
            for (dx, dy) in LAMBDA_STEPS {
                let vx = (ux as i64 + dx).rem_euclid(l) as usize;
                let vy = (uy as i64 + dy).rem_euclid(l) as usize;
                let v = vx + vy * side;
                if !members.contains(v) {
                    continue;
                }
                let pv = (pu.0 + dx, pu.1 + dy);
                match lift[v] {
                    None => {
                        lift[v] = Some(pv);
                        queue.push_back(v);
                    }
                    Some(q) => {
                        if q != pv {
                            debug_assert!(
                                (pv.0 - q.0).rem_euclid(l) == 0 && (pv.1 - q.1).rem_euclid(l) == 0,
                                "lift mismatch must be a lattice period"
                            );
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}

fn classify_odd_region(
    side: usize,
    graph: &ConflictGraph,
    odd_part: &VertexSet,
    curves: &[ContourCurve],
) -> GeometryClass {
    if curves.iter().any(|c| c.is_winding()) {
        GeometryClass::Stripe
    } else if lambda_has_winding_cycle(side, graph, odd_part) {
        GeometryClass::Cross
    } else {
        GeometryClass::Cluster
    }
}

pub fn classify_configuration(
    graph: &ConflictGraph,
    cfg: &Configuration,
) -> Result<GeometryClass, ContourError> {
    Ok(decompose(graph, cfg)?.class())
}

/// Whether a cross-class state can reach the cluster class in one flip.
/// Errors unless the state is in the cross class.
pub fn is_critical_cross(space: &StateSpace, id: StateId) -> Result<bool, ContourError> {
    let graph = space.graph();
    let class = classify_configuration(graph, &space.state(id))?;
    if class != GeometryClass::Cross {
        return Err(ContourError::NotACross { got: class });
    }
    let mut found = false;
    for j in space.flip_neighbors(id) {
        if found {
            break;
        }
        if classify_configuration(graph, &space.state(j))? == GeometryClass::Cluster {
            found = true;
        }
    }
    Ok(found)
}

// ======================================================================
// Identity audit
// ======================================================================

/// Outcome of checking the contour identities and classification bounds
/// over a set of states. Violations are tallied per claim family so that
/// a failure of one claimed bound does not mask the health of the rest.
#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub n_states_checked: usize,
    pub n_stripe: usize,
    pub n_cross: usize,
    pub n_cluster: usize,
    pub n_critical_cross: usize,
    /// Cutset / contour-length identities, curve closure and balance,
    /// and cluster-witness parity. Any nonzero count is a library bug.
    pub n_identity_violations: usize,
    /// States with both a stripe and a cross region (must be impossible).
    pub n_disjointness_violations: usize,
    /// Stripe regions below the 4L contour bound or with fewer than two
    /// winding curves.
    pub n_stripe_bound_violations: usize,
    /// Critical crosses with total contour below the claimed 8L - 12.
    /// This bound is falsified by exhaustive search: wrap-around
    /// diagonal odd cycles at L = 4 (contour 16 < 20) and winding odd
    /// rows padded with occupied even vertices at L >= 6 are critical
    /// crosses below it.
    pub n_critical_cross_bound_violations: usize,
    /// First few violation descriptions, for diagnostics.
    pub violations: Vec<String>,
    pub passed: bool,
}

const MAX_REPORTED_VIOLATIONS: usize = 20;

enum ViolationKind {
    Identity,
    Disjointness,
    StripeBound,
    CriticalCrossBound,
}

impl AuditReport {
    fn violation(&mut self, kind: ViolationKind, msg: String) {
        match kind {
            ViolationKind::Identity => self.n_identity_violations += 1,
            ViolationKind::Disjointness => self.n_disjointness_violations += 1,
            ViolationKind::StripeBound => self.n_stripe_bound_violations += 1,
            ViolationKind::CriticalCrossBound => self.n_critical_cross_bound_violations += 1,
        }
        if self.violations.len() < MAX_REPORTED_VIOLATIONS {
            self.violations.push(msg);
        }
    }

    pub fn n_violations(&self) -> usize {
        self.n_identity_violations
            + self.n_disjointness_violations
            + self.n_stripe_bound_violations
            + self.n_critical_cross_bound_violations
    }
}

/// Checks every listed state: the cutset and contour identities, curve
/// balance and closure, the stripe / cross dichotomy, and the contour
/// lower bounds for stripes and critical crosses.
pub fn audit_states(space: &StateSpace, ids: &[StateId]) -> Result<AuditReport, ContourError> {
    let graph = space.graph();
    let side = graph.side().ok_or(ContourError::NotATorus)?;
    let mut report = AuditReport {
        n_states_checked: 0,
        n_stripe: 0,
        n_cross: 0,
        n_cluster: 0,
        n_critical_cross: 0,
        n_identity_violations: 0,
        n_disjointness_violations: 0,
        n_stripe_bound_violations: 0,
        n_critical_cross_bound_violations: 0,
        violations: Vec::new(),
        passed: true,
    };

    for &id in ids {
        report.n_states_checked += 1;
        let cfg = space.state(id);
        let hex = cfg.occupied().to_hex();
        let d = decompose(graph, &cfg)?;

        for region in d.regions() {
            let (e, o) = (region.even_part.len() as i64, region.odd_part.len() as i64);
            let expected = match region.phase {
                Parity::Odd => 4 * (e - o),
                Parity::Even => 4 * (o - e),
            };
            if region.cutset.len() as i64 != expected {
                report.violation(
                    ViolationKind::Identity,
                    format!(
                        "state {id} [{hex}]: {:?} region cutset {} != 4 * parity imbalance {expected}",
                        region.phase,
                        region.cutset.len()
                    ),
                );
            }
            if region.contour_length() != region.cutset.len() {
                report.violation(
                    ViolationKind::Identity,
                    format!(
                        "state {id} [{hex}]: contour length {} != cutset size {}",
                        region.contour_length(),
                        region.cutset.len()
                    ),
                );
            }
            for curve in &region.curves {
                if curve.n_horizontal != curve.n_vertical {
                    report.violation(
                        ViolationKind::Identity,
                        format!(
                            "state {id} [{hex}]: curve with {} horizontal vs {} vertical edges",
                            curve.n_horizontal, curve.n_vertical
                        ),
                    );
                }
            }
        }

        if d.total_contour_length() != 4 * d.delta() {
            report.violation(
                ViolationKind::Identity,
                format!(
                    "state {id} [{hex}]: l(I) = {} but 4 Delta = {}",
                    d.total_contour_length(),
                    4 * d.delta()
                ),
            );
        }

        if d.has_stripe() && d.has_cross() {
            report.violation(
                ViolationKind::Disjointness,
                format!("state {id} [{hex}]: both a stripe and a cross region"),
            );
        }

        for region in d.odd_regions() {
            if region.class == Some(GeometryClass::Stripe) {
                let n_winding = region.curves.iter().filter(|c| c.is_winding()).count();
                if n_winding < 2 {
                    report.violation(
                        ViolationKind::StripeBound,
                        format!("state {id} [{hex}]: stripe region with {n_winding} winding curves"),
                    );
                }
                if region.contour_length() < 4 * side {
                    report.violation(
                        ViolationKind::StripeBound,
                        format!(
                            "state {id} [{hex}]: stripe contour {} below 4L = {}",
                            region.contour_length(),
                            4 * side
                        ),
                    );
                }
            }
        }

        match d.class() {
            GeometryClass::Stripe => {
                report.n_stripe += 1;
                if d.delta() < side {
                    report.violation(
                        ViolationKind::StripeBound,
                        format!("state {id} [{hex}]: stripe configuration with Delta {} < L", d.delta()),
                    );
                }
            }
            GeometryClass::Cross => {
                report.n_cross += 1;
                if is_critical_cross(space, id)? {
                    report.n_critical_cross += 1;
                    if d.total_contour_length() < 8 * side - 12 {
                        report.violation(
                            ViolationKind::CriticalCrossBound,
                            format!(
                                "state {id} [{hex}]: critical cross with l(I) = {} < 8L - 12",
                                d.total_contour_length()
                            ),
                        );
                    }
                    // Breaking a cross into clusters can only shed a node.
                    for j in space.flip_neighbors(id) {
                        let jc = classify_configuration(graph, &space.state(j))?;
                        if jc == GeometryClass::Cluster && space.n_active(j) != cfg.n_active() - 1 {
                            report.violation(
                                ViolationKind::Identity,
                                format!("state {id} [{hex}]: cluster witness {j} is not a deactivation"),
                            );
                        }
                    }
                }
            }
            GeometryClass::Cluster => report.n_cluster += 1,
        }
    }

    report.passed = report.n_violations() == 0;
    Ok(report)
}

pub fn exhaustive_audit(space: &StateSpace) -> Result<AuditReport, ContourError> {
    let ids: Vec<StateId> = (0..space.n_states() as StateId).collect();
    audit_states(space, &ids)
}
