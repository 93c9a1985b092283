//! Per-frame graphs: nodes, distance-threshold edges and boundary ghosts.

pub mod boundary;
pub mod normalize;

pub use boundary::{ghost_velocity, reflect_cylinder, reflect_plane, Boundary, BoundarySet, Mirror, SpinProfile};
pub use normalize::Normalizer;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Scalar label of a physical body.
pub const PHYSICAL_LABEL: f64 = 0.0;

/// Links a ghost to the body and wall surface it mirrors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GhostLink {
    pub host: usize,
    pub boundary: usize,
    pub mirror: Mirror,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub r: Vec3,
    pub v: Vec3,
    pub omega: Vec3,
    pub v_prev: Vec3,
    pub omega_prev: Vec3,
    pub alpha: Vec<f64>,
    pub ghost: Option<GhostLink>,
}

impl NodeState {
    pub fn physical(r: Vec3, v: Vec3, omega: Vec3, v_prev: Vec3, omega_prev: Vec3) -> Self {
        NodeState { r, v, omega, v_prev, omega_prev, alpha: vec![PHYSICAL_LABEL], ghost: None }
    }

    pub fn is_ghost(&self) -> bool {
        self.ghost.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    /// Physical nodes first, then ghosts.
    pub nodes: Vec<NodeState>,
    /// Directed `(sender, receiver)` pairs, sorted.
    pub edges: Vec<(usize, usize)>,
    pub d_c: f64,
    pub dt: f64,
    pub radius: f64,
    /// Simulation time of the frame, used for wall motion.
    pub time: f64,
    /// Set once velocities have been divided by the normalizer scales.
    pub normalized: bool,
}

impl GraphState {
    pub fn physical_count(&self) -> usize {
        self.nodes.iter().take_while(|n| !n.is_ghost()).count()
    }

    pub fn ghost_count(&self) -> usize {
        self.nodes.len() - self.physical_count()
    }

    pub fn label_width(&self) -> usize {
        self.nodes.first().map_or(1, |n| n.alpha.len())
    }

    /// Index of the reverse of every edge.
    pub fn reverse_index(&self) -> Result<Vec<usize>> {
        self.edges
            .iter()
            .map(|&(s, r)| {
                self.edges
                    .binary_search(&(r, s))
                    .map_err(|_| Error::InvalidInput(format!("edge ({s},{r}) has no reverse")))
            })
            .collect()
    }

    /// Structural checks: ordering of physical/ghost nodes, sorted symmetric
    /// self-loop-free edges, ghosts wired only to their hosts.
    pub fn validate(&self) -> Result<()> {
        let np = self.physical_count();
        if self.nodes[np..].iter().any(|n| !n.is_ghost()) {
            return Err(Error::InvalidInput("physical nodes must precede ghosts".into()));
        }
        let width = self.label_width();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.alpha.len() != width {
                return Err(Error::dims("node label width", width, n.alpha.len()));
            }
            if let Some(link) = n.ghost {
                if link.host >= np {
                    return Err(Error::InvalidInput(format!("ghost {i} has non-physical host {}", link.host)));
                }
            }
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("edges must be sorted and unique".into()));
        }
        for &(s, r) in &self.edges {
            if s == r {
                return Err(Error::InvalidInput(format!("self-loop on node {s}")));
            }
            if s >= self.nodes.len() || r >= self.nodes.len() {
                return Err(Error::InvalidInput(format!("edge ({s},{r}) out of range")));
            }
            let host_ok = |g: usize, other: usize| self.nodes[g].ghost.is_none_or(|l| l.host == other);
            if !host_ok(s, r) || !host_ok(r, s) {
                return Err(Error::InvalidInput(format!("edge ({s},{r}) links a ghost to a non-host")));
            }
        }
        self.reverse_index().map(|_| ())
    }
}

/// Bidirectional edges between physical nodes within `d_c`, plus edges
/// between each ghost and its host when within `d_c`. Sorted.
pub fn build_edges(nodes: &[NodeState], d_c: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate().skip(i + 1) {
            let linked = match (a.ghost, b.ghost) {
                (None, None) => true,
                (None, Some(l)) => l.host == i,
                (Some(l), None) => l.host == j,
                (Some(_), Some(_)) => false,
            };
            if linked && (b.r - a.r).norm() <= d_c {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Appends one ghost per (physical node, wall surface). With `prune`, ghosts
/// farther than `d_c` from their host are dropped. Points on a cylinder axis
/// get no radial ghost.
pub fn build_ghosts(nodes: &[NodeState], boundaries: &BoundarySet, d_c: f64, prune: bool, time: f64) -> Vec<NodeState> {
    let physical: Vec<&NodeState> = nodes.iter().filter(|n| !n.is_ghost()).collect();
    let mut out: Vec<NodeState> = physical.iter().map(|n| (*n).clone()).collect();
    let mirrors = boundaries.mirrors();
    for (host, node) in physical.iter().enumerate() {
        for &(k, mirror) in &mirrors {
            if matches!(mirror, Mirror::Radial { .. }) && mirror.distance_and_normal(node.r).is_none() {
                continue;
            }
            let r = mirror.apply(node.r);
            if prune && (r - node.r).norm() > d_c {
                continue;
            }
            let b = &boundaries.boundaries[k];
            let (v, omega) = ghost_velocity(r, b, time);
            out.push(NodeState {
                r,
                v,
                omega,
                v_prev: v,
                omega_prev: omega,
                alpha: vec![b.label()],
                ghost: Some(GhostLink { host, boundary: k, mirror }),
            });
        }
    }
    out
}

/// Physical state of one frame plus the previous frame's velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameState {
    pub r: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub omega: Vec<Vec3>,
    pub v_prev: Vec<Vec3>,
    pub omega_prev: Vec<Vec3>,
}

/// Settings shared by every graph built for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSettings {
    pub d_c: f64,
    pub dt: f64,
    pub radius: f64,
    pub prune_ghosts: bool,
}

/// Full per-frame construction: physical nodes, ghosts, edges.
pub fn build_graph(state: &FrameState, boundaries: &BoundarySet, settings: &GraphSettings, time: f64) -> Result<GraphState> {
    let n = state.r.len();
    if [state.v.len(), state.omega.len(), state.v_prev.len(), state.omega_prev.len()].iter().any(|&l| l != n) {
        return Err(Error::InvalidInput("frame arrays differ in length".into()));
    }
    if !(settings.d_c > 0.0) {
        return Err(Error::InvalidInput(format!("threshold distance must be positive, got {}", settings.d_c)));
    }
    let nodes: Vec<NodeState> = (0..n)
        .map(|i| NodeState::physical(state.r[i], state.v[i], state.omega[i], state.v_prev[i], state.omega_prev[i]))
        .collect();
    let nodes = build_ghosts(&nodes, boundaries, settings.d_c, settings.prune_ghosts, time);
    let edges = build_edges(&nodes, settings.d_c);
    Ok(GraphState {
        nodes,
        edges,
        d_c: settings.d_c,
        dt: settings.dt,
        radius: settings.radius,
        time,
        normalized: false,
    })
}
