//! Executable invariants of the model on randomized graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::geom::{random_rotation_with, Rotation, Vec3};
use crate::graph::{build_edges, GraphState, NodeState, Normalizer};
use crate::model::{predict, ModelConfig, ModelParams, Prediction};
use crate::train::{sample_gradients, sample_loss, LossWeights, Sample};

/// Knobs for random graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomGraphSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Side of the cube holding the positions (m).
    pub extent: f64,
    pub d_c: f64,
    pub dt: f64,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        RandomGraphSpec { min_nodes: 2, max_nodes: 7, extent: 1.0, d_c: 0.8, dt: 0.05 }
    }
}

fn normal3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// A normalized ghost-free graph with random states. Redraws until at least
/// one edge exists.
pub fn random_graph<R: Rng>(spec: &RandomGraphSpec, rng: &mut R) -> GraphState {
    loop {
        let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
        let nodes: Vec<NodeState> = (0..n)
            .map(|_| {
                let r = Vec3::new(
                    rng.random_range(0.0..spec.extent),
                    rng.random_range(0.0..spec.extent),
                    rng.random_range(0.0..spec.extent),
                );
                NodeState::physical(r, normal3(rng), normal3(rng), normal3(rng), normal3(rng))
            })
            .collect();
        let edges = build_edges(&nodes, spec.d_c);
        if edges.is_empty() {
            continue;
        }
        return GraphState { nodes, edges, d_c: spec.d_c, dt: spec.dt, radius: 0.05, time: 0.0, normalized: true };
    }
}

/// Untrained parameters with every bias also drawn at random, so that no
/// check relies on zero biases.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    for id in p.store.ids().collect::<Vec<_>>() {
        if p.store.name(id).contains(".b") || p.store.name(id).starts_with("ln.") {
            for x in p.store.get_mut(id).data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += 0.3 * z;
            }
        }
    }
    Ok(p)
}

/// Scale set used with random graphs.
pub fn unit_normalizer() -> Normalizer {
    Normalizer::default()
}

/// Largest `‖F_ij + F_ji‖`, `‖A_ij + A_ji‖`, `‖r0_ij − r0_ji‖` and memory
/// asymmetry over all sub-steps.
pub fn antisymmetry_residuals(p: &Prediction) -> [f64; 4] {
    let mut w = [0.0f64; 4];
    for s in &p.substeps {
        for (k, &(a, b)) in s.edges.iter().enumerate() {
            let r = s.edges.binary_search(&(b, a)).expect("edges are symmetric");
            w[0] = w[0].max((s.force[k] + s.force[r]).norm());
            w[1] = w[1].max((s.angular[k] + s.angular[r]).norm());
            w[2] = w[2].max((s.r0[k] - s.r0[r]).norm());
            let mem = s.memory.row(k).iter().zip(s.memory.row(r)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            w[3] = w[3].max(mem);
        }
    }
    w
}

/// Largest `‖Σ_i Δv_i / ψ_n2(h_i)‖` over sub-steps.
pub fn linear_residual(p: &Prediction) -> f64 {
    p.substeps
        .iter()
        .map(|s| s.dv.iter().zip(&p.inv_mass).map(|(dv, m)| *dv / *m).sum::<Vec3>().norm())
        .fold(0.0, f64::max)
}

/// Largest `‖Σ_i [Δω_i/ψ_n3 + (q_i − r_ref) × Δv_i/ψ_n2]‖` over sub-steps,
/// divided by the largest single edge contribution of that sub-step. `q` are
/// the positions at which the lever arms were evaluated.
pub fn angular_residual(p: &Prediction, r_ref: Vec3) -> f64 {
    let mut worst = 0.0f64;
    for s in &p.substeps {
        let total: Vec3 = (0..s.dv.len())
            .map(|i| s.domega[i] / p.inv_inertia[i] + (s.lever_positions[i] - r_ref).cross(s.dv[i] / p.inv_mass[i]))
            .sum();
        let scale = s
            .edges
            .iter()
            .enumerate()
            .map(|(k, &(_, j))| s.torque[k].norm().max((s.lever_positions[j] - r_ref).cross(s.force[k]).norm()))
            .fold(0.0, f64::max);
        if scale > 0.0 {
            worst = worst.max(total.norm() / scale);
        }
    }
    worst
}

fn rotate_graph(g: &GraphState, rot: &Rotation) -> GraphState {
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.r = rot.apply(n.r);
        n.v = rot.apply(n.v);
        n.omega = rot.apply(n.omega);
        n.v_prev = rot.apply(n.v_prev);
        n.omega_prev = rot.apply(n.omega_prev);
    }
    out
}

fn max_abs(vs: &[Vec3]) -> f64 {
    vs.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn max_diff(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x - *y).norm()).fold(0.0, f64::max)
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Relative errors of `(Δv, Δω, Δx)` under a rotation.
pub fn rotation_errors(params: &ModelParams, g: &GraphState, norm: &Normalizer, rot: &Rotation) -> Result<[f64; 3]> {
    let base = predict(params, g, norm)?;
    let turned = predict(params, &rotate_graph(g, rot), norm)?;
    let r = |vs: &[Vec3]| vs.iter().map(|v| rot.apply(*v)).collect::<Vec<_>>();
    Ok([
        relative(max_diff(&turned.dv, &r(&base.dv)), max_abs(&base.dv)),
        relative(max_diff(&turned.domega, &r(&base.domega)), max_abs(&base.domega)),
        relative(max_diff(&turned.dx, &r(&base.dx)), max_abs(&base.dx)),
    ])
}

/// Relative errors of `(Δv, Δω)` under a translation.
pub fn translation_errors(params: &ModelParams, g: &GraphState, norm: &Normalizer, shift: Vec3) -> Result<[f64; 2]> {
    let base = predict(params, g, norm)?;
    let mut moved = g.clone();
    for n in &mut moved.nodes {
        n.r += shift;
    }
    let m = predict(params, &moved, norm)?;
    Ok([
        relative(max_diff(&m.dv, &base.dv), max_abs(&base.dv)),
        relative(max_diff(&m.domega, &base.domega), max_abs(&base.domega)),
    ])
}

/// Relative error of all three deltas under a relabelling of the nodes.
pub fn permutation_error(params: &ModelParams, g: &GraphState, norm: &Normalizer, perm: &[usize]) -> Result<f64> {
    let base = predict(params, g, norm)?;
    // Node k of the permuted graph is node perm[k] of the original.
    let mut inverse = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inverse[p] = k;
    }
    let mut pg = g.clone();
    pg.nodes = perm.iter().map(|&p| g.nodes[p].clone()).collect();
    pg.edges = g.edges.iter().map(|&(a, b)| (inverse[a], inverse[b])).collect();
    pg.edges.sort_unstable();
    let out = predict(params, &pg, norm)?;
    let back = |vs: &[Vec3]| perm.iter().enumerate().fold(vec![Vec3::ZERO; vs.len()], |mut acc, (k, &p)| {
        acc[p] = vs[k];
        acc
    });
    Ok([
        relative(max_diff(&back(&out.dv), &base.dv), max_abs(&base.dv)),
        relative(max_diff(&back(&out.domega), &base.domega), max_abs(&base.domega)),
        relative(max_diff(&back(&out.dx), &base.dx), max_abs(&base.dx)),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// Relative error `|a − n| / max(|a|, |n|, floor)` between analytic and
/// central-difference gradients.
pub fn gradient_relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for gradient comparisons, as a fraction of the largest
/// gradient entry. Central differences with step `h` carry round-off near
/// `1e-16·|L| / h`; entries whose true value is zero would otherwise be
/// compared against pure noise.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Gradient check of the full training loss on one sample: every parameter
/// entry when `stride == 1`, otherwise every `stride`-th entry.
pub fn gradient_check(
    params: &ModelParams,
    graph: &GraphState,
    sample: &Sample,
    norm: &Normalizer,
    h: f64,
    stride: usize,
) -> Result<GradientReport> {
    let w = LossWeights::default();
    let (_, grads) = sample_gradients(params, graph, sample, norm, w)?;
    let largest = grads.iter().map(|(_, g)| g.max_abs()).fold(0.0, f64::max);
    let floor = GRADIENT_FLOOR * largest.max(f64::MIN_POSITIVE);
    let mut p = params.clone();
    let mut worst = GradientReport::default();
    let mut counter = 0usize;
    for id in params.store.ids() {
        for k in 0..params.store.get(id).data().len() {
            counter += 1;
            if (counter - 1) % stride.max(1) != 0 {
                continue;
            }
            let x0 = params.store.get(id).data()[k];
            p.store.get_mut(id).data_mut()[k] = x0 + h;
            let up = sample_loss(&p, graph, sample, norm, w)?;
            p.store.get_mut(id).data_mut()[k] = x0 - h;
            let down = sample_loss(&p, graph, sample, norm, w)?;
            p.store.get_mut(id).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).data()[k];
            let err = gradient_relative_error(analytic, numeric, floor);
            worst.checked += 1;
            if err > worst.max_relative_error {
                worst.max_relative_error = err;
                worst.worst_entry = format!("{}[{k}]", params.store.name(id));
                worst.analytic = analytic;
                worst.numeric = numeric;
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradientReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_entry: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Outcome of one invariant over all trials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvariantResult {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl InvariantResult {
    fn new(name: &str, worst: f64, tolerance: f64) -> Self {
        InvariantResult { name: name.into(), worst, tolerance, passed: worst.is_finite() && worst < tolerance }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub graphs: usize,
    pub symmetry_trials: usize,
    pub reference_points: usize,
    pub graph: RandomGraphSpec,
    pub model: ModelConfig,
    /// Parameter entries between gradient probes; 1 checks every entry.
    pub gradient_stride: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            graphs: 100,
            symmetry_trials: 20,
            reference_points: 5,
            graph: RandomGraphSpec::default(),
            model: ModelConfig { hidden: 16, steps: 3, ..ModelConfig::default() },
            gradient_stride: 7,
        }
    }
}

/// Three-node graph with distinct continuous labels and matching random
/// targets, for gradient checks.
pub fn gradient_fixture(seed: u64) -> (GraphState, Sample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = RandomGraphSpec { min_nodes: 3, max_nodes: 3, d_c: 10.0, ..RandomGraphSpec::default() };
    let mut g = random_graph(&spec, &mut rng);
    for n in &mut g.nodes {
        n.alpha = vec![rng.random_range(-1.0..1.0)];
    }
    let sample = Sample {
        graph: g.clone(),
        dv: (0..3).map(|_| normal3(&mut rng)).collect(),
        domega: (0..3).map(|_| normal3(&mut rng)).collect(),
        dx: (0..3).map(|_| normal3(&mut rng) * 0.1).collect(),
        origin: (0, 0),
    };
    (g, sample)
}

/// Runs every invariant on graphs drawn from `seed`. Parameters come from
/// `params` when supplied (their configuration is used as is), otherwise a
/// fresh random set per graph.
pub fn run_suite(cfg: &SuiteConfig, params: Option<&ModelParams>, seed: u64) -> Result<Vec<InvariantResult>> {
    let norm = unit_normalizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_cfg = params.map(|p| p.config.clone()).unwrap_or_else(|| cfg.model.clone());
    let mk = |cfg: ModelConfig, k: u64| -> Result<ModelParams> {
        match params {
            Some(p) => {
                let mut q = p.clone();
                q.config = cfg;
                Ok(q)
            }
            None => random_params(&cfg, seed.wrapping_mul(1_000_003).wrapping_add(k)),
        }
    };
    let free = ModelConfig { external: false, ..base_cfg.clone() };
    let pinned = ModelConfig { lambda_override: Some(1.0), ..free.clone() };

    let mut anti = [0.0f64; 4];
    let mut lin = 0.0f64;
    let mut ang = 0.0f64;
    for k in 0..cfg.graphs {
        let g = random_graph(&cfg.graph, &mut rng);
        let p_free = mk(free.clone(), k as u64)?;
        let pred = predict(&p_free, &g, &norm)?;
        for (w, r) in anti.iter_mut().zip(antisymmetry_residuals(&pred)) {
            *w = w.max(r);
        }
        lin = lin.max(linear_residual(&pred));
        let p_pin = mk(pinned.clone(), k as u64)?;
        let pred = predict(&p_pin, &g, &norm)?;
        for _ in 0..cfg.reference_points {
            let r_ref = normal3(&mut rng) * 2.0;
            ang = ang.max(angular_residual(&pred, r_ref));
        }
    }

    let mut rot = 0.0f64;
    let mut trans = 0.0f64;
    let mut perm = 0.0f64;
    for k in 0..cfg.symmetry_trials {
        let g = random_graph(&cfg.graph, &mut rng);
        let p = mk(base_cfg.clone(), 10_000 + k as u64)?;
        let rotation = random_rotation_with(&mut rng);
        rot = rot.max(rotation_errors(&p, &g, &norm, &rotation)?.into_iter().fold(0.0, f64::max));
        let shift = normal3(&mut rng) * 5.0;
        trans = trans.max(translation_errors(&p, &g, &norm, shift)?.into_iter().fold(0.0, f64::max));
        let mut order: Vec<usize> = (0..g.nodes.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        perm = perm.max(permutation_error(&p, &g, &norm, &order)?);
    }

    let gp = match params {
        Some(p) => p.clone(),
        None => random_params(&ModelConfig { hidden: 8, steps: 2, ..base_cfg.clone() }, seed)?,
    };
    let (g, sample) = gradient_fixture(seed);
    let grad = gradient_check(&gp, &g, &sample, &norm, 1e-5, cfg.gradient_stride)?;

    Ok(vec![
        InvariantResult::new("force antisymmetry", anti[0], 1e-12),
        InvariantResult::new("angular impulse antisymmetry", anti[1], 1e-12),
        InvariantResult::new("point of action symmetry", anti[2], 1e-12),
        InvariantResult::new("edge memory symmetry", anti[3], 1e-12),
        InvariantResult::new("linear momentum", lin, 1e-10),
        InvariantResult::new("angular momentum", ang, 1e-9),
        InvariantResult::new("rotation equivariance", rot, 1e-9),
        InvariantResult::new("translation invariance", trans, 1e-9),
        InvariantResult::new("permutation equivariance", perm, 1e-9),
        InvariantResult::new("gradient check", grad.max_relative_error, 1e-4),
    ])
}
