//! Autoregressive rollout of a trained model and the system-level metrics
//! used to compare it against simulator ground truth.
//!
//! Each rollout frame rebuilds edges and wall ghosts from the current
//! predicted state, normalizes, runs one forward pass and applies the
//! predicted deltas. Nothing from the previous frame's graph is reused.

mod metrics;

pub use metrics::{
    compare, learned_momenta, metrics, surface_slope, Comparison, LearnedMomentum, MetricConfig, MetricFrame, MetricRow,
    MetricSeries,
};

use serde::{Deserialize, Serialize};

use crate::dem::{Frame, Header, Trajectory};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{build_graph, FrameState, GraphSettings, Normalizer};
use crate::model::{predict, ModelParams, Prediction};

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub settings: GraphSettings,
    /// Stop once any speed exceeds this multiple of the velocity scale.
    pub blowup_factor: f64,
    /// Keep per-edge diagnostics of every frame.
    pub keep_diagnostics: bool,
}

impl RolloutConfig {
    pub fn new(horizon: usize, settings: GraphSettings) -> Self {
        RolloutConfig { horizon, settings, blowup_factor: 1e3, keep_diagnostics: false }
    }
}

/// Per-edge quantities of the last sub-step of one rollout frame, in
/// normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub edges: Vec<(usize, usize)>,
    pub force: Vec<Vec3>,
    pub angular: Vec<Vec3>,
    pub torque: Vec<Vec3>,
    pub r0: Vec<Vec3>,
    pub lambda: Vec<f64>,
}

impl FrameDiagnostics {
    fn from_prediction(frame: usize, p: &Prediction) -> Self {
        let d = p.last();
        FrameDiagnostics {
            frame,
            edges: d.edges.clone(),
            force: d.force.clone(),
            angular: d.angular.clone(),
            torque: d.torque.clone(),
            r0: d.r0.clone(),
            lambda: d.lambda.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Index of the first frame that was not produced.
    pub frame: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// Predicted frames only; the initial frames are not repeated.
    pub trajectory: Trajectory,
    pub diagnostics: Vec<FrameDiagnostics>,
    /// `retained[t][i]`: body `i` inside the walls (inflated by one radius) at frame `t`.
    pub retained: Vec<Vec<bool>>,
    pub early_stop: Option<EarlyStop>,
    /// Learned `ψ_n2` and `ψ_n3` of the physical bodies.
    pub inv_mass: Vec<f64>,
    pub inv_inertia: Vec<f64>,
}

impl RolloutResult {
    /// Per-edge diagnostics as line-delimited JSON.
    pub fn diagnostics_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for d in &self.diagnostics {
            out.push_str(&crate::dem::to_json_line(d)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_frame(header: &Header, f: &Frame) -> Result<()> {
    let n = header.n;
    if f.r.len() != n || f.v.len() != n || f.omega.len() != n {
        return Err(Error::dims("rollout initial frame", n, f.r.len()));
    }
    Ok(())
}

/// Rolls `params` forward `cfg.horizon` frames from `(prev, cur)`.
///
/// The walls, radius and body count come from `header`. An exploding state
/// ends the rollout early and is reported in the result rather than as an
/// error.
pub fn rollout(
    params: &ModelParams,
    norm: &Normalizer,
    header: &Header,
    prev: &Frame,
    cur: &Frame,
    cfg: &RolloutConfig,
) -> Result<RolloutResult> {
    check_frame(header, prev)?;
    check_frame(header, cur)?;
    if !(cfg.blowup_factor > 0.0) {
        return Err(Error::InvalidInput(format!("blowup factor must be positive, got {}", cfg.blowup_factor)));
    }
    let limit = cfg.blowup_factor * norm.v;
    let boundaries = &header.boundaries;
    let mut state = FrameState {
        r: cur.r.clone(),
        v: cur.v.clone(),
        omega: cur.omega.clone(),
        v_prev: prev.v.clone(),
        omega_prev: prev.omega.clone(),
    };
    let mut t = cur.t;
    let mut frames = Vec::with_capacity(cfg.horizon);
    let mut diagnostics = Vec::new();
    let mut retained = Vec::with_capacity(cfg.horizon);
    let mut early_stop = None;
    let (mut inv_mass, mut inv_inertia) = (Vec::new(), Vec::new());

    for step in 0..cfg.horizon {
        let index = cur.index + step + 1;
        let g = norm.normalize(&build_graph(&state, boundaries, &cfg.settings, t)?)?;
        let p = match predict(params, &g, norm) {
            Ok(p) => p,
            Err(Error::DegenerateEdge { sender, receiver }) => {
                early_stop = Some(EarlyStop { frame: index, reason: format!("bodies {sender} and {receiver} coincide") });
                break;
            }
            Err(e) => return Err(e),
        };
        if step == 0 {
            inv_mass = p.inv_mass[..header.n].to_vec();
            inv_inertia = p.inv_inertia[..header.n].to_vec();
        }
        if cfg.keep_diagnostics {
            diagnostics.push(FrameDiagnostics::from_prediction(index, &p));
        }
        let mut next = state.clone();
        for i in 0..header.n {
            next.r[i] += p.dx[i];
            next.v[i] += p.dv[i];
            next.omega[i] += p.domega[i];
        }
        next.v_prev = state.v;
        next.omega_prev = state.omega;
        state = next;
        t = cur.t + (step + 1) as f64 * header.dt;

        let finite = state.r.iter().chain(&state.v).chain(&state.omega).all(|x| x.is_finite());
        let fastest = state.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !finite || fastest > limit {
            early_stop = Some(EarlyStop {
                frame: index,
                reason: if finite {
                    format!("speed {fastest:.3e} exceeds {limit:.3e}")
                } else {
                    "non-finite state".into()
                },
            });
            break;
        }
        retained.push(state.r.iter().map(|&r| boundaries.contains(r, header.radius)).collect());
        frames.push(Frame { index, t, r: state.r.clone(), v: state.v.clone(), omega: state.omega.clone() });
    }

    let mut out_header = header.clone();
    out_header.scene = format!("{}-rollout", header.scene);
    out_header.substeps = params.config.steps;
    Ok(RolloutResult {
        trajectory: Trajectory { header: out_header, frames },
        diagnostics,
        retained,
        early_stop,
        inv_mass,
        inv_inertia,
    })
}
