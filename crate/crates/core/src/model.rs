//! The message-passing dynamics network.
//!
//! Each forward pass runs `L` sub-steps over a frozen edge set. A sub-step
//! builds the edge frames, projects node features into them, embeds the
//! resulting invariants with a per-edge memory, decodes force and angular
//! impulse coefficients, and turns them back into vectors along the frame
//! axes. Forces are summed on receivers and scaled by a learned inverse mass;
//! spin torques subtract the orbital part of the angular impulse about a
//! learned point of action before being scaled by a learned inverse inertia.
//!
//! Positions advance with the trapezoidal rule. Lever arms are taken at the
//! midpoint of each sub-step's displacement, which makes the discrete total
//! angular momentum (with the learned masses) exactly invariant when
//! `λ = 1`.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{GraphState, Normalizer};
use crate::nn::{Activation, Checkpoint, Mat, Mlp, OutputMap, ParamId, ParamStore, Tape, Var};

/// Length of the integration step used by each sub-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtMode {
    /// `dt / L`, so `L` sub-steps span exactly one frame.
    #[default]
    Split,
    /// The full frame `dt` at every sub-step.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionUpdate {
    #[default]
    EverySubstep,
    /// Positions stay fixed during the sub-steps and move once at the end.
    OncePerFrame,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `H`.
    pub hidden: usize,
    /// Hidden layers per MLP.
    pub layers: usize,
    /// Message-passing sub-steps `L` per frame.
    pub steps: usize,
    pub activation: Activation,
    /// Enables the per-node external velocity decoder.
    pub external: bool,
    /// Replaces the learned `λ` by a constant.
    pub lambda_override: Option<f64>,
    pub dt_mode: DtMode,
    pub position_update: PositionUpdate,
    /// Width of the scalar node label.
    pub label_width: usize,
    /// Degeneracy threshold for every normalization.
    pub eps: f64,
    /// Negative control: flips the sign of the orbital torque term.
    #[serde(skip_serializing_if = "is_false")]
    pub corrupt_torque_sign: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            layers: 2,
            steps: 4,
            activation: Activation::Silu,
            external: false,
            lambda_override: None,
            dt_mode: DtMode::Split,
            position_update: PositionUpdate::EverySubstep,
            label_width: 1,
            eps: crate::geom::NORMALIZE_EPS,
            corrupt_torque_sign: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden < 2 {
            return bad("hidden must be at least 2");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.label_width == 0 {
            return bad("label_width must be at least 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if let Some(l) = self.lambda_override {
            if !l.is_finite() {
                return bad("lambda_override must be finite");
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct Networks {
    pub phi_e1: Mlp,
    pub phi_e2: Mlp,
    pub phi_n: Mlp,
    pub theta_e: Mlp,
    pub psi_ef: Mlp,
    pub psi_ea: Mlp,
    pub psi_el: Mlp,
    pub psi_n1: Mlp,
    pub psi_n2: Mlp,
    pub psi_n3: Mlp,
    pub psi_n4: Mlp,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub nets: Networks,
}

impl ModelParams {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let act = config.activation;
        let widths = |i: usize, o: usize| {
            let mut w = vec![i];
            w.extend(std::iter::repeat_n(h, config.layers));
            w.push(o);
            w
        };
        let mut mlp = |name: &str, i: usize, o: usize, out: OutputMap| {
            Mlp::new(&mut store, name, &widths(i, o), act, out, &mut rng)
        };
        let phi_e1 = mlp("phi_e1", 12, h, OutputMap::Identity)?;
        let phi_e2 = mlp("phi_e2", 1, h, OutputMap::Identity)?;
        let phi_n = mlp("phi_n", config.label_width, h, OutputMap::Identity)?;
        let theta_e = mlp("theta_e", h, h, OutputMap::Identity)?;
        let psi_ef = mlp("psi_ef", h, 3, OutputMap::Identity)?;
        let psi_ea = mlp("psi_ea", h, 3, OutputMap::Identity)?;
        let psi_el = mlp("psi_el", h, 1, OutputMap::Identity)?;
        let psi_n1 = mlp("psi_n1", h, 1, OutputMap::Softplus)?;
        let psi_n2 = mlp("psi_n2", h, 1, OutputMap::Softplus)?;
        let psi_n3 = mlp("psi_n3", h, 1, OutputMap::Softplus)?;
        let psi_n4 = mlp("psi_n4", h, 3, OutputMap::Identity)?;
        let ln_gain = store.add("ln.gain", Mat::filled(1, h, 1.0))?;
        let ln_bias = store.add("ln.bias", Mat::zeros(1, h))?;
        let nets = Networks {
            phi_e1,
            phi_e2,
            phi_n,
            theta_e,
            psi_ef,
            psi_ea,
            psi_el,
            psi_n1,
            psi_n2,
            psi_n3,
            psi_n4,
            ln_gain,
            ln_bias,
        };
        Ok(ModelParams { config, store, nets })
    }

    pub fn mlps(&self) -> [&Mlp; 11] {
        let n = &self.nets;
        [
            &n.phi_e1, &n.phi_e2, &n.phi_n, &n.theta_e, &n.psi_ef, &n.psi_ea, &n.psi_el, &n.psi_n1, &n.psi_n2,
            &n.psi_n3, &n.psi_n4,
        ]
    }

    pub fn check(&self) -> Result<()> {
        for m in self.mlps() {
            m.check(&self.store)?;
        }
        if !self.store.all_finite() {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, normalizer: &Normalizer) -> Result<Checkpoint> {
        let mut ck = Checkpoint { params: self.store.clone(), ..Default::default() };
        ck.meta.insert("model_config".into(), serde_json::to_string(&self.config)?);
        ck.meta.insert("normalizer".into(), serde_json::to_string(normalizer)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Normalizer)> {
        let field = |k: &str| {
            ck.meta.get(k).ok_or_else(|| Error::Parse(format!("checkpoint is missing `{k}`")))
        };
        let config: ModelConfig = serde_json::from_str(field("model_config")?)?;
        let normalizer: Normalizer = serde_json::from_str(field("normalizer")?)?;
        normalizer.validate()?;
        let mut params = ModelParams::new(config, 0)?;
        params.store.load_from(&ck.params)?;
        params.check()?;
        Ok((params, normalizer))
    }

    /// Inverse mass, inverse inertia and point-of-action weight per label,
    /// evaluated outside any training tape.
    pub fn node_scalars(&self, alpha: &[f64]) -> Result<NodeScalars> {
        let mut tape = Tape::new();
        let a = tape.constant(Mat::row_vector(alpha));
        let h = self.nets.phi_n.forward(&mut tape, &self.store, a)?;
        let w = self.nets.psi_n1.forward(&mut tape, &self.store, h)?;
        let m = self.nets.psi_n2.forward(&mut tape, &self.store, h)?;
        let i = self.nets.psi_n3.forward(&mut tape, &self.store, h)?;
        Ok(NodeScalars {
            weight: tape.value(w).get(0, 0),
            inv_mass: tape.value(m).get(0, 0),
            inv_inertia: tape.value(i).get(0, 0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeScalars {
    pub weight: f64,
    pub inv_mass: f64,
    pub inv_inertia: f64,
}

/// Point of action `(w_i r_i + w_j r_j) / (w_i + w_j)`.
pub fn point_of_action(w_i: f64, w_j: f64, r_i: Vec3, r_j: Vec3) -> Vec3 {
    (r_i * w_i + r_j * w_j) / (w_i + w_j)
}

/// Spin torque on receiver `j`: `A − λ (r_j − r0) × F`.
pub fn spin_torque(angular: Vec3, force: Vec3, r0: Vec3, r_j: Vec3, lambda: f64) -> Vec3 {
    angular - (r_j - r0).cross(force) * lambda
}

/// Tape handles for one sub-step. Node-indexed quantities cover every node;
/// ghost rows of the updates are zero.
#[derive(Clone, Debug)]
pub struct SubstepVars {
    pub axes: [Var; 3],
    pub memory: Var,
    pub force: Var,
    pub angular: Var,
    pub torque: Var,
    pub lambda: Var,
    pub r0: Var,
    /// Normalized positions at which the lever arms were evaluated.
    pub lever_positions: Var,
    pub dv: Var,
    pub domega: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub physical: usize,
    pub weights: Var,
    pub inv_mass: Var,
    pub inv_inertia: Var,
    pub substeps: Vec<SubstepVars>,
    /// Physical-node frame deltas divided by the normalizer's target scales.
    pub dv_scaled: Var,
    pub domega_scaled: Var,
    pub dx_scaled: Var,
}

fn rows_of(vs: impl Iterator<Item = Vec3>) -> Mat {
    Mat::from_vec3s(&vs.collect::<Vec<_>>())
}

/// Records one forward pass over the normalized graph `g`.
pub fn record_forward(tape: &mut Tape, params: &ModelParams, g: &GraphState, norm: &Normalizer) -> Result<ForwardVars> {
    if !g.normalized {
        return Err(Error::InvalidInput("model input graph must be normalized".into()));
    }
    norm.validate()?;
    let cfg = &params.config;
    if g.label_width() != cfg.label_width {
        return Err(Error::dims("node label width", cfg.label_width, g.label_width()));
    }
    let store = &params.store;
    let nets = &params.nets;
    let n = g.nodes.len();
    let np = g.physical_count();
    let send: Rc<[usize]> = g.edges.iter().map(|e| e.0).collect();
    let recv: Rc<[usize]> = g.edges.iter().map(|e| e.1).collect();
    let ghosts: Rc<[_]> = g
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(k, nd)| nd.ghost.map(|l| (k, l.host, l.mirror)))
        .collect();
    let dt_sub = match cfg.dt_mode {
        DtMode::Split => g.dt / cfg.steps as f64,
        DtMode::Full => g.dt,
    };

    let alpha = {
        let mut m = Mat::zeros(n, cfg.label_width);
        for (k, nd) in g.nodes.iter().enumerate() {
            m.row_mut(k).copy_from_slice(&nd.alpha);
        }
        tape.constant(m)
    };
    let mask = tape.constant(Mat::from_vec(n, 1, (0..n).map(|k| if k < np { 1.0 } else { 0.0 }).collect())?);
    let p0 = tape.constant(rows_of(g.nodes.iter().map(|nd| nd.r)));
    let v0 = tape.constant(rows_of(g.nodes.iter().map(|nd| nd.v)));
    let w0 = tape.constant(rows_of(g.nodes.iter().map(|nd| nd.omega)));
    let v_prev = tape.constant(rows_of(g.nodes.iter().map(|nd| nd.v_prev)));
    let w_prev = tape.constant(rows_of(g.nodes.iter().map(|nd| nd.omega_prev)));

    let h = nets.phi_n.forward(tape, store, alpha)?;
    let weights = nets.psi_n1.forward(tape, store, h)?;
    let inv_mass = nets.psi_n2.forward(tape, store, h)?;
    let inv_inertia = nets.psi_n3.forward(tape, store, h)?;
    let external = if cfg.external { Some(nets.psi_n4.forward(tape, store, h)?) } else { None };
    let h_s = tape.gather(h, send.clone())?;
    let h_r = tape.gather(h, recv.clone())?;
    let h_pair = tape.add(h_s, h_r)?;
    let w_s = tape.gather(weights, send.clone())?;
    let w_r = tape.gather(weights, recv.clone())?;
    let w_pair = tape.add(w_s, w_r)?;
    let gain = tape.param(store, nets.ln_gain);
    let bias = tape.param(store, nets.ln_bias);
    let lambda_const = cfg.lambda_override.map(|l| tape.constant(Mat::filled(g.edges.len(), 1, l)));

    let mut mem = tape.constant(Mat::zeros(g.edges.len(), cfg.hidden));
    let (mut p, mut v, mut w) = (p0, v0, w0);
    let mut substeps = Vec::with_capacity(cfg.steps);
    let eps = cfg.eps;

    for _ in 0..cfg.steps {
        let p_s = tape.gather(p, send.clone())?;
        let p_r = tape.gather(p, recv.clone())?;
        let dx = tape.sub(p_r, p_s)?;
        {
            let d = tape.value(dx);
            if let Some(k) = (0..d.rows()).find(|&k| !(d.vec3(k, 0).norm() >= eps)) {
                return Err(Error::DegenerateEdge { sender: send[k], receiver: recv[k] });
            }
        }
        let a = tape.normalize_safe(dx, eps)?;
        let v_s = tape.gather(v, send.clone())?;
        let v_r = tape.gather(v, recv.clone())?;
        let o_s = tape.gather(w, send.clone())?;
        let o_r = tape.gather(w, recv.clone())?;
        let t0 = tape.add(v_r, v_s)?;
        let t1 = tape.add(o_r, o_s)?;
        let dv_rel = tape.sub(v_r, v_s)?;
        let t2 = tape.cross(dv_rel, dx)?;
        let dw_rel = tape.sub(o_r, o_s)?;
        let t3 = tape.cross(dw_rel, dx)?;
        let [u0, u1, u2, u3] = [t0, t1, t2, t3].map(|t| tape.normalize_safe(t, eps));
        let s01 = tape.add(u0?, u1?)?;
        let s012 = tape.add(s01, u2?)?;
        let b_int = tape.add(s012, u3?)?;
        let along = tape.dot(a, b_int)?;
        let par = tape.mul_col(a, along)?;
        let perp = tape.sub(b_int, par)?;
        let b_raw = tape.cross(perp, a)?;
        let b = tape.normalize_safe(b_raw, eps)?;
        let c_raw = tape.cross(par, b)?;
        let c = tape.normalize_safe(c_raw, eps)?;
        let axes = [a, b, c];

        let feats = tape.concat_cols(&[v, w, v_prev, w_prev])?;
        let f_s = tape.gather(feats, send.clone())?;
        let f_r = tape.gather(feats, recv.clone())?;
        let s_in = tape.project(axes, f_s, 1.0)?;
        let r_in = tape.project(axes, f_r, -1.0)?;
        let e_s = nets.phi_e1.forward(tape, store, s_in)?;
        let e_r = nets.phi_e1.forward(tape, store, r_in)?;
        let dist = tape.norm(dx)?;
        let dist = tape.scale(dist, 1.0 / norm.dx)?;
        let e_d = nets.phi_e2.forward(tape, store, dist)?;
        let pair = tape.add(e_s, e_r)?;
        let pre = tape.add(pair, h_pair)?;
        let pre = tape.add(pre, e_d)?;
        let eps_e = nets.theta_e.forward(tape, store, pre)?;
        let skip = tape.add(eps_e, mem)?;
        let emb = tape.layer_norm(skip, gain, bias)?;
        mem = emb;

        let cf = nets.psi_ef.forward(tape, store, emb)?;
        let force = tape.vectorize(cf, axes)?;
        let ca = nets.psi_ea.forward(tape, store, emb)?;
        let angular = tape.vectorize(ca, axes)?;
        let lambda = match lambda_const {
            Some(l) => l,
            None => nets.psi_el.forward(tape, store, emb)?,
        };

        let f_sum = tape.scatter_add(force, recv.clone(), n)?;
        let mut dv = tape.mul_col(f_sum, inv_mass)?;
        if let Some(ext) = external {
            dv = tape.add(dv, ext)?;
        }
        let dv = tape.mul_col(dv, mask)?;
        let v_new = tape.add(v, dv)?;

        let (p_mid, p_new) = match cfg.position_update {
            PositionUpdate::EverySubstep => {
                let v_sum = tape.add(v, v_new)?;
                let step = tape.scale(v_sum, norm.v * dt_sub / 2.0)?;
                let half = tape.scale(step, 0.5)?;
                let mid = tape.add(p, half)?;
                let mid = tape.mirror_rows(mid, ghosts.clone())?;
                let next = tape.add(p, step)?;
                let next = tape.mirror_rows(next, ghosts.clone())?;
                (mid, next)
            }
            PositionUpdate::OncePerFrame => (p, p),
        };
        let lever_positions = tape.scale(p_mid, 1.0 / norm.dx)?;
        let q_s = tape.gather(lever_positions, send.clone())?;
        let q_r = tape.gather(lever_positions, recv.clone())?;
        let wq_s = tape.mul_col(q_s, w_s)?;
        let wq_r = tape.mul_col(q_r, w_r)?;
        let wq = tape.add(wq_s, wq_r)?;
        let r0 = tape.div_col(wq, w_pair)?;
        let lever = tape.sub(q_r, r0)?;
        let orbital = tape.cross(lever, force)?;
        let orbital = tape.mul_col(orbital, lambda)?;
        let torque = if cfg.corrupt_torque_sign { tape.add(angular, orbital)? } else { tape.sub(angular, orbital)? };
        let t_sum = tape.scatter_add(torque, recv.clone(), n)?;
        let dw = tape.mul_col(t_sum, inv_inertia)?;
        let dw = tape.mul_col(dw, mask)?;
        let w_new = tape.add(w, dw)?;

        substeps.push(SubstepVars {
            axes,
            memory: emb,
            force,
            angular,
            torque,
            lambda,
            r0,
            lever_positions,
            dv,
            domega: dw,
        });
        v = v_new;
        w = w_new;
        p = p_new;
    }

    if cfg.position_update == PositionUpdate::OncePerFrame {
        let v_sum = tape.add(v0, v)?;
        let step = tape.scale(v_sum, norm.v * g.dt / 2.0)?;
        let next = tape.add(p0, step)?;
        p = tape.mirror_rows(next, ghosts.clone())?;
    }

    let dv_all = tape.sub(v, v0)?;
    let dv_phys = tape.slice_rows(dv_all, 0, np)?;
    let dv_scaled = tape.scale(dv_phys, norm.v / norm.dv)?;
    let dw_all = tape.sub(w, w0)?;
    let dw_phys = tape.slice_rows(dw_all, 0, np)?;
    let domega_scaled = tape.scale(dw_phys, norm.omega / norm.domega)?;
    let dx_all = tape.sub(p, p0)?;
    let dx_phys = tape.slice_rows(dx_all, 0, np)?;
    let dx_scaled = tape.scale(dx_phys, 1.0 / norm.dx_step)?;

    Ok(ForwardVars {
        physical: np,
        weights,
        inv_mass,
        inv_inertia,
        substeps,
        dv_scaled,
        domega_scaled,
        dx_scaled,
    })
}

/// Per-edge quantities of one sub-step, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDiagnostics {
    pub edges: Vec<(usize, usize)>,
    pub axes: Vec<[Vec3; 3]>,
    pub force: Vec<Vec3>,
    pub angular: Vec<Vec3>,
    pub torque: Vec<Vec3>,
    pub r0: Vec<Vec3>,
    pub lambda: Vec<f64>,
    pub memory: Mat,
    /// Node positions used for the lever arms.
    pub lever_positions: Vec<Vec3>,
    /// Node updates of this sub-step (zero on ghosts).
    pub dv: Vec<Vec3>,
    pub domega: Vec<Vec3>,
}

/// Values of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Physical-node frame deltas in physical units.
    pub dv: Vec<Vec3>,
    pub domega: Vec<Vec3>,
    pub dx: Vec<Vec3>,
    /// `ψ_n1`, `ψ_n2`, `ψ_n3` per node (including ghosts).
    pub weights: Vec<f64>,
    pub inv_mass: Vec<f64>,
    pub inv_inertia: Vec<f64>,
    pub substeps: Vec<EdgeDiagnostics>,
}

fn column(m: &Mat) -> Vec<f64> {
    (0..m.rows()).map(|r| m.get(r, 0)).collect()
}

impl Prediction {
    pub fn from_tape(tape: &Tape, fv: &ForwardVars, g: &GraphState, norm: &Normalizer) -> Self {
        let scaled = |v: Var, s: f64| tape.value(v).to_vec3s().into_iter().map(|x| x * s).collect();
        let substeps = fv
            .substeps
            .iter()
            .map(|s| {
                let ax: [Vec<Vec3>; 3] = s.axes.map(|a| tape.value(a).to_vec3s());
                EdgeDiagnostics {
                    edges: g.edges.clone(),
                    axes: (0..g.edges.len()).map(|k| [ax[0][k], ax[1][k], ax[2][k]]).collect(),
                    force: tape.value(s.force).to_vec3s(),
                    angular: tape.value(s.angular).to_vec3s(),
                    torque: tape.value(s.torque).to_vec3s(),
                    r0: tape.value(s.r0).to_vec3s(),
                    lambda: column(tape.value(s.lambda)),
                    memory: tape.value(s.memory).clone(),
                    lever_positions: tape.value(s.lever_positions).to_vec3s(),
                    dv: tape.value(s.dv).to_vec3s(),
                    domega: tape.value(s.domega).to_vec3s(),
                }
            })
            .collect();
        Prediction {
            dv: scaled(fv.dv_scaled, norm.dv),
            domega: scaled(fv.domega_scaled, norm.domega),
            dx: scaled(fv.dx_scaled, norm.dx_step),
            weights: column(tape.value(fv.weights)),
            inv_mass: column(tape.value(fv.inv_mass)),
            inv_inertia: column(tape.value(fv.inv_inertia)),
            substeps,
        }
    }

    pub fn last(&self) -> &EdgeDiagnostics {
        self.substeps.last().expect("at least one sub-step")
    }
}

/// Forward pass without gradients.
pub fn predict(params: &ModelParams, g: &GraphState, norm: &Normalizer) -> Result<Prediction> {
    let mut tape = Tape::new();
    let fv = record_forward(&mut tape, params, g, norm)?;
    Ok(Prediction::from_tape(&tape, &fv, g, norm))
}
