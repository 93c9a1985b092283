//! Single-step supervised training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dem::Trajectory;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{build_graph, FrameState, GraphSettings, GraphState, Normalizer};
use crate::model::{record_forward, ForwardVars, ModelConfig, ModelParams, Prediction};
use crate::nn::{AdamConfig, Gradients, Mat, OptimState, Tape, Var};

/// One frame-to-frame transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Unnormalized graph at frame `t` (velocities at `t` and `t − 1`).
    pub graph: GraphState,
    /// Physical-node changes from frame `t` to `t + 1`.
    pub dv: Vec<Vec3>,
    pub domega: Vec<Vec3>,
    pub dx: Vec<Vec3>,
    /// Source trajectory and frame index.
    pub origin: (usize, usize),
}

/// Graph construction settings for a trajectory.
pub fn graph_settings(traj: &Trajectory, d_c_factor: f64, prune_ghosts: bool) -> GraphSettings {
    GraphSettings {
        d_c: d_c_factor * 2.0 * traj.header.radius,
        dt: traj.header.dt,
        radius: traj.header.radius,
        prune_ghosts,
    }
}

/// Frame `t` of `traj` as a graph, with frame `t − 1` supplying previous velocities.
pub fn frame_graph(traj: &Trajectory, t: usize, settings: &GraphSettings) -> Result<GraphState> {
    if t == 0 || t >= traj.frames.len() {
        return Err(Error::InvalidInput(format!("frame {t} has no predecessor in range")));
    }
    let (prev, cur) = (&traj.frames[t - 1], &traj.frames[t]);
    let state = FrameState {
        r: cur.r.clone(),
        v: cur.v.clone(),
        omega: cur.omega.clone(),
        v_prev: prev.v.clone(),
        omega_prev: prev.omega.clone(),
    };
    build_graph(&state, &traj.header.boundaries, settings, cur.t)
}

/// Samples of one trajectory: frames `1..T−1`, i.e. `T − 2` transitions.
pub fn trajectory_samples(traj: &Trajectory, k: usize, settings: &GraphSettings) -> Result<Vec<Sample>> {
    let t_len = traj.frames.len();
    if t_len < 3 {
        return Err(Error::InvalidInput(format!("trajectory {k} has {t_len} frames; at least 3 are needed")));
    }
    (1..t_len - 1)
        .map(|t| {
            let (cur, next) = (&traj.frames[t], &traj.frames[t + 1]);
            let diff = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| *x - *y).collect::<Vec<_>>();
            Ok(Sample {
                graph: frame_graph(traj, t, settings)?,
                dv: diff(&next.v, &cur.v),
                domega: diff(&next.omega, &cur.omega),
                dx: diff(&next.r, &cur.r),
                origin: (k, t),
            })
        })
        .collect()
}

/// Largest magnitudes over the given samples; zero maxima fall back to 1.
pub fn fit_normalizer<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Normalizer {
    use crate::graph::normalize::positive_or_one;
    let mut m = [0.0f64; 6];
    let max_norm = |acc: &mut f64, vs: &[Vec3]| {
        for v in vs {
            *acc = acc.max(v.norm());
        }
    };
    for s in samples {
        let np = s.graph.physical_count();
        for n in &s.graph.nodes[..np] {
            m[0] = m[0].max(n.v.norm()).max(n.v_prev.norm());
            m[1] = m[1].max(n.omega.norm()).max(n.omega_prev.norm());
        }
        for &(a, b) in &s.graph.edges {
            m[2] = m[2].max((s.graph.nodes[b].r - s.graph.nodes[a].r).norm());
        }
        max_norm(&mut m[3], &s.dv);
        max_norm(&mut m[4], &s.domega);
        max_norm(&mut m[5], &s.dx);
    }
    Normalizer {
        v: positive_or_one(m[0]),
        omega: positive_or_one(m[1]),
        dx: positive_or_one(m[2]),
        dv: positive_or_one(m[3]),
        domega: positive_or_one(m[4]),
        dx_step: positive_or_one(m[5]),
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub normalizer: Normalizer,
}

/// Splits whole trajectories: the last `ceil(val_fraction · n)` go to
/// validation (at least one is kept for training). The normalizer only sees
/// the training split.
pub fn make_dataset(trajs: &[Trajectory], d_c_factor: f64, prune_ghosts: bool, val_fraction: f64) -> Result<Dataset> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("no trajectories".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidInput(format!("validation fraction {val_fraction} outside [0, 1)")));
    }
    let n_val = ((trajs.len() as f64 * val_fraction).ceil() as usize).min(trajs.len() - 1);
    let n_train = trajs.len() - n_val;
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (k, t) in trajs.iter().enumerate() {
        let s = trajectory_samples(t, k, &graph_settings(t, d_c_factor, prune_ghosts))?;
        if k < n_train {
            train.extend(s);
        } else {
            validation.extend(s);
        }
    }
    let normalizer = fit_normalizer(&train);
    Ok(Dataset { train, validation, normalizer })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub w_v: f64,
    pub w_omega: f64,
    pub w_x: f64,
    pub val_fraction: f64,
    /// Training samples drawn per epoch; all when absent.
    pub samples_per_epoch: Option<usize>,
    /// Validation samples scored per epoch (evenly spaced); all when absent.
    pub val_samples: Option<usize>,
    pub clip_norm: f64,
    /// Standard deviation of Gaussian noise added to normalized input velocities.
    pub input_noise: f64,
    /// Threshold-distance factor on the sphere diameter.
    pub d_c_factor: f64,
    pub prune_ghosts: bool,
    /// Check edge antisymmetry on one training graph per epoch.
    pub monitor_invariants: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            seed: 0,
            w_v: 1.0,
            w_omega: 1.0,
            w_x: 1.0,
            val_fraction: 0.2,
            samples_per_epoch: None,
            val_samples: None,
            clip_norm: 1.0,
            input_noise: 0.0,
            d_c_factor: 1.25,
            prune_ghosts: true,
            monitor_invariants: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_v, self.w_omega, self.w_x];
        if w.iter().any(|&x| !(x >= 0.0)) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("loss weights must be non-negative and not all zero".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate, lr_decay and clip_norm must be positive".into()));
        }
        if !(self.d_c_factor > 0.0) || !(self.input_noise >= 0.0) {
            return Err(Error::Config("d_c_factor must be positive and input_noise non-negative".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { v: self.w_v, omega: self.w_omega, x: self.w_x }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub v: f64,
    pub omega: f64,
    pub x: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { v: 1.0, omega: 1.0, x: 1.0 }
    }
}

fn scaled_target(tape: &mut Tape, vs: &[Vec3], scale: f64) -> Var {
    let scaled: Vec<Vec3> = vs.iter().map(|v| *v / scale).collect();
    tape.constant(Mat::from_vec3s(&scaled))
}

/// `w_v·MSE(Δv) + w_ω·MSE(Δω) + w_x·MSE(Δx)` in target-scaled units.
pub fn record_loss(
    tape: &mut Tape,
    fv: &ForwardVars,
    sample: &Sample,
    norm: &Normalizer,
    w: LossWeights,
) -> Result<Var> {
    let tv = scaled_target(tape, &sample.dv, norm.dv);
    let tw = scaled_target(tape, &sample.domega, norm.domega);
    let tx = scaled_target(tape, &sample.dx, norm.dx_step);
    let lv = tape.mse(fv.dv_scaled, tv)?;
    let lw = tape.mse(fv.domega_scaled, tw)?;
    let lx = tape.mse(fv.dx_scaled, tx)?;
    let lv = tape.scale(lv, w.v)?;
    let lw = tape.scale(lw, w.omega)?;
    let lx = tape.scale(lx, w.x)?;
    let s = tape.add(lv, lw)?;
    tape.add(s, lx)
}

/// Loss of one sample; `graph` must be the normalized form of `sample.graph`.
pub fn sample_loss(params: &ModelParams, graph: &GraphState, sample: &Sample, norm: &Normalizer, w: LossWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let fv = record_forward(&mut tape, params, graph, norm)?;
    let loss = record_loss(&mut tape, &fv, sample, norm, w)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(
    params: &ModelParams,
    graph: &GraphState,
    sample: &Sample,
    norm: &Normalizer,
    w: LossWeights,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let fv = record_forward(&mut tape, params, graph, norm)?;
    let loss = record_loss(&mut tape, &fv, sample, norm, w)?;
    let adj = tape.backward(loss, &params.store)?;
    Ok((tape.value(loss).get(0, 0), adj.params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub grad_norm: f64,
    /// Largest `‖F_ij + F_ji‖` seen on the monitored graph.
    pub antisymmetry: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,grad_norm,antisymmetry\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.epoch, r.train_loss, r.val_loss, r.grad_norm, r.antisymmetry
        ));
    }
    s
}

/// Largest `‖F_ij + F_ji‖` over all sub-steps of a prediction.
pub fn max_force_antisymmetry(p: &Prediction) -> f64 {
    let mut worst = 0.0f64;
    for s in &p.substeps {
        for (k, &(a, b)) in s.edges.iter().enumerate() {
            if let Ok(r) = s.edges.binary_search(&(b, a)) {
                worst = worst.max((s.force[k] + s.force[r]).norm());
            }
        }
    }
    worst
}

fn mean_loss(params: &ModelParams, graphs: &[(GraphState, &Sample)], norm: &Normalizer, w: LossWeights) -> Result<f64> {
    if graphs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for (g, s) in graphs {
        total += sample_loss(params, g, s, norm, w)?;
    }
    Ok(total / graphs.len() as f64)
}

fn perturb(g: &GraphState, noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> GraphState {
    let mut out = g.clone();
    for n in out.nodes.iter_mut().filter(|n| !n.is_ghost()) {
        n.v += Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
    }
    out
}

fn evenly_spaced<T>(items: &[T], limit: Option<usize>) -> Vec<&T> {
    match limit {
        Some(k) if k < items.len() && k > 0 => (0..k).map(|i| &items[i * items.len() / k]).collect(),
        _ => items.iter().collect(),
    }
}

/// Trains fresh parameters initialized from `cfg.seed`.
pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = ModelParams::new(model_cfg.clone(), cfg.seed)?;
    train_from(params, dataset, cfg)
}

/// Trains `params` in place, returning the best-validation snapshot.
pub fn train_from(mut params: ModelParams, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let norm = dataset.normalizer;
    let w = cfg.weights();
    let train_graphs: Vec<(GraphState, &Sample)> = dataset
        .train
        .iter()
        .map(|s| Ok((norm.normalize(&s.graph)?, s)))
        .collect::<Result<_>>()?;
    let val_graphs: Vec<(GraphState, &Sample)> = evenly_spaced(&dataset.validation, cfg.val_samples)
        .into_iter()
        .map(|s| Ok((norm.normalize(&s.graph)?, s)))
        .collect::<Result<_>>()?;
    let score_set: Vec<(GraphState, &Sample)> = if val_graphs.is_empty() {
        evenly_spaced(&train_graphs, cfg.val_samples).into_iter().cloned().collect()
    } else {
        val_graphs
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let noise = Normal::new(0.0, cfg.input_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut opt = OptimState::new(&params.store, AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    let monitor = |params: &ModelParams, rng: &mut ChaCha8Rng| -> Result<f64> {
        if !cfg.monitor_invariants {
            return Ok(0.0);
        }
        let k = rng.random_range(0..train_graphs.len());
        let p = crate::model::predict(params, &train_graphs[k].0, &norm)?;
        Ok(max_force_antisymmetry(&p))
    };

    let initial_train = mean_loss(&params, &evenly_spaced(&train_graphs, cfg.val_samples).into_iter().cloned().collect::<Vec<_>>(), &norm, w)?;
    let initial_val = mean_loss(&params, &score_set, &norm, w)?;
    if !initial_val.is_finite() {
        return Err(Error::Divergence { epoch: 0, detail: format!("initial loss {initial_val}") });
    }
    history.push(EpochRecord {
        epoch: 0,
        train_loss: initial_train,
        val_loss: initial_val,
        grad_norm: 0.0,
        antisymmetry: monitor(&params, &mut rng)?,
    });
    let mut best = (initial_val, 0usize, params.clone());

    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let take = cfg.samples_per_epoch.unwrap_or(order.len()).min(order.len()).max(1);
        let mut total = 0.0;
        let mut grad_norm = 0.0f64;
        for batch in order[..take].chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&params.store);
            for &k in batch {
                let (g, s) = &train_graphs[k];
                let loss_and_grads = if cfg.input_noise > 0.0 {
                    sample_gradients(&params, &perturb(g, &noise, &mut rng), s, &norm, w)?
                } else {
                    sample_gradients(&params, g, s, &norm, w)?
                };
                let (loss, grads) = loss_and_grads;
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("non-finite loss or gradient on sample {:?}", s.origin),
                    });
                }
                total += loss;
                acc.add_assign(&grads);
            }
            acc.scale(1.0 / batch.len() as f64);
            grad_norm = grad_norm.max(acc.clip_global_norm(cfg.clip_norm));
            opt.step(&mut params.store, &acc)?;
        }
        opt.config.lr *= cfg.lr_decay;
        let val = mean_loss(&params, &score_set, &norm, w)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("validation loss {val}") });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / take as f64,
            val_loss: val,
            grad_norm,
            antisymmetry: monitor(&params, &mut rng)?,
        };
        if val < best.0 {
            best = (val, epoch, params.clone());
        }
        history.push(record);
    }
    Ok(TrainOutcome { params: best.2, best_epoch: best.1, history })
}
