use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dynacal::dem::trajectory::TRAJECTORY_SCHEMA;
use dynacal::dem::{generate, GenConfig, SceneKind, Trajectory};
use dynacal::model::{ModelConfig, ModelParams};
use dynacal::nn::checkpoint::CHECKPOINT_VERSION;
use dynacal::nn::Checkpoint;
use dynacal::rollout::{compare, metrics, rollout, MetricConfig, RolloutConfig};
use dynacal::train::{graph_settings, history_csv, make_dataset, train, TrainConfig};
use dynacal::verify::{run_suite, SuiteConfig};
use dynacal::Vec3;

use crate::manifest::{file_digest, unix_now, EmbeddedConfig, Manifest, MANIFEST_VERSION};
use crate::{Cli, Command, GenArgs, MetricsArgs, RolloutArgs, TrainArgs, VerifyArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    InvariantFailure,
    Blowup,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::InvariantFailure => 2,
            Status::Blowup => 3,
        }
    }
}

pub fn error_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<dynacal::Error>() {
        Some(dynacal::Error::SimulationBlowup(_) | dynacal::Error::Divergence { .. }) => 3,
        _ => 1,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    version: u32,
    gen: GenConfig,
    model: ModelConfig,
    train: TrainConfig,
    rollout: RolloutOptions,
    verify: VerifyOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            gen: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            rollout: RolloutOptions::default(),
            verify: VerifyOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RolloutOptions {
    blowup_factor: f64,
    /// Reference point for angular momentum.
    reference: Vec3,
    /// Surface-slope bin width; cylinder scenes default to one diameter.
    slope_bin: Option<f64>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions { blowup_factor: 1e3, reference: Vec3::ZERO, slope_bin: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct VerifyOptions {
    graphs: usize,
    symmetry_trials: usize,
    reference_points: usize,
    gradient_stride: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        let s = SuiteConfig::default();
        VerifyOptions {
            graphs: s.graphs,
            symmetry_trials: s.symmetry_trials,
            reference_points: s.reference_points,
            gradient_stride: s.gradient_stride,
        }
    }
}

fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)?;
    if cfg.version != CONFIG_VERSION {
        bail!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version);
    }
    cfg.gen.validate()?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    config: RunConfig,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Ctx {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Result<Status> {
    if let Command::Rerun(r) = &cli.command {
        return rerun(&r.manifest, &cli.out);
    }
    let embedded = match &cli.config {
        Some(p) => Some(EmbeddedConfig {
            path: p.clone(),
            text: fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        }),
        None => None,
    };
    execute(cli, argv, embedded)
}

fn rerun(manifest: &Path, out: &Path) -> Result<Status> {
    let m = Manifest::read(manifest)?;
    if m.command == "rerun" {
        bail!("a manifest cannot record a rerun");
    }
    m.check_inputs()?;
    let mut cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("dynacal".to_string()).chain(m.argv.iter().cloned()))
        .context("recorded arguments no longer parse")?;
    cli.out = out.to_path_buf();
    execute(cli, m.argv, m.config)
}

fn execute(cli: Cli, argv: Vec<String>, embedded: Option<EmbeddedConfig>) -> Result<Status> {
    let started = unix_now();
    let config = match &embedded {
        Some(e) => parse_config(&e.text).with_context(|| format!("invalid config {}", e.path.display()))?,
        None => RunConfig::default(),
    };
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut ctx = Ctx { seed: cli.seed, out: cli.out.clone(), config, inputs: BTreeMap::new(), outputs: Vec::new() };
    let status = match &cli.command {
        Command::Gen(a) => cmd_gen(&mut ctx, a)?,
        Command::Train(a) => cmd_train(&mut ctx, a)?,
        Command::Verify(a) => cmd_verify(&mut ctx, a)?,
        Command::Rollout(a) => cmd_rollout(&mut ctx, a)?,
        Command::Metrics(a) => cmd_metrics(&mut ctx, a)?,
        Command::Rerun(_) => unreachable!("handled by dispatch"),
    };
    Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        trajectory_schema: TRAJECTORY_SCHEMA,
        checkpoint_format: CHECKPOINT_VERSION,
        command: cli.command.name().to_string(),
        argv,
        seed: ctx.seed,
        out: ctx.out.clone(),
        config: embedded,
        inputs: ctx.inputs,
        outputs: ctx.outputs,
        started_unix: started,
        finished_unix: unix_now(),
    }
    .write(&ctx.out)?;
    Ok(status)
}

fn cmd_gen(ctx: &mut Ctx, a: &GenArgs) -> Result<Status> {
    let kind: SceneKind = a.scene.into();
    let mut cfg = ctx.config.gen.clone();
    match kind {
        SceneKind::Oblique => {
            if a.n.is_some() {
                bail!("--n does not apply to the oblique scene, which always has two bodies");
            }
            if let Some(f) = a.frames {
                cfg.oblique.frames = f;
            }
        }
        SceneKind::Confined => {
            cfg.confined.n = a.n.unwrap_or(cfg.confined.n);
            cfg.confined.frames = a.frames.unwrap_or(cfg.confined.frames);
        }
        SceneKind::Cylinder => {
            cfg.cylinder.n = a.n.unwrap_or(cfg.cylinder.n);
            cfg.cylinder.frames = a.frames.unwrap_or(cfg.cylinder.frames);
            if a.reverse_spin {
                cfg.cylinder.spin = cfg.cylinder.spin.negated();
            }
        }
    }
    if a.reverse_spin && kind != SceneKind::Cylinder {
        bail!("--reverse-spin applies only to the cylinder scene");
    }
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    cfg.validate()?;
    let mut audit = String::from("file,max_energy_gain\n");
    for k in 0..a.count as u64 {
        let seed = ctx.seed + k;
        let (traj, report) = generate(kind, &cfg, seed)?;
        let name = format!("{}_{seed:04}.jsonl", kind.name());
        ctx.write(&name, &traj.to_string()?)?;
        audit.push_str(&format!("{name},{:.16e}\n", report.max_energy_gain));
        println!("{name}: {} bodies, {} frames", traj.header.n, traj.frames.len());
    }
    ctx.write("audit.csv", &audit)?;
    Ok(Status::Success)
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading data directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no trajectory files (*.jsonl) in {}", dir.display());
    }
    Ok(files)
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<Status> {
    let files = trajectory_files(&a.data)?;
    let mut trajs = Vec::with_capacity(files.len());
    for f in &files {
        ctx.input(f)?;
        trajs.push(Trajectory::load(f).with_context(|| format!("loading {}", f.display()))?);
    }
    let mut tc = ctx.config.train.clone();
    tc.seed = ctx.seed;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let ds = make_dataset(&trajs, tc.d_c_factor, tc.prune_ghosts, tc.val_fraction)?;
    println!(
        "{} trajectories: {} training and {} validation samples",
        trajs.len(),
        ds.train.len(),
        ds.validation.len()
    );
    let outcome = train(&ds, &ctx.config.model, &tc)?;
    let mut ck = outcome.params.to_checkpoint(&ds.normalizer)?;
    ck.meta.insert("d_c_factor".into(), format!("{:.16e}", tc.d_c_factor));
    ck.meta.insert("prune_ghosts".into(), tc.prune_ghosts.to_string());
    ck.meta.insert("trajectory_schema".into(), TRAJECTORY_SCHEMA.to_string());
    ctx.write(CHECKPOINT_FILE, &ck.to_text()?)?;
    ctx.write("history.csv", &history_csv(&outcome.history))?;
    let first = outcome.history.first().map_or(f64::NAN, |r| r.val_loss);
    let best = outcome.history[outcome.best_epoch].val_loss;
    println!("validation loss {first:.6e} -> {best:.6e} (best epoch {})", outcome.best_epoch);
    Ok(Status::Success)
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> Result<(ModelParams, dynacal::graph::Normalizer, Checkpoint)> {
    ctx.input(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck = Checkpoint::from_text(&text).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    let (params, norm) = ModelParams::from_checkpoint(&ck)?;
    Ok((params, norm, ck))
}

fn cmd_verify(ctx: &mut Ctx, a: &VerifyArgs) -> Result<Status> {
    let v = ctx.config.verify.clone();
    let mut suite = SuiteConfig {
        graphs: a.graphs.unwrap_or(v.graphs),
        symmetry_trials: v.symmetry_trials,
        reference_points: v.reference_points,
        gradient_stride: v.gradient_stride,
        ..SuiteConfig::default()
    };
    suite.model.corrupt_torque_sign = a.corrupt_torque_sign;
    let params = match &a.checkpoint {
        Some(p) => {
            let (mut params, _, _) = load_checkpoint(ctx, p)?;
            params.config.corrupt_torque_sign = a.corrupt_torque_sign;
            Some(params)
        }
        None => None,
    };
    let results = run_suite(&suite, params.as_ref(), ctx.seed)?;
    let mut report = String::from("invariant,worst,tolerance,passed\n");
    for r in &results {
        println!("{} {:<32} worst {:.3e} (tolerance {:.0e})", if r.passed { "PASS" } else { "FAIL" }, r.name, r.worst, r.tolerance);
        report.push_str(&format!("{},{:.16e},{:.16e},{}\n", r.name, r.worst, r.tolerance, r.passed));
    }
    ctx.write("report.csv", &report)?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        return Ok(Status::Success);
    }
    for r in failed {
        eprintln!("invariant violated: {} residual {:.3e} exceeds {:.0e}", r.name, r.worst, r.tolerance);
    }
    Ok(Status::InvariantFailure)
}

fn metric_config(ctx: &Ctx, traj: &Trajectory) -> MetricConfig {
    let r = traj.header.radius;
    let cylinder = traj.header.scene.starts_with(SceneKind::Cylinder.name());
    MetricConfig {
        reference: ctx.config.rollout.reference,
        margin: r,
        slope_bin: ctx.config.rollout.slope_bin.or(cylinder.then_some(2.0 * r)),
    }
}

#[derive(Serialize)]
struct RolloutStatus<'a> {
    horizon: usize,
    frames: usize,
    early_stop: Option<&'a dynacal::rollout::EarlyStop>,
}

fn cmd_rollout(ctx: &mut Ctx, a: &RolloutArgs) -> Result<Status> {
    let (params, norm, ck) = load_checkpoint(ctx, &a.checkpoint)?;
    ctx.input(&a.scene)?;
    let scene = Trajectory::load(&a.scene).with_context(|| format!("loading {}", a.scene.display()))?;
    if let Some(s) = ck.meta.get("trajectory_schema") {
        if s != &scene.header.schema.to_string() {
            bail!("checkpoint was trained on trajectory schema {s}, scene uses {}", scene.header.schema);
        }
    }
    if params.config.label_width != 1 {
        bail!("checkpoint expects {} label columns; scenes carry one", params.config.label_width);
    }
    let d_c_factor = match ck.meta.get("d_c_factor") {
        Some(s) => s.parse::<f64>().with_context(|| format!("bad d_c_factor `{s}` in checkpoint"))?,
        None => TrainConfig::default().d_c_factor,
    };
    let prune = ck.meta.get("prune_ghosts").map_or(true, |s| s == "true");
    let t_len = scene.frames.len();
    if a.start == 0 || a.start >= t_len {
        bail!("--start must lie in 1..{t_len}");
    }
    let horizon = a.horizon.unwrap_or(t_len - 1 - a.start);
    if horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let rc = RolloutConfig {
        horizon,
        settings: graph_settings(&scene, d_c_factor, prune),
        blowup_factor: ctx.config.rollout.blowup_factor,
        keep_diagnostics: a.diagnostics,
    };
    let res = rollout(&params, &norm, &scene.header, &scene.frames[a.start - 1], &scene.frames[a.start], &rc)?;
    ctx.write("rollout.jsonl", &res.trajectory.to_string()?)?;
    let mc = metric_config(ctx, &scene);
    let h = &scene.header;
    let pm = metrics(&res.trajectory.frames, &h.masses, &h.inertias, &h.boundaries, &mc)?;
    ctx.write("metrics.csv", &pm.to_csv())?;
    if let Some(tp) = &a.truth {
        ctx.input(tp)?;
        let truth = Trajectory::load(tp).with_context(|| format!("loading {}", tp.display()))?;
        if truth.header.n != h.n {
            bail!("truth has {} bodies, scene has {}", truth.header.n, h.n);
        }
        let lo = a.start + 1;
        let hi = lo + res.trajectory.frames.len();
        if hi > truth.frames.len() {
            bail!("truth has {} frames; rollout needs up to frame {}", truth.frames.len(), hi - 1);
        }
        let tm = metrics(&truth.frames[lo..hi], &h.masses, &h.inertias, &h.boundaries, &mc)?;
        ctx.write("truth_metrics.csv", &tm.to_csv())?;
        ctx.write("comparison.csv", &compare(&pm, &tm)?.to_csv())?;
    }
    if a.diagnostics {
        ctx.write("diagnostics.jsonl", &res.diagnostics_jsonl()?)?;
    }
    let status = RolloutStatus { horizon, frames: res.trajectory.frames.len(), early_stop: res.early_stop.as_ref() };
    ctx.write("status.json", &(serde_json::to_string_pretty(&status)? + "\n"))?;
    println!("predicted {} of {horizon} frames", res.trajectory.frames.len());
    match &res.early_stop {
        Some(e) => {
            eprintln!("rollout stopped early at frame {}: {}", e.frame, e.reason);
            Ok(Status::Blowup)
        }
        None => Ok(Status::Success),
    }
}

fn cmd_metrics(ctx: &mut Ctx, a: &MetricsArgs) -> Result<Status> {
    ctx.input(&a.trajectory)?;
    let traj = Trajectory::load(&a.trajectory).with_context(|| format!("loading {}", a.trajectory.display()))?;
    let h = &traj.header;
    let m = metrics(&traj.frames, &h.masses, &h.inertias, &h.boundaries, &metric_config(ctx, &traj))?;
    ctx.write("metrics.csv", &m.to_csv())?;
    Ok(Status::Success)
}
