use dynacal::dem::{generate, Frame, GenConfig, SceneKind, Trajectory};
use dynacal::model::{predict, ModelConfig, ModelParams};
use dynacal::train::{
    fit_normalizer, graph_settings, history_csv, make_dataset, sample_loss, train, trajectory_samples, LossWeights,
    TrainConfig,
};
use dynacal::Vec3;

fn oblique(seed: u64, frames: usize) -> Trajectory {
    let mut cfg = GenConfig::default();
    cfg.oblique.frames = frames;
    generate(SceneKind::Oblique, &cfg, seed).unwrap().0
}

/// Two far-apart bodies moving at constant velocity and spin.
fn drift(frames: usize) -> Trajectory {
    let mut traj = oblique(0, 3);
    let dt = traj.header.dt;
    let r0 = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
    let v = vec![Vec3::new(0.25, 0.0, -0.5), Vec3::new(0.0, 0.125, 0.0)];
    let omega = vec![Vec3::new(0.0, 2.0, 0.0), Vec3::ZERO];
    traj.frames = (0..frames)
        .map(|k| {
            let t = k as f64 * dt;
            Frame { index: k, t, r: r0.iter().zip(&v).map(|(r, v)| *r + *v * t).collect(), v: v.clone(), omega: omega.clone() }
        })
        .collect();
    traj
}

fn quick_model() -> ModelConfig {
    ModelConfig { hidden: 8, steps: 2, lambda_override: Some(1.0), ..ModelConfig::default() }
}

#[test]
fn trajectory_of_t_frames_gives_t_minus_two_samples() {
    let traj = oblique(1, 30);
    let settings = graph_settings(&traj, 1.25, true);
    let samples = trajectory_samples(&traj, 0, &settings).unwrap();
    assert_eq!(samples.len(), 28);
    assert_eq!(samples[0].origin, (0, 1));
    assert_eq!(samples[0].dv[1], traj.frames[2].v[1] - traj.frames[1].v[1]);
    assert_eq!(samples[0].graph.nodes[0].v_prev, traj.frames[0].v[0]);
    let mut short = traj.clone();
    short.frames.truncate(2);
    assert!(trajectory_samples(&short, 0, &settings).is_err());
}

#[test]
fn constant_drift_has_zero_velocity_targets() {
    let traj = drift(10);
    let samples = trajectory_samples(&traj, 0, &graph_settings(&traj, 1.25, true)).unwrap();
    for s in &samples {
        assert!(s.dv.iter().chain(&s.domega).all(|d| *d == Vec3::ZERO));
        assert!(s.graph.edges.is_empty());
    }
}

#[test]
fn normalizer_matches_a_brute_force_scan_of_the_training_split() {
    let trajs: Vec<Trajectory> = (0..4).map(|s| oblique(s, 40)).collect();
    let ds = make_dataset(&trajs, 1.25, true, 0.25).unwrap();
    assert!(ds.train.iter().all(|s| s.origin.0 < 3));
    assert!(ds.validation.iter().all(|s| s.origin.0 == 3));
    let (mut v, mut w, mut dv) = (0.0f64, 0.0f64, 0.0f64);
    for traj in &trajs[..3] {
        for f in &traj.frames[..traj.frames.len() - 1] {
            v = f.v.iter().fold(v, |m, x| m.max(x.norm()));
            w = f.omega.iter().fold(w, |m, x| m.max(x.norm()));
        }
        for p in traj.frames[1..].windows(2) {
            dv = p[1].v.iter().zip(&p[0].v).fold(dv, |m, (a, b)| m.max((*a - *b).norm()));
        }
    }
    assert_eq!(ds.normalizer.v, v);
    assert_eq!(ds.normalizer.omega, w);
    assert_eq!(ds.normalizer.dv, dv);
    assert_eq!(fit_normalizer(&ds.train), ds.normalizer);
}

#[test]
fn loss_is_zero_at_the_target_and_counts_unit_errors() {
    let traj = oblique(2, 20);
    let mut sample = trajectory_samples(&traj, 0, &graph_settings(&traj, 1.25, true)).unwrap().remove(5);
    let norm = fit_normalizer([&sample]);
    let p = ModelParams::new(quick_model(), 0).unwrap();
    let g = norm.normalize(&sample.graph).unwrap();
    let pred = predict(&p, &g, &norm).unwrap();
    sample.dv = pred.dv.clone();
    sample.domega = pred.domega.clone();
    sample.dx = pred.dx.clone();
    let w = LossWeights { v: 2.0, omega: 1.0, x: 1.0 };
    let zero = sample_loss(&p, &g, &sample, &norm, w).unwrap();
    assert!(zero < 1e-28, "{zero}");
    sample.dv[1].y += norm.dv;
    let one = sample_loss(&p, &g, &sample, &norm, w).unwrap();
    assert!((one - 2.0 / 6.0).abs() < 1e-12, "{one}");
}

#[test]
fn training_is_deterministic_and_keeps_antisymmetry() {
    let trajs: Vec<Trajectory> = (0..3).map(|s| oblique(s, 30)).collect();
    let ds = make_dataset(&trajs, 1.25, true, 0.34).unwrap();
    let cfg = TrainConfig { epochs: 3, samples_per_epoch: Some(16), seed: 7, ..TrainConfig::default() };
    let a = train(&ds, &quick_model(), &cfg).unwrap();
    let b = train(&ds, &quick_model(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params.store, b.params.store);
    assert_eq!(a.history.len(), 4);
    assert!(a.history.iter().all(|h| h.antisymmetry == 0.0));
    assert!(history_csv(&a.history).starts_with("epoch,"));
    let c = train(&ds, &quick_model(), &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn zero_epochs_returns_the_initial_parameters() {
    let trajs: Vec<Trajectory> = (0..2).map(|s| oblique(s, 20)).collect();
    let ds = make_dataset(&trajs, 1.25, true, 0.5).unwrap();
    let cfg = TrainConfig { epochs: 0, seed: 3, ..TrainConfig::default() };
    let out = train(&ds, &quick_model(), &cfg).unwrap();
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.params.store, ModelParams::new(quick_model(), 3).unwrap().store);
}

#[test]
fn bad_configs_are_rejected() {
    assert!(TrainConfig::from_toml("w_v = 0.0\nw_omega = 0.0\nw_x = 0.0").is_err());
    assert!(TrainConfig::from_toml("batch_size = 0").is_err());
    let err = TrainConfig::from_toml("epochz = 3").unwrap_err().to_string();
    assert!(err.contains("epochz"), "{err}");
    assert!(make_dataset(&[], 1.25, true, 0.2).is_err());
}

#[test]
fn oblique_validation_loss_falls_tenfold() {
    let trajs: Vec<Trajectory> = (0..6).map(|s| oblique(s, 120)).collect();
    let ds = make_dataset(&trajs, 1.25, true, 0.2).unwrap();
    let model = ModelConfig { hidden: 16, steps: 2, lambda_override: Some(1.0), ..ModelConfig::default() };
    let cfg = TrainConfig { epochs: 200, samples_per_epoch: Some(64), val_samples: Some(60), lr_decay: 0.99, ..TrainConfig::default() };
    let out = train(&ds, &model, &cfg).unwrap();
    let first = out.history[0].val_loss;
    let best = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    assert!(first / best >= 10.0, "initial {first:e}, best {best:e}");
}
