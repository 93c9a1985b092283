use dynacal::dem::{generate, Frame, GenConfig, SceneKind, Trajectory};
use dynacal::graph::{BoundarySet, Normalizer};
use dynacal::model::{predict, ModelConfig};
use dynacal::rollout::{
    compare, learned_momenta, metrics, rollout, surface_slope, MetricConfig, MetricSeries, RolloutConfig,
};
use dynacal::train::{fit_normalizer, frame_graph, graph_settings, trajectory_samples};
use dynacal::verify::random_params;
use dynacal::Vec3;

fn oblique(seed: u64) -> Trajectory {
    generate(SceneKind::Oblique, &GenConfig::default(), seed).unwrap().0
}

fn model(lambda: Option<f64>) -> ModelConfig {
    ModelConfig { hidden: 8, steps: 2, lambda_override: lambda, ..ModelConfig::default() }
}

fn norm_for(traj: &Trajectory) -> Normalizer {
    fit_normalizer(&trajectory_samples(traj, 0, &graph_settings(traj, 1.25, true)).unwrap())
}

fn plain(reference: Vec3) -> MetricConfig {
    MetricConfig { reference, margin: 0.0, slope_bin: None }
}

fn frame(index: usize, r: Vec<Vec3>, v: Vec<Vec3>, omega: Vec<Vec3>) -> Frame {
    Frame { index, t: index as f64 * 1e-3, r, v, omega }
}

#[test]
fn isolated_sphere_drifts_in_a_straight_line() {
    let mut traj = oblique(0);
    traj.header.n = 1;
    traj.header.masses.truncate(1);
    traj.header.inertias.truncate(1);
    let v = Vec3::new(0.4, -0.3, 0.2);
    let r0 = Vec3::new(0.1, 0.2, 0.3);
    let f0 = frame(0, vec![r0], vec![v], vec![Vec3::ZERO]);
    let f1 = frame(1, vec![r0 + v * traj.header.dt], vec![v], vec![Vec3::ZERO]);
    let p = random_params(&model(None), 1).unwrap();
    let norm = Normalizer { v: 0.5, ..Normalizer::default() };
    let cfg = RolloutConfig::new(200, graph_settings(&traj, 1.25, true));
    let out = rollout(&p, &norm, &traj.header, &f0, &f1, &cfg).unwrap();
    assert_eq!(out.trajectory.frames.len(), 200);
    assert!(out.early_stop.is_none());
    for f in &out.trajectory.frames {
        let expected = r0 + v * (f.index as f64 * traj.header.dt);
        assert!((f.r[0] - expected).norm() < 1e-10, "frame {}: {:?}", f.index, f.r[0]);
        assert_eq!(f.v[0], v);
    }
}

#[test]
fn horizon_one_is_a_single_forward_step() {
    let traj = oblique(3);
    let norm = norm_for(&traj);
    let p = random_params(&model(None), 2).unwrap();
    let settings = graph_settings(&traj, 1.25, true);
    let t = 10;
    let cfg = RolloutConfig::new(1, settings.clone());
    let out = rollout(&p, &norm, &traj.header, &traj.frames[t - 1], &traj.frames[t], &cfg).unwrap();
    let pred = predict(&p, &norm.normalize(&frame_graph(&traj, t, &settings).unwrap()).unwrap(), &norm).unwrap();
    let next = &out.trajectory.frames[0];
    assert_eq!(next.index, t + 1);
    for i in 0..2 {
        assert_eq!(next.r[i], traj.frames[t].r[i] + pred.dx[i]);
        assert_eq!(next.v[i], traj.frames[t].v[i] + pred.dv[i]);
        assert_eq!(next.omega[i], traj.frames[t].omega[i] + pred.domega[i]);
    }
}

#[test]
fn rollouts_are_deterministic_and_conserve_learned_momenta() {
    let traj = oblique(4);
    let norm = norm_for(&traj);
    let p = random_params(&model(Some(1.0)), 6).unwrap();
    let mut cfg = RolloutConfig::new(100, graph_settings(&traj, 1.25, true));
    cfg.keep_diagnostics = true;
    let a = rollout(&p, &norm, &traj.header, &traj.frames[0], &traj.frames[1], &cfg).unwrap();
    let b = rollout(&p, &norm, &traj.header, &traj.frames[0], &traj.frames[1], &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.early_stop.is_none(), "{:?}", a.early_stop);
    assert_eq!(a.diagnostics.len(), 100);
    assert!(a.diagnostics.iter().any(|d| !d.edges.is_empty()));
    assert_eq!(a.diagnostics_jsonl().unwrap().lines().count(), 100);

    let mut frames = vec![traj.frames[1].clone()];
    frames.extend(a.trajectory.frames.iter().cloned());
    let m = learned_momenta(&frames, &a.inv_mass, &a.inv_inertia, &norm).unwrap();
    for x in &m {
        assert!((x.p - m[0].p).norm() <= 1e-8 * m[0].p_scale, "{:?} vs {:?}", x.p, m[0].p);
        assert!((x.l - m[0].l).norm() <= 1e-8 * m[0].l_scale, "{:?} vs {:?}", x.l, m[0].l);
    }
}

#[test]
fn runaway_speed_stops_the_rollout_early() {
    let traj = oblique(5);
    let norm = norm_for(&traj);
    let p = random_params(&model(None), 0).unwrap();
    let mut cfg = RolloutConfig::new(50, graph_settings(&traj, 1.25, true));
    cfg.blowup_factor = 1e-6;
    let out = rollout(&p, &norm, &traj.header, &traj.frames[0], &traj.frames[1], &cfg).unwrap();
    let stop = out.early_stop.expect("early stop");
    assert_eq!(stop.frame, 2);
    assert!(out.trajectory.frames.is_empty());
    cfg.blowup_factor = 0.0;
    assert!(rollout(&p, &norm, &traj.header, &traj.frames[0], &traj.frames[1], &cfg).is_err());
}

#[test]
fn metrics_of_bodies_at_rest_are_zero() {
    let f = frame(0, vec![Vec3::X, Vec3::Y], vec![Vec3::ZERO; 2], vec![Vec3::ZERO; 2]);
    let s = metrics(&[f], &[1.0, 3.0], &[0.1, 0.2], &BoundarySet::default(), &plain(Vec3::ZERO)).unwrap();
    let m = &s.frames[0];
    assert_eq!((m.ke, m.p, m.l, m.retained), (0.0, Vec3::ZERO, Vec3::ZERO, 2));
}

#[test]
fn single_sphere_orbital_angular_momentum() {
    let reference = Vec3::new(0.5, -1.0, 0.0);
    let f = frame(0, vec![reference + Vec3::Y], vec![Vec3::X], vec![Vec3::ZERO]);
    let s = metrics(&[f], &[2.0], &[0.3], &BoundarySet::default(), &plain(reference)).unwrap();
    let m = &s.frames[0];
    assert_eq!(m.l, Vec3::new(0.0, 0.0, -2.0));
    assert_eq!(m.p, Vec3::X);
    assert_eq!(m.ke, 0.5);
    assert_eq!(m.ke_trans, 0.5);
    assert_eq!(m.l_specific(), Vec3::new(0.0, 0.0, -1.0));
}

#[test]
fn escaped_bodies_are_left_out() {
    let walls = BoundarySet::cuboid(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
    let inside = Vec3::new(0.5, 0.5, 0.5);
    let f = frame(0, vec![inside, Vec3::new(1.04, 0.5, 0.5), Vec3::new(1.2, 0.5, 0.5)], vec![Vec3::X; 3], vec![Vec3::ZERO; 3]);
    let cfg = MetricConfig { margin: 0.05, ..plain(Vec3::ZERO) };
    let s = metrics(&[f], &[1.0, 1.0, 5.0], &[0.1; 3], &walls, &cfg).unwrap();
    assert_eq!(s.frames[0].retained, 2);
    assert_eq!(s.frames[0].mass, 2.0);
}

#[test]
fn oracle_momenta_stay_flat_in_free_space() {
    let traj = oblique(7);
    let s = metrics(&traj.frames, &traj.header.masses, &traj.header.inertias, &traj.header.boundaries, &plain(Vec3::ZERO))
        .unwrap();
    let (p0, l0) = (s.frames[0].p, s.frames[0].l);
    let (ps, ls) = (p0.norm().max(1e-300), l0.norm().max(1e-300));
    for f in &s.frames {
        assert!((f.p - p0).norm() <= 1e-9 * ps.max(f.ke.sqrt()), "{:?}", f.p);
        assert!((f.l - l0).norm() <= 1e-9 * ls.max(1e-3), "{:?}", f.l);
    }
}

#[test]
fn slope_of_a_tilted_surface() {
    let pts: Vec<Vec3> = (0..8)
        .flat_map(|k| {
            let x = 0.1 * k as f64;
            [Vec3::new(x, 0.0, 0.5 * x), Vec3::new(x + 0.01, 0.0, 0.5 * x - 0.2)]
        })
        .collect();
    let keep = vec![true; pts.len()];
    let s = surface_slope(&pts, &keep, 0.1).unwrap();
    assert!((s - 0.5f64.atan()).abs() < 1e-12, "{s}");
    assert!(surface_slope(&pts[..2], &keep[..2], 0.1).is_none());
}

fn series(ke: &[f64]) -> MetricSeries {
    let frames: Vec<Frame> = ke
        .iter()
        .enumerate()
        .map(|(k, &e)| frame(k, vec![Vec3::ZERO], vec![Vec3::new((2.0 * e).sqrt(), 0.0, 0.0)], vec![Vec3::ZERO]))
        .collect();
    metrics(&frames, &[1.0], &[1.0], &BoundarySet::default(), &plain(Vec3::ZERO)).unwrap()
}

#[test]
fn comparison_examples() {
    let a = series(&[1.0, 0.8, 0.5, 0.4]);
    let same = compare(&a, &a).unwrap();
    assert!(same.rows.iter().all(|r| r.rmse == 0.0 && r.max_dev == 0.0));
    let mut b = a.clone();
    for f in &mut b.frames {
        f.ke += 0.25;
    }
    let c = compare(&b, &a).unwrap();
    let ke = c.get("ke").unwrap();
    assert!((ke.rmse - 0.25).abs() < 1e-15 && (ke.max_dev - 0.25).abs() < 1e-15);
    assert_eq!(c.get("p_y").unwrap().rmse, 0.0);
    assert!(c.get("slope").is_none());
    assert_eq!(c.to_csv(), compare(&b, &a).unwrap().to_csv());
    assert!(c.to_csv().starts_with("metric,rmse,max_dev\n"));
    assert!(compare(&a, &series(&[1.0])).is_err());
    assert_eq!(a.to_csv().lines().count(), 5);
}
