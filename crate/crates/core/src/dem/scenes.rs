//! Scene generators for the three experiment families.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::contact::{Body, DemState, Material, WallMaterial};
use super::trajectory::{Frame, Header, Trajectory, TRAJECTORY_SCHEMA};
use crate::error::{Error, Result};
use crate::geom::{random_unit, Vec3};
use crate::graph::{Boundary, BoundarySet, SpinProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Oblique,
    Confined,
    Cylinder,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Oblique => "oblique",
            SceneKind::Confined => "confined",
            SceneKind::Cylinder => "cylinder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObliqueConfig {
    pub frames: usize,
    /// Initial surface-to-surface gap (m).
    pub gap: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Largest impact parameter as a fraction of the diameter.
    pub max_impact: f64,
    /// Largest centre-of-mass speed (m/s).
    pub drift_max: f64,
}

impl Default for ObliqueConfig {
    fn default() -> Self {
        ObliqueConfig { frames: 120, gap: 0.02, speed_min: 0.5, speed_max: 1.5, max_impact: 0.6, drift_max: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfinedConfig {
    pub n: usize,
    pub frames: usize,
    /// Edge length of the cubic box (m).
    pub box_size: f64,
    pub gravity: Vec3,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Smallest initial surface gap between bodies and to walls (m).
    pub min_gap: f64,
    pub max_attempts: usize,
}

impl Default for ConfinedConfig {
    fn default() -> Self {
        ConfinedConfig {
            n: 10,
            frames: 300,
            box_size: 0.5,
            gravity: Vec3::ZERO,
            speed_min: 0.5,
            speed_max: 1.5,
            min_gap: 0.01,
            max_attempts: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CylinderConfig {
    pub n: usize,
    pub frames: usize,
    pub cylinder_radius: f64,
    pub length: f64,
    /// Unrecorded frames to let the bed settle before the drum turns.
    pub settle_frames: usize,
    /// Angular speed about the axis against recorded time.
    pub spin: SpinProfile,
    pub gravity: Vec3,
    pub wall_friction: f64,
    pub wall_restitution: f64,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        CylinderConfig {
            n: 40,
            frames: 500,
            cylinder_radius: 0.3,
            length: 0.4,
            settle_frames: 2000,
            spin: SpinProfile(vec![[0.0, 0.0], [0.1, 3.0]]),
            gravity: Vec3::new(0.0, 0.0, -9.81),
            wall_friction: 0.5,
            wall_restitution: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub radius: f64,
    pub density: f64,
    /// Frame interval (s).
    pub dt: f64,
    /// Simulator steps per frame.
    pub substeps: usize,
    pub material: Material,
    pub oblique: ObliqueConfig,
    pub confined: ConfinedConfig,
    pub cylinder: CylinderConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            radius: 0.05,
            density: 2500.0,
            dt: 1e-3,
            substeps: 50,
            material: Material::default(),
            oblique: ObliqueConfig::default(),
            confined: ConfinedConfig::default(),
            cylinder: CylinderConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {x}")))
            }
        };
        pos(self.radius, "radius")?;
        pos(self.density, "density")?;
        pos(self.dt, "dt")?;
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        self.material.validate().map_err(|e| Error::Config(e.to_string()))?;
        pos(self.confined.box_size, "confined.box_size")?;
        pos(self.cylinder.cylinder_radius, "cylinder.cylinder_radius")?;
        pos(self.cylinder.length, "cylinder.length")?;
        if self.oblique.speed_min > self.oblique.speed_max || self.confined.speed_min > self.confined.speed_max {
            return Err(Error::Config("speed_min must not exceed speed_max".into()));
        }
        Ok(())
    }
}

/// Per-frame audit of a simulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimAudit {
    /// Shadow energy at each recorded frame.
    pub energy: Vec<f64>,
    /// Largest frame-to-frame energy increase relative to the energy before it.
    pub max_energy_gain: f64,
}

/// Steps `state` through `frames` recorded frames (the first being the
/// initial state) and audits energy.
pub fn record(
    mut state: DemState,
    scene: SceneKind,
    cfg: &GenConfig,
    frames: usize,
    seed: u64,
) -> Result<(Trajectory, SimAudit)> {
    let h = cfg.dt / cfg.substeps as f64;
    let t0 = state.time;
    let mut out = Vec::with_capacity(frames);
    let mut audit = SimAudit::default();
    for index in 0..frames {
        if index > 0 {
            state.advance(cfg.dt, cfg.substeps)?;
            state.time = t0 + cfg.dt * index as f64;
        }
        let e = state.shadow_energy(h);
        if let Some(&prev) = audit.energy.last() {
            let gain = (e - prev) / prev.abs().max(f64::MIN_POSITIVE);
            audit.max_energy_gain = audit.max_energy_gain.max(gain);
        }
        audit.energy.push(e);
        out.push(Frame {
            index,
            t: state.time - t0,
            r: state.bodies.iter().map(|b| b.r).collect(),
            v: state.bodies.iter().map(|b| b.v).collect(),
            omega: state.bodies.iter().map(|b| b.omega).collect(),
        });
    }
    let header = Header {
        schema: TRAJECTORY_SCHEMA,
        scene: scene.name().into(),
        n: state.bodies.len(),
        dt: cfg.dt,
        radius: cfg.radius,
        masses: state.bodies.iter().map(|b| b.mass).collect(),
        inertias: state.bodies.iter().map(|b| b.inertia).collect(),
        material: state.material,
        boundaries: state.boundaries.clone(),
        gravity: state.gravity,
        seed,
        substeps: cfg.substeps,
    };
    Ok((Trajectory { header, frames: out }, audit))
}

fn perpendicular_unit<R: Rng>(u: Vec3, rng: &mut R) -> Vec3 {
    loop {
        let w = random_unit(rng);
        let (p, degenerate) = (w - u * u.dot(w)).normalize_safe(1e-6);
        if !degenerate {
            return p;
        }
    }
}

/// Initial state of a two-sphere oblique collision.
pub fn oblique_state(cfg: &GenConfig, seed: u64) -> Result<DemState> {
    let o = &cfg.oblique;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit(&mut rng);
    let p = perpendicular_unit(u, &mut rng);
    let diameter = 2.0 * cfg.radius;
    let b = rng.random_range(0.0..=o.max_impact) * diameter;
    let sep = diameter + o.gap;
    let along = (sep * sep - b * b).sqrt();
    let speed = rng.random_range(o.speed_min..=o.speed_max);
    let drift = random_unit(&mut rng) * rng.random_range(0.0..=o.drift_max);
    let r1 = u * (-along / 2.0) + p * (b / 2.0);
    let r2 = u * (along / 2.0) - p * (b / 2.0);
    let bodies = vec![
        Body::sphere(r1, drift + u * (speed / 2.0), cfg.radius, cfg.density),
        Body::sphere(r2, drift - u * (speed / 2.0), cfg.radius, cfg.density),
    ];
    DemState::new(bodies, BoundarySet::default(), cfg.material, Vec3::ZERO)
}

pub fn gen_oblique(cfg: &GenConfig, seed: u64) -> Result<(Trajectory, SimAudit)> {
    record(oblique_state(cfg, seed)?, SceneKind::Oblique, cfg, cfg.oblique.frames, seed)
}

pub fn confined_boundaries(box_size: f64) -> BoundarySet {
    BoundarySet::cuboid(Vec3::ZERO, Vec3::new(box_size, box_size, box_size))
}

pub fn confined_state(cfg: &GenConfig, seed: u64) -> Result<DemState> {
    let c = &cfg.confined;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = cfg.radius + c.min_gap;
    let hi = c.box_size - cfg.radius - c.min_gap;
    if hi <= lo {
        return Err(Error::PlacementFailed(c.n));
    }
    let mut centres: Vec<Vec3> = Vec::with_capacity(c.n);
    let mut attempts = 0;
    while centres.len() < c.n {
        attempts += 1;
        if attempts > c.max_attempts {
            return Err(Error::PlacementFailed(c.n));
        }
        let r = Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi));
        if centres.iter().all(|q| (*q - r).norm() >= 2.0 * cfg.radius + c.min_gap) {
            centres.push(r);
        }
    }
    let bodies = centres
        .into_iter()
        .map(|r| {
            let v = random_unit(&mut rng) * rng.random_range(c.speed_min..=c.speed_max);
            Body::sphere(r, v, cfg.radius, cfg.density)
        })
        .collect();
    DemState::new(bodies, confined_boundaries(c.box_size), cfg.material, c.gravity)
}

pub fn gen_confined(cfg: &GenConfig, seed: u64) -> Result<(Trajectory, SimAudit)> {
    record(confined_state(cfg, seed)?, SceneKind::Confined, cfg, cfg.confined.frames, seed)
}

/// Horizontal drum along `y` with its bottom cap centred at the origin.
pub fn cylinder_boundaries(c: &CylinderConfig) -> BoundarySet {
    BoundarySet::new(vec![
        Boundary::cylinder(Vec3::ZERO, Vec3::Y, c.cylinder_radius, c.length, true).with_spin(c.spin.clone())
    ])
}

/// Bodies on a jittered lattice inside the drum, settled under gravity with
/// the drum at rest. The returned state's clock reads zero.
pub fn cylinder_state(cfg: &GenConfig, seed: u64) -> Result<DemState> {
    let c = &cfg.cylinder;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = 2.0 * cfg.radius * 1.05;
    let jitter = 0.02 * cfg.radius;
    let reach = c.cylinder_radius - cfg.radius - jitter;
    let mut sites = Vec::new();
    let half = (reach / spacing).ceil() as i64 + 1;
    let mut y = cfg.radius + jitter;
    while y <= c.length - cfg.radius - jitter {
        for ix in -half..half {
            for iz in -half..half {
                let (x, z) = ((ix as f64 + 0.5) * spacing, (iz as f64 + 0.5) * spacing);
                if (x * x + z * z).sqrt() <= reach {
                    sites.push(Vec3::new(x, y, z));
                }
            }
        }
        y += spacing;
    }
    if sites.len() < c.n {
        return Err(Error::PlacementFailed(c.n));
    }
    sites.shuffle(&mut rng);
    sites.truncate(c.n);
    sites.sort_by(|a, b| (a.y, a.z, a.x).partial_cmp(&(b.y, b.z, b.x)).expect("finite sites"));
    let bodies = sites
        .into_iter()
        .map(|s| {
            let j = Vec3::new(
                rng.random_range(-jitter..=jitter),
                rng.random_range(-jitter..=jitter),
                rng.random_range(-jitter..=jitter),
            );
            Body::sphere(s + j, Vec3::ZERO, cfg.radius, cfg.density)
        })
        .collect();
    let material = Material {
        wall: Some(WallMaterial { restitution: c.wall_restitution, friction: c.wall_friction }),
        ..cfg.material
    };
    let still = BoundarySet::new(vec![Boundary::cylinder(Vec3::ZERO, Vec3::Y, c.cylinder_radius, c.length, true)]);
    let mut state = DemState::new(bodies, still, material, c.gravity)?;
    for _ in 0..c.settle_frames {
        state.advance(cfg.dt, cfg.substeps)?;
    }
    state.time = 0.0;
    state.boundaries = cylinder_boundaries(c);
    Ok(state)
}

pub fn gen_cylinder(cfg: &GenConfig, seed: u64) -> Result<(Trajectory, SimAudit)> {
    record(cylinder_state(cfg, seed)?, SceneKind::Cylinder, cfg, cfg.cylinder.frames, seed)
}

pub fn generate(kind: SceneKind, cfg: &GenConfig, seed: u64) -> Result<(Trajectory, SimAudit)> {
    cfg.validate()?;
    match kind {
        SceneKind::Oblique => gen_oblique(cfg, seed),
        SceneKind::Confined => gen_confined(cfg, seed),
        SceneKind::Cylinder => gen_cylinder(cfg, seed),
    }
}
