//! Planar and cylindrical walls, their mirror maps and prescribed motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Points closer than this to a cylinder axis have no radial direction.
pub const AXIS_EPS: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-12;

/// Reflection across one wall surface.
///
/// `Radial` mirrors a point across the plane tangent to the curved cylinder
/// surface at the wall point nearest to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mirror {
    Plane { point: Vec3, normal: Vec3 },
    Radial { axis_point: Vec3, axis: Vec3, radius: f64 },
}

impl Mirror {
    /// Signed distance from the wall (positive outside) and the outward wall
    /// normal at the nearest wall point. `None` on a cylinder axis.
    pub fn distance_and_normal(&self, r: Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Mirror::Plane { point, normal } => Some(((r - point).dot(normal), normal)),
            Mirror::Radial { axis_point, axis, radius } => {
                let (rho, n) = radial_part(r, axis_point, axis)?;
                Some((rho - radius, n))
            }
        }
    }

    /// Mirror image of `r`. Points on a cylinder axis are returned unchanged.
    pub fn apply(&self, r: Vec3) -> Vec3 {
        match *self {
            Mirror::Plane { point, normal } => reflect_plane_raw(r, point, normal),
            Mirror::Radial { axis_point, axis, radius } => match radial_part(r, axis_point, axis) {
                Some((rho, n)) => r + n * (2.0 * (radius - rho)),
                None => r,
            },
        }
    }

    /// Transposed Jacobian of [`Mirror::apply`] at `r`, applied to `g`.
    pub fn pullback(&self, r: Vec3, g: Vec3) -> Vec3 {
        match *self {
            Mirror::Plane { normal, .. } => g - normal * (2.0 * normal.dot(g)),
            Mirror::Radial { axis_point, axis, radius } => match radial_part(r, axis_point, axis) {
                // J = I − 2P + (2R/ρ)(P − n̂n̂ᵀ), P = I − uuᵀ; J is symmetric.
                Some((rho, n)) => {
                    let pg = g - axis * axis.dot(g);
                    let tangential = pg - n * n.dot(g);
                    g - pg * 2.0 + tangential * (2.0 * radius / rho)
                }
                None => g,
            },
        }
    }
}

fn radial_part(r: Vec3, axis_point: Vec3, axis: Vec3) -> Option<(f64, Vec3)> {
    let d = r - axis_point;
    let perp = d - axis * axis.dot(d);
    let rho = perp.norm();
    (rho >= AXIS_EPS).then(|| (rho, perp / rho))
}

fn reflect_plane_raw(r: Vec3, point: Vec3, normal: Vec3) -> Vec3 {
    r - normal * (2.0 * (r - point).dot(normal))
}

/// Piecewise-linear angular speed about the wall's rotation axis, held
/// constant outside the sampled range. Empty means stationary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpinProfile(pub Vec<[f64; 2]>);

impl SpinProfile {
    pub fn constant(w: f64) -> Self {
        SpinProfile(vec![[0.0, w]])
    }

    pub fn at(&self, t: f64) -> f64 {
        let pts = &self.0;
        match pts.len() {
            0 => 0.0,
            _ if t <= pts[0][0] => pts[0][1],
            _ => {
                for w in pts.windows(2) {
                    let ([t0, w0], [t1, w1]) = (w[0], w[1]);
                    if t <= t1 {
                        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return w0 + s * (w1 - w0);
                    }
                }
                pts[pts.len() - 1][1]
            }
        }
    }

    pub fn negated(&self) -> Self {
        SpinProfile(self.0.iter().map(|&[t, w]| [t, -w]).collect())
    }

    pub fn is_stationary(&self) -> bool {
        self.0.iter().all(|p| p[1] == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Boundary {
    /// Half-space wall; `normal` points out of the domain.
    Plane {
        point: Vec3,
        normal: Vec3,
        /// Surface velocity of the wall (the geometry itself stays fixed).
        #[serde(default)]
        velocity: Vec3,
        /// Spin about the line through `point` along `normal`.
        #[serde(default)]
        spin: SpinProfile,
        #[serde(default = "default_label")]
        label: f64,
    },
    /// Cylinder from `axis_point` to `axis_point + length·axis`.
    Cylinder {
        axis_point: Vec3,
        axis: Vec3,
        radius: f64,
        length: f64,
        #[serde(default = "default_true")]
        capped: bool,
        #[serde(default)]
        velocity: Vec3,
        /// Spin about the cylinder axis.
        #[serde(default)]
        spin: SpinProfile,
        #[serde(default = "default_label")]
        label: f64,
    },
}

fn default_label() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl Boundary {
    pub fn plane(point: Vec3, normal: Vec3) -> Self {
        Boundary::Plane { point, normal, velocity: Vec3::ZERO, spin: SpinProfile::default(), label: 1.0 }
    }

    pub fn cylinder(axis_point: Vec3, axis: Vec3, radius: f64, length: f64, capped: bool) -> Self {
        Boundary::Cylinder {
            axis_point,
            axis,
            radius,
            length,
            capped,
            velocity: Vec3::ZERO,
            spin: SpinProfile::default(),
            label: 1.0,
        }
    }

    pub fn with_spin(mut self, profile: SpinProfile) -> Self {
        match &mut self {
            Boundary::Plane { spin, .. } | Boundary::Cylinder { spin, .. } => *spin = profile,
        }
        self
    }

    pub fn label(&self) -> f64 {
        match self {
            Boundary::Plane { label, .. } | Boundary::Cylinder { label, .. } => *label,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: Vec3, what: &str| {
            if !v.is_finite() || (v.norm() - 1.0).abs() > UNIT_TOL {
                Err(Error::InvalidInput(format!("{what} must be unit length, got {:?}", v.to_array())))
            } else {
                Ok(())
            }
        };
        match self {
            Boundary::Plane { normal, .. } => unit(*normal, "plane normal"),
            Boundary::Cylinder { axis, radius, length, .. } => {
                unit(*axis, "cylinder axis")?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidInput(format!("cylinder radius must be positive, got {radius}")));
                }
                if !(*length > 0.0 && length.is_finite()) {
                    return Err(Error::InvalidInput(format!("cylinder length must be positive, got {length}")));
                }
                Ok(())
            }
        }
    }

    /// One mirror per wall surface: a plane yields one, a capped cylinder
    /// three (curved surface first, then the caps).
    pub fn mirrors(&self) -> Vec<Mirror> {
        match *self {
            Boundary::Plane { point, normal, .. } => vec![Mirror::Plane { point, normal }],
            Boundary::Cylinder { axis_point, axis, radius, length, capped, .. } => {
                let mut m = vec![Mirror::Radial { axis_point, axis, radius }];
                if capped {
                    m.push(Mirror::Plane { point: axis_point, normal: -axis });
                    m.push(Mirror::Plane { point: axis_point + axis * length, normal: axis });
                }
                m
            }
        }
    }

    fn rotation_axis(&self) -> (Vec3, Vec3) {
        match *self {
            Boundary::Plane { point, normal, .. } => (point, normal),
            Boundary::Cylinder { axis_point, axis, .. } => (axis_point, axis),
        }
    }

    /// Angular velocity vector of the wall at time `t`.
    pub fn omega(&self, t: f64) -> Vec3 {
        let spin = match self {
            Boundary::Plane { spin, .. } | Boundary::Cylinder { spin, .. } => spin,
        };
        self.rotation_axis().1 * spin.at(t)
    }

    pub fn linear_velocity(&self) -> Vec3 {
        match self {
            Boundary::Plane { velocity, .. } | Boundary::Cylinder { velocity, .. } => *velocity,
        }
    }

    /// Physical velocity of the wall material at point `x`.
    pub fn surface_velocity(&self, x: Vec3, t: f64) -> Vec3 {
        let (p, u) = self.rotation_axis();
        let d = x - p;
        let offset = d - u * u.dot(d);
        self.linear_velocity() + self.omega(t).cross(offset)
    }

    /// Whether a sphere centre lies inside the wall's domain inflated by `margin`.
    pub fn contains(&self, r: Vec3, margin: f64) -> bool {
        match *self {
            Boundary::Plane { point, normal, .. } => (r - point).dot(normal) <= margin,
            Boundary::Cylinder { axis_point, axis, radius, length, capped, .. } => {
                let d = r - axis_point;
                let along = axis.dot(d);
                let rho = (d - axis * along).norm();
                rho <= radius + margin && (!capped || (along >= -margin && along <= length + margin))
            }
        }
    }
}

/// Velocity and spin features carried by a ghost at `r_ghost`: the wall's
/// linear velocity plus `d × ω_wall`, with `d` the ghost's offset from the
/// rotation axis, and `ω_wall` itself.
pub fn ghost_velocity(r_ghost: Vec3, b: &Boundary, t: f64) -> (Vec3, Vec3) {
    let (p, u) = b.rotation_axis();
    let d = r_ghost - p;
    let offset = d - u * u.dot(d);
    let w = b.omega(t);
    (b.linear_velocity() + offset.cross(w), w)
}

/// `r − 2((r − point)·n)n`.
pub fn reflect_plane(r: Vec3, point: Vec3, normal: Vec3) -> Vec3 {
    reflect_plane_raw(r, point, normal)
}

/// Radial ghost followed by one ghost per cap, if capped.
pub fn reflect_cylinder(r: Vec3, cylinder: &Boundary) -> Result<Vec<Vec3>> {
    let Boundary::Cylinder { axis_point, axis, .. } = *cylinder else {
        return Err(Error::InvalidInput("reflect_cylinder needs a cylinder boundary".into()));
    };
    if radial_part(r, axis_point, axis).is_none() {
        return Err(Error::DegenerateReflection(format!("point {:?} lies on the cylinder axis", r.to_array())));
    }
    Ok(cylinder.mirrors().iter().map(|m| m.apply(r)).collect())
}

/// The set of walls of a scene; the on-disk boundary file is its TOML form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySet {
    #[serde(default, rename = "boundary")]
    pub boundaries: Vec<Boundary>,
}

impl BoundarySet {
    pub fn new(boundaries: Vec<Boundary>) -> Self {
        BoundarySet { boundaries }
    }

    /// Six inward-facing walls of the axis-aligned box `[lo, hi]`.
    pub fn cuboid(lo: Vec3, hi: Vec3) -> Self {
        BoundarySet::new(vec![
            Boundary::plane(lo, -Vec3::X),
            Boundary::plane(hi, Vec3::X),
            Boundary::plane(lo, -Vec3::Y),
            Boundary::plane(hi, Vec3::Y),
            Boundary::plane(lo, -Vec3::Z),
            Boundary::plane(hi, Vec3::Z),
        ])
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.boundaries.iter().try_for_each(Boundary::validate)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let set: BoundarySet = toml::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `(boundary index, mirror)` for every wall surface.
    pub fn mirrors(&self) -> Vec<(usize, Mirror)> {
        self.boundaries
            .iter()
            .enumerate()
            .flat_map(|(k, b)| b.mirrors().into_iter().map(move |m| (k, m)))
            .collect()
    }

    pub fn contains(&self, r: Vec3, margin: f64) -> bool {
        self.boundaries.iter().all(|b| b.contains(r, margin))
    }

    /// Same walls with every spin profile negated.
    pub fn reversed_spin(&self) -> Self {
        let mut out = self.clone();
        for b in &mut out.boundaries {
            match b {
                Boundary::Plane { spin, .. } | Boundary::Cylinder { spin, .. } => *spin = spin.negated(),
            }
        }
        out
    }
}
