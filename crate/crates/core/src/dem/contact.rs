//! Linear spring-dashpot contacts with Coulomb-capped tangential springs,
//! advanced by semi-implicit Euler.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{BoundarySet, Mirror};

/// Contact coefficients that may differ for sphere–wall contacts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallMaterial {
    pub restitution: f64,
    pub friction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    /// Normal stiffness (N/m).
    pub k_n: f64,
    /// Tangential stiffness (N/m).
    pub k_t: f64,
    pub restitution: f64,
    pub friction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<WallMaterial>,
}

impl Default for Material {
    fn default() -> Self {
        Material { k_n: 1e4, k_t: 1e4 * 2.0 / 7.0, restitution: 0.7, friction: 0.3, wall: None }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k_n > 0.0
            && self.k_t > 0.0
            && self.restitution > 0.0
            && self.restitution <= 1.0
            && self.friction >= 0.0
            && self.wall.is_none_or(|w| w.restitution > 0.0 && w.restitution <= 1.0 && w.friction >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid material {self:?}")))
        }
    }

    fn wall_coefficients(&self) -> (f64, f64) {
        match self.wall {
            Some(w) => (w.restitution, w.friction),
            None => (self.restitution, self.friction),
        }
    }
}

/// Damping ratio giving restitution `e` for a linear spring-dashpot:
/// `ζ = −ln e / √(π² + ln² e)`.
pub fn damping_ratio(e: f64) -> f64 {
    let l = e.ln();
    -l / (PI * PI + l * l).sqrt()
}

/// Normal damping coefficient `γ = 2ζ√(k m_eff)`.
pub fn normal_damping(k_n: f64, m_eff: f64, e: f64) -> f64 {
    2.0 * damping_ratio(e) * (k_n * m_eff).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub r: Vec3,
    pub v: Vec3,
    pub omega: Vec3,
    pub radius: f64,
    pub mass: f64,
    pub inertia: f64,
}

impl Body {
    /// Solid sphere of the given density.
    pub fn sphere(r: Vec3, v: Vec3, radius: f64, density: f64) -> Self {
        let mass = density * 4.0 / 3.0 * PI * radius.powi(3);
        Body { r, v, omega: Vec3::ZERO, radius, mass, inertia: 0.4 * mass * radius * radius }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ContactKey {
    Pair(usize, usize),
    /// Body index and wall-surface index.
    Wall(usize, usize),
}

/// Complete simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct DemState {
    pub bodies: Vec<Body>,
    pub boundaries: BoundarySet,
    pub material: Material,
    pub gravity: Vec3,
    pub time: f64,
    /// Tangential spring elongations of active contacts.
    pub history: BTreeMap<ContactKey, Vec3>,
}

/// Force on body `j` from a contact with body (or wall) `i`, together with
/// the updated tangential spring.
struct ContactForce {
    force: Vec3,
    xi: Vec3,
}

#[allow(clippy::too_many_arguments)]
fn contact_force(
    n: Vec3,
    delta: f64,
    v_rel: Vec3,
    xi: Vec3,
    h: f64,
    k_n: f64,
    k_t: f64,
    gamma: f64,
    mu: f64,
) -> ContactForce {
    let v_n = v_rel.dot(n);
    let f_n = n * (k_n * delta - gamma * v_n);
    let v_t = v_rel - n * v_n;
    let mut xi = xi - n * n.dot(xi) + v_t * h;
    let mut f_t = xi * -k_t;
    let cap = mu * f_n.norm();
    let ft_norm = f_t.norm();
    if ft_norm > cap {
        f_t = if ft_norm > 0.0 { f_t * (cap / ft_norm) } else { Vec3::ZERO };
        xi = f_t * (-1.0 / k_t);
    }
    ContactForce { force: f_n + f_t, xi }
}

impl DemState {
    pub fn new(bodies: Vec<Body>, boundaries: BoundarySet, material: Material, gravity: Vec3) -> Result<Self> {
        material.validate()?;
        boundaries.validate()?;
        if bodies.iter().any(|b| !(b.mass > 0.0 && b.radius > 0.0 && b.inertia > 0.0)) {
            return Err(Error::InvalidInput("bodies need positive mass, radius and inertia".into()));
        }
        Ok(DemState { bodies, boundaries, material, gravity, time: 0.0, history: BTreeMap::new() })
    }

    /// One semi-implicit Euler step of length `h`.
    pub fn step(&mut self, h: f64) -> Result<()> {
        let n = self.bodies.len();
        let mat = self.material;
        let mut force: Vec<Vec3> = self.bodies.iter().map(|b| self.gravity * b.mass).collect();
        let mut torque = vec![Vec3::ZERO; n];
        let mut history = BTreeMap::new();

        for i in 0..n {
            for j in i + 1..n {
                let (bi, bj) = (&self.bodies[i], &self.bodies[j]);
                let d = bj.r - bi.r;
                let dist = d.norm();
                let delta = bi.radius + bj.radius - dist;
                if delta <= 0.0 {
                    continue;
                }
                if delta > bi.radius.min(bj.radius) || dist == 0.0 {
                    return Err(Error::SimulationBlowup(format!(
                        "overlap {delta:.3e} between bodies {i} and {j} at t = {:.6}",
                        self.time
                    )));
                }
                let nrm = d / dist;
                // Common contact point, halfway through the overlap.
                let arm_i = nrm * (bi.radius - delta / 2.0);
                let arm_j = nrm * -(bj.radius - delta / 2.0);
                let v_rel = (bj.v + bj.omega.cross(arm_j)) - (bi.v + bi.omega.cross(arm_i));
                let m_eff = bi.mass * bj.mass / (bi.mass + bj.mass);
                let key = ContactKey::Pair(i, j);
                let xi = self.history.get(&key).copied().unwrap_or(Vec3::ZERO);
                let gamma = normal_damping(mat.k_n, m_eff, mat.restitution);
                let c = contact_force(nrm, delta, v_rel, xi, h, mat.k_n, mat.k_t, gamma, mat.friction);
                force[j] += c.force;
                force[i] -= c.force;
                torque[j] += arm_j.cross(c.force);
                torque[i] -= arm_i.cross(c.force);
                history.insert(key, c.xi);
            }
        }

        let (e_wall, mu_wall) = mat.wall_coefficients();
        let surfaces: Vec<(usize, Mirror)> = self.boundaries.mirrors();
        for (i, bi) in self.bodies.iter().enumerate() {
            for (s, &(k, mirror)) in surfaces.iter().enumerate() {
                let Some((dist, nrm)) = mirror.distance_and_normal(bi.r) else { continue };
                let delta = bi.radius + dist;
                if delta <= 0.0 {
                    continue;
                }
                if delta > bi.radius {
                    return Err(Error::SimulationBlowup(format!(
                        "body {i} penetrated wall surface {s} by {delta:.3e} at t = {:.6}",
                        self.time
                    )));
                }
                let arm = nrm * (bi.radius - delta / 2.0);
                let point = bi.r + arm;
                let wall_v = self.boundaries.boundaries[k].surface_velocity(point, self.time);
                let v_rel = wall_v - (bi.v + bi.omega.cross(arm));
                let key = ContactKey::Wall(i, s);
                let xi = self.history.get(&key).copied().unwrap_or(Vec3::ZERO);
                let gamma = normal_damping(mat.k_n, bi.mass, e_wall);
                let c = contact_force(nrm, delta, v_rel, xi, h, mat.k_n, mat.k_t, gamma, mu_wall);
                force[i] -= c.force;
                torque[i] -= arm.cross(c.force);
                history.insert(key, c.xi);
            }
        }

        for (b, (f, t)) in self.bodies.iter_mut().zip(force.iter().zip(&torque)) {
            b.v += *f * (h / b.mass);
            b.omega += *t * (h / b.inertia);
            b.r += b.v * h;
            if !(b.r.is_finite() && b.v.is_finite() && b.omega.is_finite()) {
                return Err(Error::SimulationBlowup(format!("non-finite state at t = {:.6}", self.time)));
            }
        }
        self.history = history;
        self.time += h;
        Ok(())
    }

    /// Advances `substeps` steps of `dt / substeps`.
    pub fn advance(&mut self, dt: f64, substeps: usize) -> Result<()> {
        let h = dt / substeps as f64;
        let t0 = self.time;
        for k in 0..substeps {
            self.step(h)?;
            // Avoid drift in the clock from repeated addition.
            self.time = t0 + h * (k + 1) as f64;
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| 0.5 * b.mass * b.v.norm_squared() + 0.5 * b.inertia * b.omega.norm_squared())
            .sum()
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.bodies.iter().map(|b| b.v * b.mass).sum()
    }

    pub fn angular_momentum(&self, about: Vec3) -> Vec3 {
        self.bodies.iter().map(|b| b.omega * b.inertia + (b.r - about).cross(b.v * b.mass)).sum()
    }

    /// Energy that semi-implicit Euler with step `h` conserves exactly for
    /// linear springs and uniform gravity: kinetic plus elastic plus
    /// gravitational energy, each with its first-order step correction.
    /// Dissipation and changes in contact geometry only ever lower it up to
    /// higher-order terms, which makes it the right quantity to audit.
    pub fn shadow_energy(&self, h: f64) -> f64 {
        let mat = self.material;
        let mut e = self.kinetic_energy();
        for b in &self.bodies {
            e += -b.mass * self.gravity.dot(b.r) + 0.5 * h * b.mass * self.gravity.dot(b.v);
        }
        let n = self.bodies.len();
        for i in 0..n {
            for j in i + 1..n {
                let (bi, bj) = (&self.bodies[i], &self.bodies[j]);
                let d = bj.r - bi.r;
                let dist = d.norm();
                let delta = bi.radius + bj.radius - dist;
                if delta <= 0.0 || dist == 0.0 {
                    continue;
                }
                let nrm = d / dist;
                let arm_i = nrm * (bi.radius - delta / 2.0);
                let arm_j = nrm * -(bj.radius - delta / 2.0);
                let v_rel = (bj.v + bj.omega.cross(arm_j)) - (bi.v + bi.omega.cross(arm_i));
                e += 0.5 * mat.k_n * delta * delta + 0.5 * h * mat.k_n * delta * (bj.v - bi.v).dot(nrm);
                if let Some(xi) = self.history.get(&ContactKey::Pair(i, j)) {
                    e += 0.5 * mat.k_t * xi.norm_squared() + 0.5 * h * mat.k_t * xi.dot(v_rel - nrm * v_rel.dot(nrm));
                }
            }
        }
        for (i, bi) in self.bodies.iter().enumerate() {
            for (s, (_, mirror)) in self.boundaries.mirrors().iter().enumerate() {
                let Some((dist, nrm)) = mirror.distance_and_normal(bi.r) else { continue };
                let delta = bi.radius + dist;
                if delta <= 0.0 {
                    continue;
                }
                let arm = nrm * (bi.radius - delta / 2.0);
                let v_rel = -(bi.v + bi.omega.cross(arm));
                e += 0.5 * mat.k_n * delta * delta - 0.5 * h * mat.k_n * delta * bi.v.dot(nrm);
                if let Some(xi) = self.history.get(&ContactKey::Wall(i, s)) {
                    e += 0.5 * mat.k_t * xi.norm_squared() + 0.5 * h * mat.k_t * xi.dot(v_rel - nrm * v_rel.dot(nrm));
                }
            }
        }
        e
    }
}
