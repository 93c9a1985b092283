use std::fmt::Write as _;

use crate::dem::Frame;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::{BoundarySet, Normalizer};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    /// Reference point for angular momentum.
    pub reference: Vec3,
    /// Walls are inflated by this much when deciding retention.
    pub margin: f64,
    /// Bin width along x for the surface slope; `None` skips the slope.
    pub slope_bin: Option<f64>,
}

/// System metrics of one frame, over retained bodies only.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricFrame {
    pub index: usize,
    /// Kinetic energy per unit mass, rotation included.
    pub ke: f64,
    /// Translational part of `ke`.
    pub ke_trans: f64,
    /// Linear momentum per unit mass.
    pub p: Vec3,
    /// Angular momentum about the reference point, spin plus orbital.
    pub l: Vec3,
    pub retained: usize,
    /// Total mass of the retained bodies.
    pub mass: f64,
    /// Surface slope in the x–z plane, radians.
    pub slope: Option<f64>,
}

impl MetricFrame {
    /// Angular momentum per unit mass.
    pub fn l_specific(&self) -> Vec3 {
        if self.mass > 0.0 {
            self.l / self.mass
        } else {
            Vec3::ZERO
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricSeries {
    pub frames: Vec<MetricFrame>,
}

const CSV_HEADER: &str = "frame,ke,ke_trans,p_x,p_y,p_z,l_x,l_y,l_z,retained,slope";

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for f in &self.frames {
            let slope = f.slope.map(|x| format!("{x:.16e}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                f.index, f.ke, f.ke_trans, f.p.x, f.p.y, f.p.z, f.l.x, f.l.y, f.l.z, f.retained, slope
            );
        }
        s
    }

    /// Mean slope over the last `fraction` of the frames that have one.
    pub fn steady_slope(&self, fraction: f64) -> Option<f64> {
        let slopes: Vec<f64> = self.frames.iter().filter_map(|f| f.slope).collect();
        let take = ((slopes.len() as f64 * fraction).ceil() as usize).clamp(1, slopes.len().max(1));
        let tail = &slopes[slopes.len().saturating_sub(take)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Arctangent of the least-squares line through the highest body in each
/// x bin. Needs at least two occupied bins.
pub fn surface_slope(r: &[Vec3], keep: &[bool], bin: f64) -> Option<f64> {
    if !(bin > 0.0) {
        return None;
    }
    let pts: Vec<Vec3> = r.iter().zip(keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
    let x0 = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let mut tops: std::collections::BTreeMap<i64, Vec3> = Default::default();
    for p in &pts {
        let k = ((p.x - x0) / bin).floor() as i64;
        let e = tops.entry(k).or_insert(*p);
        if p.z > e.z {
            *e = *p;
        }
    }
    if tops.len() < 2 {
        return None;
    }
    let m = tops.len() as f64;
    let mx = tops.values().map(|p| p.x).sum::<f64>() / m;
    let mz = tops.values().map(|p| p.z).sum::<f64>() / m;
    let sxx: f64 = tops.values().map(|p| (p.x - mx) * (p.x - mx)).sum();
    let sxz: f64 = tops.values().map(|p| (p.x - mx) * (p.z - mz)).sum();
    (sxx > 0.0).then(|| (sxz / sxx).atan())
}

/// Kinetic energy, momenta, retention and optional slope for each frame.
pub fn metrics(
    frames: &[Frame],
    masses: &[f64],
    inertias: &[f64],
    boundaries: &BoundarySet,
    cfg: &MetricConfig,
) -> Result<MetricSeries> {
    let n = masses.len();
    if inertias.len() != n {
        return Err(Error::dims("metric inertias", n, inertias.len()));
    }
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        if f.r.len() != n || f.v.len() != n || f.omega.len() != n {
            return Err(Error::dims("metric frame bodies", n, f.r.len()));
        }
        let keep: Vec<bool> = f.r.iter().map(|&r| boundaries.contains(r, cfg.margin)).collect();
        let (mut mass, mut ke_t, mut ke_r) = (0.0, 0.0, 0.0);
        let (mut p, mut l) = (Vec3::ZERO, Vec3::ZERO);
        for i in (0..n).filter(|&i| keep[i]) {
            let (m, inertia) = (masses[i], inertias[i]);
            mass += m;
            ke_t += 0.5 * m * f.v[i].norm_squared();
            ke_r += 0.5 * inertia * f.omega[i].norm_squared();
            p += f.v[i] * m;
            l += f.omega[i] * inertia + (f.r[i] - cfg.reference).cross(f.v[i] * m);
        }
        let per = |x: f64| if mass > 0.0 { x / mass } else { 0.0 };
        out.push(MetricFrame {
            index: f.index,
            ke: per(ke_t + ke_r),
            ke_trans: per(ke_t),
            p: if mass > 0.0 { p / mass } else { Vec3::ZERO },
            l,
            retained: keep.iter().filter(|&&k| k).count(),
            mass,
            slope: cfg.slope_bin.and_then(|b| surface_slope(&f.r, &keep, b)),
        });
    }
    Ok(MetricSeries { frames: out })
}

/// Momenta in the model's own unit system, which the architecture conserves
/// exactly: `P̂ = Σ m̂ v̂` and `L̂ = Σ Î ω̂ + Σ m̂ q × v̂` with `m̂ = 1/ψ_n2`,
/// `Î = 1/ψ_n3`, `v̂ = v/s_v`, `ω̂ = ω/s_ω`, `q = r/s_dx`.
///
/// Each entry also carries the sum of the magnitudes of the individual
/// terms, a scale for relative drift that stays meaningful when the total
/// itself is near zero.
pub fn learned_momenta(
    frames: &[Frame],
    inv_mass: &[f64],
    inv_inertia: &[f64],
    norm: &Normalizer,
) -> Result<Vec<LearnedMomentum>> {
    let n = inv_mass.len();
    if inv_inertia.len() != n {
        return Err(Error::dims("learned inertias", n, inv_inertia.len()));
    }
    frames
        .iter()
        .map(|f| {
            if f.r.len() != n {
                return Err(Error::dims("learned momentum bodies", n, f.r.len()));
            }
            let mut m = LearnedMomentum::default();
            for i in 0..n {
                let lin = f.v[i] / (norm.v * inv_mass[i]);
                let spin = f.omega[i] / (norm.omega * inv_inertia[i]);
                let orbit = (f.r[i] / norm.dx).cross(lin);
                m.p += lin;
                m.l += spin + orbit;
                m.p_scale += lin.norm();
                m.l_scale += spin.norm() + orbit.norm();
            }
            Ok(m)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LearnedMomentum {
    pub p: Vec3,
    pub l: Vec3,
    pub p_scale: f64,
    pub l_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub rmse: f64,
    pub max_dev: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<MetricRow>,
}

impl Comparison {
    pub fn get(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,rmse,max_dev\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.16e},{:.16e}", r.name, r.rmse, r.max_dev);
        }
        s
    }
}

fn row(name: &str, pairs: impl Iterator<Item = (f64, f64)>) -> Option<MetricRow> {
    let (mut n, mut sq, mut max) = (0usize, 0.0, 0.0f64);
    for (a, b) in pairs {
        let d = (a - b).abs();
        n += 1;
        sq += d * d;
        max = max.max(d);
    }
    (n > 0).then(|| MetricRow { name: name.into(), rmse: (sq / n as f64).sqrt(), max_dev: max })
}

/// Per-metric RMSE and largest absolute deviation. The slope row is present
/// only when some frame has a slope in both series.
pub fn compare(pred: &MetricSeries, truth: &MetricSeries) -> Result<Comparison> {
    if pred.len() != truth.len() {
        return Err(Error::dims("compared metric series", truth.len(), pred.len()));
    }
    let pairs = || pred.frames.iter().zip(&truth.frames);
    type Get = fn(&MetricFrame) -> f64;
    let scalar: [(&str, Get); 9] = [
        ("ke", |f| f.ke),
        ("ke_trans", |f| f.ke_trans),
        ("p_x", |f| f.p.x),
        ("p_y", |f| f.p.y),
        ("p_z", |f| f.p.z),
        ("l_x", |f| f.l.x),
        ("l_y", |f| f.l.y),
        ("l_z", |f| f.l.z),
        ("retained", |f| f.retained as f64),
    ];
    let mut rows: Vec<MetricRow> =
        scalar.iter().filter_map(|(name, get)| row(name, pairs().map(|(a, b)| (get(a), get(b))))).collect();
    if let Some(r) = row("slope", pairs().filter_map(|(a, b)| Some((a.slope?, b.slope?)))) {
        rows.push(r);
    }
    Ok(Comparison { rows })
}
