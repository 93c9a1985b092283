//! Edge-local reference frames.
//!
//! For a directed edge `i → j` the frame is built from `a`, the unit vector
//! along `r_j − r_i`, and an intermediate vector `b′` that is symmetric in the
//! two endpoints. Splitting `b′` into its parts along and across `a` and
//! crossing them with `a` and `b` gives axes that all flip sign when the edge
//! is reversed, while staying equivariant under rotations.

use crate::error::{Error, Result};
use crate::geom::{Vec3, NORMALIZE_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameInputs {
    pub r_i: Vec3,
    pub r_j: Vec3,
    pub v_i: Vec3,
    pub v_j: Vec3,
    pub omega_i: Vec3,
    pub omega_j: Vec3,
}

impl FrameInputs {
    /// Same edge seen from the other end.
    pub fn swapped(&self) -> Self {
        FrameInputs {
            r_i: self.r_j,
            r_j: self.r_i,
            v_i: self.v_j,
            v_j: self.v_i,
            omega_i: self.omega_j,
            omega_j: self.omega_i,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFrame {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    /// `true` marks a degenerate axis, stored as the zero vector.
    pub mask: [bool; 3],
}

impl EdgeFrame {
    pub fn axes(&self) -> [Vec3; 3] {
        [self.a, self.b, self.c]
    }

    /// `Σ_k coef[k]·axis_k`.
    pub fn vectorize(&self, coef: [f64; 3]) -> Vec3 {
        crate::nn::tape::combine(coef, self.axes())
    }
}

/// `b′`: the sum of the unit directions of `v_j + v_i`, `ω_j + ω_i`,
/// `(v_j − v_i) × (r_j − r_i)` and `(ω_j − ω_i) × (r_j − r_i)`, each dropped
/// when shorter than `eps`.
pub fn intermediate_vector(fi: &FrameInputs, eps: f64) -> Vec3 {
    let dx = fi.r_j - fi.r_i;
    let terms = [
        fi.v_j + fi.v_i,
        fi.omega_j + fi.omega_i,
        (fi.v_j - fi.v_i).cross(dx),
        (fi.omega_j - fi.omega_i).cross(dx),
    ];
    let [t0, t1, t2, t3] = terms.map(|t| t.normalize_safe(eps).0);
    ((t0 + t1) + t2) + t3
}

pub fn build_frame(fi: &FrameInputs) -> Result<EdgeFrame> {
    build_frame_eps(fi, NORMALIZE_EPS)
}

pub fn build_frame_eps(fi: &FrameInputs, eps: f64) -> Result<EdgeFrame> {
    let (a, degenerate) = (fi.r_j - fi.r_i).normalize_safe(eps);
    if degenerate {
        return Err(Error::InvalidInput(format!(
            "coincident edge endpoints at {:?}",
            fi.r_i.to_array()
        )));
    }
    let bp = intermediate_vector(fi, eps);
    let par = bp.project_parallel(a);
    let perp = bp - par;
    let (b, mb) = perp.cross(a).normalize_safe(eps);
    let (c, mc) = par.cross(b).normalize_safe(eps);
    Ok(EdgeFrame { a, b, c, mask: [false, mb, mc] })
}

/// Projects `[v, ω, v_prev, ω_prev]` onto the frame axes; column `3k + m` is
/// feature `k` dotted with axis `m`, negated when `flip` is set.
pub fn project_features(features: &[Vec3; 4], frame: &EdgeFrame, flip: bool) -> [f64; 12] {
    let sign = if flip { -1.0 } else { 1.0 };
    let axes = frame.axes();
    let mut out = [0.0; 12];
    for (k, f) in features.iter().enumerate() {
        for (m, ax) in axes.iter().enumerate() {
            out[3 * k + m] = sign * f.dot(*ax);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(r_j: Vec3, v: Vec3) -> FrameInputs {
        FrameInputs { r_i: Vec3::ZERO, r_j, v_i: v, v_j: v, omega_i: Vec3::ZERO, omega_j: Vec3::ZERO }
    }

    #[test]
    fn stationary_edge_has_zero_intermediate_vector() {
        let fi = inputs(Vec3::X, Vec3::ZERO);
        assert_eq!(intermediate_vector(&fi, NORMALIZE_EPS), Vec3::ZERO);
    }

    #[test]
    fn common_velocity_gives_its_direction() {
        let fi = inputs(Vec3::X, Vec3::Y);
        assert_eq!(intermediate_vector(&fi, NORMALIZE_EPS), Vec3::Y);
    }

    #[test]
    fn hand_computed_frame() {
        let fi = inputs(Vec3::X, Vec3::new(1.0, 1.0, 0.0));
        let f = build_frame(&fi).unwrap();
        let close = |u: Vec3, w: Vec3| (u - w).max_abs() < 1e-15;
        assert!(close(f.a, Vec3::X));
        assert!(close(f.b, Vec3::new(0.0, 0.0, -1.0)));
        assert!(close(f.c, Vec3::Y));
        assert_eq!(f.mask, [false; 3]);
        assert!(close(f.a.cross(f.b), f.c));
    }

    #[test]
    fn stationary_frame_masks_b_and_c() {
        let f = build_frame(&inputs(Vec3::X, Vec3::ZERO)).unwrap();
        assert_eq!(f.a, Vec3::X);
        assert_eq!((f.b, f.c), (Vec3::ZERO, Vec3::ZERO));
        assert_eq!(f.mask, [false, true, true]);
    }

    #[test]
    fn perpendicular_intermediate_masks_c() {
        let f = build_frame(&inputs(Vec3::X, Vec3::Y)).unwrap();
        assert_eq!(f.mask, [false, false, true]);
        assert_eq!(f.c, Vec3::ZERO);
        assert!((f.b.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_endpoints_are_rejected() {
        assert!(build_frame(&inputs(Vec3::ZERO, Vec3::X)).is_err());
    }

    #[test]
    fn projection_examples() {
        let f = build_frame(&inputs(Vec3::X, Vec3::new(1.0, 1.0, 0.0))).unwrap();
        assert_eq!(project_features(&[Vec3::ZERO; 4], &f, false), [0.0; 12]);
        let p = project_features(&[f.a, Vec3::ZERO, Vec3::ZERO, Vec3::ZERO], &f, false);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1..].iter().all(|x| x.abs() < 1e-15));
        let feats = [Vec3::new(0.3, -1.0, 2.0), Vec3::Y, Vec3::Z, Vec3::new(-4.0, 0.5, 0.1)];
        let (pos, neg) = (project_features(&feats, &f, false), project_features(&feats, &f, true));
        assert!(pos.iter().zip(&neg).all(|(x, y)| *x == -*y));
    }
}
