//! Three-vector and rotation algebra.
//!
//! Everything in the crate that carries a direction (positions, velocities,
//! spins, forces, angular impulses) is a [`Vec3`]. Rotations are only used by
//! the symmetry checks.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default threshold below which a vector is treated as having no direction.
pub const NORMALIZE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn from_slice(s: &[f64]) -> Self {
        Vec3::new(s[0], s[1], s[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Right-handed cross product.
    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector along `self`, or the zero vector with `degenerate = true`
    /// when the norm falls below `eps`.
    #[inline]
    pub fn normalize_safe(self, eps: f64) -> (Vec3, bool) {
        let n = self.norm();
        if n >= eps {
            (self / n, false)
        } else {
            (Vec3::ZERO, true)
        }
    }

    /// Component of `self` along `axis`. `axis` must be unit length or zero.
    #[inline]
    pub fn project_parallel(self, axis: Vec3) -> Vec3 {
        axis * axis.dot(self)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl std::iter::Sum for Vec3 {
    fn sum<I: Iterator<Item = Vec3>>(iter: I) -> Vec3 {
        iter.fold(Vec3::ZERO, |acc, v| acc + v)
    }
}

/// Proper rotation stored as a row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    pub m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Rotation from a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation {
            m: [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
            ],
        }
    }

    /// Rotation by `angle` radians about the unit vector `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis.normalize_safe(NORMALIZE_EPS).0;
        Rotation::from_quaternion(c, a.x * s, a.y * s, a.z * s)
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> Rotation {
        let m = &self.m;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Rotation { m: t }
    }

    pub fn mul(&self, o: &Rotation) -> Rotation {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Rotation { m: r }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry of `RᵀR − I` in absolute value.
    pub fn orthogonality_error(&self) -> f64 {
        let p = self.transpose().mul(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.m[i][j] - id).abs());
            }
        }
        worst
    }
}

/// Uniformly distributed proper rotation, deterministic per seed
/// (Shoemake's subgroup algorithm for random unit quaternions).
pub fn random_rotation(seed: u64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rotation_with(&mut rng)
}

pub fn random_rotation_with<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y) = (a * (tau * u2).sin(), a * (tau * u2).cos());
    let (z, w) = (b * (tau * u3).sin(), b * (tau * u3).cos());
    Rotation::from_quaternion(w, x, y, z)
}

/// Uniformly distributed point on the unit sphere.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_examples() {
        assert_eq!(Vec3::X.cross(Vec3::Y), Vec3::Z);
        assert_eq!(Vec3::Y.cross(Vec3::X), -Vec3::Z);
        let u = Vec3::new(0.3, -1.7, 2.2);
        assert_eq!(u.cross(u), Vec3::ZERO);
    }

    #[test]
    fn normalize_safe_examples() {
        assert_eq!(Vec3::new(3.0, 0.0, 0.0).normalize_safe(1e-9), (Vec3::X, false));
        assert_eq!(Vec3::ZERO.normalize_safe(1e-9), (Vec3::ZERO, true));
        assert_eq!(Vec3::new(1e-12, 0.0, 0.0).normalize_safe(1e-9), (Vec3::ZERO, true));
    }

    #[test]
    fn project_parallel_examples() {
        assert_eq!(Vec3::new(1.0, 2.0, 0.0).project_parallel(Vec3::X), Vec3::X);
        assert_eq!(Vec3::new(0.0, 2.0, 0.0).project_parallel(Vec3::X), Vec3::ZERO);
        assert_eq!(Vec3::new(1.0, 1.0, 1.0).project_parallel(Vec3::Z), Vec3::Z);
        assert_eq!(Vec3::new(1.0, 1.0, 1.0).project_parallel(Vec3::ZERO), Vec3::ZERO);
    }

    #[test]
    fn random_rotation_is_proper_and_deterministic() {
        for seed in 0..200 {
            let r = random_rotation(seed);
            assert!(r.orthogonality_error() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            assert_eq!(r, random_rotation(seed));
        }
        assert_ne!(random_rotation(1), random_rotation(2));
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn cross_is_anticommutative(u in vec3(), v in vec3()) {
            prop_assert_eq!(u.cross(v), -v.cross(u));
        }

        #[test]
        fn cross_is_bilinear(u in vec3(), v in vec3(), w in vec3(), s in -10.0..10.0f64) {
            let lhs = (u + w).cross(v);
            let rhs = u.cross(v) + w.cross(v);
            prop_assert!((lhs - rhs).max_abs() <= 1e-9 * (1.0 + lhs.max_abs()));
            let scaled = (u * s).cross(v) - u.cross(v) * s;
            prop_assert!(scaled.max_abs() <= 1e-9 * (1.0 + u.cross(v).max_abs() * s.abs()));
        }

        #[test]
        fn normalize_safe_never_nan(u in vec3(), tiny in -1e-300..1e-300f64) {
            let (n, _) = u.normalize_safe(NORMALIZE_EPS);
            prop_assert!(n.is_finite());
            let (n, d) = Vec3::new(tiny, 0.0, 0.0).normalize_safe(NORMALIZE_EPS);
            prop_assert!(n.is_finite() && d);
        }

        #[test]
        fn projection_reconstructs(u in vec3(), a in vec3()) {
            let (a, _) = a.normalize_safe(NORMALIZE_EPS);
            let par = u.project_parallel(a);
            let perp = u - par;
            let back = par + perp;
            prop_assert!((back - u).max_abs() <= 1e-12 * (1.0 + u.max_abs()));
        }
    }
}
