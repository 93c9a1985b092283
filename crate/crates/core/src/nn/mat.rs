//! Dense row-major matrices used as tape values.
//!
//! The kernels here are written as plain loops with a fixed summation order
//! so a row's result depends only on that row's data. Mirrored edges placed in
//! different rows therefore get bitwise-identical outputs.

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Mat::from_vec", rows * cols, data.len()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Mat { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Mat { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn from_vec3s(vs: &[Vec3]) -> Self {
        let mut data = Vec::with_capacity(vs.len() * 3);
        for v in vs {
            data.extend_from_slice(&[v.x, v.y, v.z]);
        }
        Mat { rows: vs.len(), cols: 3, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("Mat::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat { rows: rows.len(), cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` read as a 3-vector starting at column `offset`.
    #[inline]
    pub fn vec3(&self, i: usize, offset: usize) -> Vec3 {
        let r = self.row(i);
        Vec3::new(r[offset], r[offset + 1], r[offset + 2])
    }

    #[inline]
    pub fn set_vec3(&mut self, i: usize, offset: usize, v: Vec3) {
        let r = self.row_mut(i);
        r[offset] = v.x;
        r[offset + 1] = v.y;
        r[offset + 2] = v.z;
    }

    #[inline]
    pub fn add_vec3(&mut self, i: usize, offset: usize, v: Vec3) {
        let r = self.row_mut(i);
        r[offset] += v.x;
        r[offset + 1] += v.y;
        r[offset + 2] += v.z;
    }

    pub fn to_vec3s(&self) -> Vec<Vec3> {
        (0..self.rows).map(|i| self.vec3(i, 0)).collect()
    }

    pub fn add_assign(&mut self, o: &Mat) {
        debug_assert_eq!(self.shape(), o.shape());
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += *b;
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self · w + b` with `b` a single row broadcast over rows.
    pub fn affine(&self, w: &Mat, b: &Mat) -> Mat {
        let (n, k, m) = (self.rows, self.cols, w.cols);
        let mut out = Mat::zeros(n, m);
        for i in 0..n {
            let x = self.row(i);
            let o = &mut out.data[i * m..(i + 1) * m];
            o.copy_from_slice(&b.data);
            for (kk, &xk) in x.iter().enumerate().take(k) {
                let wr = &w.data[kk * m..(kk + 1) * m];
                for (oj, &wj) in o.iter_mut().zip(wr) {
                    *oj += xk * wj;
                }
            }
        }
        out
    }

    /// `g · wᵀ`.
    pub fn matmul_transposed(&self, w: &Mat) -> Mat {
        let (n, m, k) = (self.rows, self.cols, w.rows);
        let mut out = Mat::zeros(n, k);
        for i in 0..n {
            let g = self.row(i);
            for kk in 0..k {
                let wr = &w.data[kk * m..(kk + 1) * m];
                let mut s = 0.0;
                for (gj, wj) in g.iter().zip(wr) {
                    s += gj * wj;
                }
                out.data[i * k + kk] = s;
            }
        }
        out
    }

    /// Accumulates `selfᵀ · g` into `acc`.
    pub fn accumulate_transposed_product(&self, g: &Mat, acc: &mut Mat) {
        let (n, k, m) = (self.rows, self.cols, g.cols);
        for i in 0..n {
            let x = self.row(i);
            let gr = g.row(i);
            for (kk, &xk) in x.iter().enumerate().take(k) {
                if xk == 0.0 {
                    continue;
                }
                let a = &mut acc.data[kk * m..(kk + 1) * m];
                for (aj, &gj) in a.iter_mut().zip(gr) {
                    *aj += xk * gj;
                }
            }
        }
    }
}
