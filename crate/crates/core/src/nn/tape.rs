//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! Every node holds a [`Mat`]; per-edge and per-node quantities are stored one
//! row per edge or node, so a single node covers a whole graph. The operation
//! set is fixed to what the dynamics model needs: affine layers, pointwise
//! nonlinearities, layer norm, row gathers/scatters and 3-vector algebra.
//!
//! Forward values are computed eagerly when an op is pushed. [`Tape::replay`]
//! recomputes every node from the recorded ops and leaf values, which is how
//! the bit-exact replay invariant is checked.

use std::collections::HashMap;
use std::rc::Rc;

use super::mat::Mat;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::graph::Mirror;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Within this factor of the degeneracy threshold, a normalization is
/// treated as a constant during backpropagation.
pub const NORMALIZE_GRAD_CUTOFF: f64 = 10.0;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Affine(Var, Var, Var),
    Silu(Var),
    Tanh(Var),
    Softplus(Var),
    LayerNorm(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Gather(Var, Rc<[usize]>),
    ScatterAdd(Var, Rc<[usize]>, usize),
    Cross(Var, Var),
    Dot(Var, Var),
    Norm(Var),
    NormalizeSafe(Var, f64),
    Project { axes: [Var; 3], feats: Var, sign: f64 },
    Vectorize { coef: Var, axes: [Var; 3] },
    SliceRows(Var, usize, usize),
    ConcatCols(Rc<[Var]>),
    Mse(Var, Var),
    Sum(Var),
    Mirror(Var, Rc<[(usize, usize, Mirror)]>),
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Mat>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Adjoints {
    nodes: Vec<Option<Mat>>,
    shapes: Vec<(usize, usize)>,
    pub params: Gradients,
}

impl Adjoints {
    /// Adjoint of `v`; zero when `v` does not influence the loss.
    pub fn of(&self, v: Var) -> Mat {
        match &self.nodes[v.0] {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Mat::zeros(r, c)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn same_shape(ctx: &'static str, a: &Mat, b: &Mat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dims(ctx, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

fn rowwise3(ctx: &'static str, a: &Mat) -> Result<()> {
    if a.cols() != 3 {
        return Err(Error::dims(ctx, "3 columns", a.cols()));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Every recorded value, in recording order.
    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.values, None)?;
        self.ops.push(op);
        self.values.push(value);
        Ok(Var(self.values.len() - 1))
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.ops.push(Op::Constant);
        self.values.push(m);
        Var(self.values.len() - 1)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.ops.push(Op::Param(id));
        self.values.push(store.get(id).clone());
        let v = Var(self.values.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// `x · W + b`, `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.values[x.0].shape(), self.values[w.0].shape(), self.values[b.0].shape());
        if xs.1 != ws.0 || bs != (1, ws.1) {
            return Err(Error::dims("affine", format!("x·{ws:?} + (1,{})", ws.1), format!("{xs:?}, {bs:?}")));
        }
        self.push(Op::Affine(x, w, b))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Tanh(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Softplus(x))
    }

    /// Row-wise layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xs, gs, bs) = (self.values[x.0].shape(), self.values[gain.0].shape(), self.values[bias.0].shape());
        if xs.1 < 2 {
            return Err(Error::dims("layer_norm", "width >= 2", xs.1));
        }
        if gs != (1, xs.1) || bs != (1, xs.1) {
            return Err(Error::dims("layer_norm", format!("(1,{})", xs.1), format!("{gs:?}, {bs:?}")));
        }
        self.push(Op::LayerNorm(x, gain, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", &self.values[a.0], &self.values[b.0])?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", &self.values[a.0], &self.values[b.0])?;
        self.push(Op::Sub(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.push(Op::Scale(a, s))
    }

    /// Multiplies each row of `a` by the matching entry of the column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ar, cs) = (self.values[a.0].rows(), self.values[c.0].shape());
        if cs != (ar, 1) {
            return Err(Error::dims("mul_col", format!("({ar},1)"), format!("{cs:?}")));
        }
        self.push(Op::MulCol(a, c))
    }

    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ar, cs) = (self.values[a.0].rows(), self.values[c.0].shape());
        if cs != (ar, 1) {
            return Err(Error::dims("div_col", format!("({ar},1)"), format!("{cs:?}")));
        }
        self.push(Op::DivCol(a, c))
    }

    /// Row `k` of the output is row `idx[k]` of `x`.
    pub fn gather(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let n = self.values[x.0].rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::dims("gather", format!("index < {n}"), bad));
        }
        self.push(Op::Gather(x, idx))
    }

    /// Sums row `k` of `x` into row `idx[k]` of an `n`-row output, in order.
    pub fn scatter_add(&mut self, x: Var, idx: Rc<[usize]>, n: usize) -> Result<Var> {
        if idx.len() != self.values[x.0].rows() {
            return Err(Error::dims("scatter_add", self.values[x.0].rows(), idx.len()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::dims("scatter_add", format!("index < {n}"), bad));
        }
        self.push(Op::ScatterAdd(x, idx, n))
    }

    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var> {
        rowwise3("cross", &self.values[a.0])?;
        same_shape("cross", &self.values[a.0], &self.values[b.0])?;
        self.push(Op::Cross(a, b))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        rowwise3("dot", &self.values[a.0])?;
        same_shape("dot", &self.values[a.0], &self.values[b.0])?;
        self.push(Op::Dot(a, b))
    }

    pub fn norm(&mut self, a: Var) -> Result<Var> {
        rowwise3("norm", &self.values[a.0])?;
        self.push(Op::Norm(a))
    }

    /// Row-wise [`Vec3::normalize_safe`]; rows within
    /// [`NORMALIZE_GRAD_CUTOFF`]·eps of degeneracy pass no gradient.
    pub fn normalize_safe(&mut self, a: Var, eps: f64) -> Result<Var> {
        rowwise3("normalize_safe", &self.values[a.0])?;
        self.push(Op::NormalizeSafe(a, eps))
    }

    /// Projects four stacked 3-vectors per row (`feats`, 12 columns) onto
    /// the three per-row axes; output column `3k + m` is
    /// `sign · feats_k · axis_m`.
    pub fn project(&mut self, axes: [Var; 3], feats: Var, sign: f64) -> Result<Var> {
        let f = &self.values[feats.0];
        if f.cols() % 3 != 0 {
            return Err(Error::dims("project", "multiple of 3 columns", f.cols()));
        }
        for a in axes {
            rowwise3("project", &self.values[a.0])?;
            if self.values[a.0].rows() != f.rows() {
                return Err(Error::dims("project", f.rows(), self.values[a.0].rows()));
            }
        }
        self.push(Op::Project { axes, feats, sign })
    }

    /// `coef[0]·a + coef[1]·b + coef[2]·c` per row.
    pub fn vectorize(&mut self, coef: Var, axes: [Var; 3]) -> Result<Var> {
        let cs = self.values[coef.0].shape();
        if cs.1 != 3 {
            return Err(Error::dims("vectorize", "3 coefficients", cs.1));
        }
        for a in axes {
            if self.values[a.0].shape() != (cs.0, 3) {
                return Err(Error::dims("vectorize", format!("({},3)", cs.0), format!("{:?}", self.values[a.0].shape())));
            }
        }
        self.push(Op::Vectorize { coef, axes })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.values[x.0].rows() {
            return Err(Error::dims("slice_rows", self.values[x.0].rows(), start + len));
        }
        self.push(Op::SliceRows(x, start, len))
    }

    /// Side-by-side concatenation of equally tall nodes.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.values[p.0].rows()).ok_or_else(|| Error::InvalidInput("concat of nothing".into()))?;
        if let Some(bad) = parts.iter().find(|p| self.values[p.0].rows() != rows) {
            return Err(Error::dims("concat_cols", rows, self.values[bad.0].rows()));
        }
        self.push(Op::ConcatCols(parts.into()))
    }

    /// Mean squared difference, as a 1×1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse", &self.values[pred.0], &self.values[target.0])?;
        self.push(Op::Mse(pred, target))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    /// Copy of `x` where each listed `(row, source_row, mirror)` is replaced
    /// by the mirror image of `source_row`.
    pub fn mirror_rows(&mut self, x: Var, map: Rc<[(usize, usize, Mirror)]>) -> Result<Var> {
        rowwise3("mirror_rows", &self.values[x.0])?;
        let n = self.values[x.0].rows();
        if let Some(bad) = map.iter().find(|(g, h, _)| *g >= n || *h >= n) {
            return Err(Error::dims("mirror_rows", format!("rows < {n}"), format!("{:?}", (bad.0, bad.1))));
        }
        self.push(Op::Mirror(x, map))
    }

    /// Recomputes every node from leaves and recorded ops.
    pub fn replay(&self) -> Result<Vec<Mat>> {
        let mut values: Vec<Mat> = Vec::with_capacity(self.values.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = eval(op, &values, Some(&self.values[i]))?;
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Adjoints> {
        let ls = self.values[loss.0].shape();
        if ls != (1, 1) {
            return Err(Error::InvalidInput(format!("backward needs a scalar loss, got shape {ls:?}")));
        }
        let mut adj: Vec<Option<Mat>> = vec![None; self.values.len()];
        adj[loss.0] = Some(Mat::scalar(1.0));
        let mut grads = Gradients::zeros_like(store);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].clone() else { continue };
            let out = &self.values[i];
            match &self.ops[i] {
                Op::Constant => {}
                Op::Param(id) => grads.get_mut(*id).add_assign(&g),
                Op::Affine(x, w, b) => {
                    let (xv, wv) = (&self.values[x.0], &self.values[w.0]);
                    let dx = g.matmul_transposed(wv);
                    let mut dw = Mat::zeros(wv.rows(), wv.cols());
                    xv.accumulate_transposed_product(&g, &mut dw);
                    let mut db = Mat::zeros(1, wv.cols());
                    for r in 0..g.rows() {
                        for (d, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *w, dw);
                    accumulate(&mut adj, *b, db);
                }
                Op::Silu(x) => {
                    let xv = &self.values[x.0];
                    let mut d = g;
                    for (dv, &xx) in d.data_mut().iter_mut().zip(xv.data()) {
                        let s = sigmoid(xx);
                        *dv *= s * (1.0 + xx * (1.0 - s));
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(out.data()) {
                        *dv *= 1.0 - y * y;
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::Softplus(x) => {
                    let xv = &self.values[x.0];
                    let mut d = g;
                    for (dv, &xx) in d.data_mut().iter_mut().zip(xv.data()) {
                        *dv *= sigmoid(xx);
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::LayerNorm(x, gain, bias) => {
                    let xv = &self.values[x.0];
                    let gv = &self.values[gain.0];
                    let n = xv.cols();
                    let nf = n as f64;
                    let mut dx = Mat::zeros(xv.rows(), n);
                    let mut dgain = Mat::zeros(1, n);
                    let mut dbias = Mat::zeros(1, n);
                    let mut xhat = vec![0.0; n];
                    let mut gh = vec![0.0; n];
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let (mean, inv_std) = row_stats(row);
                        for k in 0..n {
                            xhat[k] = (row[k] - mean) * inv_std;
                            let gk = g.get(r, k);
                            dgain.data_mut()[k] += gk * xhat[k];
                            dbias.data_mut()[k] += gk;
                            gh[k] = gk * gv.get(0, k);
                        }
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghx: f64 = gh.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let dr = dx.row_mut(r);
                        for k in 0..n {
                            dr[k] = inv_std * (gh[k] - sum_gh / nf - xhat[k] * sum_ghx / nf);
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                    accumulate(&mut adj, *gain, dgain);
                    accumulate(&mut adj, *bias, dbias);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.map(|v| -v));
                }
                Op::Neg(a) => accumulate(&mut adj, *a, g.map(|v| -v)),
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut adj, *a, g.map(|v| v * s));
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (&self.values[a.0], &self.values[c.0]);
                    let mut da = g.clone();
                    let mut dc = Mat::zeros(cv.rows(), 1);
                    for r in 0..av.rows() {
                        let cr = cv.get(r, 0);
                        let mut s = 0.0;
                        for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                            s += *d * av.get(r, k);
                            *d *= cr;
                        }
                        dc.set(r, 0, s);
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *c, dc);
                }
                Op::DivCol(a, c) => {
                    let cv = &self.values[c.0];
                    let mut da = g.clone();
                    let mut dc = Mat::zeros(cv.rows(), 1);
                    for r in 0..out.rows() {
                        let cr = cv.get(r, 0);
                        let mut s = 0.0;
                        for (k, d) in da.row_mut(r).iter_mut().enumerate() {
                            s -= *d * out.get(r, k) / cr;
                            *d /= cr;
                        }
                        dc.set(r, 0, s);
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *c, dc);
                }
                Op::Gather(x, idx) => {
                    let xv = &self.values[x.0];
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for (k, &src) in idx.iter().enumerate() {
                        for (d, gv) in dx.row_mut(src).iter_mut().zip(g.row(k)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ScatterAdd(x, idx, _) => {
                    let xv = &self.values[x.0];
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for (k, &dst) in idx.iter().enumerate() {
                        dx.row_mut(k).copy_from_slice(g.row(dst));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Cross(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    let mut da = Mat::zeros(av.rows(), 3);
                    let mut db = Mat::zeros(av.rows(), 3);
                    for r in 0..av.rows() {
                        let gr = g.vec3(r, 0);
                        // d(a×b)ᵀg: ∂a = b×g, ∂b = g×a
                        da.set_vec3(r, 0, bv.vec3(r, 0).cross(gr));
                        db.set_vec3(r, 0, gr.cross(av.vec3(r, 0)));
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                    let mut da = Mat::zeros(av.rows(), 3);
                    let mut db = Mat::zeros(av.rows(), 3);
                    for r in 0..av.rows() {
                        let gr = g.get(r, 0);
                        da.set_vec3(r, 0, bv.vec3(r, 0) * gr);
                        db.set_vec3(r, 0, av.vec3(r, 0) * gr);
                    }
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Norm(a) => {
                    let av = &self.values[a.0];
                    let mut da = Mat::zeros(av.rows(), 3);
                    for r in 0..av.rows() {
                        let n = out.get(r, 0);
                        if n > 0.0 {
                            da.set_vec3(r, 0, av.vec3(r, 0) * (g.get(r, 0) / n));
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::NormalizeSafe(a, eps) => {
                    let av = &self.values[a.0];
                    let mut da = Mat::zeros(av.rows(), 3);
                    for r in 0..av.rows() {
                        let x = av.vec3(r, 0);
                        let n = x.norm();
                        if n < NORMALIZE_GRAD_CUTOFF * eps {
                            continue;
                        }
                        let u = out.vec3(r, 0);
                        let gr = g.vec3(r, 0);
                        da.set_vec3(r, 0, (gr - u * u.dot(gr)) / n);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Project { axes, feats, sign } => {
                    let fv = &self.values[feats.0];
                    let nf = fv.cols() / 3;
                    let mut df = Mat::zeros(fv.rows(), fv.cols());
                    let mut dax = [Mat::zeros(fv.rows(), 3), Mat::zeros(fv.rows(), 3), Mat::zeros(fv.rows(), 3)];
                    for r in 0..fv.rows() {
                        let ax: [Vec3; 3] = std::array::from_fn(|m| self.values[axes[m].0].vec3(r, 0));
                        for k in 0..nf {
                            let f = fv.vec3(r, 3 * k);
                            let mut dfk = Vec3::ZERO;
                            for m in 0..3 {
                                let gv = g.get(r, 3 * k + m) * sign;
                                dfk = dfk + ax[m] * gv;
                                dax[m].add_vec3(r, 0, f * gv);
                            }
                            df.set_vec3(r, 3 * k, dfk);
                        }
                    }
                    accumulate(&mut adj, *feats, df);
                    let [d0, d1, d2] = dax;
                    accumulate(&mut adj, axes[0], d0);
                    accumulate(&mut adj, axes[1], d1);
                    accumulate(&mut adj, axes[2], d2);
                }
                Op::Vectorize { coef, axes } => {
                    let cv = &self.values[coef.0];
                    let mut dc = Mat::zeros(cv.rows(), 3);
                    let mut dax = [Mat::zeros(cv.rows(), 3), Mat::zeros(cv.rows(), 3), Mat::zeros(cv.rows(), 3)];
                    for r in 0..cv.rows() {
                        let gr = g.vec3(r, 0);
                        for m in 0..3 {
                            let ax = self.values[axes[m].0].vec3(r, 0);
                            dc.set(r, m, ax.dot(gr));
                            dax[m].set_vec3(r, 0, gr * cv.get(r, m));
                        }
                    }
                    accumulate(&mut adj, *coef, dc);
                    let [d0, d1, d2] = dax;
                    accumulate(&mut adj, axes[0], d0);
                    accumulate(&mut adj, axes[1], d1);
                    accumulate(&mut adj, axes[2], d2);
                }
                Op::SliceRows(x, start, len) => {
                    let xv = &self.values[x.0];
                    let mut dx = Mat::zeros(xv.rows(), xv.cols());
                    for k in 0..*len {
                        dx.row_mut(start + k).copy_from_slice(g.row(k));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts.iter() {
                        let pv = &self.values[p.0];
                        let mut d = Mat::zeros(pv.rows(), pv.cols());
                        for r in 0..pv.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pv.cols()]);
                        }
                        offset += pv.cols();
                        accumulate(&mut adj, *p, d);
                    }
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (&self.values[p.0], &self.values[t.0]);
                    let n = pv.data().len().max(1) as f64;
                    let s = 2.0 * g.get(0, 0) / n;
                    let mut dp = Mat::zeros(pv.rows(), pv.cols());
                    for ((d, a), b) in dp.data_mut().iter_mut().zip(pv.data()).zip(tv.data()) {
                        *d = s * (a - b);
                    }
                    accumulate(&mut adj, *t, dp.map(|v| -v));
                    accumulate(&mut adj, *p, dp);
                }
                Op::Sum(x) => {
                    let xv = &self.values[x.0];
                    accumulate(&mut adj, *x, Mat::filled(xv.rows(), xv.cols(), g.get(0, 0)));
                }
                Op::Mirror(x, map) => {
                    let xv = &self.values[x.0];
                    let mut dx = g.clone();
                    for (row, _, _) in map.iter() {
                        dx.set_vec3(*row, 0, Vec3::ZERO);
                    }
                    for (row, src, mirror) in map.iter() {
                        let back = mirror.pullback(xv.vec3(*src, 0), g.vec3(*row, 0));
                        dx.add_vec3(*src, 0, back);
                    }
                    accumulate(&mut adj, *x, dx);
                }
            }
        }

        let shapes = self.values.iter().map(Mat::shape).collect();
        Ok(Adjoints { nodes: adj, shapes, params: grads })
    }
}

fn accumulate(adj: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut adj[v.0] {
        Some(a) => a.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Forward semantics of every op. `leaf` carries the stored value of
/// `Constant`/`Param` nodes during replay.
fn eval(op: &Op, values: &[Mat], leaf: Option<&Mat>) -> Result<Mat> {
    let v = |x: &Var| &values[x.0];
    Ok(match op {
        Op::Constant | Op::Param(_) => leaf
            .cloned()
            .ok_or_else(|| Error::InvalidInput("leaf nodes are not computed".into()))?,
        Op::Affine(x, w, b) => v(x).affine(v(w), v(b)),
        Op::Silu(x) => v(x).map(|a| a * sigmoid(a)),
        Op::Tanh(x) => v(x).map(f64::tanh),
        Op::Softplus(x) => v(x).map(softplus),
        Op::LayerNorm(x, gain, bias) => {
            let (xv, gv, bv) = (v(x), v(gain), v(bias));
            let mut out = Mat::zeros(xv.rows(), xv.cols());
            for r in 0..xv.rows() {
                let row = xv.row(r);
                let (mean, inv_std) = row_stats(row);
                for (k, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = (row[k] - mean) * inv_std * gv.get(0, k) + bv.get(0, k);
                }
            }
            out
        }
        Op::Add(a, b) => {
            let mut o = v(a).clone();
            o.add_assign(v(b));
            o
        }
        Op::Sub(a, b) => {
            let (av, bv) = (v(a), v(b));
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
            Mat::from_vec(av.rows(), av.cols(), data)?
        }
        Op::Neg(a) => v(a).map(|x| -x),
        Op::Scale(a, s) => {
            let s = *s;
            v(a).map(|x| x * s)
        }
        Op::MulCol(a, c) => {
            let (av, cv) = (v(a), v(c));
            let mut o = av.clone();
            for r in 0..o.rows() {
                let s = cv.get(r, 0);
                o.row_mut(r).iter_mut().for_each(|x| *x *= s);
            }
            o
        }
        Op::DivCol(a, c) => {
            let (av, cv) = (v(a), v(c));
            let mut o = av.clone();
            for r in 0..o.rows() {
                let s = cv.get(r, 0);
                o.row_mut(r).iter_mut().for_each(|x| *x /= s);
            }
            o
        }
        Op::Gather(x, idx) => {
            let xv = v(x);
            let mut o = Mat::zeros(idx.len(), xv.cols());
            for (k, &src) in idx.iter().enumerate() {
                o.row_mut(k).copy_from_slice(xv.row(src));
            }
            o
        }
        Op::ScatterAdd(x, idx, n) => {
            let xv = v(x);
            let mut o = Mat::zeros(*n, xv.cols());
            for (k, &dst) in idx.iter().enumerate() {
                for (a, b) in o.row_mut(dst).iter_mut().zip(xv.row(k)) {
                    *a += b;
                }
            }
            o
        }
        Op::Cross(a, b) => rowwise(v(a).rows(), 3, |r| {
            let c = v(a).vec3(r, 0).cross(v(b).vec3(r, 0));
            vec![c.x, c.y, c.z]
        })?,
        Op::Dot(a, b) => rowwise(v(a).rows(), 1, |r| vec![v(a).vec3(r, 0).dot(v(b).vec3(r, 0))])?,
        Op::Norm(a) => rowwise(v(a).rows(), 1, |r| vec![v(a).vec3(r, 0).norm()])?,
        Op::NormalizeSafe(a, eps) => rowwise(v(a).rows(), 3, |r| {
            let (u, _) = v(a).vec3(r, 0).normalize_safe(*eps);
            vec![u.x, u.y, u.z]
        })?,
        Op::Project { axes, feats, sign } => {
            let fv = v(feats);
            let nf = fv.cols() / 3;
            let mut o = Mat::zeros(fv.rows(), fv.cols());
            for r in 0..fv.rows() {
                let ax: [Vec3; 3] = std::array::from_fn(|m| v(&axes[m]).vec3(r, 0));
                for k in 0..nf {
                    let f = fv.vec3(r, 3 * k);
                    for m in 0..3 {
                        o.set(r, 3 * k + m, sign * f.dot(ax[m]));
                    }
                }
            }
            o
        }
        Op::Vectorize { coef, axes } => {
            let cv = v(coef);
            rowwise(cv.rows(), 3, |r| {
                let c = combine(
                    [cv.get(r, 0), cv.get(r, 1), cv.get(r, 2)],
                    [v(&axes[0]).vec3(r, 0), v(&axes[1]).vec3(r, 0), v(&axes[2]).vec3(r, 0)],
                );
                vec![c.x, c.y, c.z]
            })?
        }
        Op::SliceRows(x, start, len) => {
            let xv = v(x);
            let s = start * xv.cols();
            Mat::from_vec(*len, xv.cols(), xv.data()[s..s + len * xv.cols()].to_vec())?
        }
        Op::ConcatCols(parts) => {
            let rows = v(&parts[0]).rows();
            let cols: usize = parts.iter().map(|p| v(p).cols()).sum();
            let mut o = Mat::zeros(rows, cols);
            for r in 0..rows {
                let dst = o.row_mut(r);
                let mut offset = 0;
                for p in parts.iter() {
                    let src = v(p).row(r);
                    dst[offset..offset + src.len()].copy_from_slice(src);
                    offset += src.len();
                }
            }
            o
        }
        Op::Mse(p, t) => {
            let (pv, tv) = (v(p), v(t));
            let n = pv.data().len().max(1) as f64;
            let s: f64 = pv.data().iter().zip(tv.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            Mat::scalar(s / n)
        }
        Op::Sum(x) => Mat::scalar(v(x).sum()),
        Op::Mirror(x, map) => {
            let xv = v(x);
            let mut o = xv.clone();
            for (row, src, mirror) in map.iter() {
                o.set_vec3(*row, 0, mirror.apply(xv.vec3(*src, 0)));
            }
            o
        }
    })
}

/// `c[0]·axes[0] + c[1]·axes[1] + c[2]·axes[2]`, the one summation order used
/// everywhere a vector is rebuilt from frame coefficients.
#[inline]
pub fn combine(c: [f64; 3], axes: [Vec3; 3]) -> Vec3 {
    axes[0] * c[0] + axes[1] * c[1] + axes[2] * c[2]
}

fn rowwise(rows: usize, cols: usize, f: impl Fn(usize) -> Vec<f64>) -> Result<Mat> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend(f(r));
    }
    Mat::from_vec(rows, cols, data)
}
