//! Forward and reverse-mode kernels for the encoder's building blocks.
//!
//! Activations are row-major `(tokens × features)` matrices. Every backward
//! function returns the input gradient and accumulates parameter gradients into
//! a [`Params`] buffer laid out like the model, skipping groups that `mode`
//! does not train.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{GradMode, Params};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub weight: usize,
    pub bias: Option<usize>,
    /// `(down, up)` adapter tensors.
    pub lora: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    /// Adapter bottleneck activations `x·Dᵀ`.
    pub z: Option<Array2<f64>>,
}

pub fn linear_forward(p: &Params, ids: &LinearIds, x: ArrayView2<f64>, lora_scale: f64) -> (Array2<f64>, LinearCache) {
    let w = p.mat(ids.weight);
    let mut y = x.dot(&w.t());
    if let Some(b) = ids.bias {
        y += &p.vec(b);
    }
    let z = ids.lora.map(|(down, up)| {
        let z = x.dot(&p.mat(down).t());
        general_mat_mul(lora_scale, &z, &p.mat(up).t(), 1.0, &mut y);
        z
    });
    (y, LinearCache { z })
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    p: &Params,
    ids: &LinearIds,
    x: ArrayView2<f64>,
    cache: &LinearCache,
    dy: ArrayView2<f64>,
    lora_scale: f64,
    grads: &mut Params,
    mode: GradMode,
) -> Array2<f64> {
    let w = p.mat(ids.weight);
    let mut dx = dy.dot(&w);
    if mode.trains(p.specs()[ids.weight].group) {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grads.mat_mut(ids.weight));
        if let Some(b) = ids.bias {
            grads.vec_mut(b).scaled_add(1.0, &dy.sum_axis(Axis(0)));
        }
    }
    if let (Some((down, up)), Some(z)) = (ids.lora, cache.z.as_ref()) {
        let dyu = dy.dot(&p.mat(up));
        general_mat_mul(lora_scale, &dyu, &p.mat(down), 1.0, &mut dx);
        if mode.trains(p.specs()[down].group) {
            general_mat_mul(lora_scale, &dy.t(), z, 1.0, &mut grads.mat_mut(up));
            general_mat_mul(lora_scale, &dyu.t(), &x, 1.0, &mut grads.mat_mut(down));
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn layer_norm_forward(x: ArrayView2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mu = row.sum() / n;
        row.mapv_inplace(|v| v - mu);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        *s = is;
    }
    let y = &xhat * &gain + &bias;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    dy: ArrayView2<f64>,
    cache: &LayerNormCache,
    gain: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgain = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let dxhat = &dy * &gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dxh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dxh.sum() / n;
        let m2 = dxh.dot(&xh) / n;
        let is = cache.inv_std[i];
        let mut out = dx.row_mut(i);
        for j in 0..dxh.len() {
            out[j] = is * (dxh[j] - m1 - xh[j] * m2);
        }
    }
    (dx, dgain, dbias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Row-wise softmax, in place.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Bidirectional multi-head attention core: `softmax(QKᵀ/√dₕ)·V` per head.
/// Returns the concatenated head outputs and each head's attention matrix.
pub fn attention_forward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    n_heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|x| x * scale);
        softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    (out, probs)
}

pub fn attention_backward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    probs: &[Array2<f64>],
    d_out: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t, d) = q.dim();
    let n_heads = probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_oh = d_out.slice(cols);
        let dp = d_oh.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&d_oh));
        // softmax Jacobian, row by row
        let mut ds = p * &dp;
        let row_dot = ds.sum_axis(Axis(1));
        for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - p[[i, j]] * row_dot[i]) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// `x / ‖x‖` and the norm.
pub fn l2_normalize(x: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let norm = x.dot(&x).sqrt();
    (x.mapv(|v| v / norm), norm)
}

/// Backward through `e = u/‖u‖`.
pub fn l2_normalize_backward(e: ArrayView1<f64>, norm: f64, de: ArrayView1<f64>) -> Array1<f64> {
    let proj = e.dot(&de);
    (&de - &(&e * proj)) / norm
}
