use super::tensor::Tensor2D;
use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// `y_i = w_i · x_i / sqrt(mean(x²) + eps)`.
pub fn rmsnorm(x: &[f64], w: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != w.len() {
        return Err(Error::Dimension(format!(
            "rmsnorm input of length {} with weight of length {}",
            x.len(),
            w.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rmsnorm_into(x, w, eps, &mut out);
    Ok(out)
}

/// Writes the normalized row into `out` and returns the inverse RMS used.
#[inline]
pub(crate) fn rmsnorm_into(x: &[f64], w: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let mut ss = 0.0;
    for &v in x {
        ss += v * v;
    }
    let inv = 1.0 / (ss / x.len() as f64 + eps).sqrt();
    for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
        *o = wi * xi * inv;
    }
    inv
}

/// Backward of [`rmsnorm_into`] for one row. Accumulates into `dx` and `dw`.
#[inline]
pub(crate) fn rmsnorm_backward(x: &[f64], w: &[f64], inv: f64, dy: &[f64], dx: &mut [f64], dw: &mut [f64]) {
    let n = x.len() as f64;
    let mut dot = 0.0;
    for i in 0..x.len() {
        dw[i] += dy[i] * x[i] * inv;
        dot += w[i] * dy[i] * x[i];
    }
    let c = inv * inv * inv * dot / n;
    for i in 0..x.len() {
        dx[i] += inv * w[i] * dy[i] - c * x[i];
    }
}

/// Max-shifted log-sum-exp of a row.
#[inline]
pub fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || !m.is_finite() {
        return m;
    }
    let mut s = 0.0;
    for &v in row {
        s += (v - m).exp();
    }
    m + s.ln()
}

/// Per-row negative log-likelihood `logsumexp(row) − row[target]`.
pub fn cross_entropy_nll(logits: &Tensor2D, targets: &[u32]) -> Result<Vec<f64>> {
    if logits.rows() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    targets
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let row = logits.row(t);
            let y = y as usize;
            if y >= row.len() {
                return Err(Error::Range(format!("target id {y} outside vocab of {}", row.len())));
            }
            Ok(logsumexp(row) - row[y])
        })
        .collect()
}

/// In-place softmax of a row.
#[inline]
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = 1.0 / s;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d silu / dx.
#[inline]
pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
