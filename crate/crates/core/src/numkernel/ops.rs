//! Differentiable primitives.
//!
//! The slice kernels operate on row-major buffers with explicit dimensions
//! and are what the encoder and heads call in their hot loops. The
//! [`Tensor`]-level wrappers validate shapes and are the public surface.
//!
//! All matrix products accumulate over the inner dimension in ascending
//! order, independent of the outer dimensions. Adding rows to an operand
//! therefore never changes the bits of the existing output rows.

use crate::error::{DseError, Result};

use super::{Parameter, Tensor};

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    mm_acc(a, b, m, k, n, &mut c);
    c
}

/// `c += a · b`.
pub fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
        for (&a_it, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (c_ij, &b_tj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_it * b_tj;
            }
        }
    }
}

/// `c += aᵀ · b` for `a: k×m`, `b: k×n`, `c: m×n`.
pub fn mm_at_b_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)) {
        for (&a_ti, c_row) in a_row.iter().zip(c.chunks_exact_mut(n)) {
            for (c_ij, &b_tj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ti * b_tj;
            }
        }
    }
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn mm_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = Vec::with_capacity(m * n);
    for a_row in a.chunks_exact(k) {
        c.extend(b.chunks_exact(k).map(|b_row| dot(a_row, b_row)));
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for (i, row) in a.chunks_exact(cols).enumerate() {
        for (j, &x) in row.iter().enumerate() {
            t[j * rows + i] = x;
        }
    }
    t
}

/// Dot product with four interleaved partial sums. The reduction order is
/// fixed by the slice length alone.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = W · x` for `W: rows×cols` stored row-major.
pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Column sums of `x` accumulated into `out`.
pub fn col_sum_acc(x: &[f64], out: &mut [f64]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Row-wise softmax in place, with per-row max subtraction. Entries equal to
/// `-inf` receive exactly zero weight, provided each row has a finite entry.
pub fn softmax_rows_inplace(x: &mut [f64], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Gradient of row-wise softmax: `dx = y ∘ (dy − ⟨y, dy⟩)` per row.
pub fn softmax_rows_backward(y: &[f64], dy: &[f64], cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for ((yr, dyr), dxr) in y
        .chunks_exact(cols)
        .zip(dy.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let inner: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yy), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yy * (g - inner);
        }
    }
    dx
}

/// Saved state for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub cols: usize,
}

pub fn layer_norm_forward(
    x: &[f64],
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / cols;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let n = cols as f64;
    for ((xr, yr), hr) in x
        .chunks_exact(cols)
        .zip(y.chunks_exact_mut(cols))
        .zip(xhat.chunks_exact_mut(cols))
    {
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..cols {
            let h = (xr[j] - mean) * inv;
            hr[j] = h;
            yr[j] = h * gamma[j] + beta[j];
        }
        inv_std.push(inv);
    }
    (y, LayerNormCache { xhat, inv_std, cols })
}

/// Returns `dx`; accumulates `dgamma` and `dbeta`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    dy: &[f64],
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let cols = cache.cols;
    let n = cols as f64;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; cols];
    for (r, ((dyr, hr), dxr)) in dy
        .chunks_exact(cols)
        .zip(cache.xhat.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
        .enumerate()
    {
        let mut sum_d = 0.0;
        let mut sum_dh = 0.0;
        for j in 0..cols {
            dgamma[j] += dyr[j] * hr[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            sum_d += dxhat[j];
            sum_dh += dxhat[j] * hr[j];
        }
        let scale = cache.inv_std[r] / n;
        for j in 0..cols {
            dxr[j] = scale * (n * dxhat[j] - sum_d - hr[j] * sum_dh);
        }
    }
    dx
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` where the pre-activation was not positive.
pub fn relu_backward_inplace(pre: &[f64], dy: &mut [f64]) {
    for (d, &p) in dy.iter_mut().zip(pre) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
}

/// `x · W + b` for `x: rows×in`, `W: in×out`.
pub fn linear_forward(x: &[f64], w: &Parameter, b: &Parameter) -> Vec<f64> {
    let (inp, out) = (w.value.rows(), w.value.cols());
    let rows = x.len() / inp;
    let mut y = mm(x, w.value.data(), rows, inp, out);
    add_row_bias(&mut y, b.value.data());
    y
}

/// Accumulates `dW`, `db` and returns `dx`.
pub fn linear_backward(x: &[f64], dy: &[f64], w: &mut Parameter, b: &mut Parameter) -> Vec<f64> {
    let (inp, out) = (w.value.rows(), w.value.cols());
    let rows = x.len() / inp;
    mm_at_b_acc(x, dy, rows, inp, out, w.grad.data_mut());
    col_sum_acc(dy, b.grad.data_mut());
    mm_a_bt(dy, w.value.data(), rows, out, inp)
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_2d("left operand")?;
    let (k2, n) = b.require_2d("right operand")?;
    if k != k2 {
        return Err(DseError::Shape(format!(
            "matmul inner dimensions disagree: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::from_vec(&[m, n], mm(a.data(), b.data(), m, k, n))
}

/// Softmax over each row of a 2-D tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, n) = x.require_2d("softmax input")?;
    if !x.is_finite() {
        return Err(DseError::NonFinite("softmax input".into()));
    }
    let mut out = x.clone();
    softmax_rows_inplace(out.data_mut(), n);
    Ok(out)
}

/// Per-row layer normalization followed by the affine `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (_, n) = x.require_2d("layer_norm input")?;
    if gamma.len() != n || beta.len() != n {
        return Err(DseError::Shape(format!(
            "layer_norm affine parameters must have {n} entries, got {} and {}",
            gamma.len(),
            beta.len()
        )));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(DseError::Config(format!("layer_norm eps must be > 0, got {eps}")));
    }
    let (y, _) = layer_norm_forward(x.data(), n, gamma.data(), beta.data(), eps);
    Tensor::from_vec(x.shape(), y)
}
