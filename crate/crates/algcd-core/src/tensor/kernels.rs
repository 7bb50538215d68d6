//! Raw numeric kernels on row-major `f64` slices.
//!
//! Hot kernels have a sequential body and a rayon twin; the twin is used when
//! the `parallel` feature is on and the work size clears
//! [`PARALLEL_THRESHOLD`]. Parallel variants only ever split across
//! independent output rows (each row is computed by one thread with the same
//! sequential inner loop), so results are bit-identical to the sequential
//! path regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Approximate flop count below which ops stay sequential even when
/// `parallel` is enabled.
pub const PARALLEL_THRESHOLD: usize = 32 * 1024;

#[inline]
#[allow(unused_variables)]
pub(crate) fn should_par(work: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        work >= PARALLEL_THRESHOLD
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

#[inline]
fn matmul_row(out: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    for (kk, &av) in a_row.iter().enumerate() {
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// C = A·B with A m×k and B k×n.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if should_par(m * k * n) && m > 1 {
        return matmul_par(a, b, m, k, n);
    }
    matmul_seq(a, b, m, k, n)
}

pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for (o, a_row) in out.chunks_mut(n).zip(a.chunks(k)) {
        matmul_row(o, a_row, b, n);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(o, a_row)| matmul_row(o, a_row, b, n));
    out
}

/// Xᵀ for X m×n.
pub fn transpose(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

#[inline]
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - mx).exp();
        *o = e;
        sum += e;
    }
    // The max entry contributes exp(0) = 1, so sum >= 1 and division is safe.
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if should_par(m * n) && m > 1 {
        return softmax_rows_par(x, m, n);
    }
    softmax_rows_seq(x, m, n)
}

pub fn softmax_rows_seq(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), m * n);
    let mut out = vec![0.0; m * n];
    for (o, row) in out.chunks_mut(n).zip(x.chunks(n)) {
        softmax_row(row, o);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn softmax_rows_par(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), m * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .zip(x.par_chunks(n))
        .for_each(|(o, row)| softmax_row(row, o));
    out
}

/// dX for Y = softmax_rows(X): dx_j = y_j (dy_j - sum_k dy_k y_k), per row.
pub fn softmax_rows_backward(y: &[f64], gy: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut gx = vec![0.0; m * n];
    for i in 0..m {
        let (ys, gs) = (&y[i * n..(i + 1) * n], &gy[i * n..(i + 1) * n]);
        let dot: f64 = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in gx[i * n..(i + 1) * n].iter_mut().zip(ys).zip(gs) {
            *o = yv * (gv - dot);
        }
    }
    gx
}

/// Row-wise log(sum(exp(x))), max-subtracted; output length m.
pub fn logsumexp_rows(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (o, row) in out.iter_mut().zip(x.chunks(n)) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - mx).exp()).sum();
        *o = mx + sum.ln();
    }
    out
}

/// dX for L = logsumexp_rows(X): dx_ij = g_i * exp(x_ij - L_i).
pub fn logsumexp_rows_backward(x: &[f64], lse: &[f64], g: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut gx = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            gx[i * n + j] = g[i] * (x[i * n + j] - lse[i]).exp();
        }
    }
    gx
}

const GELU_C: f64 = 0.044_715;

#[inline]
fn gelu_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * s * (1.0 + 3.0 * GELU_C * x * x)
}

/// Elementwise GeLU (tanh approximation).
pub fn gelu(x: &[f64]) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if should_par(x.len() * 8) {
        return gelu_par(x);
    }
    gelu_seq(x)
}

pub fn gelu_seq(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| gelu_scalar(v)).collect()
}

#[cfg(feature = "parallel")]
pub fn gelu_par(x: &[f64]) -> Vec<f64> {
    x.par_iter().map(|&v| gelu_scalar(v)).collect()
}

pub fn gelu_backward(x: &[f64], g: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xv, &gv)| gv * gelu_grad_scalar(xv))
        .collect()
}

#[inline]
fn l2_normalize_row(row: &[f64], out: &mut [f64]) -> f64 {
    let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
    let inv = 1.0 / norm;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v * inv;
    }
    norm
}

/// Row-wise L2 normalization. Returns `Err(row, norm)` on a degenerate row.
pub fn l2_normalize_rows(
    x: &[f64],
    m: usize,
    n: usize,
    min_norm: f64,
) -> Result<Vec<f64>, (usize, f64)> {
    // The degeneracy scan stays sequential so the first offending row wins.
    for (i, row) in x.chunks(n).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
        if !(norm >= min_norm) {
            return Err((i, norm));
        }
    }
    #[cfg(feature = "parallel")]
    if should_par(m * n * 2) && m > 1 {
        return Ok(l2_normalize_rows_par(x, m, n));
    }
    Ok(l2_normalize_rows_seq(x, m, n))
}

pub fn l2_normalize_rows_seq(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (o, row) in out.chunks_mut(n).zip(x.chunks(n)) {
        l2_normalize_row(row, o);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn l2_normalize_rows_par(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n)
        .zip(x.par_chunks(n))
        .for_each(|(o, row)| {
            l2_normalize_row(row, o);
        });
    out
}

/// dX for Y = l2_normalize_rows(X): per row, (g - y (g·y)) / ||x||.
pub fn l2_normalize_rows_backward(
    x: &[f64],
    y: &[f64],
    g: &[f64],
    m: usize,
    n: usize,
) -> Vec<f64> {
    let mut gx = vec![0.0; m * n];
    for i in 0..m {
        let row = i * n..(i + 1) * n;
        let norm = x[row.clone()].iter().map(|&v| v * v).sum::<f64>().sqrt();
        let dot: f64 = y[row.clone()]
            .iter()
            .zip(&g[row.clone()])
            .map(|(&a, &b)| a * b)
            .sum();
        for j in row.clone() {
            gx[j] = (g[j] - y[j] * dot) / norm;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_seq_matches_par_bitwise() {
        #[cfg(feature = "parallel")]
        {
            let m = 64;
            let k = 32;
            let n = 48;
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let s = matmul_seq(&a, &b, m, k, n);
            let p = matmul_par(&a, &b, m, k, n);
            assert_eq!(s, p);
        }
    }

    #[test]
    fn softmax_seq_matches_par_bitwise() {
        #[cfg(feature = "parallel")]
        {
            let m = 128;
            let n = 300;
            let x: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.013).sin() * 3.0).collect();
            assert_eq!(softmax_rows_seq(&x, m, n), softmax_rows_par(&x, m, n));
        }
    }
}
