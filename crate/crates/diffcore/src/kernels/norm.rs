//! Batch normalization over the rows of an `N x C` matrix.

use crate::Real;

pub struct BatchStats {
    pub mean: Vec<Real>,
    /// Biased variance, used for normalization.
    pub var: Vec<Real>,
}

/// Two-pass column mean and biased variance.
pub fn column_stats(x: &[Real], n: usize, c: usize) -> BatchStats {
    let mut mean = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as Real);
    let mut var = vec![0.0; c];
    for row in x.chunks_exact(c) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as Real);
    BatchStats { mean, var }
}

/// `y = gamma * (x - mean) * inv_std + beta`; returns `(y, xhat)`.
pub fn normalize(
    x: &[Real],
    c: usize,
    mean: &[Real],
    inv_std: &[Real],
    gamma: &[Real],
    beta: &[Real],
) -> (Vec<Real>, Vec<Real>) {
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((xr, hr), yr) in x
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(y.chunks_exact_mut(c))
    {
        for j in 0..c {
            let h = (xr[j] - mean[j]) * inv_std[j];
            hr[j] = h;
            yr[j] = gamma[j] * h + beta[j];
        }
    }
    (y, xhat)
}

pub struct BatchNormGrads {
    pub dx: Vec<Real>,
    pub dgamma: Vec<Real>,
    pub dbeta: Vec<Real>,
}

/// Backward of [`normalize`]. With `batch_stats` the mean and variance are
/// functions of `x` (train mode); otherwise they are constants (eval mode).
pub fn backward(
    gy: &[Real],
    xhat: &[Real],
    c: usize,
    gamma: &[Real],
    inv_std: &[Real],
    batch_stats: bool,
) -> BatchNormGrads {
    let n = gy.len() / c;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (g, h) in gy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for j in 0..c {
            dgamma[j] += g[j] * h[j];
            dbeta[j] += g[j];
        }
    }
    let mut dx = vec![0.0; gy.len()];
    if batch_stats {
        // dxhat = gy * gamma; dx = inv_std/N * (N dxhat - sum dxhat - xhat sum(dxhat xhat))
        let nf = n as Real;
        for ((d, g), h) in dx.chunks_exact_mut(c).zip(gy.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
            for j in 0..c {
                let sum_dxhat = dbeta[j] * gamma[j];
                let sum_dxhat_xhat = dgamma[j] * gamma[j];
                d[j] = inv_std[j] / nf * (nf * g[j] * gamma[j] - sum_dxhat - h[j] * sum_dxhat_xhat);
            }
        }
    } else {
        for (d, g) in dx.chunks_exact_mut(c).zip(gy.chunks_exact(c)) {
            for j in 0..c {
                d[j] = g[j] * gamma[j] * inv_std[j];
            }
        }
    }
    BatchNormGrads { dx, dgamma, dbeta }
}
