//! Linear attention with the `elu(x) + 1` feature map, evaluated in the
//! associativity-reordered form
//!
//! `out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j) + eps)`
//!
//! which costs `O(N C^2)` instead of `O(N_q N_k C)`.

use super::{elu_plus_one, elu_plus_one_grad};
use crate::gemm::gemm;
use crate::Real;

pub const DENOM_EPS: Real = 1e-8;

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub phi_q: Vec<Real>,
    pub phi_k: Vec<Real>,
    /// `C x C_v` key-value summary.
    pub kv: Vec<Real>,
    /// Column sums of `phi_k`.
    pub ksum: Vec<Real>,
    pub denom: Vec<Real>,
}

pub fn forward(
    q: &[Real],
    k: &[Real],
    v: &[Real],
    nq: usize,
    nk: usize,
    c: usize,
    cv: usize,
) -> (Vec<Real>, AttentionCache) {
    let phi_q: Vec<Real> = q.iter().map(|&x| elu_plus_one(x)).collect();
    let phi_k: Vec<Real> = k.iter().map(|&x| elu_plus_one(x)).collect();
    let mut kv = vec![0.0; c * cv];
    gemm(c, nk, cv, &phi_k, true, v, false, &mut kv, false);
    let mut ksum = vec![0.0; c];
    for row in phi_k.chunks_exact(c) {
        ksum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    let mut out = vec![0.0; nq * cv];
    gemm(nq, c, cv, &phi_q, false, &kv, false, &mut out, false);
    let mut denom = vec![0.0; nq];
    for ((d, row), o) in denom.iter_mut().zip(phi_q.chunks_exact(c)).zip(out.chunks_exact_mut(cv)) {
        *d = row.iter().zip(&ksum).map(|(a, b)| a * b).sum::<Real>() + DENOM_EPS;
        o.iter_mut().for_each(|x| *x /= *d);
    }
    (
        out,
        AttentionCache {
            phi_q,
            phi_k,
            kv,
            ksum,
            denom,
        },
    )
}

pub struct AttentionGrads {
    pub dq: Vec<Real>,
    pub dk: Vec<Real>,
    pub dv: Vec<Real>,
}

#[allow(clippy::too_many_arguments)]
pub fn backward(
    gy: &[Real],
    out: &[Real],
    q: &[Real],
    k: &[Real],
    v: &[Real],
    cache: &AttentionCache,
    nq: usize,
    nk: usize,
    c: usize,
    cv: usize,
) -> AttentionGrads {
    // out = num / den: dnum = g / den, dden = -(g . out) / den
    let mut dnum = vec![0.0; nq * cv];
    let mut dden = vec![0.0; nq];
    for i in 0..nq {
        let g = &gy[i * cv..(i + 1) * cv];
        let o = &out[i * cv..(i + 1) * cv];
        let d = cache.denom[i];
        dden[i] = -g.iter().zip(o).map(|(a, b)| a * b).sum::<Real>() / d;
        for (dn, gg) in dnum[i * cv..(i + 1) * cv].iter_mut().zip(g) {
            *dn = gg / d;
        }
    }
    // dphi_q = dnum kv^T + dden ksum^T
    let mut dphi_q = vec![0.0; nq * c];
    gemm(nq, cv, c, &dnum, false, &cache.kv, true, &mut dphi_q, false);
    for (row, dd) in dphi_q.chunks_exact_mut(c).zip(&dden) {
        row.iter_mut().zip(&cache.ksum).for_each(|(r, s)| *r += dd * s);
    }
    // dkv = phi_q^T dnum ; dksum = phi_q^T dden
    let mut dkv = vec![0.0; c * cv];
    gemm(c, nq, cv, &cache.phi_q, true, &dnum, false, &mut dkv, false);
    let mut dksum = vec![0.0; c];
    gemm(c, nq, 1, &cache.phi_q, true, &dden, false, &mut dksum, false);
    // dphi_k = v dkv^T + 1 dksum^T ; dv = phi_k dkv
    let mut dphi_k = vec![0.0; nk * c];
    gemm(nk, cv, c, v, false, &dkv, true, &mut dphi_k, false);
    for row in dphi_k.chunks_exact_mut(c) {
        row.iter_mut().zip(&dksum).for_each(|(r, s)| *r += s);
    }
    let mut dv = vec![0.0; nk * cv];
    gemm(nk, c, cv, &cache.phi_k, false, &dkv, false, &mut dv, false);

    let dq = dphi_q
        .iter()
        .zip(q)
        .zip(&cache.phi_q)
        .map(|((g, &x), &y)| g * elu_plus_one_grad(x, y))
        .collect();
    let dk = dphi_k
        .iter()
        .zip(k)
        .zip(&cache.phi_k)
        .map(|((g, &x), &y)| g * elu_plus_one_grad(x, y))
        .collect();
    AttentionGrads { dq, dk, dv }
}
