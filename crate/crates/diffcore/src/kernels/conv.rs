//! 3x3 (stride 1, zero padding 1) and 1x1 convolutions over `C x H x W`
//! maps, lowered to GEMM through an im2col buffer.

use crate::gemm::gemm;
use crate::Real;

/// Column buffer of shape `(C*9) x (H*W)`: row `ci*9 + ky*3 + kx` holds
/// channel `ci` shifted by `(ky-1, kx-1)`.
pub fn im2col(x: &[Real], c: usize, h: usize, w: usize) -> Vec<Real> {
    let hw = h * w;
    let mut cols = vec![0.0; c * 9 * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the map.
pub fn col2im(cols: &[Real], c: usize, h: usize, w: usize) -> Vec<Real> {
    let hw = h * w;
    let mut x = vec![0.0; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

/// Forward 3x3 convolution given a precomputed column buffer.
/// `weight` is `C_out x C_in x 3 x 3`.
pub fn conv3x3_forward(cols: &[Real], weight: &[Real], bias: &[Real], c_in: usize, hw: usize) -> Vec<Real> {
    let c_out = bias.len();
    let mut out = vec![0.0; c_out * hw];
    for (o, b) in out.chunks_exact_mut(hw).zip(bias) {
        o.fill(*b);
    }
    gemm(c_out, c_in * 9, hw, weight, false, cols, false, &mut out, true);
    out
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when not needed.
pub fn conv3x3_backward(
    gy: &[Real],
    cols: &[Real],
    weight: &[Real],
    c_in: usize,
    h: usize,
    w: usize,
    need_dx: bool,
) -> (Option<Vec<Real>>, Vec<Real>, Vec<Real>) {
    let hw = h * w;
    let c_out = gy.len() / hw;
    let k = c_in * 9;
    let mut dweight = vec![0.0; c_out * k];
    gemm(c_out, hw, k, gy, false, cols, true, &mut dweight, false);
    let dbias = gy.chunks_exact(hw).map(|r| r.iter().sum()).collect();
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; k * hw];
        gemm(k, c_out, hw, weight, true, gy, false, &mut dcols, false);
        col2im(&dcols, c_in, h, w)
    });
    (dx, dweight, dbias)
}

/// Per-cell linear map: `weight` is `C_out x C_in`.
pub fn conv1x1_forward(x: &[Real], weight: &[Real], bias: &[Real], c_in: usize, hw: usize) -> Vec<Real> {
    let c_out = bias.len();
    let mut out = vec![0.0; c_out * hw];
    for (o, b) in out.chunks_exact_mut(hw).zip(bias) {
        o.fill(*b);
    }
    gemm(c_out, c_in, hw, weight, false, x, false, &mut out, true);
    out
}

pub fn conv1x1_backward(
    gy: &[Real],
    x: &[Real],
    weight: &[Real],
    c_in: usize,
    hw: usize,
    need_dx: bool,
) -> (Option<Vec<Real>>, Vec<Real>, Vec<Real>) {
    let c_out = gy.len() / hw;
    let mut dweight = vec![0.0; c_out * c_in];
    gemm(c_out, hw, c_in, gy, false, x, true, &mut dweight, false);
    let dbias = gy.chunks_exact(hw).map(|r| r.iter().sum()).collect();
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; c_in * hw];
        gemm(c_in, c_out, hw, weight, true, gy, false, &mut dx, false);
        dx
    });
    (dx, dweight, dbias)
}
