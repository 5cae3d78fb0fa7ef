//! Max pooling over a partition of rows.

use crate::Real;

/// Column-wise max of each group. `group_of[r]` names the group of row `r`.
/// Returns the pooled `G x C` values and, per output element, the source row.
/// Ties resolve to the lowest row index. Every group must be non-empty.
pub fn maxpool_set(
    x: &[Real],
    c: usize,
    group_of: &[usize],
    groups: usize,
) -> (Vec<Real>, Vec<usize>) {
    let mut out = vec![Real::NEG_INFINITY; groups * c];
    let mut arg = vec![usize::MAX; groups * c];
    for (r, (row, &g)) in x.chunks_exact(c).zip(group_of).enumerate() {
        let o = &mut out[g * c..(g + 1) * c];
        let a = &mut arg[g * c..(g + 1) * c];
        for j in 0..c {
            if a[j] == usize::MAX || row[j] > o[j] {
                o[j] = row[j];
                a[j] = r;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_set_backward(gy: &[Real], c: usize, arg: &[usize], rows: usize) -> Vec<Real> {
    let mut dx = vec![0.0; rows * c];
    for (k, (&g, &r)) in gy.iter().zip(arg).enumerate() {
        dx[r * c + k % c] += g;
    }
    dx
}
