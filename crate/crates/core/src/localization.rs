//! BEV scatter, the densely connected convolution block, the three heads,
//! and target encoding/decoding.

use crate::error::Result;
use crate::geometry::{normalize_angle, ObjectState};
use crate::model::{HeadParams, LinearParams, LocalizationParams};
use crate::pillars::GridSpec;
use diffcore::{Graph, Real, Tensor, Var};

/// Places each pillar row at its cell of a zeroed `[C x ny x nx]` map.
pub fn scatter_to_bev(g: &mut Graph, features: Var, coords: &[(usize, usize)], grid: &GridSpec) -> Result<Var> {
    let cells: Vec<usize> = coords.iter().map(|&c| grid.flat(c)).collect();
    Ok(g.scatter_rows(features, &cells, grid.ny, grid.nx)?)
}

fn conv3x3(g: &mut Graph, x: Var, p: &LinearParams) -> Result<Var> {
    let (w, b) = (g.param(p.weight), g.param(p.bias));
    Ok(g.conv3x3(x, w, b)?)
}

fn conv1x1(g: &mut Graph, x: Var, p: &LinearParams) -> Result<Var> {
    let (w, b) = (g.param(p.weight), g.param(p.bias));
    Ok(g.conv1x1(x, w, b)?)
}

/// Three conv+ReLU layers. With `dense`, layer k sees the block input plus
/// every earlier layer output, and the block returns the input plus all
/// three outputs; otherwise the layers are chained.
pub fn dense_conv_block(g: &mut Graph, bev: Var, convs: &[LinearParams; 3], dense: bool) -> Result<Var> {
    let mut outs: Vec<Var> = Vec::with_capacity(3);
    for p in convs {
        let input = if dense {
            let mut terms = vec![bev];
            terms.extend_from_slice(&outs);
            g.sum_n(&terms)?
        } else {
            outs.last().copied().unwrap_or(bev)
        };
        let y = conv3x3(g, input, p)?;
        outs.push(g.relu(y)?);
    }
    if dense {
        let mut terms = vec![bev];
        terms.extend_from_slice(&outs);
        Ok(g.sum_n(&terms)?)
    } else {
        Ok(outs[2])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutputs {
    /// `[1 x ny x nx]`, after the sigmoid.
    pub center: Var,
    /// `[3 x ny x nx]`: x offset and y offset in cells, then yaw in radians.
    pub offrot: Var,
    /// `[1 x ny x nx]`, metres in the reference frame.
    pub z: Var,
}

fn head(g: &mut Graph, x: Var, p: &HeadParams) -> Result<Var> {
    let h = conv3x3(g, x, &p.conv)?;
    let h = g.relu(h)?;
    conv1x1(g, h, &p.out)
}

pub fn run_heads(g: &mut Graph, bev: Var, p: &LocalizationParams) -> Result<HeadOutputs> {
    let logits = head(g, bev, &p.center)?;
    Ok(HeadOutputs {
        center: g.sigmoid(logits)?,
        offrot: head(g, bev, &p.offrot)?,
        z: head(g, bev, &p.z)?,
    })
}

/// Scatter, convolution block and heads for one set of search pillars.
pub fn localize(
    g: &mut Graph,
    features: Var,
    coords: &[(usize, usize)],
    grid: &GridSpec,
    p: &LocalizationParams,
    dense: bool,
) -> Result<HeadOutputs> {
    let bev = scatter_to_bev(g, features, coords, grid)?;
    let fused = dense_conv_block(g, bev, &p.convs, dense)?;
    run_heads(g, fused, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxTargets {
    pub heatmap: Tensor,
    pub gt_cell: (usize, usize),
    /// Fractional position inside `gt_cell`, in cells.
    pub offset: [Real; 2],
    pub rot: Real,
    pub z: Real,
    /// The centre fell outside the grid and was clamped to the border.
    pub degenerate: bool,
}

impl BoxTargets {
    /// `[dx, dy, yaw]` as supervised by the offset/rotation head.
    pub fn offrot(&self) -> [Real; 3] {
        [self.offset[0], self.offset[1], self.rot]
    }
}

/// Gaussian width in cells for a box footprint.
pub fn gaussian_sigma(w: Real, l: Real, cell: Real) -> Real {
    (w.min(l) / (3.0 * cell)).round().max(1.0)
}

fn axis_cell(v: Real, min: Real, cell: Real, n: usize) -> (usize, Real, bool) {
    let u = (v - min) / cell;
    let i = u.floor();
    if i < 0.0 {
        (0, 0.0, true)
    } else if i >= n as Real {
        (n - 1, 1.0 - 1e-9, true)
    } else {
        (i as usize, u - i, false)
    }
}

/// Targets for a ground-truth box already expressed in the reference frame.
pub fn encode_targets(gt: &ObjectState, grid: &GridSpec) -> BoxTargets {
    let (i, dx, cx) = axis_cell(gt.x, grid.x_min, grid.cell, grid.nx);
    let (j, dy, cy) = axis_cell(gt.y, grid.y_min, grid.cell, grid.ny);
    let sigma = gaussian_sigma(gt.w, gt.l, grid.cell);
    let heatmap = Tensor::from_fn([1, grid.ny, grid.nx], |f| {
        let (di, dj) = ((f % grid.nx) as Real - i as Real, (f / grid.nx) as Real - j as Real);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    BoxTargets {
        heatmap,
        gt_cell: (i, j),
        offset: [dx, dy],
        rot: normalize_angle(gt.theta),
        z: gt.z,
        degenerate: cx || cy,
    }
}

/// Evaluated head maps.
#[derive(Debug, Clone)]
pub struct HeadMaps {
    pub center: Tensor,
    pub offrot: Tensor,
    pub z: Tensor,
}

impl HeadMaps {
    pub fn from_graph(g: &Graph, h: &HeadOutputs) -> Self {
        HeadMaps {
            center: g.value(h.center).clone(),
            offrot: g.value(h.offrot).clone(),
            z: g.value(h.z).clone(),
        }
    }

    /// Flat index of the heatmap maximum; ties go to the lowest index.
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (f, &v) in self.center.data().iter().enumerate() {
            if v > self.center.data()[best] {
                best = f;
            }
        }
        best
    }
}

/// Reads the state at the heatmap peak and maps it back out of the
/// reference frame. Sizes come from `size_of`.
pub fn decode_box(maps: &HeadMaps, grid: &GridSpec, reference: &ObjectState, size_of: &ObjectState) -> ObjectState {
    let f = maps.peak();
    let hw = grid.num_cells();
    let (i, j) = (f % grid.nx, f / grid.nx);
    let od = maps.offrot.data();
    let local = ObjectState {
        x: grid.x_min + (i as Real + od[f]) * grid.cell,
        y: grid.y_min + (j as Real + od[hw + f]) * grid.cell,
        z: maps.z.data()[f],
        w: size_of.w,
        l: size_of.l,
        h: size_of.h,
        theta: normalize_angle(od[2 * hw + f]),
    };
    reference.state_from_local(&local)
}

/// Head maps that reproduce `targets` exactly when decoded.
pub fn maps_from_targets(targets: &BoxTargets, grid: &GridSpec) -> HeadMaps {
    let hw = grid.num_cells();
    let f = grid.flat(targets.gt_cell);
    let mut offrot = Tensor::zeros([3, grid.ny, grid.nx]);
    let mut z = Tensor::zeros([1, grid.ny, grid.nx]);
    for (ch, v) in targets.offrot().iter().enumerate() {
        offrot.data_mut()[ch * hw + f] = *v;
    }
    z.data_mut()[f] = targets.z;
    HeadMaps {
        center: targets.heatmap.clone(),
        offrot,
        z,
    }
}
