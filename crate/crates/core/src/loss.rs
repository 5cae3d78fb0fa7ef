//! Focal + L1 localization loss and its deep-supervised sum.

use crate::error::Result;
use crate::localization::{localize, BoxTargets, HeadOutputs};
use crate::model::Network;
use crate::siamese::NetworkOutputs;
use diffcore::{Graph, Real, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: Real,
    pub lambda2: Real,
    pub alpha: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 2.0,
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_center: Real,
    pub l_offrot: Real,
    pub l_z: Real,
    pub l_main: Real,
    pub l_deep: Vec<Real>,
    pub l_final: Real,
}

/// Loss terms of one head set, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct BranchLoss {
    pub center: Var,
    pub offrot: Var,
    pub z: Var,
    pub total: Var,
}

/// `lambda1 * (center + offrot) + lambda2 * z`, with offsets, yaw and z read
/// only at the ground-truth cell.
pub fn branch_loss(
    g: &mut Graph,
    heads: &HeadOutputs,
    targets: &BoxTargets,
    flat_cell: usize,
    w: &LossWeights,
) -> Result<BranchLoss> {
    let center = g.focal_loss(heads.center, &targets.heatmap)?;
    let or = g.select_cell(heads.offrot, flat_cell)?;
    let offrot = g.l1_loss(or, &targets.offrot())?;
    let zv = g.select_cell(heads.z, flat_cell)?;
    let z = g.l1_loss(zv, &[targets.z])?;
    let co = g.add(center, offrot)?;
    let a = g.scale(co, w.lambda1)?;
    let b = g.scale(z, w.lambda2)?;
    let total = g.add(a, b)?;
    Ok(BranchLoss {
        center,
        offrot,
        z,
        total,
    })
}

/// Main-branch loss plus `alpha` times the deep-supervision losses of every
/// stage but the last. Returns the scalar to differentiate and its parts.
pub fn total_loss(
    g: &mut Graph,
    net: &Network,
    outputs: &NetworkOutputs,
    search_coords: &[(usize, usize)],
    targets: &BoxTargets,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let grid = net.config.grid;
    let dense = net.config.dense_localization;
    let cell = grid.flat(targets.gt_cell);
    let heads = localize(g, outputs.search_loc_input, search_coords, &grid, &net.loc, dense)?;
    let main = branch_loss(g, &heads, targets, cell, w)?;
    let mut deep = Vec::new();
    if w.alpha != 0.0 {
        for s in net.config.deep_stages() {
            let loc = net.deep_localization(s);
            let h = localize(g, outputs.search_per_stage[s], search_coords, &grid, loc, dense)?;
            deep.push(branch_loss(g, &h, targets, cell, w)?.total);
        }
    }
    let final_var = if deep.is_empty() {
        main.total
    } else {
        let sum = g.sum_n(&deep)?;
        let weighted = g.scale(sum, w.alpha)?;
        g.add(main.total, weighted)?
    };
    let item = |v: Var| g.value(v).item();
    let breakdown = LossBreakdown {
        l_center: item(main.center),
        l_offrot: item(main.offrot),
        l_z: item(main.z),
        l_main: item(main.total),
        l_deep: deep.iter().map(|&v| item(v)).collect(),
        l_final: item(final_var),
    };
    Ok((final_var, breakdown))
}
