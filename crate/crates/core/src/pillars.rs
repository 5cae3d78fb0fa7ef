//! Point cloud to sparse pillars: resampling, dynamic voxelization,
//! nine-column decoration and the one-layer PointNet embedding.

use crate::error::{Result, TrackError};
use crate::geometry::Point;
use diffcore::{BatchNormMode, BufferId, Graph, ParamId, ParamStore, Real, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;

pub const DECORATED_DIM: usize = 9;

/// Metric crop and cell layout shared by the template and search branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cell: Real,
    pub x_min: Real,
    pub x_max: Real,
    pub y_min: Real,
    pub y_max: Real,
    pub z_min: Real,
    pub z_max: Real,
    pub nx: usize,
    pub ny: usize,
}

fn cell_count(min: Real, max: Real, cell: Real) -> usize {
    // the small guard keeps 9.6 / 0.3 from rounding up to 33
    (((max - min) / cell) - 1e-9).ceil().max(1.0) as usize
}

impl GridSpec {
    pub fn new(cell: Real, x: (Real, Real), y: (Real, Real), z: (Real, Real)) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(TrackError::Config(format!("cell size must be positive, got {cell}")));
        }
        for (name, (lo, hi)) in [("x", x), ("y", y), ("z", z)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(TrackError::Config(format!("{name} range [{lo}, {hi}) is empty")));
            }
        }
        Ok(GridSpec {
            cell,
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            z_min: z.0,
            z_max: z.1,
            nx: cell_count(x.0, x.1, cell),
            ny: cell_count(y.0, y.1, cell),
        })
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn z_mid(&self) -> Real {
        0.5 * (self.z_min + self.z_max)
    }

    pub fn contains(&self, p: &Point) -> bool {
        p[0] >= self.x_min
            && p[0] < self.x_max
            && p[1] >= self.y_min
            && p[1] < self.y_max
            && p[2] >= self.z_min
            && p[2] < self.z_max
    }

    /// Cell `(i, j)` of an in-range point.
    pub fn cell_of(&self, p: &Point) -> (usize, usize) {
        let i = ((p[0] - self.x_min) / self.cell).floor() as usize;
        let j = ((p[1] - self.y_min) / self.cell).floor() as usize;
        (i.min(self.nx - 1), j.min(self.ny - 1))
    }

    pub fn flat(&self, (i, j): (usize, usize)) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, (i, j): (usize, usize)) -> [Real; 2] {
        [
            self.x_min + (i as Real + 0.5) * self.cell,
            self.y_min + (j as Real + 0.5) * self.cell,
        ]
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::new(0.3, (-4.8, 4.8), (-4.8, 4.8), (-1.5, 1.5)).expect("default grid is valid")
    }
}

/// Exactly `target` points: a subset without replacement when there are
/// enough, otherwise every original plus uniform duplicates.
pub fn resample_points<R: Rng + ?Sized>(points: &[Point], target: usize, rng: &mut R) -> Result<Vec<Point>> {
    let n = points.len();
    if n == 0 {
        return Err(TrackError::EmptyRegion("no points to resample"));
    }
    if n >= target {
        return Ok(sample(rng, n, target).into_iter().map(|i| points[i]).collect());
    }
    let mut out = points.to_vec();
    out.extend((n..target).map(|_| points[rng.gen_range(0..n)]));
    Ok(out)
}

/// Result of assigning points to grid cells with no per-pillar cap.
#[derive(Debug, Clone)]
pub struct Voxelization {
    /// In-range points, in input order.
    pub points: Vec<Point>,
    /// Pillar row of each retained point.
    pub pillar_of: Vec<usize>,
    /// Distinct cells, sorted by flat index `j * nx + i`.
    pub coords: Vec<(usize, usize)>,
}

pub fn voxelize_dynamic(points: &[Point], grid: &GridSpec) -> Result<Voxelization> {
    let kept: Vec<Point> = points.iter().copied().filter(|p| grid.contains(p)).collect();
    if kept.is_empty() {
        return Err(TrackError::EmptyRegion("all points outside the grid"));
    }
    let flat: Vec<usize> = kept.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
    let mut row_of_cell = vec![usize::MAX; grid.num_cells()];
    for &f in &flat {
        row_of_cell[f] = 0;
    }
    let mut coords = Vec::new();
    for (f, slot) in row_of_cell.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = coords.len();
            coords.push((f % grid.nx, f / grid.nx));
        }
    }
    let pillar_of = flat.iter().map(|&f| row_of_cell[f]).collect();
    Ok(Voxelization {
        points: kept,
        pillar_of,
        coords,
    })
}

/// Per-point `(x, y, z, x_c, y_c, z_c, x_p, y_p, z_p)` rows.
#[derive(Debug, Clone)]
pub struct DecoratedPoints {
    pub features: Tensor,
    pub pillar_of: Vec<usize>,
}

/// Column-wise pillar means. Each pillar's values are summed in sorted order
/// so the result does not depend on the order points arrive in.
fn pillar_means(points: &[Point], pillar_of: &[usize], pillars: usize) -> Vec<Point> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); pillars];
    for (idx, &p) in pillar_of.iter().enumerate() {
        members[p].push(idx);
    }
    members
        .iter()
        .map(|rows| {
            let mut mean = [0.0; 3];
            for (axis, m) in mean.iter_mut().enumerate() {
                let mut vals: Vec<Real> = rows.iter().map(|&r| points[r][axis]).collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                *m = vals.iter().sum::<Real>() / vals.len() as Real;
            }
            mean
        })
        .collect()
}

pub fn decorate(vox: &Voxelization, grid: &GridSpec) -> DecoratedPoints {
    let means = pillar_means(&vox.points, &vox.pillar_of, vox.coords.len());
    let z_mid = grid.z_mid();
    let mut data = Vec::with_capacity(vox.points.len() * DECORATED_DIM);
    for (p, &row) in vox.points.iter().zip(&vox.pillar_of) {
        let m = means[row];
        let [cx, cy] = grid.cell_center(vox.coords[row]);
        data.extend_from_slice(&[
            p[0],
            p[1],
            p[2],
            p[0] - m[0],
            p[1] - m[1],
            p[2] - m[2],
            p[0] - cx,
            p[1] - cy,
            p[2] - z_mid,
        ]);
    }
    DecoratedPoints {
        features: Tensor::new([vox.points.len(), DECORATED_DIM], data).expect("row count matches"),
        pillar_of: vox.pillar_of.clone(),
    }
}

/// Linear, BatchNorm and ReLU applied to every decorated point.
#[derive(Debug, Clone, Copy)]
pub struct PointNetParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: Real,
    pub momentum: Real,
}

pub fn embed_points(g: &mut Graph, decorated: Var, pnet: &PointNetParams, mode: BatchNormMode) -> Result<Var> {
    let (w, b) = (g.param(pnet.weight), g.param(pnet.bias));
    let h = g.linear(decorated, w, b)?;
    let (gamma, beta) = (g.param(pnet.gamma), g.param(pnet.beta));
    let h = g.batchnorm(
        h,
        gamma,
        beta,
        pnet.running_mean,
        pnet.running_var,
        mode,
        pnet.eps,
        pnet.momentum,
    )?;
    Ok(g.relu(h)?)
}

/// Non-empty pillars of one branch with their features held in a graph.
#[derive(Debug, Clone)]
pub struct PillarVars {
    pub coords: Vec<(usize, usize)>,
    /// `(centre_x, centre_y, z_mid)` per pillar; the positional-encoding input.
    pub centers: Tensor,
    pub features: Var,
}

impl PillarVars {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn flat_cells(&self, grid: &GridSpec) -> Vec<usize> {
        self.coords.iter().map(|&c| grid.flat(c)).collect()
    }
}

/// Evaluated pillar set, detached from any graph.
#[derive(Debug, Clone)]
pub struct PillarSet {
    pub coords: Vec<(usize, usize)>,
    pub centers: Tensor,
    pub features: Tensor,
}

fn pillar_centers(coords: &[(usize, usize)], grid: &GridSpec) -> Tensor {
    let z = grid.z_mid();
    let rows: Vec<Real> = coords
        .iter()
        .flat_map(|&c| {
            let [x, y] = grid.cell_center(c);
            [x, y, z]
        })
        .collect();
    Tensor::new([coords.len(), 3], rows).expect("three columns per pillar")
}

/// Voxelized and decorated cloud, ready for embedding.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub coords: Vec<(usize, usize)>,
    pub decorated: DecoratedPoints,
}

pub fn prepare_cloud(points: &[Point], grid: &GridSpec) -> Result<PreparedCloud> {
    let vox = voxelize_dynamic(points, grid)?;
    let decorated = decorate(&vox, grid);
    Ok(PreparedCloud {
        coords: vox.coords,
        decorated,
    })
}

/// Embeds one cloud and max-pools each pillar.
pub fn encode_cloud(
    g: &mut Graph,
    cloud: &PreparedCloud,
    grid: &GridSpec,
    pnet: &PointNetParams,
    mode: BatchNormMode,
) -> Result<PillarVars> {
    let x = g.constant(cloud.decorated.features.clone());
    let h = embed_points(g, x, pnet, mode)?;
    let features = g.maxpool_set(h, &cloud.decorated.pillar_of, cloud.coords.len())?;
    Ok(PillarVars {
        coords: cloud.coords.clone(),
        centers: pillar_centers(&cloud.coords, grid),
        features,
    })
}

/// Embeds both branches through one normalization call so that training
/// batch statistics cover the same mixture of points the running averages
/// see; the rows are split again before pooling.
pub fn encode_pair(
    g: &mut Graph,
    template: &PreparedCloud,
    search: &PreparedCloud,
    grid: &GridSpec,
    pnet: &PointNetParams,
    mode: BatchNormMode,
) -> Result<(PillarVars, PillarVars)> {
    let (nt, ns) = (template.decorated.pillar_of.len(), search.decorated.pillar_of.len());
    let mut data = template.decorated.features.data().to_vec();
    data.extend_from_slice(search.decorated.features.data());
    let x = g.constant(Tensor::new([nt + ns, DECORATED_DIM], data)?);
    let h = embed_points(g, x, pnet, mode)?;
    let mt = template.coords.len();
    let mut group_of = template.decorated.pillar_of.clone();
    group_of.extend(search.decorated.pillar_of.iter().map(|p| p + mt));
    let pooled = g.maxpool_set(h, &group_of, mt + search.coords.len())?;
    let tf = g.slice_rows(pooled, 0, mt)?;
    let sf = g.slice_rows(pooled, mt, mt + search.coords.len())?;
    Ok((
        PillarVars {
            coords: template.coords.clone(),
            centers: pillar_centers(&template.coords, grid),
            features: tf,
        },
        PillarVars {
            coords: search.coords.clone(),
            centers: pillar_centers(&search.coords, grid),
            features: sf,
        },
    ))
}

/// Resample, voxelize, decorate, embed (eval mode) and pool.
pub fn build_pillar_set<R: Rng + ?Sized>(
    store: &ParamStore,
    cloud: &[Point],
    grid: &GridSpec,
    pnet: &PointNetParams,
    target: usize,
    rng: &mut R,
) -> Result<PillarSet> {
    let pts = resample_points(cloud, target, rng)?;
    let prepared = prepare_cloud(&pts, grid)?;
    let mut g = Graph::new(store);
    let pv = encode_cloud(&mut g, &prepared, grid, pnet, BatchNormMode::Eval)?;
    Ok(PillarSet {
        coords: pv.coords,
        centers: pv.centers,
        features: g.value(pv.features).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_32_square() {
        let g = GridSpec::default();
        assert_eq!((g.nx, g.ny), (32, 32));
        assert_eq!(g.z_mid(), 0.0);
    }

    #[test]
    fn uneven_extent_rounds_up() {
        let g = GridSpec::new(0.3, (0.0, 1.0), (0.0, 0.3), (0.0, 1.0)).unwrap();
        assert_eq!((g.nx, g.ny), (4, 1));
    }

    #[test]
    fn resample_duplicates_single_point() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let out = resample_points(&[[1.0, 2.0, 3.0]], 4, &mut rng).unwrap();
        assert_eq!(out, vec![[1.0, 2.0, 3.0]; 4]);
    }

    #[test]
    fn single_point_at_cell_center_decorates_to_zero_offsets() {
        let grid = GridSpec::default();
        let [cx, cy] = grid.cell_center((10, 20));
        let vox = voxelize_dynamic(&[[cx, cy, 0.0]], &grid).unwrap();
        assert_eq!(vox.coords, vec![(10, 20)]);
        let d = decorate(&vox, &grid);
        assert_eq!(d.features.data(), &[cx, cy, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
