//! Numerical self-checks behind the `gradcheck` and `oracle` commands:
//! finite-difference checks of every differentiable operation, and
//! comparisons of the fast code paths against brute-force references.

use crate::config::Config;
use crate::error::{Result, TrackError};
use crate::geometry::{normalize_angle, ObjectState, Point};
use crate::localization::{decode_box, encode_targets, maps_from_targets, scatter_to_bev};
use crate::loss::total_loss;
use crate::metrics::{aggregate, iou3d, Score};
use crate::model::Network;
use crate::pillars::{decorate, encode_cloud, encode_pair, prepare_cloud, voxelize_dynamic, GridSpec};
use crate::siamese::forward;
use crate::synth::generate_tracklets;
use crate::tracker::{make_train_sample, SampleSpec};
use diffcore::{grad_check, BatchNormMode, DiffError, GradCheckOptions, Graph, ParamStore, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;

/// Outcome of one named check: `measured` is compared against `tolerance`
/// (an error bound, or a minimum for score-style checks).
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: Real,
    pub tolerance: Real,
    pub passed: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, measured: Real, tolerance: Real) -> Self {
        Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }

    pub fn at_most(name: impl Into<String>, measured: Real, tolerance: Real) -> Self {
        Check {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// A check with no numeric slack: `measured` counts mismatches.
    pub fn exact(name: impl Into<String>, mismatches: usize) -> Self {
        Check {
            name: name.into(),
            measured: mismatches as Real,
            tolerance: 0.0,
            passed: mismatches == 0,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:.3e} tolerance={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Uniform magnitudes in `[lo, hi)` with random signs, keeping every value
/// away from the kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v = rng.gen_range(lo..hi);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn to_diff(e: TrackError) -> DiffError {
    match e {
        TrackError::Diff(d) => d,
        other => DiffError::Dimension {
            op: "selfcheck",
            detail: other.to_string(),
        },
    }
}

const OP_TOLERANCE: Real = 1e-5;
const MODEL_TOLERANCE: Real = 1e-4;
const MIN_PROBES: usize = 20;
const MODEL_FLOOR: Real = 1e-4;

fn grad_entry<F>(name: &str, store: &mut ParamStore, f: F, tolerance: Real, probes: Option<usize>, seed: u64) -> Result<Check>
where
    F: Fn(&mut Graph) -> diffcore::Result<Var>,
{
    let opts = GradCheckOptions {
        probes,
        seed,
        ..GradCheckOptions::default()
    };
    grad_entry_with(name, store, f, tolerance, &opts)
}

fn grad_entry_with<F>(name: &str, store: &mut ParamStore, f: F, tolerance: Real, opts: &GradCheckOptions) -> Result<Check>
where
    F: Fn(&mut Graph) -> diffcore::Result<Var>,
{
    let report = grad_check(store, f, opts)?;
    let mut check = Check::below(format!("grad {name} ({} probes)", report.probes), report.max_rel_error, tolerance);
    if report.probes < MIN_PROBES {
        check.passed = false;
    }
    Ok(check)
}

/// Central-difference checks of every differentiable operation and of the
/// full one-sample training loss.
pub fn gradient_suite(seed: u64) -> Result<Vec<Check>> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    {
        let mut s = ParamStore::new();
        let x = s.add_param("x", random(&mut r, &[5, 3]))?;
        let w = s.add_param("w", random(&mut r, &[3, 4]))?;
        let b = s.add_param("b", random(&mut r, &[4]))?;
        let wts = random(&mut r, &[5, 4]).into_data();
        out.push(grad_entry(
            "linear",
            &mut s,
            |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.linear(x, w, b)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    for (name, act) in [("relu", 0), ("elu_plus_one", 1), ("sigmoid", 2)] {
        let mut s = ParamStore::new();
        let x = s.add_param("x", away_from_zero(&mut r, &[24], 0.05, 2.0))?;
        let wts = random(&mut r, &[24]).into_data();
        out.push(grad_entry(
            name,
            &mut s,
            |g| {
                let x = g.param(x);
                let y = match act {
                    0 => g.relu(x)?,
                    1 => g.elu_plus_one(x)?,
                    _ => g.sigmoid(x)?,
                };
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    for (name, mode) in [("batchnorm/train", BatchNormMode::Train), ("batchnorm/eval", BatchNormMode::Eval)] {
        let mut s = ParamStore::new();
        let x = s.add_param("x", random(&mut r, &[8, 4]))?;
        let gamma = s.add_param("gamma", random(&mut r, &[4]))?;
        let beta = s.add_param("beta", random(&mut r, &[4]))?;
        let rm = s.add_buffer("rm", random(&mut r, &[4]))?;
        let rv = s.add_buffer("rv", Tensor::from_fn([4], |_| r.gen_range(0.5..2.0)))?;
        let wts = random(&mut r, &[8, 4]).into_data();
        out.push(grad_entry(
            name,
            &mut s,
            |g| {
                let (x, ga, be) = (g.param(x), g.param(gamma), g.param(beta));
                let y = g.batchnorm(x, ga, be, rm, rv, mode, 1e-5, 0.1)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        // distinct values on a coarse lattice keep every group maximum
        // separated from its runner-up by far more than the FD step
        let (n, c, groups) = (24, 4, 5);
        let mut vals: Vec<Real> = (0..n * c).map(|i| i as Real * 0.01).collect();
        vals.shuffle(&mut r);
        let mut s = ParamStore::new();
        let x = s.add_param("x", Tensor::new([n, c], vals)?)?;
        let group_of: Vec<usize> = (0..n).map(|i| (i * 7) % groups).collect();
        let wts = random(&mut r, &[groups, c]).into_data();
        out.push(grad_entry(
            "maxpool_set",
            &mut s,
            |g| {
                let x = g.param(x);
                let y = g.maxpool_set(x, &group_of, groups)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        let mut s = ParamStore::new();
        let x = s.add_param("x", random(&mut r, &[2, 6, 6]))?;
        let w = s.add_param("w", random(&mut r, &[3, 2, 3, 3]))?;
        let b = s.add_param("b", random(&mut r, &[3]))?;
        let wts = random(&mut r, &[3, 6, 6]).into_data();
        out.push(grad_entry(
            "conv2d_3x3",
            &mut s,
            |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.conv3x3(x, w, b)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        let grid = GridSpec::new(1.0, (0.0, 5.0), (0.0, 4.0), (-1.0, 1.0))?;
        let coords = vec![(0, 0), (3, 0), (1, 1), (4, 2), (2, 3), (0, 3), (4, 3)];
        let mut s = ParamStore::new();
        let x = s.add_param("x", random(&mut r, &[coords.len(), 3]))?;
        let wts = random(&mut r, &[3, grid.ny, grid.nx]).into_data();
        out.push(grad_entry(
            "scatter_to_bev",
            &mut s,
            |g| {
                let x = g.param(x);
                let y = scatter_to_bev(g, x, &coords, &grid).map_err(to_diff)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        let mut s = ParamStore::new();
        let q = s.add_param("q", random(&mut r, &[6, 4]))?;
        let k = s.add_param("k", random(&mut r, &[5, 4]))?;
        let v = s.add_param("v", random(&mut r, &[5, 3]))?;
        let wts = random(&mut r, &[6, 3]).into_data();
        out.push(grad_entry(
            "linear_attention",
            &mut s,
            |g| {
                let (q, k, v) = (g.param(q), g.param(k), g.param(v));
                let y = g.linear_attention(q, k, v)?;
                g.dot_const(y, &wts)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        let target = Tensor::from_fn([1, 8, 8], |f| {
            let (di, dj) = ((f % 8) as Real - 3.0, (f / 8) as Real - 4.0);
            (-(di * di + dj * dj) / 2.0).exp()
        });
        let mut s = ParamStore::new();
        let p = s.add_param("p", Tensor::from_fn([1, 8, 8], |_| r.gen_range(0.05..0.95)))?;
        out.push(grad_entry(
            "focal_loss",
            &mut s,
            |g| {
                let p = g.param(p);
                g.focal_loss(p, &target)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    {
        let target: Vec<Real> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
        let gap = away_from_zero(&mut r, &[24], 0.05, 1.0);
        let start: Vec<Real> = target.iter().zip(gap.data()).map(|(t, d)| t + d).collect();
        let mut s = ParamStore::new();
        let p = s.add_param("p", Tensor::new([24], start)?)?;
        out.push(grad_entry(
            "l1_loss",
            &mut s,
            |g| {
                let p = g.param(p);
                g.l1_loss(p, &target)
            },
            OP_TOLERANCE,
            None,
            seed,
        )?);
    }

    out.push(full_model_gradient(seed)?);
    Ok(out)
}

fn small_config() -> Config {
    Config {
        feature_dim: 6,
        template_points: 64,
        search_points: 128,
        ..Config::default()
    }
}

/// Gradient check of the complete training loss (pillar encoder, both
/// stages, main and deep-supervision heads) on one synthetic sample.
pub fn full_model_gradient(seed: u64) -> Result<Check> {
    let cfg = small_config();
    let mut store = ParamStore::new();
    let net = Network::new(cfg.network(), &mut store, seed)?;
    // Zero-initialized biases over empty BEV cells put whole maps of ReLU
    // inputs exactly on the kink; a small jitter moves the check to a point
    // where the loss is differentiable.
    let mut r = rng(seed ^ 0x7177);
    for p in store.params_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.05..0.05));
    }
    let sample = one_sample(&cfg, seed)?;
    let grid = *net.grid();
    let tc = prepare_cloud(&sample.0, &grid)?;
    let sc = prepare_cloud(&sample.1, &grid)?;
    let targets = encode_targets(&sample.2, &grid);
    let weights = cfg.loss_weights();
    // The loss is of order 10, so central differences carry roundoff of
    // about 1e-10; gradients below the floor are compared absolutely.
    let opts = GradCheckOptions {
        probes: Some(60),
        floor: MODEL_FLOOR,
        seed,
        ..GradCheckOptions::default()
    };
    grad_entry_with(
        "full model loss",
        &mut store,
        |g| {
            let (tv, sv) = encode_pair(g, &tc, &sc, &grid, &net.pnet, BatchNormMode::Train).map_err(to_diff)?;
            let outputs = forward(g, &net, &tv, &sv).map_err(to_diff)?;
            let (loss, _) = total_loss(g, &net, &outputs, &sv.coords, &targets, &weights).map_err(to_diff)?;
            Ok(loss)
        },
        MODEL_TOLERANCE,
        &opts,
    )
}

/// Template cloud, search cloud and local ground truth of one training pair.
fn one_sample(cfg: &Config, seed: u64) -> Result<(Vec<Point>, Vec<Point>, ObjectState)> {
    let mut synth = cfg.synth();
    synth.tracklets = 1;
    synth.frames = 2;
    let tr = generate_tracklets(&synth, seed, "check");
    let frames = &tr[0].frames;
    let spec: SampleSpec = cfg.sample_spec();
    let s = make_train_sample(&frames[0], &frames[1], &frames[0], &spec, &mut rng(seed ^ 0x5eed))?;
    Ok((s.template_points, s.search_points, s.gt_local))
}

/// Direct `O(N_q N_k)` evaluation of linear attention.
pub fn naive_linear_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<Real> {
    let phi = |x: Real| if x >= 0.0 { x + 1.0 } else { x.exp() };
    let (nq, nk, c, cv) = (q.dim(0), k.dim(0), q.dim(1), v.dim(1));
    let mut out = vec![0.0; nq * cv];
    for i in 0..nq {
        let mut denom = 0.0;
        let mut num = vec![0.0; cv];
        for j in 0..nk {
            let sim: Real = (0..c).map(|d| phi(q.row(i)[d]) * phi(k.row(j)[d])).sum();
            denom += sim;
            for (n, vv) in num.iter_mut().zip(v.row(j)) {
                *n += sim * vv;
            }
        }
        for (o, n) in out[i * cv..(i + 1) * cv].iter_mut().zip(num) {
            *o = n / (denom + 1e-8);
        }
    }
    out
}

/// Reordered linear attention against the quadratic definition.
pub fn attention_oracle(seed: u64, instances: usize) -> Result<Check> {
    let mut r = rng(seed);
    let store = ParamStore::new();
    let mut worst: Real = 0.0;
    for _ in 0..instances {
        let (nq, nk, c) = (r.gen_range(1..=64), r.gen_range(1..=64), r.gen_range(1..=32));
        let q = random(&mut r, &[nq, c]);
        let k = random(&mut r, &[nk, c]);
        let v = random(&mut r, &[nk, c]);
        let expected = naive_linear_attention(&q, &k, &v);
        let mut g = Graph::new(&store);
        let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
        let y = g.linear_attention(qv, kv, vv)?;
        for (a, b) in g.value(y).data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(Check::at_most(
        format!("attention reordered vs quadratic ({instances} instances)"),
        worst,
        1e-10,
    ))
}

fn random_cloud(r: &mut ChaCha8Rng, grid: &GridSpec) -> Vec<Point> {
    let n = r.gen_range(1..400);
    // a margin outside the grid exercises the range filter
    (0..n)
        .map(|_| {
            [
                r.gen_range(grid.x_min - 0.5..grid.x_max + 0.5),
                r.gen_range(grid.y_min - 0.5..grid.y_max + 0.5),
                r.gen_range(grid.z_min - 0.3..grid.z_max + 0.3),
            ]
        })
        .collect()
}

/// Brute-force grouping and decoration against `voxelize_dynamic` and
/// `decorate`, plus eval-mode permutation invariance of the pillar features.
pub fn pillar_oracle(seed: u64, clouds: usize) -> Result<Vec<Check>> {
    let mut r = rng(seed);
    let grid = GridSpec::default();
    let (mut index_mismatch, mut worst): (usize, Real) = (0, 0.0);
    let mut perm_mismatch = 0;
    let cfg = Config {
        feature_dim: 16,
        ..Config::default()
    };
    let mut store = ParamStore::new();
    let net = Network::new(cfg.network(), &mut store, seed)?;
    // non-trivial running statistics
    let c = cfg.feature_dim;
    for (name, f) in [
        ("pnet.bn.running_mean", (|i| 0.1 * i as Real - 0.5) as fn(usize) -> Real),
        ("pnet.bn.running_var", |i| 0.5 + 0.05 * i as Real),
    ] {
        let id = store.find_buffer(name).expect("network registers its batchnorm buffers");
        store.buffer_mut(id).tensor = Tensor::from_fn([c], f);
    }

    for _ in 0..clouds {
        let mut cloud = random_cloud(&mut r, &grid);
        // duplicate a few points so some pillars hold repeated values
        for k in 0..cloud.len().min(5) {
            cloud.push(cloud[k]);
        }
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut kept = Vec::new();
        for p in &cloud {
            let inside = p[0] >= grid.x_min
                && p[0] < grid.x_max
                && p[1] >= grid.y_min
                && p[1] < grid.y_max
                && p[2] >= grid.z_min
                && p[2] < grid.z_max;
            if inside {
                let i = ((p[0] - grid.x_min) / grid.cell).floor() as usize;
                let j = ((p[1] - grid.y_min) / grid.cell).floor() as usize;
                groups.entry((j, i)).or_default().push(kept.len());
                kept.push(*p);
            }
        }
        let vox = match voxelize_dynamic(&cloud, &grid) {
            Ok(v) => v,
            Err(TrackError::EmptyRegion(_)) if kept.is_empty() => continue,
            Err(e) => return Err(e),
        };
        let oracle_coords: Vec<(usize, usize)> = groups.keys().map(|&(j, i)| (i, j)).collect();
        if vox.coords != oracle_coords || vox.points != kept {
            index_mismatch += 1;
            continue;
        }
        let mut oracle_pillar = vec![usize::MAX; kept.len()];
        for (row, members) in groups.values().enumerate() {
            for &m in members {
                oracle_pillar[m] = row;
            }
        }
        if vox.pillar_of != oracle_pillar {
            index_mismatch += 1;
            continue;
        }
        let dec = decorate(&vox, &grid);
        for (&(j, i), members) in &groups {
            let n = members.len() as Real;
            let mean: Vec<Real> = (0..3).map(|a| members.iter().map(|&m| kept[m][a]).sum::<Real>() / n).collect();
            let cx = grid.x_min + (i as Real + 0.5) * grid.cell;
            let cy = grid.y_min + (j as Real + 0.5) * grid.cell;
            for &m in members {
                let p = kept[m];
                let expected = [
                    p[0],
                    p[1],
                    p[2],
                    p[0] - mean[0],
                    p[1] - mean[1],
                    p[2] - mean[2],
                    p[0] - cx,
                    p[1] - cy,
                    p[2] - grid.z_mid(),
                ];
                for (a, b) in dec.features.row(m).iter().zip(expected) {
                    worst = worst.max((a - b).abs());
                }
            }
        }

        let mut shuffled = cloud.clone();
        shuffled.shuffle(&mut r);
        let (a, b) = (prepare_cloud(&cloud, &grid)?, prepare_cloud(&shuffled, &grid)?);
        let mut g = Graph::new(&store);
        let fa = encode_cloud(&mut g, &a, &grid, &net.pnet, BatchNormMode::Eval)?;
        let fb = encode_cloud(&mut g, &b, &grid, &net.pnet, BatchNormMode::Eval)?;
        if fa.coords != fb.coords || g.value(fa.features).data() != g.value(fb.features).data() {
            perm_mismatch += 1;
        }
    }
    Ok(vec![
        Check::exact(format!("pillar grouping vs brute force ({clouds} clouds)"), index_mismatch),
        Check::at_most("pillar decoration vs per-pillar mean oracle", worst, 1e-12),
        Check::exact("pillar features invariant to point order (eval)", perm_mismatch),
    ])
}

/// Monte-Carlo estimate of the 3D IoU: uniform samples in `a`, tested
/// against `b`.
pub fn monte_carlo_iou(a: &ObjectState, b: &ObjectState, samples: usize, seed: u64) -> Real {
    let mut r = rng(seed);
    let (sa, ca) = a.theta.sin_cos();
    let (sb, cb) = b.theta.sin_cos();
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = r.gen_range(-0.5..0.5) * a.l;
        let v = r.gen_range(-0.5..0.5) * a.w;
        let z = a.z + r.gen_range(-0.5..0.5) * a.h;
        let (x, y) = (a.x + ca * u - sa * v, a.y + sa * u + ca * v);
        let (dx, dy) = (x - b.x, y - b.y);
        let (lu, lv) = (cb * dx + sb * dy, -sb * dx + cb * dy);
        if lu.abs() <= b.l / 2.0 && lv.abs() <= b.w / 2.0 && (z - b.z).abs() <= b.h / 2.0 {
            hits += 1;
        }
    }
    let inter = hits as Real / samples as Real * a.volume();
    inter / (a.volume() + b.volume() - inter)
}

pub fn iou_oracle(seed: u64, pairs: usize, samples: usize) -> Vec<Check> {
    let a = ObjectState::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
    let b = ObjectState { x: 0.5, ..a };
    let closed = iou3d(&a, &b);
    let mut closed_check = Check::exact("iou unit cubes offset 0.5 equals 1/3", usize::from(closed != 1.0 / 3.0));
    closed_check.measured = (closed - 1.0 / 3.0).abs();

    let mut r = rng(seed);
    let boxes: Vec<(ObjectState, ObjectState, u64)> = (0..pairs)
        .map(|_| {
            let mut draw = |cx: Real, cy: Real| {
                ObjectState::new(
                    cx + r.gen_range(-1.0..1.0),
                    cy + r.gen_range(-1.0..1.0),
                    r.gen_range(-0.5..0.5),
                    r.gen_range(0.5..2.5),
                    r.gen_range(0.5..5.0),
                    r.gen_range(0.5..2.0),
                    r.gen_range(-3.2..3.2),
                )
            };
            let a = draw(0.0, 0.0);
            let b = draw(a.x, a.y);
            (a, b, r.gen())
        })
        .collect();
    let worst = boxes
        .par_iter()
        .map(|(a, b, s)| (iou3d(a, b) - monte_carlo_iou(a, b, samples, *s)).abs())
        .reduce(|| 0.0, Real::max);
    vec![
        closed_check,
        Check::below(format!("iou vs Monte-Carlo ({pairs} pairs, {samples} samples)"), worst, 5e-3),
    ]
}

fn accumulate(g: &Graph, terms: &[Var]) -> Vec<Real> {
    let mut acc = g.value(terms[0]).data().to_vec();
    for t in &terms[1..] {
        for (a, v) in acc.iter_mut().zip(g.value(*t).data()) {
            *a += v;
        }
    }
    acc
}

/// Dense-connection bookkeeping, loss recomposition and the target
/// encode/decode round trip.
pub fn structural_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let cfg = Config {
        stages: 3,
        ..small_config()
    };
    let mut store = ParamStore::new();
    let net = Network::new(cfg.network(), &mut store, seed)?;
    let (tp, sp, gt_local) = one_sample(&cfg, seed)?;
    let grid = *net.grid();
    let (tc, sc) = (prepare_cloud(&tp, &grid)?, prepare_cloud(&sp, &grid)?);
    let mut g = Graph::new(&store);
    let (tv, sv) = encode_pair(&mut g, &tc, &sc, &grid, &net.pnet, BatchNormMode::Train)?;
    let o = forward(&mut g, &net, &tv, &sv)?;
    let mut stage_mismatch = 0;
    for i in 0..cfg.stages {
        let mut terms = vec![o.search_initial];
        terms.extend_from_slice(&o.search_per_stage[..i]);
        if g.value(o.search_stage_inputs[i]).data() != accumulate(&g, &terms).as_slice() {
            stage_mismatch += 1;
        }
    }
    out.push(Check::exact("dense stage inputs equal accumulated outputs", stage_mismatch));
    let mut terms = vec![o.search_initial];
    terms.extend_from_slice(&o.search_per_stage);
    let loc_ok = g.value(o.search_loc_input).data() == accumulate(&g, &terms).as_slice();
    out.push(Check::exact("localization input equals initial plus all stages", usize::from(!loc_ok)));

    let w = cfg.loss_weights();
    let targets = encode_targets(&gt_local, &grid);
    let (_, b) = total_loss(&mut g, &net, &o, &sv.coords, &targets, &w)?;
    let main = (b.l_center + b.l_offrot) * w.lambda1 + b.l_z * w.lambda2;
    let mut deep = b.l_deep[0];
    for d in &b.l_deep[1..] {
        deep += d;
    }
    let fin = main + deep * w.alpha;
    out.push(Check::exact(
        "loss recomposition (lambda1 = 1, lambda2 = 2, alpha = 0.1)",
        usize::from(b.l_main != main) + usize::from(b.l_final != fin) + usize::from(b.l_deep.len() != cfg.stages - 1),
    ));

    out.push(round_trip_check(seed, 1000, &grid));
    Ok(out)
}

/// Random world boxes near random references: canonicalize, encode, feed the
/// targets back as head maps and decode.
pub fn round_trip_check(seed: u64, trials: usize, grid: &GridSpec) -> Check {
    let mut r = rng(seed);
    let mut worst: Real = 0.0;
    let margin = 0.5;
    for _ in 0..trials {
        let reference = ObjectState::new(
            r.gen_range(-50.0..50.0),
            r.gen_range(-50.0..50.0),
            r.gen_range(-2.0..2.0),
            1.9,
            4.5,
            1.6,
            r.gen_range(-3.2..3.2),
        );
        let local = ObjectState::new(
            r.gen_range(grid.x_min + margin..grid.x_max - margin),
            r.gen_range(grid.y_min + margin..grid.y_max - margin),
            r.gen_range(-1.0..1.0),
            r.gen_range(0.5..3.0),
            r.gen_range(0.5..6.0),
            r.gen_range(0.5..2.5),
            r.gen_range(-3.2..3.2),
        );
        let gt = reference.state_from_local(&local);
        let targets = encode_targets(&reference.state_to_local(&gt), grid);
        let decoded = decode_box(&maps_from_targets(&targets, grid), grid, &reference, &gt);
        let err = [
            (decoded.x - gt.x).abs(),
            (decoded.y - gt.y).abs(),
            (decoded.z - gt.z).abs(),
            normalize_angle(decoded.theta - gt.theta).abs(),
        ];
        worst = err.iter().fold(worst, |m, e| m.max(*e));
    }
    Check::below(format!("encode/decode round trip ({trials} states)"), worst, 1e-9)
}

/// Per-class values of the reference method and their frame counts; the
/// frame-weighted mean must reproduce the printed mean row.
pub const REFERENCE_TABLE: [(&str, Real, Real, usize); 4] = [
    ("car", 73.6, 84.7, 6424),
    ("pedestrian", 56.8, 83.7, 6088),
    ("van", 62.6, 74.4, 1248),
    ("cyclist", 41.4, 54.6, 308),
];
pub const REFERENCE_MEAN: (Real, Real) = (64.6, 82.7);

pub fn aggregation_check() -> Vec<Check> {
    let scores: Vec<Score> = REFERENCE_TABLE
        .iter()
        .map(|&(_, success, precision, frames)| Score {
            success,
            precision,
            frames,
        })
        .collect();
    let mean = aggregate(&scores).expect("non-empty table");
    vec![
        Check::at_most(
            format!("frame-weighted mean success {:.2}", mean.success),
            (mean.success - REFERENCE_MEAN.0).abs(),
            0.1,
        ),
        Check::at_most(
            format!("frame-weighted mean precision {:.2}", mean.precision),
            (mean.precision - REFERENCE_MEAN.1).abs(),
            0.1,
        ),
    ]
}

/// Every brute-force comparison at full size.
pub fn oracle_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = vec![attention_oracle(seed, 100)?];
    out.extend(pillar_oracle(seed, 50)?);
    out.extend(iou_oracle(seed, 200, 1_000_000));
    out.extend(structural_checks(seed)?);
    out.extend(aggregation_check());
    Ok(out)
}
