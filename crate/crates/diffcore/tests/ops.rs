use diffcore::{
    grad_check, BatchNormMode, GradCheckOptions, Graph, ParamStore, Real, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn t2(rows: &[&[Real]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<Real> {
    let (n, k, m) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i * m + j] += a.data()[i * k + p] * b.data()[p * m + j];
            }
        }
    }
    out
}

fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> diffcore::Result<Var>, tol: Real) {
    let opts = GradCheckOptions::default();
    let r = grad_check(store, f, &opts).unwrap();
    assert!(r.probes >= 20, "only {} probes", r.probes);
    assert!(r.max_rel_error < tol, "max rel err {} at {:?}", r.max_rel_error, r.worst);
}

// ------------------------------------------------------------------ linear

#[test]
fn linear_identity_and_zero_weight() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(t2(&[&[1.0, 2.0]]));
    let eye = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let zero_b = g.constant(Tensor::zeros([2]));
    let y = g.linear(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let zw = g.constant(Tensor::zeros([2, 2]));
    let b = g.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
    let y = g.linear(x, zw, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = rng(1);
    let (x, w) = (random(&mut r, &[5, 3]), random(&mut r, &[3, 2]));
    let b = random(&mut r, &[2]);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.linear(xv, wv, bv).unwrap();
    let mut want = naive_matmul(&x, &w);
    for row in want.chunks_exact_mut(2) {
        row[0] += b.data()[0];
        row[1] += b.data()[1];
    }
    for (a, e) in g.value(y).data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn linear_shape_mismatch_is_dimension_error() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros([2, 3]));
    let w = g.constant(Tensor::zeros([2, 2]));
    let err = g.matmul(x, w).unwrap_err();
    assert!(matches!(err, diffcore::DiffError::Dimension { .. }));
}

#[test]
fn linear_gradient() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let x = store.add_param("x", random(&mut r, &[4, 3])).unwrap();
    let w = store.add_param("w", random(&mut r, &[3, 5])).unwrap();
    let b = store.add_param("b", random(&mut r, &[5])).unwrap();
    let weights = random(&mut r, &[4, 5]).into_data();
    check(
        &mut store,
        |g| {
            let (x, w, b) = (g.param(x), g.param(w), g.param(b));
            let y = g.linear(x, w, b)?;
            g.dot_const(y, &weights)
        },
        1e-7,
    );
}

#[test]
fn sum_of_linear_gradient_self_test() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let x = store.add_param("x", random(&mut r, &[3, 4])).unwrap();
    let w = store.add_param("w", random(&mut r, &[4, 2])).unwrap();
    let b = store.add_param("b", random(&mut r, &[2])).unwrap();
    check(
        &mut store,
        |g| {
            let (x, w, b) = (g.param(x), g.param(w), g.param(b));
            let y = g.linear(x, w, b)?;
            g.sum(y)
        },
        1e-7,
    );
}

// ------------------------------------------------------------- activations

#[test]
fn activation_values() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let e = g.elu_plus_one(x).unwrap();
    assert_eq!(g.value(e).data()[1], 1.0);
    assert_eq!(g.value(e).data()[2], 3.0);
    assert!((g.value(e).data()[0] - (-1.0 as Real).exp()).abs() < 1e-15);
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).data()[1], 0.5);
}

#[test]
fn elu_plus_one_is_strictly_positive() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::new([4], vec![-30.0, -5.0, 0.0, 7.0]).unwrap());
    let e = g.elu_plus_one(x).unwrap();
    assert!(g.value(e).data().iter().all(|&v| v > 0.0));
}

#[test]
fn activation_gradients() {
    let mut r = rng(4);
    // keep probes away from the relu/elu kink at zero
    let vals: Vec<Real> = (0..20)
        .map(|_| {
            let v: Real = r.gen_range(0.05..2.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let weights: Vec<Real> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
    for act in 0..3 {
        let mut store = ParamStore::new();
        let x = store.add_param("x", Tensor::new([20], vals.clone()).unwrap()).unwrap();
        check(
            &mut store,
            |g| {
                let x = g.param(x);
                let y = match act {
                    0 => g.relu(x)?,
                    1 => g.elu_plus_one(x)?,
                    _ => g.sigmoid(x)?,
                };
                g.dot_const(y, &weights)
            },
            1e-6,
        );
    }
}

// -------------------------------------------------------------- batch norm

fn bn_store(c: usize, gamma: Tensor, beta: Tensor) -> (ParamStore, [diffcore::ParamId; 2], [diffcore::BufferId; 2]) {
    let mut s = ParamStore::new();
    let g = s.add_param("gamma", gamma).unwrap();
    let b = s.add_param("beta", beta).unwrap();
    let rm = s.add_buffer("rm", Tensor::zeros([c])).unwrap();
    let rv = s.add_buffer("rv", Tensor::full([c], 1.0)).unwrap();
    (s, [g, b], [rm, rv])
}

#[test]
fn batchnorm_standardized_input_is_unchanged() {
    // columns with mean 0 and biased variance 1
    let x = t2(&[&[1.0, -1.0], &[-1.0, 1.0], &[1.0, 1.0], &[-1.0, -1.0]]);
    let (s, [ga, be], [rm, rv]) = bn_store(2, Tensor::full([2], 1.0), Tensor::zeros([2]));
    let mut g = Graph::new(&s);
    let xv = g.constant(x.clone());
    let (ga, be) = (g.param(ga), g.param(be));
    let y = g.batchnorm(xv, ga, be, rm, rv, BatchNormMode::Train, 1e-5, 0.1).unwrap();
    assert!(g.value(y).max_abs_diff(&x) < 1e-5);
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut r = rng(5);
    let x = random(&mut r, &[6, 3]);
    let beta = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
    let (s, [ga, be], [rm, rv]) = bn_store(3, Tensor::zeros([3]), beta.clone());
    let mut g = Graph::new(&s);
    let xv = g.constant(x);
    let (ga, be) = (g.param(ga), g.param(be));
    let y = g.batchnorm(xv, ga, be, rm, rv, BatchNormMode::Train, 1e-5, 0.1).unwrap();
    for row in g.value(y).data().chunks_exact(3) {
        assert_eq!(row, beta.data());
    }
}

#[test]
fn batchnorm_matches_two_pass_oracle_and_updates_running_stats() {
    let mut r = rng(6);
    let (n, c) = (8, 4);
    let x = random(&mut r, &[n, c]);
    let gamma = random(&mut r, &[c]);
    let beta = random(&mut r, &[c]);
    let (mut s, [ga, be], [rm, rv]) = bn_store(c, gamma.clone(), beta.clone());
    let update = {
        let mut g = Graph::new(&s);
        let xv = g.constant(x.clone());
        let (gav, bev) = (g.param(ga), g.param(be));
        let y = g.batchnorm(xv, gav, bev, rm, rv, BatchNormMode::Train, 1e-5, 0.1).unwrap();
        for j in 0..c {
            let col: Vec<Real> = (0..n).map(|i| x.data()[i * c + j]).collect();
            let mean = col.iter().sum::<Real>() / n as Real;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / n as Real;
            for i in 0..n {
                let want = gamma.data()[j] * (col[i] - mean) / (var + 1e-5).sqrt() + beta.data()[j];
                assert!((g.value(y).data()[i * c + j] - want).abs() < 1e-10);
            }
        }
        g.take_stat_updates()
    };
    assert_eq!(update.len(), 1);
    update[0].apply(&mut s);
    let col0: Vec<Real> = (0..n).map(|i| x.data()[i * c]).collect();
    let mean0 = col0.iter().sum::<Real>() / n as Real;
    assert!((s.buffer(rm).tensor.data()[0] - 0.1 * mean0).abs() < 1e-12);
}

#[test]
fn batchnorm_single_row_train_is_finite() {
    let (s, [ga, be], [rm, rv]) = bn_store(2, Tensor::full([2], 1.0), Tensor::zeros([2]));
    let mut g = Graph::new(&s);
    let xv = g.constant(t2(&[&[3.0, -2.0]]));
    let (ga, be) = (g.param(ga), g.param(be));
    let y = g.batchnorm(xv, ga, be, rm, rv, BatchNormMode::Train, 1e-5, 0.1).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
        let mut r = rng(7);
        let (mut s, [ga, be], [rm, rv]) = bn_store(3, random(&mut r, &[3]), random(&mut r, &[3]));
        let x = s.add_param("x", random(&mut r, &[6, 3])).unwrap();
        s.assign("rm", &[0.1, -0.2, 0.3]).unwrap();
        s.assign("rv", &[0.5, 1.5, 2.0]).unwrap();
        let weights = random(&mut r, &[6, 3]).into_data();
        check(
            &mut s,
            |g| {
                let (xv, gav, bev) = (g.param(x), g.param(ga), g.param(be));
                let y = g.batchnorm(xv, gav, bev, rm, rv, mode, 1e-5, 0.1)?;
                g.dot_const(y, &weights)
            },
            1e-6,
        );
    }
}

// ------------------------------------------------------------- maxpool set

#[test]
fn maxpool_small_cases() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(t2(&[&[1.0, 5.0], &[3.0, 2.0]]));
    let single = g.maxpool_set(x, &[0, 1], 2).unwrap();
    assert_eq!(g.value(single).data(), &[1.0, 5.0, 3.0, 2.0]);
    let merged = g.maxpool_set(x, &[0, 0], 1).unwrap();
    assert_eq!(g.value(merged).data(), &[3.0, 5.0]);
}

#[test]
fn maxpool_empty_group_is_rejected() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(t2(&[&[1.0], &[2.0]]));
    assert!(g.maxpool_set(x, &[0, 0], 2).is_err());
}

#[test]
fn maxpool_matches_brute_force_scan() {
    let mut r = rng(8);
    let (n, c, groups) = (50, 8, 7);
    let x = random(&mut r, &[n, c]);
    let mut group_of: Vec<usize> = (0..n).map(|i| i % groups).collect();
    for i in (1..n).rev() {
        group_of.swap(i, r.gen_range(0..=i));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let y = g.maxpool_set(xv, &group_of, groups).unwrap();
    for gi in 0..groups {
        for j in 0..c {
            let want = (0..n)
                .filter(|&i| group_of[i] == gi)
                .map(|i| x.data()[i * c + j])
                .fold(Real::NEG_INFINITY, Real::max);
            assert_eq!(g.value(y).data()[gi * c + j], want);
        }
    }
}

#[test]
fn maxpool_backward_routes_to_argmax_only() {
    let mut r = rng(9);
    let (n, c, groups) = (30, 5, 4);
    let mut s = ParamStore::new();
    let x = s.add_param("x", random(&mut r, &[n, c])).unwrap();
    let group_of: Vec<usize> = (0..n).map(|i| (i * 7) % groups).collect();
    let grads = {
        let mut g = Graph::new(&s);
        let xv = g.param(x);
        let y = g.maxpool_set(xv, &group_of, groups).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap()
    };
    let gx = grads.get(x).unwrap();
    for gi in 0..groups {
        let nonzero = (0..n)
            .filter(|&i| group_of[i] == gi)
            .flat_map(|i| gx.row(i).iter().filter(|v| **v != 0.0))
            .count();
        assert!(nonzero <= c);
    }
    assert_eq!(gx.data().iter().sum::<Real>(), (groups * c) as Real);

    let weights = random(&mut r, &[groups, c]).into_data();
    check(
        &mut s,
        |g| {
            let xv = g.param(x);
            let y = g.maxpool_set(xv, &group_of, groups)?;
            g.dot_const(y, &weights)
        },
        1e-6,
    );
}

#[test]
fn maxpool_ties_prefer_lowest_row() {
    let mut s = ParamStore::new();
    let x = s.add_param("x", t2(&[&[2.0], &[2.0], &[1.0]])).unwrap();
    let mut g = Graph::new(&s);
    let xv = g.param(x);
    let y = g.maxpool_set(xv, &[0, 0, 0], 1).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    drop(g);
    s.clear_grads();
}

// -------------------------------------------------------------- conv 3x3

fn naive_conv3x3(x: &Tensor, w: &Tensor, b: &[Real]) -> Vec<Real> {
    let (ci, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
    let co = w.dim(0);
    let mut out = vec![0.0; co * h * wd];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[o];
                for c in 0..ci {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((o * ci + c) * 3 + ky) * 3 + kx]
                                * x.data()[(c * h + sy as usize) * wd + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_identity_kernel() {
    let mut r = rng(10);
    let x = random(&mut r, &[1, 4, 5]);
    let mut w = Tensor::zeros([1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w), g.constant(Tensor::zeros([1])));
    let y = g.conv3x3(xv, wv, bv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_ones_kernel_on_one_hot() {
    let mut x = Tensor::zeros([1, 5, 5]);
    x.data_mut()[2 * 5 + 2] = 1.0;
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let xv = g.constant(x);
    let wv = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
    let bv = g.constant(Tensor::zeros([1]));
    let y = g.conv3x3(xv, wv, bv).unwrap();
    for yy in 0..5 {
        for xx in 0..5 {
            let want = if (1..=3).contains(&yy) && (1..=3).contains(&xx) { 1.0 } else { 0.0 };
            assert_eq!(g.value(y).data()[yy * 5 + xx], want);
        }
    }
}

#[test]
fn conv_matches_naive_loops() {
    let mut r = rng(11);
    let x = random(&mut r, &[2, 6, 6]);
    let w = random(&mut r, &[3, 2, 3, 3]);
    let b = random(&mut r, &[3]);
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv3x3(xv, wv, bv).unwrap();
    let want = naive_conv3x3(&x, &w, b.data());
    for (a, e) in g.value(y).data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_gradients() {
    let mut r = rng(12);
    let mut s = ParamStore::new();
    let x = s.add_param("x", random(&mut r, &[2, 4, 5])).unwrap();
    let w = s.add_param("w", random(&mut r, &[3, 2, 3, 3])).unwrap();
    let b = s.add_param("b", random(&mut r, &[3])).unwrap();
    let weights = random(&mut r, &[3, 4, 5]).into_data();
    check(
        &mut s,
        |g| {
            let (x, w, b) = (g.param(x), g.param(w), g.param(b));
            let y = g.conv3x3(x, w, b)?;
            g.dot_const(y, &weights)
        },
        1e-7,
    );
}

#[test]
fn conv1x1_gradients_and_values() {
    let mut r = rng(13);
    let mut s = ParamStore::new();
    let x = s.add_param("x", random(&mut r, &[3, 2, 4])).unwrap();
    let w = s.add_param("w", random(&mut r, &[2, 3])).unwrap();
    let b = s.add_param("b", random(&mut r, &[2])).unwrap();
    {
        let mut g = Graph::new(&s);
        let (xv, wv, bv) = (g.param(x), g.param(w), g.param(b));
        let y = g.conv1x1(xv, wv, bv).unwrap();
        let (xt, wt, bt) = (&s.param(x).tensor, &s.param(w).tensor, &s.param(b).tensor);
        for o in 0..2 {
            for p in 0..8 {
                let want: Real = bt.data()[o] + (0..3).map(|c| wt.data()[o * 3 + c] * xt.data()[c * 8 + p]).sum::<Real>();
                assert!((g.value(y).data()[o * 8 + p] - want).abs() < 1e-12);
            }
        }
    }
    let weights = random(&mut r, &[2, 2, 4]).into_data();
    check(
        &mut s,
        |g| {
            let (x, w, b) = (g.param(x), g.param(w), g.param(b));
            let y = g.conv1x1(x, w, b)?;
            g.dot_const(y, &weights)
        },
        1e-7,
    );
}

// ---------------------------------------------------------- scatter/gather

#[test]
fn scatter_select_round_trip_and_gradient() {
    let mut r = rng(14);
    let mut s = ParamStore::new();
    let x = s.add_param("x", random(&mut r, &[8, 3])).unwrap();
    let cells = [0usize, 7, 3, 19, 11, 4, 15, 8];
    {
        let mut g = Graph::new(&s);
        let xv = g.param(x);
        let bev = g.scatter_rows(xv, &cells, 4, 5).unwrap();
        let total: Real = g.value(bev).data().iter().sum();
        let src: Real = s.param(x).tensor.data().iter().sum();
        assert!((total - src).abs() < 1e-12);
        for (m, &cell) in cells.iter().enumerate() {
            let v = g.select_cell(bev, cell).unwrap();
            assert_eq!(g.value(v).data(), s.param(x).tensor.row(m));
        }
        assert!(g.scatter_rows(xv, &[0, 0, 1, 2, 3, 5, 6, 9], 4, 5).is_err());
    }
    let weights = random(&mut r, &[3, 4, 5]).into_data();
    check(
        &mut s,
        |g| {
            let xv = g.param(x);
            let bev = g.scatter_rows(xv, &cells, 4, 5)?;
            g.dot_const(bev, &weights)
        },
        1e-7,
    );
    let w2 = random(&mut r, &[3]).into_data();
    check(
        &mut s,
        |g| {
            let xv = g.param(x);
            let bev = g.scatter_rows(xv, &cells, 4, 5)?;
            let v = g.select_cell(bev, 7)?;
            let u = g.select_cell(bev, 0)?;
            let both = g.add(v, u)?;
            let lin = g.dot_const(both, &w2)?;
            let extra = g.sum(bev)?;
            g.add(lin, extra)
        },
        1e-7,
    );
}

#[test]
fn slice_rows_values_and_gradient() {
    let mut r = rng(16);
    let mut s = ParamStore::new();
    let x = s.add_param("x", random(&mut r, &[9, 4])).unwrap();
    {
        let mut g = Graph::new(&s);
        let xv = g.param(x);
        let y = g.slice_rows(xv, 2, 5).unwrap();
        assert_eq!(g.value(y).data(), &s.param(x).tensor.data()[8..20]);
        assert!(g.slice_rows(xv, 5, 5).is_err());
        assert!(g.slice_rows(xv, 3, 10).is_err());
    }
    let weights = random(&mut r, &[6, 4]).into_data();
    check(
        &mut s,
        |g| {
            let xv = g.param(x);
            let y = g.slice_rows(xv, 1, 7)?;
            g.dot_const(y, &weights)
        },
        1e-7,
    );
}

// --------------------------------------------------------- composition

#[test]
fn two_layer_stack_matches_hand_derivation() {
    // y = sum(relu(x W1) W2) on a 2x2 instance
    let mut s = ParamStore::new();
    let w1 = s.add_param("w1", t2(&[&[1.0, -2.0], &[0.5, 1.0]])).unwrap();
    let w2 = s.add_param("w2", t2(&[&[2.0], &[-1.0]])).unwrap();
    let x = t2(&[&[1.0, 2.0], &[-1.0, 3.0]]);
    let mut g = Graph::new(&s);
    let xv = g.constant(x.clone());
    let (a, b) = (g.param(w1), g.param(w2));
    let h = g.matmul(xv, a).unwrap();
    let h = g.relu(h).unwrap();
    let y = g.matmul(h, b).unwrap();
    let l = g.sum(y).unwrap();
    let grads = g.backward(l).unwrap();
    // h_pre = [[2, 0], [0.5, 5]] ; relu mask = [[1,0],[1,1]]
    // dL/dh = [2, -1] per row ; dh_pre = [[2, 0], [2, -1]]
    // dW1 = x^T dh_pre = [[1*2 + -1*2, 0 + 1], [2*2 + 3*2, 0 - 3]] = [[0, 1], [10, -3]]
    // dW2 = relu(h)^T 1 = [2 + 0.5, 0 + 5]
    let dw1 = grads.get(w1).unwrap().data();
    let dw2 = grads.get(w2).unwrap().data();
    let want1 = [0.0, 1.0, 10.0, -3.0];
    for (a, b) in dw1.iter().zip(want1) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!((dw2[0] - 2.5).abs() < 1e-10 && (dw2[1] - 5.0).abs() < 1e-10);
}

#[test]
fn shared_parameter_accumulates_from_every_use() {
    let mut s = ParamStore::new();
    let w = s.add_param("w", t2(&[&[1.5]])).unwrap();
    let mut g = Graph::new(&s);
    let (a, b) = (g.param(w), g.param(w));
    assert_eq!(a, b);
    let x1 = g.constant(t2(&[&[2.0]]));
    let x2 = g.constant(t2(&[&[3.0]]));
    let y1 = g.matmul(x1, a).unwrap();
    let y2 = g.matmul(x2, b).unwrap();
    let l = g.add(y1, y2).unwrap();
    let l = g.sum(l).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[5.0]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(15);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(random(&mut r, &[3, 8, 8]));
        let w = g.constant(random(&mut r, &[4, 3, 3, 3]));
        let b = g.constant(random(&mut r, &[4]));
        let y = g.conv3x3(x, w, b).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn non_finite_forward_is_an_error() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::new([1], vec![Real::MAX]).unwrap());
    assert!(matches!(g.scale(x, 10.0), Err(diffcore::DiffError::NonFinite { .. })));
}
