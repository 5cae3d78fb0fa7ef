use crate::error::{dim_err, DiffError, Result};
use crate::gemm::gemm;
use crate::kernels::{self, attention::AttentionCache, conv, loss, norm, pool};
use crate::param::{BufferId, Gradients, ParamId, ParamStore};
use crate::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and emit a running-stat update.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Running-statistics update produced by a train-mode batch norm. The graph
/// only borrows the store, so updates are applied by the owner afterwards.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub mean_buffer: BufferId,
    pub var_buffer: BufferId,
    pub batch_mean: Vec<Real>,
    /// Unbiased batch variance (biased when the batch has one row).
    pub batch_var: Vec<Real>,
    pub momentum: Real,
}

impl StatUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        let m = self.momentum;
        let rm = store.buffer_mut(self.mean_buffer).tensor.data_mut();
        for (r, b) in rm.iter_mut().zip(&self.batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let rv = store.buffer_mut(self.var_buffer).tensor.data_mut();
        for (r, b) in rv.iter_mut().zip(&self.batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    SumN(Vec<Var>),
    Scale(Var, Real),
    Relu(Var),
    EluPlusOne(Var),
    Sigmoid(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Real>,
        inv_std: Vec<Real>,
        train: bool,
    },
    MaxPoolSet {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<Real>,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Var,
    },
    ScatterRows {
        x: Var,
        cells: Vec<usize>,
    },
    SelectCell {
        x: Var,
        cell: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    LinearAttention {
        q: Var,
        k: Var,
        v: Var,
        cache: AttentionCache,
    },
    FocalLoss {
        pred: Var,
        target: Vec<Real>,
    },
    L1Loss {
        pred: Var,
        target: Vec<Real>,
    },
    DotConst {
        x: Var,
        weights: Vec<Real>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// A single-use tape of tensor operations over a borrowed [`ParamStore`].
///
/// Every forward op validates shapes and rejects non-finite outputs.
/// A parameter referenced several times maps to one leaf, so gradients from
/// all uses accumulate into it.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    stat_updates: Vec<StatUpdate>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            stat_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => &self.store.param(*id).tensor,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Running-stat updates recorded by train-mode batch norms, in order.
    pub fn stat_updates(&self) -> &[StatUpdate] {
        &self.stat_updates
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn push(&mut self, op_name: &'static str, t: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !t.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(t),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => dim_err(op, format!("expected rank 2, got {s:?}")),
        }
    }

    fn dims3(&self, op: &'static str, v: Var) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            [c, h, w] => Ok((*c, *h, *w)),
            s => dim_err(op, format!("expected rank 3, got {s:?}")),
        }
    }

    // ---------------------------------------------------------------- linear

    /// `[N x K] @ [K x M]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2("matmul", a)?;
        let (k2, m) = self.dims2("matmul", b)?;
        if k != k2 {
            return dim_err("matmul", format!("inner extents {k} vs {k2}"));
        }
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let t = Tensor::new([n, m], out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a length-`C` bias to every row of `[N x C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c) = self.dims2("add_bias", x)?;
        if self.shape(b) != [c] {
            return dim_err("add_bias", format!("bias {:?} for {c} columns", self.shape(b)));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            row.iter_mut().zip(bias).for_each(|(r, b)| *r += b);
        }
        self.push("add_bias", out, Op::AddBias(x, b), &[x, b])
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(o, v)| *o += v);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Sum of same-shaped terms, accumulated left to right. A single term is
    /// returned unchanged.
    pub fn sum_n(&mut self, terms: &[Var]) -> Result<Var> {
        let Some(&first) = terms.first() else {
            return dim_err("sum_n", "no terms");
        };
        if terms.len() == 1 {
            return Ok(first);
        }
        let mut out = self.value(first).clone();
        for &t in &terms[1..] {
            if self.shape(t) != out.shape() {
                return dim_err("sum_n", format!("{:?} vs {:?}", self.shape(t), out.shape()));
            }
            out.data_mut()
                .iter_mut()
                .zip(self.value(t).data())
                .for_each(|(o, v)| *o += v);
        }
        self.push("sum_n", out, Op::SumN(terms.to_vec()), terms)
    }

    pub fn scale(&mut self, x: Var, s: Real) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    // ----------------------------------------------------------- activations

    fn map(&mut self, name: &'static str, x: Var, f: fn(Real) -> Real, op: Op) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        self.push(name, out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, kernels::relu, Op::Relu(x))
    }

    pub fn elu_plus_one(&mut self, x: Var) -> Result<Var> {
        self.map("elu_plus_one", x, kernels::elu_plus_one, Op::EluPlusOne(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    // --------------------------------------------------------- normalization

    /// Batch norm over the rows of `[N x C]`. In train mode the batch
    /// statistics normalize `x` and a [`StatUpdate`] is recorded.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: BufferId,
        running_var: BufferId,
        mode: BatchNormMode,
        eps: Real,
        momentum: Real,
    ) -> Result<Var> {
        let (n, c) = self.dims2("batchnorm", x)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return dim_err("batchnorm", "gamma/beta must have one entry per column");
        }
        let train = mode == BatchNormMode::Train;
        let (mean, var) = if train {
            let s = norm::column_stats(self.value(x).data(), n, c);
            let unbiased = if n > 1 {
                s.var.iter().map(|v| v * n as Real / (n - 1) as Real).collect()
            } else {
                s.var.clone()
            };
            self.stat_updates.push(StatUpdate {
                mean_buffer: running_mean,
                var_buffer: running_var,
                batch_mean: s.mean.clone(),
                batch_var: unbiased,
                momentum,
            });
            (s.mean, s.var)
        } else {
            (
                self.store.buffer(running_mean).tensor.data().to_vec(),
                self.store.buffer(running_var).tensor.data().to_vec(),
            )
        };
        if mean.len() != c || var.len() != c {
            return dim_err("batchnorm", "running statistics have the wrong length");
        }
        let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = norm::normalize(
            self.value(x).data(),
            c,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let t = Tensor::new([n, c], y)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        self.push("batchnorm", t, op, &[x, gamma, beta])
    }

    // --------------------------------------------------------------- pooling

    /// Column-wise max of `[N x C]` over row groups; output `[groups x C]`.
    pub fn maxpool_set(&mut self, x: Var, group_of: &[usize], groups: usize) -> Result<Var> {
        let (n, c) = self.dims2("maxpool_set", x)?;
        if group_of.len() != n {
            return dim_err("maxpool_set", format!("{} group labels for {n} rows", group_of.len()));
        }
        if let Some(&g) = group_of.iter().find(|&&g| g >= groups) {
            return dim_err("maxpool_set", format!("group {g} out of range {groups}"));
        }
        let (out, argmax) = pool::maxpool_set(self.value(x).data(), c, group_of, groups);
        if argmax.contains(&usize::MAX) {
            return dim_err("maxpool_set", "empty group");
        }
        let t = Tensor::new([groups, c], out)?;
        self.push("maxpool_set", t, Op::MaxPoolSet { x, argmax }, &[x])
    }

    // ---------------------------------------------------------- convolution

    /// Stride-1, zero-padded 3x3 convolution of `[C_in x H x W]` with
    /// weights `[C_out x C_in x 3 x 3]`.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ci, h, wd) = self.dims3("conv3x3", x)?;
        let co = match self.shape(w) {
            [co, c2, 3, 3] if *c2 == ci => *co,
            s => return dim_err("conv3x3", format!("weight {s:?} for {ci} input channels")),
        };
        if self.shape(b) != [co] {
            return dim_err("conv3x3", "bias length must equal output channels");
        }
        let cols = conv::im2col(self.value(x).data(), ci, h, wd);
        let out = conv::conv3x3_forward(&cols, self.value(w).data(), self.value(b).data(), ci, h * wd);
        let t = Tensor::new([co, h, wd], out)?;
        self.push("conv3x3", t, Op::Conv3x3 { x, w, b, cols }, &[x, w, b])
    }

    /// Per-cell linear map of `[C_in x H x W]` with weights `[C_out x C_in]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ci, h, wd) = self.dims3("conv1x1", x)?;
        let co = match self.shape(w) {
            [co, c2] if *c2 == ci => *co,
            s => return dim_err("conv1x1", format!("weight {s:?} for {ci} input channels")),
        };
        if self.shape(b) != [co] {
            return dim_err("conv1x1", "bias length must equal output channels");
        }
        let out = conv::conv1x1_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), ci, h * wd);
        let t = Tensor::new([co, h, wd], out)?;
        self.push("conv1x1", t, Op::Conv1x1 { x, w, b }, &[x, w, b])
    }

    // ------------------------------------------------------ scatter / gather

    /// Places row `m` of `[M x C]` at flat cell `cells[m]` of a zeroed
    /// `[C x H x W]` grid. Cells must be distinct and in range.
    pub fn scatter_rows(&mut self, x: Var, cells: &[usize], h: usize, w: usize) -> Result<Var> {
        let (m, c) = self.dims2("scatter_rows", x)?;
        if cells.len() != m {
            return dim_err("scatter_rows", format!("{} cells for {m} rows", cells.len()));
        }
        let hw = h * w;
        let mut seen = vec![false; hw];
        for &cell in cells {
            if cell >= hw {
                return dim_err("scatter_rows", format!("cell {cell} outside {h}x{w} grid"));
            }
            if std::mem::replace(&mut seen[cell], true) {
                return dim_err("scatter_rows", format!("duplicate cell {cell}"));
            }
        }
        let mut out = vec![0.0; c * hw];
        for (row, &cell) in self.value(x).data().chunks_exact(c).zip(cells) {
            for (ch, v) in row.iter().enumerate() {
                out[ch * hw + cell] = *v;
            }
        }
        let t = Tensor::new([c, h, w], out)?;
        let op = Op::ScatterRows {
            x,
            cells: cells.to_vec(),
        };
        self.push("scatter_rows", t, op, &[x])
    }

    /// The `K` channel values of `[K x H x W]` at one flat cell.
    pub fn select_cell(&mut self, x: Var, cell: usize) -> Result<Var> {
        let (k, h, w) = self.dims3("select_cell", x)?;
        if cell >= h * w {
            return dim_err("select_cell", format!("cell {cell} outside {h}x{w} grid"));
        }
        let src = self.value(x).data();
        let vals = (0..k).map(|ch| src[ch * h * w + cell]).collect();
        let t = Tensor::new([k], vals)?;
        self.push("select_cell", t, Op::SelectCell { x, cell }, &[x])
    }

    /// Rows `start..end` of a `[N x C]` matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.dims2("slice_rows", x)?;
        if start >= end || end > n {
            return dim_err("slice_rows", format!("rows {start}..{end} of {n}"));
        }
        let vals = self.value(x).data()[start * c..end * c].to_vec();
        let t = Tensor::new([end - start, c], vals)?;
        self.push("slice_rows", t, Op::SliceRows { x, start }, &[x])
    }

    // -------------------------------------------------------------- attention

    /// Linear attention of queries `[N_q x C]` over keys `[N_k x C]` and
    /// values `[N_k x C_v]`; see [`kernels::attention`].
    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (nq, c) = self.dims2("linear_attention", q)?;
        let (nk, ck) = self.dims2("linear_attention", k)?;
        let (nv, cv) = self.dims2("linear_attention", v)?;
        if c != ck || nk != nv {
            return dim_err(
                "linear_attention",
                format!("q {nq}x{c}, k {nk}x{ck}, v {nv}x{cv}"),
            );
        }
        let (out, cache) = kernels::attention::forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            nq,
            nk,
            c,
            cv,
        );
        let t = Tensor::new([nq, cv], out)?;
        self.push("linear_attention", t, Op::LinearAttention { q, k, v, cache }, &[q, k, v])
    }

    // ------------------------------------------------------------------ loss

    /// Penalty-reduced focal loss of a probability map against a Gaussian
    /// target (cells equal to exactly 1.0 are positives).
    pub fn focal_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return dim_err("focal_loss", format!("{:?} vs {:?}", self.shape(pred), target.shape()));
        }
        let l = loss::focal_forward(self.value(pred).data(), target.data());
        let op = Op::FocalLoss {
            pred,
            target: target.data().to_vec(),
        };
        self.push("focal_loss", Tensor::scalar(l), op, &[pred])
    }

    /// Mean absolute error against constant targets.
    pub fn l1_loss(&mut self, pred: Var, target: &[Real]) -> Result<Var> {
        if self.value(pred).numel() != target.len() {
            return dim_err("l1_loss", format!("{} predictions vs {} targets", self.value(pred).numel(), target.len()));
        }
        let l = loss::l1_forward(self.value(pred).data(), target);
        let op = Op::L1Loss {
            pred,
            target: target.to_vec(),
        };
        self.push("l1_loss", Tensor::scalar(l), op, &[pred])
    }

    /// `sum_i x_i * weights_i` as a scalar.
    pub fn dot_const(&mut self, x: Var, weights: &[Real]) -> Result<Var> {
        if self.value(x).numel() != weights.len() {
            return dim_err("dot_const", "weight count must match element count");
        }
        let s = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let op = Op::DotConst {
            x,
            weights: weights.to_vec(),
        };
        self.push("dot_const", Tensor::scalar(s), op, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ones = vec![1.0; self.value(x).numel()];
        self.dot_const(x, &ones)
    }

    // -------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`; returns gradients of every
    /// parameter leaf reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return dim_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
        }
        let mut out = Gradients::empty(self.store);
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = grads[v.0].take() {
                    let shape = self.value(*v).shape().to_vec();
                    out.per_param[pid] = Some(Tensor::new(shape, g)?);
                }
            }
        }
        Ok(out)
    }

    fn backward_node(&self, idx: usize, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let out = self.nodes[idx].value_ref(self.store);
        let acc = |grads: &mut [Option<Vec<Real>>], v: Var, d: Vec<Real>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(d),
            }
        };
        let need = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if need(*a) {
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, g, false, self.value(*b).data(), true, &mut da, false);
                    acc(grads, *a, da);
                }
                if need(*b) {
                    let mut db = vec![0.0; k * m];
                    gemm(k, n, m, self.value(*a).data(), true, g, false, &mut db, false);
                    acc(grads, *b, db);
                }
            }
            Op::AddBias(x, b) => {
                let c = self.shape(*b)[0];
                if need(*b) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    acc(grads, *b, db);
                }
                acc(grads, *x, g.to_vec());
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.to_vec());
                acc(grads, *b, g.to_vec());
            }
            Op::SumN(terms) => {
                for t in terms {
                    acc(grads, *t, g.to_vec());
                }
            }
            Op::Scale(x, s) => acc(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, *x, d);
            }
            Op::EluPlusOne(x) => {
                let d = g
                    .iter()
                    .zip(self.value(*x).data())
                    .zip(out.data())
                    .map(|((g, &x), &y)| g * kernels::elu_plus_one_grad(x, y))
                    .collect();
                acc(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                acc(grads, *x, d);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let r = norm::backward(g, xhat, c, self.value(*gamma).data(), inv_std, *train);
                acc(grads, *x, r.dx);
                acc(grads, *gamma, r.dgamma);
                acc(grads, *beta, r.dbeta);
            }
            Op::MaxPoolSet { x, argmax } => {
                let (n, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(grads, *x, pool::maxpool_set_backward(g, c, argmax, n));
            }
            Op::Conv3x3 { x, w, b, cols } => {
                let (ci, h, wd) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let (dx, dw, db) =
                    conv::conv3x3_backward(g, cols, self.value(*w).data(), ci, h, wd, need(*x));
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::Conv1x1 { x, w, b } => {
                let (ci, h, wd) = (self.shape(*x)[0], self.shape(*x)[1], self.shape(*x)[2]);
                let (dx, dw, db) = conv::conv1x1_backward(
                    g,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    ci,
                    h * wd,
                    need(*x),
                );
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                acc(grads, *w, dw);
                acc(grads, *b, db);
            }
            Op::ScatterRows { x, cells } => {
                let c = self.shape(*x)[1];
                let hw = g.len() / c;
                let mut dx = vec![0.0; cells.len() * c];
                for (row, &cell) in dx.chunks_exact_mut(c).zip(cells) {
                    for (ch, d) in row.iter_mut().enumerate() {
                        *d = g[ch * hw + cell];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SelectCell { x, cell } => {
                let n = self.value(*x).numel();
                let hw = n / g.len();
                let mut dx = vec![0.0; n];
                for (ch, v) in g.iter().enumerate() {
                    dx[ch * hw + cell] = *v;
                }
                acc(grads, *x, dx);
            }
            Op::SliceRows { x, start } => {
                let c = self.shape(*x)[1];
                let mut dx = vec![0.0; self.value(*x).numel()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                acc(grads, *x, dx);
            }
            Op::LinearAttention { q, k, v, cache } => {
                let (nq, c) = (self.shape(*q)[0], self.shape(*q)[1]);
                let nk = self.shape(*k)[0];
                let cv = self.shape(*v)[1];
                let r = kernels::attention::backward(
                    g,
                    out.data(),
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    cache,
                    nq,
                    nk,
                    c,
                    cv,
                );
                acc(grads, *q, r.dq);
                acc(grads, *k, r.dk);
                acc(grads, *v, r.dv);
            }
            Op::FocalLoss { pred, target } => {
                let d = loss::focal_backward(self.value(*pred).data(), target, g[0]);
                acc(grads, *pred, d);
            }
            Op::L1Loss { pred, target } => {
                let d = loss::l1_backward(self.value(*pred).data(), target, g[0]);
                acc(grads, *pred, d);
            }
            Op::DotConst { x, weights } => {
                acc(grads, *x, weights.iter().map(|w| w * g[0]).collect());
            }
        }
    }
}

impl Node {
    fn value_ref<'a>(&'a self, store: &'a ParamStore) -> &'a Tensor {
        match &self.value {
            Value::Owned(t) => t,
            Value::Param(id) => &store.param(*id).tensor,
        }
    }
}
