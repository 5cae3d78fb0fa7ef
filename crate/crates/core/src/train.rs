//! Mini-batch training over consecutive-frame pairs.

use crate::error::{Result, TrackError};
use crate::localization::encode_targets;
use crate::loss::{total_loss, LossBreakdown, LossWeights};
use crate::model::Network;
use crate::pillars::{encode_pair, prepare_cloud};
use crate::siamese::forward;
use crate::tracker::{make_train_sample, Frame, SampleSpec, TrainSample};
use diffcore::{adam_step, AdamConfig, BatchNormMode, DiffError, Gradients, Graph, ParamStore, Real, StatUpdate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct Tracklet {
    pub id: String,
    pub category: String,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub loss: LossWeights,
    pub sample: SampleSpec,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Call the checkpoint hook every this many epochs (and always at the end).
    pub checkpoint_every: Option<usize>,
    pub seed: u64,
    /// 0 lets the pool use every core.
    pub workers: usize,
}

/// Batch-mean losses of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub samples: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub skipped_samples: usize,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.log.len()
    }
}

/// One sample's contribution: gradients, pending running-stat updates and
/// loss values.
pub struct SampleResult {
    pub grads: Gradients,
    pub stat_updates: Vec<StatUpdate>,
    pub loss: LossBreakdown,
}

pub fn sample_gradients(
    store: &ParamStore,
    net: &Network,
    sample: &TrainSample,
    weights: &LossWeights,
) -> Result<SampleResult> {
    let grid = net.grid();
    let tc = prepare_cloud(&sample.template_points, grid)?;
    let sc = prepare_cloud(&sample.search_points, grid)?;
    let mut g = Graph::new(store);
    let (tv, sv) = encode_pair(&mut g, &tc, &sc, grid, &net.pnet, BatchNormMode::Train)?;
    let out = forward(&mut g, net, &tv, &sv)?;
    let targets = encode_targets(&sample.gt_local, grid);
    let (loss, breakdown) = total_loss(&mut g, net, &out, &sv.coords, &targets, weights)?;
    let grads = g.backward(loss)?;
    Ok(SampleResult {
        grads,
        stat_updates: g.take_stat_updates(),
        loss: breakdown,
    })
}

/// Every `(tracklet, t)` with ground truth on frames `t - 1` and `t`.
pub fn training_pairs(tracklets: &[Tracklet]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (k, tr) in tracklets.iter().enumerate() {
        if tr.frames.first().and_then(|f| f.gt).is_none() {
            continue;
        }
        for t in 1..tr.frames.len() {
            if tr.frames[t - 1].gt.is_some() && tr.frames[t].gt.is_some() {
                pairs.push((k, t));
            }
        }
    }
    pairs
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as Real;
    let mean = |f: &dyn Fn(&LossBreakdown) -> Real| parts.iter().map(f).sum::<Real>() / n;
    let deep_len = parts[0].l_deep.len();
    LossBreakdown {
        l_center: mean(&|b| b.l_center),
        l_offrot: mean(&|b| b.l_offrot),
        l_z: mean(&|b| b.l_z),
        l_main: mean(&|b| b.l_main),
        l_deep: (0..deep_len).map(|i| mean(&|b| b.l_deep[i])).collect(),
        l_final: mean(&|b| b.l_final),
    }
}

fn is_empty_region(e: &TrackError) -> bool {
    matches!(e, TrackError::EmptyRegion(_))
}

/// Trains in place. Per-sample randomness comes from seeds drawn in order
/// from the master RNG, and gradients are reduced in batch order, so the
/// result does not depend on the worker count.
pub fn train<F>(
    store: &mut ParamStore,
    net: &Network,
    tracklets: &[Tracklet],
    opts: &TrainOptions,
    mut checkpoint: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &ParamStore) -> Result<()>,
{
    let mut pairs = training_pairs(tracklets);
    if pairs.is_empty() {
        return Err(TrackError::NoSamples);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| TrackError::Config(format!("thread pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = TrainReport::default();
    let batch = opts.batch_size.max(1);
    'epochs: for epoch in 0..opts.epochs {
        pairs.shuffle(&mut rng);
        for chunk in pairs.chunks(batch) {
            if opts.max_steps.is_some_and(|m| report.steps() >= m) {
                break 'epochs;
            }
            let step = report.steps();
            let jobs: Vec<((usize, usize), u64)> = chunk.iter().map(|&p| (p, rng.gen())).collect();
            let results: Vec<Result<SampleResult>> = {
                let shared: &ParamStore = store;
                pool.install(|| {
                    jobs.par_iter()
                        .map(|&((k, t), seed)| {
                            let tr = &tracklets[k];
                            let mut srng = ChaCha8Rng::seed_from_u64(seed);
                            let sample =
                                make_train_sample(&tr.frames[t - 1], &tr.frames[t], &tr.frames[0], &opts.sample, &mut srng)?;
                            sample_gradients(shared, net, &sample, &opts.loss)
                        })
                        .collect()
                })
            };
            let mut grads = Gradients::empty(store);
            let mut losses = Vec::with_capacity(results.len());
            let mut updates = Vec::new();
            for r in results {
                match r {
                    Ok(s) => {
                        grads.accumulate(&s.grads);
                        updates.extend(s.stat_updates);
                        losses.push(s.loss);
                    }
                    Err(e) if is_empty_region(&e) => report.skipped_samples += 1,
                    Err(TrackError::Diff(DiffError::NonFinite { .. })) => {
                        return Err(TrackError::NonFiniteLoss { step })
                    }
                    Err(e) => return Err(e),
                }
            }
            if losses.is_empty() {
                continue;
            }
            let loss = mean_breakdown(&losses);
            if !loss.l_final.is_finite() {
                return Err(TrackError::NonFiniteLoss { step });
            }
            for u in &updates {
                u.apply(store);
            }
            store.set_grads(&grads, 1.0 / losses.len() as Real);
            adam_step(store, &opts.adam)?;
            report.log.push(LogRow {
                step,
                epoch,
                samples: losses.len(),
                loss,
            });
        }
        if opts.checkpoint_every.is_some_and(|k| k > 0 && (epoch + 1) % k == 0) {
            checkpoint(epoch + 1, store)?;
        }
    }
    let last_epoch = report.log.last().map_or(0, |r| r.epoch + 1);
    checkpoint(last_epoch, store)?;
    Ok(report)
}

/// Loss log as CSV: `step,epoch,l_center,l_offrot,l_z,deep_1..,l_final`.
pub fn render_loss_log(log: &[LogRow]) -> String {
    let deep = log.first().map_or(0, |r| r.loss.l_deep.len());
    let mut out = String::from("step,epoch,l_center,l_offrot,l_z");
    for i in 1..=deep {
        let _ = write!(out, ",l_deep_{i}");
    }
    out.push_str(",l_final\n");
    for r in log {
        let b = &r.loss;
        let _ = write!(out, "{},{},{:.9},{:.9},{:.9}", r.step, r.epoch, b.l_center, b.l_offrot, b.l_z);
        for d in &b.l_deep {
            let _ = write!(out, ",{d:.9}");
        }
        let _ = writeln!(out, ",{:.9}", b.l_final);
    }
    out
}
