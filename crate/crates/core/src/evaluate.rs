//! Tracking every tracklet of a dataset and scoring the runs.

use crate::error::Result;
use crate::metrics::{aggregate, MetricConfig, Score, TrackRun};
use crate::model::Network;
use crate::tracker::{track_sequence, SampleSpec};
use crate::train::Tracklet;
use diffcore::ParamStore;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub id: String,
    pub category: String,
    pub run: TrackRun,
    pub score: Score,
}

/// Tracks one tracklet from its first ground-truth box; `seed` drives the
/// point resampling.
pub fn run_tracklet(store: &ParamStore, net: &Network, tr: &Tracklet, spec: &SampleSpec, seed: u64) -> Result<TrackRun> {
    let gts: Vec<_> = tr
        .frames
        .iter()
        .map(|f| f.gt.ok_or(crate::TrackError::Config(format!("{}: frame without ground truth", tr.id))))
        .collect::<Result<_>>()?;
    let track = track_sequence(store, net, &tr.frames, &gts[0], spec, seed)?;
    Ok(TrackRun::new(track.predictions, gts, track.flags).expect("one prediction per frame"))
}

/// Tracklets are independent, so they run in parallel; the seed of
/// tracklet `k` is `seed + k`.
pub fn evaluate(
    store: &ParamStore,
    net: &Network,
    tracklets: &[Tracklet],
    spec: &SampleSpec,
    metrics: &MetricConfig,
    seed: u64,
) -> Result<Vec<SequenceResult>> {
    tracklets
        .par_iter()
        .enumerate()
        .map(|(k, tr)| {
            let run = run_tracklet(store, net, tr, spec, seed.wrapping_add(k as u64))?;
            let score = Score::of(&run, metrics);
            Ok(SequenceResult {
                id: tr.id.clone(),
                category: tr.category.clone(),
                run,
                score,
            })
        })
        .collect()
}

/// Frame-weighted mean over all sequences.
pub fn overall(results: &[SequenceResult]) -> Option<Score> {
    aggregate(&results.iter().map(|r| r.score).collect::<Vec<_>>())
}
