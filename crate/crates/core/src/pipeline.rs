//! File-level steps of the `gen → train → track → eval` workflow.
//!
//! Dataset layout: one manifest `<id>.txt` per tracklet next to a directory
//! `<id>/` holding its frames as `NNNN.bin` point files. Predictions are
//! written as `<id>.txt` into a predictions directory.

use crate::config::Config;
use crate::error::{Result, TrackError};
use crate::evaluate::SequenceResult;
use crate::io::{fmt_real, load_frames, parse_predictions, read_manifest, render_manifest, render_predictions, write_points};
use crate::io::{ManifestEntry, SequenceManifest};
use crate::metrics::{precision_curve, success_curve, MetricConfig, Score, TrackRun};
use crate::model::Network;
use crate::train::Tracklet;
use diffcore::{read_checkpoint, write_checkpoint, ParamStore, Real};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TrackError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TrackError::io(path, e))
}

/// Writes every tracklet and returns the manifest paths.
pub fn write_dataset(dir: &Path, tracklets: &[Tracklet]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut manifests = Vec::with_capacity(tracklets.len());
    for tr in tracklets {
        let frame_dir = dir.join(&tr.id);
        create_dir(&frame_dir)?;
        let mut entries = Vec::with_capacity(tr.frames.len());
        for (t, frame) in tr.frames.iter().enumerate() {
            let gt = frame
                .gt
                .ok_or_else(|| TrackError::Config(format!("{}: frame {t} has no ground truth", tr.id)))?;
            let path = frame_dir.join(format!("{t:04}.bin"));
            write_points(&path, &frame.points)?;
            entries.push(ManifestEntry { path, gt });
        }
        let manifest = SequenceManifest {
            category: tr.category.clone(),
            tracklet: tr.id.clone(),
            entries,
        };
        let path = dir.join(format!("{}.txt", tr.id));
        write_text(&path, &render_manifest(&manifest, dir))?;
        manifests.push(path);
    }
    Ok(manifests)
}

/// Manifest files named by `inputs`; a directory contributes every `*.txt`
/// directly inside it, in name order.
pub fn manifest_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| TrackError::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    if out.is_empty() {
        return Err(TrackError::Config("no manifests found".into()));
    }
    Ok(out)
}

pub fn load_dataset(inputs: &[PathBuf]) -> Result<Vec<Tracklet>> {
    manifest_paths(inputs)?
        .iter()
        .map(|path| {
            let m = read_manifest(path)?;
            Ok(Tracklet {
                id: m.tracklet.clone(),
                category: m.category.clone(),
                frames: load_frames(&m)?,
            })
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| TrackError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, store, true)?;
    std::io::Write::flush(&mut w).map_err(|e| TrackError::io(path, e))
}

/// Builds the network the config describes and loads `path` into it.
pub fn load_model(cfg: &Config, path: &Path) -> Result<(ParamStore, Network)> {
    let mut store = ParamStore::new();
    let net = Network::new(cfg.network(), &mut store, cfg.seed)?;
    let file = fs::File::open(path).map_err(|e| TrackError::io(path, e))?;
    let records = read_checkpoint(std::io::BufReader::new(file))?;
    store.load_records(&records)?;
    Ok((store, net))
}

pub fn write_predictions(dir: &Path, results: &[SequenceResult]) -> Result<()> {
    create_dir(dir)?;
    for r in results {
        let text = render_predictions(&r.run.predictions, &r.run.flags);
        write_text(&dir.join(format!("{}.txt", r.id)), &text)?;
    }
    Ok(())
}

/// Pairs each tracklet's ground truth with `<predictions>/<id>.txt`.
pub fn read_runs(tracklets: &[Tracklet], predictions: &Path, metrics: &MetricConfig) -> Result<Vec<SequenceResult>> {
    tracklets
        .iter()
        .map(|tr| {
            let path = predictions.join(format!("{}.txt", tr.id));
            let text = fs::read_to_string(&path).map_err(|e| TrackError::io(&path, e))?;
            let (states, flags) = parse_predictions(&text, &path)?;
            let gts: Vec<_> = tr.frames.iter().filter_map(|f| f.gt).collect();
            let run = TrackRun::new(states, gts, flags).ok_or_else(|| TrackError::Manifest {
                path: path.clone(),
                line: 0,
                detail: format!("expected {} predicted frames", tr.frames.len()),
            })?;
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

/// `sequence,category,frames,success,precision,degenerate`, one row per
/// sequence and a final frame-weighted `overall` row.
pub fn render_metrics_csv(results: &[SequenceResult]) -> String {
    let mut out = String::from("sequence,category,frames,success,precision,degenerate\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.id,
            r.category,
            r.score.frames,
            fmt_real(r.score.success),
            fmt_real(r.score.precision),
            r.run.degenerate_frames()
        );
    }
    if let Some(all) = crate::evaluate::overall(results) {
        let degenerate: usize = results.iter().map(|r| r.run.degenerate_frames()).sum();
        let _ = writeln!(
            out,
            "overall,all,{},{},{},{degenerate}",
            all.frames,
            fmt_real(all.success),
            fmt_real(all.precision)
        );
    }
    out
}

/// Plot data: `sequence,curve,threshold,fraction` for the success and
/// precision curves of each sequence and of all frames pooled.
pub fn render_curves_csv(results: &[SequenceResult], metrics: &MetricConfig) -> String {
    let mut out = String::from("sequence,curve,threshold,fraction\n");
    let mut emit = |name: &str, ious: &[Real], dists: &[Real]| {
        for (tau, f) in success_curve(ious, metrics.success_thresholds) {
            let _ = writeln!(out, "{name},success,{},{}", fmt_real(tau), fmt_real(f));
        }
        for (d, f) in precision_curve(dists, metrics.precision_thresholds, metrics.precision_max_distance) {
            let _ = writeln!(out, "{name},precision,{},{}", fmt_real(d), fmt_real(f));
        }
    };
    let (mut all_ious, mut all_dists) = (Vec::new(), Vec::new());
    for r in results {
        let (ious, dists) = (r.run.ious(), r.run.distances(metrics.distance));
        emit(&r.id, &ious, &dists);
        all_ious.extend(ious);
        all_dists.extend(dists);
    }
    if !results.is_empty() {
        emit("overall", &all_ious, &all_dists);
    }
    out
}

pub fn write_metrics(dir: &Path, results: &[SequenceResult], metrics: &MetricConfig) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("metrics.csv"), &render_metrics_csv(results))?;
    write_text(&dir.join("curves.csv"), &render_curves_csv(results, metrics))
}
