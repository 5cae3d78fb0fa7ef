//! Template/search construction and the frame-by-frame tracking loop.

use crate::error::{Result, TrackError};
use crate::geometry::{normalize_angle, ObjectState, Point};
use crate::localization::{decode_box, encode_targets, localize, BoxTargets, HeadMaps};
use crate::model::{BnInference, Network};
use crate::pillars::{encode_cloud, encode_pair, prepare_cloud, resample_points};
use crate::siamese::forward;
use diffcore::{BatchNormMode, Graph, ParamStore, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub points: Vec<Point>,
    pub gt: Option<ObjectState>,
}

/// Points inside `bx` grown by `enlarge` metres on every face.
pub fn points_in_box(points: &[Point], bx: &ObjectState, enlarge: Real) -> Vec<Point> {
    points.iter().copied().filter(|p| bx.contains(*p, enlarge)).collect()
}

/// Points inside `bx` (grown by `enlarge`), expressed in the box frame.
pub fn crop_canonical(points: &[Point], bx: &ObjectState, enlarge: Real) -> Vec<Point> {
    points
        .iter()
        .filter(|p| bx.contains(**p, enlarge))
        .map(|p| bx.to_local(*p))
        .collect()
}

/// Half-widths of the uniform training-time box perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftSpec {
    pub xy: Real,
    pub z: Real,
    pub yaw: Real,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            xy: 0.3,
            z: 0.1,
            yaw: 0.1,
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half: Real) -> Real {
    if half > 0.0 {
        rng.gen_range(-half..=half)
    } else {
        0.0
    }
}

pub fn random_shift<R: Rng + ?Sized>(state: &ObjectState, spec: &ShiftSpec, rng: &mut R) -> ObjectState {
    ObjectState {
        x: state.x + symmetric(rng, spec.xy),
        y: state.y + symmetric(rng, spec.xy),
        z: state.z + symmetric(rng, spec.z),
        theta: normalize_angle(state.theta + symmetric(rng, spec.yaw)),
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub template_points: usize,
    pub search_points: usize,
    /// Metres added to every face of the reference box to form the search region.
    pub search_enlarge: Real,
    pub shift: ShiftSpec,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            template_points: 512,
            search_points: 1024,
            search_enlarge: 2.0,
            shift: ShiftSpec::default(),
        }
    }
}

/// One training pair, with both clouds in their canonical frames.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub template_points: Vec<Point>,
    pub search_points: Vec<Point>,
    /// Ground truth in the search reference frame.
    pub gt_local: ObjectState,
    /// The shifted box that defines the search frame, in world coordinates.
    pub reference: ObjectState,
}

/// Template cloud: first-frame target points in the first box's frame, plus
/// the points of `previous` in its own frame.
pub fn template_cloud(first: &Frame, first_box: &ObjectState, prev: &Frame, prev_box: &ObjectState) -> Vec<Point> {
    let mut pts = crop_canonical(&first.points, first_box, 0.0);
    pts.extend(crop_canonical(&prev.points, prev_box, 0.0));
    pts
}

fn gt_of(frame: &Frame) -> Result<ObjectState> {
    frame
        .gt
        .ok_or(TrackError::Config("training frame without ground truth".into()))
}

pub fn make_train_sample<R: Rng + ?Sized>(
    prev: &Frame,
    cur: &Frame,
    first: &Frame,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<TrainSample> {
    let (first_gt, prev_gt, cur_gt) = (gt_of(first)?, gt_of(prev)?, gt_of(cur)?);
    let prev_box = random_shift(&prev_gt, &spec.shift, rng);
    let reference = random_shift(&cur_gt, &spec.shift, rng);
    let template = template_cloud(first, &first_gt, prev, &prev_box);
    let search = crop_canonical(&cur.points, &reference, spec.search_enlarge);
    if template.is_empty() {
        return Err(TrackError::EmptyRegion("template box holds no points"));
    }
    if search.is_empty() {
        return Err(TrackError::EmptyRegion("search region holds no points"));
    }
    Ok(TrainSample {
        template_points: resample_points(&template, spec.template_points, rng)?,
        search_points: resample_points(&search, spec.search_points, rng)?,
        gt_local: reference.state_to_local(&cur_gt),
        reference,
    })
}

impl TrainSample {
    pub fn targets(&self, net: &Network) -> BoxTargets {
        encode_targets(&self.gt_local, net.grid())
    }
}

/// Runs the network on canonical clouds, leaving the store untouched, and
/// decodes a world state relative to `reference`; sizes are copied from
/// `size_of`.
pub fn predict(
    store: &ParamStore,
    net: &Network,
    template: &[Point],
    search: &[Point],
    reference: &ObjectState,
    size_of: &ObjectState,
) -> Result<ObjectState> {
    let grid = net.grid();
    let tc = prepare_cloud(template, grid)?;
    let sc = prepare_cloud(search, grid)?;
    let mut g = Graph::new(store);
    // Sample statistics are computed exactly as in training; the running
    // averages they would update are left untouched.
    let (tv, sv) = match net.config.bn_inference {
        BnInference::Sample => encode_pair(&mut g, &tc, &sc, grid, &net.pnet, BatchNormMode::Train)?,
        BnInference::Running => (
            encode_cloud(&mut g, &tc, grid, &net.pnet, BatchNormMode::Eval)?,
            encode_cloud(&mut g, &sc, grid, &net.pnet, BatchNormMode::Eval)?,
        ),
    };
    let out = forward(&mut g, net, &tv, &sv)?;
    let heads = localize(
        &mut g,
        out.search_loc_input,
        &sv.coords,
        grid,
        &net.loc,
        net.config.dense_localization,
    )?;
    Ok(decode_box(&HeadMaps::from_graph(&g, &heads), grid, reference, size_of))
}

/// Per-frame predictions of one tracking run; `flags[t]` marks frames where
/// the previous state was carried forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub predictions: Vec<ObjectState>,
    pub flags: Vec<bool>,
}

impl Track {
    pub fn degenerate_frames(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// Tracks one target from its first-frame box. Deterministic for a given
/// `seed`, which drives the point resampling.
pub fn track_sequence(
    store: &ParamStore,
    net: &Network,
    frames: &[Frame],
    initial: &ObjectState,
    spec: &SampleSpec,
    seed: u64,
) -> Result<Track> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut predictions = Vec::with_capacity(frames.len());
    let mut flags = Vec::with_capacity(frames.len());
    if frames.is_empty() {
        return Ok(Track { predictions, flags });
    }
    predictions.push(*initial);
    flags.push(false);
    for t in 1..frames.len() {
        let prev = predictions[t - 1];
        match track_step(store, net, &frames[0], initial, &frames[t - 1], &prev, &frames[t], spec, &mut rng) {
            Ok(state) => {
                predictions.push(state);
                flags.push(false);
            }
            Err(TrackError::EmptyRegion(_)) => {
                predictions.push(prev);
                flags.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Track { predictions, flags })
}

#[allow(clippy::too_many_arguments)]
fn track_step(
    store: &ParamStore,
    net: &Network,
    first: &Frame,
    initial: &ObjectState,
    prev_frame: &Frame,
    prev: &ObjectState,
    cur: &Frame,
    spec: &SampleSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ObjectState> {
    let template = template_cloud(first, initial, prev_frame, prev);
    let search = crop_canonical(&cur.points, prev, spec.search_enlarge);
    let template = resample_points(&template, spec.template_points, rng)?;
    let search = resample_points(&search, spec.search_points, rng)?;
    let state = predict(store, net, &template, &search, prev, initial)?;
    if !state.is_finite() {
        return Err(TrackError::Diff(diffcore::DiffError::NonFinite { op: "decode" }));
    }
    Ok(state)
}
