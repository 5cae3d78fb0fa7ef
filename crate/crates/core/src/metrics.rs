//! One-pass evaluation: rotated-box IoU, centre distance, and the
//! Success/Precision curve averages.

use crate::geometry::ObjectState;
use diffcore::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    pub predictions: Vec<ObjectState>,
    pub ground_truths: Vec<ObjectState>,
    pub flags: Vec<bool>,
}

impl TrackRun {
    pub fn new(predictions: Vec<ObjectState>, ground_truths: Vec<ObjectState>, flags: Vec<bool>) -> Option<Self> {
        let n = predictions.len();
        (n >= 1 && ground_truths.len() == n && flags.len() == n).then_some(TrackRun {
            predictions,
            ground_truths,
            flags,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn degenerate_frames(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

type P2 = [Real; 2];

fn cross(o: P2, a: P2, b: P2) -> Real {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` against a counter-clockwise convex `clip`.
fn clip_polygon(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out = subject.to_vec();
    for k in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[k], clip[(k + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for m in 0..input.len() {
            let (p, q) = (input[m], input[(m + 1) % input.len()]);
            let (sp, sq) = (cross(a, b, p), cross(a, b, q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

fn polygon_area(poly: &[P2]) -> Real {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: Real = (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Footprint intersection area of two yaw-rotated rectangles.
pub fn bev_intersection(a: &ObjectState, b: &ObjectState) -> Real {
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

/// 3D IoU of two oriented boxes. Identical boxes give exactly 1.
pub fn iou3d(a: &ObjectState, b: &ObjectState) -> Real {
    if a == b {
        return 1.0;
    }
    let zo = (a.z + a.h / 2.0).min(b.z + b.h / 2.0) - (a.z - a.h / 2.0).max(b.z - b.h / 2.0);
    if zo <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * zo;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// Euclidean distance of the 3D centres.
    #[serde(rename = "3d")]
    Full,
    /// Distance in the x-y plane only.
    Bev,
}

pub fn center_distance(a: &ObjectState, b: &ObjectState) -> Real {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

pub fn bev_distance(a: &ObjectState, b: &ObjectState) -> Real {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub success_thresholds: usize,
    pub precision_thresholds: usize,
    pub precision_max_distance: Real,
    pub distance: DistanceMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            success_thresholds: 101,
            precision_thresholds: 21,
            precision_max_distance: 2.0,
            distance: DistanceMode::Full,
        }
    }
}

fn sample_points(n: usize, max: Real) -> Vec<Real> {
    if n == 1 {
        return vec![max];
    }
    (0..n).map(|k| max * k as Real / (n - 1) as Real).collect()
}

/// Success plot: for each IoU threshold, the fraction of frames whose IoU
/// exceeds it. An exact match (IoU = 1) also counts at the top threshold.
pub fn success_curve(ious: &[Real], thresholds: usize) -> Vec<(Real, Real)> {
    let n = ious.len().max(1) as Real;
    sample_points(thresholds, 1.0)
        .into_iter()
        .map(|tau| {
            let hit = ious.iter().filter(|&&v| v > tau || v >= 1.0).count();
            (tau, hit as Real / n)
        })
        .collect()
}

/// Precision plot: for each distance threshold, the fraction of frames
/// within it.
pub fn precision_curve(distances: &[Real], thresholds: usize, max_distance: Real) -> Vec<(Real, Real)> {
    let n = distances.len().max(1) as Real;
    sample_points(thresholds, max_distance)
        .into_iter()
        .map(|d| {
            let hit = distances.iter().filter(|&&v| v <= d).count();
            (d, hit as Real / n)
        })
        .collect()
}

fn curve_mean(curve: &[(Real, Real)]) -> Real {
    100.0 * curve.iter().map(|(_, f)| f).sum::<Real>() / curve.len() as Real
}

impl TrackRun {
    pub fn ious(&self) -> Vec<Real> {
        self.predictions
            .iter()
            .zip(&self.ground_truths)
            .map(|(p, g)| iou3d(p, g))
            .collect()
    }

    pub fn distances(&self, mode: DistanceMode) -> Vec<Real> {
        self.predictions
            .iter()
            .zip(&self.ground_truths)
            .map(|(p, g)| match mode {
                DistanceMode::Full => center_distance(p, g),
                DistanceMode::Bev => bev_distance(p, g),
            })
            .collect()
    }

    pub fn success_curve(&self, cfg: &MetricConfig) -> Vec<(Real, Real)> {
        success_curve(&self.ious(), cfg.success_thresholds)
    }

    pub fn precision_curve(&self, cfg: &MetricConfig) -> Vec<(Real, Real)> {
        precision_curve(&self.distances(cfg.distance), cfg.precision_thresholds, cfg.precision_max_distance)
    }
}

/// Success as a percentage: mean of the success-curve samples.
pub fn ope_success(run: &TrackRun, cfg: &MetricConfig) -> Real {
    curve_mean(&run.success_curve(cfg))
}

/// Precision as a percentage: mean of the precision-curve samples.
pub fn ope_precision(run: &TrackRun, cfg: &MetricConfig) -> Real {
    curve_mean(&run.precision_curve(cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub success: Real,
    pub precision: Real,
    pub frames: usize,
}

impl Score {
    pub fn of(run: &TrackRun, cfg: &MetricConfig) -> Self {
        Score {
            success: ope_success(run, cfg),
            precision: ope_precision(run, cfg),
            frames: run.len(),
        }
    }
}

/// Frame-weighted mean of per-run (or per-category) scores.
pub fn aggregate(scores: &[Score]) -> Option<Score> {
    let frames: usize = scores.iter().map(|s| s.frames).sum();
    if frames == 0 {
        return None;
    }
    let w = |f: fn(&Score) -> Real| scores.iter().map(|s| f(s) * s.frames as Real).sum::<Real>() / frames as Real;
    Some(Score {
        success: w(|s| s.success),
        precision: w(|s| s.precision),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cubes_offset_half() {
        let a = ObjectState::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = ObjectState { x: 0.5, ..a };
        assert!((iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_is_zero() {
        let a = ObjectState::new(0.0, 0.0, 0.0, 1.9, 4.5, 1.6, 0.3);
        let b = ObjectState { x: 100.0, ..a };
        assert_eq!(iou3d(&a, &b), 0.0);
    }

    #[test]
    fn clip_of_square_by_itself() {
        let a = ObjectState::new(1.0, 2.0, 0.0, 2.0, 2.0, 1.0, 0.7);
        assert!((bev_intersection(&a, &a) - 4.0).abs() < 1e-12);
    }
}
