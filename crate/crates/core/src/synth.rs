//! Synthetic tracklets: box-surface points on a moving target plus uniform
//! clutter, with exact ground truth.

use crate::error::{Result, TrackError};
use crate::geometry::{normalize_angle, ObjectState, Point};
use crate::tracker::Frame;
use crate::train::Tracklet;
use diffcore::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Distribution the per-tracklet specs are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub tracklets: usize,
    pub frames: usize,
    pub category: String,
    pub width: Real,
    pub length: Real,
    pub height: Real,
    /// Relative size perturbation per tracklet, uniform in `±size_jitter`.
    pub size_jitter: Real,
    pub speed_min: Real,
    pub speed_max: Real,
    /// Per-frame yaw change, drawn once per tracklet from `±yaw_rate_max`.
    pub yaw_rate_max: Real,
    pub position_noise: Real,
    pub yaw_noise: Real,
    pub surface_points: usize,
    pub clutter_points: usize,
    pub clutter_radius: Real,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tracklets: 5,
            frames: 20,
            category: "car".into(),
            width: 1.9,
            length: 4.5,
            height: 1.6,
            size_jitter: 0.05,
            speed_min: 0.05,
            speed_max: 0.2,
            yaw_rate_max: 0.02,
            position_noise: 0.02,
            yaw_noise: 0.005,
            surface_points: 200,
            clutter_points: 150,
            clutter_radius: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(TrackError::Config(format!("synthetic data: {m}")));
        if self.frames < 2 {
            return err("need at least 2 frames per tracklet");
        }
        if !(self.width > 0.0 && self.length > 0.0 && self.height > 0.0) {
            return err("box size must be positive");
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return err("size_jitter must lie in [0, 1)");
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return err("need 0 <= speed_min <= speed_max");
        }
        for v in [self.yaw_rate_max, self.position_noise, self.yaw_noise, self.clutter_radius] {
            if !(v >= 0.0 && v.is_finite()) {
                return err("noise, yaw rate and clutter radius must be non-negative");
            }
        }
        if self.surface_points == 0 {
            return err("surface_points must be positive");
        }
        Ok(())
    }

    /// Draws the concrete motion and shape of one tracklet.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TrackletSpec {
        let jitter = |rng: &mut R| {
            if self.size_jitter > 0.0 {
                1.0 + rng.gen_range(-self.size_jitter..=self.size_jitter)
            } else {
                1.0
            }
        };
        let w = self.width * jitter(rng);
        let l = self.length * jitter(rng);
        let h = self.height * jitter(rng);
        let start = ObjectState::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            h / 2.0 - 1.0,
            w,
            l,
            h,
            rng.gen_range(-PI..PI) as Real,
        );
        let speed = if self.speed_max > self.speed_min {
            rng.gen_range(self.speed_min..=self.speed_max)
        } else {
            self.speed_min
        };
        let yaw_rate = if self.yaw_rate_max > 0.0 {
            rng.gen_range(-self.yaw_rate_max..=self.yaw_rate_max)
        } else {
            0.0
        };
        TrackletSpec {
            frames: self.frames,
            start,
            speed,
            yaw_rate,
            position_noise: self.position_noise,
            yaw_noise: self.yaw_noise,
            surface_points: self.surface_points,
            clutter_points: self.clutter_points,
            clutter_radius: self.clutter_radius,
        }
    }
}

/// Fully specified motion and sampling parameters of one tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletSpec {
    pub frames: usize,
    pub start: ObjectState,
    /// Metres per frame along the heading.
    pub speed: Real,
    /// Radians per frame.
    pub yaw_rate: Real,
    /// Half-width of the uniform per-frame x/y jitter added to the motion.
    pub position_noise: Real,
    pub yaw_noise: Real,
    pub surface_points: usize,
    pub clutter_points: usize,
    pub clutter_radius: Real,
}

/// Surface points sit this far inside the box so they survive containment
/// tests against the exact box.
const SURFACE_INSET: Real = 0.01;

fn uniform<R: Rng + ?Sized>(rng: &mut R, half: Real) -> Real {
    if half > 0.0 {
        rng.gen_range(-half..=half)
    } else {
        0.0
    }
}

/// Points on the top and the four side faces, area-weighted.
pub fn sample_surface<R: Rng + ?Sized>(bx: &ObjectState, n: usize, rng: &mut R) -> Vec<Point> {
    let (hl, hw, hh) = (
        bx.l / 2.0 - SURFACE_INSET,
        bx.w / 2.0 - SURFACE_INSET,
        bx.h / 2.0 - SURFACE_INSET,
    );
    let areas = [4.0 * hl * hw, 4.0 * hw * hh, 4.0 * hw * hh, 4.0 * hl * hh, 4.0 * hl * hh];
    let total: Real = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 0;
            while face < 4 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let (u, v) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            let local = match face {
                0 => [u * hl, v * hw, hh],
                1 => [hl, u * hw, v * hh],
                2 => [-hl, u * hw, v * hh],
                3 => [u * hl, hw, v * hh],
                _ => [u * hl, -hw, v * hh],
            };
            bx.from_local(local)
        })
        .collect()
}

/// Uniform points in a square column around the box, outside the box itself.
pub fn sample_clutter<R: Rng + ?Sized>(bx: &ObjectState, n: usize, radius: Real, rng: &mut R) -> Vec<Point> {
    let (z_lo, z_hi) = (bx.z - bx.h / 2.0, bx.z + bx.h / 2.0 + 1.0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [
            bx.x + uniform(rng, radius),
            bx.y + uniform(rng, radius),
            rng.gen_range(z_lo..z_hi),
        ];
        if !bx.contains(p, 0.1) {
            out.push(p);
        }
    }
    out
}

/// Ground-truth states following constant speed and yaw rate plus jitter.
pub fn trajectory<R: Rng + ?Sized>(spec: &TrackletSpec, rng: &mut R) -> Vec<ObjectState> {
    let mut states = Vec::with_capacity(spec.frames);
    let mut s = spec.start;
    for _ in 0..spec.frames {
        states.push(s);
        let (sin, cos) = s.theta.sin_cos();
        s.x += spec.speed * cos + uniform(rng, spec.position_noise);
        s.y += spec.speed * sin + uniform(rng, spec.position_noise);
        s.theta = normalize_angle(s.theta + spec.yaw_rate + uniform(rng, spec.yaw_noise));
    }
    states
}

pub fn gen_synthetic_tracklet<R: Rng + ?Sized>(spec: &TrackletSpec, rng: &mut R) -> Vec<Frame> {
    trajectory(spec, rng)
        .into_iter()
        .map(|gt| {
            let mut points = sample_surface(&gt, spec.surface_points, rng);
            points.extend(sample_clutter(&gt, spec.clutter_points, spec.clutter_radius, rng));
            Frame { points, gt: Some(gt) }
        })
        .collect()
}

/// `cfg.tracklets` tracklets named `{prefix}{k:03}`, each from its own seed
/// drawn in order from `seed`.
pub fn generate_tracklets(cfg: &SynthConfig, seed: u64, prefix: &str) -> Vec<Tracklet> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.tracklets)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
            let spec = cfg.draw(&mut rng);
            Tracklet {
                id: format!("{prefix}{k:03}"),
                category: cfg.category.clone(),
                frames: gen_synthetic_tracklet(&spec, &mut rng),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_points_lie_on_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bx = ObjectState::new(1.0, 2.0, 0.0, 1.9, 4.5, 1.6, 0.4);
        for p in sample_surface(&bx, 500, &mut rng) {
            assert!(bx.contains(p, 0.0));
            assert!(!bx.contains(p, -0.02));
        }
    }
}
