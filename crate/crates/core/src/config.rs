//! Flat `key = value` run configuration with validation.

use crate::error::{Result, TrackError};
use crate::loss::LossWeights;
use crate::metrics::{DistanceMode, MetricConfig};
use crate::model::{BnInference, Correlation, Fusion, NetworkConfig};
use crate::pillars::GridSpec;
use crate::synth::SynthConfig;
use crate::tracker::{SampleSpec, ShiftSpec};
use diffcore::{AdamConfig, Real};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    pub template_points: usize,
    pub search_points: usize,
    pub cell_size: Real,
    pub x_min: Real,
    pub x_max: Real,
    pub y_min: Real,
    pub y_max: Real,
    pub z_min: Real,
    pub z_max: Real,

    pub feature_dim: usize,
    pub stages: usize,
    pub dense_stages: bool,
    pub dense_localization: bool,
    pub correlation: Correlation,
    pub fusion: Fusion,
    pub shared_deep_heads: bool,
    pub bn_eps: Real,
    pub bn_momentum: Real,
    pub bn_inference: BnInference,

    pub lambda1: Real,
    pub lambda2: Real,
    pub alpha: Real,

    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub learning_rate: Real,
    pub adam_beta1: Real,
    pub adam_beta2: Real,
    pub adam_eps: Real,
    /// Worker threads for per-sample gradients; 0 uses all cores.
    pub workers: usize,

    pub shift_xy: Real,
    pub shift_z: Real,
    pub shift_yaw: Real,
    pub search_enlarge: Real,

    pub success_thresholds: usize,
    pub precision_thresholds: usize,
    pub precision_max_distance: Real,
    pub precision_distance: DistanceMode,

    pub synth_tracklets: usize,
    pub synth_frames: usize,
    pub synth_category: String,
    pub synth_width: Real,
    pub synth_length: Real,
    pub synth_height: Real,
    pub synth_size_jitter: Real,
    pub synth_speed_min: Real,
    pub synth_speed_max: Real,
    pub synth_yaw_rate_max: Real,
    pub synth_position_noise: Real,
    pub synth_yaw_noise: Real,
    pub synth_surface_points: usize,
    pub synth_clutter_points: usize,
    pub synth_clutter_radius: Real,
}

impl Default for Config {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Config {
            seed: 0,
            template_points: 512,
            search_points: 1024,
            cell_size: 0.3,
            x_min: -4.8,
            x_max: 4.8,
            y_min: -4.8,
            y_max: 4.8,
            z_min: -1.5,
            z_max: 1.5,
            feature_dim: 128,
            stages: 2,
            dense_stages: true,
            dense_localization: true,
            correlation: Correlation::Multi,
            fusion: Fusion::TemplateToSearch,
            shared_deep_heads: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            bn_inference: BnInference::Sample,
            lambda1: 1.0,
            lambda2: 2.0,
            alpha: 0.1,
            batch_size: 32,
            epochs: 40,
            max_steps: 0,
            checkpoint_every: 0,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            workers: 0,
            shift_xy: 0.3,
            shift_z: 0.1,
            shift_yaw: 0.1,
            search_enlarge: 2.0,
            success_thresholds: 101,
            precision_thresholds: 21,
            precision_max_distance: 2.0,
            precision_distance: DistanceMode::Full,
            synth_tracklets: synth.tracklets,
            synth_frames: synth.frames,
            synth_category: synth.category,
            synth_width: synth.width,
            synth_length: synth.length,
            synth_height: synth.height,
            synth_size_jitter: synth.size_jitter,
            synth_speed_min: synth.speed_min,
            synth_speed_max: synth.speed_max,
            synth_yaw_rate_max: synth.yaw_rate_max,
            synth_position_noise: synth.position_noise,
            synth_yaw_noise: synth.yaw_noise,
            synth_surface_points: synth.surface_points,
            synth_clutter_points: synth.clutter_points,
            synth_clutter_radius: synth.clutter_radius,
        }
    }
}

fn bad(msg: String) -> TrackError {
    TrackError::Config(msg)
}

fn positive(name: &str, v: Real) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {v}")))
    }
}

fn non_negative(name: &str, v: Real) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be non-negative and finite, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(format!("{name} must be at least {min}, got {v}")))
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| bad(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrackError::io(path, e))?;
        Config::from_toml_str(&text).map_err(|e| match e {
            TrackError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        at_least("template_points", self.template_points, 1)?;
        at_least("search_points", self.search_points, 1)?;
        self.grid()?;
        at_least("feature_dim", self.feature_dim, 1)?;
        at_least("stages", self.stages, 1)?;
        positive("bn_eps", self.bn_eps)?;
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(bad(format!("bn_momentum must lie in [0, 1], got {}", self.bn_momentum)));
        }
        non_negative("lambda1", self.lambda1)?;
        non_negative("lambda2", self.lambda2)?;
        non_negative("alpha", self.alpha)?;
        at_least("batch_size", self.batch_size, 1)?;
        at_least("epochs", self.epochs, 1)?;
        non_negative("learning_rate", self.learning_rate)?;
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        positive("adam_eps", self.adam_eps)?;
        non_negative("shift_xy", self.shift_xy)?;
        non_negative("shift_z", self.shift_z)?;
        non_negative("shift_yaw", self.shift_yaw)?;
        non_negative("search_enlarge", self.search_enlarge)?;
        at_least("success_thresholds", self.success_thresholds, 2)?;
        at_least("precision_thresholds", self.precision_thresholds, 2)?;
        positive("precision_max_distance", self.precision_max_distance)?;
        self.synth().validate()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.cell_size,
            (self.x_min, self.x_max),
            (self.y_min, self.y_max),
            (self.z_min, self.z_max),
        )
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            grid: self.grid().expect("validated grid"),
            feature_dim: self.feature_dim,
            stages: self.stages,
            dense_stages: self.dense_stages,
            dense_localization: self.dense_localization,
            correlation: self.correlation,
            fusion: self.fusion,
            shared_deep_heads: self.shared_deep_heads,
            deep_supervision: self.alpha > 0.0,
            bn_eps: self.bn_eps,
            bn_momentum: self.bn_momentum,
            bn_inference: self.bn_inference,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            alpha: self.alpha,
        }
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            template_points: self.template_points,
            search_points: self.search_points,
            search_enlarge: self.search_enlarge,
            shift: ShiftSpec {
                xy: self.shift_xy,
                z: self.shift_z,
                yaw: self.shift_yaw,
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn metrics(&self) -> MetricConfig {
        MetricConfig {
            success_thresholds: self.success_thresholds,
            precision_thresholds: self.precision_thresholds,
            precision_max_distance: self.precision_max_distance,
            distance: self.precision_distance,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            tracklets: self.synth_tracklets,
            frames: self.synth_frames,
            category: self.synth_category.clone(),
            width: self.synth_width,
            length: self.synth_length,
            height: self.synth_height,
            size_jitter: self.synth_size_jitter,
            speed_min: self.synth_speed_min,
            speed_max: self.synth_speed_max,
            yaw_rate_max: self.synth_yaw_rate_max,
            position_noise: self.synth_position_noise,
            yaw_noise: self.synth_yaw_noise,
            surface_points: self.synth_surface_points,
            clutter_points: self.synth_clutter_points,
            clutter_radius: self.synth_clutter_radius,
        }
    }
}
