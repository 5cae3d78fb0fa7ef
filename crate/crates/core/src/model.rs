//! Parameter layout of the tracker network and its initialization.

use crate::error::{Result, TrackError};
use crate::pillars::{GridSpec, PointNetParams, DECORATED_DIM};
use diffcore::{ParamId, ParamStore, Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Where cross-attention from template to search happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    /// At the end of every stage.
    Multi,
    /// Only at the end of the last stage.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Template features are never touched by the search branch.
    TemplateToSearch,
    /// Each stage also attends from template queries to search keys.
    Bidirectional,
}

/// Statistics the point-embedding BatchNorm uses when tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BnInference {
    /// Statistics of the current template and search points, as in training.
    Sample,
    /// The running averages accumulated during training.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub grid: GridSpec,
    pub feature_dim: usize,
    pub stages: usize,
    pub dense_stages: bool,
    pub dense_localization: bool,
    pub correlation: Correlation,
    pub fusion: Fusion,
    /// Deep-supervision branches reuse the main localization weights.
    pub shared_deep_heads: bool,
    /// Whether deep-supervision branches exist at all.
    pub deep_supervision: bool,
    pub bn_eps: Real,
    pub bn_momentum: Real,
    pub bn_inference: BnInference,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            grid: GridSpec::default(),
            feature_dim: 128,
            stages: 2,
            dense_stages: true,
            dense_localization: true,
            correlation: Correlation::Multi,
            fusion: Fusion::TemplateToSearch,
            shared_deep_heads: true,
            deep_supervision: true,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            bn_inference: BnInference::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Bias-free query/key/value projections.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct StageParams {
    pub pos1: LinearParams,
    pub pos2: LinearParams,
    pub sa: AttentionParams,
    /// Search queries over template keys; absent on stages without correlation.
    pub ca: Option<AttentionParams>,
    /// Template queries over search keys; only with bidirectional fusion.
    pub ca_template: Option<AttentionParams>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub conv: LinearParams,
    pub out: LinearParams,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalizationParams {
    pub convs: [LinearParams; 3],
    pub center: HeadParams,
    pub offrot: HeadParams,
    pub z: HeadParams,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub pnet: PointNetParams,
    pub stages: Vec<StageParams>,
    pub loc: LocalizationParams,
    /// Per-stage localization weights for deep supervision when they are not
    /// shared with the main branch; indexed like the supervised stages.
    pub deep_loc: Vec<LocalizationParams>,
}

/// Initial heatmap bias: sigmoid(-2.19) is about 0.1, a sparse-peak prior.
const HEATMAP_PRIOR_BIAS: Real = -2.19;

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: Real) -> Result<ParamId> {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        Ok(self.store.add_param(name, t)?)
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, v: Real) -> Result<ParamId> {
        Ok(self.store.add_param(name, Tensor::full(shape, v))?)
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<LinearParams> {
        let bound = (6.0 / (fan_in + fan_out) as Real).sqrt();
        Ok(LinearParams {
            weight: self.uniform(format!("{prefix}.weight"), vec![fan_in, fan_out], bound)?,
            bias: self.constant(format!("{prefix}.bias"), vec![fan_out], 0.0)?,
        })
    }

    fn attention(&mut self, prefix: &str, c: usize) -> Result<AttentionParams> {
        let bound = (3.0 / c as Real).sqrt();
        Ok(AttentionParams {
            wq: self.uniform(format!("{prefix}.wq"), vec![c, c], bound)?,
            wk: self.uniform(format!("{prefix}.wk"), vec![c, c], bound)?,
            wv: self.uniform(format!("{prefix}.wv"), vec![c, c], bound)?,
        })
    }

    fn conv3x3(&mut self, prefix: &str, cin: usize, cout: usize) -> Result<LinearParams> {
        let bound = (6.0 / (cin * 9) as Real).sqrt();
        Ok(LinearParams {
            weight: self.uniform(format!("{prefix}.weight"), vec![cout, cin, 3, 3], bound)?,
            bias: self.constant(format!("{prefix}.bias"), vec![cout], 0.0)?,
        })
    }

    fn conv1x1(&mut self, prefix: &str, cin: usize, cout: usize, bias: Real) -> Result<LinearParams> {
        let bound = (3.0 / cin as Real).sqrt();
        Ok(LinearParams {
            weight: self.uniform(format!("{prefix}.weight"), vec![cout, cin], bound)?,
            bias: self.constant(format!("{prefix}.bias"), vec![cout], bias)?,
        })
    }

    fn head(&mut self, prefix: &str, c: usize, out: usize, bias: Real) -> Result<HeadParams> {
        Ok(HeadParams {
            conv: self.conv3x3(&format!("{prefix}.conv"), c, c)?,
            out: self.conv1x1(&format!("{prefix}.out"), c, out, bias)?,
        })
    }

    fn localization(&mut self, prefix: &str, c: usize) -> Result<LocalizationParams> {
        Ok(LocalizationParams {
            convs: [
                self.conv3x3(&format!("{prefix}.conv0"), c, c)?,
                self.conv3x3(&format!("{prefix}.conv1"), c, c)?,
                self.conv3x3(&format!("{prefix}.conv2"), c, c)?,
            ],
            center: self.head(&format!("{prefix}.center"), c, 1, HEATMAP_PRIOR_BIAS)?,
            offrot: self.head(&format!("{prefix}.offrot"), c, 3, 0.0)?,
            z: self.head(&format!("{prefix}.z"), c, 1, 0.0)?,
        })
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(TrackError::Config("feature_dim must be positive".into()));
        }
        if self.stages == 0 {
            return Err(TrackError::Config("stages must be at least 1".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(TrackError::Config("batchnorm eps must be positive and momentum in [0, 1]".into()));
        }
        Ok(())
    }

    /// Stage indices (0-based) whose outputs receive deep supervision: every
    /// stage but the last, whose output already feeds the main loss.
    pub fn deep_stages(&self) -> std::ops::Range<usize> {
        if self.deep_supervision {
            0..self.stages - 1
        } else {
            0..0
        }
    }

    pub fn correlates_at(&self, stage: usize) -> bool {
        match self.correlation {
            Correlation::Multi => true,
            Correlation::Single => stage + 1 == self.stages,
        }
    }
}

impl Network {
    /// Registers every parameter the configured variant uses, so an unused
    /// tensor never silently misses a gradient.
    pub fn new(config: NetworkConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.feature_dim;
        let mut init = Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let lin = init.linear("pnet.linear", DECORATED_DIM, c)?;
        let gamma = init.constant("pnet.bn.gamma".into(), vec![c], 1.0)?;
        let beta = init.constant("pnet.bn.beta".into(), vec![c], 0.0)?;
        let running_mean = init.store.add_buffer("pnet.bn.running_mean", Tensor::zeros([c]))?;
        let running_var = init.store.add_buffer("pnet.bn.running_var", Tensor::full([c], 1.0))?;
        let pnet = PointNetParams {
            weight: lin.weight,
            bias: lin.bias,
            gamma,
            beta,
            running_mean,
            running_var,
            eps: config.bn_eps,
            momentum: config.bn_momentum,
        };
        let mut stages = Vec::with_capacity(config.stages);
        for s in 0..config.stages {
            let p = format!("stage{s}");
            let correlate = config.correlates_at(s);
            stages.push(StageParams {
                pos1: init.linear(&format!("{p}.pos.l1"), 3, c)?,
                pos2: init.linear(&format!("{p}.pos.l2"), c, c)?,
                sa: init.attention(&format!("{p}.sa"), c)?,
                ca: if correlate { Some(init.attention(&format!("{p}.ca"), c)?) } else { None },
                ca_template: if correlate && config.fusion == Fusion::Bidirectional {
                    Some(init.attention(&format!("{p}.ca_t"), c)?)
                } else {
                    None
                },
            });
        }
        let loc = init.localization("loc", c)?;
        let mut deep_loc = Vec::new();
        if !config.shared_deep_heads {
            for s in config.deep_stages() {
                deep_loc.push(init.localization(&format!("deep{s}"), c)?);
            }
        }
        Ok(Network {
            config,
            pnet,
            stages,
            loc,
            deep_loc,
        })
    }

    /// Localization weights used for the deep-supervision branch of `stage`.
    pub fn deep_localization(&self, stage: usize) -> &LocalizationParams {
        if self.config.shared_deep_heads {
            &self.loc
        } else {
            &self.deep_loc[stage]
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }
}
