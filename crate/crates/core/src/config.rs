//! Experiment configuration: a TOML file with flat, typed keys grouped
//! into sections. Every output artifact embeds the config hash so a run
//! is exactly replayable. The grammar is documented in the README; see
//! `ExperimentConfig` for the full key list and defaults.

use serde::{Deserialize, Serialize};

use crate::augment::{self, ClipConfig, StatsEstimator};
use crate::classifiers::TrainConfig;
use crate::envs::{self, BehaviorSpec};
use crate::error::{Error, Result};
use crate::eval::{MatrixSpec, Method};
use crate::mdp::{fnv1a64_hex, TabularMdp};
use crate::shift::{ShiftKind, ShiftSpec};

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// builtin environment name: chain_walk | chain_walk_uniform_start | random
    pub name: String,
    #[serde(default = "EnvSection::default_states")]
    pub num_states: usize,
    #[serde(default = "EnvSection::default_actions")]
    pub num_actions: usize,
    #[serde(default = "EnvSection::default_horizon")]
    pub horizon: usize,
    #[serde(default = "EnvSection::default_success")]
    pub success_prob: f64,
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default = "EnvSection::default_levels")]
    pub reward_levels: i64,
    #[serde(default = "default_one")]
    pub reward_grid: f64,
}

impl EnvSection {
    fn default_states() -> usize {
        5
    }
    fn default_actions() -> usize {
        2
    }
    fn default_horizon() -> usize {
        5
    }
    fn default_success() -> f64 {
        0.9
    }
    fn default_levels() -> i64 {
        2
    }

    pub fn build(&self) -> Result<TabularMdp> {
        match self.name.as_str() {
            "chain_walk" => envs::chain_walk(self.num_states, self.horizon, self.success_prob),
            "chain_walk_uniform_start" => {
                envs::chain_walk_uniform_start(self.num_states, self.horizon, self.success_prob)
            }
            "random" => envs::random_mdp(
                self.num_states,
                self.num_actions,
                self.horizon,
                self.env_seed,
                self.reward_levels,
                self.reward_grid,
            ),
            other => Err(Error::Config {
                key: "env.name".into(),
                reason: format!("unknown builtin environment `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSection {
    pub kind: String,
    pub magnitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ShiftSection {
    pub fn build(&self) -> Result<ShiftSpec> {
        let spec = ShiftSpec {
            kind: ShiftKind::parse(&self.kind).map_err(|e| Error::Config {
                key: "shift.kind".into(),
                reason: e.to_string(),
            })?,
            magnitude: self.magnitude,
            seed: self.seed,
        };
        spec.validate().map_err(|e| Error::Config {
            key: "shift.magnitude".into(),
            reason: e.to_string(),
        })?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetsSection {
    pub n_target_small: usize,
    pub n_target_large: usize,
    pub n_source: usize,
}

impl Default for DatasetsSection {
    fn default() -> Self {
        Self {
            n_target_small: 50,
            n_target_large: 500,
            n_source: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorSection {
    /// uniform | epsilon_greedy
    pub kind: String,
    #[serde(default)]
    pub epsilon: f64,
}

impl Default for BehaviorSection {
    fn default() -> Self {
        Self {
            kind: "uniform".into(),
            epsilon: 0.0,
        }
    }
}

impl BehaviorSection {
    pub fn build(&self) -> Result<BehaviorSpec> {
        match self.kind.as_str() {
            "uniform" => Ok(BehaviorSpec::Uniform),
            "epsilon_greedy" => {
                if !(0.0..=1.0).contains(&self.epsilon) {
                    return Err(Error::Config {
                        key: "behavior.epsilon".into(),
                        reason: format!("must lie in [0, 1], got {}", self.epsilon),
                    });
                }
                Ok(BehaviorSpec::EpsilonGreedy {
                    epsilon: self.epsilon,
                })
            }
            other => Err(Error::Config {
                key: "behavior.kind".into(),
                reason: format!("unknown behavior policy `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    #[serde(default = "AugmentSection::default_eta")]
    pub eta: f64,
    #[serde(default = "AugmentSection::default_clip_lo")]
    pub clip_lo: f64,
    #[serde(default = "AugmentSection::default_clip_hi")]
    pub clip_hi: f64,
    #[serde(default = "AugmentSection::default_sigma_floor")]
    pub sigma_floor: f64,
    #[serde(default = "AugmentSection::default_dr_clamp")]
    pub dr_clamp: f64,
    /// exact_dp | fitted_value | trajectory_empirical
    #[serde(default = "AugmentSection::default_estimator")]
    pub estimator: String,
    #[serde(default = "AugmentSection::default_n_action_samples")]
    pub n_action_samples: usize,
    #[serde(default = "default_one")]
    pub softmax_temp: f64,
    /// 0 means "use the reward grid"
    #[serde(default)]
    pub bin_width: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            eta: Self::default_eta(),
            clip_lo: Self::default_clip_lo(),
            clip_hi: Self::default_clip_hi(),
            sigma_floor: Self::default_sigma_floor(),
            dr_clamp: Self::default_dr_clamp(),
            estimator: Self::default_estimator(),
            n_action_samples: Self::default_n_action_samples(),
            softmax_temp: 1.0,
            bin_width: 0.0,
        }
    }
}

impl AugmentSection {
    fn default_eta() -> f64 {
        augment::DEFAULT_ETA
    }
    fn default_clip_lo() -> f64 {
        augment::DEFAULT_CLIP_LO
    }
    fn default_clip_hi() -> f64 {
        augment::DEFAULT_CLIP_HI
    }
    fn default_sigma_floor() -> f64 {
        augment::DEFAULT_SIGMA_FLOOR
    }
    fn default_dr_clamp() -> f64 {
        augment::DEFAULT_DR_CLAMP
    }
    fn default_estimator() -> String {
        "fitted_value".into()
    }
    fn default_n_action_samples() -> usize {
        32
    }

    pub fn clip(&self) -> Result<ClipConfig> {
        let clip = ClipConfig {
            theta_lo: self.clip_lo,
            theta_hi: self.clip_hi,
            sigma_floor: self.sigma_floor,
        };
        clip.validate().map_err(|e| Error::Config {
            key: "augment.clip_lo".into(),
            reason: e.to_string(),
        })?;
        Ok(clip)
    }

    pub fn estimator(&self) -> Result<StatsEstimator> {
        match self.estimator.as_str() {
            "exact_dp" => Ok(StatsEstimator::ExactDp),
            "fitted_value" => Ok(StatsEstimator::FittedValue),
            "trajectory_empirical" => Ok(StatsEstimator::TrajectoryEmpirical),
            other => Err(Error::Config {
                key: "augment.estimator".into(),
                reason: format!("unknown estimator `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "ClassifierSection::default_lr")]
    pub lr: f64,
    #[serde(default = "ClassifierSection::default_epochs")]
    pub epochs: usize,
    #[serde(default = "ClassifierSection::default_batch")]
    pub batch: usize,
    #[serde(default = "ClassifierSection::default_l2")]
    pub l2: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            epochs: Self::default_epochs(),
            batch: Self::default_batch(),
            l2: Self::default_l2(),
        }
    }
}

impl ClassifierSection {
    fn default_lr() -> f64 {
        TrainConfig::default().lr
    }
    fn default_epochs() -> usize {
        TrainConfig::default().epochs
    }
    fn default_batch() -> usize {
        TrainConfig::default().batch
    }
    fn default_l2() -> f64 {
        TrainConfig::default().l2
    }

    pub fn build(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            seed: 0,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    /// tabular | neural
    #[serde(default = "LearnerSection::default_kind")]
    pub kind: String,
    #[serde(default = "LearnerSection::default_alpha")]
    pub alpha: f64,
    #[serde(default = "LearnerSection::default_hidden")]
    pub hidden: usize,
    #[serde(default = "LearnerSection::default_lr")]
    pub lr: f64,
    #[serde(default = "LearnerSection::default_epochs")]
    pub epochs: usize,
    #[serde(default = "LearnerSection::default_batch")]
    pub batch: usize,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            kind: Self::default_kind(),
            alpha: Self::default_alpha(),
            hidden: Self::default_hidden(),
            lr: Self::default_lr(),
            epochs: Self::default_epochs(),
            batch: Self::default_batch(),
        }
    }
}

impl LearnerSection {
    fn default_kind() -> String {
        "tabular".into()
    }
    fn default_alpha() -> f64 {
        0.05
    }
    fn default_hidden() -> usize {
        64
    }
    fn default_lr() -> f64 {
        3e-4
    }
    fn default_epochs() -> usize {
        200
    }
    fn default_batch() -> usize {
        64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "EvalSection::default_quantiles")]
    pub f_quantiles: Vec<f64>,
    #[serde(default = "EvalSection::default_rollouts")]
    pub n_rollouts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            f_quantiles: Self::default_quantiles(),
            n_rollouts: Self::default_rollouts(),
        }
    }
}

impl EvalSection {
    fn default_quantiles() -> Vec<f64> {
        vec![0.5, 0.9, 1.0]
    }
    fn default_rollouts() -> usize {
        400
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "RunSection::default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "RunSection::default_output")]
    pub output_dir: String,
    /// method name list; empty means all seven cells
    #[serde(default)]
    pub methods: Vec<String>,
    /// rate-study sample-size grid
    #[serde(default = "RunSection::default_n_grid")]
    pub n_grid: Vec<usize>,
    /// worker cap; 0 = available cores
    #[serde(default)]
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: Self::default_seeds(),
            root_seed: 0,
            output_dir: Self::default_output(),
            methods: Vec::new(),
            n_grid: Self::default_n_grid(),
            jobs: 0,
        }
    }
}

impl RunSection {
    fn default_seeds() -> Vec<u64> {
        (1..=20).collect()
    }
    fn default_output() -> String {
        "out".into()
    }
    fn default_n_grid() -> Vec<usize> {
        vec![200, 800, 3200, 12800]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub shift: ShiftSection,
    #[serde(default)]
    pub datasets: DatasetsSection,
    #[serde(default)]
    pub behavior: BehaviorSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            key: "<config>".into(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            key: "<config>".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml(&text)
    }

    /// Hash of the canonical re-serialized form: formatting-insensitive,
    /// value-sensitive.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config re-serializes");
        fnv1a64_hex(canonical.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.n_target_small == 0 {
            return Err(Error::Config {
                key: "datasets.n_target_small".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.datasets.n_source == 0 {
            return Err(Error::Config {
                key: "datasets.n_source".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config {
                key: "run.seeds".into(),
                reason: "need at least one seed".into(),
            });
        }
        if self.eval.n_rollouts == 0 {
            return Err(Error::Config {
                key: "eval.n_rollouts".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self
            .eval
            .f_quantiles
            .iter()
            .any(|q| !(0.0..=1.0).contains(q))
        {
            return Err(Error::Config {
                key: "eval.f_quantiles".into(),
                reason: "quantiles must lie in [0, 1]".into(),
            });
        }
        match self.learner.kind.as_str() {
            "tabular" | "neural" => {}
            other => {
                return Err(Error::Config {
                    key: "learner.kind".into(),
                    reason: format!("unknown learner `{other}`"),
                })
            }
        }
        self.env.build()?;
        self.shift.build()?;
        self.behavior.build()?;
        self.augment.clip()?;
        self.augment.estimator()?;
        Ok(())
    }

    /// Resolve into the runnable matrix spec. `root_seed_override` wins
    /// over the config value (used for the env-var hook).
    pub fn matrix_spec(&self, root_seed_override: Option<u64>) -> Result<MatrixSpec> {
        self.validate()?;
        let methods = if self.run.methods.is_empty() {
            Method::ALL.to_vec()
        } else {
            self.run
                .methods
                .iter()
                .map(|m| Method::parse(m))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(MatrixSpec {
            target: self.env.build()?,
            shift: self.shift.build()?,
            behavior: self.behavior.build()?,
            n_target_small: self.datasets.n_target_small,
            n_target_large: self.datasets.n_target_large,
            n_source: self.datasets.n_source,
            eta: self.augment.eta,
            dr_clamp: self.augment.dr_clamp,
            classifier_cfg: self.classifier.build(),
            clip: self.augment.clip()?,
            estimator: self.augment.estimator()?,
            n_action_samples: self.augment.n_action_samples,
            softmax_temp: self.augment.softmax_temp,
            bin_width: (self.augment.bin_width > 0.0).then_some(self.augment.bin_width),
            learner: if self.learner.kind == "neural" {
                crate::eval::LearnerSpec::Neural(crate::rcsl::NeuralTrainConfig {
                    hidden: self.learner.hidden,
                    lr: self.learner.lr,
                    epochs: self.learner.epochs,
                    batch: self.learner.batch,
                    seed: 0,
                })
            } else {
                crate::eval::LearnerSpec::Tabular {
                    alpha: self.learner.alpha,
                }
            },
            f_quantiles: self.eval.f_quantiles.clone(),
            n_rollouts: self.eval.n_rollouts,
            methods,
            seeds: self.run.seeds.clone(),
            root_seed: root_seed_override.unwrap_or(self.run.root_seed),
        })
    }
}
