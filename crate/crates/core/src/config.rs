//! Run configuration: one TOML file describes a whole experiment. Parsing is
//! fail-closed — unknown keys are rejected so a typo cannot silently fall
//! back to a default.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frecency::ModelParams;
use crate::grad::GradConfig;
use crate::loss::LossConfig;
use crate::rng::{sample_exp, sample_exp_truncated};
use crate::rprop::{ConstraintSpec, RpropHyper};

/// How client updates are combined each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Mean gradient weighted by each client's example count.
    #[default]
    WeightedAverage,
    /// Componentwise plurality over gradient signs.
    SignVote,
}

/// Integer-valued sampling distribution, selectable from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IntDist {
    /// Always the same value.
    Fixed(u64),
    /// Uniform over lo..=hi.
    Uniform { lo: u64, hi: u64 },
    /// Ceiling of an exponential with the given mean, clamped to >= 1.
    ExpCeil { mean: f64 },
}

impl IntDist {
    pub fn validate(&self, what: &str) -> Result<()> {
        match *self {
            IntDist::Fixed(_) => Ok(()),
            IntDist::Uniform { lo, hi } if lo <= hi => Ok(()),
            IntDist::Uniform { lo, hi } => {
                Err(Error::Config(format!("{what}: uniform bounds {lo} > {hi}")))
            }
            IntDist::ExpCeil { mean } if mean > 0.0 && mean.is_finite() => Ok(()),
            IntDist::ExpCeil { mean } => {
                Err(Error::Config(format!("{what}: exp_ceil mean must be > 0, got {mean}")))
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            IntDist::Fixed(n) => n,
            IntDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            IntDist::ExpCeil { mean } => (sample_exp(rng, mean).ceil() as u64).max(1),
        }
    }
}

/// Real-valued sampling distribution, selectable from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RealDist {
    /// Exponential with the given mean, truncated to [0, cap].
    ExpTruncated { mean: f64, cap: f64 },
    /// Uniform over [lo, hi).
    Uniform { lo: f64, hi: f64 },
}

impl RealDist {
    pub fn validate(&self, what: &str) -> Result<()> {
        match *self {
            RealDist::ExpTruncated { mean, cap } if mean > 0.0 && cap > 0.0 => Ok(()),
            RealDist::ExpTruncated { mean, cap } => Err(Error::Config(format!(
                "{what}: exp_truncated needs mean > 0 and cap > 0, got {mean} and {cap}"
            ))),
            RealDist::Uniform { lo, hi } if lo < hi => Ok(()),
            RealDist::Uniform { lo, hi } => {
                Err(Error::Config(format!("{what}: uniform bounds {lo} >= {hi}")))
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            RealDist::ExpTruncated { mean, cap } => sample_exp_truncated(rng, mean, cap),
            RealDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// How the simulated user picks which page they are searching for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    /// Probability proportional to total visit count (frequent pages get
    /// revisited more).
    #[default]
    VisitWeighted,
    Uniform,
}

/// Shape of each synthetic client's history and search behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub pages_per_client: IntDist,
    /// Mean of the exponential visit-count distribution (counts are the
    /// ceiling of the draw, so at least 1).
    pub visit_frequency_lambda: f64,
    pub bookmark_fraction: f64,
    /// Variance of the Gaussian noise added to true scores before a click.
    pub click_noise_variance: f64,
    /// Distribution of visit ages in days.
    pub recency_shape: RealDist,
    pub searches_per_round: IntDist,
    /// How many suggestions the simulated URL bar shows.
    pub display_limit: usize,
    /// Probabilities of followed-link, typed, bookmarked, other visits;
    /// must sum to 1.
    pub visit_type_probs: [f64; 4],
    pub target_choice: TargetChoice,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            pages_per_client: IntDist::Uniform { lo: 20, hi: 60 },
            visit_frequency_lambda: 7.0,
            bookmark_fraction: 0.15,
            click_noise_variance: 30.0,
            recency_shape: RealDist::ExpTruncated { mean: 20.0, cap: 365.0 },
            searches_per_round: IntDist::Uniform { lo: 1, hi: 5 },
            display_limit: 10,
            visit_type_probs: [0.65, 0.2, 0.1, 0.05],
            target_choice: TargetChoice::VisitWeighted,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        self.pages_per_client.validate("pages_per_client")?;
        self.searches_per_round.validate("searches_per_round")?;
        self.recency_shape.validate("recency_shape")?;
        if !(self.visit_frequency_lambda > 0.0) {
            return Err(Error::Config(format!(
                "visit_frequency_lambda must be > 0, got {}",
                self.visit_frequency_lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.bookmark_fraction) {
            return Err(Error::Config(format!(
                "bookmark_fraction must be in [0, 1], got {}",
                self.bookmark_fraction
            )));
        }
        if !(self.click_noise_variance >= 0.0) {
            return Err(Error::Config(format!(
                "click_noise_variance must be >= 0, got {}",
                self.click_noise_variance
            )));
        }
        if self.display_limit == 0 {
            return Err(Error::Config("display_limit must be >= 1".into()));
        }
        let sum: f64 = self.visit_type_probs.iter().sum();
        if self.visit_type_probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "visit_type_probs must be nonnegative and sum to 1, got {:?}",
                self.visit_type_probs
            )));
        }
        Ok(())
    }
}

/// When to stop before the planned iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Hard cap on the global iteration index across resumed runs;
    /// unset means only `num_iterations` limits a run.
    pub max_iterations: Option<u64>,
    /// Converged when the infinity-norm of the parameter change stays below
    /// this for `CONVERGENCE_PATIENCE` consecutive iterations.
    pub min_step_norm: f64,
}

/// Consecutive small-step iterations required before declaring convergence.
pub const CONVERGENCE_PATIENCE: u64 = 5;

impl Default for ConvergenceConfig {
    fn default() -> Self {
        // Below eta_min the optimizer has effectively stalled; 1e-6 only
        // triggers when aggregated signs are zero round after round.
        ConvergenceConfig { max_iterations: None, min_step_norm: 1e-6 }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_step_norm >= 0.0) {
            return Err(Error::Config(format!(
                "min_step_norm must be >= 0, got {}",
                self.min_step_norm
            )));
        }
        Ok(())
    }
}

/// Early round closing when incoming updates already agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub enabled: bool,
    /// Close early when the mean L1 distance of received gradients to their
    /// mean falls strictly below this.
    pub variance_threshold: f64,
    /// Never close before this many updates arrived.
    pub min_updates: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { enabled: false, variance_threshold: 1.0, min_updates: 20 }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_threshold >= 0.0) {
            return Err(Error::Config(format!(
                "variance_threshold must be >= 0, got {}",
                self.variance_threshold
            )));
        }
        if self.enabled && self.min_updates == 0 {
            return Err(Error::Config("adaptive.min_updates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluation-phase shape: fresh events, never the training streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// How many clients take part; unset means the whole pool.
    pub eval_clients: Option<u64>,
    pub searches_per_client: IntDist,
    /// Daily score decay applied by the legacy-behavior control arm.
    pub decay_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eval_clients: None,
            searches_per_client: IntDist::Fixed(4),
            decay_rate: crate::frecency::DEFAULT_DECAY_RATE,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.searches_per_client.validate("eval.searches_per_client")?;
        if !(0.0..1.0).contains(&self.decay_rate) {
            return Err(Error::Config(format!(
                "eval.decay_rate must be in [0, 1), got {}",
                self.decay_rate
            )));
        }
        if self.eval_clients == Some(0) {
            return Err(Error::Config("eval.eval_clients must be >= 1".into()));
        }
        Ok(())
    }
}

/// Update-stability study parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Updates drawn per subsample.
    pub sample_size: u64,
    /// Subsamples drawn per iteration.
    pub trials: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig { sample_size: 2000, trials: 50 }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.trials == 0 {
            return Err(Error::Config("stability sample_size and trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// The whole experiment definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub num_clients_total: u64,
    /// K: clients sampled per round.
    pub clients_per_iteration: u64,
    /// Rounds to run in this invocation (resuming adds more on top of the
    /// snapshot's iteration).
    pub num_iterations: u64,
    pub aggregation_mode: AggregationMode,
    /// Starting weights; unset means the shipped defaults.
    pub initial_weights: Option<ModelParams>,
    /// Ground-truth weights driving simulated clicks; unset means defaults.
    pub truth_weights: Option<ModelParams>,
    pub loss: LossConfig,
    pub grad: GradConfig,
    pub rprop: RpropHyper,
    pub constraints: ConstraintSpec,
    pub convergence: ConvergenceConfig,
    pub adaptive: AdaptiveConfig,
    pub client: ClientConfig,
    pub eval: EvalConfig,
    pub stability: StabilityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            num_clients_total: 1000,
            clients_per_iteration: 100,
            num_iterations: 50,
            aggregation_mode: AggregationMode::default(),
            initial_weights: None,
            truth_weights: None,
            loss: LossConfig::default(),
            grad: GradConfig::default(),
            rprop: RpropHyper::default(),
            constraints: ConstraintSpec::default(),
            convergence: ConvergenceConfig::default(),
            adaptive: AdaptiveConfig::default(),
            client: ClientConfig::default(),
            eval: EvalConfig::default(),
            stability: StabilityConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients_per_iteration == 0 || self.clients_per_iteration > self.num_clients_total
        {
            return Err(Error::Config(format!(
                "need 1 <= clients_per_iteration <= num_clients_total, got {} and {}",
                self.clients_per_iteration, self.num_clients_total
            )));
        }
        for (name, params) in [
            ("initial_weights", &self.initial_weights),
            ("truth_weights", &self.truth_weights),
        ] {
            if let Some(p) = params {
                if p.to_vec().iter().any(|w| !w.is_finite()) {
                    return Err(Error::Config(format!("{name} must be finite")));
                }
            }
        }
        self.loss.validate().map_err(as_config)?;
        self.grad.validate().map_err(as_config)?;
        self.rprop.validate().map_err(as_config)?;
        self.constraints.validate().map_err(as_config)?;
        self.convergence.validate()?;
        self.adaptive.validate()?;
        self.client.validate()?;
        self.eval.validate()?;
        self.stability.validate()?;
        Ok(())
    }

    /// Parses and validates a TOML experiment definition.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn initial_params(&self) -> ModelParams {
        self.initial_weights.unwrap_or_default()
    }

    pub fn truth_params(&self) -> ModelParams {
        self.truth_weights.unwrap_or_default()
    }
}

fn as_config(e: Error) -> Error {
    Error::Config(e.to_string())
}
