//! Model snapshots: a versioned, self-describing JSON file holding
//! everything needed to resume training bit-exactly — weights by name, the
//! optimizer state, and the sampling RNG's stream position.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ServerState, ROLLING_WINDOW};
use crate::error::{Error, Result};
use crate::frecency::ModelParams;
use crate::rng::master;
use crate::rprop::RpropState;

pub const FORMAT_TAG: &str = "frecency-model-snapshot";
pub const VERSION: u32 = 1;

/// The 8 weights under their reporting names, in fixed field order so
/// serialization is byte-stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedWeights {
    pub recency_4d: f64,
    pub recency_14d: f64,
    pub recency_31d: f64,
    pub recency_90d: f64,
    pub recency_older: f64,
    pub type_link: f64,
    pub type_typed: f64,
    pub type_bookmarked: f64,
}

impl From<ModelParams> for NamedWeights {
    fn from(p: ModelParams) -> Self {
        let [r4, r14, r31, r90, ro] = p.recency_weights;
        let [link, typed, bookmarked] = p.type_weights;
        NamedWeights {
            recency_4d: r4,
            recency_14d: r14,
            recency_31d: r31,
            recency_90d: r90,
            recency_older: ro,
            type_link: link,
            type_typed: typed,
            type_bookmarked: bookmarked,
        }
    }
}

impl From<NamedWeights> for ModelParams {
    fn from(w: NamedWeights) -> Self {
        ModelParams {
            recency_weights: [w.recency_4d, w.recency_14d, w.recency_31d, w.recency_90d, w.recency_older],
            type_weights: [w.type_link, w.type_typed, w.type_bookmarked],
        }
    }
}

/// On-disk snapshot contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    /// Always [`FORMAT_TAG`].
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Completed iterations when this snapshot was taken.
    pub iteration: u64,
    pub weights: NamedWeights,
    pub rprop: RpropState,
    /// Sampling RNG stream position, decimal-encoded (the position is wider
    /// than any JSON number).
    pub rng_word_pos: String,
    /// Consecutive below-threshold steps, for the convergence rule.
    pub small_steps: u64,
    /// Trailing recorded round losses (rolling-average window), oldest first.
    pub recent_losses: Vec<f64>,
}

impl Snapshot {
    pub fn from_state(state: &ServerState) -> Self {
        Snapshot {
            format: FORMAT_TAG.to_string(),
            version: VERSION,
            seed: state.seed(),
            iteration: state.iteration,
            weights: state.params.into(),
            rprop: state.rprop,
            rng_word_pos: state.rng.get_word_pos().to_string(),
            small_steps: state.small_steps,
            recent_losses: state.recent_losses.clone(),
        }
    }

    /// Reconstructs live server state, including the RNG position.
    pub fn into_state(self) -> Result<ServerState> {
        let word_pos: u128 = self
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Format(format!("bad rng_word_pos: {e}")))?;
        let mut rng = master(self.seed);
        rng.set_word_pos(word_pos);
        Ok(ServerState::assemble(
            self.seed,
            self.iteration,
            self.weights.into(),
            self.rprop,
            rng,
            self.small_steps,
            self.recent_losses,
        ))
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT_TAG {
            return Err(Error::Format(format!(
                "not a model snapshot (format tag {:?})",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot version {} (expected {VERSION})",
                self.version
            )));
        }
        let params: ModelParams = self.weights.into();
        if params.to_vec().iter().any(|w| !w.is_finite()) {
            return Err(Error::Format("snapshot weights must be finite".into()));
        }
        self.rprop
            .validate()
            .map_err(|e| Error::Format(format!("snapshot optimizer state: {e}")))?;
        if self.recent_losses.len() > ROLLING_WINDOW {
            return Err(Error::Format(format!(
                "snapshot carries {} trailing losses (window is {ROLLING_WINDOW})",
                self.recent_losses.len()
            )));
        }
        if self.recent_losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::Format("snapshot trailing losses must be finite".into()));
        }
        Ok(())
    }
}

/// Canonical snapshot file name for an iteration count.
pub fn file_name(iteration: u64) -> String {
    format!("snapshot-{iteration:05}.json")
}

/// Parses and validates snapshot text. This is the untrusted-input boundary:
/// anything structurally or semantically off is a format error, never a
/// panic.
pub fn parse(text: &str) -> Result<Snapshot> {
    let snap: Snapshot =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("snapshot: {e}")))?;
    snap.validate()?;
    Ok(snap)
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let text = std::fs::read_to_string(path)?;
    parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save(path: &Path, state: &ServerState) -> Result<()> {
    let snap = Snapshot::from_state(state);
    let mut text = serde_json::to_string_pretty(&snap)
        .map_err(|e| Error::Format(format!("snapshot serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
