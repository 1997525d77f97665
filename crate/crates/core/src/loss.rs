//! Pointwise SVM ranking loss on a single search event: the chosen suggestion
//! should outscore every other suggestion by at least a margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frecency::{frecency, ModelParams, Page};

/// One completed awesomebar-style search: the candidate list as displayed and
/// which entry the user picked after typing `chars_typed` characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEvent {
    pub candidates: Vec<Page>,
    pub selected_index: usize,
    pub chars_typed: u32,
    pub query: String,
}

impl SearchEvent {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid("search event has no candidates"));
        }
        if self.selected_index >= self.candidates.len() {
            return Err(Error::invalid(format!(
                "selected_index {} out of range for {} candidates",
                self.selected_index,
                self.candidates.len()
            )));
        }
        Ok(())
    }
}

/// Ranking-loss settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Required score gap between the chosen suggestion and every other one.
    pub margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        // A tie should cost a visible but bounded penalty against default
        // score magnitudes (recency values run 10-100).
        LossConfig { margin: 5.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Hinge loss over raw scores: sum over j != i of
/// max(0, scores[j] + margin - scores[i]).
///
/// Zero margin is accepted here (useful for probing the raw ranking); the
/// config-level default is strictly positive.
pub fn svm_loss(scores: &[f64], selected_index: usize, margin: f64) -> Result<f64> {
    if selected_index >= scores.len() {
        return Err(Error::invalid(format!(
            "selected_index {} out of range for {} scores",
            selected_index,
            scores.len()
        )));
    }
    if !margin.is_finite() || margin < 0.0 {
        return Err(Error::invalid(format!("margin must be >= 0, got {margin}")));
    }
    let chosen = scores[selected_index];
    Ok(scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != selected_index)
        .map(|(_, &s)| (s + margin - chosen).max(0.0))
        .sum())
}

/// Ranking loss of a model on one event: score every candidate with the
/// current weights, then apply the hinge sum.
pub fn event_loss(params: &ModelParams, event: &SearchEvent, cfg: &LossConfig) -> Result<f64> {
    event.validate()?;
    let scores: Vec<f64> = event.candidates.iter().map(|c| frecency(c, params)).collect();
    svm_loss(&scores, event.selected_index, cfg.margin)
}
