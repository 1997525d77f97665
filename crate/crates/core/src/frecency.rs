//! Parameterized frecency scoring: how frequently and recently a page was
//! visited, scaled by how each visit happened.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of optimized weights: five recency buckets plus three visit-type weights.
pub const NUM_WEIGHTS: usize = 8;

/// Upper bucket edges in days. A visit on the edge belongs to the more recent bucket.
pub const BUCKET_EDGES_DAYS: [f64; 4] = [4.0, 14.0, 31.0, 90.0];

/// Only the most recent visits of a page contribute to its score.
pub const RECENT_VISIT_CAP: usize = 10;

/// How a page was reached. `Other` covers visit kinds that earn no score
/// (e.g. redirects) and is never optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitType {
    FollowedLink,
    Typed,
    Bookmarked,
    Other,
}

/// One visit to a page: how long ago (in days) and how it happened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Visit {
    pub age_days: f64,
    pub visit_type: VisitType,
}

/// A history entry. `visits` is sorted ascending by age (newest first) and may
/// hold fewer entries than `total_visit_count` when older visits were dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub id: u64,
    pub url: String,
    pub visits: Vec<Visit>,
    pub total_visit_count: u64,
    pub bookmarked: bool,
}

impl Page {
    /// Checks the structural invariants of a page, used when loading pages
    /// from external files.
    pub fn validate(&self) -> Result<()> {
        if self.total_visit_count < self.visits.len() as u64 {
            return Err(Error::invalid(format!(
                "page {}: total_visit_count {} < {} recorded visits",
                self.id,
                self.total_visit_count,
                self.visits.len()
            )));
        }
        for pair in self.visits.windows(2) {
            if pair[0].age_days > pair[1].age_days {
                return Err(Error::invalid(format!(
                    "page {}: visits not sorted ascending by age",
                    self.id
                )));
            }
        }
        for v in &self.visits {
            if !v.age_days.is_finite() || v.age_days < 0.0 {
                return Err(Error::invalid(format!(
                    "page {}: visit age {} out of range",
                    self.id, v.age_days
                )));
            }
        }
        Ok(())
    }
}

/// The optimized weight vector: one value per recency bucket plus one value
/// per scored visit type. Bucket edges and the recent-visit cap are structural
/// constants and not part of the vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Bucket values for ages <=4d, <=14d, <=31d, <=90d, older.
    pub recency_weights: [f64; 5],
    /// Weights for FollowedLink, Typed, Bookmarked. `Other` is pinned to 0.
    pub type_weights: [f64; 3],
}

impl Default for ModelParams {
    /// The handcrafted weights the ranking shipped with; also the training
    /// start unless a run configures a perturbed start.
    fn default() -> Self {
        ModelParams {
            recency_weights: [100.0, 70.0, 50.0, 30.0, 10.0],
            type_weights: [1.2, 2.0, 1.4],
        }
    }
}

impl ModelParams {
    /// Flattens to the 8-component optimization vector
    /// (recency buckets newest to oldest, then link/typed/bookmarked).
    pub fn to_vec(&self) -> [f64; NUM_WEIGHTS] {
        let mut out = [0.0; NUM_WEIGHTS];
        out[..5].copy_from_slice(&self.recency_weights);
        out[5..].copy_from_slice(&self.type_weights);
        out
    }

    pub fn from_vec(v: &[f64; NUM_WEIGHTS]) -> Self {
        let mut recency_weights = [0.0; 5];
        recency_weights.copy_from_slice(&v[..5]);
        let mut type_weights = [0.0; 3];
        type_weights.copy_from_slice(&v[5..]);
        ModelParams { recency_weights, type_weights }
    }

    /// Names of the 8 weights in vector order, used by snapshots and reports.
    pub fn weight_names() -> [&'static str; NUM_WEIGHTS] {
        [
            "recency_4d",
            "recency_14d",
            "recency_31d",
            "recency_90d",
            "recency_older",
            "type_link",
            "type_typed",
            "type_bookmarked",
        ]
    }

    fn type_weight(&self, t: VisitType) -> f64 {
        match t {
            VisitType::FollowedLink => self.type_weights[0],
            VisitType::Typed => self.type_weights[1],
            VisitType::Bookmarked => self.type_weights[2],
            VisitType::Other => 0.0,
        }
    }
}

/// Index of the recency bucket containing `age_days`. Edge days fall into the
/// more recent bucket (age 4.0 is still the first bucket).
pub fn recency_bucket(age_days: f64) -> usize {
    BUCKET_EDGES_DAYS
        .iter()
        .position(|&edge| age_days <= edge)
        .unwrap_or(BUCKET_EDGES_DAYS.len())
}

/// Bucket value for a visit of the given age.
pub fn recency_weight(age_days: f64, params: &ModelParams) -> Result<f64> {
    if !age_days.is_finite() || age_days < 0.0 {
        return Err(Error::invalid(format!("age_days must be >= 0, got {age_days}")));
    }
    Ok(params.recency_weights[recency_bucket(age_days)])
}

/// Score of a single visit: recency bucket value times visit-type weight.
pub fn visit_score(visit: &Visit, params: &ModelParams) -> Result<f64> {
    Ok(recency_weight(visit.age_days, params)? * params.type_weight(visit.visit_type))
}

/// Full page score: the summed score of the up-to-10 most recent visits,
/// scaled by total visit count over the number of visits considered.
/// A page with no recorded visits scores 0.
pub fn frecency(page: &Page, params: &ModelParams) -> f64 {
    let recent = &page.visits[..page.visits.len().min(RECENT_VISIT_CAP)];
    if recent.is_empty() {
        return 0.0;
    }
    let sum: f64 = recent
        .iter()
        .map(|v| params.recency_weights[recency_bucket(v.age_days)] * params.type_weight(v.visit_type))
        .sum();
    (page.total_visit_count as f64 / recent.len() as f64) * sum
}

/// Applies one decay step to a list of cached scores: every score is
/// multiplied by `1 - rate`. Used by the control evaluation arm that models
/// the legacy daily score decay.
pub fn apply_decay(scores: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("decay rate must be in [0, 1), got {rate}")));
    }
    Ok(scores.iter().map(|s| s * (1.0 - rate)).collect())
}

/// Default daily decay rate for the control arm. The shipped ranker decays
/// cached scores by a small percentage once a day; the exact figure is a
/// configurable stand-in.
pub const DEFAULT_DECAY_RATE: f64 = 0.025;
