//! Server-side Rprop: per-weight adaptive step sizes driven only by gradient
//! signs, plus sign-vote aggregation and the safeguard projection that keeps
//! weights nonnegative and recency buckets monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frecency::{ModelParams, NUM_WEIGHTS};

/// Rprop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpropHyper {
    /// Initial per-weight step size.
    pub eta0: f64,
    /// Step-size growth factor on consecutive same-sign gradients.
    pub alpha: f64,
    /// Step-size shrink factor on a sign flip.
    pub beta: f64,
    pub eta_min: f64,
    pub eta_max: f64,
}

impl Default for RpropHyper {
    fn default() -> Self {
        // alpha/beta follow the usual Rprop settings; eta_max keeps any
        // single iteration's weight change to a few frecency points.
        RpropHyper { eta0: 0.5, alpha: 1.2, beta: 0.5, eta_min: 1e-3, eta_max: 2.0 }
    }
}

impl RpropHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) {
            return Err(Error::invalid(format!("alpha must be > 1, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("beta must be in (0, 1), got {}", self.beta)));
        }
        if !(self.eta_min > 0.0 && self.eta_min <= self.eta_max) {
            return Err(Error::invalid(format!(
                "need 0 < eta_min <= eta_max, got {} and {}",
                self.eta_min, self.eta_max
            )));
        }
        if !(self.eta0 >= self.eta_min && self.eta0 <= self.eta_max) {
            return Err(Error::invalid(format!(
                "eta0 {} outside [{}, {}]",
                self.eta0, self.eta_min, self.eta_max
            )));
        }
        Ok(())
    }
}

/// Optimizer state carried across iterations (and across process restarts via
/// snapshots).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpropState {
    pub step_sizes: [f64; NUM_WEIGHTS],
    /// Sign of each gradient component from the previous applied step;
    /// all zero before the first step so it uses eta0 unchanged.
    pub prev_grad_signs: [i8; NUM_WEIGHTS],
    pub hyper: RpropHyper,
}

impl RpropState {
    pub fn new(hyper: RpropHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(RpropState {
            step_sizes: [hyper.eta0; NUM_WEIGHTS],
            prev_grad_signs: [0; NUM_WEIGHTS],
            hyper,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        for (i, &eta) in self.step_sizes.iter().enumerate() {
            if !(eta >= self.hyper.eta_min && eta <= self.hyper.eta_max) {
                return Err(Error::invalid(format!(
                    "step size {eta} for weight {i} outside [{}, {}]",
                    self.hyper.eta_min, self.hyper.eta_max
                )));
            }
        }
        if self.prev_grad_signs.iter().any(|s| !matches!(s, -1..=1)) {
            return Err(Error::invalid("prev_grad_signs must be -1, 0, or +1"));
        }
        Ok(())
    }
}

/// Which safeguards to apply after each optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSpec {
    /// Clamp every optimized weight to >= 0.
    pub nonneg: bool,
    /// Clamp each recency bucket to at most the next-newer bucket's value.
    pub monotone_recency: bool,
    /// Hard cap on any single-weight change per step, independent of eta.
    pub max_step: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec { nonneg: true, monotone_recency: true, max_step: RpropHyper::default().eta_max }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0) {
            return Err(Error::invalid(format!("max_step must be > 0, got {}", self.max_step)));
        }
        Ok(())
    }
}

/// Result of one optimizer step. `pre_projection` keeps the raw stepped
/// weights so callers can audit the per-iteration change bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub params: ModelParams,
    pub pre_projection: ModelParams,
    pub state: RpropState,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// One Rprop update. Per weight: grow the step size when the gradient sign
/// repeats, shrink it on a flip, leave it alone when either sign is zero —
/// then move against the current sign using the freshly updated step size.
/// The projection runs last. A non-finite gradient leaves everything
/// untouched and reports which component broke.
pub fn rprop_step(
    state: &RpropState,
    grad: &[f64; NUM_WEIGHTS],
    params: &ModelParams,
    constraints: &ConstraintSpec,
) -> Result<StepOutcome> {
    state.validate()?;
    constraints.validate()?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { index: i, value: grad[i] });
    }

    let hyper = state.hyper;
    let mut new_state = *state;
    let mut theta = params.to_vec();
    for i in 0..NUM_WEIGHTS {
        let s = sign(grad[i]);
        let agreement = s as i32 * state.prev_grad_signs[i] as i32;
        if agreement > 0 {
            new_state.step_sizes[i] = (state.step_sizes[i] * hyper.alpha).min(hyper.eta_max);
        } else if agreement < 0 {
            new_state.step_sizes[i] = (state.step_sizes[i] * hyper.beta).max(hyper.eta_min);
        }
        theta[i] -= new_state.step_sizes[i].min(constraints.max_step) * s as f64;
        new_state.prev_grad_signs[i] = s;
    }

    let pre_projection = ModelParams::from_vec(&theta);
    Ok(StepOutcome {
        params: project(&pre_projection, constraints),
        pre_projection,
        state: new_state,
    })
}

/// Componentwise plurality vote over gradient signs. Each input component is
/// reduced to its sign first, so raw gradients and pre-signed vectors vote
/// identically. Any tie for the most common sign (including +1 vs -1) yields 0.
pub fn sign_vote(updates: &[[f64; NUM_WEIGHTS]]) -> Result<[f64; NUM_WEIGHTS]> {
    if updates.is_empty() {
        return Err(Error::invalid("sign_vote needs at least one update"));
    }
    let mut out = [0.0; NUM_WEIGHTS];
    for i in 0..NUM_WEIGHTS {
        let mut counts = [0usize; 3]; // -1, 0, +1
        for u in updates {
            counts[(sign(u[i]) + 1) as usize] += 1;
        }
        let best = *counts.iter().max().unwrap();
        let winners: Vec<usize> = (0..3).filter(|&c| counts[c] == best).collect();
        out[i] = if winners.len() == 1 { winners[0] as f64 - 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Safeguard projection: clamp negatives to zero, then sweep the recency
/// buckets newest to oldest so no bucket exceeds the already-projected
/// next-newer one. Idempotent.
pub fn project(params: &ModelParams, spec: &ConstraintSpec) -> ModelParams {
    let mut theta = params.to_vec();
    if spec.nonneg {
        for w in &mut theta {
            *w = w.max(0.0);
        }
    }
    if spec.monotone_recency {
        for k in 1..5 {
            theta[k] = theta[k].min(theta[k - 1]);
        }
    }
    ModelParams::from_vec(&theta)
}
