//! Finite-difference gradients over the 8-weight model, treating the loss as
//! a black box. Central differences by default; a cheaper forward variant is
//! available for clients that need to halve the evaluation budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frecency::{ModelParams, NUM_WEIGHTS};

/// Which difference quotient to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// (g(x+h) - g(x-h)) / 2h; 16 loss evaluations, exact on functions linear
    /// or quadratic in a single weight.
    Central,
    /// (g(x+h) - g(x)) / h; 9 loss evaluations.
    Forward,
}

/// Finite-difference settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradConfig {
    /// Relative perturbation size; the actual step for weight k is
    /// epsilon * max(1, |theta_k|), keeping quotients conditioned across
    /// weight magnitudes that span 0-100.
    pub epsilon: f64,
    pub mode: DiffMode,
}

impl Default for GradConfig {
    fn default() -> Self {
        GradConfig { epsilon: 1e-4, mode: DiffMode::Central }
    }
}

impl GradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Perturbation applied to weight k at the given value.
    pub fn step_for(&self, weight_value: f64) -> f64 {
        self.epsilon * weight_value.abs().max(1.0)
    }
}

fn eval<F>(loss_fn: &F, theta: &[f64; NUM_WEIGHTS], component: usize) -> Result<f64>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    let value = loss_fn(&ModelParams::from_vec(theta))?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { index: component, value });
    }
    Ok(value)
}

/// Approximates the loss gradient at `params` by perturbing one weight at a
/// time while all others stay fixed. Components are produced in weight-vector
/// order. A non-finite loss anywhere aborts with the component being probed.
pub fn approx_gradient<F>(
    loss_fn: F,
    params: &ModelParams,
    cfg: &GradConfig,
) -> Result<[f64; NUM_WEIGHTS]>
where
    F: Fn(&ModelParams) -> Result<f64>,
{
    cfg.validate()?;
    let theta = params.to_vec();
    // The unperturbed evaluation in forward mode is attributed to component 0.
    let base = match cfg.mode {
        DiffMode::Forward => Some(eval(&loss_fn, &theta, 0)?),
        DiffMode::Central => None,
    };

    let mut grad = [0.0; NUM_WEIGHTS];
    for k in 0..NUM_WEIGHTS {
        let h = cfg.step_for(theta[k]);
        let mut probe = theta;
        probe[k] = theta[k] + h;
        let plus = eval(&loss_fn, &probe, k)?;
        grad[k] = match cfg.mode {
            DiffMode::Central => {
                probe[k] = theta[k] - h;
                let minus = eval(&loss_fn, &probe, k)?;
                (plus - minus) / (2.0 * h)
            }
            DiffMode::Forward => (plus - base.unwrap()) / h,
        };
    }
    Ok(grad)
}
