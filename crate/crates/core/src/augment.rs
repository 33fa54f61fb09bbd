//! Gradient-direction additive augmentation `x̃ = x + τ z` with
//! `z = ∇ₓℓ / ‖∇ₓℓ‖`, and the closed-form constants of the example-level
//! bounds: the optimal step τ, the tightening term α and the weight-decay
//! equivalent γ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_grads, ModelParams};
use crate::numerics::{dot, norm, SmoothnessEstimate};

/// Gradients with norm below this are treated as zero.
pub const ZERO_GRADIENT: f64 = 1e-12;

/// Minimum gap `λ_w − L_x` accepted by the closed forms.
pub const MIN_CURVATURE_GAP: f64 = 1e-9;

/// Step-size grid `{10^i : i = −3..1}` used by hyperparameter searches.
pub const SEARCH_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TauMode {
    Fixed {
        tau: f64,
    },
    /// τ from the closed form; needs a smoothness estimate.
    Theoretical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub tau_mode: TauMode,
    pub lambda_w: f64,
    pub smoothness: Option<SmoothnessEstimate>,
}

impl AugmentConfig {
    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!(
                "tau must be finite and ≥ 0, got {tau}"
            )));
        }
        Ok(AugmentConfig {
            tau_mode: TauMode::Fixed { tau },
            lambda_w: f64::INFINITY,
            smoothness: None,
        })
    }

    pub fn theoretical(smoothness: SmoothnessEstimate, lambda_w: f64) -> Result<Self> {
        if lambda_w <= smoothness.l_x + MIN_CURVATURE_GAP {
            return Err(Error::invalid(format!(
                "lambda_w = {lambda_w} must exceed l_x = {}",
                smoothness.l_x
            )));
        }
        Ok(AugmentConfig {
            tau_mode: TauMode::Theoretical,
            lambda_w,
            smoothness: Some(smoothness),
        })
    }

    /// Augmented input for one example under the current parameters.
    pub fn augment(&self, params: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
        let grad = loss_and_grads(params, x, y)?.grad_input;
        let z = unit_direction(&grad);
        let tau = match self.tau_mode {
            TauMode::Fixed { tau } => tau,
            TauMode::Theoretical => {
                let s = self
                    .smoothness
                    .ok_or_else(|| Error::invalid("theoretical tau needs a smoothness estimate"))?;
                if z.iter().all(|v| *v == 0.0) {
                    0.0
                } else {
                    theoretical_tau(&grad, &z, s.l_x)?
                }
            }
        };
        Ok(augment_example(x, &z, tau))
    }
}

fn unit_direction(grad: &[f64]) -> Vec<f64> {
    let n = norm(grad);
    if n < ZERO_GRADIENT {
        vec![0.0; grad.len()]
    } else {
        grad.iter().map(|g| g / n).collect()
    }
}

/// `∇ₓℓ / ‖∇ₓℓ‖`, or the zero vector when the gradient vanishes.
pub fn gradient_direction(params: &ModelParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    Ok(unit_direction(&loss_and_grads(params, x, y)?.grad_input))
}

pub fn augment_example(x: &[f64], z: &[f64], tau: f64) -> Vec<f64> {
    debug_assert_eq!(x.len(), z.len());
    x.iter().zip(z).map(|(xi, zi)| xi + tau * zi).collect()
}

fn check_direction(z: &[f64], l_x: f64) -> Result<f64> {
    if !(l_x > 0.0 && l_x.is_finite()) {
        return Err(Error::invalid(format!("l_x must be positive, got {l_x}")));
    }
    let zz = dot(z, z);
    if zz == 0.0 {
        return Err(Error::invalid("augmentation direction is zero"));
    }
    Ok(zz)
}

/// `τ = ⟨∇ₓℓ, z⟩ / (3 L_x ‖z‖²)`
pub fn theoretical_tau(grad_x: &[f64], z: &[f64], l_x: f64) -> Result<f64> {
    let zz = check_direction(z, l_x)?;
    Ok(dot(grad_x, z) / (3.0 * l_x * zz))
}

/// `α = λ_w/(λ_w − L_x) · ⟨∇ₓℓ, z⟩² / (6 L_x ‖z‖²)`
pub fn alpha_constant(grad_x: &[f64], z: &[f64], lambda_w: f64, l_x: f64) -> Result<f64> {
    let zz = check_direction(z, l_x)?;
    if lambda_w <= l_x + MIN_CURVATURE_GAP {
        return Err(Error::invalid(format!(
            "lambda_w = {lambda_w} must exceed l_x = {l_x}"
        )));
    }
    let g = dot(grad_x, z);
    Ok(lambda_w / (lambda_w - l_x) * g * g / (6.0 * l_x * zz))
}

/// `γ = L_θ² / (λ_w − L_x)`
pub fn gamma_constant(l_theta: f64, l_x: f64, lambda_w: f64) -> Result<f64> {
    if !(lambda_w - l_x > MIN_CURVATURE_GAP) {
        return Err(Error::invalid(format!(
            "lambda_w = {lambda_w} must exceed l_x = {l_x} by more than {MIN_CURVATURE_GAP}"
        )));
    }
    Ok(l_theta * l_theta / (lambda_w - l_x))
}
