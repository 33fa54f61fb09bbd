//! The adversarial distribution over concepts: re-weighted stochastic ascent
//! on `q` followed by projection onto the simplex, the two-phase step-size
//! schedule, and the constants `c`, `h(s)`, `β`, `μ` of its regret analysis.
//!
//! `log` is the natural logarithm throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, project_to_simplex, squared_l2, ProbVector};

/// Safety multiplier on the largest observed concept-gradient norm.
pub const MU_SAFETY: f64 = 1.5;

/// Fewest sampled mini-batches accepted by [`estimate_mu`].
pub const MIN_MU_BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialDistribution {
    pub q: ProbVector,
    pub q0: ProbVector,
    pub lambda: f64,
}

impl AdversarialDistribution {
    /// Starts at `q = q0`.
    pub fn new(q0: ProbVector, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(AdversarialDistribution {
            q: q0.clone(),
            q0,
            lambda,
        })
    }

    pub fn num_concepts(&self) -> usize {
        self.q.len()
    }

    /// `‖q − q0‖²`, at most 2 on the simplex.
    pub fn drift(&self) -> f64 {
        squared_l2(self.q.as_slice(), self.q0.as_slice()).expect("q and q0 share a length")
    }

    /// Ascent direction `g − λ(q − q0)` for a concept gradient `g`.
    pub fn ascent_direction(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(self.q.as_slice().iter().zip(self.q0.as_slice()))
            .map(|(gk, (qk, q0k))| gk - self.lambda * (qk - q0k))
            .collect()
    }

    /// `q ← P_Δ(q + η (g − λ(q − q0)))`
    pub fn update(&self, g: &[f64], eta: f64) -> Result<AdversarialDistribution> {
        if g.len() != self.q.len() {
            return Err(Error::invalid(format!(
                "concept gradient has length {}, expected {}",
                g.len(),
                self.q.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("concept gradient is not finite"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {eta}"
            )));
        }
        let step = self.ascent_direction(g);
        let q_hat: Vec<f64> = self
            .q
            .as_slice()
            .iter()
            .zip(&step)
            .map(|(q, s)| q + eta * s)
            .collect();
        Ok(AdversarialDistribution {
            q: project_to_simplex(&q_hat)?,
            q0: self.q0.clone(),
            lambda: self.lambda,
        })
    }
}

/// Free-function form of [`AdversarialDistribution::update`].
pub fn update_distribution(
    state: &AdversarialDistribution,
    g: &[f64],
    eta: f64,
) -> Result<AdversarialDistribution> {
    state.update(g, eta)
}

/// Re-weighted concept gradient from a uniformly sampled mini-batch:
/// `g_k = (1/m) Σ_{j : concept(j) = k} (N / N_k) ℓ_j`. Concepts absent from
/// the batch get zero.
pub fn concept_gradient(
    batch_losses: &[f64],
    batch_concepts: &[usize],
    n: usize,
    concept_counts: &[usize],
    m: usize,
) -> Result<Vec<f64>> {
    if batch_losses.len() != batch_concepts.len() || batch_losses.len() != m || m == 0 {
        return Err(Error::invalid(format!(
            "batch of {} losses / {} concepts does not match m = {m}",
            batch_losses.len(),
            batch_concepts.len()
        )));
    }
    let mut g = vec![0.0; concept_counts.len()];
    for (&loss, &k) in batch_losses.iter().zip(batch_concepts) {
        let n_k = *concept_counts
            .get(k)
            .ok_or_else(|| Error::invalid(format!("unknown concept id {}", k + 1)))?;
        if n_k == 0 {
            return Err(Error::invalid(format!("concept {} is empty", k + 1)));
        }
        g[k] += n as f64 / n_k as f64 * loss;
    }
    g.iter_mut().for_each(|v| *v /= m as f64);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Length of the damped warm phase; 0 disables it.
    pub s: usize,
    pub c: f64,
    pub lambda: f64,
    /// Bound on the ascent-gradient norm, when known.
    #[serde(default)]
    pub mu: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.s > 0 && !(self.c > 1.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "c must be larger than 1 when s > 0, got {}",
                self.c
            )));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::InvalidConfig("mu must be non-negative".into()));
        }
        Ok(())
    }
}

/// `η_t = 1/(cλt)` for `t ≤ s`, `1/(λt)` afterwards (t is 1-based).
pub fn learning_rate(t: usize, cfg: &ScheduleConfig) -> f64 {
    debug_assert!(t >= 1);
    let t = t as f64;
    if t <= cfg.s as f64 {
        1.0 / (cfg.c * cfg.lambda * t)
    } else {
        1.0 / (cfg.lambda * t)
    }
}

fn check_schedule_args(mu: f64, lambda: f64, s: usize) -> Result<()> {
    if s < 2 {
        return Err(Error::invalid(format!("s must be at least 2, got {s}")));
    }
    if !(lambda > 0.0) || !(mu >= 0.0) {
        return Err(Error::invalid("mu must be ≥ 0 and lambda > 0"));
    }
    Ok(())
}

/// `c = (μ/λ) √(log s / (2s))`. Callers must check `c > 1` before using it.
pub fn theoretical_c(mu: f64, lambda: f64, s: usize) -> Result<f64> {
    check_schedule_args(mu, lambda, s)?;
    let s = s as f64;
    Ok(mu / lambda * (s.ln() / (2.0 * s)).sqrt())
}

/// `h(s) = μ √(log s / (2λ)) − √(sλ)`
pub fn h_of_s(mu: f64, lambda: f64, s: usize) -> Result<f64> {
    check_schedule_args(mu, lambda, s)?;
    let s = s as f64;
    Ok(mu * (s.ln() / (2.0 * lambda)).sqrt() - (s * lambda).sqrt())
}

/// `β = h(s)²`
pub fn beta(mu: f64, lambda: f64, s: usize) -> Result<f64> {
    Ok(h_of_s(mu, lambda, s)?.powi(2))
}

/// Regret bound `(1/T)(μ²/(2λ)(log T + 1) − β)`; `β = 0` when `s < 2`.
pub fn regret_bound(mu: f64, lambda: f64, s: usize, t: usize) -> Result<f64> {
    let b = if s >= 2 { beta(mu, lambda, s)? } else { 0.0 };
    let t = t as f64;
    Ok((mu * mu / (2.0 * lambda) * (t.ln() + 1.0) - b) / t)
}

/// `μ = 1.5 · max ‖g‖₂` over sampled mini-batch concept gradients.
pub fn estimate_mu(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.len() < MIN_MU_BATCHES {
        return Err(Error::invalid(format!(
            "need at least {MIN_MU_BATCHES} sampled mini-batches, got {}",
            samples.len()
        )));
    }
    let max = samples.iter().map(|g| norm(g)).fold(0.0, f64::max);
    Ok(MU_SAFETY * max)
}
