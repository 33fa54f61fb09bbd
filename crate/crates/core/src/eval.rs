//! Robustness measurements: per-concept accuracy profiles, accuracy on
//! gradient-direction perturbed inputs, and linear-probe transfer.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_example, gradient_direction};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{extract_features, loss_and_grads, predict, Arch, ModelParams};
use crate::numerics::{axpy, norm, seeded_stream};

/// Default perturbation grid for robustness sweeps.
pub const DEFAULT_STEP_SIZES: [f64; 6] = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProfile {
    /// Ascending.
    pub accuracies: Vec<f64>,
    /// 0-based concept id of each entry.
    pub concepts: Vec<usize>,
    pub counts: Vec<usize>,
    pub spread: f64,
    pub worst: f64,
}

impl ConceptProfile {
    /// `Σ_k (N_k/N) acc_k`
    pub fn overall(&self) -> f64 {
        let n: usize = self.counts.iter().sum();
        let correct: f64 = self
            .accuracies
            .iter()
            .zip(&self.counts)
            .map(|(a, &c)| a * c as f64)
            .sum();
        correct / n as f64
    }
}

fn correct_flags(params: &ModelParams, dataset: &Dataset, step: f64) -> Result<Vec<bool>> {
    (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (dataset.row(i), dataset.label(i));
            let pred = if step > 0.0 {
                let z = gradient_direction(params, x, y)?;
                predict(params, &augment_example(x, &z, step))?
            } else {
                predict(params, x)?
            };
            Ok(pred == y)
        })
        .collect()
}

fn check_arch(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    if params.arch.input_dim() != dataset.dim() || params.arch.classes() < dataset.num_classes() {
        return Err(Error::invalid(format!(
            "model expects {} inputs and {} classes, dataset has {} and {}",
            params.arch.input_dim(),
            params.arch.classes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

pub fn accuracy(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    check_arch(params, dataset)?;
    let flags = correct_flags(params, dataset, 0.0)?;
    Ok(flags.iter().filter(|&&c| c).count() as f64 / dataset.len() as f64)
}

pub fn concept_profile(params: &ModelParams, dataset: &Dataset) -> Result<ConceptProfile> {
    check_arch(params, dataset)?;
    let flags = correct_flags(params, dataset, 0.0)?;
    let mut hits = vec![0usize; dataset.num_concepts()];
    for (i, ok) in flags.iter().enumerate() {
        hits[dataset.concept(i)] += usize::from(*ok);
    }
    let counts = dataset.concept_counts();
    let mut rows: Vec<(f64, usize)> = hits
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(k, (&h, &c))| (h as f64 / c as f64, k))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let accuracies: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(ConceptProfile {
        spread: accuracies[accuracies.len() - 1] - accuracies[0],
        worst: accuracies[0],
        counts: rows.iter().map(|r| counts[r.1]).collect(),
        concepts: rows.into_iter().map(|r| r.1).collect(),
        accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub step_sizes: Vec<f64>,
    pub accuracies: Vec<f64>,
}

/// Accuracy on `{x + τ_e z(x)}` for each step size, with `z` the evaluated
/// model's own normalised input gradient at the true label.
pub fn robustness_sweep(
    params: &ModelParams,
    dataset: &Dataset,
    step_sizes: &[f64],
) -> Result<SweepCurve> {
    check_arch(params, dataset)?;
    if step_sizes.first() != Some(&0.0) {
        return Err(Error::invalid("step sizes must start at 0"));
    }
    if step_sizes.windows(2).any(|w| !(w[1] > w[0])) || step_sizes.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(
            "step sizes must be finite and strictly ascending",
        ));
    }
    let accuracies = step_sizes
        .iter()
        .map(|&s| {
            let flags = correct_flags(params, dataset, s)?;
            Ok(flags.iter().filter(|&&c| c).count() as f64 / dataset.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(SweepCurve {
        step_sizes: step_sizes.to_vec(),
        accuracies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Ridge penalty; keeps the fit bounded on separable features.
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.8,
            seed: 0,
            grad_tol: 1e-8,
            max_iterations: 200_000,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub train_size: usize,
    pub test_size: usize,
}

/// Fits a fresh multinomial logistic classifier on `source`'s features of a
/// seeded train split of `target` by full-batch gradient descent, and returns
/// its accuracy on the held-out remainder.
pub fn linear_probe(
    source: &ModelParams,
    target: &Dataset,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if source.arch.input_dim() != target.dim() {
        return Err(Error::invalid(format!(
            "feature extractor takes {} inputs, target has {}",
            source.arch.input_dim(),
            target.dim()
        )));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction must lie in (0, 1)"));
    }
    let features: Vec<Vec<f64>> = (0..target.len())
        .into_par_iter()
        .map(|i| extract_features(source, target.row(i)))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(&mut seeded_stream(cfg.seed, 0));
    let n_train =
        ((target.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, target.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let arch = Arch::Linear {
        input_dim: source.arch.feature_dim(),
        classes: target.num_classes().max(2),
    };
    let full_gradient = |theta: &[f64]| -> Result<Vec<f64>> {
        let probe = ModelParams::from_flat(arch, theta)?;
        let per_example = train_idx
            .par_iter()
            .map(|&i| loss_and_grads(&probe, &features[i], target.label(i)).map(|r| r.grad_params))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = vec![0.0; arch.param_count()];
        for g in &per_example {
            axpy(1.0 / train_idx.len() as f64, g, &mut grad);
        }
        axpy(cfg.l2, theta, &mut grad);
        Ok(grad)
    };
    // Softmax cross-entropy has logit Hessian norm ≤ ½, so ½‖(f, 1)‖² bounds
    // the curvature of each example's loss in the weights.
    let smooth = 0.5
        * train_idx
            .iter()
            .map(|&i| 1.0 + features[i].iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max)
        + cfg.l2;
    let step = 1.0 / smooth;
    let fixed_momentum = (cfg.l2 > 0.0).then(|| {
        let root = (smooth / cfg.l2).sqrt();
        (root - 1.0) / (root + 1.0)
    });
    // Nesterov's accelerated gradient descent.
    let mut theta = vec![0.0; arch.param_count()];
    let mut previous = theta.clone();
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    while iterations < cfg.max_iterations {
        let k = iterations as f64;
        let beta = fixed_momentum.unwrap_or(k / (k + 3.0));
        let mut look = theta.clone();
        for ((l, t), p) in look.iter_mut().zip(&theta).zip(&previous) {
            *l += beta * (t - p);
        }
        let grad = full_gradient(&look)?;
        grad_norm = norm(&grad);
        if grad_norm < cfg.grad_tol {
            theta = look;
            break;
        }
        previous = std::mem::replace(&mut theta, look);
        axpy(-step, &grad, &mut theta);
        iterations += 1;
    }
    let probe = ModelParams::from_flat(arch, &theta)?;
    let hit_rate = |idx: &[usize]| -> Result<f64> {
        let mut hits = 0;
        for &i in idx {
            hits += usize::from(predict(&probe, &features[i])? == target.label(i));
        }
        Ok(hits as f64 / idx.len() as f64)
    };
    Ok(ProbeReport {
        accuracy: hit_rate(test_idx)?,
        train_accuracy: hit_rate(train_idx)?,
        iterations,
        final_grad_norm: grad_norm,
        converged: grad_norm < cfg.grad_tol,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
    })
}
