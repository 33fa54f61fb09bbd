//! Numerical certification of the robustness bounds.
//!
//! * Example level: a multi-restart gradient-ascent oracle solves the
//!   per-example subproblem `max_x̂ ℓ(x̂) − (λ_w/2)‖x̂ − x‖²`, and its value is
//!   compared with the regularisation bound `ℓ(x) + (γ/2)‖θ‖²` and the
//!   augmentation bound `ℓ(x̃) + (γ/2)‖θ‖² − α`.
//! * Concept level: the online ascent on `q` is replayed against the exact
//!   best fixed distribution in hindsight, and its average regret compared with
//!   `(1/T)(μ²/(2λ)(log T + 1) − β)`.
//! * The warm-phase gain `h(s)` is scanned for sign and shape.
//!
//! The oracle is never used in training.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    concept_gradient, estimate_mu, h_of_s, learning_rate, regret_bound, theoretical_c,
    AdversarialDistribution, ScheduleConfig,
};
use crate::augment::{
    alpha_constant, augment_example, gamma_constant, gradient_direction, theoretical_tau,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss, loss_and_grads, Arch, ModelLoss, ModelParams};
use crate::numerics::{
    axpy, dot, estimate_smoothness, norm, project_to_simplex, random_unit, seeded_stream,
    squared_l2, ProbVector, Probe, ProbeSettings, SmoothLoss, SmoothnessEstimate,
};
use crate::trainer::{model_step, sample_batch, Batch, ConceptStats, Mode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub restarts: usize,
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Largest admissible gain over the starting value before the
    /// subproblem is declared unbounded.
    pub ceiling: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            restarts: 5,
            max_steps: 10_000,
            grad_tol: 1e-8,
            ceiling: 1e8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub maximizer: Vec<f64>,
    pub steps: usize,
}

/// `sup_x̂ ℓ(x̂) − (λ_w/2)‖x̂ − x‖²` by fixed-step (`1/(2λ_w)`) gradient ascent
/// from `x` and `restarts − 1` random perturbations of it.
pub fn inner_max<L: SmoothLoss + ?Sized>(
    loss: &L,
    x: &[f64],
    y: usize,
    theta: &[f64],
    lambda_w: f64,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    if !(lambda_w > 0.0 && lambda_w.is_finite()) {
        return Err(Error::invalid("lambda_w must be positive"));
    }
    let objective = |xh: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, mut g) = loss.value_and_input_grad(xh, y, theta)?;
        let mut diff = xh.to_vec();
        axpy(-1.0, x, &mut diff);
        axpy(-lambda_w, &diff, &mut g);
        Ok((l - 0.5 * lambda_w * dot(&diff, &diff), g))
    };
    let (start_value, start_grad) = objective(x)?;
    let radius = 1.0 + norm(&start_grad) / lambda_w;
    let step = 1.0 / (2.0 * lambda_w);
    let mut rng = seeded_stream(cfg.seed, 0);
    let mut best: Option<OracleResult> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut xh = x.to_vec();
        if r > 0 {
            let d = random_unit(&mut rng, x.len());
            let len = radius * rng.random_range(0.1..2.0);
            axpy(len, &d, &mut xh);
        }
        let (mut value, mut grad) = objective(&xh)?;
        let mut steps = 0;
        while steps < cfg.max_steps && norm(&grad) >= cfg.grad_tol {
            axpy(step, &grad, &mut xh);
            (value, grad) = objective(&xh)?;
            steps += 1;
            if !value.is_finite()
                || value - start_value > cfg.ceiling
                || xh.iter().any(|v| !v.is_finite())
            {
                return Err(Error::OracleFailure(format!(
                    "ascent diverged after {steps} steps (restart {r}); is lambda_w above the smoothness constant?"
                )));
            }
        }
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(OracleResult {
                value,
                maximizer: xh,
                steps,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// A model, one labelled input, and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub params: ModelParams,
    pub x: Vec<f64>,
    pub y: usize,
}

/// Oracle value of the per-example subproblem for a model.
pub fn inner_max_oracle(
    instance: &Instance,
    lambda_w: f64,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    let l = ModelLoss {
        arch: instance.params.arch,
    };
    inner_max(
        &l,
        &instance.x,
        instance.y,
        &instance.params.flat(),
        lambda_w,
        cfg,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
    pub tolerance: f64,
}

impl BoundReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        let tolerance = 1e-6 * (1.0 + rhs.abs());
        let slack = rhs - lhs;
        BoundReport {
            lhs,
            rhs,
            slack,
            holds: slack >= -tolerance,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentedBoundReport {
    pub bound: BoundReport,
    pub tau: f64,
    pub alpha: f64,
    pub rhs_regularized: f64,
    /// Whether the augmentation bound is at least as tight as the
    /// regularisation bound on this instance.
    pub tighter: bool,
}

fn regularization_term(
    instance: &Instance,
    smoothness: &SmoothnessEstimate,
    lambda_w: f64,
) -> Result<f64> {
    let gamma = gamma_constant(smoothness.l_theta, smoothness.l_x, lambda_w)?;
    Ok(0.5 * gamma * instance.params.squared_norm())
}

fn check_lambda(smoothness: &SmoothnessEstimate, lambda_w: f64) -> Result<()> {
    if lambda_w <= smoothness.l_x {
        return Err(Error::invalid(format!(
            "lambda_w = {lambda_w} must exceed l_x = {}",
            smoothness.l_x
        )));
    }
    Ok(())
}

/// Oracle value against `ℓ(x) + (γ/2)‖θ‖²`, `γ = L_θ²/(λ_w − L_x)`.
pub fn check_theorem1(
    instance: &Instance,
    smoothness: &SmoothnessEstimate,
    lambda_w: f64,
    oracle: &OracleConfig,
) -> Result<BoundReport> {
    check_lambda(smoothness, lambda_w)?;
    let lhs = inner_max_oracle(instance, lambda_w, oracle)?.value;
    let rhs = loss(&instance.params, &instance.x, instance.y)?
        + regularization_term(instance, smoothness, lambda_w)?;
    Ok(BoundReport::new(lhs, rhs))
}

/// Oracle value against `ℓ(x̃) + (γ/2)‖θ‖² − α` with `x̃ = x + τz`, `z` the
/// normalised input gradient and `τ`, `α` at their closed forms.
pub fn check_theorem2(
    instance: &Instance,
    smoothness: &SmoothnessEstimate,
    lambda_w: f64,
    oracle: &OracleConfig,
) -> Result<AugmentedBoundReport> {
    check_lambda(smoothness, lambda_w)?;
    let (params, x, y) = (&instance.params, &instance.x, instance.y);
    let grad = loss_and_grads(params, x, y)?.grad_input;
    let z = gradient_direction(params, x, y)?;
    let (tau, alpha) = if z.iter().all(|v| *v == 0.0) {
        (0.0, 0.0)
    } else {
        (
            theoretical_tau(&grad, &z, smoothness.l_x)?,
            alpha_constant(&grad, &z, lambda_w, smoothness.l_x)?,
        )
    };
    let x_aug = augment_example(x, &z, tau);
    let reg = regularization_term(instance, smoothness, lambda_w)?;
    let lhs = inner_max_oracle(instance, lambda_w, oracle)?.value;
    let rhs = loss(params, &x_aug, y)? + reg - alpha;
    let rhs_regularized = loss(params, x, y)? + reg;
    Ok(AugmentedBoundReport {
        bound: BoundReport::new(lhs, rhs),
        tau,
        alpha,
        rhs_regularized,
        tighter: rhs <= rhs_regularized + 1e-9,
    })
}

/// Curvature probes around an instance: the input itself, points along its
/// gradient line and in a ball around it, each at θ scaled by 0, ¼, …, 1.
pub fn instance_probes(instance: &Instance, seed: u64) -> Result<Vec<Probe>> {
    let theta = instance.params.flat();
    let z = gradient_direction(&instance.params, &instance.x, instance.y)?;
    let reach = 1.0 + norm(&instance.x);
    let mut rng = seeded_stream(seed, 0);
    let mut points = vec![instance.x.clone()];
    let line = if z.iter().all(|v| *v == 0.0) {
        random_unit(&mut rng, instance.x.len())
    } else {
        z
    };
    for i in -8i32..=8 {
        if i != 0 {
            points.push(augment_example(
                &instance.x,
                &line,
                reach * f64::from(i) / 2.0,
            ));
        }
    }
    for _ in 0..8 {
        let d = random_unit(&mut rng, instance.x.len());
        points.push(augment_example(
            &instance.x,
            &d,
            reach * rng.random_range(0.0..3.0),
        ));
    }
    let mut probes = Vec::new();
    for scale in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let t: Vec<f64> = theta.iter().map(|v| v * scale).collect();
        for p in &points {
            probes.push(Probe {
                x: p.clone(),
                y: instance.y,
                theta: t.clone(),
            });
        }
    }
    Ok(probes)
}

pub fn instance_smoothness(instance: &Instance, seed: u64) -> Result<SmoothnessEstimate> {
    let probes = instance_probes(instance, seed)?;
    let l = ModelLoss {
        arch: instance.params.arch,
    };
    estimate_smoothness(
        &l,
        &probes,
        ProbeSettings {
            step: 1e-5,
            directions: 6,
            seed,
        },
    )
}

/// Random softmax-regression instances with standard-normal weights and inputs.
pub fn random_instances(
    count: usize,
    input_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<Instance>> {
    let arch = Arch::Linear { input_dim, classes };
    (0..count)
        .map(|i| {
            let mut rng = seeded_stream(seed, i as u64);
            let omega: Vec<f64> = (0..arch.omega_len())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            Ok(Instance {
                params: ModelParams::new(arch, vec![], omega)?,
                x: (0..input_dim)
                    .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
                y: rng.random_range(0..classes),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteReport {
    pub instances: usize,
    pub lambda_factor: f64,
    pub regularized: Vec<BoundReport>,
    pub augmented: Vec<AugmentedBoundReport>,
    pub oracle_failures: Vec<String>,
    pub regularized_violations: usize,
    pub augmented_violations: usize,
    pub negative_alpha: usize,
    pub tightness_rate: f64,
}

impl BoundSuiteReport {
    pub fn all_hold(&self) -> bool {
        self.oracle_failures.is_empty()
            && self.regularized_violations == 0
            && self.augmented_violations == 0
            && self.negative_alpha == 0
    }
}

/// Both example-level bounds on every instance with `λ_w = factor · l_x`.
/// Oracle failures are collected per instance and do not stop the suite.
pub fn bound_suite(instances: &[Instance], lambda_factor: f64, seed: u64) -> BoundSuiteReport {
    let results: Vec<Result<(BoundReport, AugmentedBoundReport)>> = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let s = instance_smoothness(inst, seed.wrapping_add(i as u64))?;
            let lambda_w = lambda_factor * s.l_x.max(f64::MIN_POSITIVE);
            let oracle = OracleConfig {
                seed: seed.wrapping_add(i as u64),
                ..Default::default()
            };
            Ok((
                check_theorem1(inst, &s, lambda_w, &oracle)?,
                check_theorem2(inst, &s, lambda_w, &oracle)?,
            ))
        })
        .collect();
    let mut report = BoundSuiteReport {
        instances: instances.len(),
        lambda_factor,
        regularized: vec![],
        augmented: vec![],
        oracle_failures: vec![],
        regularized_violations: 0,
        augmented_violations: 0,
        negative_alpha: 0,
        tightness_rate: 0.0,
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((a, b)) => {
                report.regularized_violations += usize::from(!a.holds);
                report.augmented_violations += usize::from(!b.bound.holds);
                report.negative_alpha += usize::from(b.alpha < 0.0);
                report.regularized.push(a);
                report.augmented.push(b);
            }
            Err(e) => report.oracle_failures.push(format!("instance {i}: {e}")),
        }
    }
    let n = report.augmented.len().max(1) as f64;
    report.tightness_rate = report.augmented.iter().filter(|r| r.tighter).count() as f64 / n;
    report
}

/// Best fixed distribution in hindsight: the maximiser over Δ of
/// `Σ_t [q·ḡ_t − (λ/2)‖q − q0‖²]`, which is `P_Δ(q0 + Ḡ/λ)` with `Ḡ` the mean of `ḡ_t`.
pub fn exact_qstar(loss_history: &[Vec<f64>], q0: &ProbVector, lambda: f64) -> Result<ProbVector> {
    if loss_history.is_empty() {
        return Err(Error::invalid("loss history is empty"));
    }
    let k = q0.len();
    let mut mean = vec![0.0; k];
    for g in loss_history {
        if g.len() != k {
            return Err(Error::invalid("loss vector length differs from q0"));
        }
        axpy(1.0 / loss_history.len() as f64, g, &mut mean);
    }
    qstar_from_mean(&mean, q0, lambda)
}

fn qstar_from_mean(mean: &[f64], q0: &ProbVector, lambda: f64) -> Result<ProbVector> {
    let v: Vec<f64> = q0
        .as_slice()
        .iter()
        .zip(mean)
        .map(|(q, g)| q + g / lambda)
        .collect();
    project_to_simplex(&v)
}

/// `q·ḡ − (λ/2)‖q − q0‖²`
pub fn concept_objective(q: &[f64], concept_losses: &[f64], q0: &ProbVector, lambda: f64) -> f64 {
    dot(q, concept_losses) - 0.5 * lambda * squared_l2(q, q0.as_slice()).expect("lengths agree")
}

/// Exact per-concept mean losses `(1/N_k) Σ_{i∈k} ℓ(x̃_i)` over the whole dataset.
pub fn population_concept_losses(
    params: &ModelParams,
    dataset: &Dataset,
    tau: f64,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; dataset.num_concepts()];
    for i in 0..dataset.len() {
        let (x, y) = (dataset.row(i), dataset.label(i));
        let l = if tau > 0.0 {
            let z = gradient_direction(params, x, y)?;
            loss(params, &augment_example(x, &z, tau), y)?
        } else {
            loss(params, x, y)?
        };
        sums[dataset.concept(i)] += l;
    }
    Ok(sums
        .iter()
        .zip(dataset.concept_counts())
        .map(|(s, &c)| s / c as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub t: usize,
    pub average_regret: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub t: usize,
    pub average_regret: f64,
    pub bound: f64,
    pub holds: bool,
    pub mu: f64,
    pub lambda: f64,
    pub s: usize,
    pub c: f64,
    pub beta: f64,
    pub frozen_theta: bool,
    /// The same quantities at intermediate horizons of the same stream.
    pub checkpoints: Vec<RegretPoint>,
    pub qstar: Vec<f64>,
    pub final_q: Vec<f64>,
}

/// Replays the `q` ascent of `cfg` (mode CL or HRRL) for `cfg.iterations`
/// steps from `init`, recording exact population concept losses at every step.
///
/// `μ` is measured before the run from 100 fresh mini-batches as
/// `1.5 · max ‖g‖ + λ√2` (the second term bounds `‖λ(q − q0)‖` on Δ). When
/// `cfg.s ≥ 2` the warm-phase factor is set to `c = (μ/λ)√(log s/(2s))`,
/// which must exceed 1; `cfg.s = 0` runs plain `1/(λt)` steps with `β = 0`.
pub fn regret_experiment(
    cfg: &TrainConfig,
    dataset: &Dataset,
    init: &ModelParams,
    frozen_theta: bool,
    checkpoints: &[usize],
) -> Result<RegretReport> {
    if !cfg.mode.learns_concepts() {
        return Err(Error::InvalidConfig(format!(
            "regret experiment needs mode CL or HRRL, got {}",
            cfg.mode
        )));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidConfig("lambda must be positive".into()));
    }
    let stats = ConceptStats::of(dataset);
    let tau = if cfg.mode.augments() { cfg.tau } else { 0.0 };
    let (n, m) = (dataset.len(), cfg.batch_size);
    if m == 0 || m > n || cfg.iterations == 0 {
        return Err(Error::InvalidConfig("need 1 ≤ m ≤ N and T ≥ 1".into()));
    }

    let batch_losses = |params: &ModelParams, batch: &Batch| -> Result<Vec<f64>> {
        batch
            .inputs
            .iter()
            .zip(&batch.labels)
            .map(|(x, &y)| {
                if tau > 0.0 {
                    let z = gradient_direction(params, x, y)?;
                    loss(params, &augment_example(x, &z, tau), y)
                } else {
                    loss(params, x, y)
                }
            })
            .collect()
    };

    let mut mu_rng = seeded_stream(cfg.seed, 7);
    let mu_samples = (0..100)
        .map(|_| {
            let b = Batch::gather(dataset, &sample_batch(&mut mu_rng, n, m));
            concept_gradient(&batch_losses(init, &b)?, &b.concepts, n, &stats.counts, m)
        })
        .collect::<Result<Vec<_>>>()?;
    let mu = estimate_mu(&mu_samples)? + cfg.lambda * std::f64::consts::SQRT_2;

    let c = if cfg.s >= 2 {
        let c = theoretical_c(mu, cfg.lambda, cfg.s)?;
        if c <= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "warm-phase factor c = {c:.4} ≤ 1 for mu = {mu:.4}, lambda = {}, s = {}",
                cfg.lambda, cfg.s
            )));
        }
        c
    } else {
        1.0
    };
    let schedule = ScheduleConfig {
        s: if cfg.s >= 2 { cfg.s } else { 0 },
        c,
        lambda: cfg.lambda,
        mu,
    };

    let mut params = init.clone();
    let mut adversary = AdversarialDistribution::new(stats.q0.clone(), cfg.lambda)?;
    let mut rng = seeded_stream(cfg.seed, 0);
    let frozen_losses = if frozen_theta {
        Some(population_concept_losses(init, dataset, tau)?)
    } else {
        None
    };
    let frozen_example_losses: Option<Vec<f64>> = if frozen_theta {
        (0..n)
            .map(|i| batch_losses(init, &Batch::gather(dataset, &[i])).map(|v| v[0]))
            .collect::<Result<_>>()
            .map(Some)?
    } else {
        None
    };

    let mut sum_g = vec![0.0; stats.counts.len()];
    let mut sum_played = 0.0;
    let mut points = Vec::new();
    let mut marks: Vec<usize> = checkpoints
        .iter()
        .copied()
        .filter(|&t| t <= cfg.iterations)
        .collect();
    marks.push(cfg.iterations);
    marks.sort_unstable();
    marks.dedup();
    let mut next_mark = 0;

    for t in 1..=cfg.iterations {
        let g_bar = match &frozen_losses {
            Some(g) => g.clone(),
            None => population_concept_losses(&params, dataset, tau)?,
        };
        axpy(1.0, &g_bar, &mut sum_g);
        sum_played += concept_objective(adversary.q.as_slice(), &g_bar, &stats.q0, cfg.lambda);

        let indices = sample_batch(&mut rng, n, m);
        let batch = Batch::gather(dataset, &indices);
        let losses = match &frozen_example_losses {
            Some(all) => indices.iter().map(|&i| all[i]).collect(),
            None => batch_losses(&params, &batch)?,
        };
        if !frozen_theta {
            let mut aug = batch.clone();
            if tau > 0.0 {
                for (x, &y) in aug.inputs.iter_mut().zip(&aug.labels) {
                    let z = gradient_direction(&params, x, y)?;
                    *x = augment_example(x, &z, tau);
                }
            }
            params = model_step(
                &params,
                &aug,
                &adversary.q,
                &stats,
                cfg.eta_theta,
                cfg.gamma,
            )?
            .params;
        }
        let g = concept_gradient(&losses, &batch.concepts, n, &stats.counts, m)?;
        adversary = adversary.update(&g, learning_rate(t, &schedule))?;

        if next_mark < marks.len() && marks[next_mark] == t {
            let mean: Vec<f64> = sum_g.iter().map(|v| v / t as f64).collect();
            let qstar = qstar_from_mean(&mean, &stats.q0, cfg.lambda)?;
            let best = t as f64 * concept_objective(qstar.as_slice(), &mean, &stats.q0, cfg.lambda);
            let average_regret = (best - sum_played) / t as f64;
            let bound = regret_bound(mu, cfg.lambda, schedule.s, t)?;
            points.push(RegretPoint {
                t,
                average_regret,
                bound,
                holds: average_regret <= bound,
            });
            next_mark += 1;
        }
    }

    let mean: Vec<f64> = sum_g.iter().map(|v| v / cfg.iterations as f64).collect();
    let qstar = qstar_from_mean(&mean, &stats.q0, cfg.lambda)?;
    let last = *points.last().expect("final horizon is always a checkpoint");
    Ok(RegretReport {
        t: cfg.iterations,
        average_regret: last.average_regret,
        bound: last.bound,
        holds: last.holds,
        mu,
        lambda: cfg.lambda,
        s: schedule.s,
        c,
        beta: if schedule.s >= 2 {
            crate::adversary::beta(mu, cfg.lambda, schedule.s)?
        } else {
            0.0
        },
        frozen_theta,
        checkpoints: points,
        qstar: qstar.into_inner(),
        final_q: adversary.q.into_inner(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HCurve {
    pub mu: f64,
    pub lambda: f64,
    pub argmax_s: usize,
    pub max_h: f64,
    /// `h` rises up to the maximum and falls after it on the scanned grid.
    pub unimodal: bool,
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmPhaseReport {
    pub samples: usize,
    pub violations: usize,
    pub min_h: f64,
    pub curves: Vec<HCurve>,
}

impl WarmPhaseReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.curves.iter().all(|c| c.unimodal && c.interior)
    }
}

/// Scans `h(s)` for `s ∈ [2, s_max]` and locates its maximum.
pub fn h_curve(mu: f64, lambda: f64, s_max: usize) -> Result<HCurve> {
    let values: Vec<f64> = (2..=s_max)
        .map(|s| h_of_s(mu, lambda, s))
        .collect::<Result<_>>()?;
    let (i_max, &max_h) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("s_max ≥ 2");
    let rising = values[..=i_max].windows(2).all(|w| w[1] >= w[0]);
    let falling = values[i_max..].windows(2).all(|w| w[1] <= w[0]);
    Ok(HCurve {
        mu,
        lambda,
        argmax_s: i_max + 2,
        max_h,
        unimodal: rising && falling,
        interior: i_max > 0 && i_max + 1 < values.len(),
    })
}

/// Checks `h(s) > 0` on random `(μ, λ, s)` with `(μ/λ)√(log s/(2s)) > 1`, and
/// the shape of `h` for `λ = 1`, `μ ∈ {50, 100, 150, 200}`.
pub fn warm_phase_check(samples: usize, seed: u64) -> Result<WarmPhaseReport> {
    let mut rng = seeded_stream(seed, 0);
    let mut violations = 0;
    let mut min_h = f64::INFINITY;
    let mut drawn = 0;
    while drawn < samples {
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let s = 10f64.powf(rng.random_range(0.31..5.0)).round().max(2.0) as usize;
        let threshold = lambda * (2.0 * s as f64 / (s as f64).ln()).sqrt();
        let mu = threshold * rng.random_range(1.0..10.0);
        if theoretical_c(mu, lambda, s)? <= 1.0 {
            continue;
        }
        drawn += 1;
        let h = h_of_s(mu, lambda, s)?;
        min_h = min_h.min(h);
        violations += usize::from(h <= 0.0);
    }
    let curves = [50.0, 100.0, 150.0, 200.0]
        .into_iter()
        .map(|mu| h_curve(mu, 1.0, 100_000))
        .collect::<Result<_>>()?;
    Ok(WarmPhaseReport {
        samples,
        violations,
        min_h,
        curves,
    })
}

/// Default configuration of the frozen-θ regret run.
pub fn default_regret_config(seed: u64) -> TrainConfig {
    TrainConfig {
        mode: Mode::Cl,
        iterations: 10_000,
        batch_size: 32,
        lambda: 0.1,
        s: 1000,
        seed,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    struct Quadratic;
    impl SmoothLoss for Quadratic {
        fn input_dim(&self) -> usize {
            2
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn value_and_input_grad(&self, x: &[f64], _: usize, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((0.5 * dot(x, x), x.to_vec()))
        }
    }

    struct Linear(Vec<f64>);
    impl SmoothLoss for Linear {
        fn input_dim(&self) -> usize {
            self.0.len()
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn value_and_input_grad(&self, x: &[f64], _: usize, _: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((dot(&self.0, x), self.0.clone()))
        }
    }

    #[test]
    fn oracle_on_quadratic() {
        let r = inner_max(
            &Quadratic,
            &[0.0, 0.0],
            0,
            &[],
            2.0,
            &OracleConfig::default(),
        )
        .unwrap();
        assert!(r.value.abs() < 1e-12, "{r:?}");
        assert!(norm(&r.maximizer) < 1e-8);
    }

    #[test]
    fn oracle_on_linear() {
        let a = vec![1.0, -2.0, 0.5];
        let x = [0.3, 0.1, -1.0];
        for lw in [0.5, 1.0, 7.0] {
            let r =
                inner_max(&Linear(a.clone()), &x, 0, &[], lw, &OracleConfig::default()).unwrap();
            let expect = dot(&a, &x) + dot(&a, &a) / (2.0 * lw);
            assert!((r.value - expect).abs() < 1e-12, "{} vs {expect}", r.value);
        }
    }

    #[test]
    fn oracle_detects_unbounded_subproblem() {
        // λ_w below the curvature of ½‖x‖²: the objective is convex and unbounded.
        let r = inner_max(
            &Quadratic,
            &[0.1, 0.0],
            0,
            &[],
            0.5,
            &OracleConfig::default(),
        );
        assert!(matches!(r, Err(Error::OracleFailure(_))));
    }

    #[test]
    fn oracle_approaches_clean_loss_as_penalty_grows() {
        let inst = &random_instances(1, 2, 2, 4).unwrap()[0];
        let l0 = loss(&inst.params, &inst.x, inst.y).unwrap();
        let mut prev = f64::INFINITY;
        for lw in [1.0, 10.0, 100.0, 1000.0, 10000.0] {
            let v = inner_max_oracle(inst, lw, &OracleConfig::default())
                .unwrap()
                .value;
            assert!(v >= l0 - 1e-12);
            assert!(v <= prev + 1e-12);
            prev = v;
        }
        assert!(prev - l0 < 1e-3);
    }

    #[test]
    fn zero_parameters_make_both_sides_equal() {
        let arch = Arch::Linear {
            input_dim: 2,
            classes: 2,
        };
        let inst = Instance {
            params: ModelParams::zeros(arch).unwrap(),
            x: vec![0.4, -1.0],
            y: 1,
        };
        let s = SmoothnessEstimate {
            l_x: 1.0,
            l_theta: 1.0,
            raw_l_x: 0.5,
            raw_l_theta: 0.5,
            samples_used: 1,
        };
        let r = check_theorem1(&inst, &s, 4.0, &OracleConfig::default()).unwrap();
        assert!(r.slack.abs() < 1e-12 && r.holds);
        let r2 = check_theorem2(&inst, &s, 4.0, &OracleConfig::default()).unwrap();
        assert_eq!((r2.tau, r2.alpha), (0.0, 0.0));
        assert_eq!(r2.bound.rhs, r.rhs);
    }

    #[test]
    fn bounds_hold_near_the_curvature_limit() {
        let instances = random_instances(20, 2, 2, 17).unwrap();
        let report = bound_suite(&instances, 1.01, 3);
        assert!(report.all_hold(), "{report:?}");
    }

    #[test]
    fn qstar_examples() {
        let q0 = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let q = exact_qstar(&[vec![1.0, 0.0]], &q0, 1.0).unwrap();
        assert_eq!(q.as_slice(), &[1.0, 0.0]);
        let q0 = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        let q = exact_qstar(&[vec![3.0, 3.0, 3.0], vec![1.0, 1.0, 1.0]], &q0, 0.5).unwrap();
        for (a, b) in q.as_slice().iter().zip(q0.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let q = exact_qstar(&[vec![5.0, -2.0, 0.3]], &q0, 1e9).unwrap();
        assert!(squared_l2(q.as_slice(), q0.as_slice()).unwrap() < 1e-16);
        assert!(exact_qstar(&[], &q0, 1.0).is_err());
    }

    #[test]
    fn qstar_beats_random_simplex_points() {
        let mut rng = seeded_rng(21);
        for _ in 0..20 {
            let k = rng.random_range(2..6);
            let q0 = project_to_simplex(&(0..k).map(|_| rng.random::<f64>()).collect::<Vec<_>>())
                .unwrap();
            let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
            let history: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..k).map(|_| rng.random_range(0.0..3.0)).collect())
                .collect();
            let qs = exact_qstar(&history, &q0, lambda).unwrap();
            let mean: Vec<f64> = (0..k)
                .map(|j| history.iter().map(|g| g[j]).sum::<f64>() / 5.0)
                .collect();
            let best = concept_objective(qs.as_slice(), &mean, &q0, lambda);
            for _ in 0..500 {
                let e: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
                let s: f64 = e.iter().sum();
                let q: Vec<f64> = e.iter().map(|v| v / s).collect();
                assert!(concept_objective(&q, &mean, &q0, lambda) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn h_curve_shape() {
        let c = h_curve(100.0, 1.0, 100_000).unwrap();
        assert!(c.unimodal && c.interior);
        // stationary point solves s·ln s = μ²/2
        let s = c.argmax_s as f64;
        assert!((s * s.ln() - 5000.0).abs() < 20.0, "argmax {s}");
    }
}
