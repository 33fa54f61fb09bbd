//! The minimax training loop. ERM, EL (example-level), CL (concept-level)
//! and HRRL (both) share one code path and differ only in two switches:
//! whether examples are augmented along their loss gradient, and whether the
//! concept distribution `q` is learned or pinned at `q0`.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{concept_gradient, learning_rate, AdversarialDistribution, ScheduleConfig};
use crate::augment::{augment_example, gradient_direction};
use crate::data::{reference_distribution, Dataset};
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, Activation, Arch, ModelParams};
use crate::numerics::{axpy, norm, seeded_stream, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Erm,
    El,
    Cl,
    Hrrl,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Erm, Mode::El, Mode::Cl, Mode::Hrrl];

    pub fn augments(self) -> bool {
        matches!(self, Mode::El | Mode::Hrrl)
    }

    pub fn learns_concepts(self) -> bool {
        matches!(self, Mode::Cl | Mode::Hrrl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Erm => "ERM",
            Mode::El => "EL",
            Mode::Cl => "CL",
            Mode::Hrrl => "HRRL",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ERM" => Ok(Mode::Erm),
            "EL" => Ok(Mode::El),
            "CL" => Ok(Mode::Cl),
            "HRRL" => Ok(Mode::Hrrl),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Model family to train; input and class counts come from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// 0 selects the linear softmax model.
    pub hidden_width: usize,
    pub activation: Activation,
    pub init_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_width: 0,
            activation: Activation::Tanh,
            init_scale: 0.1,
        }
    }
}

impl ModelSpec {
    pub fn arch(&self, input_dim: usize, classes: usize) -> Arch {
        if self.hidden_width == 0 {
            Arch::Linear { input_dim, classes }
        } else {
            Arch::Hidden {
                input_dim,
                width: self.hidden_width,
                classes,
                activation: self.activation,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub batch_size: usize,
    /// Constant model step size.
    pub eta_theta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub s: usize,
    pub c: f64,
    pub seed: u64,
    /// 0 disables periodic parameter snapshots.
    pub snapshot_every: usize,
    /// Heavy-ball momentum on θ; 0 gives plain SGD.
    pub momentum: f64,
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Hrrl,
            iterations: 1000,
            batch_size: 32,
            eta_theta: 0.1,
            lambda: 1.0,
            gamma: 1e-4,
            tau: 0.1,
            s: 1000,
            c: 10.0,
            seed: 0,
            snapshot_every: 0,
            momentum: 0.0,
            model: ModelSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            s: self.s,
            c: self.c,
            lambda: self.lambda,
            mu: 0.0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n {
            return bad(format!("batch size {} must be in 1..={n}", self.batch_size));
        }
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return bad(format!(
                "eta_theta must be positive, got {}",
                self.eta_theta
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be ≥ 0, got {}", self.gamma));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be ≥ 0, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.mode.learns_concepts() {
            self.schedule().validate()?;
        }
        Ok(())
    }
}

/// Dataset-level quantities the weighted step needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStats {
    pub n: usize,
    pub counts: Vec<usize>,
    pub q0: ProbVector,
}

impl ConceptStats {
    pub fn of(dataset: &Dataset) -> Self {
        ConceptStats {
            n: dataset.len(),
            counts: dataset.concept_counts().to_vec(),
            q0: reference_distribution(dataset),
        }
    }

    /// `(N / N_k) q_k`, evaluated as `q_k / q0_k` so that `q = q0` gives exactly 1.
    pub fn weight(&self, q: &ProbVector, k: usize) -> f64 {
        q[k] / self.q0[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub concepts: Vec<usize>,
}

impl Batch {
    pub fn gather(dataset: &Dataset, indices: &[usize]) -> Batch {
        Batch {
            inputs: indices.iter().map(|&i| dataset.row(i).to_vec()).collect(),
            labels: indices.iter().map(|&i| dataset.label(i)).collect(),
            concepts: indices.iter().map(|&i| dataset.concept(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `(1/m) Σ_i (N/N_k(i)) q_k(i) ∇_θ ℓ(x_i, y_i; θ)` together with the per-example losses.
pub fn weighted_gradient(
    params: &ModelParams,
    batch: &Batch,
    q: &ProbVector,
    stats: &ConceptStats,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty mini-batch"));
    }
    let m = batch.len() as f64;
    let mut grad = vec![0.0; params.arch.param_count()];
    let mut losses = Vec::with_capacity(batch.len());
    for ((x, &y), &k) in batch.inputs.iter().zip(&batch.labels).zip(&batch.concepts) {
        let r = loss_and_grads(params, x, y)?;
        axpy(stats.weight(q, k) / m, &r.grad_params, &mut grad);
        losses.push(r.value);
    }
    Ok((grad, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub params: ModelParams,
    pub losses: Vec<f64>,
    /// Norm of the full step direction (weighted gradient + γθ).
    pub grad_norm: f64,
}

/// `θ ← θ − η_θ ((1/m) Σ_i (N/N_k) q_k ∇_θ ℓ(x̃_i, y_i; θ) + γθ)`; the batch
/// inputs are used as given (already augmented, or clean).
pub fn model_step(
    params: &ModelParams,
    batch: &Batch,
    q: &ProbVector,
    stats: &ConceptStats,
    eta_theta: f64,
    gamma: f64,
) -> Result<StepOutcome> {
    let (mut direction, losses) = weighted_gradient(params, batch, q, stats)?;
    let theta = params.flat();
    axpy(gamma, &theta, &mut direction);
    let mut next = theta;
    axpy(-eta_theta, &direction, &mut next);
    Ok(StepOutcome {
        params: ModelParams::from_flat(params.arch, &next)?,
        losses,
        grad_norm: norm(&direction),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub mean_loss: f64,
    /// Concept step size; absent when `q` is pinned.
    pub eta_q: Option<f64>,
    /// `q_{t+1}`, after this iteration's update.
    pub q: Vec<f64>,
    pub grad_norm: f64,
    pub q_grad_norm: Option<f64>,
    #[serde(skip)]
    pub batch: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub config: TrainConfig,
    pub records: Vec<IterationRecord>,
    pub initial_params: ModelParams,
    pub final_params: ModelParams,
    pub final_q: ProbVector,
    pub wall_time_secs: f64,
}

/// Stream ids carved out of the run seed.
mod streams {
    pub const SAMPLING: u64 = 0;
    pub const INIT: u64 = 1;
}

pub fn sample_batch(rng: &mut impl Rng, n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

pub fn initial_params(cfg: &TrainConfig, dataset: &Dataset) -> Result<ModelParams> {
    let arch = cfg.model.arch(dataset.dim(), dataset.num_classes());
    let mut rng = seeded_stream(cfg.seed, streams::INIT);
    ModelParams::random(arch, cfg.model.init_scale, &mut rng)
}

pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<RunHistory> {
    train_from(cfg, dataset, initial_params(cfg, dataset)?, |_, _| Ok(()))
}

/// Runs the loop from `init`, calling `on_snapshot(t, θ_t)` every
/// `cfg.snapshot_every` iterations.
pub fn train_from(
    cfg: &TrainConfig,
    dataset: &Dataset,
    init: ModelParams,
    mut on_snapshot: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<RunHistory> {
    cfg.validate(dataset.len())?;
    if init.arch.input_dim() != dataset.dim() || init.arch.classes() != dataset.num_classes() {
        return Err(Error::invalid("initial parameters do not fit the dataset"));
    }
    let started = Instant::now();
    let stats = ConceptStats::of(dataset);
    let schedule = cfg.schedule();
    let mut adversary = if cfg.mode.learns_concepts() {
        Some(AdversarialDistribution::new(stats.q0.clone(), cfg.lambda)?)
    } else {
        None
    };
    let mut rng = seeded_stream(cfg.seed, streams::SAMPLING);
    let mut params = init.clone();
    let mut velocity = vec![0.0; params.arch.param_count()];
    let mut records = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        let indices = sample_batch(&mut rng, dataset.len(), cfg.batch_size);
        let mut batch = Batch::gather(dataset, &indices);
        if cfg.mode.augments() {
            for (x, &y) in batch.inputs.iter_mut().zip(&batch.labels) {
                let z = gradient_direction(&params, x, y)?;
                *x = augment_example(x, &z, cfg.tau);
            }
        }
        let q_t = adversary.as_ref().map_or(&stats.q0, |a| &a.q);

        let (mut direction, losses) = weighted_gradient(&params, &batch, q_t, &stats)?;
        let mut theta = params.flat();
        axpy(cfg.gamma, &theta, &mut direction);
        if cfg.momentum > 0.0 {
            for (v, d) in velocity.iter_mut().zip(&direction) {
                *v = cfg.momentum * *v + d;
            }
            axpy(-cfg.eta_theta, &velocity, &mut theta);
        } else {
            axpy(-cfg.eta_theta, &direction, &mut theta);
        }
        let grad_norm = norm(&direction);

        let (eta_q, q_grad_norm) = match adversary.as_mut() {
            Some(adv) => {
                let eta = learning_rate(t, &schedule);
                let g = concept_gradient(
                    &losses,
                    &batch.concepts,
                    stats.n,
                    &stats.counts,
                    batch.len(),
                )?;
                let g_norm = norm(&adv.ascent_direction(&g));
                *adv = adv.update(&g, eta)?;
                (Some(eta), Some(g_norm))
            }
            None => (None, None),
        };

        params = ModelParams::from_flat(params.arch, &theta)
            .map_err(|e| Error::InvalidInput(format!("iteration {t}: {e}")))?;
        records.push(IterationRecord {
            t,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            eta_q,
            q: adversary
                .as_ref()
                .map_or(&stats.q0, |a| &a.q)
                .as_slice()
                .to_vec(),
            grad_norm,
            q_grad_norm,
            batch: indices,
        });
        if cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0 {
            on_snapshot(t, &params)?;
        }
    }

    Ok(RunHistory {
        config: cfg.clone(),
        records,
        initial_params: init,
        final_params: params,
        final_q: adversary.map_or(stats.q0, |a| a.q),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Independent uniforms per trial.
    Iid,
    /// One uniform per stratum `[i/n, (i+1)/n)`.
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: usize,
    pub n_k: usize,
    pub trials: usize,
    pub empirical_plain: f64,
    pub empirical_reweighted: f64,
    /// `1/N_k − 1/N_k²`
    pub analytic_plain: f64,
    /// `N/N_k² − 1/N_k²`
    pub analytic_reweighted: f64,
    /// `analytic_reweighted / analytic_plain`, undefined for `N_k = 1`.
    pub analytic_ratio: Option<f64>,
    /// `(N − 1)/(N_k − 1)`
    pub simplified_ratio: Option<f64>,
}

/// Monte-Carlo comparison of two unbiased estimators of `1/N_k`: the indicator
/// of one example when sampling inside its concept (`δ₁`, success prob.
/// `1/N_k`) and the re-weighted indicator `(N/N_k) δ₂` when sampling from the
/// whole dataset (success prob. `1/N`).
pub fn variance_demo(
    n: usize,
    n_k: usize,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<VarianceReport> {
    if n_k == 0 || n_k > n {
        return Err(Error::invalid(format!(
            "need 1 ≤ N_k ≤ N, got N_k = {n_k}, N = {n}"
        )));
    }
    if trials < 2 {
        return Err(Error::invalid("need at least two trials"));
    }
    let scale = n as f64 / n_k as f64;
    let p1 = 1.0 / n_k as f64;
    let p2 = 1.0 / n as f64;
    let mut r1 = seeded_stream(seed, 0);
    let mut r2 = seeded_stream(seed, 1);
    let draw = |rng: &mut crate::numerics::SeededRng, i: usize| -> f64 {
        let u: f64 = rng.random();
        match sampling {
            Sampling::Iid => u,
            Sampling::Stratified => (i as f64 + u) / trials as f64,
        }
    };
    let mut plain = Welford::default();
    let mut reweighted = Welford::default();
    for i in 0..trials {
        let d1 = f64::from(u8::from(draw(&mut r1, i) < p1));
        let d2 = f64::from(u8::from(draw(&mut r2, i) < p2));
        plain.push(d1);
        reweighted.push(scale * d2);
    }
    let nk = n_k as f64;
    let analytic_plain = 1.0 / nk - 1.0 / (nk * nk);
    let analytic_reweighted = n as f64 / (nk * nk) - 1.0 / (nk * nk);
    let (analytic_ratio, simplified_ratio) = if n_k >= 2 {
        (
            Some(analytic_reweighted / analytic_plain),
            Some((n as f64 - 1.0) / (nk - 1.0)),
        )
    } else {
        (None, None)
    };
    Ok(VarianceReport {
        n,
        n_k,
        trials,
        empirical_plain: plain.variance(),
        empirical_reweighted: reweighted.variance(),
        analytic_plain,
        analytic_reweighted,
        analytic_ratio,
        simplified_ratio,
    })
}

#[derive(Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Population variance.
    fn variance(&self) -> f64 {
        self.m2 / self.n as f64
    }
}
