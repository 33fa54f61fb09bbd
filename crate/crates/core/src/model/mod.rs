//! Small differentiable classifiers with the parameter split θ = {δ, ω}:
//! δ drives the feature extractor f(·), ω is the linear softmax classifier on
//! top of it. Both gradients (w.r.t. θ and w.r.t. the input) are exact.

mod snapshot;

pub use snapshot::{decode_snapshot, encode_snapshot, read_snapshot, write_snapshot, SnapshotMeta};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SmoothLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            // log(1 + e^a), written to avoid overflow
            Activation::Softplus => a.max(0.0) + (-a.abs()).exp().ln_1p(),
        }
    }

    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::Softplus => 1.0 / (1.0 + (-a).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    /// Softmax regression on the raw input; f is the identity.
    Linear { input_dim: usize, classes: usize },
    /// One smooth hidden layer of `width` units feeding a softmax classifier.
    Hidden {
        input_dim: usize,
        width: usize,
        classes: usize,
        activation: Activation,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::Linear { input_dim, .. } | Arch::Hidden { input_dim, .. } => input_dim,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            Arch::Linear { classes, .. } | Arch::Hidden { classes, .. } => classes,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            Arch::Linear { input_dim, .. } => input_dim,
            Arch::Hidden { width, .. } => width,
        }
    }

    pub fn delta_len(&self) -> usize {
        match *self {
            Arch::Linear { .. } => 0,
            Arch::Hidden {
                input_dim, width, ..
            } => width * input_dim + width,
        }
    }

    pub fn omega_len(&self) -> usize {
        self.classes() * self.feature_dim() + self.classes()
    }

    pub fn param_count(&self) -> usize {
        self.delta_len() + self.omega_len()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Arch::Linear { input_dim, classes } => input_dim > 0 && classes >= 2,
            Arch::Hidden {
                input_dim,
                width,
                classes,
                ..
            } => input_dim > 0 && width > 0 && classes >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate architecture {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    /// Feature-extractor weights `[W1 (width×d, row-major) | b1]`; empty for `Linear`.
    pub delta: Vec<f64>,
    /// Classifier weights `[W (C×f, row-major) | b]`.
    pub omega: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, delta: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if delta.len() != arch.delta_len() || omega.len() != arch.omega_len() {
            return Err(Error::invalid(format!(
                "parameter counts ({}, {}) do not match {:?} ({}, {})",
                delta.len(),
                omega.len(),
                arch,
                arch.delta_len(),
                arch.omega_len()
            )));
        }
        if delta.iter().chain(&omega).any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(ModelParams { arch, delta, omega })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        Self::new(
            arch,
            vec![0.0; arch.delta_len()],
            vec![0.0; arch.omega_len()],
        )
    }

    /// Gaussian init with standard deviation `scale / sqrt(fan_in)`; biases start at zero.
    pub fn random(arch: Arch, scale: f64, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let sd = scale / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let mut delta = Vec::with_capacity(arch.delta_len());
        if let Arch::Hidden {
            input_dim, width, ..
        } = arch
        {
            delta.extend(draw(width * input_dim, input_dim));
            delta.extend(std::iter::repeat_n(0.0, width));
        }
        let (c, f) = (arch.classes(), arch.feature_dim());
        let mut omega = draw(c * f, f);
        omega.extend(std::iter::repeat_n(0.0, c));
        Self::new(arch, delta, omega)
    }

    /// θ as one vector, `[δ | ω]`.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.arch.param_count());
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.omega);
        v
    }

    pub fn from_flat(arch: Arch, theta: &[f64]) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        let (d, o) = theta.split_at(arch.delta_len());
        Self::new(arch, d.to_vec(), o.to_vec())
    }

    pub fn squared_norm(&self) -> f64 {
        self.delta.iter().chain(&self.omega).map(|v| v * v).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    fn hidden_preactivation(&self, x: &[f64], input_dim: usize, width: usize) -> Vec<f64> {
        let (w1, b1) = self.delta.split_at(width * input_dim);
        (0..width)
            .map(|h| {
                let row = &w1[h * input_dim..(h + 1) * input_dim];
                row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[h]
            })
            .collect()
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        let (c, f) = (self.arch.classes(), self.arch.feature_dim());
        let (w, b) = self.omega.split_at(c * f);
        (0..c)
            .map(|k| {
                let row = &w[k * f..(k + 1) * f];
                row.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + b[k]
            })
            .collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// The representation f(x) fed to the classifier.
pub fn extract_features(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_input(x)?;
    Ok(match params.arch {
        Arch::Linear { .. } => x.to_vec(),
        Arch::Hidden {
            input_dim,
            width,
            activation,
            ..
        } => params
            .hidden_preactivation(x, input_dim, width)
            .into_iter()
            .map(|a| activation.apply(a))
            .collect(),
    })
}

/// Class probabilities `softmax(W f(x) + b)`.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let f = extract_features(params, x)?;
    Ok(softmax(&params.logits(&f)))
}

/// Index of the most probable class (first one on ties).
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    let f = extract_features(params, x)?;
    let z = params.logits(&f);
    Ok(argmax(&z))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &value) in v.iter().enumerate() {
        if value > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Aligned with [`ModelParams::flat`].
    pub grad_params: Vec<f64>,
    pub grad_input: Vec<f64>,
}

/// Cross-entropy `−log p_y(x)` at label `y` (0-based).
pub fn loss(params: &ModelParams, x: &[f64], y: usize) -> Result<f64> {
    check_label(params, y)?;
    let f = extract_features(params, x)?;
    let z = params.logits(&f);
    Ok((log_sum_exp(&z) - z[y]).max(0.0))
}

fn check_label(params: &ModelParams, y: usize) -> Result<()> {
    if y >= params.arch.classes() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            params.arch.classes()
        )));
    }
    Ok(())
}

/// Cross-entropy with exact gradients w.r.t. θ = [δ | ω] and w.r.t. x.
pub fn loss_and_grads(params: &ModelParams, x: &[f64], y: usize) -> Result<LossReport> {
    check_label(params, y)?;
    params.check_input(x)?;
    let arch = params.arch;
    let (c, f_dim) = (arch.classes(), arch.feature_dim());

    let pre = match arch {
        Arch::Hidden {
            input_dim, width, ..
        } => Some(params.hidden_preactivation(x, input_dim, width)),
        Arch::Linear { .. } => None,
    };
    let features: Vec<f64> = match (arch, &pre) {
        (Arch::Hidden { activation, .. }, Some(a)) => {
            a.iter().map(|&v| activation.apply(v)).collect()
        }
        _ => x.to_vec(),
    };
    let z = params.logits(&features);
    let value = (log_sum_exp(&z) - z[y]).max(0.0);
    let mut dz = softmax(&z);
    dz[y] -= 1.0;

    let mut grad_params = vec![0.0; arch.param_count()];
    let (g_delta, g_omega) = grad_params.split_at_mut(arch.delta_len());
    let (g_w, g_b) = g_omega.split_at_mut(c * f_dim);
    for k in 0..c {
        for j in 0..f_dim {
            g_w[k * f_dim + j] = dz[k] * features[j];
        }
        g_b[k] = dz[k];
    }

    // dL/df = Wᵀ dz
    let w = &params.omega[..c * f_dim];
    let mut d_features = vec![0.0; f_dim];
    for k in 0..c {
        for j in 0..f_dim {
            d_features[j] += w[k * f_dim + j] * dz[k];
        }
    }

    let grad_input = match (arch, pre) {
        (Arch::Linear { .. }, _) => d_features,
        (
            Arch::Hidden {
                input_dim,
                width,
                activation,
                ..
            },
            Some(a),
        ) => {
            let d_pre: Vec<f64> = (0..width)
                .map(|h| d_features[h] * activation.derivative(a[h]))
                .collect();
            let (g_w1, g_b1) = g_delta.split_at_mut(width * input_dim);
            let w1 = &params.delta[..width * input_dim];
            let mut gx = vec![0.0; input_dim];
            for h in 0..width {
                for i in 0..input_dim {
                    g_w1[h * input_dim + i] = d_pre[h] * x[i];
                    gx[i] += w1[h * input_dim + i] * d_pre[h];
                }
                g_b1[h] = d_pre[h];
            }
            gx
        }
        (Arch::Hidden { .. }, None) => unreachable!("hidden pre-activations are always computed"),
    };

    Ok(LossReport {
        value,
        grad_params,
        grad_input,
    })
}

/// The model's cross-entropy as a [`SmoothLoss`] over `(x, y, θ)`, θ flattened.
#[derive(Debug, Clone, Copy)]
pub struct ModelLoss {
    pub arch: Arch,
}

impl SmoothLoss for ModelLoss {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn param_dim(&self) -> usize {
        self.arch.param_count()
    }

    fn value_and_input_grad(&self, x: &[f64], y: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = ModelParams::from_flat(self.arch, theta)?;
        let r = loss_and_grads(&params, x, y)?;
        Ok((r.value, r.grad_input))
    }
}
