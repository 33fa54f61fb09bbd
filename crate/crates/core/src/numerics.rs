//! Vector math shared by the rest of the crate: Euclidean projection onto the
//! probability simplex, squared distances, an empirical smoothness probe, and
//! the seeded random generator every stochastic routine draws from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ q_k = 1` for a vector to count as a member of the simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Multiplier applied to the raw finite-difference curvature estimates.
pub const SMOOTHNESS_SAFETY: f64 = 2.0;

/// The generator used everywhere. One per worker; never shared.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A point of the probability simplex Δ = { q : q ≥ 0, Σ q = 1 }.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "probability vector entries must be finite and non-negative",
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn on_simplex(v: &[f64]) -> bool {
    v.iter().all(|x| *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

/// Euclidean projection onto the probability simplex.
///
/// Sort-based: with `u` sorted descending, the threshold is
/// `θ = (Σ_{i≤ρ} u_i − 1)/ρ` for the largest `ρ` with `u_ρ > θ_ρ`,
/// and the projection is `max(v − θ, 0)`. Members of Δ are returned
/// unchanged, so the map is exactly idempotent.
pub fn project_to_simplex(v: &[f64]) -> Result<ProbVector> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("cannot project a non-finite vector"));
    }
    if on_simplex(v) {
        return Ok(ProbVector(v.to_vec()));
    }
    if v.len() == 1 {
        return Ok(ProbVector(vec![1.0]));
    }

    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();

    // Rounding can leave the sum a few ulps away from 1.
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        out.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(ProbVector(out))
}

pub fn squared_l2(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// A loss whose gradient with respect to the input can be evaluated at any
/// parameter vector. Used for curvature probing and the inner-max oracle.
pub trait SmoothLoss: Sync {
    fn input_dim(&self) -> usize;

    /// Zero for losses that do not depend on parameters.
    fn param_dim(&self) -> usize;

    fn value_and_input_grad(&self, x: &[f64], y: usize, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub x: Vec<f64>,
    pub y: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub step: f64,
    /// Random unit directions tried per probe (for both x and θ).
    pub directions: usize,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            step: 1e-4,
            directions: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessEstimate {
    /// Reported input-smoothness bound (raw × safety factor).
    pub l_x: f64,
    /// Reported Lipschitz constant of ∇ₓℓ in θ (raw × safety factor).
    pub l_theta: f64,
    pub raw_l_x: f64,
    pub raw_l_theta: f64,
    pub samples_used: usize,
}

/// Empirical curvature probe: the largest finite-difference ratio
/// `‖∇ₓℓ(x + h·d) − ∇ₓℓ(x)‖ / h` over probes and random unit directions,
/// and the same for perturbations of θ. Each probe draws its directions from
/// its own stream, so adding probes never lowers the result.
pub fn estimate_smoothness<L: SmoothLoss + ?Sized>(
    loss: &L,
    probes: &[Probe],
    settings: ProbeSettings,
) -> Result<SmoothnessEstimate> {
    if probes.is_empty() {
        return Err(Error::invalid(
            "smoothness estimation needs at least one probe",
        ));
    }
    if !(settings.step > 0.0 && settings.step.is_finite()) {
        return Err(Error::invalid("probe step must be positive"));
    }
    let h = settings.step;
    let mut raw_l_x: f64 = 0.0;
    let mut raw_l_theta: f64 = 0.0;
    for (i, probe) in probes.iter().enumerate() {
        if probe.x.iter().chain(&probe.theta).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("probe {i} is not finite")));
        }
        let mut rng = seeded_stream(settings.seed, i as u64);
        let (_, g0) = loss.value_and_input_grad(&probe.x, probe.y, &probe.theta)?;
        for _ in 0..settings.directions.max(1) {
            let d = random_unit(&mut rng, probe.x.len());
            let mut xp = probe.x.clone();
            axpy(h, &d, &mut xp);
            let (_, g1) = loss.value_and_input_grad(&xp, probe.y, &probe.theta)?;
            raw_l_x = raw_l_x.max(squared_l2(&g1, &g0)?.sqrt() / h);

            if loss.param_dim() > 0 {
                let d = random_unit(&mut rng, loss.param_dim());
                let mut tp = probe.theta.clone();
                axpy(h, &d, &mut tp);
                let (_, g1) = loss.value_and_input_grad(&probe.x, probe.y, &tp)?;
                raw_l_theta = raw_l_theta.max(squared_l2(&g1, &g0)?.sqrt() / h);
            }
        }
    }
    Ok(SmoothnessEstimate {
        l_x: SMOOTHNESS_SAFETY * raw_l_x,
        l_theta: SMOOTHNESS_SAFETY * raw_l_theta,
        raw_l_x,
        raw_l_theta,
        samples_used: probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl SmoothLoss for Quadratic {
        fn input_dim(&self) -> usize {
            3
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

    fn probes(dim: usize, n: usize, seed: u64) -> Vec<Probe> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| Probe {
                x: (0..dim).map(|_| rng.sample(StandardNormal)).collect(),
                y: 0,
                theta: vec![],
            })
            .collect()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_to_simplex(&[0.5, 0.5]).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        assert_eq!(
            project_to_simplex(&[2.0, 0.0]).unwrap().as_slice(),
            &[1.0, 0.0]
        );
        let p = project_to_simplex(&[0.6, 0.8]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(
            project_to_simplex(&[-1.0, 1.0]).unwrap().as_slice(),
            &[0.0, 1.0]
        );
        assert_eq!(project_to_simplex(&[-7.0]).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn projection_rejects_bad_input() {
        assert!(matches!(
            project_to_simplex(&[f64::NAN, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            project_to_simplex(&[f64::INFINITY]),
            Err(Error::InvalidInput(_))
        ));
        assert!(project_to_simplex(&[]).is_err());
    }

    #[test]
    fn squared_l2_examples() {
        assert_eq!(squared_l2(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_l2(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!((squared_l2(&[0.4, 0.6], &[0.5, 0.5]).unwrap() - 0.02).abs() < 1e-15);
        assert!(squared_l2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.3, 0.7]).is_ok());
        assert!(ProbVector::new(vec![0.3, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        let json = serde_json::to_string(&ProbVector::uniform(2)).unwrap();
        assert_eq!(json, "[0.5,0.5]");
        assert!(serde_json::from_str::<ProbVector>("[0.5,0.6]").is_err());
    }

    #[test]
    fn smoothness_of_quadratic_is_one() {
        let est =
            estimate_smoothness(&Quadratic, &probes(3, 5, 1), ProbeSettings::default()).unwrap();
        assert!((est.raw_l_x - 1.0).abs() < 1e-8, "{est:?}");
        assert!((est.l_x - 2.0).abs() < 2e-8);
        assert_eq!(est.l_theta, 0.0);
        assert_eq!(est.samples_used, 5);
    }

    #[test]
    fn smoothness_of_linear_is_zero() {
        let est = estimate_smoothness(
            &Linear(vec![1.0, -2.0, 0.5]),
            &probes(3, 5, 2),
            ProbeSettings::default(),
        )
        .unwrap();
        assert_eq!(est.raw_l_x, 0.0);
    }

    #[test]
    fn smoothness_needs_probes_and_positive_step() {
        assert!(estimate_smoothness(&Quadratic, &[], ProbeSettings::default()).is_err());
        let s = ProbeSettings {
            step: 0.0,
            ..Default::default()
        };
        assert!(estimate_smoothness(&Quadratic, &probes(3, 1, 0), s).is_err());
    }

    #[test]
    fn seeded_streams_are_reproducible() {
        let (mut r1, mut r2) = (seeded_rng(9), seeded_rng(9));
        let a: Vec<u64> = (0..4).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..4).map(|_| r2.random()).collect();
        assert_eq!(a, b);
        let s1: u64 = seeded_stream(9, 1).random();
        let s2: u64 = seeded_stream(9, 2).random();
        assert_ne!(s1, s2);
    }
}
