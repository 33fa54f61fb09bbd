mod common;

use hrrl::adversary::{regret_bound, theoretical_c};
use hrrl::model::loss;
use hrrl::numerics::{seeded_rng, ProbVector};
use hrrl::trainer::{initial_params, Mode, TrainConfig};
use hrrl::verify::{
    check_theorem1, concept_objective, exact_qstar, inner_max_oracle, instance_smoothness,
    random_instances, regret_experiment, OracleConfig,
};
use rand::Rng;

#[test]
fn oracle_is_sandwiched_between_loss_and_regularized_bound() {
    let instances = random_instances(20, 2, 3, 41).unwrap();
    for (i, inst) in instances.iter().enumerate() {
        let s = instance_smoothness(inst, i as u64).unwrap();
        let lambda_w = 4.0 * s.l_x;
        let cfg = OracleConfig {
            seed: i as u64,
            ..OracleConfig::default()
        };
        let value = inner_max_oracle(inst, lambda_w, &cfg).unwrap().value;
        let clean = loss(&inst.params, &inst.x, inst.y).unwrap();
        let t1 = check_theorem1(inst, &s, lambda_w, &cfg).unwrap();
        assert!(clean <= value + 1e-12, "instance {i}: {clean} > {value}");
        assert!(
            value <= t1.rhs + t1.tolerance,
            "instance {i}: {value} > {}",
            t1.rhs
        );
    }
}

/// Uniform point on the simplex from normalised exponentials.
fn simplex_sample(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[test]
fn exact_qstar_beats_sampled_simplex_points() {
    let mut rng = seeded_rng(2024);
    for h in 0..100 {
        let k = rng.random_range(2..=6);
        let t = rng.random_range(1..=50);
        let history: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..k).map(|_| 3.0 * rng.random::<f64>()).collect())
            .collect();
        let q0 = ProbVector::new(simplex_sample(&mut rng, k)).unwrap();
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        let mean: Vec<f64> = (0..k)
            .map(|j| history.iter().map(|g| g[j]).sum::<f64>() / t as f64)
            .collect();
        let qstar = exact_qstar(&history, &q0, lambda).unwrap();
        let best = concept_objective(qstar.as_slice(), &mean, &q0, lambda);
        for _ in 0..10_000 {
            let q = simplex_sample(&mut rng, k);
            let v = concept_objective(&q, &mean, &q0, lambda);
            assert!(
                v <= best + 1e-12,
                "history {h}: sample beats q* by {}",
                v - best
            );
        }
    }
}

fn tiny_regret_setup() -> (TrainConfig, hrrl::data::Dataset) {
    let ds = hrrl::data::generate_synthetic(&hrrl::data::SkewSpec {
        num_concepts: 4,
        classes_per_concept: 1,
        dim: 2,
        layout: hrrl::data::ClusterLayout::Random {
            seed: 3,
            radius: 2.0,
            scale: 1.0,
        },
        concept_weights: vec![0.4, 0.3, 0.2, 0.1],
        n_total: 200,
        seed: 1,
    })
    .unwrap();
    let cfg = TrainConfig {
        mode: Mode::Cl,
        iterations: 2000,
        lambda: 0.1,
        s: 0,
        ..TrainConfig::default()
    };
    (cfg, ds)
}

#[test]
fn plain_schedule_regret_respects_bound() {
    let (cfg, ds) = tiny_regret_setup();
    let init = initial_params(&cfg, &ds).unwrap();
    let r = regret_experiment(&cfg, &ds, &init, true, &[100, 1000]).unwrap();
    assert_eq!(r.beta, 0.0);
    let expected = regret_bound(r.mu, r.lambda, 0, r.t).unwrap();
    assert!((r.bound - expected).abs() <= 1e-12 * expected.abs());
    assert!(
        r.holds && r.average_regret >= -1e-12,
        "{} vs {}",
        r.average_regret,
        r.bound
    );
    assert!(r.checkpoints.iter().all(|p| p.holds));
}

#[test]
fn warm_phase_needs_c_above_one() {
    let (cfg, ds) = tiny_regret_setup();
    let cfg = TrainConfig {
        lambda: 5.0,
        s: 1000,
        ..cfg
    };
    let init = initial_params(&cfg, &ds).unwrap();
    let err = regret_experiment(&cfg, &ds, &init, true, &[]).unwrap_err();
    assert!(matches!(err, hrrl::Error::InvalidConfig(_)), "{err}");
    assert!(theoretical_c(1.0, 5.0, 1000).unwrap() < 1.0);
}

#[test]
fn regret_needs_a_learned_distribution() {
    let (cfg, ds) = tiny_regret_setup();
    let cfg = TrainConfig {
        mode: Mode::Erm,
        ..cfg
    };
    let init = initial_params(&cfg, &ds).unwrap();
    assert!(regret_experiment(&cfg, &ds, &init, true, &[]).is_err());
}
