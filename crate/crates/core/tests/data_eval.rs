mod common;

use hrrl::data::{
    generate_synthetic, reference_distribution, ClusterLayout, SkewSpec, IMAGENET_CONCEPTS,
};
use hrrl::eval::{accuracy, linear_probe, ProbeConfig};
use hrrl::trainer::{train, Mode, ModelSpec, TrainConfig};

#[test]
fn imagenet_census_fixture_matches_the_table() {
    let ds = common::imagenet_fixture();
    assert_eq!(ds.len(), 1000);
    assert_eq!(ds.num_classes(), 1000);
    assert_eq!(ds.num_concepts(), 11);
    let counts: Vec<usize> = IMAGENET_CONCEPTS.iter().map(|c| c.2).collect();
    assert_eq!(ds.concept_counts(), counts.as_slice());
    let q0 = reference_distribution(&ds);
    let idx = |name: &str| IMAGENET_CONCEPTS.iter().position(|c| c.1 == name).unwrap();
    assert_eq!(q0[idx("Bird")], 0.059);
    assert_eq!(q0[idx("Dog")], 0.118);
    assert!((q0.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

fn balanced(n: usize, seed: u64) -> hrrl::data::Dataset {
    generate_synthetic(&SkewSpec {
        num_concepts: 2,
        classes_per_concept: 2,
        dim: 5,
        layout: ClusterLayout::Random {
            seed: 8,
            radius: 3.0,
            scale: 1.0,
        },
        concept_weights: vec![0.5, 0.5],
        n_total: n,
        seed,
    })
    .unwrap()
}

fn trained(ds: &hrrl::data::Dataset, width: usize) -> hrrl::model::ModelParams {
    let cfg = TrainConfig {
        mode: Mode::Erm,
        iterations: 1500,
        model: ModelSpec {
            hidden_width: width,
            ..ModelSpec::default()
        },
        ..TrainConfig::default()
    };
    train(&cfg, ds).unwrap().final_params
}

#[test]
fn probe_on_shuffled_labels_is_at_chance() {
    let source = trained(&balanced(400, 1), 8);
    let target = balanced(5000, 2).with_shuffled_labels(3);
    let r = linear_probe(&source, &target, &ProbeConfig::default()).unwrap();
    assert_eq!(r.test_size, 1000);
    assert!(
        (r.accuracy - 0.25).abs() <= 0.05,
        "shuffled-label probe accuracy {}",
        r.accuracy
    );
}

#[test]
fn probe_on_own_training_data_is_not_worse_than_the_model() {
    let ds = balanced(1000, 4);
    let params = trained(&ds, 0);
    let own = accuracy(&params, &ds).unwrap();
    let r = linear_probe(&params, &ds, &ProbeConfig::default()).unwrap();
    assert!(r.converged, "{r:?}");
    assert!(
        r.accuracy >= own - 0.02,
        "probe {} vs model {own}",
        r.accuracy
    );
}
