//! Reference implementations shared by the integration tests. They are
//! written independently of the library code they check.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hrrl::data::{load_delimited, Column, Dataset, DelimitedSchema};
use hrrl::model::{loss, ModelParams};
use nalgebra::{DMatrix, DVector};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// Euclidean projection onto the simplex by a primal-dual active-set method:
/// each pass solves the dense equality-constrained KKT system on the free
/// set with an LU factorisation, then moves the worst primal or dual
/// violator across. Returns the point and the KKT residual it certifies.
pub fn simplex_qp(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.len();
    let mut free: Vec<bool> = vec![true; n];
    for _ in 0..10 * n + 10 {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let f = idx.len();
        // [I 1; 1ᵀ 0] [p; ν] = [v; 1]
        let mut a = DMatrix::<f64>::zeros(f + 1, f + 1);
        let mut b = DVector::<f64>::zeros(f + 1);
        for (r, &i) in idx.iter().enumerate() {
            a[(r, r)] = 1.0;
            a[(r, f)] = 1.0;
            a[(f, r)] = 1.0;
            b[r] = v[i];
        }
        b[f] = 1.0;
        let sol = a.lu().solve(&b).expect("KKT matrix is nonsingular");
        let nu = sol[f];
        let mut p = vec![0.0; n];
        for (r, &i) in idx.iter().enumerate() {
            p[i] = sol[r];
        }
        let primal = idx
            .iter()
            .map(|&i| (i, p[i]))
            .filter(|&(_, x)| x < 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = primal {
            free[i] = false;
            continue;
        }
        // Multiplier of p_i ≥ 0 at a fixed coordinate: μ_i = ν − v_i.
        let dual = (0..n)
            .filter(|&i| !free[i])
            .map(|i| (i, nu - v[i]))
            .filter(|&(_, m)| m < 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = dual {
            free[i] = true;
            continue;
        }
        let stationarity = (0..n)
            .map(|i| {
                let mu = if free[i] { 0.0 } else { nu - v[i] };
                (p[i] - v[i] + nu - mu).abs()
            })
            .fold(0.0, f64::max);
        let feasibility = (p.iter().sum::<f64>() - 1.0).abs();
        return (p, stationarity.max(feasibility));
    }
    panic!("active-set QP did not terminate");
}

/// Central differences of the cross-entropy in every parameter coordinate.
pub fn fd_param_grad(params: &ModelParams, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    let theta = params.flat();
    (0..theta.len())
        .map(|j| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[j] += h;
            minus[j] -= h;
            let fp = loss(&ModelParams::from_flat(params.arch, &plus).unwrap(), x, y).unwrap();
            let fm = loss(&ModelParams::from_flat(params.arch, &minus).unwrap(), x, y).unwrap();
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central differences in every input coordinate.
pub fn fd_input_grad(params: &ModelParams, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[j] += h;
            minus[j] -= h;
            (loss(params, &plus, y).unwrap() - loss(params, &minus, y).unwrap()) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn imagenet_fixture() -> Dataset {
    let schema = DelimitedSchema {
        feature_columns: vec![Column::Name("f1".into()), Column::Name("f2".into())],
        label_column: Column::Name("label".into()),
        concept_column: Some(Column::Name("concept".into())),
        concept_map: None,
        delimiter: ',',
        has_header: true,
    };
    load_delimited(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/imagenet_concepts.csv"),
        &schema,
    )
    .unwrap()
}

/// Six examples, three classes, two concepts (classes 0,1 → concept 0; class 2 → concept 1).
pub fn six_example_fixture() -> Dataset {
    let x = vec![
        0.5, -1.0, 1.2, 0.3, -0.7, 0.9, 0.1, 1.5, -1.1, -0.4, 0.8, -0.6,
    ];
    Dataset::new(
        2,
        x,
        vec![0, 1, 0, 2, 2, 1],
        vec![0, 0, 0, 1, 1, 0],
        vec![0, 0, 1],
        2,
    )
    .unwrap()
}
