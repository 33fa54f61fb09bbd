//! The twelve acceptance criteria, one line each. Run with
//! `cargo test -p hrrl --test acceptance`; exits non-zero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hrrl::adversary::{concept_gradient, learning_rate, theoretical_c, ScheduleConfig};
use hrrl::cli::{load_config, LoadedConfig};
use hrrl::data::{reference_distribution, Dataset};
use hrrl::eval::{concept_profile, robustness_sweep, DEFAULT_STEP_SIZES};
use hrrl::model::{loss_and_grads, Activation, Arch, ModelParams};
use hrrl::numerics::{project_to_simplex, seeded_rng, ProbVector};
use hrrl::trainer::{
    initial_params, model_step, sample_batch, train, variance_demo, weighted_gradient, Batch,
    ConceptStats, Mode, Sampling, TrainConfig,
};
use hrrl::verify::{bound_suite, h_curve, random_instances, regret_experiment, warm_phase_check};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs as f64, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn fixture(overrides: &[String]) -> LoadedConfig {
    load_config(Some(&common::config_path("fixture.toml")), overrides).unwrap()
}

fn projection() -> Outcome {
    let started = Instant::now();
    let mut rng = seeded_rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let dim = rng.random_range(2..=64);
        let scale = [0.01, 0.1, 1.0, 10.0][i % 4];
        let v: Vec<f64> = if i % 10 == 9 {
            let e: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        } else {
            (0..dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let got = project_to_simplex(&v).map_err(|e| e.to_string())?;
        let (want, kkt) = common::simplex_qp(&v);
        ensure(kkt < 1e-12, || {
            format!("oracle KKT residual {kkt:e} on vector {i}")
        })?;
        let err = got
            .as_slice()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    ensure(worst <= 1e-9, || format!("max ∞-norm gap {worst:e}"))?;
    within(started.elapsed(), 5)?;
    Ok(format!("1000 vectors, max ∞-norm gap {worst:.1e}"))
}

fn random_arch(rng: &mut impl Rng, kind: usize) -> Arch {
    let input_dim = rng.random_range(1..=6);
    let classes = rng.random_range(2..=5);
    let width = rng.random_range(1..=8);
    match kind {
        0 => Arch::Linear { input_dim, classes },
        1 => Arch::Hidden {
            input_dim,
            width,
            classes,
            activation: Activation::Tanh,
        },
        _ => Arch::Hidden {
            input_dim,
            width,
            classes,
            activation: Activation::Softplus,
        },
    }
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut rng = seeded_rng(2);
    let mut worst: f64 = 0.0;
    for kind in 0..3 {
        for i in 0..50 {
            let arch = random_arch(&mut rng, kind);
            let params = ModelParams::random(arch, 1.5, &mut rng).unwrap();
            let theta: Vec<f64> = params
                .flat()
                .iter()
                .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let params = ModelParams::from_flat(arch, &theta).unwrap();
            let x: Vec<f64> = (0..arch.input_dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let y = rng.random_range(0..arch.classes());
            let r = loss_and_grads(&params, &x, y).unwrap();
            let ep = common::relative_error(
                &r.grad_params,
                &common::fd_param_grad(&params, &x, y, 1e-5),
            );
            let ex =
                common::relative_error(&r.grad_input, &common::fd_input_grad(&params, &x, y, 1e-5));
            ensure(ep <= 1e-6 && ex <= 1e-6, || {
                format!("{arch:?} instance {i}: rel. errors {ep:e} / {ex:e}")
            })?;
            worst = worst.max(ep).max(ex);
        }
    }
    within(started.elapsed(), 10)?;
    Ok(format!(
        "150 instances over 3 architectures, max relative error {worst:.1e}"
    ))
}

fn unbiasedness() -> Outcome {
    let ds = common::six_example_fixture();
    let arch = Arch::Hidden {
        input_dim: 2,
        width: 3,
        classes: 3,
        activation: Activation::Tanh,
    };
    let params = ModelParams::random(arch, 2.0, &mut seeded_rng(3)).unwrap();
    let stats = ConceptStats::of(&ds);
    let q = ProbVector::new(vec![0.3, 0.7]).unwrap();
    let n = ds.len();

    let mut full = vec![0.0; arch.param_count()];
    let mut concept_loss = [0.0; 2];
    for i in 0..n {
        let k = ds.concept(i);
        let nk = ds.concept_counts()[k] as f64;
        let r = loss_and_grads(&params, ds.row(i), ds.label(i)).unwrap();
        for (f, g) in full.iter_mut().zip(&r.grad_params) {
            *f += q[k] / nk * g;
        }
        concept_loss[k] += r.value / nk;
    }

    let mut mean = vec![0.0; arch.param_count()];
    let mut mean_g = [0.0; 2];
    let pairs = (n * n) as f64;
    for a in 0..n {
        for b in 0..n {
            let batch = Batch::gather(&ds, &[a, b]);
            let (g, losses) = weighted_gradient(&params, &batch, &q, &stats).unwrap();
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += v / pairs;
            }
            let cg = concept_gradient(&losses, &batch.concepts, n, ds.concept_counts(), 2).unwrap();
            mean_g[0] += cg[0] / pairs;
            mean_g[1] += cg[1] / pairs;
        }
    }
    let gap = mean
        .iter()
        .zip(&full)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gap_q = (mean_g[0] - concept_loss[0])
        .abs()
        .max((mean_g[1] - concept_loss[1]).abs());
    ensure(gap <= 1e-10, || format!("model gradient gap {gap:e}"))?;
    ensure(gap_q <= 1e-10, || format!("concept gradient gap {gap_q:e}"))?;
    Ok(format!(
        "36 ordered batches, gaps {gap:.1e} (θ) / {gap_q:.1e} (q)"
    ))
}

fn variance() -> Outcome {
    let r =
        variance_demo(1000, 100, 100_000, 0, Sampling::Stratified).map_err(|e| e.to_string())?;
    let (a1, a2) = (1.0 / 100.0 - 1.0 / 1e4, 1000.0 / 1e4 - 1.0 / 1e4);
    ensure(
        (r.analytic_plain - a1).abs() < 1e-15 && (r.analytic_reweighted - a2).abs() < 1e-15,
        || format!("analytic {} / {}", r.analytic_plain, r.analytic_reweighted),
    )?;
    let rel1 = (r.empirical_plain - a1).abs() / a1;
    let rel2 = (r.empirical_reweighted - a2).abs() / a2;
    ensure(rel1 <= 0.05 && rel2 <= 0.05, || {
        format!(
            "empirical {} / {} vs {a1} / {a2}",
            r.empirical_plain, r.empirical_reweighted
        )
    })?;
    Ok(format!(
        "{:.4} / {:.4} vs {a1:.4} / {a2:.4} (stratified, 1e5 trials)",
        r.empirical_plain, r.empirical_reweighted
    ))
}

fn bound_report() -> (hrrl::verify::BoundSuiteReport, Duration) {
    let started = Instant::now();
    let instances = random_instances(100, 2, 2, 0).unwrap();
    (bound_suite(&instances, 4.0, 0), started.elapsed())
}

fn regularized_bound(suite: &hrrl::verify::BoundSuiteReport, elapsed: Duration) -> Outcome {
    ensure(suite.oracle_failures.is_empty(), || {
        format!("oracle failures: {:?}", suite.oracle_failures)
    })?;
    ensure(suite.regularized_violations == 0, || {
        format!("{} violations", suite.regularized_violations)
    })?;
    within(elapsed, 120)?;
    let min = suite
        .regularized
        .iter()
        .map(|r| r.slack)
        .fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{} instances, 0 violations, min slack {min:.3} (suite {:.1}s)",
        suite.instances,
        elapsed.as_secs_f64()
    ))
}

fn augmented_bound(suite: &hrrl::verify::BoundSuiteReport) -> Outcome {
    ensure(suite.oracle_failures.is_empty(), || {
        format!("oracle failures: {:?}", suite.oracle_failures)
    })?;
    ensure(suite.augmented_violations == 0, || {
        format!("{} violations", suite.augmented_violations)
    })?;
    ensure(suite.augmented.iter().all(|r| r.alpha >= 0.0), || {
        format!("{} negative α", suite.negative_alpha)
    })?;
    let rate = suite
        .augmented
        .iter()
        .filter(|r| r.bound.rhs <= r.rhs_regularized)
        .count() as f64
        / suite.instances as f64;
    Ok(format!(
        "0 violations, α ≥ 0 on all; tightness rate {:.0}%",
        100.0 * rate
    ))
}

/// `(1/T)(μ²/(2λ)(ln T + 1) − (μ√(ln s/(2λ)) − √(sλ))²)`
fn bound_by_hand(mu: f64, lambda: f64, s: f64, t: f64) -> f64 {
    let h = mu * (s.ln() / (2.0 * lambda)).sqrt() - (s * lambda).sqrt();
    (mu * mu / (2.0 * lambda) * (t.ln() + 1.0) - h * h) / t
}

fn regret() -> Outcome {
    let started = Instant::now();
    let cfg = fixture(&[]);
    let ds = cfg.train_dataset().unwrap();
    let base = cfg.train_config();
    let pre = TrainConfig {
        mode: Mode::Erm,
        iterations: 3000,
        seed: 0,
        ..base.clone()
    };
    let theta = train(&pre, &ds).map_err(|e| e.to_string())?.final_params;
    let rc = TrainConfig {
        mode: Mode::Cl,
        iterations: 10_000,
        batch_size: 32,
        lambda: 0.1,
        s: 1000,
        seed: 0,
        ..base
    };
    let r = regret_experiment(&rc, &ds, &theta, true, &[100, 1000]).map_err(|e| e.to_string())?;
    ensure(
        ds.num_concepts() == 4 && r.t == 10_000 && r.frozen_theta,
        || "wrong setup".into(),
    )?;
    let bound = bound_by_hand(r.mu, 0.1, 1000.0, 1e4);
    ensure((bound - r.bound).abs() <= 1e-9 * bound.abs(), || {
        format!("bound {} vs hand {bound}", r.bound)
    })?;
    ensure(r.average_regret <= bound, || {
        format!("regret {} > bound {bound}", r.average_regret)
    })?;
    let (r2, r3) = (
        r.checkpoints[0].average_regret,
        r.checkpoints[1].average_regret,
    );
    ensure(r.average_regret < r3 && r3 < r2, || {
        format!(
            "regret not decreasing: {r2:e}, {r3:e}, {:e}",
            r.average_regret
        )
    })?;
    within(started.elapsed(), 60)?;
    Ok(format!(
        "regret {r2:.2e} > {r3:.2e} > {:.2e}, bound at 1e4 {bound:.2e} (μ {:.2}, c {:.2})",
        r.average_regret, r.mu, r.c
    ))
}

fn warm_phase() -> Outcome {
    let report = warm_phase_check(200, 0).map_err(|e| e.to_string())?;
    ensure(report.samples == 200 && report.violations == 0, || {
        format!("{} violations", report.violations)
    })?;
    let mut rng = seeded_rng(8);
    let mut checked = 0;
    while checked < 200 {
        let mu: f64 = rng.random_range(0.1..500.0);
        let lambda: f64 = 10f64.powf(rng.random_range(-3.0..2.0));
        let s = rng.random_range(2..100_000usize) as f64;
        if mu / lambda * (s.ln() / (2.0 * s)).sqrt() <= 1.0 {
            continue;
        }
        let h = mu * (s.ln() / (2.0 * lambda)).sqrt() - (s * lambda).sqrt();
        ensure(h > 0.0, || format!("h = {h} at μ={mu}, λ={lambda}, s={s}"))?;
        checked += 1;
    }
    let mut peaks = Vec::new();
    for mu in [50.0, 100.0, 150.0, 200.0] {
        let curve = h_curve(mu, 1.0, 10_000).map_err(|e| e.to_string())?;
        let argmax = (2..=10_000)
            .max_by(|&a, &b| {
                let h = |s: usize| mu * ((s as f64).ln() / 2.0).sqrt() - (s as f64).sqrt();
                h(a).total_cmp(&h(b))
            })
            .unwrap();
        ensure(
            curve.interior && curve.unimodal && curve.argmax_s == argmax,
            || {
                format!(
                    "μ={mu}: peak {} (hand {argmax}), interior {}",
                    curve.argmax_s, curve.interior
                )
            },
        )?;
        peaks.push(format!("{argmax}"));
    }
    ensure(theoretical_c(100.0, 1.0, 1000).unwrap() > 1.0, || {
        "c ≤ 1".into()
    })?;
    Ok(format!(
        "0 / 200 violations, min h {:.3}; λ=1 peaks at s = {}",
        report.min_h,
        peaks.join(", ")
    ))
}

struct Averages {
    worst: f64,
    spread: f64,
    sweep: Vec<f64>,
}

fn averaged(mode: &str, sweep: bool) -> Averages {
    let seeds = [0u64, 1, 2];
    let mut out = Averages {
        worst: 0.0,
        spread: 0.0,
        sweep: vec![0.0; DEFAULT_STEP_SIZES.len()],
    };
    for seed in seeds {
        let cfg = fixture(&[format!("train.mode={mode}"), format!("train.seed={seed}")]);
        let (ds, held_out) = (cfg.train_dataset().unwrap(), cfg.eval_dataset().unwrap());
        let params = train(&cfg.train_config(), &ds).unwrap().final_params;
        let p = concept_profile(&params, &held_out).unwrap();
        out.worst += p.worst / 3.0;
        out.spread += p.spread / 3.0;
        if sweep {
            let curve = robustness_sweep(&params, &held_out, &DEFAULT_STEP_SIZES).unwrap();
            for (a, v) in out.sweep.iter_mut().zip(curve.accuracies) {
                *a += v / 3.0;
            }
        }
    }
    out
}

fn concept_trend() -> Outcome {
    let started = Instant::now();
    let cl = averaged("CL", false);
    let erm = averaged("ERM", false);
    let cfg = fixture(&[]);
    ensure(
        cfg.config.data.concept_weights == [0.7, 0.1, 0.1, 0.1],
        || "fixture weights changed".into(),
    )?;
    ensure(cl.worst - erm.worst >= 0.02, || {
        format!("worst concept CL {:.4} vs ERM {:.4}", cl.worst, erm.worst)
    })?;
    ensure(cl.spread < erm.spread, || {
        format!("spread CL {:.4} vs ERM {:.4}", cl.spread, erm.spread)
    })?;
    within(started.elapsed(), 180)?;
    Ok(format!(
        "worst concept {:.3} → {:.3}, spread {:.3} → {:.3} (ERM → CL, 3 seeds)",
        erm.worst, cl.worst, erm.spread, cl.spread
    ))
}

fn example_trend() -> Outcome {
    let erm = averaged("ERM", true).sweep;
    let el = averaged("EL", true).sweep;
    ensure(erm.windows(2).all(|w| w[1] <= w[0]), || {
        format!("ERM sweep not non-increasing: {erm:?}")
    })?;
    for i in 1..erm.len() {
        ensure(el[i] >= erm[i], || {
            format!(
                "step {}: EL {:.4} < ERM {:.4}",
                DEFAULT_STEP_SIZES[i], el[i], erm[i]
            )
        })?;
    }
    let last = erm.len() - 1;
    ensure(el[last] > erm[last], || {
        "no strict gain at the largest step".into()
    })?;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok(format!("ERM [{}], EL [{}]", fmt(&erm), fmt(&el)))
}

/// Reduced fractions: `(N/N_k)·(N_k/N)` must reduce to 1/1.
fn reduces_to_one(n: usize, nk: usize) -> bool {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let (num, den) = (n as u128 * nk as u128, nk as u128 * n as u128);
    let g = gcd(num, den);
    num / g == 1 && den / g == 1
}

fn collapse() -> Outcome {
    let cfg = fixture(&[]);
    let ds = cfg.train_dataset().unwrap();
    let stats = ConceptStats::of(&ds);
    let tc = TrainConfig {
        tau: 0.0,
        ..cfg.train_config()
    };
    let mut params = initial_params(&tc, &ds).unwrap();
    let mut rng = seeded_rng(11);
    for step in 0..50 {
        let batch = Batch::gather(&ds, &sample_batch(&mut rng, ds.len(), tc.batch_size));
        let hrrl = model_step(&params, &batch, &stats.q0, &stats, tc.eta_theta, tc.gamma)
            .unwrap()
            .params;
        let theta = params.flat();
        let m = batch.len() as f64;
        let mut dir = vec![0.0; theta.len()];
        for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
            let g = loss_and_grads(&params, x, y).unwrap().grad_params;
            for (d, gj) in dir.iter_mut().zip(&g) {
                *d += (1.0 / m) * gj;
            }
        }
        for (d, t) in dir.iter_mut().zip(&theta) {
            *d += tc.gamma * t;
        }
        let erm: Vec<f64> = theta
            .iter()
            .zip(&dir)
            .map(|(t, d)| t + -tc.eta_theta * d)
            .collect();
        let same = hrrl
            .flat()
            .iter()
            .zip(&erm)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || {
            format!("step {step}: HRRL step differs from ERM + weight decay")
        })?;
        params = hrrl;
    }

    let tiny = load_config(Some(&common::config_path("tiny.toml")), &[]).unwrap();
    let fixtures: Vec<(&str, Dataset)> = vec![
        ("fixture", ds.clone()),
        ("fixture held-out", cfg.eval_dataset().unwrap()),
        ("tiny", tiny.train_dataset().unwrap()),
        ("tiny held-out", tiny.eval_dataset().unwrap()),
        ("imagenet census", common::imagenet_fixture()),
        ("six examples", common::six_example_fixture()),
    ];
    for (name, d) in &fixtures {
        let stats = ConceptStats::of(d);
        let q0 = reference_distribution(d);
        for (k, &nk) in d.concept_counts().iter().enumerate() {
            ensure(reduces_to_one(d.len(), nk), || {
                format!("{name}: concept {k}")
            })?;
            ensure(stats.weight(&q0, k) == 1.0, || {
                format!("{name}: weight {} for concept {k}", stats.weight(&q0, k))
            })?;
        }
    }
    let eta = learning_rate(
        1,
        &ScheduleConfig {
            s: 0,
            c: 1.0,
            lambda: 1.0,
            mu: 0.0,
        },
    );
    ensure(eta == 1.0, || "schedule".into())?;
    Ok(format!(
        "50 bit-identical steps; unit weights on {} fixtures",
        fixtures.len()
    ))
}

fn run_cli(args: &[&str], out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_hrrl"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("HRRL_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = common::config_path("fixture.toml").display().to_string();
    let tiny = common::config_path("tiny.toml").display().to_string();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        run_cli(
            &["train", "--config", &fixture, "--seed", "7"],
            &root.join("train"),
        )?;
        let model = root.join("train/model.hrrl").display().to_string();
        run_cli(
            &[
                "eval", "--config", &fixture, "--params", &model, "--what", "sweep",
            ],
            &root.join("eval"),
        )?;
        run_cli(&["verify", "--config", &tiny], &root.join("verify"))?;
        run_cli(
            &[
                "sweep",
                "--config",
                &tiny,
                "--grid",
                "tau=0,0.1",
                "--grid",
                "lambda=0.5,1",
            ],
            &root.join("sweep"),
        )?;
    }
    let mut compared = 0;
    for sub in ["train", "eval", "verify", "sweep"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a").join(sub))
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().file_name())
            .filter(|n| n != "run_meta.json" && n != "snapshots")
            .collect();
        names.sort();
        for name in names {
            let a = std::fs::read(dir.path().join("a").join(sub).join(&name))
                .map_err(|e| e.to_string())?;
            let b = std::fs::read(dir.path().join("b").join(sub).join(&name))
                .map_err(|e| e.to_string())?;
            ensure(a == b, || {
                format!("{sub}/{} differs", name.to_string_lossy())
            })?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} artifacts byte-identical across repeated train/eval/verify/sweep runs"
    ))
}

fn main() {
    let (suite, suite_time) = bound_report();
    let criteria: Vec<Criterion> = vec![
        ("simplex projection vs KKT oracle", Box::new(projection)),
        ("gradients vs central differences", Box::new(gradients)),
        ("re-weighted gradient is unbiased", Box::new(unbiasedness)),
        ("variance of the re-weighted estimator", Box::new(variance)),
        (
            "regularized bound on the inner maximum",
            Box::new(|| regularized_bound(&suite, suite_time)),
        ),
        (
            "augmented bound on the inner maximum",
            Box::new(|| augmented_bound(&suite)),
        ),
        ("regret of the concept player", Box::new(regret)),
        ("h(s) positive when c > 1", Box::new(warm_phase)),
        ("concept-robustness trend", Box::new(concept_trend)),
        ("example-robustness trend", Box::new(example_trend)),
        ("mode-collapse identities", Box::new(collapse)),
        ("CLI determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
