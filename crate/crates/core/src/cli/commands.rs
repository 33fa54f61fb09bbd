use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::LoadedConfig;
use super::output::{num, write_json, write_run_meta, write_table, MetricsWriter};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, concept_profile, linear_probe, robustness_sweep, ConceptProfile, ProbeConfig,
};
use crate::model::{read_snapshot, write_snapshot, SnapshotMeta};
use crate::trainer::{
    initial_params, train, train_from, variance_demo, Mode, RunHistory, TrainConfig,
};
use crate::verify::{bound_suite, random_instances, regret_experiment, warm_phase_check};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run_id(command: &str, hash: &str, seed: u64) -> String {
    format!("{command}-{}-s{seed}", &hash[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub iterations: usize,
    pub seed: u64,
    pub config_hash: String,
    pub final_mean_loss: f64,
    pub final_q: Vec<f64>,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub eval_worst_concept: f64,
    pub eval_spread: f64,
}

fn summarize(
    history: &RunHistory,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    hash: &str,
) -> Result<TrainSummary> {
    let profile = concept_profile(&history.final_params, eval_ds)?;
    Ok(TrainSummary {
        mode: history.config.mode,
        iterations: history.config.iterations,
        seed: history.config.seed,
        config_hash: hash.to_string(),
        final_mean_loss: history.records.last().map_or(f64::NAN, |r| r.mean_loss),
        final_q: history.final_q.as_slice().to_vec(),
        train_accuracy: accuracy(&history.final_params, train_ds)?,
        eval_accuracy: profile.overall(),
        eval_worst_concept: profile.worst,
        eval_spread: profile.spread,
    })
}

/// Trains one model and writes `metrics.jsonl`, `model.hrrl`, optional
/// `snapshots/`, `summary.json` and `run_meta.json` into `out_dir`.
pub fn cmd_train(cfg: &LoadedConfig, out_dir: &Path) -> Result<TrainSummary> {
    let started = Instant::now();
    let train_ds = cfg.train_dataset()?;
    let eval_ds = cfg.eval_dataset()?;
    let tc = cfg.train_config();
    tc.validate(train_ds.len())?;
    ensure_dir(out_dir)?;
    let meta = SnapshotMeta {
        config_hash: cfg.hash.clone(),
        seed: tc.seed,
    };
    let snap_dir = out_dir.join("snapshots");
    if tc.snapshot_every > 0 {
        ensure_dir(&snap_dir)?;
    }
    let history = train_from(&tc, &train_ds, initial_params(&tc, &train_ds)?, |t, p| {
        write_snapshot(&snap_dir.join(format!("iter_{t:07}.hrrl")), p, &meta)
    })?;

    let mut metrics = MetricsWriter::create(
        &out_dir.join("metrics.jsonl"),
        &run_id("train", &cfg.hash, tc.seed),
        &cfg.hash,
        tc.seed,
    )?;
    let every = cfg.config.train.record_every.max(1);
    for r in &history.records {
        if r.t % every == 0 || r.t == tc.iterations {
            metrics.record("iteration", Some(r.t), r)?;
        }
    }
    let summary = summarize(&history, &train_ds, &eval_ds, &cfg.hash)?;
    metrics.record("summary", None, &summary)?;
    metrics.finish()?;
    write_snapshot(&out_dir.join("model.hrrl"), &history.final_params, &meta)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_run_meta(out_dir, "train", started.elapsed().as_secs_f64())?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    T1,
    T2,
    T3,
    Prop1,
    Variance,
}

impl Check {
    pub fn parse_list(which: &str) -> Result<Vec<Check>> {
        let mut out = Vec::new();
        for w in which.split(',') {
            match w.trim().to_ascii_lowercase().as_str() {
                "t1" => out.push(Check::T1),
                "t2" => out.push(Check::T2),
                "t3" => out.push(Check::T3),
                "prop1" => out.push(Check::Prop1),
                "variance" => out.push(Check::Variance),
                "all" => out.extend([
                    Check::T1,
                    Check::T2,
                    Check::T3,
                    Check::Prop1,
                    Check::Variance,
                ]),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown check `{other}` (expected t1, t2, t3, prop1, variance or all)"
                    )))
                }
            }
        }
        out.dedup();
        Ok(out)
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::T1 => "t1",
            Check::T2 => "t2",
            Check::T3 => "t3",
            Check::Prop1 => "prop1",
            Check::Variance => "variance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub check: &'static str,
    pub holds: bool,
    pub detail: String,
}

/// Relative deviation tolerated between Monte-Carlo and analytic variances.
pub const VARIANCE_REL_TOL: f64 = 0.05;

/// Runs the selected certifications. Failures of individual checks are
/// reported in the outcomes; only configuration and I/O problems are errors.
pub fn cmd_verify(
    cfg: &LoadedConfig,
    which: &[Check],
    out_dir: &Path,
) -> Result<Vec<CheckOutcome>> {
    let started = Instant::now();
    let v = &cfg.config.verify;
    ensure_dir(out_dir)?;
    let mut metrics = MetricsWriter::create(
        &out_dir.join("verify.jsonl"),
        &run_id("verify", &cfg.hash, v.seed),
        &cfg.hash,
        v.seed,
    )?;
    let mut outcomes = Vec::new();

    let wants = |c: Check| which.contains(&c);
    if wants(Check::T1) || wants(Check::T2) {
        let instances = random_instances(v.instances, v.input_dim, v.classes, v.seed)?;
        let suite = bound_suite(&instances, v.lambda_factor, v.seed);
        let rows: Vec<Vec<String>> = suite
            .regularized
            .iter()
            .zip(&suite.augmented)
            .enumerate()
            .map(|(i, (a, b))| {
                vec![
                    i.to_string(),
                    num(a.lhs),
                    num(a.rhs),
                    num(a.slack),
                    num(b.bound.rhs),
                    num(b.bound.slack),
                    num(b.tau),
                    num(b.alpha),
                    b.tighter.to_string(),
                ]
            })
            .collect();
        write_table(
            &out_dir.join("bounds.csv"),
            &cfg.hash,
            v.seed,
            &[
                "instance",
                "oracle",
                "rhs_reg",
                "slack_reg",
                "rhs_aug",
                "slack_aug",
                "tau",
                "alpha",
                "tighter",
            ],
            &rows,
        )?;
        let failures = suite.oracle_failures.len();
        if wants(Check::T1) {
            let min_slack = suite
                .regularized
                .iter()
                .map(|r| r.slack)
                .fold(f64::INFINITY, f64::min);
            let holds = failures == 0 && suite.regularized_violations == 0;
            metrics.record(
                "check",
                None,
                json!({"check": "t1", "holds": holds, "instances": suite.instances,
                       "violations": suite.regularized_violations, "oracle_failures": suite.oracle_failures,
                       "min_slack": min_slack}),
            )?;
            outcomes.push(CheckOutcome {
                check: "t1",
                holds,
                detail: format!(
                    "{} instances, {} violations, {failures} oracle failures, min slack {min_slack:.3e}",
                    suite.instances, suite.regularized_violations
                ),
            });
        }
        if wants(Check::T2) {
            let min_slack = suite
                .augmented
                .iter()
                .map(|r| r.bound.slack)
                .fold(f64::INFINITY, f64::min);
            let holds =
                failures == 0 && suite.augmented_violations == 0 && suite.negative_alpha == 0;
            metrics.record(
                "check",
                None,
                json!({"check": "t2", "holds": holds, "instances": suite.instances,
                       "violations": suite.augmented_violations, "negative_alpha": suite.negative_alpha,
                       "tightness_rate": suite.tightness_rate, "oracle_failures": suite.oracle_failures,
                       "min_slack": min_slack}),
            )?;
            outcomes.push(CheckOutcome {
                check: "t2",
                holds,
                detail: format!(
                    "{} instances, {} violations, {} negative alpha, tighter on {:.1}%, min slack {min_slack:.3e}",
                    suite.instances,
                    suite.augmented_violations,
                    suite.negative_alpha,
                    100.0 * suite.tightness_rate
                ),
            });
        }
    }

    if wants(Check::T3) {
        let outcome = match regret_check(cfg) {
            Ok(report) => {
                let decreasing = report
                    .checkpoints
                    .windows(2)
                    .all(|w| w[1].average_regret < w[0].average_regret);
                let holds = report.checkpoints.iter().all(|p| p.holds);
                metrics.record("check", None, json!({"check": "t3", "holds": holds, "decreasing": decreasing, "report": report}))?;
                let rows: Vec<Vec<String>> = report
                    .checkpoints
                    .iter()
                    .map(|p| {
                        vec![
                            p.t.to_string(),
                            num(p.average_regret),
                            num(p.bound),
                            p.holds.to_string(),
                        ]
                    })
                    .collect();
                write_table(
                    &out_dir.join("regret.csv"),
                    &cfg.hash,
                    v.seed,
                    &["T", "average_regret", "bound", "holds"],
                    &rows,
                )?;
                CheckOutcome {
                    check: "t3",
                    holds,
                    detail: format!(
                        "T={} regret {:.3e} bound {:.3e} (mu {:.3}, c {:.3}), decreasing over checkpoints: {decreasing}",
                        report.t, report.average_regret, report.bound, report.mu, report.c
                    ),
                }
            }
            Err(e) => {
                metrics.record(
                    "check",
                    None,
                    json!({"check": "t3", "holds": false, "error": e.to_string()}),
                )?;
                CheckOutcome {
                    check: "t3",
                    holds: false,
                    detail: e.to_string(),
                }
            }
        };
        outcomes.push(outcome);
    }

    if wants(Check::Prop1) {
        let report = warm_phase_check(v.warm_phase_samples, v.seed)?;
        let holds = report.holds();
        metrics.record(
            "check",
            None,
            json!({"check": "prop1", "holds": holds, "report": report}),
        )?;
        let peaks: Vec<String> = report
            .curves
            .iter()
            .map(|c| format!("mu={}:s*={}", c.mu, c.argmax_s))
            .collect();
        outcomes.push(CheckOutcome {
            check: "prop1",
            holds,
            detail: format!(
                "{} samples, {} violations, min h {:.3}; peaks {}",
                report.samples,
                report.violations,
                report.min_h,
                peaks.join(" ")
            ),
        });
    }

    if wants(Check::Variance) {
        let r = variance_demo(
            v.variance_n,
            v.variance_nk,
            v.variance_trials,
            v.seed,
            v.variance_sampling,
        )?;
        let rel = |e: f64, a: f64| (e - a).abs() / a;
        let holds = rel(r.empirical_plain, r.analytic_plain) <= VARIANCE_REL_TOL
            && rel(r.empirical_reweighted, r.analytic_reweighted) <= VARIANCE_REL_TOL;
        metrics.record(
            "check",
            None,
            json!({"check": "variance", "holds": holds, "report": r}),
        )?;
        outcomes.push(CheckOutcome {
            check: "variance",
            holds,
            detail: format!(
                "analytic {:.4} / {:.4}, empirical {:.4} / {:.4} over {} trials",
                r.analytic_plain,
                r.analytic_reweighted,
                r.empirical_plain,
                r.empirical_reweighted,
                r.trials
            ),
        });
    }

    metrics.finish()?;
    write_run_meta(out_dir, "verify", started.elapsed().as_secs_f64())?;
    Ok(outcomes)
}

fn regret_check(cfg: &LoadedConfig) -> Result<crate::verify::RegretReport> {
    let v = &cfg.config.verify;
    let ds = cfg.train_dataset()?;
    let base = cfg.train_config();
    let theta = if v.regret_pretrain > 0 {
        let pre = TrainConfig {
            mode: Mode::Erm,
            iterations: v.regret_pretrain,
            seed: v.seed,
            ..base.clone()
        };
        train(&pre, &ds)?.final_params
    } else {
        initial_params(
            &TrainConfig {
                seed: v.seed,
                ..base.clone()
            },
            &ds,
        )?
    };
    let rc = TrainConfig {
        mode: v.regret_mode,
        iterations: v.regret_iterations,
        batch_size: v.regret_batch_size,
        lambda: v.regret_lambda,
        s: v.regret_s,
        seed: v.seed,
        ..base
    };
    let marks: Vec<usize> = [100, 1000, 10_000, 100_000]
        .into_iter()
        .filter(|&t| t < v.regret_iterations)
        .collect();
    regret_experiment(&rc, &ds, &theta, v.frozen_theta, &marks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalWhat {
    Profile,
    Sweep,
    Probe,
}

impl std::str::FromStr for EvalWhat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "profile" => Ok(EvalWhat::Profile),
            "sweep" => Ok(EvalWhat::Sweep),
            "probe" => Ok(EvalWhat::Probe),
            _ => Err(Error::InvalidInput(format!(
                "unknown evaluation `{s}` (profile, sweep or probe)"
            ))),
        }
    }
}

fn profile_rows(p: &ConceptProfile) -> Vec<Vec<String>> {
    p.accuracies
        .iter()
        .enumerate()
        .map(|(rank, a)| {
            vec![
                (rank + 1).to_string(),
                (p.concepts[rank] + 1).to_string(),
                p.counts[rank].to_string(),
                num(*a),
            ]
        })
        .collect()
}

/// Evaluates a saved model on the held-out data and writes plot-ready files.
pub fn cmd_eval(
    cfg: &LoadedConfig,
    params_path: &Path,
    what: EvalWhat,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let started = Instant::now();
    let (params, meta) = read_snapshot(params_path)?;
    let ds = cfg.eval_dataset()?;
    if params.arch.input_dim() != ds.dim() || params.arch.classes() != ds.num_classes() {
        return Err(Error::Snapshot(format!(
            "{}: model has {} inputs and {} classes, dataset has {} and {}",
            params_path.display(),
            params.arch.input_dim(),
            params.arch.classes(),
            ds.dim(),
            ds.num_classes()
        )));
    }
    ensure_dir(out_dir)?;
    let e = &cfg.config.eval;
    let mut metrics = MetricsWriter::create(
        &out_dir.join("eval.jsonl"),
        &run_id("eval", &cfg.hash, meta.seed),
        &cfg.hash,
        meta.seed,
    )?;
    let summary = match what {
        EvalWhat::Profile => {
            let p = concept_profile(&params, &ds)?;
            write_table(
                &out_dir.join("profile.csv"),
                &cfg.hash,
                meta.seed,
                &["rank", "concept", "count", "accuracy"],
                &profile_rows(&p),
            )?;
            json!({"what": "profile", "overall": p.overall(), "worst": p.worst, "spread": p.spread, "profile": p})
        }
        EvalWhat::Sweep => {
            let curve = robustness_sweep(&params, &ds, &e.step_sizes)?;
            let rows: Vec<Vec<String>> = curve
                .step_sizes
                .iter()
                .zip(&curve.accuracies)
                .map(|(s, a)| vec![num(*s), num(*a)])
                .collect();
            write_table(
                &out_dir.join("sweep.csv"),
                &cfg.hash,
                meta.seed,
                &["step_size", "accuracy"],
                &rows,
            )?;
            json!({"what": "sweep", "curve": curve})
        }
        EvalWhat::Probe => {
            let target = if e.probe_shuffle_labels {
                ds.with_shuffled_labels(e.probe_seed)
            } else {
                ds
            };
            let pc = ProbeConfig {
                train_fraction: e.probe_train_fraction,
                seed: e.probe_seed,
                l2: e.probe_l2,
                ..ProbeConfig::default()
            };
            let r = linear_probe(&params, &target, &pc)?;
            json!({"what": "probe", "shuffled_labels": e.probe_shuffle_labels, "report": r})
        }
    };
    metrics.record("eval", None, &summary)?;
    metrics.finish()?;
    write_json(
        &out_dir.join(format!(
            "{}.json",
            summary["what"].as_str().unwrap_or("eval")
        )),
        &summary,
    )?;
    write_run_meta(out_dir, "eval", started.elapsed().as_secs_f64())?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Gamma,
    Tau,
}

/// `lambda` (grid from the config) or `lambda=0.1,1,10` (explicit values).
pub fn parse_grid(specs: &[String], cfg: &LoadedConfig) -> Result<Vec<(SweepParam, Vec<f64>)>> {
    let mut out: Vec<(SweepParam, Vec<f64>)> = Vec::new();
    for spec in specs {
        let (name, values) = match spec.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v)),
            None => (spec.trim(), None),
        };
        let param = match name {
            "lambda" => SweepParam::Lambda,
            "gamma" => SweepParam::Gamma,
            "tau" => SweepParam::Tau,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "cannot sweep `{name}` (lambda, gamma or tau)"
                )))
            }
        };
        let values = match values {
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidInput(format!("grid value `{x}` for {name} is not a number"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            None => match param {
                SweepParam::Lambda => cfg.config.schedule.lambda_grid.clone(),
                SweepParam::Gamma => cfg.config.train.gamma_grid.clone(),
                SweepParam::Tau => cfg.config.train.tau_grid.clone(),
            },
        };
        if values.is_empty() {
            return Err(Error::InvalidInput(format!("empty grid for {name}")));
        }
        if out.iter().any(|(p, _)| *p == param) {
            return Err(Error::InvalidInput(format!("{name} given twice")));
        }
        out.push((param, values));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub seed: u64,
    pub error: Option<String>,
    pub summary: Option<TrainSummary>,
    /// Accuracy at the largest perturbation step.
    pub perturbed_accuracy: Option<f64>,
}

/// Trains every grid point for every seed in `seeds` (in parallel) and writes
/// `sweep.csv`, `sweep.jsonl` and, when λ varies, `lambda_spread.csv`.
pub fn cmd_sweep(
    cfg: &LoadedConfig,
    grid: &[(SweepParam, Vec<f64>)],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepCell>> {
    let started = Instant::now();
    let train_ds = cfg.train_dataset()?;
    let eval_ds = cfg.eval_dataset()?;
    let base = cfg.train_config();
    ensure_dir(out_dir)?;

    let mut points: Vec<TrainConfig> = vec![base.clone()];
    for (param, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    match param {
                        SweepParam::Lambda => q.lambda = v,
                        SweepParam::Gamma => q.gamma = v,
                        SweepParam::Tau => q.tau = v,
                    }
                    q
                })
            })
            .collect();
    }
    let jobs: Vec<TrainConfig> = points
        .iter()
        .flat_map(|p| {
            seeds.iter().map(move |&s| TrainConfig {
                seed: s,
                ..p.clone()
            })
        })
        .collect();
    let steps = &cfg.config.eval.step_sizes;
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|tc| {
            let result = (|| -> Result<(TrainSummary, f64)> {
                let h = train(tc, &train_ds)?;
                let curve = robustness_sweep(&h.final_params, &eval_ds, steps)?;
                Ok((
                    summarize(&h, &train_ds, &eval_ds, &cfg.hash)?,
                    *curve.accuracies.last().unwrap(),
                ))
            })();
            let (summary, perturbed_accuracy, error) = match result {
                Ok((s, a)) => (Some(s), Some(a), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SweepCell {
                lambda: tc.lambda,
                gamma: tc.gamma,
                tau: tc.tau,
                seed: tc.seed,
                error,
                summary,
                perturbed_accuracy,
            }
        })
        .collect();

    let seed0 = seeds.first().copied().unwrap_or(base.seed);
    let mut metrics = MetricsWriter::create(
        &out_dir.join("sweep.jsonl"),
        &run_id("sweep", &cfg.hash, seed0),
        &cfg.hash,
        seed0,
    )?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut rows = Vec::new();
    for c in &cells {
        metrics.record("cell", None, c)?;
        let s = c.summary.as_ref();
        rows.push(vec![
            base.mode.name().to_string(),
            num(c.lambda),
            num(c.gamma),
            num(c.tau),
            c.seed.to_string(),
            if c.error.is_some() { "failed" } else { "ok" }.to_string(),
            opt(s.map(|s| s.final_mean_loss)),
            opt(s.map(|s| s.eval_accuracy)),
            opt(s.map(|s| s.eval_worst_concept)),
            opt(s.map(|s| s.eval_spread)),
            opt(c.perturbed_accuracy),
            c.error.clone().unwrap_or_default(),
        ]);
    }
    metrics.finish()?;
    write_table(
        &out_dir.join("sweep.csv"),
        &cfg.hash,
        seed0,
        &[
            "mode",
            "lambda",
            "gamma",
            "tau",
            "seed",
            "status",
            "final_loss",
            "accuracy",
            "worst",
            "spread",
            "perturbed_accuracy",
            "error",
        ],
        &rows,
    )?;
    if let Some((_, lambdas)) = grid.iter().find(|(p, _)| *p == SweepParam::Lambda) {
        let mut sorted = lambdas.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let rows: Vec<Vec<String>> = lambda_spread(&cells, &sorted)
            .into_iter()
            .map(|(l, spread, worst, n)| vec![num(l), num(spread), num(worst), n.to_string()])
            .collect();
        write_table(
            &out_dir.join("lambda_spread.csv"),
            &cfg.hash,
            seed0,
            &["lambda", "mean_spread", "mean_worst", "runs"],
            &rows,
        )?;
    }
    write_run_meta(out_dir, "sweep", started.elapsed().as_secs_f64())?;
    Ok(cells)
}

/// Mean spread and worst-concept accuracy over successful cells, per λ.
pub fn lambda_spread(cells: &[SweepCell], lambdas: &[f64]) -> Vec<(f64, f64, f64, usize)> {
    lambdas
        .iter()
        .map(|&l| {
            let ok: Vec<&TrainSummary> = cells
                .iter()
                .filter(|c| c.lambda == l)
                .filter_map(|c| c.summary.as_ref())
                .collect();
            let n = ok.len().max(1) as f64;
            (
                l,
                ok.iter().map(|s| s.eval_spread).sum::<f64>() / n,
                ok.iter().map(|s| s.eval_worst_concept).sum::<f64>() / n,
                ok.len(),
            )
        })
        .collect()
}
