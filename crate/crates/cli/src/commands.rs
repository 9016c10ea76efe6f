use std::fs;
use std::path::Path;

use serde::Serialize;
use spectra_core::calibrate::{calibrate_eta, CalibrationConfig};
use spectra_core::eval::eval_report;
use spectra_core::frontier::{self, aggregate_frontier, SweepConfig};
use spectra_core::graph::{load_edge_list, split_edges, EdgeListFormat, SplitFile};
use spectra_core::model::Checkpoint;
use spectra_core::spectral::{self, extract_prefix, mode_assignment, write_mode_csv};
use spectra_core::study::{run_study, StudyConfig, TrainedCellRunner};
use spectra_core::trainer::{fit, write_train_log, FitResult, TrainConfig};
use spectra_core::{EdgeSplit, Error, Result};

use crate::output::RunDir;
use crate::{CalibrateArgs, OverparamArgs, PrefixArgs, SplitArgs, SweepArgs, TrainArgs, TrainFlags};

fn train_config(f: &TrainFlags) -> TrainConfig {
    TrainConfig {
        iterations: f.iters,
        learning_rate: f.lr,
        neg_ratio: f.neg_ratio,
        reg_weight: f.reg_weight,
        seed: f.seed.seed,
        ..TrainConfig::default()
    }
}

fn load_split(path: &Path) -> Result<(EdgeSplit, Option<Vec<String>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: SplitFile = serde_json::from_slice(&bytes)?;
    Ok((EdgeSplit::from_file(&file)?, file.node_labels))
}

#[derive(Serialize)]
struct FitSummary {
    eta: f64,
    rank_cap: usize,
    seed: u64,
    iterations_run: usize,
    d_spec: f64,
    participation_ratio: f64,
    k_tau_0_01: usize,
    eigenvalues: Vec<f64>,
}

fn fit_summary(f: &FitResult) -> Result<FitSummary> {
    let s = f.params.spectrum()?;
    Ok(FitSummary {
        eta: f.eta,
        rank_cap: f.params.rank_cap(),
        seed: f.seed,
        iterations_run: f.iterations_run,
        d_spec: f.final_d_spec,
        participation_ratio: spectral::participation_ratio(&s),
        k_tau_0_01: spectral::thresholded_rank(&s, 0.01),
        eigenvalues: s.eigenvalues().to_vec(),
    })
}

/// Checkpoint, evaluation report, fit summary and training log of one fit.
fn write_fit(run: &mut RunDir, f: &FitResult, split: &EdgeSplit, labels: Option<Vec<String>>) -> Result<()> {
    let mut ckpt: Checkpoint = f.params.to_checkpoint(f.seed, f.iterations_run);
    ckpt.node_labels = labels;
    run.write_json("checkpoint.json", &ckpt)?;
    let report = eval_report(&f.params, &split.test_edges, &split.test_non_edges, f.train_nll)?;
    run.write_json("eval.json", &report)?;
    run.write_json("fit.json", &fit_summary(f)?)?;
    let mut log = Vec::new();
    write_train_log(&mut log, &f.trace)?;
    run.write_bytes("train_log.csv", &log)
}

pub fn split(a: &SplitArgs) -> Result<()> {
    let format = match a.edges.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => EdgeListFormat::Csv,
        _ => EdgeListFormat::Whitespace,
    };
    let mut lg = load_edge_list(&a.edges, format)?;
    if a.lcc {
        lg = lg.largest_component();
    }
    let split = split_edges(&lg.graph, a.fraction, a.seed.seed)?;
    let mut run = RunDir::create(&a.out)?;
    run.write_json("split.json", &split.to_file(Some(lg.labels)))?;
    run.finish("split", a)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (split, labels) = load_split(&a.split)?;
    let f = fit(&split.train_graph, a.eta, a.rank_cap, &train_config(&a.train))?;
    let mut run = RunDir::create(&a.out)?;
    write_fit(&mut run, &f, &split, labels)?;
    run.finish("train", a)
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let (split, labels) = load_split(&a.split)?;
    let ccfg = CalibrationConfig {
        rel_tol: a.tau,
        eta_init_step: a.eta_step,
        eta_max_abs: a.eta_max_abs,
        max_probes: a.max_probes,
        ..CalibrationConfig::new(a.target_dspec)
    };
    let res = calibrate_eta(&split.train_graph, a.rank_cap, &ccfg, &train_config(&a.train))?;
    let mut run = RunDir::create(&a.out)?;
    run.write_json("calibration.json", &res.report())?;
    write_fit(&mut run, &res.final_fit, &split, labels)?;
    run.finish("calibrate", a)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let (split, _) = load_split(&a.split)?;
    let cfg = SweepConfig {
        eta_min: a.eta_min,
        eta_max: a.eta_max,
        rank_caps: a.rank_caps.clone(),
        seeds: a.seeds.clone(),
        step_init: a.step_init,
        step_min: a.step_min,
        step_max: a.step_max,
        eta_bin_width: a.eta_bin_width,
        ..SweepConfig::default()
    };
    cfg.validate()?;
    let points = frontier::sweep(&split, &cfg, &train_config(&a.train))?;
    let mut run = RunDir::create(&a.out)?;
    let mut buf = Vec::new();
    frontier::write_frontier_csv(&mut buf, &points)?;
    run.write_bytes("frontier.csv", &buf)?;
    if !points.iter().any(|p| p.is_ok()) {
        return Err(Error::Numerical("every sweep probe failed; see frontier.csv".into()));
    }
    let agg = aggregate_frontier(&points, cfg.eta_bin_width)?;
    let mut buf = Vec::new();
    frontier::write_aggregate_csv(&mut buf, &agg)?;
    run.write_bytes("aggregate.csv", &buf)?;
    let mut buf = Vec::new();
    frontier::write_peaks_csv(&mut buf, &agg)?;
    run.write_bytes("peaks.csv", &buf)?;
    run.finish("sweep", a)
}

pub fn prefix(a: &PrefixArgs) -> Result<()> {
    let ckpt = Checkpoint::read(&a.checkpoint)?;
    let params = ckpt.params()?;
    let r = params.rank_cap();
    if let Some(&k) = a.k.iter().find(|&&k| k == 0 || k > r) {
        return Err(Error::InvalidArgument(format!("prefix size {k} outside 1..={r}")));
    }
    let (basis, spectrum, _) = params.eigen()?;
    let labels = ckpt
        .node_labels
        .clone()
        .unwrap_or_else(|| (0..params.n_nodes()).map(|i| i.to_string()).collect());
    let mut run = RunDir::create(&a.out)?;
    for &k in &a.k {
        let p = extract_prefix(&basis, &spectrum, k)?;
        run.write_json(&format!("prefix_k{k}.json"), &p.export())?;
        let mut buf = Vec::new();
        write_mode_csv(&mut buf, &labels, &mode_assignment(&p))?;
        run.write_bytes(&format!("modes_k{k}.csv"), &buf)?;
    }
    run.finish("prefix", a)
}

pub fn overparam(a: &OverparamArgs) -> Result<()> {
    let (split, _) = load_split(&a.split)?;
    if a.n_seeds == 0 {
        return Err(Error::InvalidArgument("n_seeds must be at least 1".into()));
    }
    let n = split.train_graph.n_nodes();
    if let Some(&r) = a.rank_caps.iter().find(|&&r| r == 0 || r > n) {
        return Err(Error::InvalidArgument(format!("rank cap {r} outside 1..={n}")));
    }
    let tcfg = train_config(&a.train);
    tcfg.validate()?;
    let runner = TrainedCellRunner {
        split: &split,
        train: tcfg,
        rel_tol: a.tau,
    };
    let base = a.train.seed.seed;
    let cfg = StudyConfig {
        targets: a.targets.clone(),
        rank_caps: a.rank_caps.clone(),
        seeds: (base..base + a.n_seeds).collect(),
    };
    let report = run_study(&runner, &cfg)?;
    let mut run = RunDir::create(&a.out)?;
    run.write_json("study.json", &report)?;
    run.finish("overparam", a)
}
