//! Paired over-parameterization study: for each target d★ and rank cap r,
//! compare an η = 0 anchor with a retrain calibrated to d★, seed by seed.
//!
//! Comparison A pairs the calibrated retrain at (d★, r) with the anchor at
//! the same r. Comparison B pairs it with the anchor at r = d★, i.e. the
//! model whose capacity is set by the rank cap alone. Differences are always
//! `retrain − reference`, so a negative GenGap difference is an improvement.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_with, CalibrationConfig, TrainedResponse};
use crate::error::{Error, Result};
use crate::eval::{eval_report, wilcoxon_signed_rank, Alternative};
use crate::graph::EdgeSplit;
use crate::trainer::{fit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub tll: f64,
    pub train_nll: f64,
    pub gen_gap: f64,
    pub achieved_dspec: f64,
    pub eta: f64,
}

/// Produces the per-seed metrics of both conditions.
pub trait CellRunner: Sync {
    fn anchor(&self, rank_cap: usize, seed: u64) -> Result<CellMetrics>;
    fn calibrated(&self, target: f64, rank_cap: usize, seed: u64) -> Result<CellMetrics>;
}

/// Real runner: trains on the split and evaluates on its test pairs.
/// Calibration probes are full-budget fits, searched in both directions.
pub struct TrainedCellRunner<'a> {
    pub split: &'a EdgeSplit,
    pub train: TrainConfig,
    pub rel_tol: f64,
}

impl TrainedCellRunner<'_> {
    fn metrics(&self, f: &crate::trainer::FitResult) -> Result<CellMetrics> {
        let rep = eval_report(&f.params, &self.split.test_edges, &self.split.test_non_edges, f.train_nll)?;
        Ok(CellMetrics {
            tll: rep.tll,
            train_nll: rep.train_nll,
            gen_gap: rep.gen_gap,
            achieved_dspec: f.final_d_spec,
            eta: f.eta,
        })
    }

    fn cfg(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

impl CellRunner for TrainedCellRunner<'_> {
    fn anchor(&self, rank_cap: usize, seed: u64) -> Result<CellMetrics> {
        let f = fit(&self.split.train_graph, 0.0, rank_cap, &self.cfg(seed))?;
        self.metrics(&f)
    }

    fn calibrated(&self, target: f64, rank_cap: usize, seed: u64) -> Result<CellMetrics> {
        let ccfg = CalibrationConfig {
            rel_tol: self.rel_tol,
            bidirectional: true,
            ..CalibrationConfig::new(target)
        };
        ccfg.validate(rank_cap)?;
        let response = TrainedResponse {
            graph: &self.split.train_graph,
            rank_cap,
            train: self.cfg(seed),
            full_probes: true,
        };
        let res = calibrate_with(&response, &ccfg)?;
        self.metrics(&res.final_fit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub targets: Vec<f64>,
    pub rank_caps: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub anchor: Option<CellMetrics>,
    pub retrain: Option<CellMetrics>,
    /// Anchor at rank cap d★ (Comparison B reference).
    pub baseline: Option<CellMetrics>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    pub metric: String,
    pub n_pairs: usize,
    pub mean_difference: f64,
    pub statistic: Option<f64>,
    pub p_two_sided: Option<f64>,
    pub p_greater: Option<f64>,
    pub p_less: Option<f64>,
    /// All differences were exactly zero.
    pub degenerate: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub target: f64,
    pub rank_cap: usize,
    pub seeds: Vec<SeedRecord>,
    pub comparison_a: Vec<MetricTest>,
    pub comparison_b: Vec<MetricTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub cells: Vec<CellReport>,
    /// Cells that could not be formed, with the reason.
    pub skipped: Vec<String>,
}

const METRICS: [&str; 3] = ["tll", "train_nll", "gen_gap"];

fn metric(m: &CellMetrics, name: &str) -> f64 {
    match name {
        "tll" => m.tll,
        "train_nll" => m.train_nll,
        _ => m.gen_gap,
    }
}

/// Wilcoxon tests of `retrain − reference` per metric over the seeds where
/// both sides succeeded.
pub fn compare(pairs: &[(CellMetrics, CellMetrics)]) -> Vec<MetricTest> {
    METRICS
        .iter()
        .map(|&name| {
            let d: Vec<f64> = pairs.iter().map(|(r, a)| metric(r, name) - metric(a, name)).collect();
            let mean_difference = if d.is_empty() {
                f64::NAN
            } else {
                d.iter().sum::<f64>() / d.len() as f64
            };
            let mut t = MetricTest {
                metric: name.to_string(),
                n_pairs: d.len(),
                mean_difference,
                statistic: None,
                p_two_sided: None,
                p_greater: None,
                p_less: None,
                degenerate: false,
                note: None,
            };
            if d.is_empty() {
                t.note = Some("no complete pairs".into());
                return t;
            }
            let run = |alt| wilcoxon_signed_rank(&d, alt);
            match (run(Alternative::TwoSided), run(Alternative::Greater), run(Alternative::Less)) {
                (Ok(two), Ok(gt), Ok(lt)) => {
                    t.statistic = Some(two.statistic);
                    t.p_two_sided = Some(two.p_value);
                    t.p_greater = Some(gt.p_value);
                    t.p_less = Some(lt.p_value);
                }
                (Err(Error::AllZeroDifferences), ..) => {
                    t.degenerate = true;
                    t.note = Some(Error::AllZeroDifferences.to_string());
                }
                (Err(e), ..) | (_, Err(e), _) | (.., Err(e)) => t.note = Some(e.to_string()),
            }
            t
        })
        .collect()
}

/// Memoizes anchors, which depend only on (rank cap, seed).
struct Anchors<'a, R: CellRunner> {
    runner: &'a R,
    cache: Mutex<HashMap<(usize, u64), std::result::Result<CellMetrics, String>>>,
}

impl<R: CellRunner> Anchors<'_, R> {
    fn get(&self, rank_cap: usize, seed: u64) -> std::result::Result<CellMetrics, String> {
        if let Some(v) = self.cache.lock().unwrap().get(&(rank_cap, seed)) {
            return v.clone();
        }
        let v = self.runner.anchor(rank_cap, seed).map_err(|e| e.to_string());
        self.cache.lock().unwrap().insert((rank_cap, seed), v.clone());
        v
    }
}

pub fn run_study<R: CellRunner>(runner: &R, cfg: &StudyConfig) -> Result<StudyReport> {
    if cfg.targets.is_empty() || cfg.rank_caps.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("targets, rank caps and seeds must be nonempty".into()));
    }
    if cfg.targets.iter().any(|&t| !(t > 1.0) || t.fract() != 0.0) {
        return Err(Error::InvalidArgument("targets must be integers greater than 1".into()));
    }
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &target in &cfg.targets {
        let base = target as usize;
        let mut caps: Vec<usize> = vec![base];
        for &r in &cfg.rank_caps {
            if r < base {
                skipped.push(format!("target {target} exceeds rank cap {r}"));
            } else if !caps.contains(&r) {
                caps.push(r);
            }
        }
        cells.extend(caps.into_iter().map(|r| (target, r)));
    }

    let anchors = Anchors {
        runner,
        cache: Mutex::new(HashMap::new()),
    };
    // anchors first so that every cell reads the cache
    let anchor_jobs: Vec<(usize, u64)> = cells
        .iter()
        .flat_map(|&(t, r)| cfg.seeds.iter().flat_map(move |&s| [(r, s), (t as usize, s)]))
        .collect();
    anchor_jobs.par_iter().for_each(|&(r, s)| {
        anchors.get(r, s).ok();
    });

    let jobs: Vec<(f64, usize, u64)> = cells
        .iter()
        .flat_map(|&(t, r)| cfg.seeds.iter().map(move |&s| (t, r, s)))
        .collect();
    let records: Vec<SeedRecord> = jobs
        .par_iter()
        .map(|&(target, r, seed)| {
            let mut errors = Vec::new();
            let mut keep = |v: std::result::Result<CellMetrics, String>, what: &str| match v {
                Ok(m) => Some(m),
                Err(e) => {
                    errors.push(format!("{what}: {e}"));
                    None
                }
            };
            let anchor = keep(anchors.get(r, seed), "anchor");
            let retrain = keep(runner.calibrated(target, r, seed).map_err(|e| e.to_string()), "retrain");
            let baseline = keep(anchors.get(target as usize, seed), "baseline");
            SeedRecord {
                seed,
                anchor,
                retrain,
                baseline,
                errors,
            }
        })
        .collect();

    let per_cell = cfg.seeds.len();
    let reports = cells
        .iter()
        .zip(records.chunks(per_cell))
        .map(|(&(target, rank_cap), seeds)| {
            let a: Vec<_> = seeds.iter().filter_map(|s| Some((s.retrain?, s.anchor?))).collect();
            let b: Vec<_> = seeds.iter().filter_map(|s| Some((s.retrain?, s.baseline?))).collect();
            for s in seeds.iter().filter(|s| !s.errors.is_empty()) {
                log::warn!("cell d*={target} r={rank_cap} seed {}: {}", s.seed, s.errors.join("; "));
            }
            CellReport {
                target,
                rank_cap,
                seeds: seeds.to_vec(),
                comparison_a: compare(&a),
                comparison_b: compare(&b),
            }
        })
        .collect();
    Ok(StudyReport { cells: reports, skipped })
}
