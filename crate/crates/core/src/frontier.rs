//! Adaptive η sweeps, structural-event flags and frontier aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::eval_report;
use crate::graph::EdgeSplit;
use crate::spectral::{d_spec, min_adjacent_gap_rel, thresholded_rank, Spectrum};
use crate::trainer::{fit, TrainConfig};

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eta_min: f64,
    pub eta_max: f64,
    pub rank_caps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub upper_move_threshold: f64,
    pub lower_move_threshold: f64,
    pub event_tau: f64,
    pub event_gap_rel: f64,
    /// Width of the η bins used by [`aggregate_frontier`].
    pub eta_bin_width: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            eta_min: -0.25,
            eta_max: 0.25,
            rank_caps: vec![64, 128, 256],
            seeds: vec![0, 1, 2],
            step_init: 0.02,
            step_min: 1e-3,
            step_max: 0.05,
            upper_move_threshold: 0.15,
            lower_move_threshold: 0.03,
            event_tau: 0.01,
            event_gap_rel: 1e-3,
            eta_bin_width: 0.01,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.eta_min < self.eta_max) || !self.eta_min.is_finite() || !self.eta_max.is_finite() {
            return bad("eta_min must be below eta_max");
        }
        if self.rank_caps.is_empty() || self.rank_caps.contains(&0) {
            return bad("rank_caps must be a nonempty list of positive integers");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if !(0.0 < self.step_min && self.step_min <= self.step_init && self.step_init <= self.step_max) {
            return bad("steps must satisfy 0 < step_min <= step_init <= step_max");
        }
        if !(0.0 <= self.lower_move_threshold && self.lower_move_threshold < self.upper_move_threshold) {
            return bad("move thresholds must satisfy 0 <= lower < upper");
        }
        if !(self.event_tau > 0.0 && self.event_tau <= 1.0) || !(self.event_gap_rel >= 0.0) {
            return bad("event_tau must lie in (0, 1] and event_gap_rel must be >= 0");
        }
        if !(self.eta_bin_width > 0.0) {
            return bad("eta_bin_width must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFlags {
    pub support_change: bool,
    pub near_degeneracy: bool,
}

/// `support_change` compares the thresholded ranks of `prev` and `curr`;
/// `near_degeneracy` looks at adjacent eigenvalue gaps of `curr` only.
pub fn detect_events(prev: Option<&Spectrum>, curr: &Spectrum, cfg: &SweepConfig) -> EventFlags {
    EventFlags {
        support_change: prev
            .is_some_and(|p| thresholded_rank(p, cfg.event_tau) != thresholded_rank(curr, cfg.event_tau)),
        near_degeneracy: min_adjacent_gap_rel(curr).is_some_and(|g| g < cfg.event_gap_rel),
    }
}

/// One probe of one trajectory. Failed fits keep their coordinates, carry
/// the error message and have NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub eta: f64,
    pub rank_cap: usize,
    pub seed: u64,
    pub achieved_dspec: f64,
    pub test_auc_roc: f64,
    pub test_auc_pr: f64,
    pub test_ll: f64,
    pub train_nll: f64,
    pub support_k_tau: Option<usize>,
    pub min_adjacent_gap_rel: Option<f64>,
    pub support_change: bool,
    pub near_degeneracy: bool,
    pub error: Option<String>,
}

impl FrontierPoint {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// What a single cold-start probe produces.
#[derive(Debug, Clone)]
pub struct ProbeFit {
    pub spectrum: Spectrum,
    pub test_auc_roc: f64,
    pub test_auc_pr: f64,
    pub test_ll: f64,
    pub train_nll: f64,
}

/// Fits at one (η, rank cap, seed).
pub trait FrontierResponse: Sync {
    fn fit_point(&self, eta: f64, rank_cap: usize, seed: u64) -> Result<ProbeFit>;
}

/// Trains on the split's training graph and evaluates on its test pairs.
pub struct TrainedFrontier<'a> {
    pub split: &'a EdgeSplit,
    pub train: TrainConfig,
}

impl FrontierResponse for TrainedFrontier<'_> {
    fn fit_point(&self, eta: f64, rank_cap: usize, seed: u64) -> Result<ProbeFit> {
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let f = fit(&self.split.train_graph, eta, rank_cap, &cfg)?;
        let rep = eval_report(&f.params, &self.split.test_edges, &self.split.test_non_edges, f.train_nll)?;
        Ok(ProbeFit {
            spectrum: f.params.spectrum()?,
            test_auc_roc: rep.auc_roc,
            test_auc_pr: rep.auc_pr,
            test_ll: rep.tll,
            train_nll: f.train_nll,
        })
    }
}

pub fn sweep(split: &EdgeSplit, cfg: &SweepConfig, tcfg: &TrainConfig) -> Result<Vec<FrontierPoint>> {
    tcfg.validate()?;
    let n = split.train_graph.n_nodes();
    if let Some(&r) = cfg.rank_caps.iter().find(|&&r| r > n) {
        return Err(Error::InvalidArgument(format!("rank cap {r} exceeds node count {n}")));
    }
    sweep_with(
        &TrainedFrontier {
            split,
            train: tcfg.clone(),
        },
        cfg,
    )
}

/// Runs every (rank cap, seed) trajectory, concurrently, and concatenates
/// them in rank-cap-major, seed-minor order.
pub fn sweep_with<R: FrontierResponse>(response: &R, cfg: &SweepConfig) -> Result<Vec<FrontierPoint>> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = cfg
        .rank_caps
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let trajectories: Vec<Vec<FrontierPoint>> = jobs
        .par_iter()
        .map(|&(r, s)| trajectory(response, cfg, r, s))
        .collect();
    Ok(trajectories.into_iter().flatten().collect())
}

/// Halves or doubles the step according to the relative d_spec move.
fn next_step(step: f64, rel_move: Option<f64>, cfg: &SweepConfig) -> f64 {
    match rel_move {
        Some(m) if m > cfg.upper_move_threshold => (step / 2.0).max(cfg.step_min),
        Some(m) if m < cfg.lower_move_threshold => (step * 2.0).min(cfg.step_max),
        _ => step,
    }
}

fn trajectory<R: FrontierResponse>(response: &R, cfg: &SweepConfig, rank_cap: usize, seed: u64) -> Vec<FrontierPoint> {
    let mut out = Vec::new();
    let mut eta = cfg.eta_min;
    let mut step = cfg.step_init;
    let mut prev: Option<(f64, Spectrum)> = None;
    loop {
        let point = match response.fit_point(eta, rank_cap, seed) {
            Ok(fitted) => {
                let d = d_spec(&fitted.spectrum);
                let flags = detect_events(prev.as_ref().map(|p| &p.1), &fitted.spectrum, cfg);
                let rel_move = prev.as_ref().map(|(dp, _)| (d - dp).abs() / dp);
                step = next_step(step, rel_move, cfg);
                let point = FrontierPoint {
                    eta,
                    rank_cap,
                    seed,
                    achieved_dspec: d,
                    test_auc_roc: fitted.test_auc_roc,
                    test_auc_pr: fitted.test_auc_pr,
                    test_ll: fitted.test_ll,
                    train_nll: fitted.train_nll,
                    support_k_tau: Some(thresholded_rank(&fitted.spectrum, cfg.event_tau)),
                    min_adjacent_gap_rel: min_adjacent_gap_rel(&fitted.spectrum),
                    support_change: flags.support_change,
                    near_degeneracy: flags.near_degeneracy,
                    error: None,
                };
                prev = Some((d, fitted.spectrum));
                point
            }
            Err(e) => {
                log::warn!("sweep probe eta = {eta}, r = {rank_cap}, seed = {seed} failed: {e}");
                FrontierPoint {
                    eta,
                    rank_cap,
                    seed,
                    achieved_dspec: f64::NAN,
                    test_auc_roc: f64::NAN,
                    test_auc_pr: f64::NAN,
                    test_ll: f64::NAN,
                    train_nll: f64::NAN,
                    support_k_tau: None,
                    min_adjacent_gap_rel: None,
                    support_change: false,
                    near_degeneracy: false,
                    error: Some(e.to_string()),
                }
            }
        };
        out.push(point);
        if eta >= cfg.eta_max - SNAP {
            break;
        }
        let mut next = eta + step;
        let crosses_zero = eta < -SNAP && next > SNAP && cfg.eta_min < 0.0 && cfg.eta_max > 0.0;
        if crosses_zero || next.abs() <= SNAP {
            next = 0.0;
        }
        if next > cfg.eta_max - SNAP {
            next = cfg.eta_max;
        }
        eta = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub rank_cap: usize,
    /// Bin center.
    pub eta: f64,
    pub n: usize,
    pub dspec_mean: f64,
    pub dspec_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub rank_cap: usize,
    pub eta: f64,
    pub dspec_mean: f64,
    pub auc_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierAggregate {
    pub rows: Vec<AggregateRow>,
    pub peaks: Vec<PeakRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of d_spec and AUC-ROC per
/// (rank cap, η bin), and the bin of highest mean AUC per rank cap. Failed
/// probes are ignored.
pub fn aggregate_frontier(points: &[FrontierPoint], eta_bin_width: f64) -> Result<FrontierAggregate> {
    if !(eta_bin_width > 0.0) {
        return Err(Error::InvalidArgument("eta_bin_width must be positive".into()));
    }
    let mut groups: BTreeMap<(usize, i64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in points.iter().filter(|p| p.is_ok()) {
        let bin = (p.eta / eta_bin_width).round() as i64;
        let g = groups.entry((p.rank_cap, bin)).or_default();
        g.0.push(p.achieved_dspec);
        g.1.push(p.test_auc_roc);
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no successful frontier points to aggregate".into()));
    }
    let rows: Vec<AggregateRow> = groups
        .into_iter()
        .map(|((rank_cap, bin), (d, auc))| {
            let (dspec_mean, dspec_std) = mean_std(&d);
            let (auc_mean, auc_std) = mean_std(&auc);
            AggregateRow {
                rank_cap,
                eta: bin as f64 * eta_bin_width,
                n: d.len(),
                dspec_mean,
                dspec_std,
                auc_mean,
                auc_std,
            }
        })
        .collect();
    let mut peaks: Vec<PeakRow> = Vec::new();
    for row in &rows {
        match peaks.last_mut() {
            Some(pk) if pk.rank_cap == row.rank_cap => {
                if row.auc_mean > pk.auc_mean {
                    *pk = PeakRow {
                        rank_cap: row.rank_cap,
                        eta: row.eta,
                        dspec_mean: row.dspec_mean,
                        auc_mean: row.auc_mean,
                    };
                }
            }
            _ => peaks.push(PeakRow {
                rank_cap: row.rank_cap,
                eta: row.eta,
                dspec_mean: row.dspec_mean,
                auc_mean: row.auc_mean,
            }),
        }
    }
    Ok(FrontierAggregate { rows, peaks })
}

pub fn write_frontier_csv<W: Write>(out: W, points: &[FrontierPoint]) -> Result<()> {
    write_rows(out, points)
}

pub fn write_aggregate_csv<W: Write>(out: W, agg: &FrontierAggregate) -> Result<()> {
    write_rows(out, &agg.rows)
}

pub fn write_peaks_csv<W: Write>(out: W, agg: &FrontierAggregate) -> Result<()> {
    write_rows(out, &agg.peaks)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}
