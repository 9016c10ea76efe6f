//! Link-prediction metrics and the paired Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::graph::Pair;
use crate::model::ModelParams;

/// Largest sample size for which Wilcoxon p-values are computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs {
    pub positive_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
}

impl ScoredPairs {
    pub fn new(positive_scores: Vec<f64>, negative_scores: Vec<f64>) -> Result<Self> {
        if positive_scores.is_empty() || negative_scores.is_empty() {
            return Err(Error::InvalidArgument("both score sets must be nonempty".into()));
        }
        if positive_scores.iter().chain(&negative_scores).any(|s| !s.is_finite()) {
            return Err(Error::Numerical("non-finite score".into()));
        }
        Ok(ScoredPairs {
            positive_scores,
            negative_scores,
        })
    }

    /// Log-odds of the model on test edges and test non-edges.
    pub fn from_model(m: &ModelParams, test_edges: &[Pair], test_non_edges: &[Pair]) -> Result<Self> {
        let view = m.view()?;
        let score = |pairs: &[Pair]| pairs.iter().map(|&(i, j)| view.log_odds(i, j)).collect();
        ScoredPairs::new(score(test_edges), score(test_non_edges))
    }

    /// All scores tagged with their class, sorted ascending by score.
    fn merged(&self) -> Vec<(f64, bool)> {
        let mut all: Vec<(f64, bool)> = self
            .positive_scores
            .iter()
            .map(|&s| (s, true))
            .chain(self.negative_scores.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all
    }
}

/// Runs of equal values in a sorted slice, as half-open index ranges.
fn tie_groups<T>(sorted: &[T], key: impl Fn(&T) -> f64) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        if k == sorted.len() || key(&sorted[k]) != key(&sorted[start]) {
            groups.push((start, k));
            start = k;
        }
    }
    groups
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn auc_roc(s: &ScoredPairs) -> Result<f64> {
    let s = ScoredPairs::new(s.positive_scores.clone(), s.negative_scores.clone())?;
    let all = s.merged();
    let mut rank_sum = 0.0;
    for (lo, hi) in tie_groups(&all, |e| e.0) {
        let midrank = (lo + hi + 1) as f64 / 2.0;
        rank_sum += midrank * all[lo..hi].iter().filter(|e| e.1).count() as f64;
    }
    let (p, n) = (s.positive_scores.len() as f64, s.negative_scores.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: descending-score step integration of the
/// precision–recall curve, with equal scores entering as one step.
pub fn auc_pr(s: &ScoredPairs) -> Result<f64> {
    let s = ScoredPairs::new(s.positive_scores.clone(), s.negative_scores.clone())?;
    let mut all = s.merged();
    all.reverse();
    let total_pos = s.positive_scores.len() as f64;
    let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
    for (lo, hi) in tie_groups(&all, |e| e.0) {
        let gp = all[lo..hi].iter().filter(|e| e.1).count() as f64;
        tp += gp;
        fp += (hi - lo) as f64 - gp;
        if gp > 0.0 {
            ap += gp / total_pos * tp / (tp + fp);
        }
    }
    Ok(ap)
}

/// Mean log-likelihood of the test edges plus that of the test non-edges.
pub fn test_ll(m: &ModelParams, test_edges: &[Pair], test_non_edges: &[Pair]) -> Result<f64> {
    if test_edges.is_empty() || test_non_edges.is_empty() {
        return Err(Error::InvalidArgument("test sets must be nonempty".into()));
    }
    m.log_likelihood(test_edges, test_non_edges)
}

/// `trNLL + TLL`; lower is better.
pub fn gen_gap(train_nll: f64, tll: f64) -> f64 {
    train_nll + tll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub tll: f64,
    pub train_nll: f64,
    pub gen_gap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn eval_report(m: &ModelParams, test_edges: &[Pair], test_non_edges: &[Pair], train_nll: f64) -> Result<EvalReport> {
    let scores = ScoredPairs::from_model(m, test_edges, test_non_edges)?;
    let tll = test_ll(m, test_edges, test_non_edges)?;
    Ok(EvalReport {
        auc_roc: auc_roc(&scores)?,
        auc_pr: auc_pr(&scores)?,
        tll,
        train_nll,
        gen_gap: gen_gap(train_nll, tll),
        n_pos: test_edges.len(),
        n_neg: test_non_edges.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W⁺, W⁻)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Signed ranks of the nonzero differences: midranks of `|d|` with the sign
/// of `d`, exact zeros dropped.
fn signed_ranks(differences: &[f64]) -> Result<Vec<(f64, bool)>> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite paired difference".into()));
    }
    let mut nz: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    nz.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out = Vec::with_capacity(nz.len());
    for (lo, hi) in tie_groups(&nz, |d| d.abs()) {
        let midrank = (lo + hi + 1) as f64 / 2.0;
        out.extend(nz[lo..hi].iter().map(|&d| (midrank, d > 0.0)));
    }
    Ok(out)
}

/// Paired Wilcoxon signed-rank test; exact below
/// [`WILCOXON_EXACT_MAX_N`] nonzero differences, normal approximation with
/// tie correction and continuity correction above.
pub fn wilcoxon_signed_rank(differences: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    let ranks = signed_ranks(differences)?;
    wilcoxon_from_ranks(&ranks, alternative, ranks.len() <= WILCOXON_EXACT_MAX_N)
}

/// Exact p-value regardless of sample size (cost grows as `n³`).
pub fn wilcoxon_exact(differences: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    wilcoxon_from_ranks(&signed_ranks(differences)?, alternative, true)
}

/// Normal-approximation p-value regardless of sample size.
pub fn wilcoxon_normal_approx(differences: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    wilcoxon_from_ranks(&signed_ranks(differences)?, alternative, false)
}

fn wilcoxon_from_ranks(ranks: &[(f64, bool)], alternative: Alternative, exact: bool) -> Result<WilcoxonResult> {
    let n = ranks.len();
    let w_plus: f64 = ranks.iter().filter(|r| r.1).map(|r| r.0).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let (p_ge, p_le) = if exact {
        exact_tails(ranks, w_plus)
    } else {
        normal_tails(ranks, w_plus)?
    };
    let p_value = match alternative {
        Alternative::Greater => p_ge,
        Alternative::Less => p_le,
        Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        n,
        p_value,
        exact,
    })
}

/// `(P(W⁺ ≥ obs), P(W⁺ ≤ obs))` under the sign-flip null, by a subset-sum
/// count over doubled (integer) midranks.
fn exact_tails(ranks: &[(f64, bool)], w_plus: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + d] += counts[s];
            }
        }
        reach += d;
    }
    let obs = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let ge: f64 = counts[obs..].iter().sum();
    let le: f64 = counts[..=obs].iter().sum();
    (ge / all, le / all)
}

fn normal_tails(ranks: &[(f64, bool)], w_plus: f64) -> Result<(f64, f64)> {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted: Vec<f64> = ranks.iter().map(|r| r.0).collect();
    sorted.sort_by(f64::total_cmp);
    for (lo, hi) in tie_groups(&sorted, |r| *r) {
        let t = (hi - lo) as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if !(var > 0.0) {
        return Ok((1.0, 1.0));
    }
    let sd = var.sqrt();
    let std = Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let ge = std.sf((w_plus - mean - 0.5) / sd);
    let le = std.cdf((w_plus - mean + 0.5) / sd);
    Ok((ge.min(1.0), le.min(1.0)))
}
