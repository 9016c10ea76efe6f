//! Root finding on `g(η) = d_spec(η) − target`: anchor at η = 0, geometric
//! bracketing in the direction given by the sign of `g(0)`, bisection, and a
//! final retrain at the selected η from a fresh initialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::trainer::{fit, FitResult, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub target_dspec: f64,
    pub rel_tol: f64,
    pub eta_init_step: f64,
    pub eta_max_abs: f64,
    pub expansion_factor: f64,
    pub max_probes: usize,
    /// A probe that moves d_spec against the expected direction by more than
    /// this relative amount triggers the two-sided search.
    pub guard_rel_tol: f64,
    /// Search both signs of η from the start.
    pub bidirectional: bool,
}

impl CalibrationConfig {
    pub fn new(target_dspec: f64) -> Self {
        CalibrationConfig {
            target_dspec,
            rel_tol: 0.02,
            eta_init_step: 0.01,
            eta_max_abs: 4.0,
            expansion_factor: 2.0,
            max_probes: 40,
            guard_rel_tol: 0.02,
            bidirectional: false,
        }
    }

    pub fn validate(&self, rank_cap: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.target_dspec > 1.0 && self.target_dspec <= rank_cap as f64) {
            return bad(format!(
                "target d_spec {} must lie in (1, {rank_cap}]",
                self.target_dspec
            ));
        }
        if !(self.rel_tol > 0.0) || !(self.eta_init_step > 0.0) || !(self.expansion_factor > 1.0) {
            return bad("rel_tol and eta_init_step must be positive and expansion_factor > 1".into());
        }
        if !(self.eta_max_abs >= self.eta_init_step) || self.max_probes == 0 || !(self.guard_rel_tol >= 0.0) {
            return bad("eta_max_abs must be >= eta_init_step, max_probes >= 1, guard_rel_tol >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub eta: f64,
    pub achieved_dspec: f64,
    pub iterations: usize,
}

/// The map `η ↦ d_spec` being calibrated.
pub trait EtaResponse: Sync {
    type Output;

    /// A cheap (possibly early-stopped) evaluation of `d_spec(η)`.
    fn probe(&self, eta: f64) -> Result<ProbeRecord>;

    /// Two probes that may run concurrently.
    fn probe_pair(&self, a: f64, b: f64) -> (Result<ProbeRecord>, Result<ProbeRecord>) {
        (self.probe(a), self.probe(b))
    }

    /// The deliverable fit at the selected η and its achieved d_spec.
    fn final_fit(&self, eta: f64) -> Result<(f64, Self::Output)>;
}

/// Trains the real model. Probes use the early-stopping probe mode (or full
/// budget when `full_probes` is set); the final fit starts from a fresh
/// initialization.
pub struct TrainedResponse<'a> {
    pub graph: &'a Graph,
    pub rank_cap: usize,
    pub train: TrainConfig,
    pub full_probes: bool,
}

impl EtaResponse for TrainedResponse<'_> {
    type Output = FitResult;

    fn probe(&self, eta: f64) -> Result<ProbeRecord> {
        let cfg = TrainConfig {
            probe_mode: !self.full_probes,
            ..self.train.clone()
        };
        let f = fit(self.graph, eta, self.rank_cap, &cfg)?;
        Ok(ProbeRecord {
            eta,
            achieved_dspec: f.final_d_spec,
            iterations: f.iterations_run,
        })
    }

    fn probe_pair(&self, a: f64, b: f64) -> (Result<ProbeRecord>, Result<ProbeRecord>) {
        rayon::join(|| self.probe(a), || self.probe(b))
    }

    fn final_fit(&self, eta: f64) -> Result<(f64, FitResult)> {
        let cfg = TrainConfig {
            probe_mode: false,
            fresh_init: true,
            ..self.train.clone()
        };
        let f = fit(self.graph, eta, self.rank_cap, &cfg)?;
        Ok((f.final_d_spec, f))
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult<T> {
    pub target_dspec: f64,
    pub eta_star: f64,
    /// d_spec of the final retrain.
    pub achieved_dspec: f64,
    /// d_spec of the probe that selected `eta_star`.
    pub probe_dspec: f64,
    pub probe_log: Vec<ProbeRecord>,
    pub final_fit: T,
    pub fallback_used: bool,
    /// Distance from `eta_star` to the ends of the last bracket (0 when the
    /// anchor or an expansion probe was accepted).
    pub final_eta_gap: f64,
    /// Number of bisection probes.
    pub bisection_probes: usize,
    /// Width of the first bracket, when bisection ran.
    pub initial_bracket: Option<(f64, f64)>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target: f64,
    pub eta_star: f64,
    pub achieved: f64,
    pub probe_achieved: f64,
    pub within_tolerance: bool,
    pub probes: Vec<ProbeRecord>,
    pub fallback_used: bool,
    pub final_eta_gap: f64,
}

impl<T> CalibrationResult<T> {
    pub fn report(&self) -> CalibrationReport {
        CalibrationReport {
            target: self.target_dspec,
            eta_star: self.eta_star,
            achieved: self.achieved_dspec,
            probe_achieved: self.probe_dspec,
            within_tolerance: self.within_tolerance,
            probes: self.probe_log.clone(),
            fallback_used: self.fallback_used,
            final_eta_gap: self.final_eta_gap,
        }
    }
}

/// `⌈log₂(bracket_width / eta_precision)⌉`, the number of bisection probes
/// needed to shrink a bracket to the given half-width.
pub fn probe_count_bound(bracket_width: f64, eta_precision: f64) -> usize {
    assert!(bracket_width > 0.0 && eta_precision > 0.0);
    let v = (bracket_width / eta_precision).log2() - 1e-12;
    if v <= 0.0 {
        0
    } else {
        v.ceil() as usize
    }
}

/// Calibrates η for `g` at `rank_cap` by training.
pub fn calibrate_eta(
    g: &Graph,
    rank_cap: usize,
    ccfg: &CalibrationConfig,
    tcfg: &TrainConfig,
) -> Result<CalibrationResult<FitResult>> {
    ccfg.validate(rank_cap)?;
    if rank_cap > g.n_nodes() {
        return Err(Error::InvalidArgument(format!(
            "rank cap {rank_cap} exceeds node count {}",
            g.n_nodes()
        )));
    }
    let response = TrainedResponse {
        graph: g,
        rank_cap,
        train: tcfg.clone(),
        full_probes: false,
    };
    calibrate_with(&response, ccfg)
}

struct Search<'a, R: EtaResponse> {
    response: &'a R,
    cfg: &'a CalibrationConfig,
    log: Vec<ProbeRecord>,
}

impl<R: EtaResponse> Search<'_, R> {
    fn g(&self, d: f64) -> f64 {
        d - self.cfg.target_dspec
    }

    fn accepts(&self, d: f64) -> bool {
        self.g(d).abs() / self.cfg.target_dspec <= self.cfg.rel_tol
    }

    fn budget_left(&self) -> bool {
        self.log.len() < self.cfg.max_probes
    }

    fn record(&mut self, p: ProbeRecord) -> ProbeRecord {
        log::info!("probe eta = {:+.5}: d_spec = {:.4}", p.eta, p.achieved_dspec);
        self.log.push(p);
        p
    }

    fn probe(&mut self, eta: f64) -> Result<ProbeRecord> {
        if !self.budget_left() {
            return Err(self.exhausted(eta, eta));
        }
        let p = self.response.probe(eta)?;
        Ok(self.record(p))
    }

    fn nearest(&self) -> (f64, f64) {
        self.log
            .iter()
            .min_by(|a, b| self.g(a.achieved_dspec).abs().total_cmp(&self.g(b.achieved_dspec).abs()))
            .map(|p| (p.eta, p.achieved_dspec))
            .unwrap_or((0.0, f64::NAN))
    }

    fn exhausted(&self, lo: f64, hi: f64) -> Error {
        let (nearest_eta, nearest_dspec) = self.nearest();
        Error::ProbeBudgetExhausted {
            max_probes: self.cfg.max_probes,
            lo,
            hi,
            nearest_eta,
            nearest_dspec,
        }
    }

    fn unreachable(&self) -> Error {
        let (nearest_eta, nearest_dspec) = self.nearest();
        Error::TargetUnreachable {
            target: self.cfg.target_dspec,
            eta_max_abs: self.cfg.eta_max_abs,
            nearest_eta,
            nearest_dspec,
        }
    }

    /// Steps of the geometric expansion: init, init·f, init·f², … clipped
    /// to the cap, ending with the cap itself.
    fn steps(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut s = self.cfg.eta_init_step;
        while s < self.cfg.eta_max_abs {
            out.push(s);
            s *= self.cfg.expansion_factor;
        }
        out.push(self.cfg.eta_max_abs);
        out
    }
}

enum Located {
    Accepted(ProbeRecord),
    Bracket(ProbeRecord, ProbeRecord),
}

/// Calibrates against any response; the real-model entry point is
/// [`calibrate_eta`].
pub fn calibrate_with<R: EtaResponse>(response: &R, cfg: &CalibrationConfig) -> Result<CalibrationResult<R::Output>> {
    if !(cfg.target_dspec > 1.0) || !(cfg.rel_tol > 0.0) || !(cfg.expansion_factor > 1.0) {
        return Err(Error::InvalidArgument("invalid calibration config".into()));
    }
    let mut s = Search {
        response,
        cfg,
        log: Vec::new(),
    };
    let anchor = s.probe(0.0)?;
    let mut fallback_used = false;
    let located = if s.accepts(anchor.achieved_dspec) {
        Located::Accepted(anchor)
    } else if cfg.bidirectional {
        fallback_used = true;
        expand_both(&mut s, anchor)?
    } else {
        match expand_one(&mut s, anchor)? {
            Some(l) => l,
            None => {
                log::warn!("monotone guard tripped during expansion; searching both directions");
                fallback_used = true;
                expand_both(&mut s, anchor)?
            }
        }
    };

    let (chosen, final_eta_gap, bisection_probes, initial_bracket) = match located {
        Located::Accepted(p) => (p, 0.0, 0, None),
        Located::Bracket(a, b) => {
            let (p, gap, k) = bisect(&mut s, a, b)?;
            (p, gap, k, Some((a.eta.min(b.eta), a.eta.max(b.eta))))
        }
    };

    let (achieved, output) = response.final_fit(chosen.eta)?;
    let target = cfg.target_dspec;
    let within_tolerance = (achieved - target).abs() / target <= cfg.rel_tol;
    if !within_tolerance {
        log::warn!(
            "retrain at eta = {} reached d_spec {achieved:.4}, outside {:.1}% of target {target}",
            chosen.eta,
            100.0 * cfg.rel_tol
        );
    }
    if (achieved - chosen.achieved_dspec).abs() / target > 2.0 * cfg.rel_tol {
        log::warn!(
            "probe and retrain disagree at eta = {}: {:.4} vs {achieved:.4}",
            chosen.eta,
            chosen.achieved_dspec
        );
    }
    Ok(CalibrationResult {
        target_dspec: target,
        eta_star: chosen.eta,
        achieved_dspec: achieved,
        probe_dspec: chosen.achieved_dspec,
        probe_log: s.log,
        final_fit: output,
        fallback_used,
        final_eta_gap,
        bisection_probes,
        initial_bracket,
        within_tolerance,
    })
}

/// One-sided expansion; `None` when the monotone guard trips.
fn expand_one<R: EtaResponse>(s: &mut Search<'_, R>, anchor: ProbeRecord) -> Result<Option<Located>> {
    let dir = if s.g(anchor.achieved_dspec) < 0.0 { 1.0 } else { -1.0 };
    let mut prev = anchor;
    for step in s.steps() {
        let p = s.probe(dir * step)?;
        if s.accepts(p.achieved_dspec) {
            return Ok(Some(Located::Accepted(p)));
        }
        if dir * (p.achieved_dspec - prev.achieved_dspec) < -s.cfg.guard_rel_tol * prev.achieved_dspec {
            return Ok(None);
        }
        if s.g(p.achieved_dspec).signum() != s.g(anchor.achieved_dspec).signum() {
            return Ok(Some(Located::Bracket(prev, p)));
        }
        prev = p;
    }
    Err(s.unreachable())
}

/// Expands to both sides of the anchor at once until either side brackets
/// the target.
fn expand_both<R: EtaResponse>(s: &mut Search<'_, R>, anchor: ProbeRecord) -> Result<Located> {
    let sign0 = s.g(anchor.achieved_dspec).signum();
    let (mut last_neg, mut last_pos) = (anchor, anchor);
    for step in s.steps() {
        if s.log.len() + 2 > s.cfg.max_probes {
            return Err(s.exhausted(-step, step));
        }
        let (a, b) = s.response.probe_pair(-step, step);
        let (a, b) = (s.record(a?), s.record(b?));
        // prefer the side closer to the target when both qualify
        let mut hits: Vec<(ProbeRecord, ProbeRecord)> = Vec::new();
        for (p, last) in [(a, last_neg), (b, last_pos)] {
            if s.accepts(p.achieved_dspec) {
                return Ok(Located::Accepted(p));
            }
            if s.g(p.achieved_dspec).signum() != sign0 {
                hits.push((last, p));
            }
        }
        if let Some(&(lo, hi)) = hits
            .iter()
            .min_by(|x, y| s.g(x.1.achieved_dspec).abs().total_cmp(&s.g(y.1.achieved_dspec).abs()))
        {
            return Ok(Located::Bracket(lo, hi));
        }
        last_neg = a;
        last_pos = b;
    }
    Err(s.unreachable())
}

/// Bisects a sign-changing bracket; returns the accepted probe, its distance
/// to the bracket ends, and the number of bisection probes.
fn bisect<R: EtaResponse>(s: &mut Search<'_, R>, a: ProbeRecord, b: ProbeRecord) -> Result<(ProbeRecord, f64, usize)> {
    let (mut lo, mut hi) = if a.eta < b.eta { (a, b) } else { (b, a) };
    let mut k = 0;
    loop {
        if !s.budget_left() {
            return Err(s.exhausted(lo.eta, hi.eta));
        }
        let mid = 0.5 * (lo.eta + hi.eta);
        let p = s.probe(mid)?;
        k += 1;
        if s.accepts(p.achieved_dspec) {
            return Ok((p, 0.5 * (hi.eta - lo.eta), k));
        }
        if s.g(p.achieved_dspec).signum() == s.g(lo.achieved_dspec).signum() {
            lo = p;
        } else {
            hi = p;
        }
    }
}
