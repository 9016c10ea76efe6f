//! SVD-form latent parameterization `L = Q diag(σ)` of the trace-normalized
//! kernel `K = N·Q diag(σ²) Qᵀ / Σσ²`, and the logistic edge model
//! `P(Y_ij = 1) = φ(a_i + a_j + β K_ij)`.
//!
//! Because `Q` has orthonormal columns, the eigenpairs of `K` are read off
//! the parameters: `λⱼ = N σⱼ² / Σσ²` with eigenvector `Q[:, j]`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Pair;
use crate::rng::rng_for;
use crate::spectral::{self, orthonormality_defect, Spectrum};

/// Max-entry tolerance on `QᵀQ = I` before any spectrum read.
pub const Q_ORTHO_TOL: f64 = 1e-6;

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln φ(z)` without overflow.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

/// Model parameters. `q_basis` is stored row-major (`n_nodes × rank_cap`)
/// so that a node's loadings are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    n_nodes: usize,
    rank_cap: usize,
    q_basis: Vec<f64>,
    sigma_raw: Vec<f64>,
    offsets: Vec<f64>,
    beta_raw: f64,
}

impl ModelParams {
    /// Assembles parameters, checking shapes and finiteness only (the
    /// orthonormality of `q_basis` is checked at spectrum reads).
    pub fn from_parts(
        n_nodes: usize,
        rank_cap: usize,
        q_basis: Vec<f64>,
        sigma_raw: Vec<f64>,
        offsets: Vec<f64>,
        beta_raw: f64,
    ) -> Result<Self> {
        if rank_cap == 0 || rank_cap > n_nodes {
            return Err(Error::InvalidArgument(format!(
                "rank cap {rank_cap} must lie in 1..={n_nodes}"
            )));
        }
        if q_basis.len() != n_nodes * rank_cap
            || sigma_raw.len() != rank_cap
            || offsets.len() != n_nodes
        {
            return Err(Error::InvalidArgument("parameter shapes are inconsistent".into()));
        }
        let all = q_basis.iter().chain(&sigma_raw).chain(&offsets).chain(std::iter::once(&beta_raw));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(ModelParams {
            n_nodes,
            rank_cap,
            q_basis,
            sigma_raw,
            offsets,
            beta_raw,
        })
    }

    /// Initial parameters: `Q` from the thin QR of an i.i.d. standard normal
    /// draw, all `σ = 1` (uniform spectrum), `β = 1`, and offsets at
    /// `clamp(logit(density)/2, −6, 0)` so the initial log-odds match the
    /// graph density.
    pub fn init(n_nodes: usize, rank_cap: usize, density: f64, seed: u64) -> Result<Self> {
        if rank_cap == 0 || rank_cap > n_nodes {
            return Err(Error::InvalidArgument(format!(
                "rank cap {rank_cap} must lie in 1..={n_nodes}"
            )));
        }
        let mut rng = rng_for(seed, "init");
        let draw: Vec<f64> = (0..n_nodes * rank_cap)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let q_basis = orthonormalize_rows(n_nodes, rank_cap, &draw)?;
        let d = density.clamp(1e-12, 1.0 - 1e-12);
        let offset = (0.5 * (d / (1.0 - d)).ln()).clamp(-6.0, 0.0);
        Ok(ModelParams {
            n_nodes,
            rank_cap,
            q_basis,
            sigma_raw: vec![softplus_inv(1.0); rank_cap],
            offsets: vec![offset; n_nodes],
            beta_raw: softplus_inv(1.0),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn rank_cap(&self) -> usize {
        self.rank_cap
    }

    pub fn q_basis(&self) -> &[f64] {
        &self.q_basis
    }

    #[inline]
    pub fn q_row(&self, i: usize) -> &[f64] {
        &self.q_basis[i * self.rank_cap..(i + 1) * self.rank_cap]
    }

    pub fn sigma_raw(&self) -> &[f64] {
        &self.sigma_raw
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn beta_raw(&self) -> f64 {
        self.beta_raw
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.sigma_raw.iter().map(|&s| softplus(s)).collect()
    }

    pub fn beta(&self) -> f64 {
        softplus(self.beta_raw)
    }

    pub(crate) fn blocks_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut f64) {
        (
            &mut self.q_basis,
            &mut self.sigma_raw,
            &mut self.offsets,
            &mut self.beta_raw,
        )
    }

    pub(crate) fn set_q_basis(&mut self, q: Vec<f64>) {
        debug_assert_eq!(q.len(), self.q_basis.len());
        self.q_basis = q;
    }

    /// Precomputed per-mode kernel weights; cost `O(r)`.
    pub fn view(&self) -> Result<KernelView<'_>> {
        let sigma = self.sigma();
        let sq: Vec<f64> = sigma.iter().map(|s| s * s).collect();
        let total: f64 = sq.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!(
                "Σσ² = {total}; kernel normalization undefined"
            )));
        }
        let n = self.n_nodes as f64;
        Ok(KernelView {
            params: self,
            mode_weights: sq.iter().map(|w| n * w / total).collect(),
            occupancy: sq.iter().map(|w| w / total).collect(),
            sigma,
            sigma_sq_sum: total,
            beta: self.beta(),
        })
    }

    pub fn kernel_entry(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.view()?.entry(i, j))
    }

    pub fn edge_log_odds(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Err(Error::InvalidArgument(format!("self pair ({i}, {i}) has no log-odds")));
        }
        Ok(self.view()?.log_odds(i, j))
    }

    /// Equal-weight mean log-likelihood, see [`KernelView::log_likelihood`].
    pub fn log_likelihood(&self, positives: &[Pair], negatives: &[Pair]) -> Result<f64> {
        self.view()?.log_likelihood(positives, negatives)
    }

    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.q_matrix())
    }

    /// `Q` as a column-major matrix.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_nodes, self.rank_cap, &self.q_basis)
    }

    fn check_orthonormal(&self) -> Result<()> {
        let deviation = self.orthonormality_defect();
        if deviation > Q_ORTHO_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(())
    }

    /// Spectrum of `K`, read off the parameters.
    pub fn spectrum(&self) -> Result<Spectrum> {
        self.check_orthonormal()?;
        self.view()?.spectrum()
    }

    /// Eigenbasis with columns sorted by descending eigenvalue, the matching
    /// spectrum, and the permutation (`sorted[c] = original column`).
    pub fn eigen(&self) -> Result<(DMatrix<f64>, Spectrum, Vec<usize>)> {
        let spectrum = self.spectrum()?;
        let sigma = self.sigma();
        let mut order: Vec<usize> = (0..self.rank_cap).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        let basis = DMatrix::from_fn(self.n_nodes, self.rank_cap, |i, c| {
            self.q_basis[i * self.rank_cap + order[c]]
        });
        Ok((basis, spectrum, order))
    }

    pub fn d_spec(&self) -> Result<f64> {
        Ok(spectral::d_spec(&self.spectrum()?))
    }

    /// Dense `N × N` kernel; for small graphs and oracle checks only.
    pub fn dense_kernel(&self) -> Result<DMatrix<f64>> {
        let v = self.view()?;
        Ok(DMatrix::from_fn(self.n_nodes, self.n_nodes, |i, j| v.entry(i, j)))
    }

    pub fn to_checkpoint(&self, seed: u64, iteration: usize) -> Checkpoint {
        Checkpoint {
            n_nodes: self.n_nodes,
            rank_cap: self.rank_cap,
            q_basis: self.q_basis.clone(),
            sigma_raw: self.sigma_raw.clone(),
            offsets: self.offsets.clone(),
            beta_raw: self.beta_raw,
            seed,
            iteration,
            node_labels: None,
        }
    }
}

/// Derived read-only quantities of a parameter snapshot.
#[derive(Debug, Clone)]
pub struct KernelView<'a> {
    params: &'a ModelParams,
    /// `N σⱼ² / Σσ²`, i.e. the eigenvalue attached to column `j` of `Q`.
    mode_weights: Vec<f64>,
    occupancy: Vec<f64>,
    sigma: Vec<f64>,
    sigma_sq_sum: f64,
    beta: f64,
}

impl KernelView<'_> {
    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn sigma_sq_sum(&self) -> f64 {
        self.sigma_sq_sum
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Unsorted eigenvalues, aligned with the columns of `Q`.
    pub fn mode_weights(&self) -> &[f64] {
        &self.mode_weights
    }

    /// `pⱼ = σⱼ²/Σσ²`, aligned with the columns of `Q`.
    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    /// Entropy of the occupancy, `log d_spec`.
    pub fn entropy(&self) -> f64 {
        spectral::entropy_of(&self.occupancy)
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (qi, qj) = (self.params.q_row(i), self.params.q_row(j));
        let mut acc = 0.0;
        for l in 0..qi.len() {
            acc += self.mode_weights[l] * qi[l] * qj[l];
        }
        acc
    }

    #[inline]
    pub fn log_odds(&self, i: usize, j: usize) -> f64 {
        self.params.offsets[i] + self.params.offsets[j] + self.beta * self.entry(i, j)
    }

    /// Mean of `ln φ(z)` over positives plus mean of `ln(1 − φ(z))` over
    /// negatives. A side that is empty contributes nothing.
    pub fn log_likelihood(&self, positives: &[Pair], negatives: &[Pair]) -> Result<f64> {
        if positives.is_empty() && negatives.is_empty() {
            return Err(Error::InvalidArgument("likelihood of an empty batch".into()));
        }
        let mean = |pairs: &[Pair], f: &dyn Fn(f64) -> f64| -> f64 {
            if pairs.is_empty() {
                0.0
            } else {
                pairs.iter().map(|&(i, j)| f(self.log_odds(i, j))).sum::<f64>() / pairs.len() as f64
            }
        };
        Ok(mean(positives, &log_sigmoid) + mean(negatives, &|z| log_sigmoid(-z)))
    }

    fn spectrum(&self) -> Result<Spectrum> {
        Spectrum::new(self.mode_weights.clone(), self.params.n_nodes as f64).or_else(|_| {
            // round-off in Σ mode_weights; renormalize
            Spectrum::normalized(self.mode_weights.clone(), self.params.n_nodes as f64)
        })
    }
}

/// Thin QR of a row-major `n × r` matrix with the triangular factor's diagonal
/// made positive; returns the orthonormal factor, row-major.
pub fn orthonormalize_rows(n: usize, r: usize, data: &[f64]) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, r, data);
    let qr = m.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    let scale = rdiag.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    for c in 0..r {
        let d = rdiag[c];
        if !d.is_finite() || d.abs() <= 1e-12 * scale {
            return Err(Error::Numerical(format!(
                "rank-deficient factor in QR retraction (column {c}, R_cc = {d})"
            )));
        }
        if d < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let mut out = Vec::with_capacity(n * r);
    for i in 0..n {
        out.extend(q.row(i).iter());
    }
    Ok(out)
}

/// On-disk model format (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n_nodes: usize,
    pub rank_cap: usize,
    /// Row-major `n_nodes × rank_cap`.
    pub q_basis: Vec<f64>,
    pub sigma_raw: Vec<f64>,
    pub offsets: Vec<f64>,
    pub beta_raw: f64,
    pub seed: u64,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        let m = ModelParams::from_parts(
            self.n_nodes,
            self.rank_cap,
            self.q_basis.clone(),
            self.sigma_raw.clone(),
            self.offsets.clone(),
            self.beta_raw,
        )?;
        m.check_orthonormal()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}
