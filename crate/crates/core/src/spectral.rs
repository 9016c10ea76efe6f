//! Spectral summaries of trace-normalized PSD kernels: occupancy,
//! effective dimension, participation ratio, thresholded rank, optimal
//! prefixes and per-node mode assignments.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues within `-NEG_CLAMP·λ₁ ≤ λ < 0` are round-off and clamp to zero.
pub const NEG_CLAMP: f64 = 1e-9;
/// Relative tolerance on `Σλ = trace_target`.
pub const TRACE_RTOL: f64 = 1e-8;
/// Max-entry tolerance on `BᵀB = I` for prefix bases.
pub const BASIS_ORTHO_TOL: f64 = 1e-8;

/// Sorted (descending) nonnegative eigenvalues of a trace-normalized kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    trace_target: f64,
}

impl Spectrum {
    /// Validates and sorts `eigenvalues`; their sum must match `trace_target`.
    pub fn new(eigenvalues: Vec<f64>, trace_target: f64) -> Result<Self> {
        let eigenvalues = clean_eigenvalues(eigenvalues)?;
        if !(trace_target > 0.0 && trace_target.is_finite()) {
            return Err(Error::InvalidSpectrum(format!(
                "trace target must be positive, got {trace_target}"
            )));
        }
        let sum: f64 = eigenvalues.iter().sum();
        if (sum - trace_target).abs() > TRACE_RTOL * trace_target {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues sum to {sum}, expected trace {trace_target}"
            )));
        }
        Ok(Spectrum {
            eigenvalues,
            trace_target,
        })
    }

    /// Spectrum whose trace target is the eigenvalue sum itself.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>) -> Result<Self> {
        let eigenvalues = clean_eigenvalues(eigenvalues)?;
        let trace_target = eigenvalues.iter().sum();
        Ok(Spectrum {
            eigenvalues,
            trace_target,
        })
    }

    /// Rescales arbitrary nonnegative eigenvalues to sum to `trace_target`.
    pub fn normalized(eigenvalues: Vec<f64>, trace_target: f64) -> Result<Self> {
        let s = Self::from_eigenvalues(eigenvalues)?;
        let c = trace_target / s.trace_target;
        Spectrum::new(s.eigenvalues.iter().map(|l| l * c).collect(), trace_target)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace_target(&self) -> f64 {
        self.trace_target
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Number of strictly positive eigenvalues.
    pub fn support_size(&self) -> usize {
        self.eigenvalues.iter().take_while(|&&l| l > 0.0).count()
    }
}

fn clean_eigenvalues(mut eigs: Vec<f64>) -> Result<Vec<f64>> {
    if eigs.is_empty() {
        return Err(Error::InvalidSpectrum("no eigenvalues".into()));
    }
    if eigs.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidSpectrum("non-finite eigenvalue".into()));
    }
    eigs.sort_by(|a, b| b.total_cmp(a));
    let top = eigs[0];
    if top <= 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    for l in &mut eigs {
        if *l < 0.0 {
            if *l < -NEG_CLAMP * top {
                return Err(Error::InvalidSpectrum(format!(
                    "eigenvalue {l} below clamp window of λ₁ = {top}"
                )));
            }
            *l = 0.0;
        }
    }
    Ok(eigs)
}

/// `pᵢ = λᵢ / trace_target`.
pub fn occupancy(s: &Spectrum) -> Vec<f64> {
    s.eigenvalues.iter().map(|l| l / s.trace_target).collect()
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy_of(p: &[f64]) -> f64 {
    -p.iter()
        .map(|&pi| if pi > 0.0 { pi * pi.ln() } else { 0.0 })
        .sum::<f64>()
}

pub fn entropy(s: &Spectrum) -> f64 {
    entropy_of(&occupancy(s))
}

/// Effective spectral dimension `exp(H(p))`.
pub fn d_spec(s: &Spectrum) -> f64 {
    entropy(s).exp()
}

/// `1 / Σ pᵢ²`.
pub fn participation_ratio(s: &Spectrum) -> f64 {
    1.0 / occupancy(s).iter().map(|p| p * p).sum::<f64>()
}

/// `|{i : λᵢ ≥ τ λ₁}|`, compared exactly.
pub fn thresholded_rank(s: &Spectrum, tau: f64) -> usize {
    let cut = tau * s.largest();
    s.eigenvalues.iter().filter(|&&l| l >= cut).count()
}

/// Smallest gap between adjacent positive eigenvalues, relative to `λ₁`.
/// `None` when fewer than two eigenvalues are positive.
pub fn min_adjacent_gap_rel(s: &Spectrum) -> Option<f64> {
    let pos = &s.eigenvalues[..s.support_size()];
    pos.windows(2)
        .map(|w| (w[0] - w[1]) / s.largest())
        .min_by(f64::total_cmp)
}

/// Max absolute entry of `BᵀB − I`.
pub fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.transpose() * basis;
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Top-`k` eigenpair truncation `K_k = U_{1:k} Λ_{1:k} U_{1:k}ᵀ`.
#[derive(Debug, Clone)]
pub struct PrefixKernel {
    k: usize,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    trace_target: f64,
    parent_tail_sq: f64,
}

/// Prefix export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixExport {
    pub k: usize,
    pub eigenvalues: Vec<f64>,
    /// `d_spec` after rescaling the retained eigenvalues to the parent trace.
    pub d_spec_of_prefix: f64,
    /// `exp(−Σ_{i≤k} pᵢ ln pᵢ)` with the parent's `pᵢ = λᵢ/N`, not renormalized.
    pub d_spec_unnormalized: f64,
    /// Fraction of the parent trace retained.
    pub retained_mass: f64,
}

/// Extracts the rank-`k` prefix of a kernel given its orthonormal eigenbasis
/// (columns ordered like `s`) and spectrum.
pub fn extract_prefix(basis: &DMatrix<f64>, s: &Spectrum, k: usize) -> Result<PrefixKernel> {
    let m = s.len();
    if basis.ncols() != m {
        return Err(Error::InvalidArgument(format!(
            "basis has {} columns but spectrum has {m} eigenvalues",
            basis.ncols()
        )));
    }
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("prefix size {k} outside 1..={m}")));
    }
    let deviation = orthonormality_defect(basis);
    if deviation > BASIS_ORTHO_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    Ok(PrefixKernel {
        k,
        basis: basis.columns(0, k).into_owned(),
        eigenvalues: s.eigenvalues[..k].to_vec(),
        trace_target: s.trace_target,
        parent_tail_sq: s.eigenvalues[k..].iter().map(|l| l * l).sum(),
    })
}

impl PrefixKernel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Dense `K_k`; only sensible for small graphs.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.basis.nrows(), self.k, |i, j| {
            self.basis[(i, j)] * self.eigenvalues[j]
        });
        scaled * self.basis.transpose()
    }

    /// `‖K − K_k‖²_F = Σ_{j>k} λⱼ²`.
    pub fn residual_frobenius_sq(&self) -> f64 {
        self.parent_tail_sq
    }

    pub fn retained_mass(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.trace_target
    }

    pub fn d_spec_renormalized(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        let p: Vec<f64> = self.eigenvalues.iter().map(|l| l / total).collect();
        entropy_of(&p).exp()
    }

    pub fn d_spec_unnormalized(&self) -> f64 {
        let p: Vec<f64> = self.eigenvalues.iter().map(|l| l / self.trace_target).collect();
        entropy_of(&p).exp()
    }

    pub fn export(&self) -> PrefixExport {
        PrefixExport {
            k: self.k,
            eigenvalues: self.eigenvalues.clone(),
            d_spec_of_prefix: self.d_spec_renormalized(),
            d_spec_unnormalized: self.d_spec_unnormalized(),
            retained_mass: self.retained_mass(),
        }
    }
}

/// Dominant retained mode per node, `argmax_j U_ij²`, 1-based; ties go to
/// the smallest mode.
pub fn mode_assignment(p: &PrefixKernel) -> Vec<usize> {
    (0..p.basis.nrows())
        .map(|i| {
            let mut best = 0;
            let mut best_val = p.basis[(i, 0)].powi(2);
            for j in 1..p.k {
                let v = p.basis[(i, j)].powi(2);
                if v > best_val {
                    best = j;
                    best_val = v;
                }
            }
            best + 1
        })
        .collect()
}

/// Row-stochastic soft membership `π_ij ∝ U_ij²`.
#[derive(Debug, Clone)]
pub struct SoftMembership {
    pub weights: DMatrix<f64>,
    /// Rows with zero loading on every retained mode (filled uniformly).
    pub degenerate_rows: Vec<usize>,
}

pub fn soft_membership(p: &PrefixKernel) -> SoftMembership {
    let (n, k) = (p.basis.nrows(), p.k);
    let mut weights = DMatrix::zeros(n, k);
    let mut degenerate_rows = Vec::new();
    for i in 0..n {
        let total: f64 = (0..k).map(|j| p.basis[(i, j)].powi(2)).sum();
        if total > 0.0 {
            for j in 0..k {
                weights[(i, j)] = p.basis[(i, j)].powi(2) / total;
            }
        } else {
            degenerate_rows.push(i);
            for j in 0..k {
                weights[(i, j)] = 1.0 / k as f64;
            }
        }
    }
    SoftMembership {
        weights,
        degenerate_rows,
    }
}

/// Writes `node_label,mode` rows.
pub fn write_mode_csv<W: Write>(out: W, labels: &[String], modes: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_label", "mode"])?;
    for (label, mode) in labels.iter().zip(modes) {
        w.write_record([label.as_str(), &mode.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Signed permutation matching the columns of `other` to those of `reference`.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// `perm[i]` is the column of `other` matched to reference column `i`.
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    /// Max absolute entry of `reference − other·Π·S`.
    pub max_entry_error: f64,
}

/// Greedy sign-permutation alignment by largest absolute inner product.
/// Exact for bases that differ by a signed permutation.
pub fn align_sign_permutation(reference: &DMatrix<f64>, other: &DMatrix<f64>) -> Result<Alignment> {
    if reference.shape() != other.shape() {
        return Err(Error::InvalidArgument(format!(
            "cannot align {:?} with {:?}",
            reference.shape(),
            other.shape()
        )));
    }
    let cross = reference.transpose() * other;
    let k = reference.ncols();
    let mut used = vec![false; k];
    let mut perm = Vec::with_capacity(k);
    let mut signs = Vec::with_capacity(k);
    for i in 0..k {
        let j = (0..k)
            .filter(|&j| !used[j])
            .max_by(|&a, &b| cross[(i, a)].abs().total_cmp(&cross[(i, b)].abs()))
            .expect("unused column exists");
        used[j] = true;
        perm.push(j);
        signs.push(if cross[(i, j)] < 0.0 { -1.0 } else { 1.0 });
    }
    let mut max_entry_error = 0.0f64;
    for (i, (&j, &s)) in perm.iter().zip(&signs).enumerate() {
        for r in 0..reference.nrows() {
            max_entry_error = max_entry_error.max((reference[(r, i)] - s * other[(r, j)]).abs());
        }
    }
    Ok(Alignment {
        perm,
        signs,
        max_entry_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(eigs: &[f64], n: f64) -> Spectrum {
        Spectrum::new(eigs.to_vec(), n).unwrap()
    }

    #[test]
    fn occupancy_examples() {
        assert_eq!(occupancy(&spec(&[3.0, 0.0, 0.0], 3.0)), vec![1.0, 0.0, 0.0]);
        assert_eq!(occupancy(&spec(&[1.5, 1.5, 0.0], 3.0)), vec![0.5, 0.5, 0.0]);
        // binary fractions are exact in floating point
        assert_eq!(
            occupancy(&spec(&[2.0, 1.0, 0.5, 0.5], 4.0)),
            vec![0.5, 0.25, 0.125, 0.125]
        );
    }

    #[test]
    fn spectrum_validation() {
        assert!(matches!(Spectrum::new(vec![0.0, 0.0], 1.0), Err(Error::ZeroSpectrum)));
        assert!(matches!(
            Spectrum::new(vec![2.0, 1.0], 4.0),
            Err(Error::InvalidSpectrum(_))
        ));
        // tiny negative is clamped
        let s = Spectrum::new(vec![2.0, -1e-12, 1.0], 3.0).unwrap();
        assert_eq!(s.eigenvalues(), &[2.0, 1.0, 0.0]);
        assert!(Spectrum::new(vec![2.0, -1e-6, 1.0 + 1e-6], 3.0).is_err());
        // unsorted input is sorted
        assert_eq!(spec(&[1.0, 3.0], 4.0).eigenvalues(), &[3.0, 1.0]);
    }

    #[test]
    fn d_spec_examples() {
        assert_eq!(d_spec(&spec(&[3.0, 0.0, 0.0], 3.0)), 1.0);
        assert_relative_eq!(d_spec(&spec(&[1.0; 4], 4.0)), 4.0, max_relative = 1e-12);
        // H = 1.75 ln 2, so d_spec = 2^1.75
        let s = spec(&[2.0, 1.0, 0.5, 0.5], 4.0);
        assert_relative_eq!(entropy(&s), 1.75 * 2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(d_spec(&s), 2f64.powf(1.75), max_relative = 1e-14);
        assert_relative_eq!(d_spec(&s), 3.363_585_661_014_858, max_relative = 1e-12);
    }

    #[test]
    fn participation_ratio_examples() {
        assert_relative_eq!(participation_ratio(&spec(&[1.0; 5], 5.0)), 5.0, max_relative = 1e-14);
        assert_eq!(participation_ratio(&spec(&[0.5, 0.5], 1.0)), 2.0);
        assert_eq!(
            participation_ratio(&spec(&[2.0, 1.0, 0.5, 0.5], 4.0)),
            1.0 / 0.34375
        );
    }

    #[test]
    fn thresholded_rank_examples() {
        assert_eq!(thresholded_rank(&Spectrum::from_eigenvalues(vec![10.0, 5.0, 0.05]).unwrap(), 0.1), 2);
        assert_eq!(thresholded_rank(&spec(&[1.0, 1.0, 1.0], 3.0), 1.0), 3);
        assert_eq!(thresholded_rank(&Spectrum::from_eigenvalues(vec![4.0, 2.0, 1.0, 0.5]).unwrap(), 0.3), 2);
    }

    #[test]
    fn adjacent_gap() {
        let s = Spectrum::from_eigenvalues(vec![5.0, 5.0 - 1e-5, 1.0, 0.0]).unwrap();
        assert_relative_eq!(min_adjacent_gap_rel(&s).unwrap(), 2e-6, max_relative = 1e-6);
        assert!(min_adjacent_gap_rel(&Spectrum::from_eigenvalues(vec![1.0, 0.0]).unwrap()).is_none());
    }

    #[test]
    fn prefix_of_diagonal() {
        let basis = DMatrix::<f64>::identity(3, 3);
        let s = spec(&[3.0, 2.0, 1.0], 6.0);
        let p1 = extract_prefix(&basis, &s, 1).unwrap();
        assert_eq!(p1.residual_frobenius_sq(), 5.0);
        let k1 = p1.reconstruct();
        let full = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert_relative_eq!((full.clone() - k1).norm_squared(), 5.0, max_relative = 1e-14);
        let p3 = extract_prefix(&basis, &s, 3).unwrap();
        assert_eq!(p3.reconstruct(), full);
        assert_eq!(p3.residual_frobenius_sq(), 0.0);
        assert_relative_eq!(p3.d_spec_renormalized(), d_spec(&s), max_relative = 1e-14);
        assert!(extract_prefix(&basis, &s, 0).is_err());
        assert!(extract_prefix(&basis, &s, 4).is_err());
    }

    #[test]
    fn prefix_rejects_skewed_basis() {
        let mut basis = DMatrix::<f64>::identity(3, 3);
        basis[(0, 1)] = 1e-3;
        let s = spec(&[3.0, 2.0, 1.0], 6.0);
        assert!(matches!(extract_prefix(&basis, &s, 2), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn prefix_export_variants() {
        let basis = DMatrix::<f64>::identity(4, 4);
        let s = spec(&[2.0, 1.0, 0.5, 0.5], 4.0);
        let e = extract_prefix(&basis, &s, 2).unwrap().export();
        // retained (2,1) renormalize to (2/3,1/3)
        let h = -(2.0 / 3.0 * (2.0f64 / 3.0).ln() + 1.0 / 3.0 * (1.0f64 / 3.0).ln());
        assert_relative_eq!(e.d_spec_of_prefix, h.exp(), max_relative = 1e-14);
        let hu = -(0.5 * 0.5f64.ln() + 0.25 * 0.25f64.ln());
        assert_relative_eq!(e.d_spec_unnormalized, hu.exp(), max_relative = 1e-14);
        assert_eq!(e.retained_mass, 0.75);
    }

    #[test]
    fn mode_assignment_ties_and_unit_rows() {
        let mut basis = DMatrix::<f64>::zeros(2, 5);
        basis[(0, 0)] = 1.0;
        let v = 0.5f64.sqrt();
        basis[(1, 1)] = v;
        basis[(1, 4)] = -v;
        // columns are not orthonormal here; build the prefix directly
        let p = PrefixKernel {
            k: 5,
            basis,
            eigenvalues: vec![1.0; 5],
            trace_target: 5.0,
            parent_tail_sq: 0.0,
        };
        assert_eq!(mode_assignment(&p), vec![1, 2]);
    }

    #[test]
    fn soft_membership_rows() {
        let basis = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.3, 0.3, 0.6, 0.8, 0.0]);
        let p = PrefixKernel {
            k: 3,
            basis,
            eigenvalues: vec![1.0; 3],
            trace_target: 3.0,
            parent_tail_sq: 0.0,
        };
        let sm = soft_membership(&p);
        assert!(sm.degenerate_rows.is_empty());
        assert_eq!(sm.weights.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
        for j in 0..3 {
            assert_relative_eq!(sm.weights[(1, j)], 1.0 / 3.0, max_relative = 1e-14);
        }
        assert_relative_eq!(sm.weights[(2, 0)], 0.36, max_relative = 1e-12);
        assert_relative_eq!(sm.weights[(2, 1)], 0.64, max_relative = 1e-12);
        for i in 0..3 {
            assert!((sm.weights.row(i).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn soft_membership_degenerate_row() {
        let p = PrefixKernel {
            k: 2,
            basis: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            eigenvalues: vec![1.0; 2],
            trace_target: 2.0,
            parent_tail_sq: 0.0,
        };
        let sm = soft_membership(&p);
        assert_eq!(sm.degenerate_rows, vec![0]);
        assert_eq!(sm.weights[(0, 0)], 0.5);
    }

    #[test]
    fn alignment_recovers_signed_permutation() {
        let u = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.6, 0.0, 0.8, 0.8, 0.0, -0.6]);
        // other = u with columns (2,0,1) and signs (-,+,-)
        let other = DMatrix::from_fn(3, 3, |r, c| match c {
            0 => -u[(r, 1)],
            1 => u[(r, 2)],
            _ => -u[(r, 0)],
        });
        let a = align_sign_permutation(&u, &other).unwrap();
        assert_eq!(a.perm, vec![2, 0, 1]);
        assert_eq!(a.signs, vec![-1.0, -1.0, 1.0]);
        assert_eq!(a.max_entry_error, 0.0);
    }

    #[test]
    fn mode_csv() {
        let mut buf = Vec::new();
        write_mode_csv(&mut buf, &["a".into(), "b".into()], &[2, 1]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "node_label,mode\na,2\nb,1\n");
    }
}
