//! The capacity-control objective
//! `F_η = −ℓ̄ − η·H(p) + λ(‖σ‖² + ‖a‖² + β²)` and its analytic gradients.
//!
//! `ℓ̄` is the equal-weight sum of the mean positive and mean negative
//! log-likelihoods and `H(p)` is the entropy of `pⱼ = σⱼ²/Σσ²`, which equals
//! `log d_spec` when `Q` is orthonormal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Pair;
use crate::model::{log_sigmoid, sigmoid, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Entropy weight; positive values reward spectral spread.
    pub eta: f64,
    /// Quadratic regularization weight on post-softplus σ, β and on a.
    pub reg_weight: f64,
    /// Negatives drawn per positive in each batch.
    pub neg_ratio: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            eta: 0.0,
            reg_weight: 1e-4,
            neg_ratio: 5,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument("reg_weight must be >= 0 and eta finite".into()));
        }
        if self.neg_ratio == 0 {
            return Err(Error::InvalidArgument("neg_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradient of the objective with respect to every raw parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// Row-major, same layout as the model's `q_basis`.
    pub d_q: Vec<f64>,
    pub d_sigma_raw: Vec<f64>,
    pub d_offsets: Vec<f64>,
    pub d_beta_raw: f64,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.d_q
            .iter()
            .chain(&self.d_sigma_raw)
            .chain(&self.d_offsets)
            .all(|g| g.is_finite())
            && self.d_beta_raw.is_finite()
    }
}

/// `H(p)` with `pⱼ = σⱼ²/Σσ²` (nats).
pub fn entropy_term(m: &ModelParams) -> Result<f64> {
    Ok(m.view()?.entropy())
}

/// `∂H/∂sigma_raw`.
pub fn grad_entropy(m: &ModelParams) -> Result<Vec<f64>> {
    let view = m.view()?;
    let h = view.entropy();
    let s = view.sigma_sq_sum();
    Ok(view
        .occupancy()
        .iter()
        .zip(view.sigma())
        .zip(m.sigma_raw())
        .map(|((&p, &sigma), &raw)| {
            if p > 0.0 {
                // ∂H/∂σⱼ = −(2σⱼ/S)(ln pⱼ + H); softplus' = sigmoid
                -(2.0 * sigma / s) * (p.ln() + h) * sigmoid(raw)
            } else {
                0.0
            }
        })
        .collect())
}

/// `λ(‖σ‖² + ‖a‖² + β²)` on post-softplus σ and β.
pub fn regularizer(m: &ModelParams, reg_weight: f64) -> f64 {
    let sigma_sq: f64 = m.sigma().iter().map(|s| s * s).sum();
    let a_sq: f64 = m.offsets().iter().map(|a| a * a).sum();
    reg_weight * (sigma_sq + a_sq + m.beta().powi(2))
}

/// Objective value in loss convention (lower is better).
pub fn objective_value(
    m: &ModelParams,
    cfg: &ObjectiveConfig,
    positives: &[Pair],
    negatives: &[Pair],
) -> Result<f64> {
    let view = m.view()?;
    let ll = view.log_likelihood(positives, negatives)?;
    let value = -ll - cfg.eta * view.entropy() + regularizer(m, cfg.reg_weight);
    if !value.is_finite() {
        return Err(nan_diagnostic(m, cfg, "objective value"));
    }
    Ok(value)
}

pub fn gradients(
    m: &ModelParams,
    cfg: &ObjectiveConfig,
    positives: &[Pair],
    negatives: &[Pair],
) -> Result<GradientBundle> {
    evaluate(m, cfg, positives, negatives, false).map(|(_, g)| g)
}

/// Objective value and full analytic gradient in one pass. The likelihood
/// part costs `O(|batch|·r)`; the σ normalization and dense `d_q` buffer
/// add `O(N·r)`.
pub fn value_and_gradients(
    m: &ModelParams,
    cfg: &ObjectiveConfig,
    positives: &[Pair],
    negatives: &[Pair],
) -> Result<(f64, GradientBundle)> {
    evaluate(m, cfg, positives, negatives, true)
}

/// Gradient pass that evaluates the likelihood terms only when `with_value`
/// is set; otherwise the returned value is NaN.
pub(crate) fn evaluate(
    m: &ModelParams,
    cfg: &ObjectiveConfig,
    positives: &[Pair],
    negatives: &[Pair],
    with_value: bool,
) -> Result<(f64, GradientBundle)> {
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::InvalidArgument("objective of an empty batch".into()));
    }
    let view = m.view()?;
    let r = m.rank_cap();
    let n = m.n_nodes() as f64;
    let s = view.sigma_sq_sum();
    let beta = view.beta();
    let w = view.mode_weights(); // N σ_l² / S

    let mut d_q = vec![0.0; m.n_nodes() * r];
    let offsets = m.offsets();
    let q = m.q_basis();
    if let Some(&(i, j)) = positives.iter().chain(negatives).find(|&&(i, j)| i == j || i.max(j) >= m.n_nodes()) {
        return Err(Error::InvalidArgument(format!("pair ({i}, {j}) is not a valid node pair")));
    }

    let mut qq = vec![0.0; r]; // Σ ∂F/∂K_ij · Q_il Q_jl
    let mut dk_k = 0.0; // Σ ∂F/∂K_ij · K_ij
    let mut d_offsets = vec![0.0; m.n_nodes()];
    let mut d_beta = 0.0;
    let mut ll = 0.0;

    // z-derivative of −(mean ln φ) is (φ(z) − 1)/P; of −(mean ln(1−φ)) is φ(z)/M
    let mut accumulate = |pairs: &[Pair], positive: bool| {
        if pairs.is_empty() {
            return;
        }
        let inv = 1.0 / pairs.len() as f64;
        let mut side = 0.0;
        for &(i, j) in pairs {
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            let (qi, qj) = (&q[i * r..(i + 1) * r], &q[j * r..(j + 1) * r]);
            let k_ij = weighted_dot(w, qi, qj);
            let z = offsets[i] + offsets[j] + beta * k_ij;
            let phi = sigmoid(z);
            let dz = if positive { (phi - 1.0) * inv } else { phi * inv };
            if with_value {
                side += if positive { log_sigmoid(z) } else { log_sigmoid(-z) };
            }
            d_offsets[i] += dz;
            d_offsets[j] += dz;
            d_beta += dz * k_ij;
            let dk = dz * beta;
            dk_k += dk * k_ij;
            let (lo, hi) = d_q.split_at_mut(j * r);
            let (gi, gj) = (&mut lo[i * r..(i + 1) * r], &mut hi[..r]);
            for (((((gi, gj), qq), &a), &b), &wl) in gi.iter_mut().zip(gj.iter_mut()).zip(qq.iter_mut()).zip(qi).zip(qj).zip(w) {
                *gi += dk * wl * b;
                *gj += dk * wl * a;
                *qq += dk * a * b;
            }
        }
        ll += side * inv;
    };
    accumulate(positives, true);
    accumulate(negatives, false);

    // ∂K_ij/∂(σ_l²) = (N Q_il Q_jl − K_ij)/S
    let mut d_sq: Vec<f64> = qq.iter().map(|&a| (n * a - dk_k) / s).collect();

    // entropy: ∂H/∂(σ_l²) = −(ln p_l + H)/S
    let h = view.entropy();
    for (l, &p) in view.occupancy().iter().enumerate() {
        if p > 0.0 {
            d_sq[l] += cfg.eta * (p.ln() + h) / s;
        }
    }

    let lam = cfg.reg_weight;
    let d_sigma_raw: Vec<f64> = (0..r)
        .map(|l| {
            let sigma = view.sigma()[l];
            (d_sq[l] * 2.0 * sigma + 2.0 * lam * sigma) * sigmoid(m.sigma_raw()[l])
        })
        .collect();
    for (g, &a) in d_offsets.iter_mut().zip(m.offsets()) {
        *g += 2.0 * lam * a;
    }
    let d_beta_raw = (d_beta + 2.0 * lam * beta) * sigmoid(m.beta_raw());

    let value = if with_value {
        -ll - cfg.eta * h + regularizer(m, lam)
    } else {
        f64::NAN
    };
    let bundle = GradientBundle {
        d_q,
        d_sigma_raw,
        d_offsets,
        d_beta_raw,
    };
    if (with_value && !value.is_finite()) || !bundle.is_finite() {
        return Err(nan_diagnostic(m, cfg, "objective gradient"));
    }
    Ok((value, bundle))
}

/// `Σ w_l a_l b_l` with four independent accumulators.
#[inline]
fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (wc, ac, bc) = (w.chunks_exact(4), a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = wc.remainder().iter().zip(ac.remainder()).zip(bc.remainder()).map(|((w, a), b)| w * a * b).sum();
    for ((w, a), b) in wc.zip(ac).zip(bc) {
        for k in 0..4 {
            acc[k] += w[k] * a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn nan_diagnostic(m: &ModelParams, cfg: &ObjectiveConfig, what: &str) -> Error {
    let sigma = m.sigma();
    let lo = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Error::Numerical(format!(
        "non-finite {what} (eta = {}, min σ = {lo:e}, max σ = {hi:e}, β = {})",
        cfg.eta,
        m.beta()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softplus_inv;
    use approx::assert_relative_eq;

    fn model_with_sigma(sigma: &[f64]) -> ModelParams {
        let r = sigma.len();
        let n = r + 2;
        let mut q = vec![0.0; n * r];
        for l in 0..r {
            q[l * r + l] = 1.0;
        }
        let raw = sigma.iter().map(|&s| softplus_inv(s)).collect();
        ModelParams::from_parts(n, r, q, raw, vec![0.0; n], softplus_inv(1.0)).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(entropy_term(&model_with_sigma(&[1.0; 8])).unwrap(), 8f64.ln(), max_relative = 1e-14);
        let h = entropy_term(&model_with_sigma(&[1e6, 1.0, 1.0])).unwrap();
        assert!(h < 1e-4, "{h}");
        // σ² ∝ (4,2,1,1) → p = (1/2, 1/4, 1/8, 1/8), H = 1.75 ln 2
        let s = [2.0, 2f64.sqrt(), 1.0, 1.0];
        assert_relative_eq!(entropy_term(&model_with_sigma(&s)).unwrap(), 1.75 * 2f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn entropy_gradient_directions() {
        let g = grad_entropy(&model_with_sigma(&[0.7; 5])).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-15), "{g:?}");
        // p = (0.8, 0.2)
        let g = grad_entropy(&model_with_sigma(&[2.0, 1.0])).unwrap();
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    #[test]
    fn entropy_gradient_matches_differences() {
        let m = model_with_sigma(&[0.3, 1.7, 0.9, 2.4, 0.05]);
        let g = grad_entropy(&m).unwrap();
        let h = 1e-5;
        for l in 0..5 {
            let shift = |d: f64| {
                let mut raw = m.sigma_raw().to_vec();
                raw[l] += d;
                let p = ModelParams::from_parts(m.n_nodes(), 5, m.q_basis().to_vec(), raw, m.offsets().to_vec(), m.beta_raw()).unwrap();
                entropy_term(&p).unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            assert!((g[l] - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{l}: {} vs {fd}", g[l]);
        }
    }

    #[test]
    fn regularizer_examples() {
        let m = model_with_sigma(&[1.0, 1.0]);
        assert_eq!(regularizer(&m, 0.0), 0.0);
        assert_relative_eq!(regularizer(&m, 1e-4), 3e-4, max_relative = 1e-12);
    }

    #[test]
    fn objective_examples() {
        let m = model_with_sigma(&[1.0; 8]);
        // nodes 8 and 9 have no loading, so K = 0 and z = 0
        let (pos, neg) = ([(8, 9)], [(8, 9)]);
        let cfg0 = ObjectiveConfig { eta: 0.0, reg_weight: 0.0, neg_ratio: 1 };
        assert_relative_eq!(objective_value(&m, &cfg0, &pos, &neg).unwrap(), 4f64.ln(), max_relative = 1e-14);
        let cfg1 = ObjectiveConfig { eta: 1.0, reg_weight: 1e-4, neg_ratio: 1 };
        let expected = 4f64.ln() - 8f64.ln() + regularizer(&m, 1e-4);
        assert_relative_eq!(objective_value(&m, &cfg1, &pos, &neg).unwrap(), expected, max_relative = 1e-12);
        let cfgm = ObjectiveConfig { eta: -1.0, ..cfg1 };
        assert!(objective_value(&m, &cfgm, &pos, &neg).unwrap() > objective_value(&m, &cfg1, &pos, &neg).unwrap());
    }

    #[test]
    fn saturated_positives_leave_only_prior_gradients() {
        let mut m = model_with_sigma(&[1.0, 2.0]);
        let n = m.n_nodes();
        m = ModelParams::from_parts(n, 2, m.q_basis().to_vec(), m.sigma_raw().to_vec(), vec![15.0; n], m.beta_raw()).unwrap();
        let cfg = ObjectiveConfig { eta: 0.25, reg_weight: 0.0, neg_ratio: 1 };
        let g = gradients(&m, &cfg, &[(2, 3)], &[]).unwrap();
        assert!(g.d_offsets.iter().all(|v| v.abs() < 1e-12));
        let ge = grad_entropy(&m).unwrap();
        for (d, e) in g.d_sigma_raw.iter().zip(&ge) {
            assert_relative_eq!(*d, -0.25 * e, max_relative = 1e-9);
        }
    }

    #[test]
    fn two_node_symmetry() {
        let m = ModelParams::from_parts(2, 1, vec![0.6, 0.8], vec![0.2], vec![-0.3, -0.3], 0.4).unwrap();
        let cfg = ObjectiveConfig::default();
        let g = gradients(&m, &cfg, &[(0, 1)], &[(0, 1)]).unwrap();
        assert_relative_eq!(g.d_offsets[0], g.d_offsets[1], max_relative = 1e-14);
    }
}
