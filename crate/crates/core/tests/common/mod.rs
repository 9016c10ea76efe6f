#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spectra_core::model::{orthonormalize_rows, softplus_inv, ModelParams};
use spectra_core::objective::{gradients, objective_value, ObjectiveConfig};
use spectra_core::Pair;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_params(rng: &mut ChaCha8Rng, n: usize, r: usize) -> ModelParams {
    let draw: Vec<f64> = (0..n * r).map(|_| normal(rng)).collect();
    let q = orthonormalize_rows(n, r, &draw).unwrap();
    let sigma_raw = (0..r).map(|_| normal(rng)).collect();
    let offsets = (0..n).map(|_| -1.0 + 0.5 * normal(rng)).collect();
    ModelParams::from_parts(n, r, q, sigma_raw, offsets, 0.5 * normal(rng)).unwrap()
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Pair> {
    (0..count)
        .map(|_| loop {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

/// Rebuilds `m` with one raw coordinate shifted. Coordinates are ordered
/// `q_basis`, `sigma_raw`, `offsets`, `beta_raw`.
pub fn shifted(m: &ModelParams, k: usize, h: f64) -> ModelParams {
    let mut q = m.q_basis().to_vec();
    let mut s = m.sigma_raw().to_vec();
    let mut a = m.offsets().to_vec();
    let mut b = m.beta_raw();
    let (nq, ns, na) = (q.len(), s.len(), a.len());
    if k < nq {
        q[k] += h;
    } else if k < nq + ns {
        s[k - nq] += h;
    } else if k < nq + ns + na {
        a[k - nq - ns] += h;
    } else {
        b += h;
    }
    ModelParams::from_parts(m.n_nodes(), m.rank_cap(), q, s, a, b).unwrap()
}

pub fn n_coords(m: &ModelParams) -> usize {
    m.q_basis().len() + m.rank_cap() + m.n_nodes() + 1
}

/// AUC-ROC by counting every (positive, negative) pair; ties count half.
pub fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &q in neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Average precision from the explicit precision/recall curve: one point per
/// distinct score threshold, taken from the highest score down.
pub fn brute_average_precision(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

fn midranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let tied = x.iter().filter(|&&u| u == v).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

/// Exact Wilcoxon signed-rank p-value by listing all 2ⁿ sign assignments of
/// the nonzero |d|. Returns (W⁺, W⁻, p).
pub fn enumerated_wilcoxon(d: &[f64], alternative: &str) -> (f64, f64, f64) {
    let nz: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|x| x.abs()).collect();
    let ranks = midranks(&abs);
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let w_minus = total - w_plus;
    let n = nz.len();
    let count = 1u64 << n;
    let (mut ge, mut le, mut extreme) = (0u64, 0u64, 0u64);
    let observed_dev = (w_plus - total / 2.0).abs();
    for mask in 0..count {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w >= w_plus - 1e-9 {
            ge += 1;
        }
        if w <= w_plus + 1e-9 {
            le += 1;
        }
        if (w - total / 2.0).abs() >= observed_dev - 1e-9 {
            extreme += 1;
        }
    }
    let c = count as f64;
    let p = match alternative {
        "greater" => ge as f64 / c,
        "less" => le as f64 / c,
        _ => (extreme as f64 / c).min(1.0),
    };
    (w_plus, w_minus, p)
}

/// Cyclic Jacobi eigensolver for symmetric matrices, sorted descending.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (vals, vecs)
}

/// Random orthogonal matrix (QR of a Gaussian draw).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| normal(rng));
    g.qr().q()
}

/// Random PSD matrix `U diag(λ) Uᵀ` with the eigenpairs it was built from.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let u = random_orthogonal(rng, n);
    let mut lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    let k = &u * DMatrix::from_diagonal(&DVector::from_vec(lambda.clone())) * u.transpose();
    (k, lambda, u)
}

/// Connectivity by union-find over an explicit edge list.
pub fn connected(n: usize, edges: &[Pair]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut parts = n;
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            parts -= 1;
        }
    }
    parts <= 1
}

/// Applies the gauge `Q → QΠS`, `σ → Πᵀσ` (column `k` of the result is
/// column `perm[k]` of the input, times `signs[k]`).
pub fn gauge_transform(m: &ModelParams, perm: &[usize], signs: &[f64]) -> ModelParams {
    let (n, r) = (m.n_nodes(), m.rank_cap());
    let q = m.q_basis();
    let mut out = vec![0.0; n * r];
    for i in 0..n {
        for k in 0..r {
            out[i * r + k] = signs[k] * q[i * r + perm[k]];
        }
    }
    let sigma_raw = perm.iter().map(|&k| m.sigma_raw()[k]).collect();
    ModelParams::from_parts(n, r, out, sigma_raw, m.offsets().to_vec(), m.beta_raw()).unwrap()
}

/// Rescales every σ by `c` through the softplus parameterization.
pub fn scale_sigma(m: &ModelParams, c: f64) -> ModelParams {
    let sigma_raw = m.sigma().iter().map(|s| softplus_inv(c * s)).collect();
    ModelParams::from_parts(
        m.n_nodes(),
        m.rank_cap(),
        m.q_basis().to_vec(),
        sigma_raw,
        m.offsets().to_vec(),
        m.beta_raw(),
    )
    .unwrap()
}

pub fn random_gauge(rng: &mut ChaCha8Rng, r: usize) -> (Vec<usize>, Vec<f64>) {
    let mut perm: Vec<usize> = (0..r).collect();
    perm.shuffle(rng);
    let signs = (0..r).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    (perm, signs)
}

pub struct GradientCheck {
    pub coords: usize,
    /// `(coordinate, analytic, finite difference)` outside tolerance.
    pub failures: Vec<(usize, f64, f64)>,
    /// Largest `|analytic − fd| / max(|fd|, 1e-3)` over all coordinates.
    pub worst_rel: f64,
}

/// Central differences (h = 1e-5) of the full objective against the analytic
/// gradient on a random instance (n = 12, r = 3, 8 positives, 40 negatives),
/// η cycling through −0.25, 0, 0.25. A coordinate passes when the error is
/// within 1e-7 absolute or 1e-4 relative.
pub fn gradient_check(case: u64) -> GradientCheck {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(case);
    let m = random_params(&mut rng, 12, 3);
    let pos = random_pairs(&mut rng, 12, 8);
    let neg = random_pairs(&mut rng, 12, 40);
    let cfg = ObjectiveConfig {
        eta: [-0.25, 0.0, 0.25][case as usize % 3],
        reg_weight: 1e-4,
        neg_ratio: 5,
    };
    let g = gradients(&m, &cfg, &pos, &neg).unwrap();
    let mut analytic = g.d_q.clone();
    analytic.extend(&g.d_sigma_raw);
    analytic.extend(&g.d_offsets);
    analytic.push(g.d_beta_raw);
    let mut failures = Vec::new();
    let mut worst_rel = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let f = |d| objective_value(&shifted(&m, k, d), &cfg, &pos, &neg).unwrap();
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let err = (a - fd).abs();
        worst_rel = worst_rel.max(err / fd.abs().max(1e-3));
        if !(err <= 1e-7 || err <= 1e-4 * fd.abs()) {
            failures.push((k, a, fd));
        }
    }
    GradientCheck {
        coords: analytic.len(),
        failures,
        worst_rel,
    }
}
