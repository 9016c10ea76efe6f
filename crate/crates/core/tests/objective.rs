mod common;

use common::{gradient_check, random_pairs, random_params};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectra_core::model::sigmoid;
use spectra_core::objective::{entropy_term, grad_entropy, gradients, objective_value, ObjectiveConfig};

#[test]
fn analytic_gradient_matches_central_differences() {
    for case in 0..100u64 {
        let fd = gradient_check(case);
        assert!(fd.failures.is_empty(), "case {case}: {:?}", fd.failures);
    }
}

#[test]
fn entropy_gradient_is_radially_orthogonal() {
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let m = random_params(&mut rng, 10, 5);
        let g = grad_entropy(&m).unwrap();
        let radial: f64 = m
            .sigma()
            .iter()
            .zip(&g)
            .zip(m.sigma_raw())
            .map(|((s, g), raw)| s * g / sigmoid(*raw))
            .sum();
        assert!(radial.abs() < 1e-10, "case {case}: {radial}");
    }
}

#[test]
fn entropy_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_params(&mut rng, 8, 4);
    let scaled: Vec<f64> = m
        .sigma()
        .iter()
        .map(|s| spectra_core::model::softplus_inv(3.7 * s))
        .collect();
    let m2 = spectra_core::ModelParams::from_parts(8, 4, m.q_basis().to_vec(), scaled, m.offsets().to_vec(), m.beta_raw()).unwrap();
    let (a, b) = (entropy_term(&m).unwrap(), entropy_term(&m2).unwrap());
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

#[test]
fn objective_is_linear_in_eta() {
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
        let m = random_params(&mut rng, 9, 4);
        let pos = random_pairs(&mut rng, 9, 6);
        let neg = random_pairs(&mut rng, 9, 30);
        let c0 = ObjectiveConfig { eta: 0.1, ..ObjectiveConfig::default() };
        let c1 = ObjectiveConfig { eta: 0.35, ..c0 };
        let h = entropy_term(&m).unwrap();
        let diff = objective_value(&m, &c1, &pos, &neg).unwrap() - objective_value(&m, &c0, &pos, &neg).unwrap();
        assert!((diff + 0.25 * h).abs() < 1e-12, "case {case}: {diff} vs {}", -0.25 * h);
    }
}

#[test]
fn bare_objective_is_negative_log_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let m = random_params(&mut rng, 7, 3);
    let pos = random_pairs(&mut rng, 7, 5);
    let neg = random_pairs(&mut rng, 7, 25);
    let cfg = ObjectiveConfig { eta: 0.0, reg_weight: 0.0, neg_ratio: 5 };
    assert_eq!(objective_value(&m, &cfg, &pos, &neg).unwrap(), -m.log_likelihood(&pos, &neg).unwrap());
}

#[test]
fn invalid_pairs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_params(&mut rng, 5, 2);
    let cfg = ObjectiveConfig::default();
    assert!(gradients(&m, &cfg, &[(2, 2)], &[]).is_err());
    assert!(gradients(&m, &cfg, &[(0, 9)], &[]).is_err());
    assert!(gradients(&m, &cfg, &[], &[]).is_err());
}
