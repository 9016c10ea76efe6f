use proptest::prelude::*;
use spectra_core::calibrate::{calibrate_with, probe_count_bound, CalibrationConfig, EtaResponse, ProbeRecord};
use spectra_core::{ErrorKind, Result};

/// Logistic `η ↦ d_spec` curve rising from 1 to `cap`.
#[derive(Debug)]
struct Logistic {
    cap: f64,
    slope: f64,
    shift: f64,
}

impl Logistic {
    fn at(&self, eta: f64) -> f64 {
        1.0 + (self.cap - 1.0) / (1.0 + (-(self.slope * eta + self.shift)).exp())
    }
}

impl EtaResponse for Logistic {
    type Output = ();

    fn probe(&self, eta: f64) -> Result<ProbeRecord> {
        Ok(ProbeRecord {
            eta,
            achieved_dspec: self.at(eta),
            iterations: 100,
        })
    }

    fn final_fit(&self, eta: f64) -> Result<(f64, ())> {
        Ok((self.at(eta), ()))
    }
}

fn logistic() -> impl Strategy<Value = Logistic> {
    (4.0f64..64.0, 0.5f64..40.0, -3.0f64..3.0).prop_map(|(cap, slope, shift)| Logistic { cap, slope, shift })
}

proptest! {
    #[test]
    fn monotone_responses_converge_within_tolerance(
        curve in logistic(),
        u in 0.0f64..1.0,
        bidirectional in any::<bool>(),
    ) {
        let (lo, hi) = (curve.at(-4.0), curve.at(4.0));
        let target = lo + (hi - lo) * (0.05 + 0.9 * u);
        prop_assume!(target > 1.0 + 1e-6);
        let cfg = CalibrationConfig {
            bidirectional,
            max_probes: 80,
            ..CalibrationConfig::new(target)
        };
        let res = calibrate_with(&curve, &cfg).unwrap();
        prop_assert!(res.within_tolerance);
        prop_assert!((res.achieved_dspec - target).abs() / target <= cfg.rel_tol);
        prop_assert!(res.probe_log.len() <= cfg.max_probes);

        let anchor = curve.at(0.0);
        if (anchor - target).abs() / target > cfg.rel_tol {
            prop_assert_eq!(res.eta_star.signum(), (target - anchor).signum());
        } else {
            prop_assert_eq!(res.eta_star, 0.0);
        }
        if let Some((a, b)) = res.initial_bracket {
            prop_assert!(res.final_eta_gap > 0.0);
            prop_assert!(res.bisection_probes <= probe_count_bound(b - a, res.final_eta_gap));
        }
    }

    #[test]
    fn targets_beyond_the_cap_are_unreachable(curve in logistic()) {
        let target = curve.at(4.0) * 1.5;
        let err = calibrate_with(&curve, &CalibrationConfig::new(target)).unwrap_err();
        prop_assert_eq!(err.kind(), ErrorKind::Numerical);
    }
}

#[test]
fn bisection_count_matches_the_bound_for_a_known_bracket() {
    // Expansion brackets the target between 0.16 and 0.32, then halves.
    let curve = Logistic {
        cap: 64.0,
        slope: 1.0,
        shift: -2.0,
    };
    let target = curve.at(0.23);
    let cfg = CalibrationConfig {
        rel_tol: 1e-4,
        ..CalibrationConfig::new(target)
    };
    let res = calibrate_with(&curve, &cfg).unwrap();
    let (a, b) = res.initial_bracket.unwrap();
    assert_eq!((a, b), (0.16, 0.32));
    assert_eq!(res.bisection_probes, probe_count_bound(b - a, res.final_eta_gap));
    assert!((res.eta_star - 0.23).abs() <= res.final_eta_gap);
}
