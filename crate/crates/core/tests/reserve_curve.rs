use ess_core::reserve::{build_demand_curve, exceedance_probability, requirement_at_confidence, ErrorSampleSet};
use proptest::prelude::*;

fn sample_sets() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-300.0f64..600.0, 1..400)
}

/// Share of samples above `r`, counted directly.
fn survival(samples: &[f64], r: f64) -> f64 {
    samples.iter().filter(|s| **s > r).count() as f64 / samples.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn curve_prices_follow_exceedance(samples in sample_sets(), steps in 2usize..20, cap in 10.0f64..5_000.0) {
        let set = ErrorSampleSet::new(samples.clone(), 30).unwrap();
        let curve = build_demand_curve(&set, cap, steps).unwrap();
        prop_assert!(curve.breakpoints().len() <= steps);
        for w in curve.breakpoints().windows(2) {
            prop_assert!(w[1].0 > w[0].0);
            prop_assert!(w[1].1 <= w[0].1);
        }
        for &(r, p) in curve.breakpoints() {
            prop_assert!(r > 0.0);
            prop_assert!((p - cap * survival(&samples, r)).abs() <= 1e-9 * cap);
            prop_assert_eq!(exceedance_probability(&set, r), survival(&samples, r));
        }
        prop_assert_eq!(curve.is_empty(), samples.iter().all(|s| *s <= 0.0));
    }

    #[test]
    fn requirement_rises_with_confidence(samples in sample_sets(), a in 0.01f64..1.0, b in 0.01f64..1.0) {
        let set = ErrorSampleSet::new(samples.clone(), 30).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = requirement_at_confidence(&set, lo).unwrap();
        let r_hi = requirement_at_confidence(&set, hi).unwrap();
        prop_assert!(r_hi >= r_lo);
        if r_hi > 0.0 {
            prop_assert!(survival(&samples, r_hi) <= 1.0 - hi + 1e-9);
        }
    }
}
