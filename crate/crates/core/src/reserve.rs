//! Operating-reserve sizing from historical forecast errors.
//!
//! Errors are `actual - forecast` of net demand, so a positive error is a
//! supply shortfall that raise reserve has to cover. Everything here works on
//! the empirical distribution; no parametric fit is attempted.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clearing::{RequirementMode, ServiceRequirement};
use crate::model::ServiceKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReserveError {
    #[error("error sample set is empty")]
    EmptySampleSet,
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("n_steps must be >= 2, got {0}")]
    InvalidSteps(usize),
    #[error("price cap must be > 0, got {0}")]
    InvalidCap(f64),
    #[error("confidence must lie in (0, 1], got {0}")]
    InvalidConfidence(f64),
    #[error("{product} needs {expected}-minute errors but the set has a {actual}-minute horizon")]
    HorizonMismatch {
        product: ReserveProduct,
        expected: u32,
        actual: u32,
    },
    #[error("invalid demand curve: {0}")]
    InvalidCurve(String),
}

/// Forecast errors (MW) for a single look-ahead horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSampleSet {
    samples: Vec<f64>,
    horizon_min: u32,
}

impl ErrorSampleSet {
    pub fn new(samples: Vec<f64>, horizon_min: u32) -> Result<Self, ReserveError> {
        if samples.is_empty() {
            return Err(ReserveError::EmptySampleSet);
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(ReserveError::NonFiniteSample { index });
        }
        Ok(ErrorSampleSet { samples, horizon_min })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn horizon_min(&self) -> u32 {
        self.horizon_min
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Strictly positive errors in ascending order.
    fn sorted_shortfalls(&self) -> Vec<f64> {
        let mut pos: Vec<f64> = self.samples.iter().copied().filter(|s| *s > 0.0).collect();
        pos.sort_by(f64::total_cmp);
        pos
    }
}

/// Empirical survival function: the share of samples strictly above `r`.
pub fn exceedance_probability(set: &ErrorSampleSet, r: f64) -> f64 {
    let above = set.samples.iter().filter(|s| **s > r).count();
    above as f64 / set.samples.len() as f64
}

/// Step-shaped demand for reserve.
///
/// Breakpoint `k` at `(r_k, p_k)` values the MW between `r_{k-1}` and `r_k`
/// (with `r_0 = 0`) at `p_k`. Demand beyond the last breakpoint is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReserveDemandCurve {
    breakpoints: Vec<(f64, f64)>,
}

impl ReserveDemandCurve {
    pub fn new(breakpoints: Vec<(f64, f64)>, price_cap: f64) -> Result<Self, ReserveError> {
        for (i, &(r, p)) in breakpoints.iter().enumerate() {
            if !r.is_finite() || !p.is_finite() || r < 0.0 {
                return Err(ReserveError::InvalidCurve(format!("breakpoint {i} = ({r}, {p})")));
            }
            if p < 0.0 || p > price_cap {
                return Err(ReserveError::InvalidCurve(format!(
                    "price {p} at breakpoint {i} outside [0, {price_cap}]"
                )));
            }
        }
        for (i, w) in breakpoints.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(ReserveError::InvalidCurve(format!(
                    "reserve levels not strictly increasing at breakpoint {}",
                    i + 1
                )));
            }
            if w[1].1 > w[0].1 {
                return Err(ReserveError::InvalidCurve(format!(
                    "price increases at breakpoint {}",
                    i + 1
                )));
            }
        }
        Ok(ReserveDemandCurve { breakpoints })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// (width MW, price) per demand block, in order.
    pub fn blocks(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mut prev = 0.0;
        self.breakpoints.iter().map(move |&(r, p)| {
            let width = r - prev;
            prev = r;
            (width, p)
        })
    }

    /// Price of the marginal MW at reserve level `r`.
    pub fn price_at(&self, r: f64) -> f64 {
        self.breakpoints
            .iter()
            .find(|(level, _)| r <= *level)
            .map_or(0.0, |(_, p)| *p)
    }
}

/// Breakpoints at the `n_steps` empirical quantiles of the positive errors,
/// each priced at `price_cap` times the exceedance probability there.
///
/// A set with no positive error yields an empty curve.
pub fn build_demand_curve(
    set: &ErrorSampleSet,
    price_cap: f64,
    n_steps: usize,
) -> Result<ReserveDemandCurve, ReserveError> {
    if n_steps < 2 {
        return Err(ReserveError::InvalidSteps(n_steps));
    }
    if !(price_cap > 0.0 && price_cap.is_finite()) {
        return Err(ReserveError::InvalidCap(price_cap));
    }
    let pos = set.sorted_shortfalls();
    if pos.is_empty() {
        return Ok(ReserveDemandCurve::empty());
    }
    let m = pos.len();
    let mut breakpoints: Vec<(f64, f64)> = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        // ceil(k m / n) - 1, in integers
        let idx = (k * m).div_ceil(n_steps) - 1;
        let r = pos[idx];
        if breakpoints.last().is_some_and(|(last, _)| *last >= r) {
            continue;
        }
        breakpoints.push((r, price_cap * exceedance_probability(set, r)));
    }
    ReserveDemandCurve::new(breakpoints, price_cap)
}

/// Smallest observed shortfall level `r` with `P(error > r) <= 1 - confidence`.
///
/// Candidate levels are the positive samples; a set without any positive
/// error needs no raise reserve and returns 0.
pub fn requirement_at_confidence(set: &ErrorSampleSet, confidence: f64) -> Result<f64, ReserveError> {
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(ReserveError::InvalidConfidence(confidence));
    }
    let n = set.samples.len();
    let allowed = ((1.0 - confidence) * n as f64 + 1e-9).floor() as usize;
    let pos = set.sorted_shortfalls();
    let requirement = pos
        .iter()
        .copied()
        .find(|&r| set.samples.iter().filter(|s| **s > r).count() <= allowed)
        .unwrap_or(0.0);
    Ok(requirement)
}

/// Operating-reserve product variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReserveProduct {
    /// Firm availability procured for the interval 30 minutes ahead.
    FirmAvailability30,
    /// Spinning reserve held to be called as energy.
    CallableSpinning,
    /// Headroom over the coming 5 minutes.
    Headroom5,
}

impl ReserveProduct {
    pub fn horizon_min(self) -> u32 {
        match self {
            ReserveProduct::FirmAvailability30 | ReserveProduct::CallableSpinning => 30,
            ReserveProduct::Headroom5 => 5,
        }
    }
}

impl fmt::Display for ReserveProduct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReserveProduct::FirmAvailability30 => "firm_availability_30",
            ReserveProduct::CallableSpinning => "callable_spinning",
            ReserveProduct::Headroom5 => "headroom_5",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReserveProductConfig {
    pub price_cap: f64,
    pub n_steps: usize,
    pub confidence: f64,
}

impl Default for ReserveProductConfig {
    fn default() -> Self {
        ReserveProductConfig {
            price_cap: 1_000.0,
            n_steps: 10,
            confidence: 0.95,
        }
    }
}

/// Turns a reserve product into an operating-reserve requirement.
pub fn reserve_product(
    product: ReserveProduct,
    set: &ErrorSampleSet,
    config: &ReserveProductConfig,
) -> Result<ServiceRequirement, ReserveError> {
    if set.horizon_min != product.horizon_min() {
        return Err(ReserveError::HorizonMismatch {
            product,
            expected: product.horizon_min(),
            actual: set.horizon_min,
        });
    }
    let service = ServiceKind::OperatingReserve;
    let mode = match product {
        ReserveProduct::FirmAvailability30 | ReserveProduct::Headroom5 => {
            let curve = build_demand_curve(set, config.price_cap, config.n_steps)?;
            if curve.is_empty() {
                RequirementMode::Disabled
            } else {
                RequirementMode::DemandCurve(curve)
            }
        }
        ReserveProduct::CallableSpinning => {
            RequirementMode::FixedQuantity(requirement_at_confidence(set, config.confidence)?)
        }
    };
    Ok(ServiceRequirement { service, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[f64]) -> ErrorSampleSet {
        ErrorSampleSet::new(v.to_vec(), 30).unwrap()
    }

    #[test]
    fn exceedance_counts() {
        let s = set(&[-50.0, 10.0, 30.0, 70.0]);
        assert_eq!(exceedance_probability(&s, 20.0), 0.5);
        assert_eq!(exceedance_probability(&s, 70.0), 0.0);
        assert_eq!(exceedance_probability(&s, 1e6), 0.0);
        assert_eq!(exceedance_probability(&s, -51.0), 1.0);
    }

    #[test]
    fn curve_from_four_samples() {
        let c = build_demand_curve(&set(&[10.0, 20.0, 30.0, 40.0]), 1_000.0, 4).unwrap();
        assert_eq!(
            c.breakpoints(),
            &[(10.0, 750.0), (20.0, 500.0), (30.0, 250.0), (40.0, 0.0)]
        );
        assert_eq!(c.price_at(5.0), 750.0);
        assert_eq!(c.price_at(15.0), 500.0);
        assert_eq!(c.price_at(45.0), 0.0);
    }

    #[test]
    fn all_negative_errors_give_empty_curve() {
        let c = build_demand_curve(&set(&[-1.0, -20.0]), 1_000.0, 4).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn single_sample_curve() {
        let c = build_demand_curve(&set(&[100.0]), 1_000.0, 5).unwrap();
        assert_eq!(c.breakpoints(), &[(100.0, 0.0)]);
    }

    #[test]
    fn bad_curve_arguments() {
        let s = set(&[1.0]);
        assert_eq!(build_demand_curve(&s, 1_000.0, 1), Err(ReserveError::InvalidSteps(1)));
        assert_eq!(build_demand_curve(&s, 0.0, 4), Err(ReserveError::InvalidCap(0.0)));
        assert!(ReserveDemandCurve::new(vec![(10.0, 5.0), (20.0, 6.0)], 100.0).is_err());
        assert!(ReserveDemandCurve::new(vec![(10.0, 5.0), (10.0, 4.0)], 100.0).is_err());
        assert!(ReserveDemandCurve::new(vec![(10.0, 500.0)], 100.0).is_err());
    }

    #[test]
    fn requirement_quantiles() {
        let s = set(&[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(requirement_at_confidence(&s, 0.75).unwrap(), 30.0);
        assert_eq!(requirement_at_confidence(&s, 0.999_999).unwrap(), 40.0);
        assert_eq!(requirement_at_confidence(&s, 1.0).unwrap(), 40.0);
        assert_eq!(requirement_at_confidence(&set(&[-10.0, 10.0]), 0.5).unwrap(), 10.0);
        assert_eq!(requirement_at_confidence(&set(&[-10.0, -5.0]), 0.9).unwrap(), 0.0);
        assert!(requirement_at_confidence(&s, 0.0).is_err());
    }

    #[test]
    fn empty_and_non_finite_sets_are_rejected() {
        assert_eq!(ErrorSampleSet::new(vec![], 30), Err(ReserveError::EmptySampleSet));
        assert_eq!(
            ErrorSampleSet::new(vec![1.0, f64::NAN], 30),
            Err(ReserveError::NonFiniteSample { index: 1 })
        );
    }

    #[test]
    fn products_map_to_requirements() {
        let cfg = ReserveProductConfig::default();
        let errors: Vec<f64> = (0..100).map(|i| f64::from(i) - 20.0).collect();
        let s30 = ErrorSampleSet::new(errors.clone(), 30).unwrap();

        let callable = reserve_product(ReserveProduct::CallableSpinning, &s30, &cfg).unwrap();
        // 100 samples -20..79; at most 5 may exceed -> 74.
        assert_eq!(callable.mode, RequirementMode::FixedQuantity(74.0));

        let firm = reserve_product(ReserveProduct::FirmAvailability30, &s30, &cfg).unwrap();
        assert!(matches!(firm.mode, RequirementMode::DemandCurve(_)));

        let neg = ErrorSampleSet::new(vec![-5.0, -1.0], 30).unwrap();
        let firm = reserve_product(ReserveProduct::FirmAvailability30, &neg, &cfg).unwrap();
        assert_eq!(firm.mode, RequirementMode::Disabled);

        let err = reserve_product(ReserveProduct::Headroom5, &s30, &cfg).unwrap_err();
        assert!(matches!(err, ReserveError::HorizonMismatch { expected: 5, actual: 30, .. }));
        let s5 = ErrorSampleSet::new(errors, 5).unwrap();
        assert!(reserve_product(ReserveProduct::Headroom5, &s5, &cfg).is_ok());
    }

    fn samples() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-200.0f64..300.0, 1..60)
    }

    proptest! {
        #[test]
        fn exceedance_is_non_increasing(v in samples(), a in -300.0f64..400.0, b in -300.0f64..400.0) {
            let s = set(&v);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pl, ph) = (exceedance_probability(&s, lo), exceedance_probability(&s, hi));
            prop_assert!(pl >= ph);
            prop_assert!((0.0..=1.0).contains(&pl));
        }

        #[test]
        fn curve_prices_are_cap_times_exceedance(v in samples(), steps in 2usize..12) {
            let s = set(&v);
            let c = build_demand_curve(&s, 1_000.0, steps).unwrap();
            for &(r, p) in c.breakpoints() {
                prop_assert_eq!(p, 1_000.0 * exceedance_probability(&s, r));
            }
        }

        #[test]
        fn requirement_monotone_in_confidence(v in samples(), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let s = set(&v);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(requirement_at_confidence(&s, lo).unwrap() <= requirement_at_confidence(&s, hi).unwrap());
        }

        #[test]
        fn positive_outlier_never_lowers_requirement(v in samples(), c in 0.01f64..1.0) {
            let before = requirement_at_confidence(&set(&v), c).unwrap();
            let mut w = v.clone();
            w.push(10_000.0);
            let after = requirement_at_confidence(&set(&w), c).unwrap();
            prop_assert!(after >= before);
        }
    }
}
