//! ROCOF Control Service: inertia sizing, the legacy headroom rule, and
//! speed-based accreditation of measured responses.
//!
//! A measured response is scored against a single ideal exponential
//! `r_max (1 - exp(-t / tau))`. The fitted `tau` is turned into a speed
//! multiplier relative to a reference turbine, so fast inverter response is
//! credited with more than its raw MW. There is one segment only; no
//! 1 s / 2 s / 3 s sub-products exist.

use thiserror::Error;

use crate::model::Facility;

pub const TAU_SEARCH_MIN_S: f64 = 0.01;
pub const TAU_SEARCH_MAX_S: f64 = 60.0;
const GOLDEN_MAX_ITER: usize = 200;
const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RocofError {
    #[error("ROCOF limit must be > 0 Hz/s, got {0}")]
    NonPositiveLimit(f64),
    #[error("response trace is degenerate: {0}")]
    DegenerateTrace(String),
    #[error("golden-section search did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("invalid response trace: {0}")]
    InvalidTrace(String),
}

/// Inertia needed so that losing `contingency_mw` stays within `max_rocof`.
pub fn min_inertia_for_rocof(contingency_mw: f64, max_rocof: f64, f0: f64) -> Result<f64, RocofError> {
    if !(max_rocof > 0.0) {
        return Err(RocofError::NonPositiveLimit(max_rocof));
    }
    Ok(contingency_mw * f0 / (2.0 * max_rocof))
}

/// Headroom carried under the historical rule of thumb: 70% of the largest
/// generation contingency.
pub fn legacy_headroom_requirement(largest_contingency_mw: f64) -> f64 {
    // 7/10 rather than 0.7 so whole-MW inputs give the correctly rounded result.
    largest_contingency_mw * 7.0 / 10.0
}

/// Measured output of a facility after a frequency event.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTrace {
    samples: Vec<(f64, f64)>,
}

impl ResponseTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, RocofError> {
        if samples.len() < 5 {
            return Err(RocofError::InvalidTrace(format!("{} samples, need at least 5", samples.len())));
        }
        if samples[0].0 != 0.0 {
            return Err(RocofError::InvalidTrace(format!("first sample at t = {}, expected 0", samples[0].0)));
        }
        for (i, &(t, y)) in samples.iter().enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(RocofError::InvalidTrace(format!("sample {i} is not finite")));
            }
        }
        if let Some(i) = samples.windows(2).position(|w| w[1].0 < w[0].0) {
            return Err(RocofError::InvalidTrace(format!("time decreases at sample {}", i + 1)));
        }
        Ok(ResponseTrace { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    pub r_max: f64,
    pub tau_s: f64,
    pub rmse: f64,
    /// `tau_s` sits on a bound of the search interval.
    pub saturated: bool,
}

/// Least-squares asymptote for a fixed `tau`, with the residual sum of squares.
fn profile(samples: &[(f64, f64)], tau: f64) -> (f64, f64) {
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), &(t, y)| {
        let phi = 1.0 - (-t / tau).exp();
        (n + y * phi, d + phi * phi)
    });
    let r = if den > 0.0 { num / den } else { 0.0 };
    let sse = samples
        .iter()
        .map(|&(t, y)| {
            let e = y - r * (1.0 - (-t / tau).exp());
            e * e
        })
        .sum();
    (r, sse)
}

/// Fits `r_max (1 - exp(-t / tau))` by golden-section search over `tau`
/// (on a log scale within [0.01 s, 60 s]) with `r_max` solved in closed form.
pub fn fit_exponential(trace: &ResponseTrace) -> Result<ExponentialFit, RocofError> {
    let samples = trace.samples();
    if samples.iter().all(|&(_, y)| y == 0.0) {
        return Err(RocofError::DegenerateTrace("all outputs are zero".into()));
    }
    let last = samples[samples.len() - 1].1;
    if !(last > 0.0) {
        return Err(RocofError::DegenerateTrace(format!("final output {last} is not positive")));
    }

    let sse_at = |u: f64| profile(samples, u.exp()).1;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TAU_SEARCH_MIN_S.ln(), TAU_SEARCH_MAX_S.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse_at(c), sse_at(d));
    let mut converged = false;
    for _ in 0..GOLDEN_MAX_ITER {
        if b - a < GOLDEN_TOL {
            converged = true;
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse_at(d);
        }
    }
    if !converged {
        return Err(RocofError::NoConvergence(GOLDEN_MAX_ITER));
    }

    // The interior minimum competes with the two bounds, which is where a
    // monotone residual (e.g. a step input) ends up.
    let candidates = [TAU_SEARCH_MIN_S, ((a + b) / 2.0).exp(), TAU_SEARCH_MAX_S];
    let (tau, (r_max, sse)) = candidates
        .iter()
        .map(|&tau| (tau, profile(samples, tau)))
        .fold(None, |best: Option<(f64, (f64, f64))>, cand| match best {
            Some(b) if b.1 .1 <= cand.1 .1 => Some(b),
            _ => Some(cand),
        })
        .expect("three candidates");
    let saturated = (tau / TAU_SEARCH_MIN_S).ln().abs() < 1e-6 || (tau / TAU_SEARCH_MAX_S).ln().abs() < 1e-6;
    Ok(ExponentialFit {
        r_max,
        tau_s: tau,
        rmse: (sse / samples.len() as f64).sqrt(),
        saturated,
    })
}

/// `tau_reference / tau`, clamped to `[0, m_max]`.
pub fn speed_multiplier(fit: &ExponentialFit, tau_reference: f64, m_max: f64) -> f64 {
    (tau_reference / fit.tau_s).clamp(0.0, m_max)
}

/// MW a facility may offer: its fitted response capped at its headroom,
/// scaled by the speed multiplier.
pub fn accredited_quantity(facility: &Facility, fit: &ExponentialFit, multiplier: f64) -> f64 {
    fit.r_max.min(facility.headroom_mw()).max(0.0) * multiplier
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    pub tau_reference_s: f64,
    pub m_max: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            tau_reference_s: 6.0,
            m_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseScore {
    pub fit: ExponentialFit,
    pub multiplier: f64,
    pub accredited_mw: Option<f64>,
}

/// Fit, multiplier and (when the facility is known) accredited MW in one go.
pub fn score_response(
    trace: &ResponseTrace,
    facility: Option<&Facility>,
    config: &ScoringConfig,
) -> Result<ResponseScore, RocofError> {
    let fit = fit_exponential(trace)?;
    let multiplier = speed_multiplier(&fit, config.tau_reference_s, config.m_max);
    Ok(ResponseScore {
        fit,
        multiplier,
        accredited_mw: facility.map(|f| accredited_quantity(f, &fit, multiplier)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::rocof_after_contingency;
    use crate::model::Technology;
    use proptest::prelude::*;

    fn synthetic(r: f64, tau: f64, t_end: f64, step: f64) -> ResponseTrace {
        let n = (t_end / step).round() as usize;
        ResponseTrace::new(
            (0..=n)
                .map(|i| {
                    let t = i as f64 * step;
                    (t, r * (1.0 - (-t / tau).exp()))
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn inertia_requirement() {
        assert_eq!(min_inertia_for_rocof(300.0, 1.25, 50.0).unwrap(), 6_000.0);
        assert_eq!(min_inertia_for_rocof(0.0, 1.0, 50.0).unwrap(), 0.0);
        assert_eq!(
            min_inertia_for_rocof(300.0, 0.625, 50.0).unwrap(),
            2.0 * min_inertia_for_rocof(300.0, 1.25, 50.0).unwrap()
        );
        assert_eq!(min_inertia_for_rocof(300.0, 0.0, 50.0), Err(RocofError::NonPositiveLimit(0.0)));
        let e = min_inertia_for_rocof(300.0, 1.25, 50.0).unwrap();
        assert_eq!(rocof_after_contingency(e, 300.0, 50.0).unwrap(), 1.25);
    }

    #[test]
    fn legacy_rule() {
        assert_eq!(legacy_headroom_requirement(340.0), 238.0);
        assert_eq!(legacy_headroom_requirement(0.0), 0.0);
        assert_eq!(legacy_headroom_requirement(1_000.0), 700.0);
    }

    #[test]
    fn noiseless_recovery() {
        let fit = fit_exponential(&synthetic(10.0, 2.0, 10.0, 0.5)).unwrap();
        assert!((fit.tau_s - 2.0).abs() <= 0.01, "{fit:?}");
        assert!((fit.r_max - 10.0).abs() <= 0.05, "{fit:?}");
        assert!(fit.rmse < 1e-6 * fit.r_max);
        assert!(!fit.saturated);
    }

    #[test]
    fn zero_trace_is_degenerate() {
        let t = ResponseTrace::new((0..6).map(|i| (f64::from(i), 0.0)).collect()).unwrap();
        assert!(matches!(fit_exponential(&t), Err(RocofError::DegenerateTrace(_))));
    }

    #[test]
    fn step_response_saturates_low() {
        let samples: Vec<(f64, f64)> = (0..=20).map(|i| (f64::from(i) * 0.5, 10.0)).collect();
        let trace = ResponseTrace::new(samples.clone()).unwrap();
        // The residual is monotone increasing in tau for a step input.
        let taus = [0.01, 0.05, 0.2, 1.0, 5.0, 20.0, 60.0];
        let sse: Vec<f64> = taus.iter().map(|&tau| profile(&samples, tau).1).collect();
        assert!(sse.windows(2).all(|w| w[0] <= w[1]), "{sse:?}");
        let fit = fit_exponential(&trace).unwrap();
        assert_eq!(fit.tau_s, TAU_SEARCH_MIN_S);
        assert!(fit.saturated);
    }

    #[test]
    fn trace_validation() {
        assert!(ResponseTrace::new(vec![(0.0, 1.0); 4]).is_err());
        assert!(ResponseTrace::new((1..7).map(|i| (f64::from(i), 1.0)).collect()).is_err());
        let mut back = (0..6).map(|i| (f64::from(i), 1.0)).collect::<Vec<_>>();
        back[3].0 = 0.5;
        assert!(ResponseTrace::new(back).is_err());
    }

    #[test]
    fn multiplier_points() {
        let fit = |tau| ExponentialFit {
            r_max: 1.0,
            tau_s: tau,
            rmse: 0.0,
            saturated: false,
        };
        assert_eq!(speed_multiplier(&fit(6.0), 6.0, 5.0), 1.0);
        assert_eq!(speed_multiplier(&fit(0.6), 6.0, 5.0), 5.0);
        assert_eq!(speed_multiplier(&fit(12.0), 6.0, 5.0), 0.5);
    }

    #[test]
    fn accreditation() {
        let mut f = Facility::new("G", Technology::Synchronous, 40.0);
        f.p_min = 0.0;
        let fit = ExponentialFit {
            r_max: 50.0,
            tau_s: 6.0,
            rmse: 0.0,
            saturated: false,
        };
        assert_eq!(accredited_quantity(&f, &fit, 1.0), 40.0);
        assert_eq!(accredited_quantity(&f, &fit, 0.0), 0.0);
    }

    #[test]
    fn fast_battery_earns_the_cap() {
        let cfg = ScoringConfig::default();
        let battery = Facility::new("BESS", Technology::InverterStorage, 100.0);
        let turbine = Facility::new("GT", Technology::Synchronous, 100.0);
        let b = score_response(&synthetic(100.0, 0.1, 2.0, 0.02), Some(&battery), &cfg).unwrap();
        let g = score_response(&synthetic(100.0, 6.0, 40.0, 0.5), Some(&turbine), &cfg).unwrap();
        assert!((b.fit.tau_s - 0.1).abs() < 1e-3);
        assert_eq!(b.multiplier, 5.0);
        assert!((b.accredited_mw.unwrap() - 500.0).abs() < 1e-3);
        assert!((g.multiplier - 1.0).abs() < 1e-6);
        assert!((g.accredited_mw.unwrap() - 100.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn inertia_round_trip(dp in 1.0f64..2_000.0, limit in 0.05f64..5.0) {
            let e = min_inertia_for_rocof(dp, limit, 50.0).unwrap();
            let back = rocof_after_contingency(e, dp, 50.0).unwrap();
            prop_assert!((back - limit).abs() <= 1e-9 * limit);
        }

        #[test]
        fn fit_is_scale_equivariant(tau in 0.3f64..15.0, k in 0.01f64..100.0) {
            let base = synthetic(10.0, tau, 6.0 * tau, tau / 10.0);
            let scaled = ResponseTrace::new(base.samples().iter().map(|&(t, y)| (t, k * y)).collect()).unwrap();
            let a = fit_exponential(&base).unwrap();
            let b = fit_exponential(&scaled).unwrap();
            prop_assert!((b.r_max - k * a.r_max).abs() <= 1e-3 * k * a.r_max);
            prop_assert!((b.tau_s - a.tau_s).abs() <= 1e-3 * a.tau_s);
        }

        #[test]
        fn multiplier_monotone_in_tau(t1 in 0.01f64..60.0, t2 in 0.01f64..60.0) {
            let fit = |tau| ExponentialFit { r_max: 1.0, tau_s: tau, rmse: 0.0, saturated: false };
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(speed_multiplier(&fit(lo), 6.0, 5.0) >= speed_multiplier(&fit(hi), 6.0, 5.0));
        }
    }
}
