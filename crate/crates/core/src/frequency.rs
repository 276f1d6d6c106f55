//! Post-contingency frequency on a single aggregated bus.
//!
//! The fleet is one rotating mass with kinetic energy `E` (MW·s):
//!
//! ```text
//! (2 E / f0) · dΔf/dt = -ΔP + R(t) - D·Δf
//! ```
//!
//! `R(t)` is the summed output of the responders, each bounded by its cleared
//! capacity, and the total is bounded by the lost generation `ΔP`: reserves
//! replace what was lost and no more. `D` is load damping in MW/Hz. The
//! equation is integrated with fixed-step RK4 so traces are bit-reproducible.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrequencyError {
    #[error("inertia must be > 0 MW·s when a {contingency_mw} MW contingency occurs")]
    ZeroInertiaWithContingency { contingency_mw: f64 },
    #[error("inertia must be > 0 MW·s, got {0}")]
    NonPositiveInertia(f64),
    #[error("invalid integration grid: dt = {dt_s} s (need 0 < dt <= 0.01), horizon = {horizon_s} s (need >= 30)")]
    InvalidStep { dt_s: f64, horizon_s: f64 },
    #[error("invalid responder {index}: {detail}")]
    InvalidResponder { index: usize, detail: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Magnitude of the initial df/dt after losing `contingency_mw`, Hz/s.
pub fn rocof_after_contingency(inertia_mws: f64, contingency_mw: f64, f0: f64) -> Result<f64, FrequencyError> {
    if contingency_mw == 0.0 {
        return Ok(0.0);
    }
    if !(inertia_mws > 0.0) {
        return Err(FrequencyError::ZeroInertiaWithContingency { contingency_mw });
    }
    Ok(contingency_mw.abs() * f0 / (2.0 * inertia_mws))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseShape {
    /// Governor-style response `R (1 - exp(-t / tau))`.
    Exponential { tau_s: f64 },
    /// Inverter response: nothing until detection completes, then full output.
    DelayedStep { delay_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Responder {
    pub capacity_mw: f64,
    pub shape: ResponseShape,
}

impl Responder {
    pub fn exponential(capacity_mw: f64, tau_s: f64) -> Self {
        Responder {
            capacity_mw,
            shape: ResponseShape::Exponential { tau_s },
        }
    }

    pub fn delayed_step(capacity_mw: f64, delay_s: f64) -> Self {
        Responder {
            capacity_mw,
            shape: ResponseShape::DelayedStep { delay_s },
        }
    }

    pub fn output(&self, t: f64) -> f64 {
        match self.shape {
            ResponseShape::Exponential { tau_s } => self.capacity_mw * (1.0 - (-t / tau_s).exp()),
            ResponseShape::DelayedStep { delay_s } => {
                if t >= delay_s {
                    self.capacity_mw
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyStudy {
    pub inertia_mws: f64,
    pub contingency_mw: f64,
    pub responders: Vec<Responder>,
    /// MW of load relief per Hz of deviation.
    pub load_damping_mw_per_hz: f64,
    pub f0: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
}

impl ContingencyStudy {
    pub fn new(inertia_mws: f64, contingency_mw: f64, f0: f64) -> Self {
        ContingencyStudy {
            inertia_mws,
            contingency_mw,
            responders: Vec::new(),
            load_damping_mw_per_hz: 0.0,
            f0,
            horizon_s: 60.0,
            dt_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrace {
    pub time_s: Vec<f64>,
    pub frequency_hz: Vec<f64>,
    /// |df/dt| over the first step, Hz/s.
    pub rocof_initial: f64,
    pub nadir_hz: f64,
    pub nadir_time_s: f64,
    /// Mean frequency over the final 10% of the horizon.
    pub settling_frequency_hz: f64,
}

pub fn simulate_contingency(study: &ContingencyStudy) -> Result<FrequencyTrace, FrequencyError> {
    let ContingencyStudy {
        inertia_mws,
        contingency_mw,
        ref responders,
        load_damping_mw_per_hz: damping,
        f0,
        horizon_s,
        dt_s: dt,
    } = *study;
    if !(dt > 0.0 && dt <= 0.01 + 1e-12 && horizon_s >= 30.0 && horizon_s.is_finite()) {
        return Err(FrequencyError::InvalidStep { dt_s: dt, horizon_s });
    }
    if !(inertia_mws > 0.0 && inertia_mws.is_finite()) {
        return Err(FrequencyError::NonPositiveInertia(inertia_mws));
    }
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(FrequencyError::InvalidInput(format!("nominal frequency {f0}")));
    }
    if !(contingency_mw >= 0.0 && contingency_mw.is_finite()) {
        return Err(FrequencyError::InvalidInput(format!("contingency {contingency_mw} MW")));
    }
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(FrequencyError::InvalidInput(format!("load damping {damping} MW/Hz")));
    }
    for (index, r) in responders.iter().enumerate() {
        let detail = if !(r.capacity_mw >= 0.0 && r.capacity_mw.is_finite()) {
            Some(format!("capacity {}", r.capacity_mw))
        } else {
            match r.shape {
                ResponseShape::Exponential { tau_s } if !(tau_s > 0.0) => Some(format!("tau {tau_s}")),
                ResponseShape::DelayedStep { delay_s } if !(delay_s >= 0.0) => Some(format!("delay {delay_s}")),
                _ => None,
            }
        };
        if let Some(detail) = detail {
            return Err(FrequencyError::InvalidResponder { index, detail });
        }
    }

    let m = 2.0 * inertia_mws / f0;
    let response = |t: f64| -> f64 { responders.iter().map(|r| r.output(t)).sum::<f64>().min(contingency_mw) };
    let deriv = |t: f64, df: f64| -> f64 { (-contingency_mw + response(t) - damping * df) / m };

    let steps = (horizon_s / dt).round() as usize;
    let mut time_s = Vec::with_capacity(steps + 1);
    let mut frequency_hz = Vec::with_capacity(steps + 1);
    let mut df = 0.0;
    time_s.push(0.0);
    frequency_hz.push(f0);
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = deriv(t, df);
        let k2 = deriv(t + dt / 2.0, df + dt / 2.0 * k1);
        let k3 = deriv(t + dt / 2.0, df + dt / 2.0 * k2);
        let k4 = deriv(t + dt, df + dt * k3);
        df += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        time_s.push((k + 1) as f64 * dt);
        frequency_hz.push(f0 + df);
    }

    let rocof_initial = ((frequency_hz[1] - frequency_hz[0]) / dt).abs();
    let (nadir_idx, nadir_hz) = frequency_hz
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, f)| if f < best.1 { (i, f) } else { best });
    let tail_start = 0.9 * time_s[steps];
    let tail: Vec<f64> = time_s
        .iter()
        .zip(&frequency_hz)
        .filter(|(t, _)| **t >= tail_start - 1e-9)
        .map(|(_, f)| *f)
        .collect();
    let settling_frequency_hz = tail.iter().sum::<f64>() / tail.len() as f64;

    Ok(FrequencyTrace {
        nadir_time_s: time_s[nadir_idx],
        time_s,
        frequency_hz,
        rocof_initial,
        nadir_hz,
        settling_frequency_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyLimits {
    pub f0: f64,
    /// Hz/s
    pub max_rocof: f64,
    pub min_nadir: f64,
    pub settling_band: (f64, f64),
}

impl FrequencyLimits {
    pub fn new(f0: f64, max_rocof: f64, min_nadir: f64, settling_band: (f64, f64)) -> Result<Self, FrequencyError> {
        let limits = FrequencyLimits {
            f0,
            max_rocof,
            min_nadir,
            settling_band,
        };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<(), FrequencyError> {
        let bad = |d: String| Err(FrequencyError::InvalidInput(d));
        if !(self.max_rocof > 0.0) {
            return bad(format!("max_rocof {} must be > 0", self.max_rocof));
        }
        if !(self.min_nadir < self.f0) {
            return bad(format!("min_nadir {} must be below f0 {}", self.min_nadir, self.f0));
        }
        let (lo, hi) = self.settling_band;
        if !(lo >= self.min_nadir && lo <= hi) {
            return bad(format!("settling band [{lo}, {hi}] must be ordered and sit at or above min_nadir"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityVerdict {
    pub rocof_ok: bool,
    pub nadir_ok: bool,
    pub settling_ok: bool,
    pub overall: bool,
}

pub fn check_limits(trace: &FrequencyTrace, limits: &FrequencyLimits) -> SecurityVerdict {
    let rocof_ok = trace.rocof_initial <= limits.max_rocof;
    let nadir_ok = trace.nadir_hz >= limits.min_nadir;
    let (lo, hi) = limits.settling_band;
    let settling_ok = trace.settling_frequency_hz >= lo && trace.settling_frequency_hz <= hi;
    SecurityVerdict {
        rocof_ok,
        nadir_ok,
        settling_ok,
        overall: rocof_ok && nadir_ok && settling_ok,
    }
}
