//! Plain-text result tables.
//!
//! Every file is comma-separated with a one-line header. Numbers carry six
//! significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{MarketMode, ServiceKind};
use crate::rocof::ResponseScore;
use crate::run::RunReport;

#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct IoError {
    pub path: String,
    pub source: io::Error,
}

/// Rounds to six significant digits and prints without an exponent.
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf, IoError> {
    fs::write(&path, body).map_err(|source| IoError {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn mkdir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|source| IoError {
        path: path.display().to_string(),
        source,
    })
}

pub fn summary_table(report: &RunReport) -> String {
    let s = &report.summary;
    let mut out = String::from(
        "scenario,market_mode,interval_minutes,intervals,vre_available_mwh,vre_curtailed_mwh,curtailed_fraction,\
         intervention_count,insecure_intervals,load_shed_mwh,total_cost\n",
    );
    let mode = match report.market_mode {
        MarketMode::Nem => "nem",
        MarketMode::Wem => "wem",
    };
    let _ = writeln!(
        out,
        "{},{mode},{},{},{},{},{},{},{},{},{}",
        report.name,
        report.interval_minutes,
        s.intervals,
        fmt6(s.vre_available_mwh),
        fmt6(s.vre_curtailed_mwh),
        fmt6(s.curtailed_fraction),
        s.intervention_count,
        s.insecure_intervals,
        fmt6(s.load_shed_mwh),
        fmt6(s.total_cost),
    );
    out
}

/// One row per interval, facility and cleared service.
pub fn results_table(report: &RunReport) -> String {
    let mut out = String::from("interval,facility,tech,service,quantity,available_mw,price\n");
    for r in &report.records {
        for (id, services) in &r.dispatch.cleared {
            let tech = report.technologies.get(id).map_or("unknown", |t| t.name());
            let avail = r.available_mw.get(id).copied().unwrap_or(0.0);
            for (service, q) in services {
                let _ = writeln!(
                    out,
                    "{},{id},{tech},{service},{},{},{}",
                    r.interval,
                    fmt6(*q),
                    fmt6(avail),
                    fmt6(r.dispatch.price(*service)),
                );
            }
        }
    }
    out
}

pub fn intervals_table(report: &RunReport) -> String {
    let mut out = String::from(
        "interval,demand_mw,nonsync_available_mw,nonsync_limit_mw,chosen_label,directed,commitment_cost,\
         committed,contingency_mw,system_inertia_mws,shed_mw,vre_available_mw,vre_curtailed_mw,rocof_hz_per_s,\
         nadir_hz,nadir_time_s,settling_hz,rocof_ok,nadir_ok,settling_ok,secure,cost\n",
    );
    for r in &report.records {
        let committed: Vec<&str> = r.decision.committed.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.interval,
            fmt6(r.demand_mw),
            fmt6(r.nonsync_available_mw),
            r.decision.nonsync_limit_mw.map_or(String::new(), fmt6),
            r.decision.chosen_label.as_deref().unwrap_or(""),
            yes_no(r.decision.directed),
            fmt6(r.decision.commitment_cost),
            committed.join(";"),
            fmt6(r.contingency_mw),
            fmt6(r.dispatch.system_inertia_mws),
            fmt6(r.dispatch.shed_mw),
            fmt6(r.curtailment.available_mw),
            fmt6(r.curtailment.curtailed_mw),
            fmt6(r.trace.rocof_initial),
            fmt6(r.trace.nadir_hz),
            fmt6(r.trace.nadir_time_s),
            fmt6(r.trace.settling_frequency_hz),
            yes_no(r.verdict.rocof_ok),
            yes_no(r.verdict.nadir_ok),
            yes_no(r.verdict.settling_ok),
            yes_no(r.verdict.overall),
            fmt6(r.cost),
        );
    }
    out
}

/// Price duration columns: rank, then one column per service.
pub fn price_duration_table(report: &RunReport) -> String {
    let services: Vec<ServiceKind> = report.procured_services();
    let columns: Vec<Vec<f64>> = services.iter().map(|s| report.price_duration(*s)).collect();
    let mut out = String::from("rank");
    for s in &services {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for k in 0..report.records.len() {
        let _ = write!(out, "{}", k + 1);
        for col in &columns {
            let _ = write!(out, ",{}", fmt6(col[k]));
        }
        out.push('\n');
    }
    out
}

fn scores_table(scores: &BTreeMap<String, ResponseScore>) -> String {
    let mut out = String::from("facility,r_max_mw,tau_s,rmse_mw,saturated,multiplier,accredited_mw\n");
    for (id, s) in scores {
        let _ = writeln!(
            out,
            "{id},{},{},{},{},{},{}",
            fmt6(s.fit.r_max),
            fmt6(s.fit.tau_s),
            fmt6(s.fit.rmse),
            yes_no(s.fit.saturated),
            fmt6(s.multiplier),
            s.accredited_mw.map_or(String::new(), fmt6),
        );
    }
    out
}

/// Trace sampled every `stride` steps.
fn trace_table(time: &[f64], freq: &[f64], stride: usize) -> String {
    let mut out = String::from("time_s,frequency_hz\n");
    let last = time.len().saturating_sub(1);
    for (k, (t, f)) in time.iter().zip(freq).enumerate() {
        if k % stride == 0 || k == last {
            let _ = writeln!(out, "{},{}", fmt6(*t), fmt6(*f));
        }
    }
    out
}

/// Writes the report into `out_dir` and returns the paths in write order.
///
/// A report with no intervals produces the summary only. Frequency traces are
/// written at 0.1 s resolution.
pub fn emit_outputs(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    mkdir(out_dir)?;
    let mut written = vec![write(out_dir.join("summary.csv"), &summary_table(report))?];
    if report.records.is_empty() {
        return Ok(written);
    }
    written.push(write(out_dir.join("results.csv"), &results_table(report))?);
    written.push(write(out_dir.join("intervals.csv"), &intervals_table(report))?);
    written.push(write(out_dir.join("price_duration.csv"), &price_duration_table(report))?);

    let traces = out_dir.join("traces");
    mkdir(&traces)?;
    for r in &report.records {
        let t = &r.trace.time_s;
        let dt = if t.len() > 1 { t[1] - t[0] } else { 0.1 };
        let stride = ((0.1 / dt).round() as usize).max(1);
        let body = trace_table(t, &r.trace.frequency_hz, stride);
        written.push(write(traces.join(format!("trace_{:04}.csv", r.interval)), &body)?);
    }

    if !report.curves.is_empty() {
        let curves = out_dir.join("curves");
        mkdir(&curves)?;
        for (name, curve) in &report.curves {
            let mut body = String::from("reserve_mw,price\n");
            for (r, p) in curve.breakpoints() {
                let _ = writeln!(body, "{},{}", fmt6(*r), fmt6(*p));
            }
            written.push(write(curves.join(format!("ordc_{name}.csv")), &body)?);
        }
    }

    if !report.rocof_scores.is_empty() {
        written.push(write(out_dir.join("rocof_scores.csv"), &scores_table(&report.rocof_scores))?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(-0.0), "0");
        assert_eq!(fmt6(49.896527777), "49.8965");
        assert_eq!(fmt6(1_234_567.0), "1234570");
        assert_eq!(fmt6(0.15), "0.15");
        assert_eq!(fmt6(-1000.0), "-1000");
        assert_eq!(fmt6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt6(2.5e-7), "0.00000025");
    }

    #[test]
    fn empty_report_writes_summary_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport::empty("none", MarketMode::Wem);
        let files = emit_outputs(&report, dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("summary.csv")]);
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
