//! Scenario files.
//!
//! A scenario is one TOML file naming plain CSV files by relative path:
//!
//! ```toml
//! name = "wem-small"
//! market_mode = "wem"
//! intervals = 8
//!
//! [files]
//! facilities = "facilities.csv"    # id,tech,p_max,p_min,inertia_h,mva_rating,virtual_inertia_mws,droop,pfr_tau,commitment_cost
//! offers = "offers.csv"            # facility,service,quantity,price,interval (blank interval = every interval)
//! demand = "demand.csv"            # interval,demand_mw
//! availability = "availability.csv" # interval,<facility id>...
//!
//! [[requirements]]
//! service = "raise_6s"
//! mode = "legacy_headroom"
//!
//! [contingency]
//! largest_online = true
//!
//! [limits]
//! f0 = 50.0
//! max_rocof = 1.0
//! min_nadir = 49.0
//! settling_band = [49.5, 50.5]
//! ```
//!
//! Requirement modes are `fixed` (with `mw`), `disabled`, `legacy_headroom`,
//! `min_inertia` (rocof_control only) and the operating-reserve products
//! `firm_availability_30`, `callable_spinning` and `headroom_5` (with
//! `error_set`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::frequency::FrequencyLimits;
use crate::model::{validate_and_build_registry, Facility, MarketConfig, MarketMode, Registry, ServiceKind, ServiceOffer, Technology};
use crate::nomogram::NomogramTable;
use crate::reserve::{ErrorSampleSet, ReserveProduct, ReserveProductConfig};
use crate::rocof::{ResponseTrace, ScoringConfig};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: field `{field}`: {detail}")]
    Parse {
        path: String,
        line: u64,
        field: String,
        detail: String,
    },
    #[error("{path}: `{field}`: {detail}")]
    Validation { path: String, field: String, detail: String },
}

impl LoadError {
    fn validation(path: &Path, field: impl Into<String>, detail: impl Into<String>) -> Self {
        LoadError::Validation {
            path: path.display().to_string(),
            field: field.into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequirementSpec {
    Fixed { service: ServiceKind, mw: f64 },
    Disabled { service: ServiceKind },
    /// 70% of the interval's contingency size.
    LegacyHeadroom { service: ServiceKind },
    /// Inertia that keeps the contingency within the ROCOF limit.
    MinInertia,
    /// Operating-reserve product sized from a named error sample set.
    Product {
        product: ReserveProduct,
        error_set: String,
        config: ReserveProductConfig,
    },
}

impl RequirementSpec {
    pub fn service(&self) -> ServiceKind {
        match self {
            RequirementSpec::Fixed { service, .. }
            | RequirementSpec::Disabled { service }
            | RequirementSpec::LegacyHeadroom { service } => *service,
            RequirementSpec::MinInertia => ServiceKind::RocofControl,
            RequirementSpec::Product { .. } => ServiceKind::OperatingReserve,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContingencySize {
    FixedMw(f64),
    /// Largest available output among facilities online in the interval.
    LargestOnline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContingencySpec {
    pub size: ContingencySize,
    pub load_damping_mw_per_hz: f64,
    pub horizon_s: f64,
    pub dt_s: f64,
    /// Detection delay of fast frequency response, seconds.
    pub ffr_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NomogramSpec {
    pub table: NomogramTable,
    pub inertia_floor_mws: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub market: MarketConfig,
    pub intervals: usize,
    pub demand_mw: Vec<f64>,
    pub registry: Registry,
    pub requirements: Vec<RequirementSpec>,
    pub contingency: ContingencySpec,
    pub limits: FrequencyLimits,
    pub nomogram: Option<NomogramSpec>,
    pub error_sets: BTreeMap<String, ErrorSampleSet>,
    pub scoring: ScoringConfig,
    /// Measured responses to score, keyed by facility id.
    pub response_traces: BTreeMap<String, ResponseTrace>,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to demand; 0 disables it.
    pub demand_noise_sd_mw: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    market_mode: MarketMode,
    intervals: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    demand_noise_sd_mw: f64,
    price_cap: Option<f64>,
    price_floor: Option<f64>,
    files: FilesSection,
    #[serde(default)]
    requirements: Vec<RequirementEntry>,
    contingency: ContingencyEntry,
    limits: LimitsEntry,
    nomogram: Option<NomogramEntry>,
    #[serde(default)]
    error_sets: BTreeMap<String, ErrorSetEntry>,
    rocof_scoring: Option<ScoringEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FilesSection {
    facilities: PathBuf,
    offers: PathBuf,
    demand: PathBuf,
    availability: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RequirementEntry {
    service: String,
    mode: String,
    mw: Option<f64>,
    error_set: Option<String>,
    price_cap: Option<f64>,
    steps: Option<usize>,
    confidence: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContingencyEntry {
    mw: Option<f64>,
    #[serde(default)]
    largest_online: bool,
    #[serde(default)]
    load_damping_mw_per_hz: f64,
    horizon_s: Option<f64>,
    dt_s: Option<f64>,
    ffr_delay_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsEntry {
    f0: f64,
    max_rocof: f64,
    min_nadir: f64,
    settling_band: (f64, f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NomogramEntry {
    table: PathBuf,
    #[serde(default)]
    inertia_floor_mws: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorSetEntry {
    file: PathBuf,
    horizon_min: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoringEntry {
    tau_reference_s: Option<f64>,
    m_max: Option<f64>,
    #[serde(default)]
    traces: Vec<TraceEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceEntry {
    facility: String,
    file: PathBuf,
}

#[derive(Deserialize)]
struct FacilityRow {
    id: String,
    tech: Technology,
    p_max: f64,
    p_min: f64,
    inertia_h: f64,
    mva_rating: f64,
    virtual_inertia_mws: f64,
    droop: Option<f64>,
    pfr_tau: f64,
    commitment_cost: f64,
}

#[derive(Deserialize)]
struct OfferRow {
    facility: String,
    service: String,
    quantity: f64,
    price: f64,
    interval: Option<usize>,
}

#[derive(Deserialize)]
struct DemandRow {
    interval: usize,
    demand_mw: f64,
}

#[derive(Deserialize)]
struct ErrorRow {
    error_mw: f64,
}

#[derive(Deserialize)]
struct TraceRow {
    t_s: f64,
    output_mw: f64,
}

const REQUIREMENT_MODES: &str =
    "fixed, disabled, legacy_headroom, min_inertia, firm_availability_30, callable_spinning, headroom_5";

fn read_text(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn line_of(text: &str, offset: usize) -> u64 {
    1 + text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() as u64
}

/// Reads every record of a headed CSV file, mapping failures to a line and
/// column name.
pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(u64, T)>, LoadError> {
    let text = read_text(path)?;
    parse_csv(path, &text)
}

pub(crate) fn parse_csv<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(u64, T)>, LoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_parse_error(path, e, &csv::StringRecord::new()))?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_parse_error(path, e, &headers))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record.deserialize(Some(&headers)).map_err(|e| {
            let mut err = csv_parse_error(path, e, &headers);
            if let LoadError::Parse { line: l @ 0, .. } = &mut err {
                *l = line;
            }
            err
        })?;
        out.push((line, row));
    }
    Ok(out)
}

fn csv_parse_error(path: &Path, e: csv::Error, headers: &csv::StringRecord) -> LoadError {
    let line = e.position().map_or(0, |p| p.line());
    let (field, detail) = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => {
            let field = err
                .field()
                .and_then(|i| headers.get(i as usize))
                .unwrap_or("record")
                .to_string();
            (field, err.kind().to_string())
        }
        _ => ("record".to_string(), e.to_string()),
    };
    LoadError::Parse {
        path: path.display().to_string(),
        line,
        field,
        detail,
    }
}

/// Error samples from a one-column `error_mw` file.
pub fn load_error_samples(path: &Path, horizon_min: u32) -> Result<ErrorSampleSet, LoadError> {
    let rows: Vec<(u64, ErrorRow)> = read_csv(path)?;
    ErrorSampleSet::new(rows.into_iter().map(|(_, r)| r.error_mw).collect(), horizon_min)
        .map_err(|e| LoadError::validation(path, "error_mw", e.to_string()))
}

/// A measured response from a `t_s,output_mw` file.
pub fn load_response_trace(path: &Path) -> Result<ResponseTrace, LoadError> {
    let rows: Vec<(u64, TraceRow)> = read_csv(path)?;
    ResponseTrace::new(rows.into_iter().map(|(_, r)| (r.t_s, r.output_mw)).collect())
        .map_err(|e| LoadError::validation(path, "t_s", e.to_string()))
}

pub fn load_nomogram(path: &Path) -> Result<NomogramTable, LoadError> {
    use crate::nomogram::NomogramError;
    NomogramTable::load(path).map_err(|e| match e {
        NomogramError::Io { path, source } => LoadError::Io { path, source },
        NomogramError::Parse { line, field, detail } => LoadError::Parse {
            path: path.display().to_string(),
            line,
            field,
            detail,
        },
        other => LoadError::validation(path, "row", other.to_string()),
    })
}

fn parse_service(path: &Path, field: &str, name: &str) -> Result<ServiceKind, LoadError> {
    name.parse::<ServiceKind>()
        .map_err(|e| LoadError::validation(path, field, e.to_string()))
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LoadError> {
    let text = read_text(path)?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| LoadError::Parse {
        path: path.display().to_string(),
        line: e.span().map_or(0, |s| line_of(&text, s.start)),
        field: "toml".into(),
        detail: e.message().to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);
    let n = file.intervals;
    if n == 0 {
        return Err(LoadError::validation(path, "intervals", "must be at least 1"));
    }

    let mut market = MarketConfig::for_mode(file.market_mode);
    if let Some(cap) = file.price_cap {
        market.price_cap = cap;
    }
    if let Some(floor) = file.price_floor {
        market.price_floor = floor;
    }
    if !(market.price_floor < market.price_cap) {
        return Err(LoadError::validation(path, "price_cap", "price floor must be below the cap"));
    }

    // Facilities.
    let fac_path = resolve(&file.files.facilities);
    let mut facilities: Vec<Facility> = read_csv::<FacilityRow>(&fac_path)?
        .into_iter()
        .map(|(_, r)| Facility {
            id: r.id,
            tech: r.tech,
            p_max: r.p_max,
            p_min: r.p_min,
            inertia_h: r.inertia_h,
            mva_rating: r.mva_rating,
            virtual_inertia_mws: r.virtual_inertia_mws,
            droop: r.droop,
            pfr_tau: r.pfr_tau,
            commitment_cost: r.commitment_cost,
            availability: Vec::new(),
        })
        .collect();

    // Availability traces, one column per facility.
    if let Some(avail) = &file.files.availability {
        let avail_path = resolve(avail);
        let text = read_text(&avail_path)?;
        let rows: Vec<(u64, BTreeMap<String, f64>)> = parse_csv(&avail_path, &text)?;
        if rows.len() != n {
            return Err(LoadError::validation(
                &avail_path,
                "availability",
                format!("trace has {} rows but the scenario has {n} intervals", rows.len()),
            ));
        }
        for (i, (line, row)) in rows.iter().enumerate() {
            if row.get("interval").copied() != Some(i as f64) {
                return Err(LoadError::Parse {
                    path: avail_path.display().to_string(),
                    line: *line,
                    field: "interval".into(),
                    detail: format!("expected interval {i}"),
                });
            }
        }
        let columns: BTreeSet<&String> = rows[0].1.keys().filter(|k| *k != "interval").collect();
        for col in &columns {
            let fac = facilities
                .iter_mut()
                .find(|f| &&f.id == col)
                .ok_or_else(|| LoadError::validation(&avail_path, col.as_str(), "column names no known facility"))?;
            fac.availability = rows.iter().map(|(_, r)| r[*col]).collect();
        }
    }

    let offers_path = resolve(&file.files.offers);
    let offers = read_csv::<OfferRow>(&offers_path)?
        .into_iter()
        .map(|(line, r)| {
            let service = r.service.parse::<ServiceKind>().map_err(|e| LoadError::Parse {
                path: offers_path.display().to_string(),
                line,
                field: "service".into(),
                detail: e.to_string(),
            })?;
            if let Some(i) = r.interval {
                if i >= n {
                    return Err(LoadError::Parse {
                        path: offers_path.display().to_string(),
                        line,
                        field: "interval".into(),
                        detail: format!("interval {i} is beyond the {n}-interval horizon"),
                    });
                }
            }
            Ok(ServiceOffer {
                facility_id: r.facility,
                service,
                quantity: r.quantity,
                price: r.price,
                interval: r.interval,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let registry = validate_and_build_registry(facilities, offers, &market)
        .map_err(|e| LoadError::validation(&offers_path, "registry", e.to_string()))?;

    let demand_path = resolve(&file.files.demand);
    let demand_rows: Vec<(u64, DemandRow)> = read_csv(&demand_path)?;
    if demand_rows.len() != n {
        return Err(LoadError::validation(
            &demand_path,
            "demand",
            format!("trace has {} rows but the scenario has {n} intervals", demand_rows.len()),
        ));
    }
    let mut demand_mw = Vec::with_capacity(n);
    for (i, (line, row)) in demand_rows.into_iter().enumerate() {
        if row.interval != i {
            return Err(LoadError::Parse {
                path: demand_path.display().to_string(),
                line,
                field: "interval".into(),
                detail: format!("expected interval {i}, found {}", row.interval),
            });
        }
        if !(row.demand_mw.is_finite() && row.demand_mw >= 0.0) {
            return Err(LoadError::Parse {
                path: demand_path.display().to_string(),
                line,
                field: "demand_mw".into(),
                detail: format!("{} is not a non-negative MW value", row.demand_mw),
            });
        }
        demand_mw.push(row.demand_mw);
    }

    let mut error_sets = BTreeMap::new();
    for (name, entry) in &file.error_sets {
        error_sets.insert(name.clone(), load_error_samples(&resolve(&entry.file), entry.horizon_min)?);
    }

    let mut requirements = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, entry) in file.requirements.iter().enumerate() {
        let field = format!("requirements[{k}].service");
        let service = parse_service(path, &field, &entry.service)?;
        if service == ServiceKind::Energy {
            return Err(LoadError::validation(path, field, "energy is cleared against demand"));
        }
        if !seen.insert(service) {
            return Err(LoadError::validation(path, field, format!("`{service}` configured twice")));
        }
        let mode_field = format!("requirements[{k}].mode");
        let spec = match entry.mode.as_str() {
            "fixed" => {
                let mw = entry
                    .mw
                    .filter(|mw| mw.is_finite() && *mw >= 0.0)
                    .ok_or_else(|| LoadError::validation(path, format!("requirements[{k}].mw"), "fixed mode needs mw >= 0"))?;
                RequirementSpec::Fixed { service, mw }
            }
            "disabled" => RequirementSpec::Disabled { service },
            "legacy_headroom" => RequirementSpec::LegacyHeadroom { service },
            "min_inertia" => {
                if service != ServiceKind::RocofControl {
                    return Err(LoadError::validation(path, mode_field, "min_inertia applies to rocof_control only"));
                }
                RequirementSpec::MinInertia
            }
            other => {
                let product = match other {
                    "firm_availability_30" => ReserveProduct::FirmAvailability30,
                    "callable_spinning" => ReserveProduct::CallableSpinning,
                    "headroom_5" => ReserveProduct::Headroom5,
                    _ => {
                        return Err(LoadError::validation(
                            path,
                            mode_field,
                            format!("unknown mode `{other}`; valid modes: {REQUIREMENT_MODES}"),
                        ))
                    }
                };
                if service != ServiceKind::OperatingReserve {
                    return Err(LoadError::validation(path, mode_field, format!("{product} applies to operating_reserve only")));
                }
                let set_field = format!("requirements[{k}].error_set");
                let set_name = entry
                    .error_set
                    .clone()
                    .ok_or_else(|| LoadError::validation(path, &set_field, "reserve products need an error_set"))?;
                let set = error_sets
                    .get(&set_name)
                    .ok_or_else(|| LoadError::validation(path, &set_field, format!("no error set named `{set_name}`")))?;
                if set.horizon_min() != product.horizon_min() {
                    return Err(LoadError::validation(
                        path,
                        set_field,
                        format!("{product} needs {}-minute errors, `{set_name}` has {}", product.horizon_min(), set.horizon_min()),
                    ));
                }
                let defaults = ReserveProductConfig::default();
                RequirementSpec::Product {
                    product,
                    error_set: set_name,
                    config: ReserveProductConfig {
                        price_cap: entry.price_cap.unwrap_or(defaults.price_cap),
                        n_steps: entry.steps.unwrap_or(defaults.n_steps),
                        confidence: entry.confidence.unwrap_or(defaults.confidence),
                    },
                }
            }
        };
        requirements.push(spec);
    }

    let size = match (file.contingency.mw, file.contingency.largest_online) {
        (Some(mw), false) if mw.is_finite() && mw >= 0.0 => ContingencySize::FixedMw(mw),
        (None, true) => ContingencySize::LargestOnline,
        _ => {
            return Err(LoadError::validation(
                path,
                "contingency",
                "give exactly one of `mw` (>= 0) or `largest_online = true`",
            ))
        }
    };
    let contingency = ContingencySpec {
        size,
        load_damping_mw_per_hz: file.contingency.load_damping_mw_per_hz,
        horizon_s: file.contingency.horizon_s.unwrap_or(60.0),
        dt_s: file.contingency.dt_s.unwrap_or(0.01),
        ffr_delay_s: file.contingency.ffr_delay_s.unwrap_or(0.25),
    };
    if !(contingency.load_damping_mw_per_hz >= 0.0 && contingency.ffr_delay_s >= 0.0) {
        return Err(LoadError::validation(path, "contingency", "damping and FFR delay must be >= 0"));
    }

    let l = &file.limits;
    let limits = FrequencyLimits::new(l.f0, l.max_rocof, l.min_nadir, l.settling_band)
        .map_err(|e| LoadError::validation(path, "limits", e.to_string()))?;

    let nomogram = match &file.nomogram {
        Some(entry) => {
            let table_path = resolve(&entry.table);
            let table = load_nomogram(&table_path)?;
            table
                .resolve(&registry)
                .map_err(|e| LoadError::validation(&table_path, "units", e.to_string()))?;
            Some(NomogramSpec {
                table,
                inertia_floor_mws: entry.inertia_floor_mws,
            })
        }
        None => None,
    };

    let mut scoring = ScoringConfig::default();
    let mut response_traces = BTreeMap::new();
    if let Some(s) = &file.rocof_scoring {
        scoring.tau_reference_s = s.tau_reference_s.unwrap_or(scoring.tau_reference_s);
        scoring.m_max = s.m_max.unwrap_or(scoring.m_max);
        if !(scoring.tau_reference_s > 0.0 && scoring.m_max >= 1.0) {
            return Err(LoadError::validation(path, "rocof_scoring", "need tau_reference_s > 0 and m_max >= 1"));
        }
        for t in &s.traces {
            if !registry.contains(&t.facility) {
                return Err(LoadError::validation(
                    path,
                    "rocof_scoring.traces.facility",
                    format!("unknown facility `{}`", t.facility),
                ));
            }
            response_traces.insert(t.facility.clone(), load_response_trace(&resolve(&t.file))?);
        }
    }

    if !(file.demand_noise_sd_mw.is_finite() && file.demand_noise_sd_mw >= 0.0) {
        return Err(LoadError::validation(path, "demand_noise_sd_mw", "must be >= 0"));
    }

    Ok(Scenario {
        name: file.name.unwrap_or_else(|| {
            path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned())
        }),
        market,
        intervals: n,
        demand_mw,
        registry,
        requirements,
        contingency,
        limits,
        nomogram,
        error_sets,
        scoring,
        response_traces,
        seed: file.seed,
        demand_noise_sd_mw: file.demand_noise_sd_mw,
    })
}
