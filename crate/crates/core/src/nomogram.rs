//! Transfer-limit tables and security-driven unit commitment.
//!
//! Each row of a table names a set of synchronous units and the largest
//! non-synchronous output that is secure while they run. Selection picks the
//! cheapest secure row; when no row covers the requested level the operator
//! falls back to a directed row and VRE is curtailed to its limit.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::model::{total_system_inertia, Registry};

#[derive(Debug, Error)]
pub enum NomogramError {
    #[error("nomogram table has no rows")]
    EmptyTable,
    #[error("duplicate row label `{0}`")]
    DuplicateLabel(String),
    #[error("row `{label}`: non-synchronous limit must be > 0, got {limit}")]
    NonPositiveLimit { label: String, limit: f64 },
    #[error("row `{0}` lists no units")]
    EmptyUnits(String),
    #[error("row `{label}` references unknown facility `{unit}`")]
    UnknownUnit { label: String, unit: String },
    #[error("line {line}, field `{field}`: {detail}")]
    Parse { line: u64, field: String, detail: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub label: String,
    pub required_units: BTreeSet<String>,
    pub nonsync_limit_mw: f64,
}

impl Combination {
    pub fn new<I, S>(label: impl Into<String>, units: I, nonsync_limit_mw: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Combination {
            label: label.into(),
            required_units: units.into_iter().map(Into::into).collect(),
            nonsync_limit_mw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NomogramTable {
    combinations: Vec<Combination>,
}

impl NomogramTable {
    pub fn new(combinations: Vec<Combination>) -> Result<Self, NomogramError> {
        if combinations.is_empty() {
            return Err(NomogramError::EmptyTable);
        }
        let mut labels = BTreeSet::new();
        for c in &combinations {
            if !labels.insert(c.label.as_str()) {
                return Err(NomogramError::DuplicateLabel(c.label.clone()));
            }
            if !(c.nonsync_limit_mw > 0.0 && c.nonsync_limit_mw.is_finite()) {
                return Err(NomogramError::NonPositiveLimit {
                    label: c.label.clone(),
                    limit: c.nonsync_limit_mw,
                });
            }
            if c.required_units.is_empty() {
                return Err(NomogramError::EmptyUnits(c.label.clone()));
            }
        }
        Ok(NomogramTable { combinations })
    }

    pub fn combinations(&self) -> &[Combination] {
        &self.combinations
    }

    pub fn get(&self, label: &str) -> Option<&Combination> {
        self.combinations.iter().find(|c| c.label == label)
    }

    pub fn max_limit_mw(&self) -> f64 {
        self.combinations.iter().map(|c| c.nonsync_limit_mw).fold(0.0, f64::max)
    }

    /// Every unit mentioned by any row.
    pub fn units(&self) -> BTreeSet<String> {
        self.combinations.iter().flat_map(|c| c.required_units.iter().cloned()).collect()
    }

    /// Checks that every unit exists in the registry.
    pub fn resolve(&self, registry: &Registry) -> Result<(), NomogramError> {
        for c in &self.combinations {
            if let Some(unit) = c.required_units.iter().find(|u| !registry.contains(u)) {
                return Err(NomogramError::UnknownUnit {
                    label: c.label.clone(),
                    unit: unit.clone(),
                });
            }
        }
        Ok(())
    }

    /// Reads `label,nonsync_limit_mw,units` with units separated by `;`.
    pub fn from_csv_reader<R: io::Read>(reader: R) -> Result<Self, NomogramError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
        let expected = ["label", "nonsync_limit_mw", "units"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(NomogramError::Parse {
                line: 1,
                field: "header".into(),
                detail: format!("expected `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(e, 0))?;
            let line = record.position().map_or(0, |p| p.line());
            let limit: f64 = record[1].parse().map_err(|_| NomogramError::Parse {
                line,
                field: "nonsync_limit_mw".into(),
                detail: format!("`{}` is not a number", &record[1]),
            })?;
            let units = record[2].split(';').map(str::trim).filter(|u| !u.is_empty());
            rows.push(Combination::new(&record[0], units, limit));
        }
        NomogramTable::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self, NomogramError> {
        let file = fs::File::open(path).map_err(|source| NomogramError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv_reader(file)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("label,nonsync_limit_mw,units\n");
        for c in &self.combinations {
            let units: Vec<&str> = c.required_units.iter().map(String::as_str).collect();
            // `{}` on f64 prints the shortest string that parses back exactly.
            out.push_str(&format!("{},{},{}\n", c.label, c.nonsync_limit_mw, units.join(";")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), NomogramError> {
        fs::write(path, self.to_csv_string()).map_err(|source| NomogramError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn csv_error(e: csv::Error, fallback_line: u64) -> NomogramError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    NomogramError::Parse {
        line,
        field: "record".into(),
        detail: e.to_string(),
    }
}

/// Labels of rows whose limit covers `nonsync_mw`, in table order.
pub fn feasible_combinations(table: &NomogramTable, nonsync_mw: f64) -> Vec<String> {
    table
        .combinations
        .iter()
        .filter(|c| c.nonsync_limit_mw >= nonsync_mw)
        .map(|c| c.label.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitmentDecision {
    pub chosen_label: Option<String>,
    pub committed: BTreeSet<String>,
    pub commitment_cost: f64,
    /// Operator direction was needed: no row covered the requested level
    /// with enough inertia.
    pub directed: bool,
    /// Cap on instantaneous non-synchronous output implied by the choice.
    pub nonsync_limit_mw: Option<f64>,
}

struct Candidate<'a> {
    row: &'a Combination,
    cost: f64,
    inertia: f64,
}

/// Least-cost secure commitment for a non-synchronous level.
///
/// Rows must cover `nonsync_mw` and carry at least `inertia_floor_mws`.
/// Without such a row the decision is directed: the row with the highest
/// limit among those meeting the inertia floor, or if none does, the row with
/// the most inertia.
pub fn select_commitment(
    table: &NomogramTable,
    registry: &Registry,
    nonsync_mw: f64,
    inertia_floor_mws: f64,
) -> Result<CommitmentDecision, NomogramError> {
    table.resolve(registry)?;
    let candidates: Vec<Candidate> = table
        .combinations
        .iter()
        .map(|row| {
            let cost = row
                .required_units
                .iter()
                .filter_map(|u| registry.facility(u))
                .map(|f| f.commitment_cost)
                .sum();
            let inertia = total_system_inertia(registry, &row.required_units).expect("table resolved");
            Candidate { row, cost, inertia }
        })
        .collect();

    let market = candidates
        .iter()
        .filter(|c| c.row.nonsync_limit_mw >= nonsync_mw && c.inertia >= inertia_floor_mws)
        .min_by(|a, b| {
            a.cost
                .total_cmp(&b.cost)
                .then(a.row.required_units.len().cmp(&b.row.required_units.len()))
                .then(a.row.label.cmp(&b.row.label))
        });
    if let Some(c) = market {
        return Ok(decision(c, false));
    }

    let secure: Vec<&Candidate> = candidates.iter().filter(|c| c.inertia >= inertia_floor_mws).collect();
    let directed = if secure.is_empty() {
        candidates.iter().min_by(|a, b| {
            b.inertia
                .total_cmp(&a.inertia)
                .then(b.row.nonsync_limit_mw.total_cmp(&a.row.nonsync_limit_mw))
                .then(a.cost.total_cmp(&b.cost))
                .then(a.row.label.cmp(&b.row.label))
        })
    } else {
        secure.into_iter().min_by(|a, b| {
            b.row
                .nonsync_limit_mw
                .total_cmp(&a.row.nonsync_limit_mw)
                .then(a.cost.total_cmp(&b.cost))
                .then(a.row.required_units.len().cmp(&b.row.required_units.len()))
                .then(a.row.label.cmp(&b.row.label))
        })
    };
    let c = directed.ok_or(NomogramError::EmptyTable)?;
    Ok(decision(c, true))
}

fn decision(c: &Candidate, directed: bool) -> CommitmentDecision {
    CommitmentDecision {
        chosen_label: Some(c.row.label.clone()),
        committed: c.row.required_units.clone(),
        commitment_cost: c.cost,
        directed,
        nonsync_limit_mw: Some(c.row.nonsync_limit_mw),
    }
}

pub fn intervention_count(decisions: &[CommitmentDecision]) -> usize {
    decisions.iter().filter(|d| d.directed).count()
}
