//! Multi-interval orchestration.
//!
//! Commitment decisions are made first, one interval at a time. Every interval
//! is then cleared and its contingency simulated independently, in parallel,
//! and the records are reassembled in interval order.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::clearing::{
    clear_interval, compute_curtailment, ClearingError, ClearingRequest, Curtailment, DispatchResult, RequirementMode,
    ServiceRequirement,
};
use crate::frequency::{
    check_limits, simulate_contingency, ContingencyStudy, FrequencyError, FrequencyTrace, Responder, SecurityVerdict,
};
use crate::model::{MarketMode, Registry, ServiceKind, Technology};
use crate::nomogram::{intervention_count, select_commitment, CommitmentDecision, NomogramError};
use crate::reserve::{reserve_product, ReserveDemandCurve, ReserveError};
use crate::rocof::{legacy_headroom_requirement, min_inertia_for_rocof, score_response, ResponseScore, RocofError};
use crate::scenario::{ContingencySize, RequirementSpec, Scenario};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("interval {interval}: commitment: {source}")]
    Commitment { interval: usize, source: NomogramError },
    #[error("interval {interval}: requirement: {source}")]
    Requirement { interval: usize, source: RocofError },
    #[error("interval {interval}: clearing: {source}")]
    Clearing { interval: usize, source: ClearingError },
    #[error("interval {interval}: frequency: {source}")]
    Frequency { interval: usize, source: FrequencyError },
    #[error("reserve product `{error_set}`: {source}")]
    Reserve { error_set: String, source: ReserveError },
    #[error("response score for `{facility}`: {source}")]
    Scoring { facility: String, source: RocofError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub interval: usize,
    pub demand_mw: f64,
    /// Total VRE availability, the level the nomogram is asked to support.
    pub nonsync_available_mw: f64,
    pub contingency_mw: f64,
    /// Availability of every facility this interval, MW.
    pub available_mw: BTreeMap<String, f64>,
    pub decision: CommitmentDecision,
    pub dispatch: DispatchResult,
    pub curtailment: Curtailment,
    pub trace: FrequencyTrace,
    pub verdict: SecurityVerdict,
    /// As-bid dispatch cost over the interval plus commitment cost, $.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub intervals: usize,
    pub vre_available_mwh: f64,
    pub vre_curtailed_mwh: f64,
    pub curtailed_fraction: f64,
    pub intervention_count: usize,
    pub insecure_intervals: usize,
    pub load_shed_mwh: f64,
    pub total_cost: f64,
}

impl Summary {
    /// Aggregates recomputed from per-interval records.
    pub fn from_records(records: &[IntervalRecord], interval_hours: f64) -> Self {
        let available: f64 = records.iter().map(|r| r.curtailment.available_mw).sum();
        let curtailed: f64 = records.iter().map(|r| r.curtailment.curtailed_mw).sum();
        let decisions: Vec<CommitmentDecision> = records.iter().map(|r| r.decision.clone()).collect();
        Summary {
            intervals: records.len(),
            vre_available_mwh: available * interval_hours,
            vre_curtailed_mwh: curtailed * interval_hours,
            curtailed_fraction: if available > 0.0 { curtailed / available } else { 0.0 },
            intervention_count: intervention_count(&decisions),
            insecure_intervals: records.iter().filter(|r| !r.verdict.overall).count(),
            load_shed_mwh: records.iter().map(|r| r.dispatch.shed_mw).sum::<f64>() * interval_hours,
            total_cost: records.iter().map(|r| r.cost).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub market_mode: MarketMode,
    pub interval_minutes: u32,
    pub technologies: BTreeMap<String, Technology>,
    pub records: Vec<IntervalRecord>,
    /// Demand curves built for reserve products, keyed by error-set name.
    pub curves: BTreeMap<String, ReserveDemandCurve>,
    pub rocof_scores: BTreeMap<String, ResponseScore>,
    pub summary: Summary,
}

impl RunReport {
    pub fn empty(name: impl Into<String>, market_mode: MarketMode) -> Self {
        RunReport {
            name: name.into(),
            market_mode,
            interval_minutes: market_mode.interval_minutes(),
            technologies: BTreeMap::new(),
            records: Vec::new(),
            curves: BTreeMap::new(),
            rocof_scores: BTreeMap::new(),
            summary: Summary::from_records(&[], 0.0),
        }
    }

    /// Prices of a service sorted from highest to lowest.
    pub fn price_duration(&self, service: ServiceKind) -> Vec<f64> {
        let mut prices: Vec<f64> = self.records.iter().map(|r| r.dispatch.price(service)).collect();
        prices.sort_by(|a, b| b.total_cmp(a));
        prices
    }

    /// Energy plus every service cleared in at least one interval.
    pub fn procured_services(&self) -> Vec<ServiceKind> {
        let mut set: BTreeSet<ServiceKind> = BTreeSet::from([ServiceKind::Energy]);
        for r in &self.records {
            for services in r.dispatch.cleared.values() {
                set.extend(services.keys().copied());
            }
        }
        set.into_iter().collect()
    }
}

fn noisy_demand(scenario: &Scenario) -> Vec<f64> {
    if scenario.demand_noise_sd_mw <= 0.0 {
        return scenario.demand_mw.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = Normal::new(0.0, scenario.demand_noise_sd_mw).expect("validated standard deviation");
    scenario
        .demand_mw
        .iter()
        .map(|d| (d + noise.sample(&mut rng)).max(0.0))
        .collect()
}

fn vre_available(registry: &Registry, interval: usize) -> f64 {
    registry
        .facilities()
        .filter(|f| f.tech == Technology::InverterVre)
        .map(|f| f.available_mw(interval))
        .sum()
}

/// Commitment for one interval. Facilities outside the nomogram run as the
/// market schedules them; without a table every facility is online.
fn commit(scenario: &Scenario, interval: usize, nonsync_mw: f64) -> Result<CommitmentDecision, RunError> {
    let registry = &scenario.registry;
    let Some(spec) = &scenario.nomogram else {
        let committed: BTreeSet<String> = registry.facilities().map(|f| f.id.clone()).collect();
        let cost = registry.facilities().filter(|f| f.is_synchronous()).map(|f| f.commitment_cost).sum();
        return Ok(CommitmentDecision {
            chosen_label: None,
            committed,
            commitment_cost: cost,
            directed: false,
            nonsync_limit_mw: None,
        });
    };
    let mut decision = select_commitment(&spec.table, registry, nonsync_mw, spec.inertia_floor_mws)
        .map_err(|source| RunError::Commitment { interval, source })?;
    let table_units = spec.table.units();
    for f in registry.facilities() {
        if !table_units.contains(&f.id) && decision.committed.insert(f.id.clone()) && f.is_synchronous() {
            decision.commitment_cost += f.commitment_cost;
        }
    }
    Ok(decision)
}

fn contingency_mw(scenario: &Scenario, committed: &BTreeSet<String>, interval: usize) -> f64 {
    match scenario.contingency.size {
        ContingencySize::FixedMw(mw) => mw,
        ContingencySize::LargestOnline => committed
            .iter()
            .filter_map(|id| scenario.registry.facility(id))
            .map(|f| f.available_mw(interval))
            .fold(0.0, f64::max),
    }
}

/// Raise response carried by the cleared portfolio.
fn responders(scenario: &Scenario, dispatch: &DispatchResult) -> Vec<Responder> {
    let mut out = Vec::new();
    for (id, services) in &dispatch.cleared {
        let Some(f) = scenario.registry.facility(id) else { continue };
        for (&service, &mw) in services {
            if mw <= 0.0 {
                continue;
            }
            let r = match service {
                ServiceKind::FastFrequencyResponse => Responder::delayed_step(mw, scenario.contingency.ffr_delay_s),
                ServiceKind::ContingencyRaiseFast => Responder::exponential(mw, f.pfr_tau),
                ServiceKind::ContingencyRaiseSlow => Responder::exponential(mw, f.pfr_tau.max(20.0)),
                ServiceKind::ContingencyRaiseDelayed => Responder::exponential(mw, 100.0),
                _ => continue,
            };
            out.push(r);
        }
    }
    out
}

struct Prepared {
    curves: BTreeMap<String, ReserveDemandCurve>,
    products: BTreeMap<String, ServiceRequirement>,
}

fn prepare_products(scenario: &Scenario) -> Result<Prepared, RunError> {
    let mut curves = BTreeMap::new();
    let mut products = BTreeMap::new();
    for spec in &scenario.requirements {
        if let RequirementSpec::Product {
            product,
            error_set,
            config,
        } = spec
        {
            let set = &scenario.error_sets[error_set];
            let req = reserve_product(*product, set, config).map_err(|source| RunError::Reserve {
                error_set: error_set.clone(),
                source,
            })?;
            if let RequirementMode::DemandCurve(curve) = &req.mode {
                curves.insert(error_set.clone(), curve.clone());
            }
            products.insert(error_set.clone(), req);
        }
    }
    Ok(Prepared { curves, products })
}

fn requirements_for(
    scenario: &Scenario,
    prepared: &Prepared,
    contingency: f64,
    interval: usize,
) -> Result<Vec<ServiceRequirement>, RunError> {
    scenario
        .requirements
        .iter()
        .map(|spec| {
            Ok(match spec {
                RequirementSpec::Fixed { service, mw } => ServiceRequirement::fixed(*service, *mw),
                RequirementSpec::Disabled { service } => ServiceRequirement::disabled(*service),
                RequirementSpec::LegacyHeadroom { service } => {
                    ServiceRequirement::fixed(*service, legacy_headroom_requirement(contingency))
                }
                RequirementSpec::MinInertia => {
                    let limits = &scenario.limits;
                    let e = min_inertia_for_rocof(contingency, limits.max_rocof, limits.f0)
                        .map_err(|source| RunError::Requirement { interval, source })?;
                    ServiceRequirement::fixed(ServiceKind::RocofControl, e)
                }
                RequirementSpec::Product { error_set, .. } => prepared.products[error_set].clone(),
            })
        })
        .collect()
}

fn run_interval(
    scenario: &Scenario,
    prepared: &Prepared,
    interval: usize,
    demand_mw: f64,
    nonsync_available_mw: f64,
    decision: CommitmentDecision,
) -> Result<IntervalRecord, RunError> {
    let contingency = contingency_mw(scenario, &decision.committed, interval);
    let request = ClearingRequest {
        interval,
        demand_mw,
        requirements: requirements_for(scenario, prepared, contingency, interval)?,
        committed: decision.committed.clone(),
        nonsync_limit_mw: decision.nonsync_limit_mw,
    };
    let dispatch = clear_interval(&scenario.registry, &request, &scenario.market)
        .map_err(|source| RunError::Clearing { interval, source })?;
    let curtailment = compute_curtailment(&scenario.registry, &dispatch, interval).expect("same interval");

    let spec = &scenario.contingency;
    let study = ContingencyStudy {
        inertia_mws: dispatch.system_inertia_mws,
        contingency_mw: contingency,
        responders: responders(scenario, &dispatch),
        load_damping_mw_per_hz: spec.load_damping_mw_per_hz,
        f0: scenario.limits.f0,
        horizon_s: spec.horizon_s,
        dt_s: spec.dt_s,
    };
    let trace = simulate_contingency(&study).map_err(|source| RunError::Frequency { interval, source })?;
    let verdict = check_limits(&trace, &scenario.limits);
    let cost = dispatch.objective_cost * scenario.market.interval_hours() + decision.commitment_cost;
    Ok(IntervalRecord {
        interval,
        demand_mw,
        nonsync_available_mw,
        contingency_mw: contingency,
        available_mw: scenario
            .registry
            .facilities()
            .map(|f| (f.id.clone(), f.available_mw(interval)))
            .collect(),
        decision,
        dispatch,
        curtailment,
        trace,
        verdict,
        cost,
    })
}

pub fn run(scenario: &Scenario) -> Result<RunReport, RunError> {
    let demand = noisy_demand(scenario);
    let prepared = prepare_products(scenario)?;

    let mut decisions = Vec::with_capacity(scenario.intervals);
    for i in 0..scenario.intervals {
        let level = vre_available(&scenario.registry, i);
        decisions.push((level, commit(scenario, i, level)?));
    }

    let outcomes: Vec<Result<IntervalRecord, RunError>> = decisions
        .into_par_iter()
        .enumerate()
        .map(|(i, (level, decision))| run_interval(scenario, &prepared, i, demand[i], level, decision))
        .collect();
    let records = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rocof_scores = BTreeMap::new();
    for (id, trace) in &scenario.response_traces {
        let score = score_response(trace, scenario.registry.facility(id), &scenario.scoring).map_err(|source| {
            RunError::Scoring {
                facility: id.clone(),
                source,
            }
        })?;
        rocof_scores.insert(id.clone(), score);
    }

    let summary = Summary::from_records(&records, scenario.market.interval_hours());
    Ok(RunReport {
        name: scenario.name.clone(),
        market_mode: scenario.market.mode,
        interval_minutes: scenario.market.mode.interval_minutes(),
        technologies: scenario.registry.facilities().map(|f| (f.id.clone(), f.tech)).collect(),
        records,
        curves: prepared.curves,
        rocof_scores,
        summary,
    })
}
