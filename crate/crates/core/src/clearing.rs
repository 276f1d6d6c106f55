//! Single-interval co-optimised clearing of energy and system services.
//!
//! Each interval is one linear program: accepted offer quantities are the
//! decision variables, the objective is total offer cost, and prices are the
//! duals of the energy balance and of each service requirement. Every
//! constraint that can be short of supply carries a violation variable priced
//! at the market price cap, so scarcity shows up as shed or shortfall rather
//! than as a solver failure.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::lp::{LinearProgram, LpError, Sense};
use crate::model::{
    total_system_inertia, Direction, MarketConfig, ModelError, Registry, ServiceKind, Technology,
};
use crate::reserve::ReserveDemandCurve;

#[derive(Debug, Clone, PartialEq)]
pub enum RequirementMode {
    FixedQuantity(f64),
    DemandCurve(ReserveDemandCurve),
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceRequirement {
    pub service: ServiceKind,
    pub mode: RequirementMode,
}

impl ServiceRequirement {
    pub fn fixed(service: ServiceKind, mw: f64) -> Self {
        ServiceRequirement {
            service,
            mode: RequirementMode::FixedQuantity(mw),
        }
    }

    pub fn curve(service: ServiceKind, curve: ReserveDemandCurve) -> Self {
        ServiceRequirement {
            service,
            mode: RequirementMode::DemandCurve(curve),
        }
    }

    pub fn disabled(service: ServiceKind) -> Self {
        ServiceRequirement {
            service,
            mode: RequirementMode::Disabled,
        }
    }
}

/// Everything that varies per interval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClearingRequest {
    pub interval: usize,
    pub demand_mw: f64,
    pub requirements: Vec<ServiceRequirement>,
    /// Facilities online this interval. Synchronous units outside the set are
    /// offline; inverter-based facilities are available regardless.
    pub committed: BTreeSet<String>,
    /// Cap on total cleared inverter VRE energy.
    pub nonsync_limit_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClearingError {
    #[error("clearing problem is unbounded; check violation pricing")]
    UnboundedProblem,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("committed facility `{0}` is not in the registry")]
    UnknownFacility(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl From<LpError> for ClearingError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::Unbounded => ClearingError::UnboundedProblem,
            other => ClearingError::NumericalFailure(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub interval: usize,
    pub demand_mw: f64,
    /// Cleared MW (MW·s for RocofControl) per facility and service.
    pub cleared: BTreeMap<String, BTreeMap<ServiceKind, f64>>,
    /// $/MWh for energy, $/MW/h for services; 0 for services not procured.
    pub prices: BTreeMap<ServiceKind, f64>,
    pub committed: BTreeSet<String>,
    pub shed_mw: f64,
    pub shortfall_mw: BTreeMap<ServiceKind, f64>,
    /// Total MW by which committed units sit below their minimum level.
    pub min_level_violation_mw: f64,
    pub curtailed_vre_mw: f64,
    /// Committed inertia plus cleared RocofControl, MW·s.
    pub system_inertia_mws: f64,
    pub objective_cost: f64,
    pub binding_constraints: Vec<String>,
}

impl DispatchResult {
    pub fn cleared(&self, facility: &str, service: ServiceKind) -> f64 {
        self.cleared
            .get(facility)
            .and_then(|m| m.get(&service))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn total_cleared(&self, service: ServiceKind) -> f64 {
        self.cleared.values().filter_map(|m| m.get(&service)).sum()
    }

    pub fn price(&self, service: ServiceKind) -> f64 {
        self.prices.get(&service).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curtailment {
    pub available_mw: f64,
    pub curtailed_mw: f64,
    pub curtailed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("dispatch result is for interval {result} but interval {requested} was requested")]
pub struct MismatchedInterval {
    pub result: usize,
    pub requested: usize,
}

/// VRE availability left unused by the dispatch.
pub fn compute_curtailment(
    registry: &Registry,
    result: &DispatchResult,
    interval: usize,
) -> Result<Curtailment, MismatchedInterval> {
    if result.interval != interval {
        return Err(MismatchedInterval {
            result: result.interval,
            requested: interval,
        });
    }
    let (available, curtailed) = registry
        .facilities()
        .filter(|f| f.tech == Technology::InverterVre)
        .fold((0.0, 0.0), |(a, c), f| {
            let avail = f.available_mw(interval);
            let used = result.cleared(&f.id, ServiceKind::Energy);
            (a + avail, c + (avail - used).max(0.0))
        });
    let fraction = if available > 0.0 { curtailed / available } else { 0.0 };
    Ok(Curtailment {
        available_mw: available,
        curtailed_mw: curtailed,
        curtailed_fraction: fraction,
    })
}

struct OfferVar {
    var: usize,
    facility: String,
    service: ServiceKind,
    price: f64,
    quantity: f64,
}

pub fn clear_interval(
    registry: &Registry,
    request: &ClearingRequest,
    config: &MarketConfig,
) -> Result<DispatchResult, ClearingError> {
    let interval = request.interval;
    let demand = request.demand_mw;
    if !(demand.is_finite() && demand >= 0.0) {
        return Err(ClearingError::InvalidRequest(format!("demand {demand} MW")));
    }
    if let Some(limit) = request.nonsync_limit_mw {
        if !(limit.is_finite() && limit >= 0.0) {
            return Err(ClearingError::InvalidRequest(format!("non-synchronous limit {limit} MW")));
        }
    }
    if let Some(id) = request.committed.iter().find(|id| !registry.contains(id)) {
        return Err(ClearingError::UnknownFacility(id.clone()));
    }
    let mut requirements: BTreeMap<ServiceKind, &RequirementMode> = BTreeMap::new();
    for r in &request.requirements {
        if r.service == ServiceKind::Energy {
            return Err(ClearingError::InvalidRequest("energy is cleared against demand, not a requirement".into()));
        }
        if let RequirementMode::FixedQuantity(q) = r.mode {
            if !(q.is_finite() && q >= 0.0) {
                return Err(ClearingError::InvalidRequest(format!("{} requirement {q}", r.service)));
            }
        }
        if requirements.insert(r.service, &r.mode).is_some() {
            return Err(ClearingError::InvalidRequest(format!("duplicate {} requirement", r.service)));
        }
    }
    let active = |s: ServiceKind| {
        s == ServiceKind::Energy
            || requirements
                .get(&s)
                .is_some_and(|m| !matches!(m, RequirementMode::Disabled))
    };
    let online = |id: &str| {
        registry
            .facility(id)
            .is_some_and(|f| !f.is_synchronous() || request.committed.contains(id))
    };

    let cap = config.price_cap;
    let mut lp = LinearProgram::new();

    let mut offers: Vec<OfferVar> = Vec::new();
    for o in registry.offers_for(interval) {
        if !active(o.service) || !online(&o.facility_id) || o.quantity <= 0.0 {
            continue;
        }
        let var = lp.add_var(o.price, Some(o.quantity));
        offers.push(OfferVar {
            var,
            facility: o.facility_id.clone(),
            service: o.service,
            price: o.price,
            quantity: o.quantity,
        });
    }

    // Inertia already on the system from committed units that are not being
    // paid for it through a RocofControl offer this interval.
    let rocof_sellers: BTreeSet<&str> = registry
        .offers_for(interval)
        .filter(|o| o.service == ServiceKind::RocofControl)
        .map(|o| o.facility_id.as_str())
        .collect();
    let base_set: BTreeSet<String> = request
        .committed
        .iter()
        .filter(|id| !rocof_sellers.contains(id.as_str()))
        .cloned()
        .collect();
    let base_inertia = total_system_inertia(registry, &base_set).map_err(|e| match e {
        ModelError::UnknownFacility(id) => ClearingError::UnknownFacility(id),
        other => ClearingError::NumericalFailure(other.to_string()),
    })?;

    let mut tags: Vec<String> = Vec::new();

    // Energy balance.
    let shed = lp.add_var(cap, Some(demand));
    let mut balance: Vec<(usize, f64)> = offers
        .iter()
        .filter(|o| o.service == ServiceKind::Energy)
        .map(|o| (o.var, 1.0))
        .collect();
    balance.push((shed, 1.0));
    let balance_row = lp.add_constraint(balance, Sense::Eq, demand);
    tags.push("energy_balance".into());

    // Service requirements.
    let mut req_rows: BTreeMap<ServiceKind, usize> = BTreeMap::new();
    let mut shortfall_vars: BTreeMap<ServiceKind, usize> = BTreeMap::new();
    for (&service, mode) in &requirements {
        let credit = if service == ServiceKind::RocofControl { base_inertia } else { 0.0 };
        let mut coeffs: Vec<(usize, f64)> = offers
            .iter()
            .filter(|o| o.service == service)
            .map(|o| (o.var, 1.0))
            .collect();
        let rhs = match mode {
            RequirementMode::Disabled => continue,
            RequirementMode::FixedQuantity(q) => {
                let rhs = q - credit;
                if rhs > 0.0 {
                    let s = lp.add_var(cap, Some(rhs));
                    coeffs.push((s, 1.0));
                    shortfall_vars.insert(service, s);
                }
                rhs
            }
            RequirementMode::DemandCurve(curve) => {
                for (width, price) in curve.blocks() {
                    if width > 0.0 {
                        let d = lp.add_var(-price, Some(width));
                        coeffs.push((d, -1.0));
                    }
                }
                -credit
            }
        };
        req_rows.insert(service, lp.add_constraint(coeffs, Sense::Ge, rhs));
        tags.push(format!("requirement:{service}"));
    }

    // Per-facility capacity coupling.
    let mut min_level_slacks: Vec<usize> = Vec::new();
    for f in registry.facilities() {
        let mine: Vec<&OfferVar> = offers.iter().filter(|o| o.facility == f.id).collect();
        let committed_sync = f.is_synchronous() && request.committed.contains(&f.id);
        let p_min = if committed_sync { f.p_min } else { 0.0 };
        let energy = || mine.iter().filter(|o| o.service == ServiceKind::Energy).map(|o| (o.var, 1.0));

        let up: Vec<(usize, f64)> = energy()
            .chain(
                mine.iter()
                    .filter(|o| o.service.direction() == Direction::Raise)
                    .map(|o| (o.var, 1.0)),
            )
            .collect();
        if !up.is_empty() {
            lp.add_constraint(up, Sense::Le, f.available_mw(interval));
            tags.push(format!("capacity:{}", f.id));
        }

        let lowers: Vec<(usize, f64)> = mine
            .iter()
            .filter(|o| o.service.direction() == Direction::Lower)
            .map(|o| (o.var, -1.0))
            .collect();
        if !lowers.is_empty() || p_min > 0.0 {
            let mut down: Vec<(usize, f64)> = energy().chain(lowers).collect();
            if p_min > 0.0 {
                let s = lp.add_var(cap, Some(p_min));
                down.push((s, 1.0));
                min_level_slacks.push(s);
            }
            lp.add_constraint(down, Sense::Ge, p_min);
            tags.push(format!("min_level:{}", f.id));
        }
    }

    if let Some(limit) = request.nonsync_limit_mw {
        let vre: Vec<(usize, f64)> = offers
            .iter()
            .filter(|o| {
                o.service == ServiceKind::Energy
                    && registry.facility(&o.facility).is_some_and(|f| f.tech == Technology::InverterVre)
            })
            .map(|o| (o.var, 1.0))
            .collect();
        if !vre.is_empty() {
            lp.add_constraint(vre, Sense::Le, limit);
            tags.push("nonsync_limit".into());
        }
    }

    let solution = lp.solve()?;
    let mut x = solution.x.clone();
    ration_equal_price_offers(&lp, &offers, &mut x);

    let mut cleared: BTreeMap<String, BTreeMap<ServiceKind, f64>> = registry
        .facilities()
        .map(|f| (f.id.clone(), BTreeMap::from([(ServiceKind::Energy, 0.0)])))
        .collect();
    for o in &offers {
        *cleared
            .get_mut(&o.facility)
            .expect("offers reference registry facilities")
            .entry(o.service)
            .or_insert(0.0) += x[o.var];
    }

    let mut prices: BTreeMap<ServiceKind, f64> = ServiceKind::ALL.iter().map(|s| (*s, 0.0)).collect();
    prices.insert(ServiceKind::Energy, solution.duals[balance_row]);
    for (service, row) in &req_rows {
        prices.insert(*service, solution.duals[*row]);
    }

    let shortfall_mw = shortfall_vars.iter().map(|(s, v)| (*s, x[*v])).collect();
    let binding_constraints = tags
        .into_iter()
        .zip(&solution.duals)
        .filter(|(_, y)| y.abs() > 1e-9)
        .map(|(t, _)| t)
        .collect();

    let cleared_rocof: f64 = offers
        .iter()
        .filter(|o| o.service == ServiceKind::RocofControl)
        .map(|o| x[o.var])
        .sum();

    let mut result = DispatchResult {
        interval,
        demand_mw: demand,
        cleared,
        prices,
        committed: request.committed.clone(),
        shed_mw: x[shed],
        shortfall_mw,
        min_level_violation_mw: min_level_slacks.iter().map(|v| x[*v]).sum(),
        curtailed_vre_mw: 0.0,
        system_inertia_mws: base_inertia + cleared_rocof,
        objective_cost: lp.objective(&x),
        binding_constraints,
    };
    result.curtailed_vre_mw = compute_curtailment(registry, &result, interval)
        .expect("same interval")
        .curtailed_mw;
    Ok(result)
}

/// Shares the cleared total of each group of same-service, same-price offers
/// in proportion to offered quantity, where that stays feasible. The
/// objective is unchanged because every offer in a group has the same price.
fn ration_equal_price_offers(lp: &LinearProgram, offers: &[OfferVar], x: &mut [f64]) {
    let mut groups: BTreeMap<(ServiceKind, u64), Vec<&OfferVar>> = BTreeMap::new();
    for o in offers {
        // Order-preserving key for finite floats.
        let bits = o.price.to_bits();
        let key = if o.price.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups.entry((o.service, key)).or_default().push(o);
    }
    for group in groups.values().filter(|g| g.len() > 1) {
        let total: f64 = group.iter().map(|o| x[o.var]).sum();
        let offered: f64 = group.iter().map(|o| o.quantity).sum();
        if total <= 0.0 || offered <= 0.0 {
            continue;
        }
        let mut trial = x.to_vec();
        for o in group {
            trial[o.var] = total * o.quantity / offered;
        }
        if lp.is_feasible(&trial, 1e-7) {
            x.copy_from_slice(&trial);
        }
    }
}
