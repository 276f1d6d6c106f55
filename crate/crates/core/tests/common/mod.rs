//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use ess_core::clearing::{ClearingRequest, ServiceRequirement};
use ess_core::model::{validate_and_build_registry, Facility, MarketConfig, Registry, ServiceKind, ServiceOffer, Technology};
use rand::Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A facility with one energy band and one band of a single raise service.
#[derive(Debug, Clone, Copy)]
pub struct SmallUnit {
    pub p_max: u32,
    pub energy_qty: u32,
    pub energy_price: f64,
    pub service_qty: u32,
    pub service_price: f64,
}

#[derive(Debug, Clone)]
pub struct SmallInstance {
    pub units: Vec<SmallUnit>,
    pub service: ServiceKind,
    pub demand: u32,
    pub requirement: u32,
    pub cap: f64,
}

impl SmallInstance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=3);
        let units = (0..n)
            .map(|_| {
                let p_max = rng.random_range(4..=15);
                SmallUnit {
                    p_max,
                    energy_qty: rng.random_range(1..=p_max),
                    energy_price: f64::from(rng.random_range(-20..=100)),
                    service_qty: rng.random_range(0..=p_max),
                    service_price: f64::from(rng.random_range(0..=40)),
                }
            })
            .collect::<Vec<_>>();
        let total: u32 = units.iter().map(|u| u.p_max).sum();
        let service = if rng.random_bool(0.5) {
            ServiceKind::ContingencyRaiseFast
        } else {
            ServiceKind::RegulationRaise
        };
        SmallInstance {
            units,
            service,
            demand: rng.random_range(0..=total + 3),
            requirement: rng.random_range(0..=total / 2 + 3),
            cap: 1_000.0,
        }
    }

    pub fn id(i: usize) -> String {
        format!("U{i}")
    }

    pub fn registry(&self) -> (Registry, MarketConfig) {
        let market = MarketConfig {
            price_cap: self.cap,
            ..MarketConfig::nem()
        };
        let facilities = self
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| Facility::new(Self::id(i), Technology::InverterStorage, f64::from(u.p_max)))
            .collect();
        let mut offers = Vec::new();
        for (i, u) in self.units.iter().enumerate() {
            offers.push(ServiceOffer::new(Self::id(i), ServiceKind::Energy, f64::from(u.energy_qty), u.energy_price));
            if u.service_qty > 0 {
                offers.push(ServiceOffer::new(Self::id(i), self.service, f64::from(u.service_qty), u.service_price));
            }
        }
        (validate_and_build_registry(facilities, offers, &market).unwrap(), market)
    }

    pub fn request(&self) -> ClearingRequest {
        ClearingRequest {
            interval: 0,
            demand_mw: f64::from(self.demand),
            requirements: vec![ServiceRequirement::fixed(self.service, f64::from(self.requirement))],
            committed: BTreeSet::new(),
            nonsync_limit_mw: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOptimum {
    pub cost: f64,
    /// Every (energy, service) allocation reaching `cost`.
    pub points: Vec<Vec<(u32, u32)>>,
}

/// Enumerates every whole-MW allocation of energy and service.
///
/// Unserved demand and unmet requirement cost the price cap per MW; supply
/// beyond demand is not allowed.
pub fn grid_search(inst: &SmallInstance) -> GridOptimum {
    let mut best = GridOptimum {
        cost: f64::INFINITY,
        points: Vec::new(),
    };
    let mut current = Vec::with_capacity(inst.units.len());
    recurse(inst, 0, &mut current, 0, 0, 0.0, &mut best);
    best
}

fn recurse(
    inst: &SmallInstance,
    k: usize,
    current: &mut Vec<(u32, u32)>,
    energy: u32,
    service: u32,
    cost: f64,
    best: &mut GridOptimum,
) {
    if k == inst.units.len() {
        if energy > inst.demand {
            return;
        }
        let shed = f64::from(inst.demand - energy);
        let short = f64::from(inst.requirement.saturating_sub(service));
        let total = cost + inst.cap * (shed + short);
        let tol = 1e-9 * total.abs().max(1.0);
        if total < best.cost - tol {
            best.cost = total;
            best.points = vec![current.clone()];
        } else if (total - best.cost).abs() <= tol {
            best.points.push(current.clone());
        }
        return;
    }
    let u = inst.units[k];
    for e in 0..=u.energy_qty {
        if energy + e > inst.demand {
            break;
        }
        for r in 0..=u.service_qty.min(u.p_max - e) {
            current.push((e, r));
            let c = cost + u.energy_price * f64::from(e) + u.service_price * f64::from(r);
            recurse(inst, k + 1, current, energy + e, service + r, c, best);
            current.pop();
        }
    }
}

/// Nadir of a single exponential responder with no load damping, from the
/// closed-form integral of the swing equation up to the moment the response
/// matches the lost generation.
pub fn closed_form_nadir(inertia_mws: f64, contingency_mw: f64, capacity_mw: f64, tau_s: f64, f0: f64) -> (f64, f64) {
    assert!(capacity_mw > contingency_mw);
    let t_star = -tau_s * (1.0 - contingency_mw / capacity_mw).ln();
    let k = f0 / (2.0 * inertia_mws);
    let nadir = f0 + k * ((capacity_mw - contingency_mw) * t_star - tau_s * contingency_mw);
    (nadir, t_star)
}
