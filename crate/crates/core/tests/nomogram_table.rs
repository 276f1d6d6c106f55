mod common;

use std::collections::BTreeSet;

use ess_core::clearing::{clear_interval, compute_curtailment, ClearingRequest};
use ess_core::model::{
    total_system_inertia, validate_and_build_registry, Facility, MarketConfig, Registry, ServiceKind, ServiceOffer,
    Technology,
};
use ess_core::nomogram::{feasible_combinations, intervention_count, select_commitment, NomogramTable};
use proptest::prelude::*;

const PRINTED: [(&str, f64); 13] = [
    ("LOW_2", 1_300.0),
    ("LOW_3", 1_700.0),
    ("LOW_4", 1_450.0),
    ("LOW_5B", 1_700.0),
    ("LOW_6", 1_700.0),
    ("LOW_7", 1_700.0),
    ("LOW_8", 1_600.0),
    ("LOW_10", 1_750.0),
    ("LOW_11", 1_700.0),
    ("LOW_13", 1_700.0),
    ("LOW_14", 1_300.0),
    ("LOW_15", 1_300.0),
    ("LOW_18B", 1_700.0),
];

fn table() -> NomogramTable {
    NomogramTable::load(&common::fixtures().join("fig6-table/nomogram.csv")).unwrap()
}

/// Every table unit as a synchronous machine plus one large VRE facility.
fn system(vre_mw: f64) -> Registry {
    let t = table();
    let mut facilities: Vec<Facility> = t
        .units()
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let mut f = Facility::new(id, Technology::Synchronous, 200.0);
            f.inertia_h = 4.0 + (i % 3) as f64 * 0.5;
            f.mva_rating = 220.0;
            f.commitment_cost = 500.0 + 100.0 * i as f64;
            f
        })
        .collect();
    let mut vre = Facility::new("VRE", Technology::InverterVre, vre_mw);
    vre.availability = vec![vre_mw];
    facilities.push(vre);
    let mut offers: Vec<ServiceOffer> = t
        .units()
        .into_iter()
        .map(|id| ServiceOffer::new(id, ServiceKind::Energy, 200.0, 80.0))
        .collect();
    offers.push(ServiceOffer::new("VRE", ServiceKind::Energy, vre_mw, -5.0));
    validate_and_build_registry(facilities, offers, &MarketConfig::nem()).unwrap()
}

#[test]
fn bundled_table_reproduces_printed_limits() {
    let t = table();
    assert_eq!(t.combinations().len(), 13);
    for ((label, limit), row) in PRINTED.iter().zip(t.combinations()) {
        assert_eq!(&row.label, label);
        assert_eq!(row.nonsync_limit_mw, *limit);
    }
    assert_eq!(t.get("LOW_2").unwrap().required_units, BTreeSet::from(["TIB_1", "TIB_2", "PP_GT1", "PP_ST18"].map(String::from)));
}

#[test]
fn queries_at_printed_levels() {
    let t = table();
    let at_1250 = feasible_combinations(&t, 1_250.0);
    assert!(at_1250.contains(&"LOW_2".to_string()));
    assert_eq!(at_1250.len(), 13);
    let at_1500 = feasible_combinations(&t, 1_500.0);
    assert!(!at_1500.contains(&"LOW_2".to_string()));
    assert!(at_1500.contains(&"LOW_3".to_string()));
    assert!(feasible_combinations(&t, 1_800.0).is_empty());
    assert_eq!(feasible_combinations(&t, 1_750.0), vec!["LOW_10".to_string()]);
}

#[test]
fn save_and_load_is_bit_exact() {
    let t = table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.csv");
    t.save(&path).unwrap();
    let back = NomogramTable::load(&path).unwrap();
    assert_eq!(back, t);
    for (a, b) in t.combinations().iter().zip(back.combinations()) {
        assert_eq!(a.nonsync_limit_mw.to_bits(), b.nonsync_limit_mw.to_bits());
    }
    let original = std::fs::read_to_string(common::fixtures().join("fig6-table/nomogram.csv")).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), original);
}

#[test]
fn direction_above_table_curtails_vre_to_the_limit() {
    let registry = system(1_800.0);
    let d = select_commitment(&table(), &registry, 1_800.0, 0.0).unwrap();
    assert!(d.directed);
    assert_eq!(d.chosen_label.as_deref(), Some("LOW_10"));
    let mut committed = d.committed.clone();
    committed.insert("VRE".into());
    let request = ClearingRequest {
        interval: 0,
        demand_mw: 2_400.0,
        requirements: vec![],
        committed,
        nonsync_limit_mw: d.nonsync_limit_mw,
    };
    let result = clear_interval(&registry, &request, &MarketConfig::nem()).unwrap();
    let c = compute_curtailment(&registry, &result, 0).unwrap();
    assert!((result.cleared("VRE", ServiceKind::Energy) - 1_750.0).abs() < 1e-6);
    assert!((c.curtailed_mw - (1_800.0 - 1_750.0)).abs() < 1e-6);
    assert!((c.curtailed_fraction - 50.0 / 1_800.0).abs() < 1e-9);
}

#[test]
fn unreachable_inertia_floor_picks_the_most_inertia() {
    let t = table();
    let registry = system(500.0);
    let d = select_commitment(&t, &registry, 500.0, 1e9).unwrap();
    assert!(d.directed);
    let best = t
        .combinations()
        .iter()
        .map(|c| total_system_inertia(&registry, &c.required_units).unwrap())
        .fold(0.0, f64::max);
    assert_eq!(total_system_inertia(&registry, &d.committed).unwrap(), best);
}

#[test]
fn market_choice_is_the_cheapest_feasible_row() {
    let t = table();
    let registry = system(1_000.0);
    for level in [0.0, 1_250.0, 1_400.0, 1_650.0, 1_700.0, 1_750.0] {
        let d = select_commitment(&t, &registry, level, 0.0).unwrap();
        assert!(!d.directed);
        let cheapest = feasible_combinations(&t, level)
            .iter()
            .map(|l| {
                t.get(l)
                    .unwrap()
                    .required_units
                    .iter()
                    .map(|u| registry.facility(u).unwrap().commitment_cost)
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(d.commitment_cost, cheapest);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowering_levels_never_adds_interventions(levels in prop::collection::vec(0.0f64..2_200.0, 1..12), cut in 0.0f64..600.0) {
        let t = table();
        let registry = system(2_200.0);
        let decide = |ls: &[f64]| -> Vec<_> {
            ls.iter().map(|&l| select_commitment(&t, &registry, l, 0.0).unwrap()).collect()
        };
        let high = decide(&levels);
        let low: Vec<f64> = levels.iter().map(|l| (l - cut).max(0.0)).collect();
        prop_assert!(intervention_count(&decide(&low)) <= intervention_count(&high));
    }

    #[test]
    fn feasible_sets_shrink_as_level_rises(a in 0.0f64..2_000.0, b in 0.0f64..2_000.0) {
        let t = table();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at_lo = feasible_combinations(&t, lo);
        prop_assert!(feasible_combinations(&t, hi).iter().all(|l| at_lo.contains(l)));
    }
}
