//! Facilities, the service catalogue, offers and the validated registry that
//! every other module reads from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Energy plus every co-optimised system service.
///
/// The six contingency kinds are the raise/lower pairs at 6 s, 60 s and
/// 5 min. Fast frequency response sits below the 6 s product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceKind {
    Energy,
    RegulationRaise,
    RegulationLower,
    ContingencyRaiseFast,
    ContingencyRaiseSlow,
    ContingencyRaiseDelayed,
    ContingencyLowerFast,
    ContingencyLowerSlow,
    ContingencyLowerDelayed,
    FastFrequencyResponse,
    RocofControl,
    OperatingReserve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Raise,
    Lower,
    /// Energy itself and inertia, which does not consume MW headroom.
    Neutral,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 12] = [
        ServiceKind::Energy,
        ServiceKind::RegulationRaise,
        ServiceKind::RegulationLower,
        ServiceKind::ContingencyRaiseFast,
        ServiceKind::ContingencyRaiseSlow,
        ServiceKind::ContingencyRaiseDelayed,
        ServiceKind::ContingencyLowerFast,
        ServiceKind::ContingencyLowerSlow,
        ServiceKind::ContingencyLowerDelayed,
        ServiceKind::FastFrequencyResponse,
        ServiceKind::RocofControl,
        ServiceKind::OperatingReserve,
    ];

    /// Short name used in every file format and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::Energy => "energy",
            ServiceKind::RegulationRaise => "reg_raise",
            ServiceKind::RegulationLower => "reg_lower",
            ServiceKind::ContingencyRaiseFast => "raise_6s",
            ServiceKind::ContingencyRaiseSlow => "raise_60s",
            ServiceKind::ContingencyRaiseDelayed => "raise_5min",
            ServiceKind::ContingencyLowerFast => "lower_6s",
            ServiceKind::ContingencyLowerSlow => "lower_60s",
            ServiceKind::ContingencyLowerDelayed => "lower_5min",
            ServiceKind::FastFrequencyResponse => "ffr",
            ServiceKind::RocofControl => "rocof_control",
            ServiceKind::OperatingReserve => "operating_reserve",
        }
    }

    pub fn direction(self) -> Direction {
        use ServiceKind::*;
        match self {
            RegulationRaise | ContingencyRaiseFast | ContingencyRaiseSlow
            | ContingencyRaiseDelayed | FastFrequencyResponse | OperatingReserve => Direction::Raise,
            RegulationLower | ContingencyLowerFast | ContingencyLowerSlow
            | ContingencyLowerDelayed => Direction::Lower,
            Energy | RocofControl => Direction::Neutral,
        }
    }

    /// Full-delivery time of the product in seconds, where the product has one.
    pub fn response_time_s(self) -> Option<f64> {
        use ServiceKind::*;
        match self {
            ContingencyRaiseFast | ContingencyLowerFast => Some(6.0),
            ContingencyRaiseSlow | ContingencyLowerSlow => Some(60.0),
            ContingencyRaiseDelayed | ContingencyLowerDelayed => Some(300.0),
            FastFrequencyResponse => Some(2.0),
            _ => None,
        }
    }

    pub fn is_contingency(self) -> bool {
        use ServiceKind::*;
        matches!(
            self,
            ContingencyRaiseFast
                | ContingencyRaiseSlow
                | ContingencyRaiseDelayed
                | ContingencyLowerFast
                | ContingencyLowerSlow
                | ContingencyLowerDelayed
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown service `{given}`; valid names are: {valid}")]
pub struct UnknownService {
    pub given: String,
    pub valid: String,
}

impl FromStr for ServiceKind {
    type Err = UnknownService;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownService {
                given: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technology {
    Synchronous,
    InverterVre,
    InverterStorage,
    DemandSide,
}

impl Technology {
    pub fn name(self) -> &'static str {
        match self {
            Technology::Synchronous => "synchronous",
            Technology::InverterVre => "inverter_vre",
            Technology::InverterStorage => "inverter_storage",
            Technology::DemandSide => "demand_side",
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub id: String,
    pub tech: Technology,
    pub p_max: f64,
    pub p_min: f64,
    /// Inertia constant H in seconds.
    pub inertia_h: f64,
    pub mva_rating: f64,
    /// Inverter-provided inertia credit, MW·s.
    pub virtual_inertia_mws: f64,
    pub droop: Option<f64>,
    /// Time constant of the exponential primary response, seconds.
    pub pfr_tau: f64,
    /// $ per interval while committed.
    pub commitment_cost: f64,
    /// Available MW per interval. Empty means `p_max` in every interval.
    pub availability: Vec<f64>,
}

impl Facility {
    /// Convenience constructor for a plain unit with no inertia and no
    /// availability trace.
    pub fn new(id: impl Into<String>, tech: Technology, p_max: f64) -> Self {
        Facility {
            id: id.into(),
            tech,
            p_max,
            p_min: 0.0,
            inertia_h: 0.0,
            mva_rating: 0.0,
            virtual_inertia_mws: 0.0,
            droop: None,
            pfr_tau: 6.0,
            commitment_cost: 0.0,
            availability: Vec::new(),
        }
    }

    pub fn is_synchronous(&self) -> bool {
        self.tech == Technology::Synchronous
    }

    /// min(p_max, availability) for the interval.
    pub fn available_mw(&self, interval: usize) -> f64 {
        match self.availability.get(interval) {
            Some(a) => a.min(self.p_max).max(0.0),
            None if self.availability.is_empty() => self.p_max,
            // A trace that is too short has nothing to offer past its end.
            None => 0.0,
        }
    }

    /// Stored kinetic energy plus any virtual inertia credit, MW·s.
    pub fn inertia_mws(&self) -> f64 {
        let physical = if self.is_synchronous() {
            self.inertia_h * self.mva_rating
        } else {
            0.0
        };
        physical + self.virtual_inertia_mws
    }

    /// Dispatchable range above the minimum stable level.
    pub fn headroom_mw(&self) -> f64 {
        (self.p_max - self.p_min).max(0.0)
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |detail: String| Err(ModelError::InvariantViolation(format!("facility `{}`: {detail}", self.id)));
        let finite = [
            self.p_max,
            self.p_min,
            self.inertia_h,
            self.mva_rating,
            self.virtual_inertia_mws,
            self.pfr_tau,
            self.commitment_cost,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if self.id.trim().is_empty() {
            return Err(ModelError::InvariantViolation("facility with empty id".into()));
        }
        if self.p_max < 0.0 {
            return bad(format!("p_max {} < 0", self.p_max));
        }
        if self.p_min < 0.0 || self.p_min > self.p_max {
            return bad(format!("p_min {} outside [0, p_max = {}]", self.p_min, self.p_max));
        }
        if self.p_min > 0.0 && !self.is_synchronous() {
            return bad("p_min > 0 is only allowed for synchronous units".into());
        }
        if self.inertia_h < 0.0 {
            return bad("inertia_h < 0".into());
        }
        if self.inertia_h > 0.0 && self.mva_rating <= 0.0 {
            return bad("mva_rating must be > 0 when inertia_h > 0".into());
        }
        if self.tech == Technology::InverterVre && self.inertia_h != 0.0 {
            return bad("inverter VRE cannot carry physical inertia".into());
        }
        if self.virtual_inertia_mws < 0.0 {
            return bad("virtual_inertia_mws < 0".into());
        }
        if self.virtual_inertia_mws > 0.0
            && !matches!(self.tech, Technology::InverterStorage | Technology::Synchronous)
        {
            return bad("virtual inertia is only allowed for storage or synchronous units".into());
        }
        if let Some(d) = self.droop {
            if !(d > 0.0 && d <= 0.2) {
                return bad(format!("droop {d} outside (0, 0.2]"));
            }
        }
        if self.pfr_tau <= 0.0 {
            return bad("pfr_tau must be > 0".into());
        }
        if self.commitment_cost < 0.0 {
            return bad("commitment_cost < 0".into());
        }
        if self.commitment_cost > 0.0 && !self.is_synchronous() {
            return bad("commitment_cost applies to synchronous units only".into());
        }
        if let Some((i, a)) = self
            .availability
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a < 0.0)
        {
            return bad(format!("availability[{i}] = {a} is not a finite non-negative MW value"));
        }
        Ok(())
    }
}

/// One price-quantity band. Multi-band books are several offers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceOffer {
    pub facility_id: String,
    pub service: ServiceKind,
    /// MW, or MW·s for RocofControl.
    pub quantity: f64,
    /// $/MWh for energy, $/MW/h for services.
    pub price: f64,
    /// Interval the offer applies to; `None` applies to every interval.
    pub interval: Option<usize>,
}

impl ServiceOffer {
    pub fn new(facility_id: impl Into<String>, service: ServiceKind, quantity: f64, price: f64) -> Self {
        ServiceOffer {
            facility_id: facility_id.into(),
            service,
            quantity,
            price,
            interval: None,
        }
    }

    pub fn for_interval(mut self, interval: usize) -> Self {
        self.interval = Some(interval);
        self
    }

    pub fn applies_to(&self, interval: usize) -> bool {
        self.interval.is_none_or(|i| i == interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketMode {
    /// Five-minute dispatch intervals.
    Nem,
    /// Thirty-minute dispatch intervals.
    Wem,
}

impl MarketMode {
    pub fn interval_minutes(self) -> u32 {
        match self {
            MarketMode::Nem => 5,
            MarketMode::Wem => 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig {
    pub mode: MarketMode,
    pub price_floor: f64,
    /// Offer ceiling; also the price of every violation variable.
    pub price_cap: f64,
}

impl MarketConfig {
    pub fn nem() -> Self {
        MarketConfig {
            mode: MarketMode::Nem,
            price_floor: -1_000.0,
            price_cap: 15_000.0,
        }
    }

    pub fn wem() -> Self {
        MarketConfig {
            mode: MarketMode::Wem,
            price_floor: -1_000.0,
            price_cap: 382.0,
        }
    }

    pub fn for_mode(mode: MarketMode) -> Self {
        match mode {
            MarketMode::Nem => Self::nem(),
            MarketMode::Wem => Self::wem(),
        }
    }

    pub fn interval_hours(&self) -> f64 {
        f64::from(self.mode.interval_minutes()) / 60.0
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self::nem()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("duplicate facility id `{0}`")]
    DuplicateFacilityId(String),
    #[error("offer references unknown facility `{0}`")]
    UnknownFacilityInOffer(String),
    #[error("offer {offer:?} priced outside [{floor}, {cap}]")]
    PriceOutOfBounds {
        offer: Box<ServiceOffer>,
        floor: f64,
        cap: f64,
    },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("unknown facility `{0}`")]
    UnknownFacility(String),
}

/// Validated, immutable set of facilities and offers.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    facilities: BTreeMap<String, Facility>,
    offers: Vec<ServiceOffer>,
}

impl Registry {
    pub fn facility(&self, id: &str) -> Option<&Facility> {
        self.facilities.get(id)
    }

    /// Facilities in id order.
    pub fn facilities(&self) -> impl Iterator<Item = &Facility> {
        self.facilities.values()
    }

    pub fn len(&self) -> usize {
        self.facilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facilities.is_empty()
    }

    pub fn offers(&self) -> &[ServiceOffer] {
        &self.offers
    }

    pub fn offers_for(&self, interval: usize) -> impl Iterator<Item = &ServiceOffer> {
        self.offers.iter().filter(move |o| o.applies_to(interval))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.facilities.contains_key(id)
    }
}

pub fn validate_and_build_registry(
    facilities: Vec<Facility>,
    offers: Vec<ServiceOffer>,
    config: &MarketConfig,
) -> Result<Registry, ModelError> {
    let mut by_id = BTreeMap::new();
    for f in facilities {
        f.check()?;
        if by_id.contains_key(&f.id) {
            return Err(ModelError::DuplicateFacilityId(f.id));
        }
        by_id.insert(f.id.clone(), f);
    }

    for o in &offers {
        let Some(f) = by_id.get(&o.facility_id) else {
            return Err(ModelError::UnknownFacilityInOffer(o.facility_id.clone()));
        };
        if !o.price.is_finite() || o.price < config.price_floor || o.price > config.price_cap {
            return Err(ModelError::PriceOutOfBounds {
                offer: Box::new(o.clone()),
                floor: config.price_floor,
                cap: config.price_cap,
            });
        }
        if !o.quantity.is_finite() || o.quantity < 0.0 {
            return Err(ModelError::InvariantViolation(format!(
                "offer from `{}` for {} has quantity {}",
                o.facility_id, o.service, o.quantity
            )));
        }
        let limit = match o.service {
            ServiceKind::RocofControl => f.inertia_mws(),
            _ => f.p_max,
        };
        if o.quantity > limit {
            return Err(ModelError::InvariantViolation(format!(
                "offer from `{}` for {} of {} exceeds the facility limit {}",
                o.facility_id, o.service, o.quantity, limit
            )));
        }
    }

    let mut offers = offers;
    // Stable sort keeps multi-band order within a facility and service.
    offers.sort_by(|a, b| {
        (&a.facility_id, a.service, a.interval).cmp(&(&b.facility_id, b.service, b.interval))
    });

    Ok(Registry {
        facilities: by_id,
        offers,
    })
}

/// Kinetic energy of the committed fleet plus virtual inertia credits, MW·s.
pub fn total_system_inertia(registry: &Registry, committed: &BTreeSet<String>) -> Result<f64, ModelError> {
    committed.iter().try_fold(0.0, |acc, id| {
        registry
            .facility(id)
            .map(|f| acc + f.inertia_mws())
            .ok_or_else(|| ModelError::UnknownFacility(id.clone()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sync_unit(id: &str, h: f64, mva: f64) -> Facility {
        Facility {
            inertia_h: h,
            mva_rating: mva,
            ..Facility::new(id, Technology::Synchronous, mva)
        }
    }

    #[test]
    fn minimal_registry() {
        let reg = validate_and_build_registry(
            vec![sync_unit("G1", 3.0, 500.0)],
            vec![ServiceOffer::new("G1", ServiceKind::Energy, 100.0, 40.0)],
            &MarketConfig::nem(),
        )
        .unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.offers().len(), 1);
    }

    #[test]
    fn price_above_cap_is_rejected() {
        let err = validate_and_build_registry(
            vec![sync_unit("G1", 3.0, 500.0)],
            vec![ServiceOffer::new("G1", ServiceKind::Energy, 100.0, 20_000.0)],
            &MarketConfig::nem(),
        )
        .unwrap_err();
        match err {
            ModelError::PriceOutOfBounds { floor, cap, .. } => {
                assert_eq!(floor, -1_000.0);
                assert_eq!(cap, 15_000.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_offer_is_rejected() {
        let err = validate_and_build_registry(
            vec![sync_unit("G1", 3.0, 500.0)],
            vec![ServiceOffer::new("X", ServiceKind::Energy, 10.0, 1.0)],
            &MarketConfig::nem(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::UnknownFacilityInOffer("X".into()));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = validate_and_build_registry(
            vec![sync_unit("G1", 3.0, 500.0), sync_unit("G1", 4.0, 250.0)],
            vec![],
            &MarketConfig::nem(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateFacilityId("G1".into()));
    }

    #[test]
    fn vre_with_inertia_is_rejected() {
        let mut vre = Facility::new("W", Technology::InverterVre, 100.0);
        vre.inertia_h = 2.0;
        vre.mva_rating = 100.0;
        let err = validate_and_build_registry(vec![vre], vec![], &MarketConfig::nem()).unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation(_)));

        let mut vre = Facility::new("W", Technology::InverterVre, 100.0);
        vre.virtual_inertia_mws = 10.0;
        assert!(validate_and_build_registry(vec![vre], vec![], &MarketConfig::nem()).is_err());
    }

    #[test]
    fn raise_offer_above_p_max_is_rejected() {
        let err = validate_and_build_registry(
            vec![sync_unit("G1", 3.0, 100.0)],
            vec![ServiceOffer::new("G1", ServiceKind::ContingencyRaiseFast, 150.0, 1.0)],
            &MarketConfig::nem(),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation(_)));
    }

    #[test]
    fn inertia_sums_kinetic_energy() {
        let reg = validate_and_build_registry(
            vec![sync_unit("A", 3.0, 500.0), sync_unit("B", 4.0, 250.0)],
            vec![],
            &MarketConfig::nem(),
        )
        .unwrap();
        let both: BTreeSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        assert_eq!(total_system_inertia(&reg, &both).unwrap(), 2_500.0);
        assert_eq!(total_system_inertia(&reg, &BTreeSet::new()).unwrap(), 0.0);
        let unknown: BTreeSet<String> = ["Z".to_string()].into();
        assert_eq!(
            total_system_inertia(&reg, &unknown),
            Err(ModelError::UnknownFacility("Z".into()))
        );
    }

    #[test]
    fn battery_virtual_inertia_credit() {
        let mut bess = Facility::new("HPR", Technology::InverterStorage, 150.0);
        bess.virtual_inertia_mws = 3_000.0;
        let reg = validate_and_build_registry(vec![bess], vec![], &MarketConfig::nem()).unwrap();
        let set: BTreeSet<String> = ["HPR".to_string()].into();
        assert_eq!(total_system_inertia(&reg, &set).unwrap(), 3_000.0);
    }

    #[test]
    fn service_names_round_trip_and_unknown_lists_valid() {
        for k in ServiceKind::ALL {
            assert_eq!(k.name().parse::<ServiceKind>().unwrap(), k);
        }
        let err = "raise_1s".parse::<ServiceKind>().unwrap_err();
        assert!(err.valid.contains("raise_6s"));
    }

    #[test]
    fn ffr_is_faster_than_fast_contingency() {
        let ffr = ServiceKind::FastFrequencyResponse.response_time_s().unwrap();
        let fast = ServiceKind::ContingencyRaiseFast.response_time_s().unwrap();
        assert!(ffr < fast);
        assert_eq!(ServiceKind::ALL.iter().filter(|k| k.is_contingency()).count(), 6);
    }

    #[test]
    fn availability_caps_at_p_max() {
        let mut w = Facility::new("W", Technology::InverterVre, 100.0);
        w.availability = vec![50.0, 150.0];
        assert_eq!(w.available_mw(0), 50.0);
        assert_eq!(w.available_mw(1), 100.0);
        assert_eq!(w.available_mw(2), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn inertia_is_additive(hs in proptest::collection::vec((0.5f64..8.0, 10.0f64..900.0), 1..8), split in 0usize..8) {
            let facs: Vec<Facility> = hs
                .iter()
                .enumerate()
                .map(|(i, (h, s))| sync_unit(&format!("U{i}"), *h, *s))
                .collect();
            let reg = validate_and_build_registry(facs, vec![], &MarketConfig::nem()).unwrap();
            let ids: Vec<String> = (0..hs.len()).map(|i| format!("U{i}")).collect();
            let k = split.min(ids.len());
            let a: BTreeSet<String> = ids[..k].iter().cloned().collect();
            let b: BTreeSet<String> = ids[k..].iter().cloned().collect();
            let all: BTreeSet<String> = ids.iter().cloned().collect();
            let lhs = total_system_inertia(&reg, &all).unwrap();
            let rhs = total_system_inertia(&reg, &a).unwrap() + total_system_inertia(&reg, &b).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0));
        }
    }
}
