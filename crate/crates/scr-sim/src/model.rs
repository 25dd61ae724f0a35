//! Domain types and the mechanical rules of the SCR cycle: production,
//! harvest allocation, consumption, and one-period goods expiry.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::rational::{Rat, rat};

/// One of the `n` goods kinds, identified by its index in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GoodsKind(pub usize);

impl fmt::Display for GoodsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "G{}", self.0)
    }
}

/// A quantity of one goods kind with an age in periods since production.
///
/// Goods keep for exactly one period: a lot whose age reaches 1 at period close
/// is removed as waste. Live inventories therefore only ever contain age-0 lots;
/// age 1 exists transiently inside the close step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoodsLot {
    pub kind: GoodsKind,
    pub quantity: u64,
    pub age: u8,
}

impl GoodsLot {
    pub fn fresh(kind: GoodsKind, quantity: u64) -> Self {
        Self { kind, quantity, age: 0 }
    }

    /// Advances the lot by one period close. Returns the expired quantity and
    /// `None` for the survivor: nothing outlives its production period.
    pub fn age_one_period(self) -> (Option<GoodsLot>, u64) {
        let aged = GoodsLot { age: self.age + 1, ..self };
        if aged.age >= 1 {
            (None, aged.quantity)
        } else {
            (Some(aged), 0)
        }
    }
}

/// Per-kind quantities of age-0 goods held by one holder.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventory(BTreeMap<GoodsKind, u64>);

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn quantity(&self, kind: GoodsKind) -> u64 {
        self.0.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn add(&mut self, kind: GoodsKind, qty: u64) {
        if qty > 0 {
            *self.0.entry(kind).or_insert(0) += qty;
        }
    }

    /// Removes `qty` units of `kind`; errors if the holder does not have them.
    pub fn remove(&mut self, kind: GoodsKind, qty: u64) -> Result<(), ModelError> {
        if qty == 0 {
            return Ok(());
        }
        match self.0.get_mut(&kind) {
            Some(held) if *held >= qty => {
                *held -= qty;
                if *held == 0 {
                    self.0.remove(&kind);
                }
                Ok(())
            }
            held => Err(ModelError::InsufficientGoods {
                kind,
                requested: qty,
                held: held.map(|h| *h).unwrap_or(0),
            }),
        }
    }

    /// Non-zero (kind, quantity) pairs in kind order.
    pub fn iter(&self) -> impl Iterator<Item = (GoodsKind, u64)> + '_ {
        self.0.iter().map(|(k, q)| (*k, *q))
    }

    /// Empties the inventory at period close, returning the expired unit count.
    pub fn expire_all(&mut self) -> u64 {
        let waste = self.total();
        self.0.clear();
        waste
    }
}

/// Economic role: a productive participant grows exactly one goods kind from its
/// seed stock; a non-productive one only consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Productive { kind: GoodsKind, seeds: u64 },
    NonProductive,
}

/// An economic agent with an inventory of seeds, consumables, reservation goods,
/// and currency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Participant {
    pub id: usize,
    pub role: Role,
    pub consumables: Inventory,
    pub reservation: Inventory,
    pub currency_balance: u64,
}

impl Participant {
    pub fn productive(id: usize, kind: GoodsKind, seeds: u64) -> Self {
        Self {
            id,
            role: Role::Productive { kind, seeds },
            consumables: Inventory::new(),
            reservation: Inventory::new(),
            currency_balance: 0,
        }
    }

    pub fn non_productive(id: usize) -> Self {
        Self {
            id,
            role: Role::NonProductive,
            consumables: Inventory::new(),
            reservation: Inventory::new(),
            currency_balance: 0,
        }
    }

    pub fn produces(&self) -> Option<GoodsKind> {
        match &self.role {
            Role::Productive { kind, .. } => Some(*kind),
            Role::NonProductive => None,
        }
    }

    pub fn seeds(&self) -> u64 {
        match &self.role {
            Role::Productive { seeds, .. } => *seeds,
            Role::NonProductive => 0,
        }
    }

    pub fn set_seeds(&mut self, qty: u64) {
        if let Role::Productive { seeds, .. } = &mut self.role {
            *seeds = qty;
        }
    }
}

/// Currency specification: face value and the realistic cost embodied per unit,
/// both in goods-units. `0 <= actual_cost <= face_value` and `face_value > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurrencySpec {
    face_value: Rat,
    actual_cost: Rat,
}

impl CurrencySpec {
    pub fn new(face_value: Rat, actual_cost: Rat) -> Result<Self, ModelError> {
        if face_value <= rat(0) || actual_cost < rat(0) || actual_cost > face_value {
            return Err(ModelError::InvalidCurrencySpec { face_value, actual_cost });
        }
        Ok(Self { face_value, actual_cost })
    }

    /// Costless credit symbol: face value 1, actual cost 0.
    pub fn ideal() -> Self {
        Self { face_value: rat(1), actual_cost: rat(0) }
    }

    pub fn face_value(&self) -> Rat {
        self.face_value
    }

    pub fn actual_cost(&self) -> Rat {
        self.actual_cost
    }
}

/// Static parameters of the economy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EconomyConfig {
    /// Productive participant count (and goods-kind count).
    pub n: usize,
    /// Replicas per seed unit in the one-body cycle. Many-body modes derive
    /// `n + 2` so the harvest splits exactly into S=1, C=n, R=1.
    pub productivity: u64,
    /// Transferable consumption units per producer per period (C portion).
    pub c_portion: u64,
    /// Interest gate: saving-replacement happens only when positive.
    pub interest_rate: Rat,
    pub currency: CurrencySpec,
    /// Linear liquidity parameters; 1 and 0 in the base model.
    pub alpha: Rat,
    pub beta: Rat,
    /// Transactions per transferable good in the reformed quantity equation.
    pub gamma: Rat,
}

impl EconomyConfig {
    pub fn one_body() -> Self {
        Self {
            n: 1,
            productivity: 3,
            c_portion: 1,
            interest_rate: rat(1),
            currency: CurrencySpec::ideal(),
            alpha: rat(1),
            beta: rat(0),
            gamma: rat(2),
        }
    }

    pub fn many_body(n: usize) -> Self {
        Self {
            n,
            productivity: n as u64 + 2,
            c_portion: n as u64,
            interest_rate: rat(1),
            currency: CurrencySpec::ideal(),
            alpha: rat(1),
            beta: rat(0),
            gamma: rat(2),
        }
    }
}

/// How a harvest is split into seed, consumption and reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarvestPolicy {
    /// S=1, C=1, R=1.
    OneBody,
    /// S=1, C=c_portion, R=1.
    ManyBody { c_portion: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("harvest of {harvest} cannot cover the minimum split of {minimum}")]
    InsufficientHarvest { harvest: u64, minimum: u64 },
    #[error("currency spec invalid: face value {face_value}, actual cost {actual_cost}")]
    InvalidCurrencySpec { face_value: Rat, actual_cost: Rat },
    #[error("{requested} units of {kind} requested but only {held} held")]
    InsufficientGoods { kind: GoodsKind, requested: u64, held: u64 },
}

/// Invests seeds and returns the fresh harvest: `seeds * productivity` age-0
/// units. The seeds are consumed. Zero seeds is legal and yields zero.
pub fn produce(seeds: u64, productivity: u64) -> u64 {
    seeds * productivity
}

/// Splits a harvest into (S, C, R) per the policy. Leftover units beyond the
/// minimum split are appended to C.
pub fn allocate_harvest(harvest: u64, policy: HarvestPolicy) -> Result<(u64, u64, u64), ModelError> {
    let (s, c, r) = match policy {
        HarvestPolicy::OneBody => (1, 1, 1),
        HarvestPolicy::ManyBody { c_portion } => (1, c_portion, 1),
    };
    let minimum = s + c + r;
    if harvest < minimum {
        return Err(ModelError::InsufficientHarvest { harvest, minimum });
    }
    Ok((s, c + (harvest - minimum), r))
}

/// Outcome of one participant's consumption step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsumeOutcome {
    Fulfilled,
    /// The goods kinds the participant could not cover.
    Starved(Vec<GoodsKind>),
}

/// Consumes one unit of every goods kind in `[0, n)` from the participant's
/// consumables. Deducts only on full fulfilment; otherwise reports every
/// missing kind and leaves the inventory untouched.
pub fn consume(participant: &mut Participant, n: usize) -> ConsumeOutcome {
    let missing: Vec<GoodsKind> = (0..n)
        .map(GoodsKind)
        .filter(|k| participant.consumables.quantity(*k) < 1)
        .collect();
    if !missing.is_empty() {
        return ConsumeOutcome::Starved(missing);
    }
    for k in 0..n {
        participant
            .consumables
            .remove(GoodsKind(k), 1)
            .expect("availability checked above");
    }
    ConsumeOutcome::Fulfilled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    #[test]
    fn produce_multiplies_seeds() {
        assert_eq!(produce(1, 3), 3);
        assert_eq!(produce(0, 3), 0);
        assert_eq!(produce(2, 5), 10);
    }

    #[test]
    fn one_body_harvest_splits_evenly() {
        assert_eq!(allocate_harvest(3, HarvestPolicy::OneBody).unwrap(), (1, 1, 1));
    }

    #[test]
    fn many_body_harvest_covers_c_portion() {
        assert_eq!(
            allocate_harvest(5, HarvestPolicy::ManyBody { c_portion: 3 }).unwrap(),
            (1, 3, 1)
        );
    }

    #[test]
    fn leftover_harvest_goes_to_consumption() {
        assert_eq!(allocate_harvest(5, HarvestPolicy::OneBody).unwrap(), (1, 3, 1));
    }

    #[test]
    fn short_harvest_is_an_error() {
        assert_eq!(
            allocate_harvest(2, HarvestPolicy::OneBody),
            Err(ModelError::InsufficientHarvest { harvest: 2, minimum: 3 })
        );
    }

    #[test]
    fn consume_deducts_full_bundle() {
        let mut p = Participant::productive(0, GoodsKind(0), 1);
        for k in 0..3 {
            p.consumables.add(GoodsKind(k), 1);
        }
        assert_eq!(consume(&mut p, 3), ConsumeOutcome::Fulfilled);
        assert!(p.consumables.is_empty());
    }

    #[test]
    fn consume_one_body() {
        let mut p = Participant::productive(0, GoodsKind(0), 1);
        p.consumables.add(GoodsKind(0), 1);
        assert_eq!(consume(&mut p, 1), ConsumeOutcome::Fulfilled);
    }

    #[test]
    fn missing_kinds_starve_without_deducting() {
        let mut p = Participant::productive(0, GoodsKind(0), 1);
        p.consumables.add(GoodsKind(0), 2);
        p.consumables.add(GoodsKind(1), 1);
        assert_eq!(consume(&mut p, 3), ConsumeOutcome::Starved(vec![GoodsKind(2)]));
        assert_eq!(p.consumables.quantity(GoodsKind(0)), 2);
        assert_eq!(p.consumables.quantity(GoodsKind(1)), 1);
    }

    #[test]
    fn lots_expire_at_first_close_after_production() {
        let lot = GoodsLot::fresh(GoodsKind(0), 1);
        let (survivor, waste) = lot.age_one_period();
        assert_eq!(survivor, None);
        assert_eq!(waste, 1);
    }

    #[test]
    fn empty_inventory_expires_to_zero_waste() {
        let mut inv = Inventory::new();
        assert_eq!(inv.expire_all(), 0);
    }

    #[test]
    fn inventory_expiry_counts_all_units() {
        let mut inv = Inventory::new();
        inv.add(GoodsKind(0), 2);
        inv.add(GoodsKind(3), 1);
        assert_eq!(inv.expire_all(), 3);
        assert!(inv.is_empty());
    }

    #[test]
    fn inventory_remove_guards_against_negative_stock() {
        let mut inv = Inventory::new();
        inv.add(GoodsKind(1), 1);
        assert!(inv.remove(GoodsKind(1), 2).is_err());
        assert!(inv.remove(GoodsKind(0), 1).is_err());
        assert!(inv.remove(GoodsKind(1), 1).is_ok());
        assert!(inv.is_empty());
    }

    #[test]
    fn currency_spec_rejects_cost_above_face() {
        assert!(CurrencySpec::new(rat(1), ratio(5, 4)).is_err());
        assert!(CurrencySpec::new(rat(0), rat(0)).is_err());
        assert!(CurrencySpec::new(rat(1), ratio(1, 4)).is_ok());
    }
}
