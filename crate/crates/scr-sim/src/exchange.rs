//! The two exchange protocols: free-market barter over the complete pair graph,
//! and central-agency mediated exchange with currency, both producing exact
//! transaction ledgers.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{GoodsKind, Inventory};
use crate::rational::{rat, Rat};

/// A party to a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HolderId {
    Participant(usize),
    Agency,
    Environment,
}

impl fmt::Display for HolderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HolderId::Participant(i) => write!(f, "P{i}"),
            HolderId::Agency => write!(f, "A"),
            HolderId::Environment => write!(f, "ENV"),
        }
    }
}

/// Which step of the period a transfer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Reservation goods swapped out for currency at the environment.
    Srf,
    /// Goods delivered to the agency against currency.
    Sell,
    /// Goods bought back from the agency with currency.
    Buy,
    /// Direct goods-for-goods swap (free market, or the collapsed agency visit).
    Barter,
    /// Currency redeemed for goods at the environment.
    Emergency,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Srf => "srf",
            Phase::Sell => "sell",
            Phase::Buy => "buy",
            Phase::Barter => "barter",
            Phase::Emergency => "emergency",
        }
    }
}

/// One bilateral transfer.
///
/// Goods entries with positive quantity flow `from -> to`; negative entries
/// flow `to -> from` (a barter has one of each). `currency` is the payment
/// moving `to -> from`. `reservation` entries move reservation stock with the
/// same sign convention; they only appear when the optional reservation
/// exchange rides along with a barter swap. Every transaction moves at least
/// one unit of something.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub seq: usize,
    pub phase: Phase,
    pub from: HolderId,
    pub to: HolderId,
    pub goods: Vec<(GoodsKind, i64)>,
    pub reservation: Vec<(GoodsKind, i64)>,
    pub currency: i64,
}

/// Ordered record of all transfers in one period, with the phase markers of
/// the agency protocol. Markers are sample indices: `t_0 = 0` is the state
/// before any transaction, sample `s` is the state after transaction `s-1`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransactionLedger {
    pub transactions: Vec<Transaction>,
    pub t_k: Option<usize>,
}

impl TransactionLedger {
    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    fn push(
        &mut self,
        phase: Phase,
        from: HolderId,
        to: HolderId,
        goods: Vec<(GoodsKind, i64)>,
        reservation: Vec<(GoodsKind, i64)>,
        currency: i64,
    ) {
        debug_assert!(currency != 0 || goods.iter().any(|(_, q)| *q != 0));
        self.transactions.push(Transaction {
            seq: self.transactions.len(),
            phase,
            from,
            to,
            goods,
            reservation,
            currency,
        });
    }

    /// Transactions belonging to the exchange protocol proper.
    pub fn exchange_slice(&self) -> impl Iterator<Item = &Transaction> {
        self.transactions
            .iter()
            .filter(|t| matches!(t.phase, Phase::Sell | Phase::Buy | Phase::Barter))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExchangeError {
    #[error("exchange requires at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("participant {participant} does not hold the canonical post-harvest stock: {detail}")]
    PreconditionViolation { participant: usize, detail: String },
    #[error("agency holds {stock} currency but the protocol requires {required}")]
    InsufficientIssuance { stock: u64, required: u64 },
    #[error("buy phase demands {requested} of {kind} but the agency holds {available}")]
    StockMismatch { kind: GoodsKind, requested: u64, available: u64 },
    #[error("price {price} yields a non-integral currency flow for n={n}")]
    FractionalFlow { price: Rat, n: usize },
}

/// Pair ordering for the barter schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarterOrder {
    /// (0,1), (0,2), ..., (n-2,n-1): bit-reproducible by construction.
    Lexicographic,
    /// Deterministic shuffle of the pair list from the given seed.
    Seeded(u64),
}

/// Checks the canonical post-harvest holdings: participant `i` holds exactly
/// `c_portion` units of its own kind and nothing else in consumables.
fn check_canonical(consumables: &[Inventory], n: usize, c_portion: u64) -> Result<(), ExchangeError> {
    for (i, inv) in consumables.iter().enumerate().take(n) {
        let own = inv.quantity(GoodsKind(i));
        if own != c_portion || inv.total() != c_portion {
            return Err(ExchangeError::PreconditionViolation {
                participant: i,
                detail: format!(
                    "expected {c_portion} x G{i} only, found {} x G{i} of {} total",
                    own,
                    inv.total()
                ),
            });
        }
    }
    Ok(())
}

/// Runs the complete-graph barter schedule: every unordered pair swaps one unit
/// of each side's own kind exactly once, `n(n-1)/2` transactions in total.
///
/// When `reservations` is supplied, each pair transaction additionally swaps
/// the two sides' own-kind reservation units while they still hold them.
pub fn run_barter(
    consumables: &mut [Inventory],
    mut reservations: Option<&mut [Inventory]>,
    n: usize,
    order: BarterOrder,
) -> Result<TransactionLedger, ExchangeError> {
    if n < 2 {
        return Err(ExchangeError::TooFewParticipants(n));
    }
    check_canonical(consumables, n, n as u64)?;

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    if let BarterOrder::Seeded(seed) = order {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pairs.shuffle(&mut rng);
    }

    let mut ledger = TransactionLedger::default();
    for (i, j) in pairs {
        let gi = GoodsKind(i);
        let gj = GoodsKind(j);
        move_goods(&mut consumables[i], gi, 1, "barter precondition")?;
        consumables[j].add(gi, 1);
        move_goods(&mut consumables[j], gj, 1, "barter precondition")?;
        consumables[i].add(gj, 1);
        let goods = vec![(gi, 1i64), (gj, -1i64)];

        let mut reservation = Vec::new();
        if let Some(res) = reservations.as_deref_mut() {
            if res[i].quantity(gi) >= 1 && res[j].quantity(gj) >= 1 {
                res[i].remove(gi, 1).expect("checked");
                res[j].add(gi, 1);
                res[j].remove(gj, 1).expect("checked");
                res[i].add(gj, 1);
                reservation = vec![(gi, 1i64), (gj, -1i64)];
            }
        }

        ledger.push(
            Phase::Barter,
            HolderId::Participant(i),
            HolderId::Participant(j),
            goods,
            reservation,
            0,
        );
    }
    Ok(ledger)
}

fn move_goods(inv: &mut Inventory, kind: GoodsKind, qty: u64, what: &str) -> Result<(), ExchangeError> {
    inv.remove(kind, qty).map_err(|_| ExchangeError::PreconditionViolation {
        participant: kind.0,
        detail: format!("{what}: missing {qty} x {kind}"),
    })
}

/// How much exchange currency the agency prepares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssuanceVariant {
    /// `n(n-1)`: every seller is paid `n-1` per unit price, the buy phase
    /// returns everything, and the visit count is `2n`.
    UniformCredit,
    /// `(n-1)^2` as printed in the source model: the last participant's sell
    /// and buy collapse into one direct barter visit, giving `2n-1` visits.
    LiteralPaper,
}

impl IssuanceVariant {
    pub fn label(&self) -> &'static str {
        match self {
            IssuanceVariant::UniformCredit => "uniform_credit",
            IssuanceVariant::LiteralPaper => "literal_paper",
        }
    }
}

/// Exchange currency units the agency must stock for the variant's protocol.
pub fn required_issuance(n: usize, variant: IssuanceVariant) -> u64 {
    let n = n as u64;
    match variant {
        IssuanceVariant::LiteralPaper => (n - 1) * (n - 1),
        IssuanceVariant::UniformCredit => n * (n - 1),
    }
}

/// The central exchange holder: a currency stock, a goods stock, and the
/// issuance rule it operates under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgencyState {
    pub currency_stock: u64,
    pub goods_stock: Inventory,
    pub issuance_variant: IssuanceVariant,
}

impl AgencyState {
    pub fn new(variant: IssuanceVariant, stock: u64) -> Self {
        Self {
            currency_stock: stock,
            goods_stock: Inventory::new(),
            issuance_variant: variant,
        }
    }
}

/// Runs the agency-mediated exchange.
///
/// Sell phase: participants sequentially deliver their `n-1` transferable
/// units and are paid at the nominal price; `t_k` marks the sample where the
/// agency's currency stock is exhausted. Buy phase: participants sequentially
/// buy one unit of every foreign kind back. Under `LiteralPaper` issuance the
/// last participant's two visits collapse into one direct barter visit.
///
/// The nominal price is `stock / required_issuance`; a stock below the
/// requirement is an error, anything above scales the price linearly.
pub fn run_agency(
    consumables: &mut [Inventory],
    currency: &mut [u64],
    agency: &mut AgencyState,
    n: usize,
) -> Result<TransactionLedger, ExchangeError> {
    if n < 2 {
        return Err(ExchangeError::TooFewParticipants(n));
    }
    check_canonical(consumables, n, n as u64)?;
    let variant = agency.issuance_variant;
    let required = required_issuance(n, variant);
    if agency.currency_stock < required {
        return Err(ExchangeError::InsufficientIssuance {
            stock: agency.currency_stock,
            required,
        });
    }
    let price = rat(agency.currency_stock as i64) / rat(required as i64);
    let per_visit = price * rat(n as i64 - 1);
    if !per_visit.is_integer() {
        return Err(ExchangeError::FractionalFlow { price, n });
    }
    let per_visit = per_visit.to_integer() as u64;

    let mut ledger = TransactionLedger::default();
    let sellers = match variant {
        IssuanceVariant::UniformCredit => n,
        IssuanceVariant::LiteralPaper => n - 1,
    };

    // Sell phase.
    for i in 0..sellers {
        let kind = GoodsKind(i);
        let qty = n as u64 - 1;
        move_goods(&mut consumables[i], kind, qty, "agency sell")?;
        agency.goods_stock.add(kind, qty);
        debug_assert!(agency.currency_stock >= per_visit);
        agency.currency_stock -= per_visit;
        currency[i] += per_visit;
        ledger.push(
            Phase::Sell,
            HolderId::Participant(i),
            HolderId::Agency,
            vec![(kind, qty as i64)],
            per_visit as i64,
        );
        if agency.currency_stock == 0 && ledger.t_k.is_none() {
            ledger.t_k = Some(ledger.len());
        }
    }

    // Collapsed visit: the unpaid last participant barters directly.
    if let IssuanceVariant::LiteralPaper = variant {
        let i = n - 1;
        let own = GoodsKind(i);
        let qty = n as u64 - 1;
        move_goods(&mut consumables[i], own, qty, "agency barter visit")?;
        agency.goods_stock.add(own, qty);
        let mut goods = vec![(own, qty as i64)];
        for k in (0..n).map(GoodsKind).filter(|k| *k != own) {
            take_from_agency(agency, k, 1)?;
            consumables[i].add(k, 1);
            goods.push((k, -1));
        }
        ledger.push(Phase::Barter, HolderId::Participant(i), HolderId::Agency, goods, 0);
    }

    // Buy phase.
    for i in 0..sellers {
        let own = GoodsKind(i);
        let mut goods = Vec::new();
        for k in (0..n).map(GoodsKind).filter(|k| *k != own) {
            take_from_agency(agency, k, 1)?;
            consumables[i].add(k, 1);
            goods.push((k, 1i64));
        }
        debug_assert!(currency[i] >= per_visit);
        currency[i] -= per_visit;
        agency.currency_stock += per_visit;
        ledger.push(
            Phase::Buy,
            HolderId::Agency,
            HolderId::Participant(i),
            goods,
            per_visit as i64,
        );
    }

    debug_assert!(agency.goods_stock.is_empty(), "agency retains goods after the buy phase");
    Ok(ledger)
}

fn take_from_agency(agency: &mut AgencyState, kind: GoodsKind, qty: u64) -> Result<(), ExchangeError> {
    let available = agency.goods_stock.quantity(kind);
    if available < qty {
        return Err(ExchangeError::StockMismatch { kind, requested: qty, available });
    }
    agency.goods_stock.remove(kind, qty).expect("checked");
    Ok(())
}

/// Nominal price paid per goods unit over the run's paid sells: total currency
/// the agency paid out divided by the units it bought. `None` when no sell was
/// paid in currency.
pub fn price_per_unit(ledger: &TransactionLedger) -> Option<Rat> {
    let (mut paid, mut units) = (0i64, 0i64);
    for t in &ledger.transactions {
        if t.phase == Phase::Sell {
            paid += t.currency;
            units += t.goods.iter().map(|(_, q)| q.max(&0)).sum::<i64>();
        }
    }
    if units == 0 {
        None
    } else {
        Some(rat(paid) / rat(units))
    }
}

/// Point-in-time holdings of the parties to an exchange, used to replay a
/// ledger transaction by transaction for metric sampling and conservation
/// checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldingsSnapshot {
    pub goods: Vec<Inventory>,
    pub currency: Vec<u64>,
    pub agency_goods: Inventory,
    pub agency_currency: u64,
}

impl HoldingsSnapshot {
    /// Per-holder quantities of one goods kind, participants first, then the
    /// agency row when requested.
    pub fn goods_vector(&self, kind: GoodsKind, include_agency: bool) -> Vec<u64> {
        let mut v: Vec<u64> = self.goods.iter().map(|inv| inv.quantity(kind)).collect();
        if include_agency {
            v.push(self.agency_goods.quantity(kind));
        }
        v
    }

    /// Per-holder currency, participants first, then the agency row.
    pub fn currency_vector(&self, include_agency: bool) -> Vec<u64> {
        let mut v = self.currency.clone();
        if include_agency {
            v.push(self.agency_currency);
        }
        v
    }

    /// Applies one exchange-phase transaction. Panics on flows the snapshot
    /// cannot cover; a ledger produced by this module always replays cleanly
    /// over the snapshot it started from.
    pub fn apply(&mut self, t: &Transaction) {
        let mut transfer_goods = |from: HolderId, to: HolderId, kind: GoodsKind, qty: u64| {
            self.goods_mut(from)
                .remove(kind, qty)
                .expect("ledger replay: goods flow exceeds holdings");
            self.goods_mut(to).add(kind, qty);
        };
        for (kind, qty) in &t.goods {
            if *qty > 0 {
                transfer_goods(t.from, t.to, *kind, *qty as u64);
            } else if *qty < 0 {
                transfer_goods(t.to, t.from, *kind, (-qty) as u64);
            }
        }
        if t.currency > 0 {
            self.move_currency(t.to, t.from, t.currency as u64);
        } else if t.currency < 0 {
            self.move_currency(t.from, t.to, (-t.currency) as u64);
        }
    }

    fn goods_mut(&mut self, holder: HolderId) -> &mut Inventory {
        match holder {
            HolderId::Participant(i) => &mut self.goods[i],
            HolderId::Agency => &mut self.agency_goods,
            HolderId::Environment => panic!("environment holdings are not replayed"),
        }
    }

    fn move_currency(&mut self, from: HolderId, to: HolderId, qty: u64) {
        {
            let src = self.currency_mut(from);
            assert!(*src >= qty, "ledger replay: currency flow exceeds balance");
            *src -= qty;
        }
        *self.currency_mut(to) += qty;
    }

    fn currency_mut(&mut self, holder: HolderId) -> &mut u64 {
        match holder {
            HolderId::Participant(i) => &mut self.currency[i],
            HolderId::Agency => &mut self.agency_currency,
            HolderId::Environment => panic!("environment holdings are not replayed"),
        }
    }
}
