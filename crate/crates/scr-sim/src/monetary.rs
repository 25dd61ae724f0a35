//! Currency semantics: saving-replacement, efficiency, liquidity, money demand,
//! and the two inflation indices.

use num_traits::Zero;
use thiserror::Error;

use crate::model::CurrencySpec;
use crate::rational::{floor_u64, rat, Rat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonetaryError {
    #[error("transaction currency requirement is zero; index undefined")]
    ZeroRequired,
    #[error("per-period reservation is zero; index undefined")]
    ZeroReservation,
}

/// Global currency accounting. Everything ever issued stays in the system:
/// `total_issued = circulating balances + environment_redeemed`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurrencyLedger {
    pub total_issued: u64,
    pub environment_redeemed: u64,
}

impl CurrencyLedger {
    pub fn issue(&mut self, units: u64) {
        self.total_issued += units;
    }

    pub fn redeem(&mut self, units: u64) {
        self.environment_redeemed += units;
    }
}

/// Fraction of a goods unit each currency unit actually frees:
/// `(face_value - actual_cost) / face_value`, in `[0, 1]`.
pub fn efficiency(spec: &CurrencySpec) -> Rat {
    (spec.face_value() - spec.actual_cost()) / spec.face_value()
}

/// Non-productive participants supportable per period by `productive_count`
/// producers at the given efficiency: `floor(eff * productive_count)`.
pub fn supportable_np(eff: Rat, productive_count: u64) -> u64 {
    floor_u64(&(eff * rat(productive_count as i64)))
}

/// Step gate on the interest rate: reservation currency is only demanded when
/// holding it beats holding goods that rot, i.e. for any positive rate.
pub fn interest_gate(interest_rate: Rat) -> bool {
    interest_rate > Rat::zero()
}

/// Liquidity trapped in participants as permanent reservation currency:
/// `step(i) * (alpha * r_per_period * t + beta)`.
pub fn liquidity(interest_rate: Rat, r_per_period: u64, t: u64, alpha: Rat, beta: Rat) -> Rat {
    if !interest_gate(interest_rate) {
        return rat(0);
    }
    alpha * rat(r_per_period as i64) * rat(t as i64) + beta
}

/// Total money demanded for reservation and transaction:
/// `liquidity + gamma * transferable_goods`.
pub fn money_demand(liquidity: Rat, gamma: Rat, transferable_goods: u64) -> Rat {
    liquidity + gamma * rat(transferable_goods as i64)
}

/// Circulation (type I) inflation index: issued over required transaction
/// currency. 1 is parity; above 1 the surplus lands in the nominal price;
/// below 1 the exchange protocol cannot pay full value.
pub fn type1_index(issued: u64, required: u64) -> Result<Rat, MonetaryError> {
    if required == 0 {
        return Err(MonetaryError::ZeroRequired);
    }
    Ok(rat(issued as i64) / rat(required as i64))
}

pub fn is_under_supply(index: Rat) -> bool {
    index < rat(1)
}

/// Reservation (type II) inflation index: accumulated reservation currency
/// against one period's perishable reservation goods, `L / R`. Grows like `t`
/// in the constant economy.
pub fn type2_index(liquidity: Rat, r_per_period: u64) -> Result<Rat, MonetaryError> {
    if r_per_period == 0 {
        return Err(MonetaryError::ZeroReservation);
    }
    Ok(liquidity / rat(r_per_period as i64))
}

/// Pooled saving-replacement accounting.
///
/// Each period every productive participant swaps its reservation unit out for
/// one currency unit; the freed value accrues here as an exact rational and
/// releases as whole goods units when it crosses integer thresholds. With an
/// ideal currency one unit releases per swap; with `eff < 1` the currency
/// system's own cost absorbs the remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrfPool {
    eff: Rat,
    accrued: Rat,
    released: u64,
}

impl SrfPool {
    pub fn new(eff: Rat) -> Self {
        Self { eff, accrued: rat(0), released: 0 }
    }

    /// Registers `swaps` reservation units arriving this period and returns
    /// how many whole goods units are released for general use.
    pub fn absorb(&mut self, swaps: u64) -> u64 {
        self.accrued += self.eff * rat(swaps as i64);
        let total = floor_u64(&self.accrued);
        let newly = total - self.released;
        self.released = total;
        newly
    }

    /// Whole goods units released so far.
    pub fn released(&self) -> u64 {
        self.released
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn spec(face: i64, cost_num: i64, cost_den: i64) -> CurrencySpec {
        CurrencySpec::new(rat(face), ratio(cost_num, cost_den)).unwrap()
    }

    #[test]
    fn efficiency_boundaries() {
        assert_eq!(efficiency(&spec(1, 0, 1)), rat(1));
        assert_eq!(efficiency(&spec(1, 1, 1)), rat(0));
        assert_eq!(efficiency(&spec(1, 1, 4)), ratio(3, 4));
    }

    #[test]
    fn supportable_np_follows_efficiency() {
        assert_eq!(supportable_np(rat(1), 5), 5);
        assert_eq!(supportable_np(rat(0), 7), 0);
        assert_eq!(supportable_np(ratio(3, 4), 4), 3);
    }

    #[test]
    fn liquidity_is_linear_when_gated_open() {
        assert_eq!(liquidity(ratio(1, 2), 1, 5, rat(1), rat(0)), rat(5));
        assert_eq!(liquidity(rat(0), 1, 5, rat(1), rat(0)), rat(0));
        assert_eq!(liquidity(ratio(1, 1_000_000_000), 1, 1, rat(1), rat(0)), rat(1));
    }

    #[test]
    fn money_demand_sums_both_terms() {
        assert_eq!(money_demand(rat(5), rat(2), 3), rat(11));
        assert_eq!(money_demand(rat(0), rat(2), 0), rat(0));
        // The transaction term becomes negligible as liquidity accumulates.
        let e_d = money_demand(rat(100), rat(2), 3);
        assert_eq!(e_d, rat(106));
        assert_eq!(rat(100) / e_d, ratio(50, 53));
    }

    #[test]
    fn type1_ratios() {
        assert_eq!(type1_index(6, 6).unwrap(), rat(1));
        assert_eq!(type1_index(12, 6).unwrap(), rat(2));
        let under = type1_index(3, 6).unwrap();
        assert_eq!(under, ratio(1, 2));
        assert!(is_under_supply(under));
        assert!(!is_under_supply(rat(1)));
        assert_eq!(type1_index(1, 0), Err(MonetaryError::ZeroRequired));
    }

    #[test]
    fn type2_tracks_elapsed_periods() {
        assert_eq!(type2_index(rat(1), 1).unwrap(), rat(1));
        assert_eq!(type2_index(rat(7), 1).unwrap(), rat(7));
        assert_eq!(type2_index(rat(0), 1).unwrap(), rat(0));
        assert_eq!(type2_index(rat(1), 0), Err(MonetaryError::ZeroReservation));
    }

    #[test]
    fn ideal_currency_frees_one_unit_per_swap() {
        let mut pool = SrfPool::new(rat(1));
        assert_eq!(pool.absorb(1), 1);
        assert_eq!(pool.absorb(1), 1);
        assert_eq!(pool.released(), 2);
    }

    #[test]
    fn fractional_efficiency_accumulates_to_whole_units() {
        let mut pool = SrfPool::new(ratio(3, 4));
        let per_period: Vec<u64> = (0..4).map(|_| pool.absorb(1)).collect();
        assert_eq!(per_period, vec![0, 1, 1, 1]);
        assert_eq!(pool.released(), 3);
    }

    #[test]
    fn null_efficiency_frees_nothing() {
        let mut pool = SrfPool::new(rat(0));
        for _ in 0..10 {
            assert_eq!(pool.absorb(1), 0);
        }
        assert_eq!(pool.released(), 0);
    }

    #[test]
    fn currency_ledger_tracks_issue_and_redeem() {
        let mut ledger = CurrencyLedger::default();
        ledger.issue(6);
        ledger.issue(3);
        ledger.redeem(2);
        assert_eq!(ledger.total_issued, 9);
        assert_eq!(ledger.environment_redeemed, 2);
    }
}
