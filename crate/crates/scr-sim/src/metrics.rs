//! Distribution metrics: dispersity, concentration, and the currency-goods
//! aggregation correlation of the exchange process.

use num_traits::Zero;
use thiserror::Error;

use crate::rational::{rat, Rat};

/// Per-holder quantities of a single asset. The holder set is the participants
/// plus the agency when one mediates the exchange; the unbounded environment
/// reservoir is never a holder row.
pub type HoldingsVector = Vec<u64>;

/// Per-holder expected quantities for the same asset, in the same holder order.
pub type ExpectationVector = Vec<Rat>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("holdings length {holdings} != expectation length {expectation}")]
    LengthMismatch { holdings: usize, expectation: usize },
    #[error("at least 2 holders required, got {0}")]
    TooFewHolders(usize),
    #[error("zero reference dispersity; concentration undefined")]
    ZeroDMax,
    #[error("insufficient data for correlation: {0}")]
    InsufficientData(&'static str),
}

/// Variance-style dispersity of a holding distribution against its expectation:
/// the sum of squared deviations over (holder count - 1). Zero iff the holdings
/// match the expectation exactly.
pub fn dispersity(holdings: &[u64], expectation: &[Rat]) -> Result<Rat, MetricsError> {
    if holdings.len() != expectation.len() {
        return Err(MetricsError::LengthMismatch {
            holdings: holdings.len(),
            expectation: expectation.len(),
        });
    }
    if holdings.len() < 2 {
        return Err(MetricsError::TooFewHolders(holdings.len()));
    }
    let sum: Rat = holdings
        .iter()
        .zip(expectation)
        .map(|(x, xe)| {
            let dev = rat(*x as i64) - xe;
            dev * dev
        })
        .sum();
    Ok(sum / rat(holdings.len() as i64 - 1))
}

/// Concentration percentage: `100 * d / d_max`. Never clamped; values above
/// 100 indicate a mischosen reference and are reported as-is.
pub fn concentration(d: Rat, d_max: Rat) -> Result<Rat, MetricsError> {
    if d_max.is_zero() {
        return Err(MetricsError::ZeroDMax);
    }
    Ok(rat(100) * d / d_max)
}

/// Reference maximum for concentration: the dispersity of the asset's holdings
/// at the start of the exchange phase.
pub fn reference_dmax(start_holdings: &[u64], expectation: &[Rat]) -> Result<Rat, MetricsError> {
    dispersity(start_holdings, expectation)
}

/// Sign of the correlation between currency and goods concentration changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationSign {
    Negative,
    NonNegative,
}

/// Correlates per-step changes of the two concentration series restricted to
/// samples after `t_k` and reports the sign. The series are indexed by sample
/// (0 = phase start, s = after transaction s) and must extend past `t_k` by at
/// least two steps. Errors when either restricted delta series has no variance.
pub fn aggregation_correlation(
    con_currency: &[Rat],
    con_goods: &[Rat],
    t_k: usize,
) -> Result<CorrelationSign, MetricsError> {
    if con_currency.len() != con_goods.len() {
        return Err(MetricsError::LengthMismatch {
            holdings: con_currency.len(),
            expectation: con_goods.len(),
        });
    }
    if con_currency.len() < t_k + 3 {
        return Err(MetricsError::InsufficientData("fewer than 2 steps past t_k"));
    }
    let deltas = |series: &[Rat]| -> Vec<Rat> {
        (t_k + 1..series.len())
            .map(|s| series[s] - series[s - 1])
            .collect()
    };
    let de = deltas(con_currency);
    let dg = deltas(con_goods);
    let m = rat(de.len() as i64);
    let mean_e: Rat = de.iter().sum::<Rat>() / m;
    let mean_g: Rat = dg.iter().sum::<Rat>() / m;
    if de.iter().all(|d| *d == mean_e) || dg.iter().all(|d| *d == mean_g) {
        return Err(MetricsError::InsufficientData("zero variance in a delta series"));
    }
    // The correlation denominator is positive, so the covariance carries the sign.
    let cov: Rat = de
        .iter()
        .zip(&dg)
        .map(|(a, b)| (*a - mean_e) * (*b - mean_g))
        .sum();
    if cov < Rat::zero() {
        Ok(CorrelationSign::Negative)
    } else {
        Ok(CorrelationSign::NonNegative)
    }
}
