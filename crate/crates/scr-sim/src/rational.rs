//! Exact rational arithmetic helpers.
//!
//! All non-integer quantities in the simulator (face values, rates, dispersities,
//! indices) are `Ratio<i64>`. Formatting and parsing are pinned here so that CSV
//! and config files are byte-stable: integers print bare, everything else prints
//! as a reduced `p/q`.

use num_rational::Ratio;
use num_traits::Zero;

pub type Rat = Ratio<i64>;

/// Rational from an integer.
pub fn rat(n: i64) -> Rat {
    Ratio::from_integer(n)
}

/// Rational from a numerator/denominator pair. Panics on zero denominator.
pub fn ratio(p: i64, q: i64) -> Rat {
    Ratio::new(p, q)
}

/// Canonical text form: `5`, `-3`, `3/4`, `-7/2`.
pub fn format_rat(r: &Rat) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses the canonical text form produced by [`format_rat`].
///
/// Accepts `p` and `p/q` with optional sign on the numerator; rejects anything
/// else (decimals in particular) so config files stay exact.
pub fn parse_rat(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty rational".to_string());
    }
    match s.split_once('/') {
        None => s
            .parse::<i64>()
            .map(rat)
            .map_err(|e| format!("bad integer `{s}`: {e}")),
        Some((p, q)) => {
            let p: i64 = p
                .trim()
                .parse()
                .map_err(|e| format!("bad numerator `{p}`: {e}"))?;
            let q: i64 = q
                .trim()
                .parse()
                .map_err(|e| format!("bad denominator `{q}`: {e}"))?;
            if q == 0 {
                return Err(format!("zero denominator in `{s}`"));
            }
            Ok(Ratio::new(p, q))
        }
    }
}

/// Floor of a non-negative rational as u64.
pub fn floor_u64(r: &Rat) -> u64 {
    debug_assert!(!r.is_negative_rat(), "floor_u64 on negative rational");
    r.floor().to_integer() as u64
}

trait NegCheck {
    fn is_negative_rat(&self) -> bool;
}

impl NegCheck for Rat {
    fn is_negative_rat(&self) -> bool {
        *self < Rat::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_integers_bare_and_fractions_reduced() {
        assert_eq!(format_rat(&rat(5)), "5");
        assert_eq!(format_rat(&rat(-3)), "-3");
        assert_eq!(format_rat(&ratio(3, 4)), "3/4");
        assert_eq!(format_rat(&ratio(2, 4)), "1/2");
        assert_eq!(format_rat(&ratio(-7, 2)), "-7/2");
        assert_eq!(format_rat(&ratio(4, 2)), "2");
    }

    #[test]
    fn parses_what_it_formats() {
        for r in [rat(0), rat(17), rat(-4), ratio(1, 3), ratio(-5, 6), ratio(100, 7)] {
            assert_eq!(parse_rat(&format_rat(&r)).unwrap(), r);
        }
    }

    #[test]
    fn rejects_decimals_and_garbage() {
        assert!(parse_rat("0.25").is_err());
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("").is_err());
        assert!(parse_rat("x/y").is_err());
    }

    #[test]
    fn floor_of_fraction() {
        assert_eq!(floor_u64(&ratio(9, 4)), 2);
        assert_eq!(floor_u64(&rat(3)), 3);
        assert_eq!(floor_u64(&ratio(0, 5)), 0);
    }
}
