//! Deterministic discrete-period simulator of the SCR (seed-consumption-reservation)
//! economy.
//!
//! Every harvest splits into reinvestment seed (S), consumption (C) and a perishable
//! reservation (R). On top of that cycle the crate models two exchange protocols
//! (free-market barter and central-agency mediated exchange), the saving-replacement
//! function of currency, currency efficiency, money demand, and both inflation
//! indices. All quantities are integers and all rates are exact rationals, so every
//! reported number is an exact count — no floating point anywhere.
//!
//! The main entry point is [`engine::run_scenario`]; see the `examples/` directory
//! for one runnable demonstration per capability, and the `scr` binary for the
//! `simulate` / `verify` / `trace` command-line interface.

pub mod config;
pub mod engine;
pub mod exchange;
pub mod metrics;
pub mod model;
pub mod monetary;
pub mod oracle;
pub mod output;
pub mod rational;

pub mod cli;


pub use rational::Rat;
