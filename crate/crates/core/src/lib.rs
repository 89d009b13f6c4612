//! Contract clearing for vehicle-to-grid energy trading.
//!
//! Two mechanisms live here:
//!
//! - [`hour_scheduling`]: day-ahead / intra-day contract allocation. Fleets
//!   offer `(hhp, kW, fine)` contracts with a per-kW bid, the platform builds
//!   a demand covering set per half-hour period and pays each accepted
//!   contract the bid of the contract that would have replaced its fleet.
//! - [`balancing`]: payments for plugged-in EVs in the balancing market,
//!   driven by the probability that accepted contracts leave kW uncovered.
//!
//! [`market_data`] loads price series and demand profiles and splits a day
//! into peak and valley blocks. [`simulator`] generates fleet contract books
//! and runs whole trading days and competition sweeps.

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancing;
pub mod exec;
pub mod hour_scheduling;
pub mod market_data;
pub mod simulator;

pub use exec::Execution;

/// Number of half-hour periods in a trading day.
pub const HHP_PER_DAY: usize = 48;
