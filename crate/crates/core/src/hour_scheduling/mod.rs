//! Hour-Scheduling contract allocation.
//!
//! Fleets offer contracts `(hhp, ℓ kW, fine f)` with a per-kW bid. For every
//! offer the platform computes, once, the payment it would receive if
//! accepted: the bid of the contract that completes the demand covering set
//! once the offering fleet is removed from the book. The acceptance loop then
//! repeatedly picks the hhp whose best offer has the largest payment-minus-bid
//! margin, accepts its lowest bid, and eliminates the fleet's other offers of
//! the same quantity in the same peak block. Accepted contracts are paid the
//! precomputed amount.

mod allocate;
mod bids;
mod covering;
mod deviation;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::market_data::{BlockLabel, DemandProfile, PeakBlock};
pub use allocate::{
    allocate, allocate_with, AcceptedContract, AcceptedRecord, Allocation, AllocationRecord,
    AllocationStats, Elimination, EliminationReason, EliminationRecord, MarketContext,
};
pub use bids::{estimate_success_probability, expected_covered_quantity, truthful_bid};
pub use covering::{demand_covering_set, externality_payment, CoverMember, CoveringSet};
pub use deviation::{deviation_utility, fleet_utility, FleetPrivateInfo, PrivateBook};

use crate::HHP_PER_DAY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OfferError {
    #[error("penalty {penalty} must be positive for the success probability to be defined")]
    ProbabilityUndefined { penalty: f64 },
    #[error("bid {bid} exceeds penalty {penalty}, implying a negative success probability")]
    NegativeProbability { bid: f64, penalty: f64 },
    #[error("quantity {0} kW must be positive")]
    NonPositiveQuantity(f64),
    #[error("hhp index {0} outside 0..48")]
    HhpOutOfRange(usize),
    #[error("{field} is not a finite number")]
    NonFinite { field: &'static str },
    #[error("success probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("penalty {0} must be non-negative")]
    NegativePenalty(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OfferId(pub u64);

impl fmt::Display for OfferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FleetId(pub String);

impl FleetId {
    pub fn new(id: impl Into<String>) -> Self {
        FleetId(id.into())
    }
}

impl fmt::Display for FleetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A half-hour period of a trading day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hhp {
    pub day: NaiveDate,
    pub index: usize,
}

impl Hhp {
    pub fn new(day: NaiveDate, index: usize) -> Result<Self, OfferError> {
        if index >= HHP_PER_DAY {
            return Err(OfferError::HhpOutOfRange(index));
        }
        Ok(Hhp { day, index })
    }
}

impl fmt::Display for Hhp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let minutes = self.index * 30;
        write!(
            f,
            "{} {:02}:{:02}-{:02}:{:02}",
            self.day,
            minutes / 60,
            minutes % 60,
            (minutes + 30) / 60,
            (minutes + 30) % 60
        )
    }
}

/// One offered contract: export `quantity_kw` at an hhp for a per-kW bid,
/// paying `penalty_pence_per_kw` per kW on default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractOffer {
    pub id: OfferId,
    pub fleet_id: FleetId,
    pub date: NaiveDate,
    pub hhp_index: usize,
    pub quantity_kw: f64,
    pub penalty_pence_per_kw: f64,
    pub bid_pence_per_kw: f64,
}

impl ContractOffer {
    pub fn hhp(&self) -> Hhp {
        Hhp {
            day: self.date,
            index: self.hhp_index,
        }
    }

    /// Platform-observable lower bound on fulfilment, derived from bid and fine.
    pub fn success_probability(&self) -> Result<f64, OfferError> {
        estimate_success_probability(self.bid_pence_per_kw, self.penalty_pence_per_kw)
    }

    /// `ℓ · p̂`
    pub fn expected_kw(&self) -> Result<f64, OfferError> {
        Ok(self.quantity_kw * self.success_probability()?)
    }

    /// Intake checks. A valid offer has a defined success probability.
    pub fn validate(&self) -> Result<(), OfferError> {
        if !self.quantity_kw.is_finite() {
            return Err(OfferError::NonFinite {
                field: "quantity_kw",
            });
        }
        if self.quantity_kw <= 0.0 {
            return Err(OfferError::NonPositiveQuantity(self.quantity_kw));
        }
        if self.hhp_index >= HHP_PER_DAY {
            return Err(OfferError::HhpOutOfRange(self.hhp_index));
        }
        self.success_probability().map(|_| ())
    }
}

/// Wholesale supply at an hhp: certain delivery, unlimited quantity, priced
/// at the spot market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WholesaleBackstop {
    pub hhp_index: usize,
    pub price_pence_per_kw: f64,
}
