use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{allocate_with, truthful_bid, ContractOffer, MarketContext, OfferError, OfferId};
use crate::exec::Execution;

/// A fleet's private view of one contract. Never seen by the clearing engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetPrivateInfo {
    pub cost_pence_per_kw: f64,
    pub success_probability: f64,
}

impl FleetPrivateInfo {
    /// True expected cost per kW, `c + (1 − p)·f`.
    pub fn expected_cost(&self, penalty: f64) -> Result<f64, OfferError> {
        truthful_bid(self.cost_pence_per_kw, self.success_probability, penalty)
    }
}

pub type PrivateBook = BTreeMap<OfferId, FleetPrivateInfo>;

fn with_bid(offers: &[ContractOffer], offer: OfferId, bid: f64) -> Vec<ContractOffer> {
    offers
        .iter()
        .cloned()
        .map(|mut o| {
            if o.id == offer {
                o.bid_pence_per_kw = bid;
            }
            o
        })
        .collect()
}

/// Expected utility per kW of `offer` when it announces `announced_bid` and
/// every other offer keeps its bid: payment minus true expected cost if
/// accepted, zero otherwise.
///
/// Panics if `offer` is not in `offers`.
pub fn deviation_utility(
    offer: OfferId,
    announced_bid: f64,
    private: &FleetPrivateInfo,
    offers: &[ContractOffer],
    market: &MarketContext<'_>,
) -> Result<f64, OfferError> {
    let original = offers
        .iter()
        .find(|o| o.id == offer)
        .expect("offer must be in the book");
    let cost = private.expected_cost(original.penalty_pence_per_kw)?;
    let book = with_bid(offers, offer, announced_bid);
    let alloc = allocate_with(&book, market, Execution::Sequential);
    Ok(alloc
        .find(offer)
        .map_or(0.0, |a| a.payment_pence_per_kw - cost))
}

/// Total expected utility, in pence, of the fleet owning `offer` when that
/// offer announces `announced_bid`: `Σ (payment − true cost)·ℓ` over the
/// fleet's accepted contracts. `privates` must cover every offer of the fleet.
pub fn fleet_utility(
    offer: OfferId,
    announced_bid: f64,
    privates: &PrivateBook,
    offers: &[ContractOffer],
    market: &MarketContext<'_>,
) -> Result<f64, OfferError> {
    let fleet = &offers
        .iter()
        .find(|o| o.id == offer)
        .expect("offer must be in the book")
        .fleet_id;
    let book = with_bid(offers, offer, announced_bid);
    let alloc = allocate_with(&book, market, Execution::Sequential);
    let mut total = 0.0;
    for a in alloc.accepted.iter().filter(|a| &a.offer.fleet_id == fleet) {
        let private = privates
            .get(&a.offer.id)
            .expect("private info for every offer of the fleet");
        let cost = private.expected_cost(a.offer.penalty_pence_per_kw)?;
        total += (a.payment_pence_per_kw - cost) * a.offer.quantity_kw;
    }
    Ok(total)
}
