use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ContractOffer, FleetId, OfferError, OfferId, WholesaleBackstop};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoverMember {
    Offer {
        id: OfferId,
    },
    /// Wholesale top-up of exactly the kW still uncovered.
    Backstop {
        kw: f64,
    },
}

/// Cheapest-first set of offers whose expected kW covers an hhp's demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringSet {
    pub hhp_index: usize,
    pub members: Vec<CoverMember>,
    pub expected_kw: f64,
    pub total_bid_cost_pence: f64,
}

impl CoveringSet {
    pub fn offer_ids(&self) -> Vec<OfferId> {
        self.members
            .iter()
            .filter_map(|m| match m {
                CoverMember::Offer { id } => Some(*id),
                CoverMember::Backstop { .. } => None,
            })
            .collect()
    }

    pub fn backstop_kw(&self) -> f64 {
        self.members
            .iter()
            .map(|m| match m {
                CoverMember::Backstop { kw } => *kw,
                CoverMember::Offer { .. } => 0.0,
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BookEntry {
    /// Position in the caller's offer slice.
    pub offer: usize,
    pub id: OfferId,
    pub fleet: u32,
    pub bid: f64,
    pub quantity: f64,
    pub expected_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Marginal {
    /// Demand is zero; nothing is needed.
    Nothing,
    Offer(usize),
    Backstop,
}

#[derive(Debug, Clone)]
pub(crate) struct Walk {
    /// Positions into `HhpBook::entries`, in acceptance order.
    pub members: Vec<usize>,
    pub covered_kw: f64,
    pub backstop_kw: f64,
    pub marginal: Marginal,
}

/// Offers at one hhp, sorted by (bid, id), plus the wholesale backstop.
#[derive(Debug, Clone)]
pub(crate) struct HhpBook {
    pub hhp_index: usize,
    pub demand_kw: f64,
    pub backstop_price: f64,
    pub entries: Vec<BookEntry>,
}

impl HhpBook {
    pub fn new(
        hhp_index: usize,
        demand_kw: f64,
        backstop_price: f64,
        mut entries: Vec<BookEntry>,
    ) -> Self {
        entries.sort_by(|a, b| a.bid.total_cmp(&b.bid).then(a.id.cmp(&b.id)));
        HhpBook {
            hhp_index,
            demand_kw,
            backstop_price,
            entries,
        }
    }

    /// Greedy cover in ascending bid order. The backstop sits after every
    /// offer bidding at or below its price; offers priced above it are never
    /// reached. The first prefix whose expected kW reaches demand is kept,
    /// overshoot included.
    pub fn walk(&self, skip: impl Fn(&BookEntry) -> bool) -> Walk {
        let mut walk = Walk {
            members: Vec::new(),
            covered_kw: 0.0,
            backstop_kw: 0.0,
            marginal: Marginal::Nothing,
        };
        if self.demand_kw <= 0.0 {
            return walk;
        }
        for (pos, entry) in self.entries.iter().enumerate() {
            if entry.bid > self.backstop_price {
                break;
            }
            if entry.expected_kw <= 0.0 || skip(entry) {
                continue;
            }
            walk.members.push(pos);
            walk.covered_kw += entry.expected_kw;
            if walk.covered_kw >= self.demand_kw {
                walk.marginal = Marginal::Offer(pos);
                return walk;
            }
        }
        walk.backstop_kw = self.demand_kw - walk.covered_kw;
        walk.marginal = Marginal::Backstop;
        walk
    }

    /// Bid of the contract that completes the cover once `fleet` is gone.
    /// `None` when demand is zero.
    pub fn replacement_bid(&self, fleet: u32) -> Option<f64> {
        match self.walk(|e| e.fleet == fleet).marginal {
            Marginal::Nothing => None,
            Marginal::Offer(pos) => Some(self.entries[pos].bid),
            Marginal::Backstop => Some(self.backstop_price),
        }
    }

    pub fn to_covering_set(&self, walk: &Walk) -> CoveringSet {
        let mut members: Vec<CoverMember> = walk
            .members
            .iter()
            .map(|&p| CoverMember::Offer {
                id: self.entries[p].id,
            })
            .collect();
        let mut cost: f64 = walk
            .members
            .iter()
            .map(|&p| self.entries[p].bid * self.entries[p].quantity)
            .sum();
        let mut expected = walk.covered_kw;
        if walk.marginal == Marginal::Backstop {
            members.push(CoverMember::Backstop {
                kw: walk.backstop_kw,
            });
            cost += walk.backstop_kw * self.backstop_price;
            expected += walk.backstop_kw;
        }
        CoveringSet {
            hhp_index: self.hhp_index,
            members,
            expected_kw: expected,
            total_bid_cost_pence: cost,
        }
    }
}

/// Assigns each distinct fleet a small integer, in first-seen order.
#[derive(Debug, Default)]
pub(crate) struct FleetInterner {
    ids: BTreeMap<FleetId, u32>,
}

impl FleetInterner {
    pub fn intern(&mut self, fleet: &FleetId) -> u32 {
        let next = self.ids.len() as u32;
        *self.ids.entry(fleet.clone()).or_insert(next)
    }
}

fn single_hhp_book<'a>(
    hhp_index: usize,
    offers: impl IntoIterator<Item = &'a ContractOffer>,
    demand_kw: f64,
    backstop: &WholesaleBackstop,
    fleets: &mut FleetInterner,
) -> Result<HhpBook, OfferError> {
    let mut entries = Vec::new();
    for (i, o) in offers.into_iter().enumerate() {
        if o.hhp_index != hhp_index {
            continue;
        }
        o.validate()?;
        entries.push(BookEntry {
            offer: i,
            id: o.id,
            fleet: fleets.intern(&o.fleet_id),
            bid: o.bid_pence_per_kw,
            quantity: o.quantity_kw,
            expected_kw: o.expected_kw()?,
        });
    }
    Ok(HhpBook::new(
        hhp_index,
        demand_kw,
        backstop.price_pence_per_kw,
        entries,
    ))
}

/// Covering set for the backstop's hhp. Offers at other hhps are ignored.
pub fn demand_covering_set(
    offers: &[ContractOffer],
    demand_kw: f64,
    backstop: &WholesaleBackstop,
) -> Result<CoveringSet, OfferError> {
    let mut fleets = FleetInterner::default();
    let book = single_hhp_book(backstop.hhp_index, offers, demand_kw, backstop, &mut fleets)?;
    Ok(book.to_covering_set(&book.walk(|_| false)))
}

/// Payment per kW that `offer` would receive if accepted: the bid of the
/// contract completing the cover when the offer's whole fleet is absent,
/// never below the offer's own bid.
pub fn externality_payment(
    offer: &ContractOffer,
    all_offers: &[ContractOffer],
    demand_kw: f64,
    backstop: &WholesaleBackstop,
) -> Result<f64, OfferError> {
    offer.validate()?;
    let mut fleets = FleetInterner::default();
    let fleet = fleets.intern(&offer.fleet_id);
    let book = single_hhp_book(
        offer.hhp_index,
        all_offers,
        demand_kw,
        backstop,
        &mut fleets,
    )?;
    let bid = offer.bid_pence_per_kw;
    Ok(book
        .replacement_bid(fleet)
        .map_or(bid, |replacement| replacement.max(bid)))
}
