use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::covering::{BookEntry, FleetInterner, HhpBook};
use super::{ContractOffer, OfferId};
use crate::exec::Execution;
use crate::market_data::{block_lookup, DemandProfile, PeakBlock, PriceSeries};
use crate::HHP_PER_DAY;

/// Everything about the day except the contract book.
#[derive(Debug, Clone, Copy)]
pub struct MarketContext<'a> {
    pub demand: &'a DemandProfile,
    pub partition: &'a [PeakBlock],
    /// Day-ahead prices; they price the wholesale backstop.
    pub prices: &'a PriceSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedContract {
    pub offer: ContractOffer,
    pub payment_pence_per_kw: f64,
    /// Fine per kW owed to the platform if the contract is not honoured.
    pub fine_pence_per_kw: f64,
    /// Index into the partition the allocation was run with.
    pub peak_block: usize,
    pub success_probability: f64,
    pub expected_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EliminationReason {
    /// Failed intake validation.
    Invalid {
        message: String,
    },
    DuplicateId,
    WrongDay,
    /// Offered at a valley hhp.
    OutsidePeak,
    /// The fleet already sold this quantity in this peak block.
    SameQuantityInPeak {
        accepted: OfferId,
    },
}

impl fmt::Display for EliminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EliminationReason::Invalid { message } => write!(f, "invalid offer: {message}"),
            EliminationReason::DuplicateId => f.write_str("duplicate offer id"),
            EliminationReason::WrongDay => f.write_str("offer date differs from the trading day"),
            EliminationReason::OutsidePeak => f.write_str("hhp is not in a peak block"),
            EliminationReason::SameQuantityInPeak { accepted } => write!(
                f,
                "fleet already sold this quantity in the peak block (offer {accepted})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elimination {
    pub offer_id: OfferId,
    pub reason: EliminationReason,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationStats {
    /// Number of greedy covering-set walks performed.
    pub cover_evaluations: u64,
    pub loop_iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub accepted: Vec<AcceptedContract>,
    /// Expected kW per hhp left for the wholesale backstop, never negative.
    pub residual_demand_kw: Vec<f64>,
    pub eliminated: Vec<Elimination>,
    pub stats: AllocationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRecord {
    pub offer_id: OfferId,
    pub payment_pence_per_kw: f64,
    pub fine_pence_per_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationRecord {
    pub offer_id: OfferId,
    pub reason: String,
}

/// Wire form of an [`Allocation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub accepted: Vec<AcceptedRecord>,
    pub residual_demand_kw: Vec<f64>,
    pub eliminated: Vec<EliminationRecord>,
}

impl Allocation {
    pub fn record(&self) -> AllocationRecord {
        AllocationRecord {
            accepted: self
                .accepted
                .iter()
                .map(|a| AcceptedRecord {
                    offer_id: a.offer.id,
                    payment_pence_per_kw: a.payment_pence_per_kw,
                    fine_pence_per_kw: a.fine_pence_per_kw,
                })
                .collect(),
            residual_demand_kw: self.residual_demand_kw.clone(),
            eliminated: self
                .eliminated
                .iter()
                .map(|e| EliminationRecord {
                    offer_id: e.offer_id,
                    reason: e.reason.to_string(),
                })
                .collect(),
        }
    }

    pub fn accepted_ids(&self) -> Vec<OfferId> {
        self.accepted.iter().map(|a| a.offer.id).collect()
    }

    pub fn find(&self, id: OfferId) -> Option<&AcceptedContract> {
        self.accepted.iter().find(|a| a.offer.id == id)
    }
}

pub fn allocate(offers: &[ContractOffer], market: &MarketContext<'_>) -> Allocation {
    allocate_with(offers, market, Execution::default())
}

struct Candidate {
    entry: BookEntry,
    payment: f64,
}

/// Runs the full Hour-Scheduling clearing for one day.
///
/// `exec` only controls how the precomputed payments are computed; the acceptance loop
/// is sequential and the result does not depend on the mode.
pub fn allocate_with(
    offers: &[ContractOffer],
    market: &MarketContext<'_>,
    exec: Execution,
) -> Allocation {
    let blocks = block_lookup(market.partition);
    let mut eliminated = Vec::new();
    let mut fleets = FleetInterner::default();
    let mut seen = BTreeSet::new();
    let mut per_hhp: Vec<Vec<BookEntry>> = vec![Vec::new(); HHP_PER_DAY];
    // (fleet, quantity bits, block) -> offers; the elimination groups
    let mut groups: BTreeMap<(u32, u64, usize), Vec<usize>> = BTreeMap::new();

    for (i, o) in offers.iter().enumerate() {
        let reject = |reason| Elimination {
            offer_id: o.id,
            reason,
        };
        if !seen.insert(o.id) {
            eliminated.push(reject(EliminationReason::DuplicateId));
            continue;
        }
        if let Err(e) = o.validate() {
            eliminated.push(reject(EliminationReason::Invalid {
                message: e.to_string(),
            }));
            continue;
        }
        if o.date != market.prices.day {
            eliminated.push(reject(EliminationReason::WrongDay));
            continue;
        }
        let block = match blocks[o.hhp_index] {
            Some(b) if market.partition[b].is_peak() => b,
            _ => {
                eliminated.push(reject(EliminationReason::OutsidePeak));
                continue;
            }
        };
        let fleet = fleets.intern(&o.fleet_id);
        groups
            .entry((fleet, o.quantity_kw.to_bits(), block))
            .or_default()
            .push(i);
        per_hhp[o.hhp_index].push(BookEntry {
            offer: i,
            id: o.id,
            fleet,
            bid: o.bid_pence_per_kw,
            quantity: o.quantity_kw,
            expected_kw: o.expected_kw().expect("validated"),
        });
    }

    let books: Vec<HhpBook> = per_hhp
        .into_iter()
        .enumerate()
        .filter(|(_, entries)| !entries.is_empty())
        .map(|(t, entries)| HhpBook::new(t, market.demand.at(t), market.prices.price(t), entries))
        .collect();

    // Potential payments, once per (hhp, fleet). Offers bidding
    // above the spot price lose to the wholesale backstop and are never
    // candidates.
    let priced: Vec<(Vec<Candidate>, u64)> = exec.map(&books, |book| {
        let fleets_here: BTreeSet<u32> = book.entries.iter().map(|e| e.fleet).collect();
        let replacement: BTreeMap<u32, Option<f64>> = fleets_here
            .iter()
            .map(|&f| (f, book.replacement_bid(f)))
            .collect();
        let candidates = book
            .entries
            .iter()
            .filter(|e| e.bid <= book.backstop_price && e.expected_kw > 0.0)
            .map(|entry| {
                let payment = replacement[&entry.fleet].map_or(entry.bid, |r| r.max(entry.bid));
                Candidate {
                    entry: entry.clone(),
                    payment,
                }
            })
            .collect();
        (candidates, fleets_here.len() as u64)
    });

    let mut stats = AllocationStats::default();
    let mut candidates: Vec<Option<Vec<Candidate>>> = (0..HHP_PER_DAY).map(|_| None).collect();
    for (book, (cands, evals)) in books.iter().zip(priced) {
        stats.cover_evaluations += evals;
        candidates[book.hhp_index] = Some(cands);
    }

    let mut available = vec![true; offers.len()];
    let mut covered = vec![0.0_f64; HHP_PER_DAY];
    let mut accepted = Vec::new();

    loop {
        // The hhp with the largest payment-minus-bid margin.
        let mut best: Option<(usize, f64)> = None;
        for (t, cands) in candidates.iter().enumerate() {
            let Some(cands) = cands else { continue };
            if covered[t] >= market.demand.at(t) {
                continue;
            }
            let mut margin = f64::NEG_INFINITY;
            for c in cands.iter().filter(|c| available[c.entry.offer]) {
                margin = margin.max(c.payment - c.entry.bid);
            }
            if margin == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, m)| margin > m) {
                best = Some((t, margin));
            }
        }
        let Some((t, _)) = best else { break };
        stats.loop_iterations += 1;

        let chosen = candidates[t]
            .as_ref()
            .and_then(|cands| cands.iter().find(|c| available[c.entry.offer]))
            .expect("hhp with a margin has an available candidate");
        let payment = chosen.payment;
        let offer = &offers[chosen.entry.offer];
        available[chosen.entry.offer] = false;
        covered[t] += chosen.entry.expected_kw;
        let block = blocks[t].expect("candidates are in peak blocks");

        // One sale of a quantity per fleet per peak block.
        let group = &groups[&(chosen.entry.fleet, offer.quantity_kw.to_bits(), block)];
        for &other in group {
            if available[other] {
                available[other] = false;
                eliminated.push(Elimination {
                    offer_id: offers[other].id,
                    reason: EliminationReason::SameQuantityInPeak { accepted: offer.id },
                });
            }
        }

        accepted.push(AcceptedContract {
            offer: offer.clone(),
            payment_pence_per_kw: payment,
            fine_pence_per_kw: offer.penalty_pence_per_kw,
            peak_block: block,
            success_probability: offer.success_probability().expect("validated"),
            expected_kw: chosen.entry.expected_kw,
        });
    }

    let residual_demand_kw = (0..HHP_PER_DAY)
        .map(|t| (market.demand.at(t) - covered[t]).max(0.0))
        .collect();

    Allocation {
        accepted,
        residual_demand_kw,
        eliminated,
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hour_scheduling::FleetId;
    use crate::market_data::{BlockLabel, MarketKind};
    use chrono::NaiveDate;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 6, 30).unwrap()
    }

    fn offer(id: u64, fleet: &str, t: usize, bid: f64, kw: f64) -> ContractOffer {
        ContractOffer {
            id: OfferId(id),
            fleet_id: FleetId::new(fleet),
            date: day(),
            hhp_index: t,
            quantity_kw: kw,
            penalty_pence_per_kw: 50.0,
            bid_pence_per_kw: bid,
        }
    }

    fn one_peak(first: usize, last: usize) -> Vec<PeakBlock> {
        let mut blocks = Vec::new();
        if first > 0 {
            blocks.push(PeakBlock {
                label: BlockLabel::Valley,
                first: 0,
                last: first - 1,
            });
        }
        blocks.push(PeakBlock {
            label: BlockLabel::Peak,
            first,
            last,
        });
        if last < 47 {
            blocks.push(PeakBlock {
                label: BlockLabel::Valley,
                first: last + 1,
                last: 47,
            });
        }
        blocks
    }

    fn prices(spot: f64) -> PriceSeries {
        PriceSeries::new(day(), MarketKind::DayAhead, vec![spot; 48])
    }

    fn demand_at(ts: &[usize], kw: f64) -> DemandProfile {
        let mut d = DemandProfile::zero();
        for &t in ts {
            d.kw[t] = kw;
        }
        d
    }

    #[test]
    fn two_fleet_allocation() {
        let offers = vec![
            offer(1, "fleet-a", 27, 10.0, 20.0),
            offer(2, "fleet-b", 27, 6.0, 14.0),
            offer(3, "fleet-a", 27, 9.0, 16.0),
            offer(4, "fleet-b", 27, 20.0, 9.0),
        ];
        let demand = demand_at(&[27], 35.0);
        let partition = one_peak(27, 27);
        let prices = prices(29.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let alloc = allocate(&offers, &market);
        assert_eq!(
            alloc.accepted_ids(),
            vec![OfferId(2), OfferId(3), OfferId(1)]
        );
        assert_eq!(alloc.residual_demand_kw[27], 0.0);
        for a in &alloc.accepted {
            assert_eq!(a.payment_pence_per_kw, 29.0);
            assert_eq!(a.fine_pence_per_kw, 50.0);
        }
        assert!(alloc.eliminated.is_empty());
    }

    #[test]
    fn zero_demand_allocates_nothing() {
        let offers = vec![offer(1, "a", 20, 5.0, 10.0), offer(2, "b", 21, 6.0, 10.0)];
        let demand = DemandProfile::zero();
        let partition = one_peak(18, 24);
        let prices = prices(20.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let alloc = allocate(&offers, &market);
        assert!(alloc.accepted.is_empty());
        assert!(alloc.eliminated.is_empty());
        assert!(alloc.residual_demand_kw.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn intake_rejections_are_reported() {
        let mut bad = offer(5, "a", 20, 60.0, 10.0);
        bad.penalty_pence_per_kw = 50.0;
        let valley = offer(6, "a", 2, 5.0, 10.0);
        let mut wrong_day = offer(7, "a", 20, 5.0, 10.0);
        wrong_day.date = NaiveDate::from_ymd_opt(2023, 7, 1).unwrap();
        let dup = offer(5, "b", 20, 5.0, 10.0);
        let offers = vec![bad, valley, wrong_day, dup];
        let demand = DemandProfile::uniform(10.0);
        let partition = one_peak(18, 24);
        let prices = prices(20.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let alloc = allocate(&offers, &market);
        let reasons: Vec<_> = alloc
            .eliminated
            .iter()
            .map(|e| (e.offer_id.0, e.reason.clone()))
            .collect();
        assert!(matches!(reasons[0], (5, EliminationReason::Invalid { .. })));
        assert_eq!(reasons[1], (6, EliminationReason::OutsidePeak));
        assert_eq!(reasons[2], (7, EliminationReason::WrongDay));
        assert_eq!(reasons[3], (5, EliminationReason::DuplicateId));
        assert!(alloc.accepted.is_empty());
        assert_eq!(alloc.residual_demand_kw[20], 10.0);
    }

    #[test]
    fn same_quantity_is_sold_once_per_peak() {
        // Fleet a offers 10 kW at both hhps of the block; only one sells.
        let offers = vec![
            offer(1, "a", 20, 2.0, 10.0),
            offer(2, "a", 21, 2.0, 10.0),
            offer(3, "b", 20, 8.0, 10.0),
            offer(4, "b", 21, 9.0, 10.0),
        ];
        let demand = demand_at(&[20, 21], 5.0);
        let partition = one_peak(20, 21);
        let prices = prices(20.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let alloc = allocate(&offers, &market);
        // margins: offer 1 -> 8 - 2 = 6, offer 2 -> 9 - 2 = 7; hhp 21 first
        assert_eq!(alloc.accepted_ids(), vec![OfferId(2), OfferId(3)]);
        assert_eq!(
            alloc.eliminated,
            vec![
                Elimination {
                    offer_id: OfferId(1),
                    reason: EliminationReason::SameQuantityInPeak {
                        accepted: OfferId(2)
                    }
                },
                Elimination {
                    offer_id: OfferId(4),
                    reason: EliminationReason::SameQuantityInPeak {
                        accepted: OfferId(3)
                    }
                },
            ]
        );
        assert_eq!(alloc.find(OfferId(2)).unwrap().payment_pence_per_kw, 9.0);
        // b's replacement at hhp 20 is a's cheaper offer, so b is paid its bid
        assert_eq!(alloc.find(OfferId(3)).unwrap().payment_pence_per_kw, 8.0);
        assert!(alloc.residual_demand_kw.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn elimination_promotes_next_offer() {
        let offers = vec![
            offer(1, "a", 20, 2.0, 10.0),
            offer(2, "a", 21, 2.0, 10.0),
            offer(3, "b", 21, 3.0, 10.0),
            offer(4, "c", 21, 25.0, 10.0),
        ];
        let demand = demand_at(&[20, 21], 5.0);
        let partition = one_peak(20, 21);
        let prices = prices(20.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let alloc = allocate(&offers, &market);
        // offer 1 margin 20 - 2 = 18 (no rival at 20); offer 2 margin 3 - 2 = 1
        // offer 4 bids above spot and is never a candidate
        assert_eq!(alloc.accepted_ids(), vec![OfferId(1), OfferId(3)]);
        assert_eq!(alloc.find(OfferId(3)).unwrap().payment_pence_per_kw, 3.0);
        assert!(alloc.residual_demand_kw.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn record_shape() {
        let offers = vec![offer(1, "a", 20, 2.0, 10.0)];
        let demand = demand_at(&[20], 5.0);
        let partition = one_peak(20, 20);
        let prices = prices(20.0);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &prices,
        };
        let rec = allocate(&offers, &market).record();
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["accepted"][0]["offer_id"], 1);
        assert_eq!(json["accepted"][0]["payment_pence_per_kw"], 20.0);
        assert_eq!(json["accepted"][0]["fine_pence_per_kw"], 50.0);
        assert_eq!(json["residual_demand_kw"].as_array().unwrap().len(), 48);
    }
}
