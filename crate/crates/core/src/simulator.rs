//! Whole-day simulation of fleets trading through hour scheduling.
//!
//! Each EV imports at one of the cheapest hhps of the day and offers its
//! remaining capacity at every hhp of every peak block, bidding the import
//! price plus a fixed per-kW extra cost. The elimination rule then sells
//! each EV at most once per block.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::hour_scheduling::{
    allocate_with, Allocation, ContractOffer, FleetId, MarketContext, OfferId,
};
use crate::market_data::{
    partition_peaks_valleys, DemandProfile, MarketKind, PeakBlock, PriceSeries,
    DEFAULT_MIN_BLOCK_HHPS,
};
use crate::HHP_PER_DAY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("fleet {fleet}: {message}")]
    Fleet { fleet: String, message: String },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetProfile {
    pub fleet_id: String,
    pub ev_count: usize,
    pub export_kw_per_ev_per_peak: f64,
    pub extra_cost_pence_per_kw: f64,
    /// EVs import at the cheapest this-many hhps of the day, round robin.
    pub import_window_hhps: usize,
}

impl Default for FleetProfile {
    fn default() -> Self {
        FleetProfile {
            fleet_id: "fleet".into(),
            ev_count: 20,
            export_kw_per_ev_per_peak: 100.0,
            extra_cost_pence_per_kw: 3.0,
            import_window_hhps: 8,
        }
    }
}

impl FleetProfile {
    pub fn named(fleet_id: impl Into<String>) -> Self {
        FleetProfile {
            fleet_id: fleet_id.into(),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |message: &str| {
            Err(SimError::Fleet {
                fleet: self.fleet_id.clone(),
                message: message.into(),
            })
        };
        if self.ev_count == 0 {
            return bad("ev_count must be at least 1");
        }
        if !(self.export_kw_per_ev_per_peak > 0.0) || !self.export_kw_per_ev_per_peak.is_finite() {
            return bad("export_kw_per_ev_per_peak must be positive");
        }
        if !self.extra_cost_pence_per_kw.is_finite() {
            return bad("extra_cost_pence_per_kw must be finite");
        }
        if self.import_window_hhps == 0 || self.import_window_hhps > HHP_PER_DAY {
            return bad("import_window_hhps must be in 1..=48");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fleets: Vec<FleetProfile>,
    pub demand_kw_per_hhp: f64,
    pub penalty_pence_per_kw: f64,
    pub rng_seed: u64,
    /// Relative half-width of the uniform jitter on each EV's capacity.
    pub capacity_jitter: f64,
    pub min_block_hhps: usize,
    pub price_series: PriceSeries,
}

impl SimConfig {
    /// Six fleets of twenty EVs, 3000 kW demand per hhp, 50 p/kW fines.
    pub fn with_prices(price_series: PriceSeries) -> Self {
        SimConfig {
            fleets: (1..=6)
                .map(|i| FleetProfile::named(format!("fleet-{i}")))
                .collect(),
            demand_kw_per_hhp: 3000.0,
            penalty_pence_per_kw: 50.0,
            rng_seed: 0,
            capacity_jitter: 0.1,
            min_block_hhps: DEFAULT_MIN_BLOCK_HHPS,
            price_series,
        }
    }

    /// Same config with `count` fleets, cycling through the existing profiles.
    pub fn with_fleet_count(&self, count: usize) -> Self {
        let template = if self.fleets.is_empty() {
            vec![FleetProfile::default()]
        } else {
            self.fleets.clone()
        };
        let fleets = (0..count)
            .map(|i| FleetProfile {
                fleet_id: format!("fleet-{}", i + 1),
                ..template[i % template.len()].clone()
            })
            .collect();
        SimConfig {
            fleets,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.demand_kw_per_hhp >= 0.0) || !self.demand_kw_per_hhp.is_finite() {
            return Err(SimError::Config(
                "demand_kw_per_hhp must be non-negative".into(),
            ));
        }
        if !(self.penalty_pence_per_kw > 0.0) || !self.penalty_pence_per_kw.is_finite() {
            return Err(SimError::Config(
                "penalty_pence_per_kw must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.capacity_jitter) {
            return Err(SimError::Config("capacity_jitter must be in [0, 1)".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for f in &self.fleets {
            f.validate()?;
            if !ids.insert(&f.fleet_id) {
                return Err(SimError::Fleet {
                    fleet: f.fleet_id.clone(),
                    message: "duplicate fleet_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> Vec<PeakBlock> {
        partition_peaks_valleys(&self.price_series, self.min_block_hhps)
    }
}

/// hhp indices ordered by ascending price, earlier hhp first on ties.
fn cheapest_hhps(prices: &PriceSeries) -> Vec<usize> {
    let mut order: Vec<usize> = (0..HHP_PER_DAY).collect();
    order.sort_by(|&a, &b| prices.price(a).total_cmp(&prices.price(b)).then(a.cmp(&b)));
    order
}

/// Contract book for the configured day. Offer ids count up from 1 in
/// fleet, EV, hhp order.
pub fn generate_fleet_offers(config: &SimConfig) -> Result<Vec<ContractOffer>, SimError> {
    config.validate()?;
    let partition = config.partition();
    let peak_hhps: Vec<usize> = partition
        .iter()
        .filter(|b| b.is_peak())
        .flat_map(|b| b.hhps())
        .collect();
    let cheapest = cheapest_hhps(&config.price_series);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut offers = Vec::new();
    let mut ev_index = 0usize;
    let mut next_id = 1u64;
    for fleet in &config.fleets {
        let fleet_id = FleetId::new(fleet.fleet_id.clone());
        for _ in 0..fleet.ev_count {
            let jitter = if config.capacity_jitter > 0.0 {
                rng.gen_range(-config.capacity_jitter..=config.capacity_jitter)
            } else {
                0.0
            };
            let quantity = fleet.export_kw_per_ev_per_peak * (1.0 + jitter);
            let import_hhp = cheapest[ev_index % fleet.import_window_hhps];
            let bid = config.price_series.price(import_hhp) + fleet.extra_cost_pence_per_kw;
            for &t in &peak_hhps {
                offers.push(ContractOffer {
                    id: OfferId(next_id),
                    fleet_id: fleet_id.clone(),
                    date: config.price_series.day,
                    hhp_index: t,
                    quantity_kw: quantity,
                    penalty_pence_per_kw: config.penalty_pence_per_kw,
                    bid_pence_per_kw: bid,
                });
                next_id += 1;
            }
            ev_index += 1;
        }
    }
    Ok(offers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HhpSeriesRow {
    pub hhp_index: usize,
    pub spot_pence_per_kw: f64,
    /// Over every offer made at the hhp, accepted or not.
    pub min_bid_pence_per_kw: Option<f64>,
    pub max_bid_pence_per_kw: Option<f64>,
    /// Plain mean over contracts accepted at the hhp.
    pub avg_payment_pence_per_kw: Option<f64>,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayReport {
    pub day: NaiveDate,
    pub fleet_count: usize,
    pub offer_count: usize,
    pub accepted_contract_count: usize,
    pub eliminated_count: usize,
    /// `Σ ℓ·p̂` over accepted contracts.
    pub expected_delivered_kw: f64,
    pub platform_profit_gbp: f64,
    pub fleets_profit_gbp: f64,
    pub avg_platform_profit_pence_per_kw: f64,
    pub avg_fleet_profit_pence_per_kw: f64,
    /// Residual demand bought at spot.
    pub wholesale_cost_gbp: f64,
    pub series: Vec<HhpSeriesRow>,
}

/// Mean taken as an offset from the first value, so equal values average
/// to exactly that value.
fn mean(xs: &[f64]) -> Option<f64> {
    let first = *xs.first()?;
    Some(first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64)
}

pub fn run_day(config: &SimConfig) -> Result<DayReport, SimError> {
    run_day_with(config, Execution::default())
}

pub fn run_day_with(config: &SimConfig, exec: Execution) -> Result<DayReport, SimError> {
    let offers = generate_fleet_offers(config)?;
    let partition = config.partition();
    let demand = DemandProfile::uniform(config.demand_kw_per_hhp);
    let market = MarketContext {
        demand: &demand,
        partition: &partition,
        prices: &config.price_series,
    };
    let allocation = allocate_with(&offers, &market, exec);
    Ok(day_report(config, &offers, &allocation))
}

fn day_report(config: &SimConfig, offers: &[ContractOffer], allocation: &Allocation) -> DayReport {
    let prices = &config.price_series;
    let mut platform = 0.0;
    let mut fleets = 0.0;
    let mut delivered = 0.0;
    let mut payments: Vec<Vec<f64>> = vec![Vec::new(); HHP_PER_DAY];
    for a in &allocation.accepted {
        let t = a.offer.hhp_index;
        platform += (prices.price(t) - a.payment_pence_per_kw) * a.expected_kw;
        fleets += (a.payment_pence_per_kw - a.offer.bid_pence_per_kw) * a.expected_kw;
        delivered += a.expected_kw;
        payments[t].push(a.payment_pence_per_kw);
    }
    let mut min_bid = [None::<f64>; HHP_PER_DAY];
    let mut max_bid = [None::<f64>; HHP_PER_DAY];
    for o in offers {
        let b = o.bid_pence_per_kw;
        let t = o.hhp_index;
        min_bid[t] = Some(min_bid[t].map_or(b, |m| m.min(b)));
        max_bid[t] = Some(max_bid[t].map_or(b, |m| m.max(b)));
    }
    let series = (0..HHP_PER_DAY)
        .map(|t| HhpSeriesRow {
            hhp_index: t,
            spot_pence_per_kw: prices.price(t),
            min_bid_pence_per_kw: min_bid[t],
            max_bid_pence_per_kw: max_bid[t],
            avg_payment_pence_per_kw: mean(&payments[t]),
            accepted: payments[t].len(),
        })
        .collect();
    let wholesale: f64 = allocation
        .residual_demand_kw
        .iter()
        .enumerate()
        .map(|(t, r)| r * prices.price(t))
        .sum();
    let per_kw = |x: f64| if delivered > 0.0 { x / delivered } else { 0.0 };
    DayReport {
        day: prices.day,
        fleet_count: config.fleets.len(),
        offer_count: offers.len(),
        accepted_contract_count: allocation.accepted.len(),
        eliminated_count: allocation.eliminated.len(),
        expected_delivered_kw: delivered,
        platform_profit_gbp: platform / 100.0,
        fleets_profit_gbp: fleets / 100.0,
        avg_platform_profit_pence_per_kw: per_kw(platform),
        avg_fleet_profit_pence_per_kw: per_kw(fleets),
        wholesale_cost_gbp: wholesale / 100.0,
        series,
    }
}

/// Sample mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Estimate {
                mean: 0.0,
                ci95: 0.0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate { mean, ci95: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate {
            mean,
            ci95: 1.96 * (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fleet_count: usize,
    pub runs: usize,
    pub platform_profit_gbp: Estimate,
    pub fleets_profit_gbp: Estimate,
    pub avg_platform_profit_pence_per_kw: Estimate,
    pub avg_fleet_profit_pence_per_kw: Estimate,
    pub accepted_contract_count: Estimate,
}

/// Change in means from the previous fleet count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDelta {
    pub from_fleets: usize,
    pub to_fleets: usize,
    pub platform_profit_gbp: f64,
    pub avg_fleet_profit_pence_per_kw: f64,
    pub accepted_contract_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
    pub deltas: Vec<SweepDelta>,
}

pub fn competition_sweep(
    base: &SimConfig,
    fleet_counts: &[usize],
    seeds: &[u64],
) -> Result<SweepReport, SimError> {
    competition_sweep_with(base, fleet_counts, seeds, Execution::default())
}

/// Runs every (fleet count, seed) pair. Seeds run in parallel under `exec`;
/// each day is cleared sequentially.
pub fn competition_sweep_with(
    base: &SimConfig,
    fleet_counts: &[usize],
    seeds: &[u64],
    exec: Execution,
) -> Result<SweepReport, SimError> {
    if fleet_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::Config(
            "fleet counts must be strictly ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(fleet_counts.len());
    for &count in fleet_counts {
        let config = base.with_fleet_count(count);
        let days: Vec<DayReport> = exec
            .map(seeds, |&seed| {
                run_day_with(
                    &SimConfig {
                        rng_seed: seed,
                        ..config.clone()
                    },
                    Execution::Sequential,
                )
            })
            .into_iter()
            .collect::<Result<_, _>>()?;
        let field =
            |f: fn(&DayReport) -> f64| Estimate::of(&days.iter().map(f).collect::<Vec<_>>());
        points.push(SweepPoint {
            fleet_count: count,
            runs: days.len(),
            platform_profit_gbp: field(|d| d.platform_profit_gbp),
            fleets_profit_gbp: field(|d| d.fleets_profit_gbp),
            avg_platform_profit_pence_per_kw: field(|d| d.avg_platform_profit_pence_per_kw),
            avg_fleet_profit_pence_per_kw: field(|d| d.avg_fleet_profit_pence_per_kw),
            accepted_contract_count: field(|d| d.accepted_contract_count as f64),
        });
    }
    let deltas = points
        .windows(2)
        .map(|w| SweepDelta {
            from_fleets: w[0].fleet_count,
            to_fleets: w[1].fleet_count,
            platform_profit_gbp: w[1].platform_profit_gbp.mean - w[0].platform_profit_gbp.mean,
            avg_fleet_profit_pence_per_kw: w[1].avg_fleet_profit_pence_per_kw.mean
                - w[0].avg_fleet_profit_pence_per_kw.mean,
            accepted_contract_count: w[1].accepted_contract_count.mean
                - w[0].accepted_contract_count.mean,
        })
        .collect();
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        points,
        deltas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayShape {
    /// Overnight trough, morning shoulder and a tall evening peak.
    Weekday,
    /// Flatter and cheaper than a weekday.
    Weekend,
    /// Weekday evening with a midday solar trough below zero.
    NegativeValley,
}

/// Day-ahead prices in pence per kW per hhp for a stylised day, with small
/// seeded noise.
pub fn synthetic_price_series(day: NaiveDate, shape: DayShape, seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bump = |t: f64, centre: f64, width: f64| (-((t - centre) / width).powi(2)).exp();
    let prices = (0..HHP_PER_DAY)
        .map(|i| {
            let t = i as f64 + 0.5;
            let base = match shape {
                DayShape::Weekday => 7.0 + 6.0 * bump(t, 16.0, 3.0) + 14.0 * bump(t, 36.0, 3.5),
                DayShape::Weekend => 6.0 + 3.0 * bump(t, 20.0, 4.0) + 8.0 * bump(t, 37.0, 3.5),
                DayShape::NegativeValley => {
                    6.0 + 5.0 * bump(t, 15.0, 2.5) + 14.0 * bump(t, 37.0, 3.0)
                        - 11.0 * bump(t, 26.0, 3.5)
                }
            };
            base + rng.gen_range(-0.8..0.8)
        })
        .collect();
    PriceSeries::new(day, MarketKind::DayAhead, prices)
}
