//! Balancing-market payments for plugged-in EVs.
//!
//! Accepted hour-scheduling contracts each deliver their full quantity with
//! probability p̂ and nothing otherwise, independently of one another. The
//! resulting distribution of the shortfall `y = max(0, D − delivered)` prices
//! the standby capacity of every EV plugged in at the hhp: each EV receives
//! `Σ_y const · P(y) · m · y` scaled by its share of plugged capacity, plus
//! `c_bd` per kW it actually exports.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

/// Largest set still evaluated by enumerating every default pattern.
pub const MAX_ENUMERATED_CONTRACTS: usize = 20;

/// Patterns are enumerated in this many ordered chunks, merged in order.
const ENUMERATION_CHUNKS_LOG2: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalancingError {
    #[error("contract {index}: success probability {value} outside [0, 1]")]
    Probability { index: usize, value: f64 },
    #[error("contract {index}: quantity {value} kW must be positive")]
    Quantity { index: usize, value: f64 },
    #[error("expected demand {0} kW must be non-negative")]
    Demand(f64),
    #[error("EV {ev_id}: {message}")]
    Ev { ev_id: String, message: String },
    #[error("EV {0} is not plugged in at this hhp")]
    NotPlugged(String),
    #[error("config: {0}")]
    Config(String),
    #[error("calibration infeasible: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveContract {
    pub quantity_kw: f64,
    pub success_probability: f64,
}

/// Contracts still expected to deliver at one hhp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveContractSet {
    pub contracts: Vec<ActiveContract>,
    pub expected_demand_kw: f64,
}

impl ActiveContractSet {
    pub fn validate(&self) -> Result<(), BalancingError> {
        if !(self.expected_demand_kw >= 0.0) || !self.expected_demand_kw.is_finite() {
            return Err(BalancingError::Demand(self.expected_demand_kw));
        }
        for (index, c) in self.contracts.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.success_probability) {
                return Err(BalancingError::Probability {
                    index,
                    value: c.success_probability,
                });
            }
            if !(c.quantity_kw > 0.0) || !c.quantity_kw.is_finite() {
                return Err(BalancingError::Quantity {
                    index,
                    value: c.quantity_kw,
                });
            }
        }
        Ok(())
    }
}

/// `(y kW, probability)` pairs sorted by ascending `y`, zero-probability
/// outcomes dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortfallDistribution {
    pub support: Vec<(f64, f64)>,
}

impl ShortfallDistribution {
    fn from_outcomes(outcomes: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut support: Vec<(f64, f64)> = Vec::new();
        let mut sorted: Vec<(f64, f64)> = outcomes.into_iter().filter(|&(_, p)| p > 0.0).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (y, p) in sorted {
            match support.last_mut() {
                Some(last) if last.0 == y => last.1 += p,
                _ => support.push((y, p)),
            }
        }
        ShortfallDistribution { support }
    }

    pub fn total_mass(&self) -> f64 {
        self.support.iter().map(|&(_, p)| p).sum()
    }

    /// Probability of exactly `y` kW missing.
    pub fn probability(&self, y: f64) -> f64 {
        self.support
            .iter()
            .find(|&&(s, _)| s == y)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Outcomes with a strictly positive shortfall.
    pub fn positive(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.support.iter().copied().filter(|&(y, _)| y > 0.0)
    }

    pub fn expected_shortfall_kw(&self) -> f64 {
        self.positive().map(|(y, p)| y * p).sum()
    }
}

/// Distribution of the uncovered kW at an hhp.
///
/// Exact over all `2^n` default patterns for up to
/// [`MAX_ENUMERATED_CONTRACTS`] contracts. Larger sets are convolved on a
/// 1 kW grid, with each quantity rounded to the nearest whole kW.
pub fn shortfall_distribution(
    active: &ActiveContractSet,
) -> Result<ShortfallDistribution, BalancingError> {
    shortfall_distribution_with(active, Execution::default())
}

pub fn shortfall_distribution_with(
    active: &ActiveContractSet,
    exec: Execution,
) -> Result<ShortfallDistribution, BalancingError> {
    active.validate()?;
    if active.contracts.len() <= MAX_ENUMERATED_CONTRACTS {
        Ok(enumerate(active, exec))
    } else {
        Ok(convolve(active))
    }
}

fn enumerate(active: &ActiveContractSet, exec: Execution) -> ShortfallDistribution {
    let n = active.contracts.len();
    let chunk_bits = n.min(ENUMERATION_CHUNKS_LOG2);
    let low_bits = n - chunk_bits;
    let demand = active.expected_demand_kw;
    // bit i set = contract i delivers
    let chunks = exec.map_range(0..1usize << chunk_bits, |chunk| {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(1 << low_bits);
        for low in 0..1usize << low_bits {
            let pattern = (chunk << low_bits) | low;
            let mut delivered = 0.0;
            let mut prob = 1.0;
            for (i, c) in active.contracts.iter().enumerate() {
                if pattern >> i & 1 == 1 {
                    delivered += c.quantity_kw;
                    prob *= c.success_probability;
                } else {
                    prob *= 1.0 - c.success_probability;
                }
            }
            out.push(((demand - delivered).max(0.0), prob));
        }
        ShortfallDistribution::from_outcomes(out)
    });
    ShortfallDistribution::from_outcomes(chunks.into_iter().flat_map(|d| d.support))
}

fn convolve(active: &ActiveContractSet) -> ShortfallDistribution {
    let cap = active.expected_demand_kw.ceil() as usize;
    // delivered[k] = P(k kW delivered), with everything ≥ cap folded into cap
    let mut delivered = vec![0.0; cap + 1];
    delivered[0] = 1.0;
    for c in &active.contracts {
        let q = c.quantity_kw.round() as usize;
        let p = c.success_probability;
        let mut next = vec![0.0; cap + 1];
        for (k, &mass) in delivered.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            next[k] += mass * (1.0 - p);
            next[(k + q).min(cap)] += mass * p;
        }
        delivered = next;
    }
    ShortfallDistribution::from_outcomes(
        delivered
            .into_iter()
            .enumerate()
            .map(|(k, p)| ((active.expected_demand_kw - k as f64).max(0.0), p)),
    )
}

/// An EV connected to the platform at the hhp being settled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluggedEv {
    pub ev_id: String,
    pub available_kw: f64,
    /// Exported during this hhp.
    pub exported_hhp_kw: f64,
    /// Already exported earlier in the current peak block.
    pub exported_peak_kw: f64,
}

impl PluggedEv {
    pub fn validate(&self) -> Result<(), BalancingError> {
        let bad = |message: String| BalancingError::Ev {
            ev_id: self.ev_id.clone(),
            message,
        };
        for (name, v) in [
            ("available_kw", self.available_kw),
            ("exported_hhp_kw", self.exported_hhp_kw),
            ("exported_peak_kw", self.exported_peak_kw),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(format!("{name} = {v} must be a non-negative number")));
            }
        }
        if self.exported_hhp_kw > self.available_kw {
            return Err(bad(format!(
                "exported {} kW exceeds available {} kW",
                self.exported_hhp_kw, self.available_kw
            )));
        }
        Ok(())
    }

    fn weight(&self) -> f64 {
        self.available_kw + self.exported_peak_kw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancingConfig {
    #[serde(rename = "const")]
    pub const_factor: f64,
    /// Battery wear plus off-peak import cost per exported kW.
    pub c_bd_pence_per_kw: f64,
    pub balancing_price_pence_per_kw: f64,
}

impl Default for BalancingConfig {
    fn default() -> Self {
        BalancingConfig {
            const_factor: 1.0,
            c_bd_pence_per_kw: 0.0,
            balancing_price_pence_per_kw: 0.0,
        }
    }
}

impl BalancingConfig {
    pub fn validate(&self) -> Result<(), BalancingError> {
        if !(self.const_factor >= 0.0) || !self.const_factor.is_finite() {
            return Err(BalancingError::Config(format!(
                "const {} must be non-negative",
                self.const_factor
            )));
        }
        if !(self.c_bd_pence_per_kw >= 0.0) || !self.c_bd_pence_per_kw.is_finite() {
            return Err(BalancingError::Config(format!(
                "c_bd {} must be non-negative",
                self.c_bd_pence_per_kw
            )));
        }
        if !self.balancing_price_pence_per_kw.is_finite() {
            return Err(BalancingError::Config(
                "balancing price is not finite".into(),
            ));
        }
        Ok(())
    }
}

/// `(available + exported this peak)` of `ev` over the same sum across all
/// plugged EVs; 0 when nobody has any capacity.
pub fn export_share(ev: &PluggedEv, plugged: &[PluggedEv]) -> f64 {
    let total: f64 = plugged.iter().map(PluggedEv::weight).sum();
    if total <= 0.0 {
        0.0
    } else {
        ev.weight() / total
    }
}

/// Standby part of the payment, before the share split:
/// `Σ_{y>0} const · P(y) · m · y`.
pub fn capacity_pool(dist: &ShortfallDistribution, config: &BalancingConfig) -> f64 {
    dist.positive()
        .map(|(y, p)| config.const_factor * p * config.balancing_price_pence_per_kw * y)
        .sum()
}

/// Payment in pence to `ev` for this hhp.
pub fn balancing_payment(
    ev: &PluggedEv,
    plugged: &[PluggedEv],
    dist: &ShortfallDistribution,
    config: &BalancingConfig,
) -> f64 {
    capacity_pool(dist, config) * export_share(ev, plugged)
        + ev.exported_hhp_kw * config.c_bd_pence_per_kw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvPayment {
    pub ev_id: String,
    pub share: f64,
    pub capacity_pence: f64,
    pub energy_pence: f64,
    pub total_pence: f64,
}

/// One point of the shortfall/payment curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub shortfall_kw: f64,
    pub probability: f64,
    /// Capacity payment attributable to this shortfall, across all EVs.
    pub payment_pence: f64,
    pub payment_per_kw_pence: f64,
}

/// Input for one settled hhp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingScenario {
    pub hhp_index: usize,
    pub expected_demand_kw: f64,
    pub active_contracts: Vec<ActiveContract>,
    pub plugged: Vec<PluggedEv>,
    pub config: BalancingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingReport {
    pub hhp_index: usize,
    pub distribution: ShortfallDistribution,
    pub expected_shortfall_kw: f64,
    pub payments: Vec<EvPayment>,
    pub curve: Vec<CurveRow>,
    /// Expected kW still missing after EV exports, bought at the balancing price.
    pub grid_topup_kw: f64,
    pub grid_topup_cost_pence: f64,
}

impl BalancingScenario {
    pub fn active_set(&self) -> ActiveContractSet {
        ActiveContractSet {
            contracts: self.active_contracts.clone(),
            expected_demand_kw: self.expected_demand_kw,
        }
    }

    pub fn validate(&self) -> Result<(), BalancingError> {
        self.active_set().validate()?;
        self.config.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for ev in &self.plugged {
            ev.validate()?;
            if !seen.insert(&ev.ev_id) {
                return Err(BalancingError::Ev {
                    ev_id: ev.ev_id.clone(),
                    message: "duplicate ev_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<BalancingReport, BalancingError> {
        self.validate()?;
        let dist = shortfall_distribution(&self.active_set())?;
        Ok(self.report(dist))
    }

    fn report(&self, dist: ShortfallDistribution) -> BalancingReport {
        let pool = capacity_pool(&dist, &self.config);
        let payments = self
            .plugged
            .iter()
            .map(|ev| {
                let share = export_share(ev, &self.plugged);
                let capacity = pool * share;
                let energy = ev.exported_hhp_kw * self.config.c_bd_pence_per_kw;
                EvPayment {
                    ev_id: ev.ev_id.clone(),
                    share,
                    capacity_pence: capacity,
                    energy_pence: energy,
                    total_pence: capacity + energy,
                }
            })
            .collect();
        let per_kw =
            |p: f64| self.config.const_factor * p * self.config.balancing_price_pence_per_kw;
        let curve = dist
            .positive()
            .map(|(y, p)| CurveRow {
                shortfall_kw: y,
                probability: p,
                payment_pence: per_kw(p) * y,
                payment_per_kw_pence: per_kw(p),
            })
            .collect();
        let expected = dist.expected_shortfall_kw();
        let exported: f64 = self.plugged.iter().map(|ev| ev.exported_hhp_kw).sum();
        let topup = (expected - exported).max(0.0);
        BalancingReport {
            hhp_index: self.hhp_index,
            expected_shortfall_kw: expected,
            distribution: dist,
            payments,
            curve,
            grid_topup_kw: topup,
            grid_topup_cost_pence: topup * self.config.balancing_price_pence_per_kw,
        }
    }

    /// Expected capacity revenue per available kW across plugged EVs, at the
    /// given `const`.
    fn revenue_per_kw(&self, dist: &ShortfallDistribution, const_factor: f64) -> f64 {
        let available: f64 = self.plugged.iter().map(|ev| ev.available_kw).sum();
        if available <= 0.0 {
            return 0.0;
        }
        let config = BalancingConfig {
            const_factor,
            ..self.config
        };
        capacity_pool(dist, &config) / available
    }
}

/// Largest `const` keeping expected balancing capacity revenue per available
/// kW at or below `target_ratio × benchmark_pence_per_kw`, by bisection to a
/// relative width of 1e-6. Scenarios that pay nothing for capacity return the
/// default of 1.0.
pub fn calibrate_const(
    scenario: &BalancingScenario,
    benchmark_pence_per_kw: f64,
    target_ratio: f64,
) -> Result<f64, BalancingError> {
    scenario.validate()?;
    let dist = shortfall_distribution(&scenario.active_set())?;
    let revenue = |c: f64| scenario.revenue_per_kw(&dist, c);
    if revenue(1.0) <= 0.0 {
        return Ok(BalancingConfig::default().const_factor);
    }
    let bound = target_ratio * benchmark_pence_per_kw;
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(BalancingError::Calibration(format!(
            "benchmark {benchmark_pence_per_kw} p/kW at ratio {target_ratio} leaves no room for positive balancing revenue"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while revenue(hi) <= bound {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(BalancingError::Calibration(
                "revenue does not grow with const".into(),
            ));
        }
    }
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        match revenue(mid).partial_cmp(&bound) {
            Some(Ordering::Greater) => hi = mid,
            _ => lo = mid,
        }
    }
    Ok(lo)
}
