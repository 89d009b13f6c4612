//! Price series, demand profiles, and the peak/valley split of a trading day.
//!
//! Internal price unit: pence per contracted kW for one half-hour period.
//! A contracted kW is settled as one kWh-equivalent unit of energy, so a
//! price quoted in pence/kWh is taken as-is and £/MWh is multiplied by 0.1.

use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::HHP_PER_DAY;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("incomplete price series: missing hhp indices {missing:?}")]
    IncompleteSeries { missing: Vec<usize> },
    #[error("line {line}: hhp index {index} outside 0..48 (only 48-period days are supported)")]
    IndexOutOfRange { line: u64, index: i64 },
    #[error("line {line}: duplicate hhp index {index}")]
    DuplicateIndex { line: u64, index: usize },
    #[error("line {line}: series mixes dates {first} and {other}")]
    MixedDates {
        line: u64,
        first: NaiveDate,
        other: NaiveDate,
    },
    #[error("line {line}: negative demand {value} kW at hhp {index}")]
    NegativeDemand { line: u64, index: usize, value: f64 },
    #[error("price series is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    DayAhead,
    IntraDay,
    Balancing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceUnit {
    PencePerKwh,
    GbpPerMwh,
}

impl PriceUnit {
    /// Multiplier from this unit into internal pence per kW per hhp.
    pub fn factor(self) -> f64 {
        match self {
            PriceUnit::PencePerKwh => 1.0,
            PriceUnit::GbpPerMwh => 0.1,
        }
    }

    pub fn to_internal(self, value: f64) -> f64 {
        value * self.factor()
    }

    pub fn from_internal(self, value: f64) -> f64 {
        value / self.factor()
    }
}

impl fmt::Display for PriceUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriceUnit::PencePerKwh => f.write_str("pence_per_kwh"),
            PriceUnit::GbpPerMwh => f.write_str("gbp_per_mwh"),
        }
    }
}

impl std::str::FromStr for PriceUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pence_per_kwh" => Ok(PriceUnit::PencePerKwh),
            "gbp_per_mwh" => Ok(PriceUnit::GbpPerMwh),
            other => Err(format!("unknown price unit {other:?}")),
        }
    }
}

/// 48 wholesale prices for one day, in internal units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub day: NaiveDate,
    pub market: MarketKind,
    pub prices: Vec<f64>,
    /// Unit the series was quoted in before conversion.
    pub source_unit: PriceUnit,
}

impl PriceSeries {
    pub fn new(day: NaiveDate, market: MarketKind, prices: Vec<f64>) -> Self {
        assert_eq!(prices.len(), HHP_PER_DAY, "a price series has 48 entries");
        PriceSeries {
            day,
            market,
            prices,
            source_unit: PriceUnit::PencePerKwh,
        }
    }

    pub fn price(&self, hhp_index: usize) -> f64 {
        self.prices[hhp_index]
    }

    pub fn mean(&self) -> f64 {
        self.prices.iter().sum::<f64>() / self.prices.len() as f64
    }
}

#[derive(Deserialize)]
struct PriceRow {
    date: NaiveDate,
    hhp_index: i64,
    price: String,
}

pub fn load_price_series(
    path: &Path,
    market: MarketKind,
    unit: PriceUnit,
) -> Result<PriceSeries, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_price_series(file, market, unit)
}

/// Parses a `date,hhp_index,price` CSV and converts prices to internal units.
pub fn read_price_series<R: Read>(
    reader: R,
    market: MarketKind,
    unit: PriceUnit,
) -> Result<PriceSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut prices: Vec<Option<f64>> = vec![None; HHP_PER_DAY];
    let mut day: Option<NaiveDate> = None;

    let headers = rdr.headers().map_err(|e| csv_error(&e))?.clone();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: PriceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(&e))?;
        let index = checked_index(row.hhp_index, line)?;
        let price: f64 = row.price.parse().map_err(|_| DataError::Parse {
            line,
            message: format!("price {:?} is not a number", row.price),
        })?;
        if !price.is_finite() {
            return Err(DataError::Parse {
                line,
                message: format!("price {price} is not finite"),
            });
        }
        match day {
            None => day = Some(row.date),
            Some(first) if first != row.date => {
                return Err(DataError::MixedDates {
                    line,
                    first,
                    other: row.date,
                })
            }
            _ => {}
        }
        if prices[index].replace(unit.to_internal(price)).is_some() {
            return Err(DataError::DuplicateIndex { line, index });
        }
    }

    let day = day.ok_or(DataError::Empty)?;
    let missing: Vec<usize> = (0..HHP_PER_DAY).filter(|&i| prices[i].is_none()).collect();
    if !missing.is_empty() {
        return Err(DataError::IncompleteSeries { missing });
    }
    Ok(PriceSeries {
        day,
        market,
        prices: prices.into_iter().flatten().collect(),
        source_unit: unit,
    })
}

fn checked_index(raw: i64, line: u64) -> Result<usize, DataError> {
    if (0..HHP_PER_DAY as i64).contains(&raw) {
        Ok(raw as usize)
    } else {
        Err(DataError::IndexOutOfRange { line, index: raw })
    }
}

fn csv_error(e: &csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Expected demand not yet covered by existing agreements, per hhp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub kw: Vec<f64>,
}

impl DemandProfile {
    pub fn uniform(kw: f64) -> Self {
        assert!(kw >= 0.0, "demand must be non-negative");
        DemandProfile {
            kw: vec![kw; HHP_PER_DAY],
        }
    }

    pub fn zero() -> Self {
        Self::uniform(0.0)
    }

    pub fn at(&self, hhp_index: usize) -> f64 {
        self.kw[hhp_index]
    }
}

#[derive(Debug, Clone)]
pub struct DemandLoad {
    pub profile: DemandProfile,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct DemandRow {
    hhp_index: i64,
    demand_kw: f64,
}

pub fn load_demand_profile(path: &Path) -> Result<DemandLoad, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_demand_profile(file)
}

/// Parses `hhp_index,demand_kw`. Indices that never appear default to 0 kW.
pub fn read_demand_profile<R: Read>(reader: R) -> Result<DemandLoad, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut kw: Vec<Option<f64>> = vec![None; HHP_PER_DAY];
    let headers = rdr.headers().map_err(|e| csv_error(&e))?.clone();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: DemandRow = record
            .deserialize(Some(&headers))
            .map_err(|e| csv_error(&e))?;
        let index = checked_index(row.hhp_index, line)?;
        if !row.demand_kw.is_finite() {
            return Err(DataError::Parse {
                line,
                message: format!("demand {} is not finite", row.demand_kw),
            });
        }
        if row.demand_kw < 0.0 {
            return Err(DataError::NegativeDemand {
                line,
                index,
                value: row.demand_kw,
            });
        }
        if kw[index].replace(row.demand_kw).is_some() {
            return Err(DataError::DuplicateIndex { line, index });
        }
    }

    let missing: Vec<usize> = (0..HHP_PER_DAY).filter(|&i| kw[i].is_none()).collect();
    let mut warnings = Vec::new();
    if !missing.is_empty() {
        let msg = format!(
            "demand profile has no rows for {} hhp(s) {:?}; defaulting them to 0 kW",
            missing.len(),
            missing
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(DemandLoad {
        profile: DemandProfile {
            kw: kw.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLabel {
    Peak,
    Valley,
}

/// A run of consecutive hhps, `first..=last`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakBlock {
    pub label: BlockLabel,
    pub first: usize,
    pub last: usize,
}

impl PeakBlock {
    pub fn hhps(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, hhp_index: usize) -> bool {
        self.hhps().contains(&hhp_index)
    }

    pub fn is_peak(&self) -> bool {
        self.label == BlockLabel::Peak
    }
}

/// Index of the block containing each hhp.
pub fn block_lookup(partition: &[PeakBlock]) -> Vec<Option<usize>> {
    let mut lookup = vec![None; HHP_PER_DAY];
    for (b, block) in partition.iter().enumerate() {
        for t in block.hhps() {
            if t < HHP_PER_DAY {
                lookup[t] = Some(b);
            }
        }
    }
    lookup
}

pub const DEFAULT_MIN_BLOCK_HHPS: usize = 2;

struct Run {
    label: BlockLabel,
    first: usize,
    last: usize,
    sum: f64,
}

impl Run {
    fn len(&self) -> usize {
        self.last - self.first + 1
    }
}

/// Splits the day into peak and valley blocks.
///
/// An hhp is peak when its price is strictly above the daily mean. Runs
/// shorter than `min_block_hhps` are folded into the neighbour whose mean
/// price is nearer (left on ties), shortest run first, until every block is
/// long enough or only one block is left.
pub fn partition_peaks_valleys(series: &PriceSeries, min_block_hhps: usize) -> Vec<PeakBlock> {
    assert!(min_block_hhps >= 1, "min_block_hhps must be at least 1");
    let n = series.prices.len() as f64;
    let total: f64 = series.prices.iter().sum();
    // p > total/n, compared without the division
    let label_of = |p: f64| {
        if p * n > total {
            BlockLabel::Peak
        } else {
            BlockLabel::Valley
        }
    };

    let mut runs: Vec<Run> = Vec::new();
    for (t, &p) in series.prices.iter().enumerate() {
        let label = label_of(p);
        match runs.last_mut() {
            Some(run) if run.label == label => {
                run.last = t;
                run.sum += p;
            }
            _ => runs.push(Run {
                label,
                first: t,
                last: t,
                sum: p,
            }),
        }
    }

    while runs.len() > 1 {
        let short = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.len() < min_block_hhps)
            .min_by_key(|(i, r)| (r.len(), *i))
            .map(|(i, _)| i);
        let Some(i) = short else { break };

        let target = if i == 0 {
            1
        } else if i == runs.len() - 1 {
            i - 1
        } else {
            let left = mean_distance(&runs[i], &runs[i - 1]);
            let right = mean_distance(&runs[i], &runs[i + 1]);
            if left.le(&right) {
                i - 1
            } else {
                i + 1
            }
        };

        let run = runs.remove(i);
        let target = if target > i { target - 1 } else { target };
        let t = &mut runs[target];
        t.first = t.first.min(run.first);
        t.last = t.last.max(run.last);
        t.sum += run.sum;
        coalesce(&mut runs);
    }

    runs.into_iter()
        .map(|r| PeakBlock {
            label: r.label,
            first: r.first,
            last: r.last,
        })
        .collect()
}

/// Distance between run means, scaled by a positive common factor so that
/// comparisons need no division.
struct ScaledDistance {
    numerator: f64,
    scale: f64,
}

impl ScaledDistance {
    fn le(&self, other: &ScaledDistance) -> bool {
        self.numerator * other.scale <= other.numerator * self.scale
    }
}

fn mean_distance(a: &Run, b: &Run) -> ScaledDistance {
    let (la, lb) = (a.len() as f64, b.len() as f64);
    ScaledDistance {
        numerator: (a.sum * lb - b.sum * la).abs(),
        scale: la * lb,
    }
}

fn coalesce(runs: &mut Vec<Run>) {
    let mut out: Vec<Run> = Vec::with_capacity(runs.len());
    for run in runs.drain(..) {
        match out.last_mut() {
            Some(prev) if prev.label == run.label => {
                prev.last = run.last;
                prev.sum += run.sum;
            }
            _ => out.push(run),
        }
    }
    *runs = out;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 8, 2).unwrap()
    }

    fn csv_for(prices: &[(usize, &str)]) -> String {
        let mut s = String::from("date,hhp_index,price\n");
        for (i, p) in prices {
            s.push_str(&format!("2023-08-02,{i},{p}\n"));
        }
        s
    }

    fn series(prices: Vec<f64>) -> PriceSeries {
        PriceSeries::new(day(), MarketKind::DayAhead, prices)
    }

    #[test]
    fn loads_full_series() {
        let rows: Vec<(usize, String)> = (0..48).map(|i| (i, format!("{}.5", i))).collect();
        let rows: Vec<(usize, &str)> = rows.iter().map(|(i, p)| (*i, p.as_str())).collect();
        let s = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::PencePerKwh,
        )
        .unwrap();
        assert_eq!(s.prices.len(), 48);
        assert_eq!(s.day, day());
        assert_eq!(s.price(10), 10.5);
    }

    #[test]
    fn negative_prices_are_kept() {
        let rows: Vec<(usize, &str)> = (0..48)
            .map(|i| (i, if i < 10 { "-7.25" } else { "3" }))
            .collect();
        let s = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::PencePerKwh,
        )
        .unwrap();
        assert_eq!(s.price(0), -7.25);
        assert_eq!(s.price(20), 3.0);
    }

    #[test]
    fn missing_row_is_named() {
        let rows: Vec<(usize, &str)> = (0..48).filter(|&i| i != 17).map(|i| (i, "5")).collect();
        let err = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::PencePerKwh,
        )
        .unwrap_err();
        match err {
            DataError::IncompleteSeries { missing } => assert_eq!(missing, vec![17]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_numeric_price_reports_line() {
        let mut rows: Vec<(usize, &str)> = (0..48).map(|i| (i, "5")).collect();
        rows[3].1 = "abc";
        let err = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::PencePerKwh,
        )
        .unwrap_err();
        match err {
            // header + rows 0..=3
            DataError::Parse { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fiftieth_period_rejected() {
        let rows: Vec<(usize, &str)> = (0..49).map(|i| (i, "5")).collect();
        let err = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::PencePerKwh,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::IndexOutOfRange { index: 48, .. }));
    }

    #[test]
    fn gbp_per_mwh_converts() {
        let rows: Vec<(usize, &str)> = (0..48).map(|i| (i, "85")).collect();
        let s = read_price_series(
            csv_for(&rows).as_bytes(),
            MarketKind::DayAhead,
            PriceUnit::GbpPerMwh,
        )
        .unwrap();
        assert!((s.price(0) - 8.5).abs() < 1e-12);
        assert_eq!(s.source_unit, PriceUnit::GbpPerMwh);
    }

    #[test]
    fn uniform_demand_file() {
        let mut s = String::from("hhp_index,demand_kw\n");
        for i in 0..48 {
            s.push_str(&format!("{i},3000\n"));
        }
        let load = read_demand_profile(s.as_bytes()).unwrap();
        assert!(load.warnings.is_empty());
        assert!(load.profile.kw.iter().all(|&d| d == 3000.0));
    }

    #[test]
    fn empty_demand_file_defaults_to_zero_with_warning() {
        let load = read_demand_profile("hhp_index,demand_kw\n".as_bytes()).unwrap();
        assert_eq!(load.profile, DemandProfile::zero());
        assert_eq!(load.warnings.len(), 1);
    }

    #[test]
    fn negative_demand_names_row() {
        let s = "hhp_index,demand_kw\n0,10\n1,-4\n";
        match read_demand_profile(s.as_bytes()).unwrap_err() {
            DataError::NegativeDemand { line, index, value } => {
                assert_eq!((line, index, value), (3, 1, -4.0));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constant_series_is_one_valley() {
        let blocks = partition_peaks_valleys(&series(vec![7.0; 48]), 2);
        assert_eq!(
            blocks,
            vec![PeakBlock {
                label: BlockLabel::Valley,
                first: 0,
                last: 47
            }]
        );
    }

    #[test]
    fn step_series_is_valley_then_peak() {
        let prices: Vec<f64> = (0..48).map(|i| if i < 24 { 2.0 } else { 9.0 }).collect();
        let blocks = partition_peaks_valleys(&series(prices), 2);
        assert_eq!(blocks.len(), 2);
        assert_eq!(
            (blocks[0].label, blocks[0].first, blocks[0].last),
            (BlockLabel::Valley, 0, 23)
        );
        assert_eq!(
            (blocks[1].label, blocks[1].first, blocks[1].last),
            (BlockLabel::Peak, 24, 47)
        );
    }

    #[test]
    fn one_hhp_dip_is_absorbed() {
        // valley 0..=9, peak 10..=17, valley 18..=29, peak 30..=40 with a dip at 35, valley 41..=47
        let prices: Vec<f64> = (0..48)
            .map(|i| match i {
                10..=17 => 12.0,
                35 => 3.0,
                30..=40 => 14.0,
                _ => 4.0,
            })
            .collect();
        let blocks = partition_peaks_valleys(&series(prices), 2);
        let peaks: Vec<_> = blocks.iter().filter(|b| b.is_peak()).collect();
        assert_eq!(peaks.len(), 2);
        assert_eq!((peaks[0].first, peaks[0].last), (10, 17));
        assert_eq!((peaks[1].first, peaks[1].last), (30, 40));
        assert_eq!(blocks.len(), 5);
    }

    #[test]
    fn min_block_one_keeps_singletons() {
        let mut prices = vec![1.0; 48];
        prices[5] = 30.0;
        let blocks = partition_peaks_valleys(&series(prices), 1);
        assert_eq!(blocks.len(), 3);
        assert_eq!((blocks[1].first, blocks[1].last), (5, 5));
    }
}
