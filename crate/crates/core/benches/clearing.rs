use std::hint::black_box;

use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use v2g_market::balancing::{shortfall_distribution_with, ActiveContract, ActiveContractSet};
use v2g_market::hour_scheduling::{allocate_with, MarketContext};
use v2g_market::market_data::DemandProfile;
use v2g_market::simulator::{
    competition_sweep_with, generate_fleet_offers, synthetic_price_series, DayShape, SimConfig,
};
use v2g_market::Execution;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn weekday(fleets: usize) -> SimConfig {
    let day = NaiveDate::from_ymd_opt(2023, 8, 2).unwrap();
    SimConfig::with_prices(synthetic_price_series(day, DayShape::Weekday, 0))
        .with_fleet_count(fleets)
}

fn allocate_day(c: &mut Criterion) {
    let mut group = c.benchmark_group("allocate");
    for fleets in [6, 12] {
        let config = weekday(fleets);
        let offers = generate_fleet_offers(&config).unwrap();
        let partition = config.partition();
        let demand = DemandProfile::uniform(config.demand_kw_per_hhp);
        let market = MarketContext {
            demand: &demand,
            partition: &partition,
            prices: &config.price_series,
        };
        for (name, exec) in MODES {
            group.bench_with_input(
                BenchmarkId::new(name, offers.len()),
                &offers,
                |b, offers| b.iter(|| allocate_with(black_box(offers), &market, exec)),
            );
        }
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("competition_sweep");
    group.sample_size(10);
    let config = weekday(6);
    let seeds: Vec<u64> = (0..16).collect();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| competition_sweep_with(&config, &[6, 8], black_box(&seeds), exec).unwrap())
        });
    }
    group.finish();
}

fn shortfall(c: &mut Criterion) {
    let mut group = c.benchmark_group("shortfall_enumeration");
    group.sample_size(10);
    let set = ActiveContractSet {
        contracts: (0..20)
            .map(|i| ActiveContract {
                quantity_kw: 2.5 + i as f64,
                success_probability: 0.55 + 0.02 * i as f64,
            })
            .collect(),
        expected_demand_kw: 150.0,
    };
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| shortfall_distribution_with(black_box(&set), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, allocate_day, sweep, shortfall);
criterion_main!(benches);
