use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::json;
use v2g_market::balancing::{BalancingReport, BalancingScenario};
use v2g_market::hour_scheduling::{allocate, AllocationRecord, ContractOffer, MarketContext};
use v2g_market::market_data::{
    partition_peaks_valleys, read_demand_profile, read_price_series, MarketKind, PriceSeries,
    PriceUnit, DEFAULT_MIN_BLOCK_HHPS,
};
use v2g_market::simulator::{
    competition_sweep, generate_fleet_offers, run_day, synthetic_price_series, DayReport, DayShape,
    FleetProfile, SimConfig, SweepReport,
};

use crate::args::{AllocateArgs, BalanceArgs, Format, ReportArgs, SimulateArgs, SweepArgs};
use crate::error::CliError;
use crate::output::{OutDir, RunManifest};

pub fn allocate_cmd(args: &AllocateArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(
        "allocate",
        json!({
            "unit": args.unit.to_string(),
            "min_block_hhps": args.min_block_hhps,
            "format": format_name(args.output.format),
        }),
        None,
    );
    let book_bytes = manifest.read_input(&args.book)?;
    let offers: Vec<ContractOffer> =
        serde_json::from_slice(&book_bytes).map_err(|e| CliError::in_file(&args.book, e))?;
    check_book(&offers)?;
    let prices = read_price_series(
        &manifest.read_input(&args.prices)?[..],
        MarketKind::DayAhead,
        args.unit,
    )
    .map_err(|e| CliError::in_file(&args.prices, e))?;
    let demand = read_demand_profile(&manifest.read_input(&args.demand)?[..])
        .map_err(|e| CliError::in_file(&args.demand, e))?;
    if args.min_block_hhps == 0 {
        return Err(CliError::Validation(
            "--min-block-hhps must be at least 1".into(),
        ));
    }

    let partition = partition_peaks_valleys(&prices, args.min_block_hhps);
    let market = MarketContext {
        demand: &demand.profile,
        partition: &partition,
        prices: &prices,
    };
    let allocation = allocate(&offers, &market);
    for e in &allocation.eliminated {
        log::info!("offer {} not allocated: {}", e.offer_id, e.reason);
    }

    let mut out = OutDir::create(&args.output.out_dir)?;
    match args.output.format {
        Format::Json => out.write_json("allocation.json", &allocation.record())?,
        Format::Csv => {
            #[derive(Serialize)]
            struct AcceptedRow<'a> {
                offer_id: u64,
                fleet_id: &'a str,
                hhp_index: usize,
                quantity_kw: f64,
                bid_pence_per_kw: f64,
                payment_pence_per_kw: f64,
                fine_pence_per_kw: f64,
                expected_kw: f64,
            }
            #[derive(Serialize)]
            struct ResidualRow {
                hhp_index: usize,
                residual_demand_kw: f64,
            }
            let accepted: Vec<AcceptedRow> = allocation
                .accepted
                .iter()
                .map(|a| AcceptedRow {
                    offer_id: a.offer.id.0,
                    fleet_id: &a.offer.fleet_id.0,
                    hhp_index: a.offer.hhp_index,
                    quantity_kw: a.offer.quantity_kw,
                    bid_pence_per_kw: a.offer.bid_pence_per_kw,
                    payment_pence_per_kw: a.payment_pence_per_kw,
                    fine_pence_per_kw: a.fine_pence_per_kw,
                    expected_kw: a.expected_kw,
                })
                .collect();
            let residual: Vec<ResidualRow> = allocation
                .residual_demand_kw
                .iter()
                .enumerate()
                .map(|(hhp_index, &r)| ResidualRow {
                    hhp_index,
                    residual_demand_kw: r,
                })
                .collect();
            out.write_csv("accepted.csv", &accepted)?;
            out.write_csv("residual.csv", &residual)?;
            out.write_csv("eliminated.csv", &allocation.record().eliminated)?;
        }
    }
    out.finish(manifest)?;
    println!(
        "accepted {} of {} offers; residual {:.3} kW",
        allocation.accepted.len(),
        offers.len(),
        allocation.residual_demand_kw.iter().sum::<f64>()
    );
    Ok(())
}

/// Malformed offers stop the run rather than being dropped at intake.
fn check_book(offers: &[ContractOffer]) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for o in offers {
        if !seen.insert(o.id) {
            return Err(CliError::Validation(format!(
                "offer {}: duplicate id",
                o.id
            )));
        }
        o.validate()
            .map_err(|e| CliError::Validation(format!("offer {}: {e}", o.id)))?;
    }
    Ok(())
}

fn default_demand() -> f64 {
    3000.0
}
fn default_penalty() -> f64 {
    50.0
}
fn default_jitter() -> f64 {
    0.1
}
fn default_min_block() -> usize {
    DEFAULT_MIN_BLOCK_HHPS
}

/// Simulation config file. Fleets default to six of twenty EVs each.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    #[serde(default)]
    fleets: Vec<FleetProfile>,
    #[serde(default = "default_demand")]
    demand_kw_per_hhp: f64,
    #[serde(default = "default_penalty")]
    penalty_pence_per_kw: f64,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default = "default_jitter")]
    capacity_jitter: f64,
    #[serde(default = "default_min_block")]
    min_block_hhps: usize,
    prices: Option<PriceSource>,
    sweep: Option<SweepFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriceSource {
    /// CSV path, relative to the config file.
    path: Option<PathBuf>,
    unit: Option<PriceUnit>,
    synthetic: Option<DayShape>,
    day: Option<NaiveDate>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    fleet_counts: Vec<usize>,
    runs: u64,
}

fn load_prices(
    manifest: &mut RunManifest,
    path: &Path,
    unit: PriceUnit,
) -> Result<PriceSeries, CliError> {
    read_price_series(&manifest.read_input(path)?[..], MarketKind::DayAhead, unit)
        .map_err(|e| CliError::in_file(path, e))
}

fn resolve_sim(
    command: &str,
    args: &SimulateArgs,
) -> Result<(SimConfig, Option<SweepFile>, RunManifest), CliError> {
    let mut manifest = RunManifest::new(command, serde_json::Value::Null, None);
    let text = manifest.read_input(&args.config)?;
    let text = String::from_utf8(text).map_err(|e| CliError::in_file(&args.config, e))?;
    let file: SimFile = toml::from_str(&text).map_err(|e| CliError::in_file(&args.config, e))?;

    let prices = match (&args.prices, &file.prices) {
        (Some(path), _) => load_prices(&mut manifest, path, args.unit)?,
        (None, Some(src)) => match (&src.path, src.synthetic) {
            (Some(rel), None) => {
                let base = args.config.parent().unwrap_or(Path::new(""));
                load_prices(
                    &mut manifest,
                    &base.join(rel),
                    src.unit.unwrap_or(args.unit),
                )?
            }
            (None, Some(shape)) => {
                let day = src
                    .day
                    .ok_or_else(|| CliError::Validation("[prices] synthetic needs a day".into()))?;
                synthetic_price_series(day, shape, src.seed)
            }
            _ => {
                return Err(CliError::Validation(
                    "[prices] needs exactly one of path or synthetic".into(),
                ))
            }
        },
        (None, None) => {
            return Err(CliError::Validation(
                "no prices: pass --prices or add a [prices] table to the config".into(),
            ))
        }
    };

    let mut config = SimConfig::with_prices(prices);
    if !file.fleets.is_empty() {
        config.fleets = file.fleets;
    }
    config.demand_kw_per_hhp = file.demand_kw_per_hhp;
    config.penalty_pence_per_kw = file.penalty_pence_per_kw;
    config.rng_seed = args.seed.unwrap_or(file.rng_seed);
    config.capacity_jitter = file.capacity_jitter;
    config.min_block_hhps = args.min_block_hhps.unwrap_or(file.min_block_hhps);
    if config.min_block_hhps == 0 {
        return Err(CliError::Validation(
            "min_block_hhps must be at least 1".into(),
        ));
    }
    manifest.seed = Some(config.rng_seed);
    Ok((config, file.sweep, manifest))
}

/// Offers at or above the fine have no chance of being honoured.
fn check_penalty(config: &SimConfig) -> Result<(), CliError> {
    let offers = generate_fleet_offers(config)?;
    let max_bid = offers
        .iter()
        .map(|o| o.bid_pence_per_kw)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_bid >= config.penalty_pence_per_kw {
        return Err(CliError::Validation(format!(
            "penalty {} p/kW must exceed the highest bid {max_bid:.4} p/kW, otherwise offers imply a zero or negative success probability",
            config.penalty_pence_per_kw
        )));
    }
    Ok(())
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<(), CliError> {
    let (config, _, mut manifest) = resolve_sim("simulate", args)?;
    check_penalty(&config)?;
    manifest.config = serde_json::to_value(&config).expect("config serializes");
    let report = run_day(&config)?;

    let mut out = OutDir::create(&args.output.out_dir)?;
    match args.output.format {
        Format::Json => out.write_json("day_report.json", &report)?,
        Format::Csv => {
            out.write_csv("day_summary.csv", &[DaySummaryRow::from(&report)])?;
            out.write_csv("hhp_series.csv", &report.series)?;
        }
    }
    out.finish(manifest)?;
    print!("{}", day_text(&report));
    Ok(())
}

#[derive(Serialize)]
struct DaySummaryRow {
    day: NaiveDate,
    fleet_count: usize,
    offer_count: usize,
    accepted_contract_count: usize,
    eliminated_count: usize,
    expected_delivered_kw: f64,
    platform_profit_gbp: f64,
    fleets_profit_gbp: f64,
    avg_platform_profit_pence_per_kw: f64,
    avg_fleet_profit_pence_per_kw: f64,
    wholesale_cost_gbp: f64,
}

impl From<&DayReport> for DaySummaryRow {
    fn from(r: &DayReport) -> Self {
        DaySummaryRow {
            day: r.day,
            fleet_count: r.fleet_count,
            offer_count: r.offer_count,
            accepted_contract_count: r.accepted_contract_count,
            eliminated_count: r.eliminated_count,
            expected_delivered_kw: r.expected_delivered_kw,
            platform_profit_gbp: r.platform_profit_gbp,
            fleets_profit_gbp: r.fleets_profit_gbp,
            avg_platform_profit_pence_per_kw: r.avg_platform_profit_pence_per_kw,
            avg_fleet_profit_pence_per_kw: r.avg_fleet_profit_pence_per_kw,
            wholesale_cost_gbp: r.wholesale_cost_gbp,
        }
    }
}

fn day_text(r: &DayReport) -> String {
    format!(
        "{day}: {fleets} fleets\n\
         total platform profit: £{pp:.2}\n\
         total fleets profit: £{fp:.2}\n\
         average fleet profit per kW: {fk:.3} p\n\
         average platform profit per kW: {pk:.3} p\n\
         accepted contracts: {n}\n",
        day = r.day,
        fleets = r.fleet_count,
        pp = r.platform_profit_gbp,
        fp = r.fleets_profit_gbp,
        fk = r.avg_fleet_profit_pence_per_kw,
        pk = r.avg_platform_profit_pence_per_kw,
        n = r.accepted_contract_count,
    )
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let (config, file_sweep, mut manifest) = resolve_sim("sweep", &args.sim)?;
    let fleet_counts = args
        .fleet_counts
        .clone()
        .or_else(|| file_sweep.as_ref().map(|s| s.fleet_counts.clone()))
        .unwrap_or_else(|| vec![6, 8]);
    let runs = args
        .runs
        .or(file_sweep.as_ref().map(|s| s.runs))
        .unwrap_or(100);
    if runs == 0 {
        return Err(CliError::Validation("sweep needs at least one run".into()));
    }
    for &n in &fleet_counts {
        check_penalty(&config.with_fleet_count(n))?;
    }
    let seeds: Vec<u64> = (0..runs).map(|i| config.rng_seed + i).collect();
    manifest.config = json!({
        "base": config,
        "fleet_counts": fleet_counts,
        "runs": runs,
    });
    let report = competition_sweep(&config, &fleet_counts, &seeds)?;

    let mut out = OutDir::create(&args.sim.output.out_dir)?;
    match args.sim.output.format {
        Format::Json => out.write_json("sweep_report.json", &report)?,
        Format::Csv => {
            out.write_csv("sweep_points.csv", &sweep_rows(&report))?;
            out.write_csv("sweep_deltas.csv", &report.deltas)?;
        }
    }
    out.finish(manifest)?;
    print!("{}", sweep_text(&report));
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    fleet_count: usize,
    runs: usize,
    platform_profit_gbp: f64,
    platform_profit_gbp_ci95: f64,
    fleets_profit_gbp: f64,
    fleets_profit_gbp_ci95: f64,
    avg_platform_profit_pence_per_kw: f64,
    avg_platform_profit_pence_per_kw_ci95: f64,
    avg_fleet_profit_pence_per_kw: f64,
    avg_fleet_profit_pence_per_kw_ci95: f64,
    accepted_contract_count: f64,
    accepted_contract_count_ci95: f64,
}

fn sweep_rows(report: &SweepReport) -> Vec<SweepRow> {
    report
        .points
        .iter()
        .map(|p| SweepRow {
            fleet_count: p.fleet_count,
            runs: p.runs,
            platform_profit_gbp: p.platform_profit_gbp.mean,
            platform_profit_gbp_ci95: p.platform_profit_gbp.ci95,
            fleets_profit_gbp: p.fleets_profit_gbp.mean,
            fleets_profit_gbp_ci95: p.fleets_profit_gbp.ci95,
            avg_platform_profit_pence_per_kw: p.avg_platform_profit_pence_per_kw.mean,
            avg_platform_profit_pence_per_kw_ci95: p.avg_platform_profit_pence_per_kw.ci95,
            avg_fleet_profit_pence_per_kw: p.avg_fleet_profit_pence_per_kw.mean,
            avg_fleet_profit_pence_per_kw_ci95: p.avg_fleet_profit_pence_per_kw.ci95,
            accepted_contract_count: p.accepted_contract_count.mean,
            accepted_contract_count_ci95: p.accepted_contract_count.ci95,
        })
        .collect()
}

fn sweep_text(report: &SweepReport) -> String {
    let mut s = format!("{:<40}", "");
    for p in &report.points {
        s += &format!("{:>18}", format!("{} fleets", p.fleet_count));
    }
    s.push('\n');
    let mut line = |label: &str, f: &dyn Fn(&v2g_market::simulator::SweepPoint) -> String| {
        s += &format!("{label:<40}");
        for p in &report.points {
            s += &format!("{:>18}", f(p));
        }
        s.push('\n');
    };
    line("total platform profit", &|p| {
        format!("£{:.2}", p.platform_profit_gbp.mean)
    });
    line("total fleets profit", &|p| {
        format!("£{:.2}", p.fleets_profit_gbp.mean)
    });
    line("average fleet profit per kW", &|p| {
        format!("{:.3} p", p.avg_fleet_profit_pence_per_kw.mean)
    });
    line("average platform profit per kW", &|p| {
        format!("{:.3} p", p.avg_platform_profit_pence_per_kw.mean)
    });
    line("accepted contracts", &|p| {
        format!("{:.1}", p.accepted_contract_count.mean)
    });
    s
}

pub fn balance_cmd(args: &BalanceArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new("balance", serde_json::Value::Null, None);
    let bytes = manifest.read_input(&args.config)?;
    let scenario: BalancingScenario =
        serde_json::from_slice(&bytes).map_err(|e| CliError::in_file(&args.config, e))?;
    manifest.config = serde_json::to_value(&scenario).expect("scenario serializes");
    let report = scenario.evaluate()?;

    let mut out = OutDir::create(&args.output.out_dir)?;
    match args.output.format {
        Format::Json => out.write_json("balance.json", &report)?,
        Format::Csv => out.write_csv("payments.csv", &report.payments)?,
    }
    out.write_csv("shortfall_curve.csv", &report.curve)?;
    out.finish(manifest)?;
    print!("{}", balance_text(&report));
    Ok(())
}

fn balance_text(r: &BalancingReport) -> String {
    let mut s = format!(
        "hhp {}: expected shortfall {:.4} kW, grid top-up £{:.4}\n",
        r.hhp_index,
        r.expected_shortfall_kw,
        r.grid_topup_cost_pence / 100.0
    );
    for p in &r.payments {
        s += &format!(
            "  {}: {:.4} p (share {:.4})\n",
            p.ev_id, p.total_pence, p.share
        );
    }
    s
}

/// Any JSON output this tool writes.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyReport {
    Sweep(SweepReport),
    Day(DayReport),
    Balance(BalancingReport),
    Allocation(AllocationRecord),
}

#[derive(Serialize)]
struct SummaryRow {
    metric: String,
    value: f64,
}

fn row(metric: impl Into<String>, value: f64) -> SummaryRow {
    SummaryRow {
        metric: metric.into(),
        value,
    }
}

pub fn report_cmd(args: &ReportArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(
        "report",
        json!({ "format": format_name(args.output.format) }),
        None,
    );
    let bytes = manifest.read_input(&args.input)?;
    let report: AnyReport = serde_json::from_slice(&bytes).map_err(|_| {
        CliError::Validation(format!(
            "{}: not an allocation, day, sweep or balance report",
            args.input.display()
        ))
    })?;
    let (text, rows) = match &report {
        AnyReport::Day(r) => (
            day_text(r),
            vec![
                row("platform_profit_gbp", r.platform_profit_gbp),
                row("fleets_profit_gbp", r.fleets_profit_gbp),
                row(
                    "avg_fleet_profit_pence_per_kw",
                    r.avg_fleet_profit_pence_per_kw,
                ),
                row(
                    "avg_platform_profit_pence_per_kw",
                    r.avg_platform_profit_pence_per_kw,
                ),
                row("accepted_contract_count", r.accepted_contract_count as f64),
                row("wholesale_cost_gbp", r.wholesale_cost_gbp),
            ],
        ),
        AnyReport::Sweep(r) => {
            let mut rows = Vec::new();
            for p in &r.points {
                let n = p.fleet_count;
                rows.push(row(
                    format!("fleets_{n}.platform_profit_gbp"),
                    p.platform_profit_gbp.mean,
                ));
                rows.push(row(
                    format!("fleets_{n}.fleets_profit_gbp"),
                    p.fleets_profit_gbp.mean,
                ));
                rows.push(row(
                    format!("fleets_{n}.avg_fleet_profit_pence_per_kw"),
                    p.avg_fleet_profit_pence_per_kw.mean,
                ));
                rows.push(row(
                    format!("fleets_{n}.avg_platform_profit_pence_per_kw"),
                    p.avg_platform_profit_pence_per_kw.mean,
                ));
                rows.push(row(
                    format!("fleets_{n}.accepted_contract_count"),
                    p.accepted_contract_count.mean,
                ));
            }
            (sweep_text(r), rows)
        }
        AnyReport::Balance(r) => {
            let mut rows = vec![
                row("expected_shortfall_kw", r.expected_shortfall_kw),
                row("grid_topup_cost_pence", r.grid_topup_cost_pence),
            ];
            for p in &r.payments {
                rows.push(row(format!("{}.total_pence", p.ev_id), p.total_pence));
            }
            (balance_text(r), rows)
        }
        AnyReport::Allocation(r) => {
            let residual: f64 = r.residual_demand_kw.iter().sum();
            let paid: Vec<f64> = r.accepted.iter().map(|a| a.payment_pence_per_kw).collect();
            let mean_payment = if paid.is_empty() {
                0.0
            } else {
                paid.iter().sum::<f64>() / paid.len() as f64
            };
            (
                format!(
                    "accepted {} contracts, eliminated {}, residual {residual:.3} kW\n",
                    r.accepted.len(),
                    r.eliminated.len()
                ),
                vec![
                    row("accepted_contract_count", r.accepted.len() as f64),
                    row("eliminated_count", r.eliminated.len() as f64),
                    row("residual_demand_kw", residual),
                    row("mean_payment_pence_per_kw", mean_payment),
                ],
            )
        }
    };

    let mut out = OutDir::create(&args.output.out_dir)?;
    match args.output.format {
        Format::Json => out.write_json("summary.json", &rows)?,
        Format::Csv => out.write_csv("summary.csv", &rows)?,
    }
    out.finish(manifest)?;
    print!("{text}");
    Ok(())
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Json => "json",
        Format::Csv => "csv",
    }
}
