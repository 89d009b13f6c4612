use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use v2g_market::market_data::PriceUnit;

#[derive(Debug, Parser)]
#[command(
    name = "v2g",
    version,
    about = "Clear V2G export contracts and simulate trading days"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clear a contract book against one day's prices and demand.
    Allocate(AllocateArgs),
    /// Simulate one trading day of fleets bidding for export contracts.
    Simulate(SimulateArgs),
    /// Compare mean outcomes across fleet counts and seeds.
    Sweep(SweepArgs),
    /// Price balancing-market standby for plugged-in EVs at one hhp.
    Balance(BalanceArgs),
    /// Summarise a JSON output written by another command.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn parse_unit(s: &str) -> Result<PriceUnit, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    /// JSON list of contract offers.
    #[arg(long)]
    pub book: PathBuf,
    /// `date,hhp_index,price` CSV of day-ahead prices.
    #[arg(long)]
    pub prices: PathBuf,
    /// `hhp_index,demand_kw` CSV.
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long, value_parser = parse_unit, default_value = "pence_per_kwh")]
    pub unit: PriceUnit,
    #[arg(long, default_value_t = v2g_market::market_data::DEFAULT_MIN_BLOCK_HHPS)]
    pub min_block_hhps: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Price CSV; replaces the config's synthetic prices.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    #[arg(long, value_parser = parse_unit, default_value = "pence_per_kwh")]
    pub unit: PriceUnit,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_block_hhps: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimulateArgs,
    /// Ascending fleet counts, e.g. `6,8`.
    #[arg(long, value_delimiter = ',')]
    pub fleet_counts: Option<Vec<usize>>,
    /// Number of seeds, counted up from the base seed.
    #[arg(long)]
    pub runs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// JSON balancing scenario.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON output of allocate, simulate, sweep or balance.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: Output,
}
