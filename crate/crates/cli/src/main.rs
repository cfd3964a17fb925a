use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod manifest;

/// Bundled versus separate procurement: auction simulation and the
/// contract-panel estimation pipeline.
#[derive(Debug, Parser)]
#[command(name = "bundling", version)]
struct Cli {
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, env = "BUNDLING_OUT_DIR", default_value = "bundling-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo comparison of separate and bundled auctions over an (N, gamma) grid.
    Simulate(SimulateArgs),
    /// Draw a synthetic two-year contract panel.
    GenData(GenDataArgs),
    /// Difference-in-differences estimate from a contract panel.
    Did(DidArgs),
    /// Estimates under parallel-trend violations over a grid of g.
    Robust(RobustArgs),
    /// Participants' expenditure savings bounds and subsidy outlay.
    Expenditure(ExpenditureArgs),
    /// Per-school consumer-surplus bounds.
    Welfare(WelfareArgs),
    /// Non-participants' 2015 prices against consortium schedules.
    Gap(GapArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Comma-separated bidder counts.
    #[arg(long = "n", default_value = "2,3,5,10", value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Comma-separated complementarity values.
    #[arg(long, default_value = "4,8,12,16", value_delimiter = ',')]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 40.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lower: f64,
    #[arg(long, default_value_t = 100.0)]
    pub upper: f64,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Evaluate bids by quadrature instead of the interpolated table.
    #[arg(long)]
    pub exact_bids: bool,
    /// Also write per-replication bid and payment pairs for every cell.
    #[arg(long)]
    pub scatter: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Calibration JSON; defaults to the built-in summary-statistics targets.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub participants: Option<usize>,
    #[arg(long)]
    pub controls: Option<usize>,
    /// Injected effect on participants' 2015 price ($/Mbps/month).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub price_effect: f64,
    /// Injected effect on participants' 2015 bandwidth (Mbps).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mbps_effect: f64,
    /// Separate price effect for category A participants.
    #[arg(long, allow_hyphen_values = true)]
    pub cat_a_price_effect: Option<f64>,
    /// Separate bandwidth effect for category A participants.
    #[arg(long, allow_hyphen_values = true)]
    pub cat_a_mbps_effect: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeArg {
    Price,
    Bandwidth,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum SampleArg {
    #[value(name = "all")]
    All,
    #[value(name = "category_A", alias = "category_a")]
    CategoryA,
    #[value(name = "category_D", alias = "category_d")]
    CategoryD,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeArg {
    Classical,
    Hc1,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlsArg {
    /// Participant, post and interaction only.
    None,
    /// ISP count plus school type, ISP, region and service type effects.
    Full,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Contract panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Drop contracts priced above this percentile before anything else.
    #[arg(long)]
    pub price_percentile: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DidArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "price")]
    pub outcome: OutcomeArg,
    #[arg(long, value_enum, default_value = "all")]
    pub sample: SampleArg,
    #[arg(long, value_enum, default_value = "full")]
    pub controls: ControlsArg,
    #[arg(long, value_enum, default_value = "classical")]
    pub se: SeArg,
    /// Report separate group levels instead of a constant.
    #[arg(long)]
    pub group_intercepts: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RobustArgs {
    /// Estimate JSON written by `did`.
    #[arg(long, conflicts_with_all = ["beta_did", "beta_trend"])]
    pub estimate: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true, requires = "beta_trend")]
    pub beta_did: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "beta_did")]
    pub beta_trend: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub var_did: f64,
    #[arg(long, default_value_t = 0.0)]
    pub var_trend: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub cov: f64,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0:2.5:0.1")]
    pub g_grid: String,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpenditureArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_price: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_mbps: f64,
    #[arg(long, value_enum, default_value = "category_D")]
    pub sample: SampleArg,
    /// Recalibrate subsidy rates so the monthly sum of Q0*(1-rho) hits this value.
    #[arg(long)]
    pub target_unsubsidized_bandwidth: Option<f64>,
    /// Recalibrate subsidy rates so the monthly subsidy hits this value.
    #[arg(long)]
    pub target_subsidy: Option<f64>,
    /// Recalibrate subsidy rates so the sum of (1-rho) hits this value.
    #[arg(long)]
    pub target_unsubsidized_share: Option<f64>,
    /// Price and bandwidth estimate JSONs for a sensitivity table over g.
    #[arg(long, num_args = 2, value_names = ["PRICE_JSON", "MBPS_JSON"])]
    pub sensitivity: Option<Vec<PathBuf>>,
    #[arg(long, default_value = "0:2.5:0.1")]
    pub g_grid: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupArg {
    All,
    Participants,
    Nonparticipants,
}

#[derive(Debug, Args, Serialize)]
pub struct WelfareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "participants")]
    pub group: GroupArg,
    /// Replace observed 2015 outcomes by 2014 values shifted by the effects.
    #[arg(long, requires_all = ["beta_price", "beta_mbps"])]
    pub counterfactual: bool,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_price: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta_mbps: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV with columns region, bandwidth_mbps, price_per_mbps.
    #[arg(long)]
    pub schedules: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &cli.out_dir),
        Command::GenData(a) => commands::gen_data(a, &cli.out_dir),
        Command::Did(a) => commands::did(a, &cli.out_dir),
        Command::Robust(a) => commands::robust(a, &cli.out_dir),
        Command::Expenditure(a) => commands::expenditure(a, &cli.out_dir),
        Command::Welfare(a) => commands::welfare(a, &cli.out_dir),
        Command::Gap(a) => commands::gap(a, &cli.out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
