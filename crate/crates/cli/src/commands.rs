use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::Path;

use bundling::auction_sim::{run_grid, scatter_data, SimConfig};
use bundling::econometrics::{
    did_estimate, parse_g_grid, robust_table, write_robust_csv, DiDEstimate, DiDSpec, Outcome,
    SampleFilter, SeType, TrendBlock,
};
use bundling::panel_data::{
    load_contracts, override_subsidy_rates, synthesize_panel, welfare_sample_with_report, write_contracts,
    Calibration, Category, ColumnMap, ContractPanel, InjectedEffects, LoadOptions, SubsidyTargets, SynthesisOptions,
};
use bundling::policy_bounds::{
    counterfactual_gap, expenditure_bounds, expenditure_sensitivity, load_schedules, welfare_report, write_gap_csv,
    write_welfare_csv, WelfareMode,
};
use bundling::Error;

use crate::manifest::Run;
use crate::{
    ControlsArg, DidArgs, ExpenditureArgs, GapArgs, GenDataArgs, GroupArg, InputArgs, OutcomeArg, RobustArgs, SampleArg,
    SeArg, SimulateArgs, WelfareArgs,
};

/// Exit code and message for a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Numeric(_) => 3,
            e if e.is_input_error() => 2,
            _ => 1,
        };
        Failure { code, message: err.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(err: io::Error) -> Self {
        Failure { code: 1, message: err.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_reader(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> CmdResult {
    serde_json::to_writer_pretty(create(path)?, value).map_err(|e| Failure::from(Error::from(e)))
}

fn load_panel(args: &InputArgs, run: &mut Run) -> Result<ContractPanel, Failure> {
    run.input(&args.input);
    let options = LoadOptions { price_percentile: args.price_percentile };
    Ok(load_contracts(open(&args.input)?, &ColumnMap::default(), &options)?)
}

fn sample_filter(arg: SampleArg) -> SampleFilter {
    match arg {
        SampleArg::All => SampleFilter::All,
        SampleArg::CategoryA => SampleFilter::CategoryA,
        SampleArg::CategoryD => SampleFilter::CategoryD,
    }
}

pub fn simulate(args: &SimulateArgs, out_dir: &Path) -> CmdResult {
    if args.n.is_empty() || args.gamma.is_empty() {
        return Err(usage("need at least one N and one gamma"));
    }
    let base = SimConfig {
        replications: args.reps,
        seed: args.seed,
        mean: args.mean,
        lower: args.lower,
        upper: args.upper,
        exact_bids: args.exact_bids,
        ..SimConfig::default()
    };
    let threads = args.threads.max(1);
    for &n in &args.n {
        for &g in &args.gamma {
            base.with_cell(n, g).validate()?;
        }
    }
    let mut run = Run::start("simulate", args, Some(args.seed), out_dir)?;
    let summary = run_grid(&base, &args.n, &args.gamma, threads)?;
    summary.write_csv(create(&run.output("summary.csv"))?)?;
    summary.write_json(create(&run.output("summary.json"))?)?;
    if args.scatter {
        for &n in &args.n {
            for &g in &args.gamma {
                let data = scatter_data(&base.with_cell(n, g), threads)?;
                data.write_csv(create(&run.output(&format!("scatter_N{n}_gamma{g}.csv")))?)?;
            }
        }
    }
    run.finish()?;
    for c in &summary.cells {
        println!(
            "N={:<3} gamma={:<5} payment pre {:>9.4}  post {:>9.4}",
            c.n_bidders, c.gamma, c.avg_payment_pre, c.avg_payment_post
        );
    }
    Ok(())
}

pub fn gen_data(args: &GenDataArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("gen-data", args, Some(args.seed), out_dir)?;
    let cal = match &args.calibration {
        Some(path) => {
            run.input(path);
            read_json::<Calibration>(path)?
        }
        None => Calibration::reference(),
    };
    let category_a = match (args.cat_a_price_effect, args.cat_a_mbps_effect) {
        (None, None) => None,
        (p, m) => Some((p.unwrap_or(args.price_effect), m.unwrap_or(args.mbps_effect))),
    };
    let effects = InjectedEffects { price: args.price_effect, bandwidth: args.mbps_effect, category_a };
    let mut opts = SynthesisOptions::new(&cal, effects, args.seed);
    opts.n_participants = args.participants.unwrap_or(opts.n_participants);
    opts.n_controls = args.controls.unwrap_or(opts.n_controls);
    let panel = synthesize_panel(&cal, &opts)?;
    write_contracts(&panel, create(&run.output("panel.csv"))?)?;
    write_json(&cal, &run.output("calibration.json"))?;
    run.finish()?;
    println!("{} records for {} schools", panel.len(), opts.n_participants + opts.n_controls);
    Ok(())
}

pub fn did(args: &DidArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("did", args, None, out_dir)?;
    let panel = load_panel(&args.input, &mut run)?;
    let outcome = match args.outcome {
        OutcomeArg::Price => Outcome::Price,
        OutcomeArg::Bandwidth => Outcome::Bandwidth,
    };
    let mut spec = match args.controls {
        ControlsArg::None => DiDSpec::basic(outcome),
        ControlsArg::Full => DiDSpec::full_controls(outcome),
    };
    spec.sample = sample_filter(args.sample);
    spec.group_intercepts = args.group_intercepts;
    spec.se_type = match args.se {
        SeArg::Classical => SeType::Classical,
        SeArg::Hc1 => SeType::Hc1,
    };
    let est = did_estimate(&panel, &spec)?;
    est.write_json(create(&run.output("estimate.json"))?)?;
    run.finish()?;
    println!(
        "beta_did {:.4} (se {:.4})  beta_trend {:.4} (se {:.4})  n = {}",
        est.beta_did,
        est.se_did(),
        est.beta_trend,
        est.se_trend(),
        est.n_obs
    );
    for p in &est.pruned {
        println!("pruned {}: {}", p.name, p.reason);
    }
    Ok(())
}

pub fn robust(args: &RobustArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("robust", args, None, out_dir)?;
    let block = match (&args.estimate, args.beta_did, args.beta_trend) {
        (Some(path), _, _) => {
            run.input(path);
            read_json::<DiDEstimate>(path)?.trend_block()
        }
        (None, Some(beta_did), Some(beta_trend)) => TrendBlock {
            beta_did,
            beta_trend,
            var_did: args.var_did,
            var_trend: args.var_trend,
            cov: args.cov,
        },
        _ => return Err(usage("give --estimate or both --beta-did and --beta-trend")),
    };
    let grid = parse_g_grid(&args.g_grid)?;
    let rows = robust_table(&block, &grid)?;
    write_robust_csv(&rows, create(&run.output("robust.csv"))?)?;
    run.finish()?;
    for r in &rows {
        println!("g={:<5} {:>10.4}  [{:.4}, {:.4}]", r.g, r.estimate, r.ci_low, r.ci_high);
    }
    Ok(())
}

pub fn expenditure(args: &ExpenditureArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("expenditure", args, None, out_dir)?;
    let panel = load_panel(&args.input, &mut run)?;
    let panel = match args.sample {
        SampleArg::All => panel,
        SampleArg::CategoryA => panel.category(Category::A),
        SampleArg::CategoryD => panel.category(Category::D),
    }
    .participants();
    let targets = SubsidyTargets {
        unsubsidized_bandwidth: args.target_unsubsidized_bandwidth,
        subsidy: args.target_subsidy,
        unsubsidized_share: args.target_unsubsidized_share,
    };
    let panel = if targets == SubsidyTargets::default() { panel } else { override_subsidy_rates(&panel, &targets)? };
    let bounds = expenditure_bounds(&panel, args.beta_price, args.beta_mbps)?;
    bounds.write_json(create(&run.output("expenditure.json"))?)?;
    if let Some(paths) = &args.sensitivity {
        let mut blocks = Vec::new();
        for path in paths {
            run.input(path);
            blocks.push(read_json::<DiDEstimate>(path)?.trend_block());
        }
        let rows = expenditure_sensitivity(&panel, &blocks[0], &blocks[1], &parse_g_grid(&args.g_grid)?)?;
        let mut w = csv::Writer::from_writer(create(&run.output("sensitivity.csv"))?);
        w.write_record(["g", "beta_price", "beta_mbps", "lower", "upper", "subsidy"]).map_err(Error::from)?;
        for r in rows {
            w.write_record([r.g, r.beta_price, r.beta_mbps, r.annual.lower, r.annual.upper, r.annual.subsidy].map(|x| x.to_string()))
                .map_err(Error::from)?;
        }
        w.flush()?;
    }
    run.finish()?;
    for warning in &bounds.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "annual lower {:.0}  upper {:.0}  subsidy {:.0}  ({} schools)",
        bounds.annual.lower, bounds.annual.upper, bounds.annual.subsidy, bounds.n_schools
    );
    Ok(())
}

pub fn welfare(args: &WelfareArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("welfare", args, None, out_dir)?;
    let panel = load_panel(&args.input, &mut run)?;
    let panel = match args.group {
        GroupArg::All => panel,
        GroupArg::Participants => panel.participants(),
        GroupArg::Nonparticipants => panel.nonparticipants(),
    };
    let (sample, report) = welfare_sample_with_report(&panel);
    let mode = match (args.counterfactual, args.beta_price, args.beta_mbps) {
        (false, _, _) => WelfareMode::Observed,
        (true, Some(beta_price), Some(beta_mbps)) => WelfareMode::Counterfactual { beta_price, beta_mbps },
        _ => return Err(usage("--counterfactual needs --beta-price and --beta-mbps")),
    };
    let bounds = welfare_report(&sample, mode)?;
    write_welfare_csv(&bounds, create(&run.output("welfare.csv"))?)?;
    write_json(&report, &run.output("screen.json"))?;
    run.finish()?;
    let floored = bounds.iter().filter(|b| b.price_floored).count();
    println!("{} schools retained of {}; {} prices floored", report.retained, report.schools_in, floored);
    Ok(())
}

pub fn gap(args: &GapArgs, out_dir: &Path) -> CmdResult {
    let mut run = Run::start("gap", args, None, out_dir)?;
    let panel = load_panel(&args.input, &mut run)?;
    run.input(&args.schedules);
    let schedules = load_schedules(open(&args.schedules)?)?;
    let report = counterfactual_gap(&panel, &schedules);
    write_gap_csv(&report.gaps, create(&run.output("gap.csv"))?)?;
    write_json(&serde_json::json!({ "summary": report.summary, "skipped": report.skipped }), &run.output("gap_summary.json"))?;
    run.finish()?;
    let s = &report.summary;
    println!(
        "{} paid more (mean {:.2}), {} paid no more (mean {:.2}), {} skipped",
        s.n_positive, s.mean_positive, s.n_nonpositive, s.mean_nonpositive_magnitude, s.n_skipped
    );
    Ok(())
}
