//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::process::Command;
use std::time::Instant;

use bundling::auction_sim::{run_grid, scatter_data, SimConfig, SimulationSummary};
use bundling::distributions::{convolve_bundle, CostDistribution, DEFAULT_BUNDLE_GRID};
use bundling::econometrics::{did_estimate, robust_bound, DiDSpec, Outcome, TrendBlock};
use bundling::equilibrium::{decentralized_bid, MarketConfig};
use bundling::panel_data::{
    override_subsidy_rates, synthesize_panel, Calibration, Category, ContractPanel, ContractRecord, InjectedEffects,
    Provenance, Region, SubsidyTargets, SynthesisOptions, Transport,
};
use bundling::policy_bounds::{counterfactual_gap, expenditure_bounds, welfare_bounds, PriceSchedule, MONTHS_PER_YEAR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_VALUES: [usize; 4] = [2, 3, 5, 10];
const GAMMAS: [f64; 4] = [4.0, 8.0, 12.0, 16.0];

/// Reference grid, rows N = 2, 3, 5, 10; columns gamma = 4, 8, 12, 16.
const REF_TOTAL_BIDS: [[f64; 4]; 4] = [
    [112.14, 98.07, 87.65, 82.22],
    [108.28, 94.75, 86.08, 79.18],
    [104.54, 91.04, 81.80, 77.28],
    [99.64, 88.41, 80.18, 75.51],
];
const REF_PAYMENTS: [[f64; 4]; 4] = [
    [96.55, 72.47, 51.94, 38.13],
    [92.69, 68.54, 49.89, 35.35],
    [89.26, 64.50, 46.24, 32.34],
    [83.97, 62.44, 43.49, 29.84],
];

// Pinned tolerances.
const C1_REPS: u64 = 100_000;
const C1_THREADS: usize = 4;
const C1_SECONDS: f64 = 60.0;
const C2_REL: f64 = 0.02;
const C2_ABS: f64 = 1.0;
const C2_BUNDLE_MEAN_TOL: f64 = 0.1;
const C3_REPS: u64 = 10_000;
const C4_TOL: f64 = 1e-6;
const C5_SEEDS: u64 = 200;
const C5_COVERAGE: f64 = 0.90;
const C5_MAX_REJECT: f64 = 0.10;
const C6_TARGET: f64 = -0.88;
const C6_TOL: f64 = 0.02;
const C6_AFFINE_TOL: f64 = 1e-12;
const C7_REL: f64 = 0.001;
const C8_SHARP_TOL: f64 = 1e-9;
const C8_LIMIT_TOL: f64 = 1e-6;
const C9_TOL: f64 = 1e-9;

/// Coefficients behind the savings table, as reported to three decimals.
const BETA_PRICE: f64 = -9.174;
const BETA_MBPS: f64 = 380.062;
const REF_SAVINGS: (f64, f64, f64) = (1_618_269.0, 3_482_281.0, 2_474_609.0);

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        println!("{} criterion {id}: {title}; {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn grid_values(summary: &SimulationSummary, f: impl Fn(&bundling::auction_sim::CellSummary) -> f64) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (i, &n) in N_VALUES.iter().enumerate() {
        for (j, &g) in GAMMAS.iter().enumerate() {
            out[i][j] = f(summary.cell(n, g).expect("cell present"));
        }
    }
    out
}

fn monotone_grid(v: &[[f64; 4]; 4]) -> (bool, bool) {
    let in_gamma = v.iter().all(|row| strictly_decreasing(row));
    let in_n = (0..4).all(|j| strictly_decreasing(&[v[0][j], v[1][j], v[2][j], v[3][j]]));
    (in_gamma, in_n)
}

fn criteria_1_and_2(report: &mut Report) {
    let base = SimConfig { replications: C1_REPS, seed: 20_240_101, ..SimConfig::default() };
    let start = Instant::now();
    let summary = run_grid(&base, &N_VALUES, &GAMMAS, C1_THREADS).expect("grid runs");
    let secs = start.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());

    let post = grid_values(&summary, |c| c.avg_payment_post);
    let pre = grid_values(&summary, |c| c.avg_payment_pre);
    let (post_g, post_n) = monotone_grid(&post);
    let (pre_g, pre_n) = monotone_grid(&pre);
    let monotone = post_g && post_n && pre_g && pre_n;
    report.line(
        1,
        "payments strictly decreasing in gamma and N",
        monotone,
        format!(
            "bundled: gamma {post_g}, N {post_n}; separate: gamma {pre_g}, N {pre_n}; R = {C1_REPS} per cell, {C1_THREADS} threads"
        ),
    );
    report.line(
        1,
        "grid runtime",
        secs < C1_SECONDS,
        format!("{secs:.1} s against a {C1_SECONDS} s target on {cores} available core(s)"),
    );

    let candidates: [(&str, [[f64; 4]; 4]); 4] = [
        ("avg_total_bid_pre", grid_values(&summary, |c| c.avg_total_bid_pre)),
        ("avg_total_bid_post", grid_values(&summary, |c| c.avg_total_bid_post)),
        ("avg_payment_pre", pre),
        ("avg_payment_post", post),
    ];
    let matches = |table: &[[f64; 4]; 4], v: &[[f64; 4]; 4]| {
        (0..4).all(|i| (0..4).all(|j| (v[i][j] - table[i][j]).abs() <= (C2_REL * table[i][j].abs()).max(C2_ABS)))
    };
    let mut chosen = Vec::new();
    for (block, table) in [("total bids", &REF_TOTAL_BIDS), ("final payments", &REF_PAYMENTS)] {
        let hit: Vec<&str> = candidates.iter().filter(|(_, v)| matches(table, v)).map(|(name, _)| *name).collect();
        chosen.push(format!("{block} -> {}", if hit.is_empty() { "none".to_string() } else { hit.join(" | ") }));
    }
    let payments_match = candidates.iter().any(|(_, v)| matches(&REF_PAYMENTS, v));
    let detail = chosen.join("; ");
    if payments_match {
        report.line(2, "reference payments within 2% or 1.0", true, detail);
        return;
    }
    println!("  candidate quantities per cell (table payment, table total bid | pre total bid, post total bid, pre payment, post payment):");
    for (i, &n) in N_VALUES.iter().enumerate() {
        for (j, &g) in GAMMAS.iter().enumerate() {
            println!(
                "  N={n:<2} gamma={g:<4} table {:>7.2} {:>7.2} | {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                REF_PAYMENTS[i][j],
                REF_TOTAL_BIDS[i][j],
                candidates[0].1[i][j],
                candidates[1].1[i][j],
                candidates[2].1[i][j],
                candidates[3].1[i][j]
            );
        }
    }
    report.line(2, "reference payments within 2% or 1.0", false, format!("no interpretation matches all 16 cells; {detail}"));

    // Degraded form: monotonicity plus the bundle-cost mean shift.
    let dist = CostDistribution::make_truncated_exponential(40.0, 10.0, 100.0).unwrap();
    let mut worst: f64 = 0.0;
    for &g in &GAMMAS {
        let b = convolve_bundle(&dist, g, DEFAULT_BUNDLE_GRID).unwrap();
        worst = worst.max((b.mean() - (80.0 - g)).abs());
    }
    let mc_worst = summary.cells.iter().map(|c| (c.avg_bundle_cost - (80.0 - c.gamma)).abs()).fold(0.0, f64::max);
    report.line(
        2,
        "degraded form: monotonicity and E[phi] = 80 - gamma",
        monotone && worst <= C2_BUNDLE_MEAN_TOL,
        format!("max |E[phi] - (80 - gamma)| = {worst:.2e} by quadrature ({mc_worst:.3} simulated), tolerance {C2_BUNDLE_MEAN_TOL}"),
    );
}

fn criterion_3(report: &mut Report) {
    let mut fracs = Vec::new();
    let mut above_at_16 = 0;
    for &g in &GAMMAS {
        let cfg = SimConfig { n_bidders: 2, gamma: g, replications: C3_REPS, seed: 77, ..SimConfig::default() };
        let data = scatter_data(&cfg, 4).unwrap();
        fracs.push(data.frac_bids_below_diagonal());
        if g == 16.0 {
            above_at_16 = data.bids.iter().filter(|b| b.post_bid > b.pre_total_bid).count();
        }
    }
    let majority = fracs.iter().all(|&f| f > 0.5);
    let increasing = fracs.windows(2).all(|w| w[1] > w[0]);
    let shown: Vec<String> = fracs.iter().map(|f| format!("{f:.4}")).collect();
    report.line(
        3,
        "N = 2 scatter below the diagonal",
        majority && increasing && above_at_16 > 0,
        format!(
            "fractions for gamma 4, 8, 12, 16: [{}]; majority {majority}; increasing {increasing}; {above_at_16} points above at gamma 16",
            shown.join(", ")
        ),
    );
}

fn criterion_4(report: &mut Report) {
    let m = MarketConfig::new(2, 0.0, CostDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
    let worst = (0..100)
        .map(|k| {
            let c = k as f64 / 99.0;
            (decentralized_bid(&m, c, 1.0 - c).unwrap() - (1.0 + c) / 2.0).abs()
        })
        .fold(0.0, f64::max);
    report.line(4, "uniform closed-form bid (1 + c) / 2", worst <= C4_TOL, format!("max error {worst:.2e} over 100 points"));
}

fn criterion_5(report: &mut Report) {
    let cal = Calibration::reference();
    let (mut cover, mut reject) = ([0u32; 2], [0u32; 2]);
    let injected = [-9.17, 380.06];
    let outcomes = [Outcome::Price, Outcome::Bandwidth];
    for seed in 0..C5_SEEDS {
        let treated =
            synthesize_panel(&cal, &SynthesisOptions::new(&cal, InjectedEffects::new(injected[0], injected[1]), seed)).unwrap();
        let null = synthesize_panel(&cal, &SynthesisOptions::new(&cal, InjectedEffects::default(), 100_000 + seed)).unwrap();
        for k in 0..2 {
            let spec = DiDSpec::full_controls(outcomes[k]);
            let est = did_estimate(&treated, &spec).unwrap();
            if (est.beta_did - injected[k]).abs() <= 2.0 * est.se_did() {
                cover[k] += 1;
            }
            if did_estimate(&null, &spec).unwrap().did_rejects_at_5pct() {
                reject[k] += 1;
            }
        }
    }
    let n = C5_SEEDS as f64;
    let pass = (0..2).all(|k| cover[k] as f64 / n >= C5_COVERAGE && reject[k] as f64 / n <= C5_MAX_REJECT);
    report.line(
        5,
        "injected-effect recovery and null size",
        pass,
        format!(
            "within 2 SE: price {}/{C5_SEEDS}, bandwidth {}/{C5_SEEDS}; null rejections: price {}/{C5_SEEDS}, bandwidth {}/{C5_SEEDS}",
            cover[0], cover[1], reject[0], reject[1]
        ),
    );
}

fn criterion_6(report: &mut Report) {
    let block = TrendBlock { beta_did: -9.17, beta_trend: -5.53, var_did: 1.3, var_trend: 0.7, cov: -0.2 };
    let at = |g: f64| robust_bound(&block, g).unwrap().estimate;
    let spot = at(2.5);
    let slope = at(1.0) - at(0.0);
    let worst = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5].iter().map(|&g| (at(g) - (at(0.0) + g * slope)).abs()).fold(0.0, f64::max);
    report.line(
        6,
        "robust bound at g = 2.5 and affinity in g",
        (spot - C6_TARGET).abs() <= C6_TOL && worst <= C6_AFFINE_TOL,
        format!("estimate {spot:.4} (target {C6_TARGET} ± {C6_TOL}); max affine residual {worst:.1e}"),
    );
}

fn criterion_7(report: &mut Report) {
    let cal = Calibration::reference();
    let panel = synthesize_panel(&cal, &SynthesisOptions::new(&cal, InjectedEffects::new(-9.17, 380.06), 3)).unwrap();
    let sample = panel.category(Category::D).participants();
    let monthly = |annual: f64| annual / MONTHS_PER_YEAR;
    let targets = SubsidyTargets {
        unsubsidized_bandwidth: Some(monthly(REF_SAVINGS.0) / -BETA_PRICE),
        subsidy: Some(monthly(REF_SAVINGS.2)),
        unsubsidized_share: Some(monthly(REF_SAVINGS.1 - REF_SAVINGS.0) / (-BETA_PRICE * BETA_MBPS)),
    };
    let calibrated = match override_subsidy_rates(&sample, &targets) {
        Ok(p) => p,
        Err(e) => {
            report.line(7, "expenditure identity and savings table", false, format!("subsidy calibration failed: {e}"));
            return;
        }
    };
    let b = expenditure_bounds(&calibrated, BETA_PRICE, BETA_MBPS).unwrap();
    let term = -BETA_PRICE * BETA_MBPS * b.sum_unsubsidized_share;
    let identity = b.monthly.upper == b.monthly.lower + term
        && (b.monthly.upper - b.monthly.lower - term).abs() <= 4.0 * f64::EPSILON * b.monthly.upper;
    let rel = |x: f64, t: f64| (x - t).abs() / t;
    let errs = [rel(b.annual.lower, REF_SAVINGS.0), rel(b.annual.upper, REF_SAVINGS.1), rel(b.annual.subsidy, REF_SAVINGS.2)];
    report.line(
        7,
        "expenditure identity and savings table",
        identity && errs.iter().all(|&e| e <= C7_REL),
        format!(
            "identity {identity}; annual ({:.0}, {:.0}, {:.0}) vs ({:.0}, {:.0}, {:.0}); max relative error {:.1e} over {} schools",
            b.annual.lower,
            b.annual.upper,
            b.annual.subsidy,
            REF_SAVINGS.0,
            REF_SAVINGS.1,
            REF_SAVINGS.2,
            errs.iter().copied().fold(0.0, f64::max),
            b.n_schools
        ),
    );
}

/// Romberg integration, independent of the library's quadrature.
fn romberg(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let mut prev = vec![0.5 * (b - a) * (f(a) + f(b))];
    for k in 1..22 {
        let n = 1usize << (k - 1);
        let h = (b - a) / (2 * n) as f64;
        let mid: f64 = (0..n).map(|i| f(a + (2 * i + 1) as f64 * h)).sum();
        let mut row = vec![0.5 * prev[0] + h * mid];
        for j in 1..=k {
            let w = 4f64.powi(j as i32);
            row.push((w * row[j - 1] - prev[j - 1]) / (w - 1.0));
        }
        let done = k > 4 && (row[k] - prev[k - 1]).abs() < 1e-15 * row[k].abs();
        prev = row;
        if done {
            break;
        }
    }
    *prev.last().unwrap()
}

fn criterion_8(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut sharp_worst, mut interior) = (0.0f64, 0usize);
    for _ in 0..100 {
        let p0: f64 = rng.random_range(1.0..30.0);
        let q0: f64 = rng.random_range(10.0..1000.0);
        let p1 = p0 * (1.0 - rng.random_range(0.05..0.9));
        let q1 = q0 * rng.random_range(1.01..10.0);
        let b = welfare_bounds(p0, p1, q0, q1).unwrap();
        let k = (q1 / q0).ln() / (p0 - p1);
        let exponential = romberg(|p| q0 * (-k * (p - p0)).exp(), p1, p0);
        sharp_worst = sharp_worst.max((exponential - b.upper).abs());
        let linear = romberg(|p| q0 + (q1 - q0) * (p0 - p) / (p0 - p1), p1, p0);
        if b.lower < linear && linear < b.upper {
            interior += 1;
        }
    }
    let (p0, p1, q0) = (12.0, 7.5, 250.0);
    let limit = welfare_bounds(p0, p1, q0, q0).unwrap();
    // Approach q0 from above until the true change (about (p0 - p1) * (q1 - q0) / 2) is negligible,
    // and compare both sides of the switch to the series form of the logarithmic mean.
    let limit_worst = (9..=14)
        .map(|e| {
            let b = welfare_bounds(p0, p1, q0, q0 * (1.0 + 10f64.powi(-e))).unwrap();
            (b.upper - limit.upper).abs().max((b.lower - limit.lower).abs())
        })
        .fold(0.0, f64::max);
    let below = welfare_bounds(p0, p1, q0, q0 * (1.0 + 1e-4 * (1.0 - 1e-9))).unwrap();
    let above = welfare_bounds(p0, p1, q0, q0 * (1.0 + 1e-4 * (1.0 + 1e-9))).unwrap();
    let limit_worst = limit_worst.max((above.upper - below.upper).abs());
    let limit_exact = limit.lower == q0 * (p0 - p1) && limit.upper == limit.lower;
    report.line(
        8,
        "welfare bound sharpness, linear interior, q1 -> q0 limit",
        sharp_worst <= C8_SHARP_TOL && interior == 100 && limit_worst <= C8_LIMIT_TOL && limit_exact,
        format!(
            "exponential max |error| {sharp_worst:.1e}; linear demand strictly interior in {interior}/100; limit gap {limit_worst:.1e} (exact at q1 = q0: {limit_exact})"
        ),
    );
}

fn nonparticipant(id: String, price: f64) -> ContractRecord {
    ContractRecord {
        school_id: id,
        year: 2015,
        participant: false,
        price,
        bandwidth: 200.0,
        isp: "Comcast".to_string(),
        region: Region::South,
        category: Category::D,
        transport: Transport::Fiber,
        n_isps: 4,
        school_type: "high".to_string(),
        subsidy_rate: None,
    }
}

fn criterion_9(report: &mut Report) {
    let consortium = 12.0;
    // Gaps spread symmetrically around the targets so their means are exact.
    let mut records: Vec<ContractRecord> =
        (0..57).map(|k| nonparticipant(format!("P{k:02}"), consortium + 9.47 + 0.05 * (k as f64 - 28.0))).collect();
    records.extend((0..12).map(|k| nonparticipant(format!("Q{k:02}"), consortium - (0.61 + 0.01 * (k as f64 - 5.5)))));
    let panel = ContractPanel::new(records, Provenance::Loaded).unwrap();
    let schedules = [(Region::South, PriceSchedule::new(vec![(10_000.0, consortium)]).unwrap())].into_iter().collect();
    let s = counterfactual_gap(&panel, &schedules).summary;
    let pass = s.n_input == 69
        && s.n_positive == 57
        && s.n_nonpositive == 12
        && s.n_skipped == 0
        && (s.mean_positive - 9.47).abs() <= C9_TOL
        && (s.mean_nonpositive_magnitude - 0.61).abs() <= C9_TOL;
    report.line(
        9,
        "counterfactual gap summary",
        pass,
        format!(
            "({}, {:.2}; {}, {:.2}) from {} schools, mean errors {:.1e} and {:.1e}",
            s.n_positive,
            s.mean_positive,
            s.n_nonpositive,
            s.mean_nonpositive_magnitude,
            s.n_input,
            (s.mean_positive - 9.47).abs(),
            (s.mean_nonpositive_magnitude - 0.61).abs()
        ),
    );
}

fn criterion_10(report: &mut Report) {
    let dir = tempfile::TempDir::new().unwrap();
    let mut digests = Vec::new();
    for threads in [1, 4, 8] {
        let out = dir.path().join(format!("t{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_bundling"))
            .arg("--out-dir")
            .arg(&out)
            .args(["simulate", "--reps", "2000", "--seed", "42", "--scatter", "--n", "2,5", "--gamma", "4,16"])
            .args(["--threads", &threads.to_string()])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
        digests.push(manifest["outputs"].clone());
    }
    let same = digests.windows(2).all(|w| w[0] == w[1]);
    let files = digests[0].as_array().map_or(0, |a| a.len());
    report.line(10, "simulate digests across 1, 4, 8 threads", same, format!("{files} output files compared"));
}

fn main() {
    let mut report = Report { failed: Vec::new() };
    criteria_1_and_2(&mut report);
    criterion_3(&mut report);
    criterion_4(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_8(&mut report);
    criterion_9(&mut report);
    criterion_10(&mut report);
    report.failed.dedup();
    if report.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", report.failed);
        std::process::exit(1);
    }
}
