//! Expenditure savings, consumer-surplus bounds and the counterfactual
//! price gap for non-participants.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::econometrics::{robust_bound, TrendBlock};
use crate::error::{Error, Result, RowIssue};
use crate::panel_data::{ContractPanel, Region, POST_YEAR, PRE_YEAR};

pub const MONTHS_PER_YEAR: f64 = 12.0;
/// Floor applied to counterfactual post-period prices.
pub const PRICE_FLOOR: f64 = 0.01;
/// Relative gap below which the logarithmic mean uses its series; the
/// truncation error there is under 1e-18 relative.
const LIMIT_REL_TOL: f64 = 1e-4;

/// One period's savings bounds and subsidy outlay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SavingsTotals {
    pub lower: f64,
    pub upper: f64,
    pub subsidy: f64,
}

impl SavingsTotals {
    fn scaled(self, k: f64) -> Self {
        Self { lower: self.lower * k, upper: self.upper * k, subsidy: self.subsidy * k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpenditureBounds {
    pub beta_price: f64,
    pub beta_mbps: f64,
    pub n_schools: usize,
    pub sum_unsubsidized_share: f64,
    pub monthly: SavingsTotals,
    pub annual: SavingsTotals,
    pub warnings: Vec<String>,
}

impl ExpenditureBounds {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Savings on the participants' pre-period contracts, valued at the old
/// bandwidth (lower) and at the effect-adjusted bandwidth (upper), net of
/// the subsidy share. Inputs are monthly; annual totals are twelve times.
pub fn expenditure_bounds(panel: &ContractPanel, beta_price: f64, beta_mbps: f64) -> Result<ExpenditureBounds> {
    let mut issues = Vec::new();
    let (mut q_share, mut share, mut subsidy, mut n) = (0.0, 0.0, 0.0, 0);
    for (k, r) in panel.records().iter().enumerate() {
        if !(r.participant && r.year == PRE_YEAR) {
            continue;
        }
        let Some(rho) = r.subsidy_rate else {
            issues.push(RowIssue { line: k + 2, message: format!("school '{}' has no subsidy rate", r.school_id) });
            continue;
        };
        q_share += r.bandwidth * (1.0 - rho);
        share += 1.0 - rho;
        subsidy += r.bandwidth * r.price * rho;
        n += 1;
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let mut warnings = Vec::new();
    if n == 0 {
        warnings.push("no participant pre-period records; totals are zero".to_string());
    }
    if beta_price > 0.0 {
        warnings.push(format!("beta_price = {beta_price} is positive; bounds are negative and inverted"));
    }
    if beta_mbps < 0.0 {
        warnings.push(format!("beta_mbps = {beta_mbps} is negative; upper bound lies below lower"));
    }
    let lower = -beta_price * q_share;
    let upper = lower + -beta_price * beta_mbps * share;
    let monthly = SavingsTotals { lower, upper, subsidy };
    Ok(ExpenditureBounds {
        beta_price,
        beta_mbps,
        n_schools: n,
        sum_unsubsidized_share: share,
        monthly,
        annual: monthly.scaled(MONTHS_PER_YEAR),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub g: f64,
    pub beta_price: f64,
    pub beta_mbps: f64,
    pub annual: SavingsTotals,
}

/// Expenditure bounds when both effects are re-estimated under trend
/// violation factor `g`.
pub fn expenditure_sensitivity(
    panel: &ContractPanel,
    price: &TrendBlock,
    bandwidth: &TrendBlock,
    grid: &[f64],
) -> Result<Vec<SensitivityRow>> {
    grid.iter()
        .map(|&g| {
            let bp = robust_bound(price, g)?.estimate;
            let bm = robust_bound(bandwidth, g)?.estimate;
            let b = expenditure_bounds(panel, bp, bm)?;
            Ok(SensitivityRow { g, beta_price: bp, beta_mbps: bm, annual: b.annual })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareBound {
    pub school_id: String,
    pub p0: f64,
    pub p1: f64,
    pub q0: f64,
    pub q1: f64,
    pub lower: f64,
    pub upper: f64,
    /// Post-period price was raised to the floor.
    pub price_floored: bool,
}

/// Logarithmic mean of two positive numbers, continuous at `a = b`.
fn log_mean(a: f64, b: f64) -> f64 {
    if (b - a).abs() < LIMIT_REL_TOL * a {
        // Second-order expansion around the arithmetic mean.
        let m = 0.5 * (a + b);
        let d = b - a;
        m - d * d / (12.0 * m)
    } else {
        (b - a) / ((b - a) / a).ln_1p()
    }
}

/// Bounds on the consumer-surplus change from a move (p0, q0) to (p1, q1)
/// for log-concave demand. The upper bound is attained by log-linear demand.
pub fn welfare_bounds(p0: f64, p1: f64, q0: f64, q1: f64) -> Result<WelfareBound> {
    for (name, v) in [("p0", p0), ("p1", p1), ("q0", q0), ("q1", q1)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::domain(format!("{name} = {v} must be positive")));
        }
    }
    let dp = p0 - p1;
    Ok(WelfareBound {
        school_id: String::new(),
        p0,
        p1,
        q0,
        q1,
        lower: q0 * dp,
        upper: dp * log_mean(q0, q1),
        price_floored: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WelfareMode {
    Observed,
    Counterfactual { beta_price: f64, beta_mbps: f64 },
}

/// One bound per school observed in both years, ordered by school id.
pub fn welfare_report(panel: &ContractPanel, mode: WelfareMode) -> Result<Vec<WelfareBound>> {
    panel
        .school_pairs()
        .into_iter()
        .map(|pair| {
            let (p0, q0) = (pair.pre.price, pair.pre.bandwidth);
            let (p1, q1, floored) = match mode {
                WelfareMode::Observed => (pair.post.price, pair.post.bandwidth, false),
                WelfareMode::Counterfactual { beta_price, beta_mbps } => {
                    let raw = p0 + beta_price;
                    (raw.max(PRICE_FLOOR), q0 + beta_mbps, raw < PRICE_FLOOR)
                }
            };
            let mut b = welfare_bounds(p0, p1, q0, q1)
                .map_err(|e| Error::domain(format!("school '{}': {e}", pair.pre.school_id)))?;
            b.school_id = pair.pre.school_id.clone();
            b.price_floored = floored;
            Ok(b)
        })
        .collect()
}

pub fn write_welfare_csv<W: Write>(rows: &[WelfareBound], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Consortium price per Mbps by bandwidth tier. A school buying `b` Mbps
/// pays the price of the smallest tier of at least `b`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    tiers: Vec<(f64, f64)>,
}

impl PriceSchedule {
    pub fn new(mut tiers: Vec<(f64, f64)>) -> Result<Self> {
        if tiers.iter().any(|&(b, p)| !(b > 0.0 && p > 0.0 && b.is_finite() && p.is_finite())) {
            return Err(Error::domain("schedule tiers need positive bandwidth and price"));
        }
        tiers.sort_by(|a, b| a.0.total_cmp(&b.0));
        if tiers.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("schedule has repeated bandwidth tiers"));
        }
        Ok(Self { tiers })
    }

    pub fn price(&self, bandwidth: f64) -> Option<f64> {
        self.tiers.iter().find(|(b, _)| *b >= bandwidth).map(|&(_, p)| p)
    }

    pub fn tiers(&self) -> &[(f64, f64)] {
        &self.tiers
    }
}

pub type ConsortiumSchedules = BTreeMap<Region, PriceSchedule>;

#[derive(Debug, Deserialize)]
struct TierRow {
    region: String,
    bandwidth_mbps: f64,
    price_per_mbps: f64,
}

/// Reads schedules from CSV with columns region, bandwidth_mbps, price_per_mbps.
pub fn load_schedules<R: Read>(source: R) -> Result<ConsortiumSchedules> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut tiers: BTreeMap<Region, Vec<(f64, f64)>> = BTreeMap::new();
    let mut issues = Vec::new();
    let headers = reader.headers()?.clone();
    for record in reader.records() {
        let record = record?;
        let row: TierRow = record.deserialize(Some(&headers))?;
        match row.region.parse::<Region>() {
            Ok(region) => tiers.entry(region).or_default().push((row.bandwidth_mbps, row.price_per_mbps)),
            Err(message) => {
                issues.push(RowIssue { line: record.position().map_or(0, |p| p.line() as usize), message })
            }
        }
    }
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    tiers.into_iter().map(|(r, t)| Ok((r, PriceSchedule::new(t)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualGap {
    pub school_id: String,
    pub region: Region,
    pub bandwidth: f64,
    pub actual_price: f64,
    pub consortium_price: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSchool {
    pub school_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n_input: usize,
    pub n_positive: usize,
    pub mean_positive: f64,
    pub n_nonpositive: usize,
    /// Mean of |gap| over schools that paid no more than the consortium price.
    pub mean_nonpositive_magnitude: f64,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gaps: Vec<CounterfactualGap>,
    pub skipped: Vec<SkippedSchool>,
    pub summary: GapSummary,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Compares each non-participant's 2015 price with what its region's
/// consortium schedule charges for the same bandwidth.
pub fn counterfactual_gap(panel: &ContractPanel, schedules: &ConsortiumSchedules) -> GapReport {
    let mut gaps = Vec::new();
    let mut skipped = Vec::new();
    let mut records: Vec<_> = panel.records().iter().filter(|r| !r.participant && r.year == POST_YEAR).collect();
    records.sort_by(|a, b| a.school_id.cmp(&b.school_id));
    for r in &records {
        let consortium = match schedules.get(&r.region) {
            None => Err(format!("no consortium schedule for region {}", r.region)),
            Some(s) => s.price(r.bandwidth).ok_or_else(|| format!("no tier covers {} Mbps in {}", r.bandwidth, r.region)),
        };
        match consortium {
            Ok(price) => gaps.push(CounterfactualGap {
                school_id: r.school_id.clone(),
                region: r.region,
                bandwidth: r.bandwidth,
                actual_price: r.price,
                consortium_price: price,
                gap: r.price - price,
            }),
            Err(reason) => skipped.push(SkippedSchool { school_id: r.school_id.clone(), reason }),
        }
    }
    let positive: Vec<f64> = gaps.iter().filter(|g| g.gap > 0.0).map(|g| g.gap).collect();
    let rest: Vec<f64> = gaps.iter().filter(|g| g.gap <= 0.0).map(|g| -g.gap).collect();
    let summary = GapSummary {
        n_input: records.len(),
        n_positive: positive.len(),
        mean_positive: mean(&positive),
        n_nonpositive: rest.len(),
        mean_nonpositive_magnitude: mean(&rest),
        n_skipped: skipped.len(),
    };
    GapReport { gaps, skipped, summary }
}

pub fn write_gap_csv<W: Write>(rows: &[CounterfactualGap], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
