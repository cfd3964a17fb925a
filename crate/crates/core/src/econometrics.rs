//! Two-period difference-in-differences with fixed-effect controls, and
//! sensitivity of the estimate to violations of parallel trends.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel_data::{Category, ContractPanel, ContractRecord, POST_YEAR, PRE_YEAR};

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.96;
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Price,
    Bandwidth,
}

impl Outcome {
    fn value(self, r: &ContractRecord) -> f64 {
        match self {
            Outcome::Price => r.price,
            Outcome::Bandwidth => r.bandwidth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffect {
    SchoolType,
    Isp,
    Region,
    /// Transport medium.
    ServiceType,
}

impl FixedEffect {
    pub const ALL: [FixedEffect; 4] =
        [FixedEffect::SchoolType, FixedEffect::Isp, FixedEffect::Region, FixedEffect::ServiceType];

    pub fn name(self) -> &'static str {
        match self {
            FixedEffect::SchoolType => "school_type",
            FixedEffect::Isp => "isp",
            FixedEffect::Region => "region",
            FixedEffect::ServiceType => "service_type",
        }
    }

    fn level(self, r: &ContractRecord) -> String {
        match self {
            FixedEffect::SchoolType => r.school_type.clone(),
            FixedEffect::Isp => r.isp.clone(),
            FixedEffect::Region => r.region.to_string(),
            FixedEffect::ServiceType => r.transport.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    All,
    CategoryA,
    CategoryD,
    Schools(BTreeSet<String>),
}

impl SampleFilter {
    fn keeps(&self, r: &ContractRecord) -> bool {
        match self {
            SampleFilter::All => true,
            SampleFilter::CategoryA => r.category == Category::A,
            SampleFilter::CategoryD => r.category == Category::D,
            SampleFilter::Schools(ids) => ids.contains(&r.school_id),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeType {
    #[default]
    Classical,
    Hc1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiDSpec {
    pub outcome: Outcome,
    pub include_n_isps: bool,
    pub fixed_effects: Vec<FixedEffect>,
    pub sample: SampleFilter,
    /// Replace the constant by separate non-participant and participant levels.
    pub group_intercepts: bool,
    pub se_type: SeType,
}

impl DiDSpec {
    /// The bare 2x2 regression.
    pub fn basic(outcome: Outcome) -> Self {
        Self {
            outcome,
            include_n_isps: false,
            fixed_effects: Vec::new(),
            sample: SampleFilter::All,
            group_intercepts: false,
            se_type: SeType::Classical,
        }
    }

    /// ISP count plus all four fixed-effect blocks.
    pub fn full_controls(outcome: Outcome) -> Self {
        Self { include_n_isps: true, fixed_effects: FixedEffect::ALL.to_vec(), ..Self::basic(outcome) }
    }

    pub fn with_sample(mut self, sample: SampleFilter) -> Self {
        self.sample = sample;
        self
    }

    pub fn with_se(mut self, se_type: SeType) -> Self {
        self.se_type = se_type;
        self
    }
}

pub const COL_CONST: &str = "const";
pub const COL_NONPARTICIPANT: &str = "nonparticipant";
pub const COL_PARTICIPANT: &str = "participant";
pub const COL_POST: &str = "post";
pub const COL_DID: &str = "participant_x_post";
pub const COL_N_ISPS: &str = "n_isps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedColumn {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub columns: Vec<String>,
    pub pruned: Vec<PrunedColumn>,
    /// Dropped reference level per fixed-effect block.
    pub reference_levels: BTreeMap<String, String>,
}

/// Reference level: the most frequent, ties going to the first label.
fn reference_level(counts: &BTreeMap<String, usize>) -> &str {
    let mut best: Option<(&str, usize)> = None;
    for (level, &n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((level, n));
        }
    }
    best.map(|(l, _)| l).unwrap_or("")
}

/// Builds the regression design for `spec`. Core columns come first, then
/// the ISP count, then one dummy per non-reference level of each block.
/// Columns that are linear combinations of earlier ones are pruned and
/// reported; collinearity among the core columns is an error.
pub fn design_matrix(panel: &ContractPanel, spec: &DiDSpec) -> Result<Design> {
    let rows: Vec<&ContractRecord> = panel.records().iter().filter(|r| spec.sample.keeps(r)).collect();
    if rows.is_empty() {
        return Err(Error::domain("estimation sample is empty"));
    }
    let n = rows.len();
    let indicator = |f: &dyn Fn(&ContractRecord) -> bool| -> Vec<f64> {
        rows.iter().map(|r| if f(r) { 1.0 } else { 0.0 }).collect()
    };
    let mut candidates: Vec<(String, Vec<f64>, bool)> = Vec::new();
    if spec.group_intercepts {
        candidates.push((COL_NONPARTICIPANT.into(), indicator(&|r| !r.participant), true));
    } else {
        candidates.push((COL_CONST.into(), vec![1.0; n], true));
    }
    candidates.push((COL_PARTICIPANT.into(), indicator(&|r| r.participant), true));
    candidates.push((COL_POST.into(), indicator(&|r| r.year == POST_YEAR), true));
    candidates.push((COL_DID.into(), indicator(&|r| r.participant && r.year == POST_YEAR), true));
    if spec.include_n_isps {
        candidates.push((COL_N_ISPS.into(), rows.iter().map(|r| f64::from(r.n_isps)).collect(), false));
    }

    let mut pruned = Vec::new();
    let mut reference_levels = BTreeMap::new();
    let blocks: BTreeSet<FixedEffect> = spec.fixed_effects.iter().copied().collect();
    for fe in blocks {
        let levels: Vec<String> = rows.iter().map(|r| fe.level(r)).collect();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for l in &levels {
            *counts.entry(l.clone()).or_default() += 1;
        }
        let reference = reference_level(&counts).to_string();
        if counts.len() < 2 {
            pruned.push(PrunedColumn {
                name: fe.name().to_string(),
                reason: format!("single level '{reference}' in sample; block contributes no columns"),
            });
        }
        for level in counts.keys().filter(|l| **l != reference) {
            let col = levels.iter().map(|l| if l == level { 1.0 } else { 0.0 }).collect();
            candidates.push((format!("{}[{}]", fe.name(), level), col, false));
        }
        reference_levels.insert(fe.name().to_string(), reference);
    }

    // Greedy Gram-Schmidt rank screen in candidate order.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<(String, Vec<f64>)> = Vec::new();
    let mut core_failures = Vec::new();
    for (name, col, core) in candidates {
        let v = DVector::from_vec(col.clone());
        let scale = v.norm();
        let mut resid = v;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&resid);
                resid.axpy(-proj, q, 1.0);
            }
        }
        let rn = resid.norm();
        if scale == 0.0 || rn <= COLLINEAR_TOL * scale.max(1.0) {
            if core {
                core_failures.push(name);
            } else {
                pruned.push(PrunedColumn { name, reason: "collinear with earlier columns".into() });
            }
            continue;
        }
        basis.push(resid / rn);
        kept.push((name, col));
    }
    if !core_failures.is_empty() {
        return Err(Error::numeric(format!(
            "design is rank deficient in core columns: {}",
            core_failures.join(", ")
        )));
    }
    let k = kept.len();
    let x = DMatrix::from_fn(n, k, |i, j| kept[j].1[i]);
    let y = DVector::from_iterator(n, rows.iter().map(|r| spec.outcome.value(r)));
    Ok(Design { x, y, columns: kept.into_iter().map(|(n, _)| n).collect(), pruned, reference_levels })
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub se_type: SeType,
    pub n_obs: usize,
}

impl OlsFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Least squares through a QR factorization of `x`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, se_type: SeType) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::domain(format!("outcome has {} rows, design has {n}", y.len())));
    }
    if n <= k {
        return Err(Error::numeric(format!("{n} observations cannot identify {k} coefficients")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let deficient: Vec<usize> = (0..k).filter(|&j| r[(j, j)].abs() <= COLLINEAR_TOL * diag_max.max(1.0)).collect();
    if diag_max == 0.0 || !deficient.is_empty() {
        return Err(Error::numeric(format!("design is rank deficient at columns {deficient:?}")));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::numeric("triangular solve failed"))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::numeric("triangular inverse failed"))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = y - x * &beta;
    let dof = (n - k) as f64;
    let mut covariance = match se_type {
        SeType::Classical => &xtx_inv * (residuals.norm_squared() / dof),
        SeType::Hc1 => {
            let mut scaled = x.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= residuals[i];
            }
            let meat = scaled.transpose() * &scaled;
            &xtx_inv * meat * &xtx_inv * (n as f64 / dof)
        }
    };
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(OlsFit { coefficients: beta, covariance, residuals, se_type, n_obs: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiDEstimate {
    pub spec: DiDSpec,
    /// Constant, or the non-participant level under group intercepts.
    pub beta0: f64,
    /// Participant shift, or the participant level under group intercepts.
    pub beta1: f64,
    pub beta_trend: f64,
    pub beta_did: f64,
    pub coefficients: Vec<Coefficient>,
    /// Row-major covariance in `coefficients` order.
    pub covariance: Vec<Vec<f64>>,
    pub se_type: SeType,
    pub n_obs: usize,
    pub pruned: Vec<PrunedColumn>,
    pub reference_levels: BTreeMap<String, String>,
}

impl DiDEstimate {
    fn index(&self, name: &str) -> Option<usize> {
        self.coefficients.iter().position(|c| c.name == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.index(name).map(|i| &self.coefficients[i])
    }

    pub fn covariance_of(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.covariance[self.index(a)?][self.index(b)?])
    }

    pub fn se_did(&self) -> f64 {
        self.coefficient(COL_DID).map_or(f64::NAN, |c| c.se)
    }

    pub fn se_trend(&self) -> f64 {
        self.coefficient(COL_POST).map_or(f64::NAN, |c| c.se)
    }

    /// Whether the interaction differs from zero at the 5% level.
    pub fn did_rejects_at_5pct(&self) -> bool {
        (self.beta_did / self.se_did()).abs() > Z_95
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.covariance.len();
        DMatrix::from_fn(k, k, |i, j| self.covariance[i][j])
    }

    pub fn trend_block(&self) -> TrendBlock {
        TrendBlock {
            beta_did: self.beta_did,
            beta_trend: self.beta_trend,
            var_did: self.covariance_of(COL_DID, COL_DID).unwrap_or(f64::NAN),
            var_trend: self.covariance_of(COL_POST, COL_POST).unwrap_or(f64::NAN),
            cov: self.covariance_of(COL_DID, COL_POST).unwrap_or(f64::NAN),
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Fits the difference-in-differences regression described by `spec`.
pub fn did_estimate(panel: &ContractPanel, spec: &DiDSpec) -> Result<DiDEstimate> {
    let sample: Vec<&ContractRecord> = panel.records().iter().filter(|r| spec.sample.keeps(r)).collect();
    for (year, participant) in [(PRE_YEAR, false), (PRE_YEAR, true), (POST_YEAR, false), (POST_YEAR, true)] {
        if !sample.iter().any(|r| r.year == year && r.participant == participant) {
            let group = if participant { "participants" } else { "non-participants" };
            return Err(Error::domain(format!("sample has no {group} in {year}")));
        }
    }
    let design = design_matrix(panel, spec)?;
    let fit = ols(&design.x, &design.y, spec.se_type)?;
    let se = fit.std_errors();
    let coefficients: Vec<Coefficient> = design
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| Coefficient { name: name.clone(), estimate: fit.coefficients[j], se: se[j] })
        .collect();
    let k = coefficients.len();
    let covariance = (0..k).map(|i| (0..k).map(|j| fit.covariance[(i, j)]).collect()).collect();
    Ok(DiDEstimate {
        spec: spec.clone(),
        beta0: fit.coefficients[0],
        beta1: fit.coefficients[1],
        beta_trend: fit.coefficients[2],
        beta_did: fit.coefficients[3],
        coefficients,
        covariance,
        se_type: fit.se_type,
        n_obs: fit.n_obs,
        pruned: design.pruned,
        reference_levels: design.reference_levels,
    })
}

/// Interaction and control-trend coefficients with their covariance block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendBlock {
    pub beta_did: f64,
    pub beta_trend: f64,
    pub var_did: f64,
    pub var_trend: f64,
    pub cov: f64,
}

impl TrendBlock {
    /// Point values only; intervals collapse to the estimate.
    pub fn point(beta_did: f64, beta_trend: f64) -> Self {
        Self { beta_did, beta_trend, var_did: 0.0, var_trend: 0.0, cov: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustBound {
    pub g: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Effect when participants' counterfactual trend is `g` times the control
/// trend; `g = 1` is the usual estimate.
pub fn robust_bound(block: &TrendBlock, g: f64) -> Result<RobustBound> {
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::domain(format!("violation factor g = {g} must be a nonnegative number")));
    }
    let w = 1.0 - g;
    let estimate = block.beta_did + w * block.beta_trend;
    let var = block.var_did + w * w * block.var_trend + 2.0 * w * block.cov;
    let se = var.max(0.0).sqrt();
    Ok(RobustBound { g, estimate, se, ci_low: estimate - Z_95 * se, ci_high: estimate + Z_95 * se })
}

pub fn robust_table(block: &TrendBlock, grid: &[f64]) -> Result<Vec<RobustBound>> {
    grid.iter().map(|&g| robust_bound(block, g)).collect()
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_g_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::domain(format!("invalid number '{s}' in g grid")))
    };
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::domain(format!("g grid '{text}' is not start:stop:step")));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(Error::domain(format!("g grid '{text}' needs step > 0 and stop >= start")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // Round to suppress accumulated binary noise such as 0.30000000000000004.
        (0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if let Some(g) = grid.iter().find(|g| **g < 0.0 || !g.is_finite()) {
        return Err(Error::domain(format!("g = {g} must be nonnegative")));
    }
    if grid.is_empty() {
        return Err(Error::domain("g grid is empty"));
    }
    Ok(grid)
}

pub fn write_robust_csv<W: Write>(rows: &[RobustBound], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
