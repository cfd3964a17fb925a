//! Symmetric first-price equilibrium bids for two schools, procured either
//! separately (one auction per school) or as a pure bundle.

use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{convolve_bundle, BundleCostDistribution, CostDistribution, DEFAULT_BUNDLE_GRID};
use crate::error::{Error, Result};
use crate::quadrature;

/// Survival probabilities below this give a zero markup.
pub const SURVIVAL_FLOOR: f64 = 1e-12;
/// Nodes per support in a [`BidTable`].
pub const DEFAULT_TABLE_POINTS: usize = 1024;

/// Relative slack accepted on support checks before a cost is rejected.
const SUPPORT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct MarketConfig {
    n_bidders: usize,
    gamma: f64,
    dist: CostDistribution,
    #[serde(skip)]
    bundle: BundleCostDistribution,
}

impl MarketConfig {
    pub fn new(n_bidders: usize, gamma: f64, dist: CostDistribution) -> Result<Self> {
        Self::with_bundle_grid(n_bidders, gamma, dist, DEFAULT_BUNDLE_GRID)
    }

    pub fn with_bundle_grid(
        n_bidders: usize,
        gamma: f64,
        dist: CostDistribution,
        grid_size: usize,
    ) -> Result<Self> {
        if n_bidders < 2 {
            return Err(Error::domain(format!("need at least 2 bidders, got {n_bidders}")));
        }
        let bundle = convolve_bundle(&dist, gamma, grid_size)?;
        Ok(Self { n_bidders, gamma, dist, bundle })
    }

    pub fn n_bidders(&self) -> usize {
        self.n_bidders
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dist(&self) -> &CostDistribution {
        &self.dist
    }

    pub fn bundle_dist(&self) -> &BundleCostDistribution {
        &self.bundle
    }

    fn rivals(&self) -> i32 {
        (self.n_bidders - 1) as i32
    }
}

fn check_in_support(x: f64, lower: f64, upper: f64, what: &str) -> Result<f64> {
    let slack = SUPPORT_SLACK * (upper - lower).abs().max(1.0);
    if !x.is_finite() || x < lower - slack || x > upper + slack {
        return Err(Error::domain(format!("{what} {x} outside support [{lower}, {upper}]")));
    }
    Ok(x.clamp(lower, upper))
}

/// `int_x^upper (S(t) / S(x))^k dt`, zero when `S(x)` is below [`SURVIVAL_FLOOR`].
///
/// The ratio is integrated directly so the integrand stays in `[0, 1]` and
/// the absolute tolerance applies to the markup itself.
fn markup_integral<S>(survival: S, x: f64, upper: f64, rivals: i32) -> f64
where
    S: Fn(f64) -> f64,
{
    let s_x = survival(x);
    if s_x < SURVIVAL_FLOOR || x >= upper {
        return 0.0;
    }
    quadrature::integrate(|t| (survival(t) / s_x).powi(rivals), x, upper)
}

/// Markup over cost in the single-school auction.
pub fn standalone_markup(config: &MarketConfig, c: f64) -> Result<f64> {
    let d = &config.dist;
    let c = check_in_support(c, d.lower(), d.upper(), "cost")?;
    Ok(markup_integral(|t| d.sf(t), c, d.upper(), config.rivals()))
}

/// Expected saving passed through in the single-school bid: `gamma * S(c_other)^(N-1)`.
pub fn expected_savings(config: &MarketConfig, c_other: f64) -> f64 {
    config.gamma * config.dist.sf(c_other).powi(config.rivals())
}

/// Equilibrium bid for one school given the bidder's costs for both schools.
pub fn decentralized_bid(config: &MarketConfig, c_own: f64, c_other: f64) -> Result<f64> {
    let d = &config.dist;
    let c_other = check_in_support(c_other, d.lower(), d.upper(), "other-school cost")?;
    let c_own_checked = check_in_support(c_own, d.lower(), d.upper(), "cost")?;
    Ok(c_own_checked + standalone_markup(config, c_own_checked)? - expected_savings(config, c_other))
}

/// Markup over total cost in the bundle auction.
pub fn bundled_markup(config: &MarketConfig, phi: f64) -> Result<f64> {
    let b = &config.bundle;
    let phi = check_in_support(phi, b.lower(), b.upper(), "bundled cost")?;
    Ok(markup_integral(|t| b.sf(t), phi, b.upper(), config.rivals()))
}

/// Equilibrium bid for the bundle at total cost `phi`.
pub fn bundled_bid(config: &MarketConfig, phi: f64) -> Result<f64> {
    let b = &config.bundle;
    let phi = check_in_support(phi, b.lower(), b.upper(), "bundled cost")?;
    Ok(phi + bundled_markup(config, phi)?)
}

/// Markups tabulated on uniform grids over both supports, read back by
/// linear interpolation.
#[derive(Debug, Clone)]
pub struct BidTable {
    standalone: Grid,
    bundled: Grid,
}

#[derive(Debug, Clone)]
struct Grid {
    lower: f64,
    step: f64,
    values: Vec<f64>,
}

impl Grid {
    fn build<F>(lower: f64, upper: f64, points: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<f64> + Sync,
    {
        let step = (upper - lower) / (points - 1) as f64;
        let values = (0..points)
            .into_par_iter()
            .map(|k| {
                let x = if k == points - 1 { upper } else { lower + k as f64 * step };
                f(x)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { lower, step, values })
    }

    fn eval(&self, x: f64) -> f64 {
        let pos = (x - self.lower) / self.step;
        let last = self.values.len() - 1;
        if pos <= 0.0 {
            return self.values[0];
        }
        if pos >= last as f64 {
            return self.values[last];
        }
        let k = pos.floor() as usize;
        let w = pos - k as f64;
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }
}

impl BidTable {
    pub fn build(config: &MarketConfig, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::domain("bid table needs at least 2 points"));
        }
        let d = config.dist();
        let b = config.bundle_dist();
        let standalone = Grid::build(d.lower(), d.upper(), points, |c| standalone_markup(config, c))?;
        let bundled = Grid::build(b.lower(), b.upper(), points, |phi| bundled_markup(config, phi))?;
        Ok(Self { standalone, bundled })
    }

    pub fn standalone_markup(&self, c: f64) -> f64 {
        self.standalone.eval(c)
    }

    pub fn bundled_markup(&self, phi: f64) -> f64 {
        self.bundled.eval(phi)
    }
}

/// Bid evaluation for the simulator: exact quadrature or a prebuilt table.
#[derive(Debug, Clone)]
pub struct BidFunctions {
    config: MarketConfig,
    table: Option<BidTable>,
}

impl BidFunctions {
    pub fn exact(config: MarketConfig) -> Self {
        Self { config, table: None }
    }

    pub fn tabulated(config: MarketConfig, points: usize) -> Result<Self> {
        let table = BidTable::build(&config, points)?;
        Ok(Self { config, table: Some(table) })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    pub fn decentralized_bid(&self, c_own: f64, c_other: f64) -> Result<f64> {
        match &self.table {
            None => decentralized_bid(&self.config, c_own, c_other),
            Some(t) => {
                let d = self.config.dist();
                let c_own = check_in_support(c_own, d.lower(), d.upper(), "cost")?;
                let c_other = check_in_support(c_other, d.lower(), d.upper(), "other-school cost")?;
                Ok(c_own + t.standalone_markup(c_own) - expected_savings(&self.config, c_other))
            }
        }
    }

    pub fn bundled_bid(&self, phi: f64) -> Result<f64> {
        match &self.table {
            None => bundled_bid(&self.config, phi),
            Some(t) => {
                let b = self.config.bundle_dist();
                let phi = check_in_support(phi, b.lower(), b.upper(), "bundled cost")?;
                Ok(phi + t.bundled_markup(phi))
            }
        }
    }
}
