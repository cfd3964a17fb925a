//! School-cost law and the law of the bundled total cost.
//!
//! Costs follow an exponential law truncated to `[lower, upper]`. The rate
//! may be negative, which tilts mass toward the upper end; a zero rate is the
//! uniform law. Every formula is written with `expm1`/`ln_1p` so that small
//! rates and the upper tail stay accurate.

use rand::distr::Open01;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature;

/// Rates below this magnitude are treated as the exact uniform law.
pub const UNIFORM_RATE_CUTOFF: f64 = 1e-12;
/// Default number of points on the bundled-cost grid.
pub const DEFAULT_BUNDLE_GRID: usize = 2048;
/// Smallest accepted bundled-cost grid.
pub const MIN_BUNDLE_GRID: usize = 256;

const ROOT_MAX_ITER: usize = 200;

/// How a requested mean is turned into an exponential rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanParameterization {
    /// The mean of the truncated law equals the requested value.
    #[default]
    TruncatedMean,
    /// `rate = 1 / mean` for the untruncated exponential, then truncate.
    UntruncatedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostDistribution {
    rate: f64,
    lower: f64,
    upper: f64,
    target_mean: Option<f64>,
}

impl CostDistribution {
    /// Truncated exponential on `[lower, upper]` whose truncated mean is `target_mean`.
    pub fn make_truncated_exponential(target_mean: f64, lower: f64, upper: f64) -> Result<Self> {
        Self::with_parameterization(target_mean, lower, upper, MeanParameterization::TruncatedMean)
    }

    pub fn with_parameterization(
        mean: f64,
        lower: f64,
        upper: f64,
        param: MeanParameterization,
    ) -> Result<Self> {
        check_support(lower, upper)?;
        if !mean.is_finite() || mean <= lower || mean >= upper {
            return Err(Error::domain(format!(
                "mean {mean} must lie strictly inside the support ({lower}, {upper})"
            )));
        }
        let rate = match param {
            MeanParameterization::TruncatedMean => {
                let width = upper - lower;
                solve_scaled_rate((mean - lower) / width)? / width
            }
            MeanParameterization::UntruncatedMean => 1.0 / mean,
        };
        Ok(Self::assemble(rate, lower, upper, Some(mean)))
    }

    /// Truncated exponential with an explicit rate.
    pub fn from_rate(rate: f64, lower: f64, upper: f64) -> Result<Self> {
        check_support(lower, upper)?;
        if !rate.is_finite() {
            return Err(Error::domain("rate must be finite"));
        }
        Ok(Self::assemble(rate, lower, upper, None))
    }

    /// Uniform law on `[lower, upper]`, the zero-rate limit.
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        Self::from_rate(0.0, lower, upper)
    }

    fn assemble(rate: f64, lower: f64, upper: f64, target_mean: Option<f64>) -> Self {
        let rate = if rate.abs() < UNIFORM_RATE_CUTOFF { 0.0 } else { rate };
        Self { rate, lower, upper, target_mean }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn target_mean(&self) -> Option<f64> {
        self.target_mean
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn is_uniform(&self) -> bool {
        self.rate == 0.0
    }

    /// `-expm1(-rate * width)`, the normalizing mass of the untruncated law.
    fn mass(&self) -> f64 {
        -(-self.rate * self.width()).exp_m1()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        if self.is_uniform() {
            return (x - self.lower) / self.width();
        }
        (-(-self.rate * (x - self.lower)).exp_m1() / self.mass()).clamp(0.0, 1.0)
    }

    /// Survival function `1 - cdf(x)`, accurate near the upper end.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 1.0;
        }
        if x >= self.upper {
            return 0.0;
        }
        if self.is_uniform() {
            return (self.upper - x) / self.width();
        }
        let head = (-self.rate * (x - self.lower)).exp();
        let tail = -(-self.rate * (self.upper - x)).exp_m1();
        (head * tail / self.mass()).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return 0.0;
        }
        if self.is_uniform() {
            return 1.0 / self.width();
        }
        self.rate * (-self.rate * (x - self.lower)).exp() / self.mass()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lower;
        }
        if u >= 1.0 {
            return self.upper;
        }
        let x = if self.is_uniform() {
            self.lower + u * self.width()
        } else {
            let z = self.rate * self.width();
            self.lower - (u * (-z).exp_m1()).ln_1p() / self.rate
        };
        x.clamp(self.lower, self.upper)
    }

    /// Closed-form mean of the truncated law.
    pub fn mean(&self) -> f64 {
        self.lower + self.width() * scaled_mean(self.rate * self.width())
    }

    /// Inverse-cdf draw from a uniform on the open unit interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile(u)
    }
}

fn check_support(lower: f64, upper: f64) -> Result<()> {
    if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
        return Err(Error::domain(format!(
            "support [{lower}, {upper}] must be finite with lower < upper"
        )));
    }
    Ok(())
}

/// Mean of the truncated law on `[0, 1]` with rate `z`: `1/z - 1/expm1(z)`.
fn scaled_mean(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        let z2 = z * z;
        return 0.5 - z / 12.0 + z * z2 / 720.0 - z * z2 * z2 / 30240.0;
    }
    1.0 / z - 1.0 / z.exp_m1()
}

/// Finds the rate on `[0, 1]` whose truncated mean is `t`, for `t` in `(0, 1)`.
///
/// `scaled_mean` is strictly decreasing and satisfies
/// `scaled_mean(-z) = 1 - scaled_mean(z)`, so only the branch `t < 1/2`
/// (positive rate) is searched.
fn solve_scaled_rate(t: f64) -> Result<f64> {
    if t == 0.5 {
        return Ok(0.0);
    }
    let (goal, sign) = if t < 0.5 { (t, 1.0) } else { (1.0 - t, -1.0) };

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while scaled_mean(hi) > goal {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::numeric(format!("could not bracket rate for mean fraction {t}")));
        }
    }
    for _ in 0..ROOT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(sign * mid);
        }
        if scaled_mean(mid) > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::numeric(format!(
        "rate search did not converge in {ROOT_MAX_ITER} iterations (mean fraction {t})"
    )))
}

/// Law of `c1 + c2 - gamma` for iid school costs, tabulated on a uniform grid.
///
/// The grid is stored in the coordinates of the raw sum `c1 + c2`, so laws
/// that differ only in `gamma` share their table exactly.
#[derive(Debug, Clone, Serialize)]
pub struct BundleCostDistribution {
    gamma: f64,
    sum_lower: f64,
    sum_upper: f64,
    step: f64,
    /// Survival probabilities at `sum_lower + k * step`.
    survival: Vec<f64>,
}

/// Tabulates the law of `c1 + c2 - gamma` by quadrature of the convolution.
pub fn convolve_bundle(
    dist: &CostDistribution,
    gamma: f64,
    grid_size: usize,
) -> Result<BundleCostDistribution> {
    let (a, b) = (dist.lower(), dist.upper());
    if !gamma.is_finite() || gamma < 0.0 || gamma > 2.0 * a {
        return Err(Error::domain(format!(
            "complementarity {gamma} must lie in [0, 2 * lower] = [0, {}]",
            2.0 * a
        )));
    }
    if grid_size < MIN_BUNDLE_GRID {
        return Err(Error::domain(format!(
            "bundle grid must have at least {MIN_BUNDLE_GRID} points, got {grid_size}"
        )));
    }

    let step = 2.0 * (b - a) / (grid_size - 1) as f64;
    let tol = 1e-14;
    let mut survival: Vec<f64> = (0..grid_size)
        .map(|k| {
            if k == 0 {
                return 1.0;
            }
            if k == grid_size - 1 {
                return 0.0;
            }
            let s = 2.0 * a + k as f64 * step;
            // Integrate over t where the partner cost s - t stays inside the support.
            let t_lo = a.max(s - b);
            let t_hi = b.min(s - a);
            if s <= a + b {
                // P(c1 + c2 <= s) = int F(s - t) f(t) dt over t in [a, s - a]
                let below = quadrature::adaptive_simpson(
                    |t| dist.cdf(s - t) * dist.pdf(t),
                    t_lo,
                    t_hi,
                    tol,
                    quadrature::DEFAULT_MAX_DEPTH,
                );
                1.0 - below
            } else {
                // P(c1 + c2 > s) = int S(s - t) f(t) dt over t in [s - b, b]
                quadrature::adaptive_simpson(
                    |t| dist.sf(s - t) * dist.pdf(t),
                    t_lo,
                    t_hi,
                    tol,
                    quadrature::DEFAULT_MAX_DEPTH,
                )
            }
        })
        .collect();

    // Monotone rearrangement: survival must be nonincreasing in [0, 1].
    let mut running = 1.0_f64;
    for v in survival.iter_mut() {
        running = running.min(v.clamp(0.0, 1.0));
        *v = running;
    }

    Ok(BundleCostDistribution { gamma, sum_lower: 2.0 * a, sum_upper: 2.0 * b, step, survival })
}

impl BundleCostDistribution {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Lowest bundled cost, `2 * lower - gamma`.
    pub fn lower(&self) -> f64 {
        self.sum_lower - self.gamma
    }

    /// Highest bundled cost, `2 * upper - gamma`.
    pub fn upper(&self) -> f64 {
        self.sum_upper - self.gamma
    }

    pub fn grid_size(&self) -> usize {
        self.survival.len()
    }

    /// Grid nodes as `(bundled cost, cdf)` pairs.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.survival
            .iter()
            .enumerate()
            .map(|(k, s)| (self.sum_lower + k as f64 * self.step - self.gamma, 1.0 - s))
            .collect()
    }

    /// Survival `1 - F*(x)` by linear interpolation between grid nodes.
    pub fn sf(&self, x: f64) -> f64 {
        let pos = (x + self.gamma - self.sum_lower) / self.step;
        if pos <= 0.0 {
            return 1.0;
        }
        let last = self.survival.len() - 1;
        if pos >= last as f64 {
            return 0.0;
        }
        let k = pos.floor() as usize;
        let w = pos - k as f64;
        self.survival[k] + w * (self.survival[k + 1] - self.survival[k])
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.sf(x)
    }

    /// Mean of the interpolated law, `lower + int sf`, exact for the piecewise-linear table.
    pub fn mean(&self) -> f64 {
        let area: f64 = self
            .survival
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]) * self.step)
            .sum();
        self.lower() + area
    }
}
