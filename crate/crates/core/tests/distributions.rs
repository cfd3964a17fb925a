use bundling::distributions::{convolve_bundle, CostDistribution, DEFAULT_BUNDLE_GRID};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn base_law() -> CostDistribution {
    CostDistribution::make_truncated_exponential(40.0, 10.0, 100.0).unwrap()
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// P(c1 + c2 <= s) by direct integration over the smooth piece of the
/// integrand plus the closed-form mass where the inner cdf equals one.
fn sum_cdf_oracle(d: &CostDistribution, s: f64) -> f64 {
    let (a, b) = (d.lower(), d.upper());
    let saturated = d.cdf((s - b).clamp(a, b));
    let lo = (s - b).max(a);
    let hi = (s - a).min(b);
    saturated + simpson(|t| d.cdf(s - t) * d.pdf(t), lo, hi, 20_000)
}

#[test]
fn inverse_consistency_on_random_levels() {
    let d = base_law();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let u: f64 = rng.random_range(1e-12..1.0);
        assert!((d.cdf(d.quantile(u)) - u).abs() < 1e-8, "u = {u}");
    }
}

#[test]
fn bundle_cdf_matches_direct_integration() {
    let d = base_law();
    for gamma in [0.0, 4.0, 16.0] {
        let b = convolve_bundle(&d, gamma, DEFAULT_BUNDLE_GRID).unwrap();
        for k in 0..50 {
            let x = b.lower() + (b.upper() - b.lower()) * (k as f64 + 0.5) / 50.0;
            let oracle = sum_cdf_oracle(&d, x + gamma);
            assert!((b.cdf(x) - oracle).abs() < 1e-4, "gamma {gamma} x {x}: {} vs {oracle}", b.cdf(x));
        }
    }
}

fn million_sums(d: &CostDistribution, gamma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sums: Vec<f64> = (0..1_000_000).map(|_| d.sample(&mut rng) + d.sample(&mut rng) - gamma).collect();
    sums.sort_by(f64::total_cmp);
    sums
}

/// Largest |empirical - model| over 50 points, and the same gap in units of
/// the binomial standard error.
fn empirical_gaps(sums: &[f64], b: &bundling::distributions::BundleCostDistribution) -> (f64, f64) {
    let n = sums.len() as f64;
    let (mut abs, mut sigmas) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let x = b.lower() + (b.upper() - b.lower()) * (k as f64 + 0.5) / 50.0;
        let empirical = sums.partition_point(|&s| s <= x) as f64 / n;
        let p = b.cdf(x);
        let gap = (empirical - p).abs();
        abs = abs.max(gap);
        sigmas = sigmas.max((gap - 1e-4).max(0.0) / (p * (1.0 - p) / n).sqrt().max(1e-12));
    }
    (abs, sigmas)
}

#[test]
fn bundle_cdf_matches_simulated_sums_statistically() {
    // The empirical cdf of 10^6 sums has standard error up to 5e-4, so
    // agreement is judged in standard errors on top of the grid error.
    let d = base_law();
    let b = convolve_bundle(&d, 4.0, DEFAULT_BUNDLE_GRID).unwrap();
    let (_, sigmas) = empirical_gaps(&million_sums(&d, 4.0), &b);
    assert!(sigmas < 5.0, "{sigmas} standard errors");
}

#[test]
fn bundle_cdf_within_1e4_of_million_sums() {
    let d = base_law();
    let b = convolve_bundle(&d, 4.0, DEFAULT_BUNDLE_GRID).unwrap();
    let (abs, _) = empirical_gaps(&million_sums(&d, 4.0), &b);
    assert!(abs < 1e-4, "max gap {abs}");
}

#[test]
fn bundle_mean_is_twice_target_less_gamma() {
    // 10^7 sums put the standard error near 0.01, well inside the 0.05 band.
    let d = base_law();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000_000;
    let raw = (0..n).map(|_| d.sample(&mut rng) + d.sample(&mut rng)).sum::<f64>() / n as f64;
    for gamma in [0.0, 8.0, 20.0] {
        let b = convolve_bundle(&d, gamma, DEFAULT_BUNDLE_GRID).unwrap();
        assert!((b.mean() - (80.0 - gamma)).abs() < 0.05, "quadrature mean {}", b.mean());
        assert!((raw - gamma - (80.0 - gamma)).abs() < 0.05, "empirical mean {}", raw - gamma);
    }
}

#[test]
fn untruncated_flag_changes_the_law() {
    use bundling::distributions::MeanParameterization;
    let d = CostDistribution::with_parameterization(40.0, 10.0, 100.0, MeanParameterization::UntruncatedMean).unwrap();
    assert!((d.rate() - 1.0 / 40.0).abs() < 1e-15);
    assert!(d.mean() < 40.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn solved_rate_hits_any_feasible_mean(lower in 0.0f64..50.0, width in 1.0f64..200.0, frac in 0.02f64..0.98) {
        let upper = lower + width;
        let mean = lower + frac * width;
        let d = CostDistribution::make_truncated_exponential(mean, lower, upper).unwrap();
        prop_assert!((d.mean() - mean).abs() < 1e-8 * width.max(1.0));
        prop_assert_eq!(d.cdf(lower), 0.0);
        prop_assert_eq!(d.cdf(upper), 1.0);
    }

    #[test]
    fn quantile_inverts_cdf(frac in 0.05f64..0.95, t in 0.001f64..0.999) {
        let d = CostDistribution::make_truncated_exponential(10.0 + 90.0 * frac, 10.0, 100.0).unwrap();
        let x = 10.0 + 90.0 * t;
        prop_assert!((d.quantile(d.cdf(x)) - x).abs() < 1e-9);
        prop_assert!(d.pdf(x) > 0.0);
    }

    #[test]
    fn cdf_strictly_increasing(frac in 0.05f64..0.95, t in 0.0f64..0.99) {
        let d = CostDistribution::make_truncated_exponential(10.0 + 90.0 * frac, 10.0, 100.0).unwrap();
        let x = 10.0 + 90.0 * t;
        prop_assert!(d.cdf(x + 0.5) > d.cdf(x));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bundle_shift_identity(gamma in 0.0f64..20.0, t in 0.0f64..1.0) {
        let d = base_law();
        let zero = convolve_bundle(&d, 0.0, DEFAULT_BUNDLE_GRID).unwrap();
        let shifted = convolve_bundle(&d, gamma, DEFAULT_BUNDLE_GRID).unwrap();
        let x = shifted.lower() + t * (shifted.upper() - shifted.lower());
        prop_assert!((shifted.cdf(x) - zero.cdf(x + gamma)).abs() < 1e-8);
    }
}
