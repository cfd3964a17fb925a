use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Category, ContractPanel, ContractRecord, Provenance, Region, Transport, POST_YEAR, PRE_YEAR, SUBSIDY_MAX,
    SUBSIDY_MIN,
};
use crate::error::{Error, Result};

/// Moments of one participant-by-year cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    pub price_mean: f64,
    pub price_sd: f64,
    pub bandwidth_mean: f64,
    pub bandwidth_sd: f64,
    /// Shares of fiber, coaxial and other transport.
    pub transport: [f64; 3],
    pub category_d: f64,
    pub n_isps_mean: f64,
    pub n_isps_sd: f64,
}

impl CellMoments {
    fn check(&self, label: &str) -> Result<()> {
        let shares_ok = self.transport.iter().all(|s| (0.0..=1.0).contains(s))
            && (self.transport.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !shares_ok {
            return Err(Error::domain(format!("{label}: transport shares must lie in [0,1] and sum to 1")));
        }
        if !(0.0..=1.0).contains(&self.category_d) {
            return Err(Error::domain(format!("{label}: category D share outside [0,1]")));
        }
        if self.price_sd < 0.0 || self.bandwidth_sd < 0.0 || self.n_isps_sd < 0.0 {
            return Err(Error::domain(format!("{label}: negative standard deviation")));
        }
        Ok(())
    }
}

/// Targets for the synthetic panel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub id: String,
    pub participant_pre: CellMoments,
    pub participant_post: CellMoments,
    pub control_pre: CellMoments,
    pub control_post: CellMoments,
    pub n_participants: usize,
    pub n_controls: usize,
    /// Region shares in `Region::ALL` order.
    pub region_shares: [f64; 4],
    /// ISP contract counts per region, in `Region::ALL` order.
    pub isp_counts: Vec<(String, [f64; 4])>,
    pub school_types: Vec<(String, f64)>,
    /// Correlation of a school's latent log price (and log bandwidth) across years.
    pub year_correlation: f64,
}

fn normalized(shares: [f64; 3]) -> [f64; 3] {
    let total: f64 = shares.iter().sum();
    shares.map(|s| s / total)
}

impl Calibration {
    /// Summary statistics of the New Jersey contract sample, with region and
    /// ISP mixes from the 2014 vendor counts. School-type shares are free.
    pub fn reference() -> Self {
        let cell = |pm, ps, bm, bs, tr: [f64; 3], d, nm, ns| CellMoments {
            price_mean: pm,
            price_sd: ps,
            bandwidth_mean: bm,
            bandwidth_sd: bs,
            transport: normalized(tr),
            category_d: d,
            n_isps_mean: nm,
            n_isps_sd: ns,
        };
        let row = |name: &str, c: [f64; 4]| (name.to_string(), c);
        Self {
            id: "reference".to_string(),
            participant_pre: cell(16.57, 15.66, 288.52, 388.27, [0.76, 0.23, 0.01], 0.75, 6.18, 2.65),
            participant_post: cell(6.40, 4.05, 1280.76, 2424.02, [0.97, 0.03, 0.00], 0.79, 5.90, 2.68),
            control_pre: cell(16.58, 16.53, 274.81, 909.53, [0.67, 0.30, 0.02], 0.61, 6.02, 2.80),
            control_post: cell(12.95, 13.67, 384.83, 919.37, [0.74, 0.25, 0.01], 0.63, 5.98, 2.75),
            n_participants: 145,
            n_controls: 465,
            // Central, Northeast, Northwest, South
            region_shares: [159.0, 176.0, 44.0, 184.0],
            isp_counts: vec![
                row("Comcast", [50.0, 17.0, 10.0, 121.0]),
                row("Lightpath", [33.0, 77.0, 1.0, 1.0]),
                row("XO", [9.0, 7.0, 2.0, 19.0]),
                row("Verizon", [22.0, 19.0, 0.0, 15.0]),
                row("Cablevision", [11.0, 21.0, 1.0, 3.0]),
                row("PenTeleData", [6.0, 0.0, 16.0, 0.0]),
                row("NetCarrier", [1.0, 4.0, 7.0, 0.0]),
                row("Windstream", [0.0, 4.0, 0.0, 3.0]),
                row("DNS", [6.0, 3.0, 0.0, 1.0]),
                row("CenturyLink", [6.0, 0.0, 4.0, 1.0]),
                row("Line Systems", [1.0, 0.0, 0.0, 8.0]),
                row("FiberTech", [4.0, 0.0, 0.0, 5.0]),
                row("Other", [10.0, 24.0, 3.0, 7.0]),
            ],
            school_types: vec![
                ("elementary".to_string(), 0.5),
                ("middle".to_string(), 0.2),
                ("high".to_string(), 0.2),
                ("district".to_string(), 0.1),
            ],
            year_correlation: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.participant_pre.check("participant 2014")?;
        self.participant_post.check("participant 2015")?;
        self.control_pre.check("control 2014")?;
        self.control_post.check("control 2015")?;
        if self.region_shares.iter().any(|&s| s < 0.0) || self.region_shares.iter().sum::<f64>() <= 0.0 {
            return Err(Error::domain("region shares must be nonnegative with positive total"));
        }
        for (k, region) in Region::ALL.iter().enumerate() {
            if self.region_shares[k] > 0.0 && self.isp_counts.iter().map(|(_, c)| c[k]).sum::<f64>() <= 0.0 {
                return Err(Error::domain(format!("no ISP counts for region {region}")));
            }
        }
        if self.school_types.is_empty() || self.school_types.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::domain("school type weights must be nonempty and nonnegative"));
        }
        if !(-1.0..=1.0).contains(&self.year_correlation) {
            return Err(Error::domain("year correlation outside [-1, 1]"));
        }
        Ok(())
    }
}

/// Treatment effects added to participants' 2015 outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectedEffects {
    pub price: f64,
    pub bandwidth: f64,
    /// Separate (price, bandwidth) effect for category A schools.
    pub category_a: Option<(f64, f64)>,
}

impl InjectedEffects {
    pub fn new(price: f64, bandwidth: f64) -> Self {
        Self { price, bandwidth, category_a: None }
    }

    fn for_category(&self, category: Category) -> (f64, f64) {
        match (category, self.category_a) {
            (Category::A, Some(effect)) => effect,
            _ => (self.price, self.bandwidth),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub n_participants: usize,
    pub n_controls: usize,
    pub effects: InjectedEffects,
    pub seed: u64,
}

impl SynthesisOptions {
    pub fn new(cal: &Calibration, effects: InjectedEffects, seed: u64) -> Self {
        Self { n_participants: cal.n_participants, n_controls: cal.n_controls, effects, seed }
    }
}

/// Log-normal (mu, sigma) with the given mean and standard deviation.
fn lognormal_params(mean: f64, sd: f64, what: &str) -> Result<(f64, f64)> {
    if !(mean > 0.0 && sd > 0.0 && mean.is_finite() && sd.is_finite()) {
        return Err(Error::domain(format!("{what}: cannot match mean {mean} and sd {sd} with a log-normal law")));
    }
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    Ok((mean.ln() - 0.5 * s2, s2.sqrt()))
}

fn transport_at(u: f64, shares: &[f64; 3]) -> Transport {
    let mut acc = 0.0;
    for (k, t) in Transport::ALL.iter().enumerate() {
        acc += shares[k];
        if u < acc {
            return *t;
        }
    }
    Transport::ALL[shares.iter().rposition(|&s| s > 0.0).unwrap_or(0)]
}

struct GroupLaws {
    price: [(f64, f64); 2],
    bandwidth: [(f64, f64); 2],
}

/// Log-normal laws of a group's outcomes in 2014 and 2015. The 2015 mean is
/// the 2014 mean plus the control trend plus the effect; its coefficient of
/// variation follows the calibrated 2015 cell.
fn group_laws(pre: &CellMoments, post: &CellMoments, trend: (f64, f64), effect: (f64, f64), label: &str) -> Result<GroupLaws> {
    let price_post = pre.price_mean + trend.0 + effect.0;
    let bandwidth_post = pre.bandwidth_mean + trend.1 + effect.1;
    Ok(GroupLaws {
        price: [
            lognormal_params(pre.price_mean, pre.price_sd, &format!("{label} 2014 price"))?,
            lognormal_params(price_post, price_post * post.price_sd / post.price_mean, &format!("{label} 2015 price"))?,
        ],
        bandwidth: [
            lognormal_params(pre.bandwidth_mean, pre.bandwidth_sd, &format!("{label} 2014 bandwidth"))?,
            lognormal_params(
                bandwidth_post,
                bandwidth_post * post.bandwidth_sd / post.bandwidth_mean,
                &format!("{label} 2015 bandwidth"),
            )?,
        ],
    })
}

/// Draws a two-year school panel whose group moments follow `cal`.
///
/// Both groups share the control group's 2014 to 2015 change; participants'
/// 2015 outcomes additionally carry the injected effects. Category, region,
/// ISP, school type, ISP count and subsidy rate are fixed per school.
pub fn synthesize_panel(cal: &Calibration, opts: &SynthesisOptions) -> Result<ContractPanel> {
    cal.validate()?;
    if opts.n_participants == 0 || opts.n_controls == 0 {
        return Err(Error::domain("group sizes must be positive"));
    }
    let trend = (
        cal.control_post.price_mean - cal.control_pre.price_mean,
        cal.control_post.bandwidth_mean - cal.control_pre.bandwidth_mean,
    );
    let control = group_laws(&cal.control_pre, &cal.control_post, trend, (0.0, 0.0), "control")?;
    let treated_a = group_laws(
        &cal.participant_pre,
        &cal.participant_post,
        trend,
        opts.effects.for_category(Category::A),
        "participant category A",
    )?;
    let treated_d = group_laws(
        &cal.participant_pre,
        &cal.participant_post,
        trend,
        opts.effects.for_category(Category::D),
        "participant category D",
    )?;

    let region_dist = WeightedIndex::new(cal.region_shares).map_err(|e| Error::domain(e.to_string()))?;
    let isp_dists: Vec<Option<WeightedIndex<f64>>> =
        (0..4).map(|k| WeightedIndex::new(cal.isp_counts.iter().map(|(_, c)| c[k])).ok()).collect();
    let type_dist =
        WeightedIndex::new(cal.school_types.iter().map(|(_, w)| *w)).map_err(|e| Error::domain(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = cal.year_correlation;
    let r_perp = (1.0 - r * r).sqrt();
    let total = opts.n_participants + opts.n_controls;
    let width = total.to_string().len();
    let mut records = Vec::with_capacity(2 * total);
    for i in 0..total {
        let participant = i < opts.n_participants;
        let (pre, post) = if participant {
            (&cal.participant_pre, &cal.participant_post)
        } else {
            (&cal.control_pre, &cal.control_post)
        };
        let category = if rng.random::<f64>() < pre.category_d { Category::D } else { Category::A };
        let laws = match (participant, category) {
            (false, _) => &control,
            (true, Category::A) => &treated_a,
            (true, Category::D) => &treated_d,
        };
        let region_idx = region_dist.sample(&mut rng);
        let isp = match &isp_dists[region_idx] {
            Some(d) => cal.isp_counts[d.sample(&mut rng)].0.clone(),
            None => "Other".to_string(),
        };
        let school_type = cal.school_types[type_dist.sample(&mut rng)].0.clone();
        let z: f64 = rng.sample(StandardNormal);
        let n_isps = (pre.n_isps_mean + pre.n_isps_sd * z).round().max(1.0) as u32;
        let subsidy = SUBSIDY_MIN + (SUBSIDY_MAX - SUBSIDY_MIN) * rng.random::<f64>();
        let u_transport: f64 = rng.random();

        let latent = |rng: &mut ChaCha8Rng| {
            let z0: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            [z0, r * z0 + r_perp * e]
        };
        let zp = latent(&mut rng);
        let zb = latent(&mut rng);
        let school_id = format!("S{:0width$}", i + 1);
        for (t, (year, cell)) in [(PRE_YEAR, pre), (POST_YEAR, post)].into_iter().enumerate() {
            let (mp, sp) = laws.price[t];
            let (mb, sb) = laws.bandwidth[t];
            records.push(ContractRecord {
                school_id: school_id.clone(),
                year,
                participant,
                price: (mp + sp * zp[t]).exp(),
                bandwidth: (mb + sb * zb[t]).exp(),
                isp: isp.clone(),
                region: Region::ALL[region_idx],
                category,
                transport: transport_at(u_transport, &cell.transport),
                n_isps,
                school_type: school_type.clone(),
                subsidy_rate: Some(subsidy),
            });
        }
    }
    ContractPanel::new(records, Provenance::Synthetic { seed: opts.seed, calibration_id: cal.id.clone() })
}
