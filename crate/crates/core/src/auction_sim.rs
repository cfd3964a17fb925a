//! Paired-draw Monte Carlo comparison of decentralized and bundled procurement.
//!
//! Every replication draws one cost matrix and feeds it to both regimes. The
//! random stream for a replication is a ChaCha8 generator keyed by the run
//! seed and the cell parameters, positioned on stream `replication_index`, so
//! outcomes do not depend on which worker computes them. Replications are
//! accumulated in fixed-size chunks that are folded in index order, which
//! makes summaries bitwise identical for any thread count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{CostDistribution, DEFAULT_BUNDLE_GRID};
use crate::equilibrium::{BidFunctions, MarketConfig, DEFAULT_TABLE_POINTS};
use crate::error::{Error, Result};

/// Replications folded together before the ordered cross-chunk reduction.
const CHUNK: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_bidders: usize,
    pub gamma: f64,
    pub replications: u64,
    pub seed: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Evaluate every bid by quadrature instead of the interpolated table.
    #[serde(default)]
    pub exact_bids: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_bidders: 2,
            gamma: 4.0,
            replications: 1000,
            seed: 0,
            mean: 40.0,
            lower: 10.0,
            upper: 100.0,
            exact_bids: false,
        }
    }
}

impl SimConfig {
    pub fn with_cell(&self, n_bidders: usize, gamma: f64) -> Self {
        Self { n_bidders, gamma, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.n_bidders < 2 {
            return Err(Error::domain(format!("need at least 2 bidders, got {}", self.n_bidders)));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 2.0 * self.lower) {
            return Err(Error::domain(format!(
                "gamma {} must lie in [0, 2 * lower] = [0, {}]",
                self.gamma,
                2.0 * self.lower
            )));
        }
        if !(self.lower < self.mean && self.mean < self.upper) {
            return Err(Error::domain(format!(
                "mean {} must lie strictly inside ({}, {})",
                self.mean, self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// Stable 64-bit key for the cell parameters.
    fn cell_key(&self) -> u64 {
        [
            self.n_bidders as u64,
            self.gamma.to_bits(),
            self.mean.to_bits(),
            self.lower.to_bits(),
            self.upper.to_bits(),
        ]
        .into_iter()
        .fold(0x6a09_e667_f3bc_c908, |acc, v| splitmix64(acc ^ v))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One replication under both regimes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionOutcome {
    /// `costs[i] = [c_i1, c_i2]`.
    pub costs: Vec<[f64; 2]>,
    pub pre_bids: Vec<[f64; 2]>,
    pub pre_total_bids: Vec<f64>,
    pub pre_payment: f64,
    pub post_bids: Vec<f64>,
    pub post_payment: f64,
    pub pre_winners: [usize; 2],
    pub post_winner: usize,
}

/// Lowest value and its first index.
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
}

/// A prepared (N, gamma) cell: cost law, bid functions and stream key.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    bids: BidFunctions,
    key: [u8; 32],
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let dist = CostDistribution::make_truncated_exponential(config.mean, config.lower, config.upper)?;
        let market = MarketConfig::with_bundle_grid(config.n_bidders, config.gamma, dist, DEFAULT_BUNDLE_GRID)?;
        let bids = if config.exact_bids {
            BidFunctions::exact(market)
        } else {
            BidFunctions::tabulated(market, DEFAULT_TABLE_POINTS)?
        };
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&config.seed.to_le_bytes());
        key[8..16].copy_from_slice(&config.cell_key().to_le_bytes());
        Ok(Self { config, bids, key })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn market(&self) -> &MarketConfig {
        self.bids.config()
    }

    fn stream(&self, replication_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(replication_index);
        rng
    }

    pub fn run_auction(&self, replication_index: u64) -> Result<AuctionOutcome> {
        let n = self.config.n_bidders;
        let gamma = self.config.gamma;
        let dist = self.market().dist();
        let mut rng = self.stream(replication_index);

        let costs: Vec<[f64; 2]> = (0..n).map(|_| [dist.sample(&mut rng), dist.sample(&mut rng)]).collect();

        let mut pre_bids = Vec::with_capacity(n);
        let mut post_bids = Vec::with_capacity(n);
        for c in &costs {
            pre_bids.push([
                self.bids.decentralized_bid(c[0], c[1])?,
                self.bids.decentralized_bid(c[1], c[0])?,
            ]);
            post_bids.push(self.bids.bundled_bid(c[0] + c[1] - gamma)?);
        }
        let pre_total_bids: Vec<f64> = pre_bids.iter().map(|b| b[0] + b[1]).collect();

        let (w1, b1) = argmin(pre_bids.iter().map(|b| b[0]));
        let (w2, b2) = argmin(pre_bids.iter().map(|b| b[1]));
        let (post_winner, post_payment) = argmin(post_bids.iter().copied());

        Ok(AuctionOutcome {
            costs,
            pre_bids,
            pre_total_bids,
            pre_payment: b1 + b2,
            post_bids,
            post_payment,
            pre_winners: [w1, w2],
            post_winner,
        })
    }

    fn accumulate(&self, range: std::ops::Range<u64>) -> Result<Accumulator> {
        let mut acc = Accumulator::default();
        for r in range {
            acc.add(&self.run_auction(r)?, self.config.gamma);
        }
        Ok(acc)
    }

    /// Runs all replications on `threads` workers (0 = rayon default).
    pub fn run(&self, threads: usize) -> Result<CellSummary> {
        let reps = self.config.replications;
        let chunks = reps.div_ceil(CHUNK);
        let work = || {
            (0..chunks)
                .into_par_iter()
                .map(|k| self.accumulate(k * CHUNK..((k + 1) * CHUNK).min(reps)))
                .collect::<Result<Vec<Accumulator>>>()
        };
        let parts = with_threads(threads, work)?;
        let total = parts.into_iter().fold(Accumulator::default(), |mut a, b| {
            a.merge(&b);
            a
        });
        Ok(total.summarize(&self.config))
    }

    /// Plot-ready rows: one per (replication, bidder) for bids and one per
    /// replication for payments.
    pub fn scatter(&self, threads: usize) -> Result<ScatterData> {
        let reps = self.config.replications;
        let outcomes = with_threads(threads, || {
            (0..reps)
                .into_par_iter()
                .map(|r| self.run_auction(r))
                .collect::<Result<Vec<AuctionOutcome>>>()
        })?;
        let mut data = ScatterData {
            n_bidders: self.config.n_bidders,
            gamma: self.config.gamma,
            bids: Vec::with_capacity(outcomes.len() * self.config.n_bidders),
            payments: Vec::with_capacity(outcomes.len()),
        };
        for (r, o) in outcomes.iter().enumerate() {
            for (i, (&pre, &post)) in o.pre_total_bids.iter().zip(&o.post_bids).enumerate() {
                data.bids.push(BidPoint { replication: r as u64, bidder: i, pre_total_bid: pre, post_bid: post });
            }
            data.payments.push(PaymentPoint {
                replication: r as u64,
                pre_payment: o.pre_payment,
                post_payment: o.post_payment,
            });
        }
        Ok(data)
    }
}

fn with_threads<T, F>(threads: usize, work: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    if threads == 0 {
        return work();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::numeric(format!("thread pool: {e}")))?;
    pool.install(work)
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    replications: u64,
    bid_points: u64,
    total_bid_pre: f64,
    total_bid_post: f64,
    payment_pre: f64,
    payment_pre_sq: f64,
    payment_post: f64,
    payment_post_sq: f64,
    bundle_cost: f64,
    bids_below: u64,
    payments_below: u64,
    min_payment_pre: f64,
    min_payment_post: f64,
    max_payment_pre: f64,
    max_payment_post: f64,
}

impl Accumulator {
    fn add(&mut self, o: &AuctionOutcome, gamma: f64) {
        if self.replications == 0 {
            self.min_payment_pre = f64::INFINITY;
            self.min_payment_post = f64::INFINITY;
            self.max_payment_pre = f64::NEG_INFINITY;
            self.max_payment_post = f64::NEG_INFINITY;
        }
        self.replications += 1;
        for ((pre, post), c) in o.pre_total_bids.iter().zip(&o.post_bids).zip(&o.costs) {
            self.bid_points += 1;
            self.total_bid_pre += pre;
            self.total_bid_post += post;
            self.bundle_cost += c[0] + c[1] - gamma;
            if post < pre {
                self.bids_below += 1;
            }
        }
        self.payment_pre += o.pre_payment;
        self.payment_pre_sq += o.pre_payment * o.pre_payment;
        self.payment_post += o.post_payment;
        self.payment_post_sq += o.post_payment * o.post_payment;
        if o.post_payment < o.pre_payment {
            self.payments_below += 1;
        }
        self.min_payment_pre = self.min_payment_pre.min(o.pre_payment);
        self.min_payment_post = self.min_payment_post.min(o.post_payment);
        self.max_payment_pre = self.max_payment_pre.max(o.pre_payment);
        self.max_payment_post = self.max_payment_post.max(o.post_payment);
    }

    fn merge(&mut self, other: &Accumulator) {
        if other.replications == 0 {
            return;
        }
        if self.replications == 0 {
            *self = other.clone();
            return;
        }
        self.replications += other.replications;
        self.bid_points += other.bid_points;
        self.total_bid_pre += other.total_bid_pre;
        self.total_bid_post += other.total_bid_post;
        self.payment_pre += other.payment_pre;
        self.payment_pre_sq += other.payment_pre_sq;
        self.payment_post += other.payment_post;
        self.payment_post_sq += other.payment_post_sq;
        self.bundle_cost += other.bundle_cost;
        self.bids_below += other.bids_below;
        self.payments_below += other.payments_below;
        self.min_payment_pre = self.min_payment_pre.min(other.min_payment_pre);
        self.min_payment_post = self.min_payment_post.min(other.min_payment_post);
        self.max_payment_pre = self.max_payment_pre.max(other.max_payment_pre);
        self.max_payment_post = self.max_payment_post.max(other.max_payment_post);
    }

    fn summarize(&self, config: &SimConfig) -> CellSummary {
        let r = self.replications as f64;
        let p = self.bid_points as f64;
        let se = |sum: f64, sq: f64| {
            let mean = sum / r;
            let var = (sq / r - mean * mean).max(0.0) * r / (r - 1.0).max(1.0);
            (var / r).sqrt()
        };
        CellSummary {
            n_bidders: config.n_bidders,
            gamma: config.gamma,
            replications: self.replications,
            avg_total_bid_pre: self.total_bid_pre / p,
            avg_total_bid_post: self.total_bid_post / p,
            avg_payment_pre: self.payment_pre / r,
            avg_payment_post: self.payment_post / r,
            se_payment_pre: se(self.payment_pre, self.payment_pre_sq),
            se_payment_post: se(self.payment_post, self.payment_post_sq),
            avg_bundle_cost: self.bundle_cost / p,
            frac_below_diag_bids: self.bids_below as f64 / p,
            frac_below_diag_payments: self.payments_below as f64 / r,
            min_payment_pre: self.min_payment_pre,
            max_payment_pre: self.max_payment_pre,
            min_payment_post: self.min_payment_post,
            max_payment_post: self.max_payment_post,
        }
    }
}

/// Averages for one (N, gamma) cell. Bid averages run over bidders and
/// replications; payment averages over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    #[serde(rename = "N")]
    pub n_bidders: usize,
    pub gamma: f64,
    pub replications: u64,
    pub avg_total_bid_pre: f64,
    pub avg_total_bid_post: f64,
    pub avg_payment_pre: f64,
    pub avg_payment_post: f64,
    pub se_payment_pre: f64,
    pub se_payment_post: f64,
    /// Average bundled cost `c1 + c2 - gamma` over bidders.
    pub avg_bundle_cost: f64,
    pub frac_below_diag_bids: f64,
    pub frac_below_diag_payments: f64,
    pub min_payment_pre: f64,
    pub max_payment_pre: f64,
    pub min_payment_post: f64,
    pub max_payment_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub replications: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub cells: Vec<CellSummary>,
}

impl SimulationSummary {
    pub fn cell(&self, n_bidders: usize, gamma: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n_bidders == n_bidders && c.gamma == gamma)
    }

    /// Table layout: `N, gamma, avg_total_bid_pre, avg_total_bid_post, avg_payment_pre, avg_payment_post`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "N",
            "gamma",
            "avg_total_bid_pre",
            "avg_total_bid_post",
            "avg_payment_pre",
            "avg_payment_post",
        ])?;
        for c in &self.cells {
            w.write_record([
                c.n_bidders.to_string(),
                c.gamma.to_string(),
                c.avg_total_bid_pre.to_string(),
                c.avg_total_bid_post.to_string(),
                c.avg_payment_pre.to_string(),
                c.avg_payment_post.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BidPoint {
    pub replication: u64,
    pub bidder: usize,
    pub pre_total_bid: f64,
    pub post_bid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaymentPoint {
    pub replication: u64,
    pub pre_payment: f64,
    pub post_payment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterData {
    pub n_bidders: usize,
    pub gamma: f64,
    pub bids: Vec<BidPoint>,
    pub payments: Vec<PaymentPoint>,
}

impl ScatterData {
    pub fn frac_bids_below_diagonal(&self) -> f64 {
        let below = self.bids.iter().filter(|p| p.post_bid < p.pre_total_bid).count();
        below as f64 / self.bids.len() as f64
    }

    pub fn frac_payments_below_diagonal(&self) -> f64 {
        let below = self.payments.iter().filter(|p| p.post_payment < p.pre_payment).count();
        below as f64 / self.payments.len() as f64
    }

    /// Columns `kind, replication, bidder, pre, post`; `kind` is `bid` or
    /// `payment` and payment rows leave `bidder` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "replication", "bidder", "pre", "post"])?;
        for p in &self.bids {
            w.write_record([
                "bid".to_string(),
                p.replication.to_string(),
                p.bidder.to_string(),
                p.pre_total_bid.to_string(),
                p.post_bid.to_string(),
            ])?;
        }
        for p in &self.payments {
            w.write_record([
                "payment".to_string(),
                p.replication.to_string(),
                String::new(),
                p.pre_payment.to_string(),
                p.post_payment.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_auction(config: &SimConfig, replication_index: u64) -> Result<AuctionOutcome> {
    if replication_index >= config.replications {
        return Err(Error::domain(format!(
            "replication index {replication_index} outside [0, {})",
            config.replications
        )));
    }
    Simulator::new(config.clone())?.run_auction(replication_index)
}

/// Runs every (N, gamma) combination, `base.replications` times each.
pub fn run_grid(
    base: &SimConfig,
    n_values: &[usize],
    gamma_values: &[f64],
    threads: usize,
) -> Result<SimulationSummary> {
    // Validate the whole grid before spending time on any cell.
    let configs: Vec<SimConfig> = n_values
        .iter()
        .flat_map(|&n| gamma_values.iter().map(move |&g| base.with_cell(n, g)))
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let mut cells = Vec::with_capacity(configs.len());
    for c in configs {
        let sim = with_threads(threads, || Simulator::new(c))?;
        cells.push(sim.run(threads)?);
    }
    Ok(SimulationSummary {
        seed: base.seed,
        replications: base.replications,
        mean: base.mean,
        lower: base.lower,
        upper: base.upper,
        cells,
    })
}

pub fn scatter_data(config: &SimConfig, threads: usize) -> Result<ScatterData> {
    Simulator::new(config.clone())?.scatter(threads)
}
