//! Synthetic data generation and the Monte Carlo harness.
//!
//! All randomness comes from a counter-based keyed generator: every draw
//! hashes (master seed, purpose tag, replication/village/period/link
//! indices) independently, so simulation is order-independent and
//! bit-reproducible no matter how work is scheduled across workers.

use rayon::prelude::*;

use crate::bits::BitVec;
use crate::error::{Error, Result};
use crate::estimate::{estimate_sequence, EstimateRecord, EstimatorKind, Grid};
use crate::model::{InfoScenario, OutcomeMatrix, SeedVector, Village, VillageNetwork};
use crate::scenario::{ensure_within_budget, max_pii_count};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Purpose tags keeping unrelated draw families in disjoint key spaces.
const TAG_IP: u64 = 0x01;
const TAG_PARTICIPATION: u64 = 0x02;
const TAG_TRANSMISSION: u64 = 0x03;
const TAG_ER_EDGE: u64 = 0x10;
const TAG_WS_REWIRE: u64 = 0x11;
const TAG_WS_TARGET: u64 = 0x12;

#[inline]
fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Immutable splittable generator: absorbing a tag yields a child
/// generator, and `uniform` reads the current state as a draw in [0, 1).
/// Equal key paths give equal draws; distinct paths are independent for
/// practical purposes.
#[derive(Clone, Copy, Debug)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn new(master: u64) -> Self {
        KeyedRng { state: mix(master) }
    }

    #[must_use]
    pub fn absorb(self, v: u64) -> Self {
        KeyedRng {
            state: mix(self.state ^ v.wrapping_mul(GOLDEN)),
        }
    }

    /// The draw for this key path, uniform on [0, 1).
    pub fn uniform(self) -> f64 {
        (self.state >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Threshold test: success iff the draw is at most `threshold`.
    pub fn success(self, threshold: f64) -> bool {
        self.uniform() <= threshold
    }

    /// A uniform index in `0..n`.
    pub fn index(self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Draws exactly one injection point uniformly from `n` individuals.
pub fn draw_ip(n: usize, rng: KeyedRng) -> Result<SeedVector> {
    if n == 0 {
        return Err(Error::Parameter("cannot draw an IP from 0 individuals".into()));
    }
    let mut flags = vec![0u8; n];
    flags[rng.absorb(TAG_IP).index(n)] = 1;
    SeedVector::from_flags(&flags)
}

/// The contiguous principal submatrix with 1-based row/column range
/// `[seed, seed + n_sub)`. Symmetry and the zero diagonal are inherited.
pub fn extract_submatrix(
    full: &VillageNetwork,
    seed: usize,
    n_sub: usize,
) -> Result<VillageNetwork> {
    if seed == 0 || n_sub == 0 {
        return Err(Error::Parameter(format!(
            "submatrix seed and size must be positive, got seed {seed}, size {n_sub}"
        )));
    }
    let start = seed - 1;
    if start + n_sub > full.n() {
        return Err(Error::Parameter(format!(
            "submatrix rows {}..{} exceed the {}-person network",
            seed,
            seed + n_sub - 1,
            full.n()
        )));
    }
    let mut edges = Vec::new();
    for i in 0..n_sub {
        for j in 0..i {
            if full.is_edge(start + i, start + j) {
                edges.push((i, j));
            }
        }
    }
    VillageNetwork::from_edges(n_sub, &edges)
}

/// Simulates one village forward: injection points are informed at period
/// 0 and participate with probability `p0` in period 1; at each of the
/// `t - 1` exchanges every informed individual (participating or not)
/// independently passes the information along each link to an uninformed
/// neighbor with probability `q0`, and each newly informed individual
/// participates from the next period on with probability `p0`. Both
/// decisions are absorbing. Returns the observable outcomes and the
/// latent status history.
pub fn simulate_adoption(
    net: &VillageNetwork,
    s0: &SeedVector,
    p0: f64,
    q0: f64,
    t: usize,
    rng: KeyedRng,
) -> Result<(OutcomeMatrix, InfoScenario)> {
    let n = net.n();
    if s0.len() != n {
        return Err(Error::Dimension(format!(
            "seed vector covers {} individuals, network has {}",
            s0.len(),
            n
        )));
    }
    for (name, v) in [("p0", p0), ("q0", q0)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Parameter(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    if t < 2 {
        return Err(Error::Parameter(format!("need at least 2 periods, got {t}")));
    }
    let mut informed = s0.bits().clone();
    let mut participating = BitVec::zeros(n);
    for i in 0..n {
        if s0.is_ip(i)
            && rng
                .absorb(TAG_PARTICIPATION)
                .absorb(1)
                .absorb(i as u64)
                .success(p0)
        {
            participating.set(i, true);
        }
    }
    let mut y_cols = vec![participating.clone()];
    let mut s_cols = Vec::with_capacity(t - 1);
    for period in 1..t {
        let prng = rng.absorb(TAG_TRANSMISSION).absorb(period as u64);
        let mut newly: Vec<usize> = Vec::new();
        for receiver in 0..n {
            if informed.get(receiver) {
                continue;
            }
            let mut reached = false;
            for sender in net.row(receiver).iter_ones() {
                if informed.get(sender)
                    && prng
                        .absorb(sender as u64)
                        .absorb(receiver as u64)
                        .success(q0)
                {
                    reached = true;
                }
            }
            if reached {
                newly.push(receiver);
            }
        }
        for &i in &newly {
            informed.set(i, true);
            if rng
                .absorb(TAG_PARTICIPATION)
                .absorb(period as u64 + 1)
                .absorb(i as u64)
                .success(p0)
            {
                participating.set(i, true);
            }
        }
        s_cols.push(informed.clone());
        y_cols.push(participating.clone());
    }
    Ok((
        OutcomeMatrix::from_cols(y_cols),
        InfoScenario::from_cols(s_cols),
    ))
}

/// An Erdős–Rényi surrogate network: each unordered pair is an edge
/// independently with the given probability.
pub fn erdos_renyi(n: usize, edge_prob: f64, rng: KeyedRng) -> Result<VillageNetwork> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::Parameter(format!(
            "edge probability must be in [0, 1], got {edge_prob}"
        )));
    }
    let rng = rng.absorb(TAG_ER_EDGE);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if rng.absorb(i as u64).absorb(j as u64).success(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    VillageNetwork::from_edges(n, &edges)
}

/// A Watts–Strogatz small-world surrogate: a ring lattice where every
/// node links to its `k / 2` nearest neighbors on each side, with each
/// lattice edge rewired to a uniform non-duplicate target with
/// probability `beta`.
pub fn small_world(n: usize, k: usize, beta: f64, rng: KeyedRng) -> Result<VillageNetwork> {
    if k < 2 || !k.is_multiple_of(2) || k >= n {
        return Err(Error::Parameter(format!(
            "ring degree must be even, at least 2, and below n = {n}; got {k}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!(
            "rewiring probability must be in [0, 1], got {beta}"
        )));
    }
    let mut adjacent = vec![std::collections::BTreeSet::<usize>::new(); n];
    for i in 0..n {
        for j in 1..=k / 2 {
            let other = (i + j) % n;
            adjacent[i].insert(other);
            adjacent[other].insert(i);
        }
    }
    let rewire_rng = rng.absorb(TAG_WS_REWIRE);
    let target_rng = rng.absorb(TAG_WS_TARGET);
    for i in 0..n {
        for j in 1..=k / 2 {
            let old = (i + j) % n;
            if !rewire_rng
                .absorb(i as u64)
                .absorb(j as u64)
                .success(beta)
            {
                continue;
            }
            // Keep the edge when no valid target turns up quickly (the
            // node may already be adjacent to almost everyone).
            let r = target_rng.absorb(i as u64).absorb(j as u64);
            for attempt in 0..4 * n as u64 {
                let candidate = r.absorb(attempt).index(n);
                if candidate != i && !adjacent[i].contains(&candidate) {
                    adjacent[i].remove(&old);
                    adjacent[old].remove(&i);
                    adjacent[i].insert(candidate);
                    adjacent[candidate].insert(i);
                    break;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for (i, adj) in adjacent.iter().enumerate() {
        for &j in adj {
            if j < i {
                edges.push((i, j));
            }
        }
    }
    VillageNetwork::from_edges(n, &edges)
}

/// Monte Carlo study configuration.
#[derive(Clone, Debug)]
pub struct MCConfig {
    /// Submatrix size N extracted from each source network.
    pub n_sub: usize,
    /// Villages per sample.
    pub villages: usize,
    /// Replications.
    pub replications: usize,
    /// True participation probability.
    pub p0: f64,
    /// True per-link transmission probability.
    pub q0: f64,
    /// Periods per village.
    pub periods: usize,
    /// First submatrix seed; replication r uses `seed_s_start + r`.
    pub seed_s_start: u64,
    /// First data seed; replication r uses `seed_d_start + r`.
    pub seed_d_start: u64,
    /// Full source networks, cycled across villages.
    pub sources: Vec<VillageNetwork>,
    /// Estimation grid.
    pub grid: Grid,
    /// Confidence levels attached to each estimate.
    pub levels: Vec<f64>,
    /// Cap on the structural state walk that finds each village's maximal
    /// PII count.
    pub state_budget: usize,
    /// Cap on the branch estimate of any single exact evaluation.
    pub branch_budget: u128,
}

impl MCConfig {
    /// The study defaults: N = 20, V = 11, R = 90, T = 4, submatrix seeds
    /// from 1, data seeds from 2.
    pub fn new(sources: Vec<VillageNetwork>, p0: f64, q0: f64) -> Self {
        MCConfig {
            n_sub: 20,
            villages: 11,
            replications: 90,
            p0,
            q0,
            periods: 4,
            seed_s_start: 1,
            seed_d_start: 2,
            sources,
            grid: Grid::default_full(),
            levels: vec![0.95],
            state_budget: 1 << 22,
            branch_budget: 1 << 32,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Parameter("no source networks".into()));
        }
        if self.n_sub == 0 || self.villages == 0 || self.replications == 0 {
            return Err(Error::Parameter(
                "submatrix size, village count, and replication count must be positive".into(),
            ));
        }
        for (name, v) in [("p0", self.p0), ("q0", self.q0)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.periods < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 periods, got {}",
                self.periods
            )));
        }
        for (s, src) in self.sources.iter().enumerate() {
            if src.n() < self.n_sub {
                return Err(Error::Parameter(format!(
                    "source network {s} has {} individuals, submatrix needs {}",
                    src.n(),
                    self.n_sub
                )));
            }
        }
        Ok(())
    }
}

/// One replication's estimates: the trimming sequence d = 0..d̄ plus the
/// two-period baseline, with the seeds and per-village caps that produced
/// them.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed_s: u64,
    pub seed_d: u64,
    /// Per-village maximal PII counts d̄_v.
    pub d_bars: Vec<usize>,
    pub records: Vec<EstimateRecord>,
}

/// A replication that could not be completed, with the reason.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub message: String,
}

/// Pooled mean and empirical standard error of the estimates produced by
/// one estimator across replications.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub estimator: EstimatorKind,
    pub count: usize,
    pub mean_p: f64,
    pub se_p: Option<f64>,
    pub mean_q: f64,
    pub se_q: Option<f64>,
    /// Mean log-likelihood gap to the same replication's exact maximum.
    pub mean_gap: f64,
}

#[derive(Clone, Debug)]
pub struct MCOutput {
    pub results: Vec<ReplicationResult>,
    pub failures: Vec<ReplicationFailure>,
    pub summary: Vec<SummaryRow>,
}

/// The villages of one replication: per-village submatrix windows derived
/// from the replication's submatrix seed, one uniformly drawn injection
/// point each, and simulated outcomes.
pub fn replication_villages(config: &MCConfig, r: usize) -> Result<Vec<Village>> {
    config.validate()?;
    let seed_s = config.seed_s_start + r as u64;
    let seed_d = config.seed_d_start + r as u64;
    let rng = KeyedRng::new(seed_d);
    let mut villages = Vec::with_capacity(config.villages);
    for v in 0..config.villages {
        let source = &config.sources[v % config.sources.len()];
        let windows = (source.n() - config.n_sub + 1) as u64;
        let start = ((seed_s - 1 + v as u64) % windows) as usize + 1;
        let net = extract_submatrix(source, start, config.n_sub)?;
        let vrng = rng.absorb(v as u64);
        let seeds = draw_ip(config.n_sub, vrng)?;
        let (outcomes, _latent) =
            simulate_adoption(&net, &seeds, config.p0, config.q0, config.periods, vrng)?;
        villages.push(Village::new(
            format!("r{r}-v{v}"),
            net,
            seeds,
            outcomes,
        )?);
    }
    Ok(villages)
}

fn run_replication(config: &MCConfig, r: usize) -> Result<ReplicationResult> {
    let villages = replication_villages(config, r)?;
    let mut d_bars = Vec::with_capacity(villages.len());
    for v in &villages {
        ensure_within_budget(v, None, config.branch_budget)?;
        d_bars.push(max_pii_count(v, config.state_budget)?);
    }
    let d_bar_max = d_bars.iter().copied().max().unwrap_or(0);
    let d_values: Vec<usize> = (0..=d_bar_max).collect();
    let seq = estimate_sequence(&villages, &config.grid, &d_values, &config.levels)?;
    Ok(ReplicationResult {
        replication: r,
        seed_s: config.seed_s_start + r as u64,
        seed_d: config.seed_d_start + r as u64,
        d_bars,
        records: seq.records,
    })
}

fn mean_and_se(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, Some((ss / (n - 1) as f64).sqrt()))
}

/// Builds the per-estimator summary. For a replication whose cap d̄ is
/// below a row's d, trimming is inactive and the exact estimate stands in,
/// so every row pools all completed replications.
fn summarize(results: &[ReplicationResult]) -> Vec<SummaryRow> {
    if results.is_empty() {
        return Vec::new();
    }
    let global_max_d = results
        .iter()
        .map(|r| r.records.len() - 2)
        .max()
        .expect("nonempty");
    let mut rows = Vec::new();
    let mut pool = |estimator: EstimatorKind, pick: &dyn Fn(&ReplicationResult) -> &EstimateRecord| {
        let mut ps = Vec::new();
        let mut qs = Vec::new();
        let mut gaps = Vec::new();
        for res in results {
            let exact = &res.records[res.records.len() - 2];
            let rec = pick(res);
            ps.push(rec.p);
            qs.push(rec.q);
            gaps.push(exact.log_likelihood - rec.log_likelihood);
        }
        let (mean_p, se_p) = mean_and_se(&ps);
        let (mean_q, se_q) = mean_and_se(&qs);
        let (mean_gap, _) = mean_and_se(&gaps);
        rows.push(SummaryRow {
            estimator,
            count: results.len(),
            mean_p,
            se_p,
            mean_q,
            se_q,
            mean_gap,
        });
    };
    for d in 0..=global_max_d {
        pool(EstimatorKind::Trimmed(d), &move |res: &ReplicationResult| {
            let top = res.records.len() - 2;
            &res.records[d.min(top)]
        });
    }
    pool(EstimatorKind::Exact, &|res: &ReplicationResult| {
        &res.records[res.records.len() - 2]
    });
    pool(EstimatorKind::TwoPeriod, &|res: &ReplicationResult| {
        res.records.last().expect("sequence always has records")
    });
    rows
}

/// Runs the full study: simulate, estimate the trimming sequence, and
/// pool. Replications run in parallel; failed replications are recorded
/// and the run continues.
pub fn run_monte_carlo(config: &MCConfig) -> Result<MCOutput> {
    config.validate()?;
    let outcomes: Vec<(usize, Result<ReplicationResult>)> = (0..config.replications)
        .into_par_iter()
        .map(|r| (r, run_replication(config, r)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(res) => results.push(res),
            Err(e) => failures.push(ReplicationFailure {
                replication: r,
                message: e.to_string(),
            }),
        }
    }
    let summary = summarize(&results);
    Ok(MCOutput {
        results,
        failures,
        summary,
    })
}
