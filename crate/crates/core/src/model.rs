//! Domain types and per-individual probability formulas.
//!
//! A village is an undirected network over which information spreads in
//! discrete exchanges. A handful of injection points start out informed;
//! every informed individual transmits independently across each link with
//! probability `q` per exchange, and every newly informed individual
//! participates once-and-for-all with probability `p` in the following
//! period. Participation is observed, information status is not.
//!
//! Everything here is a pure function of its inputs: densities and
//! reception probabilities are evaluated in linear space per individual,
//! and callers accumulate across individuals and scenarios in log space.

use crate::bits::BitVec;
use crate::error::{Error, Result};

/// Symmetric, zero-diagonal adjacency structure of one village.
#[derive(Clone, Debug)]
pub struct VillageNetwork {
    n: usize,
    rows: Vec<BitVec>,
}

impl VillageNetwork {
    /// Builds a network from a dense 0/1 matrix, rejecting asymmetry and
    /// nonzero diagonals.
    pub fn from_adjacency(matrix: &[Vec<u8>]) -> Result<Self> {
        let n = matrix.len();
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "adjacency row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    n
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Network(format!(
                        "adjacency entry ({i}, {j}) is {v}, expected 0 or 1"
                    )));
                }
                if i == j && v != 0 {
                    return Err(Error::Network(format!(
                        "nonzero diagonal at individual {i}"
                    )));
                }
                if matrix[j][i] != v {
                    return Err(Error::Network(format!(
                        "asymmetric adjacency at pair ({i}, {j})"
                    )));
                }
            }
        }
        let rows = matrix
            .iter()
            .map(|row| BitVec::from_bools(&row.iter().map(|&v| v == 1).collect::<Vec<_>>()))
            .collect();
        Ok(VillageNetwork { n, rows })
    }

    /// Builds a network on `n` individuals from 0-based endpoint pairs,
    /// symmetrizing automatically. Self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut rows = vec![BitVec::zeros(n); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Network(format!(
                    "edge ({a}, {b}) references an individual outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::Network(format!("self-loop at individual {a}")));
            }
            rows[a].set(b, true);
            rows[b].set(a, true);
        }
        Ok(VillageNetwork { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.rows[i].get(j)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].count_ones()
    }

    /// Adjacency row of `i` as a bit vector over all individuals.
    pub fn row(&self, i: usize) -> &BitVec {
        &self.rows[i]
    }

    /// Number of neighbors of `i` that are set in `status`.
    #[inline]
    pub fn informed_neighbor_count(&self, i: usize, status: &BitVec) -> usize {
        self.rows[i].and_count(status)
    }

    /// BFS distance from the nearest source; `None` for unreachable
    /// individuals. Sources themselves are at distance 0.
    pub fn distances_from(&self, sources: &BitVec) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n];
        let mut queue = std::collections::VecDeque::new();
        for i in sources.iter_ones() {
            dist[i] = Some(0);
            queue.push_back(i);
        }
        while let Some(i) = queue.pop_front() {
            let next = dist[i].expect("queued individual has a distance") + 1;
            for j in self.rows[i].iter_ones() {
                if dist[j].is_none() {
                    dist[j] = Some(next);
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// Information injection points: the individuals informed before the first
/// exchange. At least one entry must be set.
#[derive(Clone, Debug)]
pub struct SeedVector {
    bits: BitVec,
}

impl SeedVector {
    pub fn from_flags(flags: &[u8]) -> Result<Self> {
        for (i, &v) in flags.iter().enumerate() {
            if v > 1 {
                return Err(Error::Parameter(format!(
                    "seed entry {i} is {v}, expected 0 or 1"
                )));
            }
        }
        let bits = BitVec::from_bools(&flags.iter().map(|&v| v == 1).collect::<Vec<_>>());
        Self::from_bits(bits)
    }

    pub fn from_bits(bits: BitVec) -> Result<Self> {
        if bits.count_ones() == 0 {
            return Err(Error::Parameter(
                "seed vector has no injection point; the likelihood would be degenerate".into(),
            ));
        }
        Ok(SeedVector { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_ip(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }
}

/// Observed participation, one row per individual and one column per
/// period `1..=T`. Rows are monotone nondecreasing: participation is a
/// one-time opportunity and never reverts.
#[derive(Clone, Debug)]
pub struct OutcomeMatrix {
    n: usize,
    periods: usize,
    cols: Vec<BitVec>,
}

impl OutcomeMatrix {
    /// Builds from row-major 0/1 data, enforcing rectangularity and row
    /// monotonicity.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let periods = rows.first().map_or(0, |r| r.len());
        if periods == 0 {
            return Err(Error::Dimension("outcome matrix has no periods".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != periods {
                return Err(Error::Dimension(format!(
                    "outcome row {} has {} periods, expected {}",
                    i,
                    row.len(),
                    periods
                )));
            }
            for (t, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Parameter(format!(
                        "outcome entry ({}, period {}) is {}, expected 0 or 1",
                        i,
                        t + 1,
                        v
                    )));
                }
                if t > 0 && row[t - 1] == 1 && v == 0 {
                    return Err(Error::Inconsistent {
                        individual: i,
                        period: t + 1,
                        reason: "participation is absorbing but the row decreases".into(),
                    });
                }
            }
        }
        let cols = (0..periods)
            .map(|t| BitVec::from_bools(&rows.iter().map(|r| r[t] == 1).collect::<Vec<_>>()))
            .collect();
        Ok(OutcomeMatrix { n, periods, cols })
    }

    pub(crate) fn from_cols(cols: Vec<BitVec>) -> Self {
        let n = cols.first().map_or(0, BitVec::len);
        OutcomeMatrix {
            n,
            periods: cols.len(),
            cols,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Participation status of individual `i` in period `t` (1-based).
    #[inline]
    pub fn participation(&self, i: usize, t: usize) -> bool {
        self.cols[t - 1].get(i)
    }

    /// Participation column for period `t` (1-based).
    pub fn period_col(&self, t: usize) -> &BitVec {
        &self.cols[t - 1]
    }

    /// First period in which `i` participates, if any.
    pub fn first_participation(&self, i: usize) -> Option<usize> {
        (1..=self.periods).find(|&t| self.participation(i, t))
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| {
                (1..=self.periods)
                    .map(|t| u8::from(self.participation(i, t)))
                    .collect()
            })
            .collect()
    }
}

/// One latent information realization: column `e` is the status vector
/// after exchange `e`, for `e = 1..=exchanges`. The status before the
/// first exchange is the seed vector and is not stored here.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoScenario {
    cols: Vec<BitVec>,
}

impl InfoScenario {
    /// Builds from row-major 0/1 data, enforcing rectangularity and row
    /// monotonicity (information is never forgotten).
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let exchanges = rows.first().map_or(0, |r| r.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != exchanges {
                return Err(Error::Dimension(format!(
                    "scenario row {} has {} exchanges, expected {}",
                    i,
                    row.len(),
                    exchanges
                )));
            }
            for (e, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Parameter(format!(
                        "scenario entry ({}, exchange {}) is {}, expected 0 or 1",
                        i,
                        e + 1,
                        v
                    )));
                }
                if e > 0 && row[e - 1] == 1 && v == 0 {
                    return Err(Error::Inconsistent {
                        individual: i,
                        period: e + 1,
                        reason: "information is never forgotten but the row decreases".into(),
                    });
                }
            }
        }
        let cols = (0..exchanges)
            .map(|e| BitVec::from_bools(&rows.iter().map(|r| r[e] == 1).collect::<Vec<_>>()))
            .collect();
        Ok(InfoScenario { cols })
    }

    pub fn from_cols(cols: Vec<BitVec>) -> Self {
        InfoScenario { cols }
    }

    pub fn exchanges(&self) -> usize {
        self.cols.len()
    }

    /// Status of individual `i` after exchange `e` (1-based).
    #[inline]
    pub fn status(&self, i: usize, e: usize) -> bool {
        self.cols[e - 1].get(i)
    }

    /// Status column after exchange `e` (1-based).
    pub fn exchange_col(&self, e: usize) -> &BitVec {
        &self.cols[e - 1]
    }

    /// All status columns in exchange order.
    pub fn columns(&self) -> &[BitVec] {
        &self.cols
    }

    pub fn to_rows(&self, n: usize) -> Vec<Vec<u8>> {
        (0..n)
            .map(|i| {
                (1..=self.exchanges())
                    .map(|e| u8::from(self.status(i, e)))
                    .collect()
            })
            .collect()
    }
}

/// A candidate parameter point: participation probability `p` and per-link
/// transmission probability `q`, both in the closed unit interval.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamPoint {
    pub p: f64,
    pub q: f64,
}

impl ParamPoint {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!(
                    "{name} = {v} is outside the unit interval"
                )));
            }
        }
        Ok(ParamPoint { p, q })
    }
}

/// Per-individual probabilities of newly receiving the information in one
/// exchange, given a conditioning status vector.
#[derive(Clone, Debug)]
pub struct ReceptionVector {
    pub values: Vec<f64>,
}

impl ReceptionVector {
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Survival probabilities `(1-q)^k` for `k = 0..=max_count`, built by
/// sequential multiplication so every caller sees identical values.
pub(crate) fn survival_powers(q: f64, max_count: usize) -> Vec<f64> {
    let mut pows = Vec::with_capacity(max_count + 1);
    let mut acc = 1.0;
    pows.push(acc);
    for _ in 0..max_count {
        acc *= 1.0 - q;
        pows.push(acc);
    }
    pows
}

/// Probability that each individual newly receives the information given
/// the informed-status vector: `r_i = 1 - (1-q)^k` with `k` the number of
/// informed neighbors. Values are computed for every individual; callers
/// filter out the already informed.
pub fn reception_probabilities(
    net: &VillageNetwork,
    status: &BitVec,
    q: f64,
) -> Result<ReceptionVector> {
    if status.len() != net.n() {
        return Err(Error::Dimension(format!(
            "status vector has length {}, expected {}",
            status.len(),
            net.n()
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Parameter(format!(
            "q = {q} is outside the unit interval"
        )));
    }
    let max_deg = (0..net.n()).map(|i| net.degree(i)).max().unwrap_or(0);
    let pows = survival_powers(q, max_deg);
    let values = (0..net.n())
        .map(|i| 1.0 - pows[net.informed_neighbor_count(i, status)])
        .collect();
    Ok(ReceptionVector { values })
}

/// Density of the first-period outcome given the injection status:
/// injection points participate with probability `p`, everyone else is
/// certain not to participate.
#[inline]
pub fn initial_outcome_density(y1: bool, s0: bool, p: f64) -> f64 {
    match (s0, y1) {
        (true, true) => p,
        (true, false) => 1.0 - p,
        (false, false) => 1.0,
        (false, true) => 0.0,
    }
}

/// Density of the outcome in periods after the first, conditional on the
/// previous outcome and the two most recent information statuses. Only an
/// individual who just received the information faces a fresh
/// participation decision; previous participants stay, and everyone else
/// stays out for sure.
#[inline]
pub fn outcome_density(y_now: bool, y_prev: bool, s_prev: bool, s_prev2: bool, p: f64) -> f64 {
    if y_prev {
        return if y_now { 1.0 } else { 0.0 };
    }
    let fresh = s_prev && !s_prev2;
    match (y_now, fresh) {
        (true, true) => p,
        (true, false) => 0.0,
        (false, true) => 1.0 - p,
        (false, false) => 1.0,
    }
}

/// Density of one individual's information status after an exchange,
/// conditional on the prior status, the reception probability `r`, and the
/// current participation (a participant must be informed).
#[inline]
pub fn info_density(s_now: bool, s_prev: bool, r: f64, y_now: bool) -> f64 {
    if y_now {
        return if s_now { 1.0 } else { 0.0 };
    }
    match (s_prev, s_now) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        (false, true) => r,
        (false, false) => 1.0 - r,
    }
}

/// Linear-space contributions of one potentially informed individual:
/// `a` for "newly informed and opted out", `b` for "uninformed". The third
/// observationally equivalent state, "previously informed and opted out",
/// always contributes [`PiiContribution::C`].
#[derive(Clone, Copy, Debug)]
pub struct PiiContribution {
    pub a: f64,
    pub b: f64,
}

impl PiiContribution {
    /// Contribution of the previously-informed-and-opted-out state.
    pub const C: f64 = 1.0;

    pub fn new(r: f64, p: f64) -> Self {
        PiiContribution {
            a: r * (1.0 - p),
            b: 1.0 - r,
        }
    }

    /// Combined mass of both latent states, `1 - p·r`; the per-individual
    /// factor when the two states need not be distinguished.
    #[inline]
    pub fn total(&self) -> f64 {
        self.a + self.b
    }
}

/// Sub-state of a potentially informed individual within one scenario
/// branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiiState {
    /// Both latent states will be enumerated.
    Free,
    /// Fixed to "newly informed and opted out".
    TrimmedA,
    /// Fixed to "uninformed".
    TrimmedB,
    /// Already informed and opted out in this branch; contributes 1.
    PrevInformed,
}

/// Classification of one individual at one period, driven entirely by the
/// observed outcomes, the reception probability, and the branch history.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndividualClass {
    FormerParticipant,
    NewParticipant,
    OutOfReach,
    Pii(PiiState),
}

/// Classifies every individual at period `t` (2-based through `T`).
/// `opted_out` flags individuals who are informed but not participating in
/// the conditioning branch; they are potentially informed individuals in
/// the fixed [`PiiState::PrevInformed`] sub-state.
///
/// Returns an inconsistency error if a new participant could not possibly
/// have just received the information under the conditioning.
pub fn classify(
    y: &OutcomeMatrix,
    t: usize,
    r_prev: &ReceptionVector,
    opted_out: &BitVec,
) -> Result<Vec<IndividualClass>> {
    assert!(
        (2..=y.periods()).contains(&t),
        "classification applies to periods 2..=T"
    );
    let mut classes = Vec::with_capacity(y.n());
    for i in 0..y.n() {
        let class = if y.participation(i, t - 1) {
            IndividualClass::FormerParticipant
        } else if y.participation(i, t) {
            if opted_out.get(i) {
                return Err(Error::Inconsistent {
                    individual: i,
                    period: t,
                    reason: "new participant already opted out in this branch".into(),
                });
            }
            if r_prev.get(i) == 0.0 {
                return Err(Error::Inconsistent {
                    individual: i,
                    period: t,
                    reason: "new participant has no informed neighbor in this branch".into(),
                });
            }
            IndividualClass::NewParticipant
        } else if opted_out.get(i) {
            IndividualClass::Pii(PiiState::PrevInformed)
        } else if r_prev.get(i) == 0.0 {
            IndividualClass::OutOfReach
        } else {
            IndividualClass::Pii(PiiState::Free)
        };
        classes.push(class);
    }
    Ok(classes)
}

/// Reception probability at which the two latent states of a potentially
/// informed individual are equally likely: `r* = 1 / (2 - p)`.
#[inline]
pub fn trim_threshold(p: f64) -> f64 {
    1.0 / (2.0 - p)
}

/// Participation probability at which the two latent states are equally
/// likely for an individual with the given number of informed links:
/// `p = 2 - 1/(1 - (1-q)^links)`. Returns `-inf` when no transmission can
/// occur (`q = 0`); values below zero indicate the curve lies under the
/// admissible range and are returned unclamped.
pub fn equivalence_curve(num_informed_links: usize, q: f64) -> f64 {
    assert!(num_informed_links >= 1, "at least one informed link required");
    let r = 1.0 - (1.0 - q).powi(num_informed_links as i32);
    if r == 0.0 {
        f64::NEG_INFINITY
    } else {
        2.0 - 1.0 / r
    }
}

/// One village's data: network, injection points, and observed outcomes,
/// validated for mutual consistency at construction.
#[derive(Clone, Debug)]
pub struct Village {
    pub label: String,
    pub network: VillageNetwork,
    pub seeds: SeedVector,
    pub outcomes: OutcomeMatrix,
}

impl Village {
    /// Bundles and validates one village. Beyond dimension checks, the
    /// outcomes must be realizable: period-1 participants must be
    /// injection points, an injection point who declined can never
    /// participate, and a first participation in period `t` requires graph
    /// distance at most `t - 1` from some injection point.
    pub fn new(
        label: impl Into<String>,
        network: VillageNetwork,
        seeds: SeedVector,
        outcomes: OutcomeMatrix,
    ) -> Result<Self> {
        let n = network.n();
        if seeds.len() != n {
            return Err(Error::Dimension(format!(
                "seed vector has length {}, expected {}",
                seeds.len(),
                n
            )));
        }
        if outcomes.n() != n {
            return Err(Error::Dimension(format!(
                "outcome matrix has {} rows, expected {}",
                outcomes.n(),
                n
            )));
        }
        if outcomes.periods() < 2 {
            return Err(Error::InsufficientData(
                "at least two outcome periods are required".into(),
            ));
        }
        let dist = network.distances_from(seeds.bits());
        for (i, &dist_i) in dist.iter().enumerate() {
            let first = outcomes.first_participation(i);
            if seeds.is_ip(i) {
                if let Some(t) = first {
                    if t > 1 {
                        return Err(Error::Inconsistent {
                            individual: i,
                            period: t,
                            reason: "injection point who declined in period 1 cannot participate later"
                                .into(),
                        });
                    }
                }
            } else if let Some(t) = first {
                if t == 1 {
                    return Err(Error::Inconsistent {
                        individual: i,
                        period: 1,
                        reason: "period-1 participant is not an injection point".into(),
                    });
                }
                match dist_i {
                    Some(d) if (d as usize) < t => {}
                    _ => {
                        return Err(Error::Inconsistent {
                            individual: i,
                            period: t,
                            reason: format!(
                                "participation in period {t} requires graph distance at most {} from an injection point",
                                t - 1
                            ),
                        });
                    }
                }
            }
        }
        Ok(Village {
            label: label.into(),
            network,
            seeds,
            outcomes,
        })
    }

    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn periods(&self) -> usize {
        self.outcomes.periods()
    }
}
