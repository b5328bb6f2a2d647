//! Exact and trimmed evaluation of the latent-scenario tree.
//!
//! One village's likelihood sums the joint probability of the observed
//! outcomes over every latent information scenario. The tree is walked
//! depth-first with an explicit stack; each node stores only the Markov
//! state (current informed-status vector and the branch's accumulated
//! log-probability). Branching comes exclusively from potentially informed
//! individuals, who may be either "newly informed and opted out" or
//! "uninformed". Trimming fixes all but the `d` most ambiguous of them per
//! exchange to their more likely status; the last exchange is never
//! trimmed because both states can be folded into a single factor there.
//!
//! Within one evaluation the traversal is strictly serial and the final
//! reduction sorts its buffer, so results are bit-identical across runs
//! and worker counts. A branch whose observed data become impossible
//! contributes probability zero; it is dropped and counted, never fatal.

use crate::bits::BitVec;
use crate::error::{Error, Result};
use crate::logsum::log_sum_exp;
use crate::model::{
    survival_powers, trim_threshold, ParamPoint, PiiContribution, Village,
};

/// Threshold below which a running linear product is flushed into its log
/// accumulator to avoid underflow.
const FLUSH_BELOW: f64 = 1e-250;

/// Largest free set that can be enumerated as subset masks.
const MAX_FREE: usize = 62;

/// One node of the scenario tree: the exchange about to happen (1-based),
/// the informed-status vector after the previous exchange, and the
/// accumulated log-probability of everything observed so far on this
/// branch. Opted-out individuals need no separate field: they are exactly
/// the informed non-participants of the current period.
#[derive(Clone, Debug)]
pub struct ExchangeState {
    pub exchange: usize,
    pub informed: BitVec,
    pub log_prob: f64,
}

/// One potentially informed individual within a branch: reception
/// probability and the linear contributions of the two latent states.
#[derive(Clone, Copy, Debug)]
pub struct PiiEntry {
    pub individual: usize,
    pub r: f64,
    pub contribution: PiiContribution,
}

/// One entry of a trimming plan, in threshold-distance order.
#[derive(Clone, Copy, Debug)]
pub struct TrimSlot {
    pub individual: usize,
    pub r: f64,
    pub contribution: PiiContribution,
    /// Distance |r - r*| from the indifference threshold.
    pub distance: f64,
    /// The more likely status: `true` fixes to "newly informed and opted
    /// out", `false` to "uninformed". Ties at the threshold default to
    /// "uninformed".
    pub default_informed: bool,
    /// Whether both states of this individual will be enumerated.
    pub free: bool,
}

/// The trimming decision for one exchange of one branch. Slots are sorted
/// by distance from the indifference threshold, furthest first (ties by
/// ascending individual index); the free slots are exactly the trailing
/// `free_count`, which makes the free sets nested as `d` grows.
#[derive(Clone, Debug)]
pub struct TrimPlan {
    slots: Vec<TrimSlot>,
    free_count: usize,
}

impl TrimPlan {
    pub fn slots(&self) -> &[TrimSlot] {
        &self.slots
    }

    pub fn free_count(&self) -> usize {
        self.free_count
    }

    pub fn free(&self) -> impl Iterator<Item = &TrimSlot> {
        self.slots.iter().filter(|s| s.free)
    }

    pub fn trimmed_to_a(&self) -> impl Iterator<Item = &TrimSlot> {
        self.slots.iter().filter(|s| !s.free && s.default_informed)
    }

    pub fn trimmed_to_b(&self) -> impl Iterator<Item = &TrimSlot> {
        self.slots.iter().filter(|s| !s.free && !s.default_informed)
    }

    /// Flips the fixed status of the given trimmed individuals; used by
    /// the trimming audit to price the road not taken.
    pub fn with_flipped_defaults(&self, individuals: &[usize]) -> TrimPlan {
        let mut plan = self.clone();
        for slot in &mut plan.slots {
            if !slot.free && individuals.contains(&slot.individual) {
                slot.default_informed = !slot.default_informed;
            }
        }
        plan
    }
}

/// Evaluation result for one village at one parameter point.
#[derive(Clone, Copy, Debug)]
pub struct VillageEval {
    pub log_likelihood: f64,
    /// Branches abandoned because an observed event had probability zero.
    pub dead_branches: u64,
    /// Complete branches with positive probability; for four periods this
    /// is the number of surviving status histories over the first two
    /// exchanges.
    pub retained_branches: u64,
    /// Largest eligible-PII count seen at any trimmable exchange.
    pub max_eligible_piis: usize,
}

/// One complete branch of the exact tree: its log-probability and the
/// smallest trimming value at which it is retained.
#[derive(Clone, Copy, Debug)]
pub struct BranchMass {
    pub log_prob: f64,
    pub min_d: usize,
}

/// Running product that flushes into log space before it can underflow.
#[derive(Clone, Copy)]
struct LogAcc {
    lin: f64,
    log: f64,
}

impl LogAcc {
    fn new() -> Self {
        LogAcc { lin: 1.0, log: 0.0 }
    }

    /// Multiplies a factor in; returns `false` when the factor is zero and
    /// the branch is dead.
    #[inline]
    fn mul(&mut self, factor: f64) -> bool {
        if factor == 0.0 {
            return false;
        }
        self.lin *= factor;
        if self.lin < FLUSH_BELOW {
            self.log += self.lin.ln();
            self.lin = 1.0;
        }
        true
    }

    fn finish(&self) -> f64 {
        self.log + self.lin.ln()
    }
}

struct Ctx<'a> {
    village: &'a Village,
    params: ParamPoint,
    /// `(1-q)^k` for k up to the maximum degree.
    pows: Vec<f64>,
}

impl<'a> Ctx<'a> {
    fn new(village: &'a Village, params: ParamPoint) -> Self {
        let max_deg = (0..village.n())
            .map(|i| village.network.degree(i))
            .max()
            .unwrap_or(0);
        Ctx {
            village,
            params,
            pows: survival_powers(params.q, max_deg),
        }
    }

    #[inline]
    fn reception(&self, i: usize, informed: &BitVec) -> f64 {
        1.0 - self.pows[self.village.network.informed_neighbor_count(i, informed)]
    }
}

/// Everything one exchange determines before any branching: the folded
/// unequivocal factors, the individuals who just became informed by
/// participating, and the eligible PIIs.
struct Survey {
    acc: LogAcc,
    dead: bool,
    newly_informed: Vec<usize>,
    piis: Vec<PiiEntry>,
}

fn survey(ctx: &Ctx, state: &ExchangeState) -> Survey {
    let v = ctx.village;
    let y_now = v.outcomes.period_col(state.exchange);
    let y_next = v.outcomes.period_col(state.exchange + 1);
    let mut acc = LogAcc::new();
    let mut dead = false;
    let mut newly_informed = Vec::new();
    let mut piis = Vec::new();
    for i in 0..v.n() {
        if y_now.get(i) {
            continue;
        }
        let informed = state.informed.get(i);
        if y_next.get(i) {
            // A new participant must have just received the information:
            // impossible if already informed (she opted out for good) or
            // out of reach in this branch.
            if informed {
                dead = true;
                continue;
            }
            let r = ctx.reception(i, &state.informed);
            if !acc.mul(r * ctx.params.p) {
                dead = true;
                continue;
            }
            newly_informed.push(i);
        } else if !informed {
            let r = ctx.reception(i, &state.informed);
            if r > 0.0 {
                piis.push(PiiEntry {
                    individual: i,
                    r,
                    contribution: PiiContribution::new(r, ctx.params.p),
                });
            }
            // r == 0: out of reach, factor 1.
        }
        // Informed non-participants and former participants contribute 1.
    }
    Survey {
        acc,
        dead,
        newly_informed,
        piis,
    }
}

/// Lists every potentially informed individual of one branch at one
/// exchange: non-participants with a positive reception probability who
/// are not already informed. Individuals who opted out earlier in the
/// branch are excluded (their status is fixed and contributes 1).
pub fn eligible_piis(village: &Village, state: &ExchangeState, params: ParamPoint) -> Vec<PiiEntry> {
    let ctx = Ctx::new(village, params);
    survey(&ctx, state).piis
}

/// Sorts the eligible PIIs by distance from the indifference threshold
/// (furthest first, ties by ascending index) and fixes all but the last
/// `d` to their more likely status: "newly informed and opted out" above
/// the threshold, "uninformed" at or below it. `None` leaves everyone
/// free (exact evaluation).
pub fn trim_select(piis: Vec<PiiEntry>, params: ParamPoint, d: Option<usize>) -> TrimPlan {
    let r_star = trim_threshold(params.p);
    let mut slots: Vec<TrimSlot> = piis
        .into_iter()
        .map(|e| TrimSlot {
            individual: e.individual,
            r: e.r,
            contribution: e.contribution,
            distance: (e.r - r_star).abs(),
            default_informed: e.r > r_star,
            free: false,
        })
        .collect();
    slots.sort_by(|x, y| {
        y.distance
            .partial_cmp(&x.distance)
            .expect("threshold distances are finite")
            .then(x.individual.cmp(&y.individual))
    });
    let m = slots.len();
    let free_count = d.map_or(m, |d| d.min(m));
    for slot in &mut slots[m - free_count..] {
        slot.free = true;
    }
    TrimPlan { slots, free_count }
}

/// Expands one branch through one (non-final) exchange under the given
/// plan: one child per subset of the free set, trimmed individuals at
/// their fixed status, zero-probability children dropped. Returns the
/// children and the number of dropped branches.
pub fn expand_exchange(
    village: &Village,
    state: &ExchangeState,
    plan: &TrimPlan,
    params: ParamPoint,
) -> Result<(Vec<ExchangeState>, u64)> {
    let ctx = Ctx::new(village, params);
    let sv = survey(&ctx, state);
    if sv.dead {
        return Ok((Vec::new(), 1));
    }
    let (children, dead) = expand_with_plan(state, &sv, plan)?;
    Ok((children.into_iter().map(|(c, _)| c).collect(), dead))
}

/// Core expansion shared by the public entry points. Returns children
/// tagged with the smallest trimming value that would retain them at this
/// exchange (the tag is only informative when every slot is free).
fn expand_with_plan(
    state: &ExchangeState,
    sv: &Survey,
    plan: &TrimPlan,
) -> Result<(Vec<(ExchangeState, usize)>, u64)> {
    let m = plan.slots.len();
    let f = plan.free_count;
    if f > MAX_FREE {
        return Err(Error::BudgetExceeded {
            estimate: 1u128 << f.min(127),
            budget: 1u128 << MAX_FREE,
        });
    }
    let mut acc = sv.acc;
    let mut base = state.informed.clone();
    for &i in &sv.newly_informed {
        base.set(i, true);
    }
    for slot in &plan.slots[..m - f] {
        let factor = if slot.default_informed {
            slot.contribution.a
        } else {
            slot.contribution.b
        };
        if !acc.mul(factor) {
            return Ok((Vec::new(), 1));
        }
        if slot.default_informed {
            base.set(slot.individual, true);
        }
    }
    let free = &plan.slots[m - f..];
    let mut children = Vec::with_capacity(1usize << f);
    let mut dead = 0u64;
    for mask in 0u64..(1u64 << f) {
        let mut child_acc = acc;
        let mut informed = base.clone();
        let mut required_d = 0usize;
        let mut alive = true;
        for (j, slot) in free.iter().enumerate() {
            let choose_informed = mask >> j & 1 == 1;
            let factor = if choose_informed {
                slot.contribution.a
            } else {
                slot.contribution.b
            };
            if !child_acc.mul(factor) {
                alive = false;
                break;
            }
            if choose_informed {
                informed.set(slot.individual, true);
            }
            if choose_informed != slot.default_informed {
                required_d = required_d.max(f - j);
            }
        }
        if !alive {
            dead += 1;
            continue;
        }
        children.push((
            ExchangeState {
                exchange: state.exchange + 1,
                informed,
                log_prob: state.log_prob + child_acc.finish(),
            },
            required_d,
        ));
    }
    Ok((children, dead))
}

struct RunOutput {
    branches: Vec<BranchMass>,
    dead: u64,
    max_eligible: usize,
}

/// Depth-first walk from `start` to the end of the horizon.
fn run(ctx: &Ctx, start: ExchangeState, d: Option<usize>) -> Result<RunOutput> {
    let t = ctx.village.periods();
    let mut branches = Vec::new();
    let mut dead = 0u64;
    let mut max_eligible = 0usize;
    let mut stack = vec![(start, 0usize)];
    while let Some((state, min_d)) = stack.pop() {
        debug_assert!((1..t).contains(&state.exchange));
        let sv = survey(ctx, &state);
        if sv.dead {
            dead += 1;
            continue;
        }
        if state.exchange == t - 1 {
            // Final exchange: nothing after it distinguishes the two PII
            // states, so each folds into a single combined factor.
            let mut acc = sv.acc;
            if sv.piis.iter().all(|e| acc.mul(e.contribution.total())) {
                branches.push(BranchMass {
                    log_prob: state.log_prob + acc.finish(),
                    min_d,
                });
            } else {
                dead += 1;
            }
            continue;
        }
        max_eligible = max_eligible.max(sv.piis.len());
        let plan = trim_select(sv.piis.clone(), ctx.params, d);
        let (children, dropped) = expand_with_plan(&state, &sv, &plan)?;
        dead += dropped;
        for (child, required) in children {
            stack.push((child, min_d.max(required)));
        }
    }
    Ok(RunOutput {
        branches,
        dead,
        max_eligible,
    })
}

pub(crate) fn initial_state(village: &Village, params: ParamPoint) -> Option<ExchangeState> {
    let mut acc = LogAcc::new();
    for i in 0..village.n() {
        let f = crate::model::initial_outcome_density(
            village.outcomes.participation(i, 1),
            village.seeds.is_ip(i),
            params.p,
        );
        if !acc.mul(f) {
            return None;
        }
    }
    Some(ExchangeState {
        exchange: 1,
        informed: village.seeds.bits().clone(),
        log_prob: acc.finish(),
    })
}

/// Evaluates the (trimmed or exact) log-likelihood of everything from the
/// given branch state to the end of the horizon. The returned value
/// includes the state's own accumulated log-probability.
pub fn evaluate_from(
    village: &Village,
    params: ParamPoint,
    start: ExchangeState,
    d: Option<usize>,
) -> Result<VillageEval> {
    let ctx = Ctx::new(village, params);
    let out = run(&ctx, start, d)?;
    let mut logs: Vec<f64> = out.branches.iter().map(|b| b.log_prob).collect();
    Ok(VillageEval {
        log_likelihood: log_sum_exp(&mut logs),
        dead_branches: out.dead,
        retained_branches: out.branches.len() as u64,
        max_eligible_piis: out.max_eligible,
    })
}

/// Log-likelihood of one village's observed outcomes. `d` caps the number
/// of PIIs left free per exchange over the first `T-2` exchanges; `None`
/// evaluates exactly. A result of `-inf` means every scenario was
/// impossible at this parameter point; that is a data point, not an error.
pub fn village_log_likelihood(
    village: &Village,
    params: ParamPoint,
    d: Option<usize>,
) -> Result<VillageEval> {
    match initial_state(village, params) {
        Some(start) => evaluate_from(village, params, start, d),
        None => Ok(VillageEval {
            log_likelihood: f64::NEG_INFINITY,
            dead_branches: 1,
            retained_branches: 0,
            max_eligible_piis: 0,
        }),
    }
}

/// Exact-tree decomposition: every surviving branch with its
/// log-probability and the smallest trimming value that retains it. The
/// trimmed log-likelihood at any `d` is the log-sum-exp over branches with
/// `min_d <= d`; diagnostics use the per-`d` increments.
pub fn branch_decomposition(village: &Village, params: ParamPoint) -> Result<Vec<BranchMass>> {
    decomposition_full(village, params).map(|(branches, _)| branches)
}

/// Decomposition plus the largest eligible-PII count seen on the walk.
pub(crate) fn decomposition_full(
    village: &Village,
    params: ParamPoint,
) -> Result<(Vec<BranchMass>, usize)> {
    let ctx = Ctx::new(village, params);
    match initial_state(village, params) {
        Some(start) => {
            let out = run(&ctx, start, None)?;
            Ok((out.branches, out.max_eligible))
        }
        None => Ok((Vec::new(), 0)),
    }
}

/// Joint probability of the observed outcomes and one specific latent
/// scenario, as a plain product of per-individual densities. This is the
/// brute-force oracle building block: it shares no traversal machinery
/// with the tree walk. Returns 0 for scenarios inconsistent with the
/// outcomes.
pub fn scenario_probability(village: &Village, params: ParamPoint, scenario: &InfoScenarioRef) -> f64 {
    scenario_probability_impl(village, params, scenario)
}

/// Borrowed view of a scenario for [`scenario_probability`]; either a full
/// [`crate::model::InfoScenario`] or raw status columns.
pub struct InfoScenarioRef<'a> {
    cols: &'a [BitVec],
}

impl<'a> InfoScenarioRef<'a> {
    pub fn new(cols: &'a [BitVec]) -> Self {
        InfoScenarioRef { cols }
    }

    pub fn from_scenario(s: &'a crate::model::InfoScenario) -> Self {
        InfoScenarioRef {
            cols: s.columns(),
        }
    }
}

fn scenario_probability_impl(village: &Village, params: ParamPoint, scenario: &InfoScenarioRef) -> f64 {
    let n = village.n();
    let t = village.periods();
    assert_eq!(
        scenario.cols.len(),
        t - 1,
        "scenario must cover exactly one column per exchange"
    );
    let mut prob = 1.0;
    for i in 0..n {
        prob *= crate::model::initial_outcome_density(
            village.outcomes.participation(i, 1),
            village.seeds.is_ip(i),
            params.p,
        );
    }
    for e in 1..t {
        let prev: &BitVec = if e == 1 {
            village.seeds.bits()
        } else {
            &scenario.cols[e - 2]
        };
        let r = crate::model::reception_probabilities(&village.network, prev, params.q)
            .expect("dimensions verified by construction");
        let now = &scenario.cols[e - 1];
        for i in 0..n {
            prob *= crate::model::info_density(
                now.get(i),
                prev.get(i),
                r.get(i),
                village.outcomes.participation(i, e),
            );
            prob *= crate::model::outcome_density(
                village.outcomes.participation(i, e + 1),
                village.outcomes.participation(i, e),
                now.get(i),
                prev.get(i),
                params.p,
            );
            if prob == 0.0 {
                return 0.0;
            }
        }
    }
    prob
}

/// Counts the distinct monotone information histories over the given
/// number of exchanges, unconditional on outcomes: each newly informed
/// individual must have an informed neighbor in the previous column.
/// Saturates at `u128::MAX` once a single frontier exceeds 60 individuals.
pub fn count_scenarios(
    net: &crate::model::VillageNetwork,
    seeds: &crate::model::SeedVector,
    exchanges: usize,
) -> u128 {
    let mut memo = std::collections::HashMap::new();
    count_rec(net, seeds.bits().clone(), exchanges, &mut memo, None).unwrap_or(u128::MAX)
}

/// Like [`count_scenarios`] but stops early once the count exceeds `cap`:
/// the result is exact when `<= cap` and merely some value `> cap`
/// otherwise.
pub fn count_scenarios_capped(
    net: &crate::model::VillageNetwork,
    seeds: &crate::model::SeedVector,
    exchanges: usize,
    cap: u128,
) -> u128 {
    let mut memo = std::collections::HashMap::new();
    count_rec(net, seeds.bits().clone(), exchanges, &mut memo, Some(cap)).unwrap_or_else(|| cap.saturating_add(1))
}

/// Returns `Some(exact count)` or `None` when the cap was exceeded.
fn count_rec(
    net: &crate::model::VillageNetwork,
    informed: BitVec,
    left: usize,
    memo: &mut std::collections::HashMap<(BitVec, usize), u128>,
    cap: Option<u128>,
) -> Option<u128> {
    if left == 0 {
        return Some(1);
    }
    let key = (informed, left);
    if let Some(&c) = memo.get(&key) {
        return Some(c);
    }
    let informed = &key.0;
    let frontier: Vec<usize> = (0..net.n())
        .filter(|&i| !informed.get(i) && net.informed_neighbor_count(i, informed) > 0)
        .collect();
    let f = frontier.len();
    if f > 60 {
        return match cap {
            // More subsets than could ever be enumerated; report saturation.
            None => Some(u128::MAX),
            Some(_) => None,
        };
    }
    let mut total: u128 = 0;
    for mask in 0u64..(1u64 << f) {
        let mut next = informed.clone();
        for (j, &i) in frontier.iter().enumerate() {
            if mask >> j & 1 == 1 {
                next.set(i, true);
            }
        }
        total = total.saturating_add(count_rec(net, next, left - 1, memo, cap)?);
        if let Some(c) = cap {
            if total > c {
                return None;
            }
        }
    }
    memo.insert(key, total);
    Some(total)
}

/// The village's maximal eligible-PII count over all live branch states at
/// trimmable exchanges (the first `T-2`). At this trimming value and above
/// no trimming occurs anywhere and the evaluation is exact. The walk is
/// structural (parameter-free) and memoizes visited states; it refuses
/// villages whose state space exceeds `state_budget`.
pub fn max_pii_count(village: &Village, state_budget: usize) -> Result<usize> {
    let t = village.periods();
    if t < 3 {
        return Ok(0);
    }
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![(1usize, village.seeds.bits().clone())];
    let mut max_piis = 0usize;
    while let Some((exchange, informed)) = stack.pop() {
        if !seen.insert((exchange, informed.clone())) {
            continue;
        }
        if seen.len() > state_budget {
            return Err(Error::BudgetExceeded {
                estimate: seen.len() as u128,
                budget: state_budget as u128,
            });
        }
        let y_now = village.outcomes.period_col(exchange);
        let y_next = village.outcomes.period_col(exchange + 1);
        let mut piis = Vec::new();
        let mut newly = Vec::new();
        let mut dead = false;
        for i in 0..village.n() {
            if y_now.get(i) {
                continue;
            }
            let is_informed = informed.get(i);
            let in_reach = village.network.informed_neighbor_count(i, &informed) > 0;
            if y_next.get(i) {
                if is_informed || !in_reach {
                    dead = true;
                    break;
                }
                newly.push(i);
            } else if !is_informed && in_reach {
                piis.push(i);
            }
        }
        if dead {
            continue;
        }
        max_piis = max_piis.max(piis.len());
        if exchange == t - 2 {
            continue;
        }
        for mask in 0u64..(1u64 << piis.len().min(MAX_FREE)) {
            let mut next = informed.clone();
            for &i in &newly {
                next.set(i, true);
            }
            for (j, &i) in piis.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    next.set(i, true);
                }
            }
            stack.push((exchange + 1, next));
        }
    }
    Ok(max_piis)
}

/// Pre-flight guard for exact or trimmed evaluation: estimates the number
/// of branches and refuses when it exceeds `budget`. The estimate is the
/// smaller of the unconditional scenario count over the first `T-2`
/// exchanges and the structural trimming bound `2^(d*(T-2))`.
pub fn ensure_within_budget(village: &Village, d: Option<usize>, budget: u128) -> Result<u128> {
    let prefix = village.periods().saturating_sub(2);
    let unconditional =
        count_scenarios_capped(&village.network, &village.seeds, prefix, budget);
    let trimmed_bound = match d {
        Some(d) => {
            let bits = (d as u32).saturating_mul(prefix as u32);
            if bits >= 127 {
                u128::MAX
            } else {
                1u128 << bits
            }
        }
        None => u128::MAX,
    };
    let estimate = unconditional.min(trimmed_bound);
    if estimate > budget {
        Err(Error::BudgetExceeded { estimate, budget })
    } else {
        Ok(estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OutcomeMatrix, SeedVector, VillageNetwork};

    /// Seven-individual test graph: a hub-free braid with one injection
    /// point, small enough to enumerate by hand.
    fn graph1() -> VillageNetwork {
        VillageNetwork::from_edges(
            7,
            &[(0, 1), (0, 2), (1, 3), (2, 4), (2, 3), (3, 5), (4, 5)],
        )
        .unwrap()
    }

    fn graph1_village() -> Village {
        let seeds = SeedVector::from_flags(&[1, 0, 0, 0, 0, 0, 0]).unwrap();
        let rows = vec![
            vec![1, 1, 1, 1],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
            vec![0, 0, 1, 1],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
            vec![0, 0, 0, 0],
        ];
        Village::new(
            "graph1",
            graph1(),
            seeds,
            OutcomeMatrix::from_rows(&rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scenario_counts() {
        let net = graph1();
        let seeds = SeedVector::from_flags(&[1, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(count_scenarios(&net, &seeds, 1), 4);
        assert_eq!(count_scenarios(&net, &seeds, 2), 20);
        assert_eq!(count_scenarios(&net, &seeds, 3), 92);

        let isolated = VillageNetwork::from_edges(3, &[(1, 2)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0, 0]).unwrap();
        assert_eq!(count_scenarios(&isolated, &seeds, 5), 1);

        let edge = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        assert_eq!(count_scenarios(&edge, &seeds, 1), 2);

        assert_eq!(count_scenarios_capped(&net, &seeds_graph1(), 3, 91), 92);
        assert!(count_scenarios_capped(&net, &seeds_graph1(), 3, 20) > 20);
        assert_eq!(count_scenarios_capped(&net, &seeds_graph1(), 3, 92), 92);
    }

    fn seeds_graph1() -> SeedVector {
        SeedVector::from_flags(&[1, 0, 0, 0, 0, 0, 0]).unwrap()
    }

    #[test]
    fn two_node_hand_computation() {
        let net = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[vec![0, 0], vec![0, 1]]).unwrap();
        let v = Village::new("pair", net, seeds, y).unwrap();
        let params = ParamPoint::new(0.5, 0.5).unwrap();
        let eval = village_log_likelihood(&v, params, None).unwrap();
        assert!((eval.log_likelihood - 0.125f64.ln()).abs() < 1e-14);
        assert_eq!(eval.retained_branches, 1);
        assert_eq!(eval.max_eligible_piis, 0);
    }

    #[test]
    fn graph1_frozen_references() {
        let v = graph1_village();
        let eval = village_log_likelihood(&v, ParamPoint::new(0.3, 0.6).unwrap(), None).unwrap();
        assert!((eval.log_likelihood - (-4.112379682461645)).abs() < 1e-12);
        let eval = village_log_likelihood(&v, ParamPoint::new(0.5, 0.5).unwrap(), None).unwrap();
        assert!((eval.log_likelihood - (-4.2109990844986855)).abs() < 1e-12);
    }

    #[test]
    fn trimmed_matches_exact_at_max_pii() {
        let v = graph1_village();
        let params = ParamPoint::new(0.4, 0.7).unwrap();
        let exact = village_log_likelihood(&v, params, None).unwrap();
        let d_bar = max_pii_count(&v, 1 << 20).unwrap();
        assert_eq!(d_bar, exact.max_eligible_piis);
        let trimmed = village_log_likelihood(&v, params, Some(d_bar)).unwrap();
        assert_eq!(
            trimmed.log_likelihood.to_bits(),
            exact.log_likelihood.to_bits()
        );
        let mut last = f64::NEG_INFINITY;
        for d in 0..=d_bar {
            let eval = village_log_likelihood(&v, params, Some(d)).unwrap();
            assert!(eval.log_likelihood >= last - 1e-12);
            last = eval.log_likelihood;
        }
        assert_eq!(last.to_bits(), exact.log_likelihood.to_bits());
    }

    #[test]
    fn decomposition_reconstructs_trimmed_values() {
        let v = graph1_village();
        let params = ParamPoint::new(0.35, 0.55).unwrap();
        let branches = branch_decomposition(&v, params).unwrap();
        let d_bar = max_pii_count(&v, 1 << 20).unwrap();
        for d in 0..=d_bar {
            let mut logs: Vec<f64> = branches
                .iter()
                .filter(|b| b.min_d <= d)
                .map(|b| b.log_prob)
                .collect();
            let from_branches = crate::logsum::log_sum_exp(&mut logs);
            let direct = village_log_likelihood(&v, params, Some(d))
                .unwrap()
                .log_likelihood;
            assert_eq!(from_branches.to_bits(), direct.to_bits());
        }
    }

    #[test]
    fn oracle_sum_matches_engine_on_graph1() {
        let v = graph1_village();
        for (p, q) in [(0.3, 0.6), (0.5, 0.5), (0.8, 0.2)] {
            let params = ParamPoint::new(p, q).unwrap();
            let exact = village_log_likelihood(&v, params, None)
                .unwrap()
                .log_likelihood;
            let total: f64 = enumerate_scenarios(&v)
                .iter()
                .map(|cols| scenario_probability(&v, params, &InfoScenarioRef::new(cols)))
                .sum();
            assert!((total.ln() - exact).abs() < 1e-10 * exact.abs());
        }
    }

    /// Test-side exhaustive generator: all monotone neighbor-grown status
    /// histories, unconditional on outcomes.
    fn enumerate_scenarios(v: &Village) -> Vec<Vec<BitVec>> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        grow(v, v.seeds.bits().clone(), v.periods() - 1, &mut prefix, &mut out);
        out
    }

    fn grow(
        v: &Village,
        informed: BitVec,
        left: usize,
        prefix: &mut Vec<BitVec>,
        out: &mut Vec<Vec<BitVec>>,
    ) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        let frontier: Vec<usize> = (0..v.n())
            .filter(|&i| !informed.get(i) && v.network.informed_neighbor_count(i, &informed) > 0)
            .collect();
        for mask in 0u64..(1u64 << frontier.len()) {
            let mut next = informed.clone();
            for (j, &i) in frontier.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    next.set(i, true);
                }
            }
            prefix.push(next.clone());
            grow(v, next, left - 1, prefix, out);
            prefix.pop();
        }
    }

    #[test]
    fn trim_select_tie_handling() {
        // A hub with four identical leaves: every eligible PII sits at the
        // same distance from the threshold, so ties resolve by index.
        let net = VillageNetwork::from_edges(
            6,
            &[(0, 1), (0, 2), (0, 3), (0, 4), (1, 5), (2, 5), (3, 5), (4, 5)],
        )
        .unwrap();
        let seeds = SeedVector::from_flags(&[1, 0, 0, 0, 0, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[
            vec![1, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
        ])
        .unwrap();
        let v = Village::new("hub", net, seeds, y).unwrap();

        let state = ExchangeState {
            exchange: 1,
            informed: v.seeds.bits().clone(),
            log_prob: 0.0,
        };

        // r = q = 0.8 above the threshold 1/(2-0.3): everyone defaults to
        // "newly informed and opted out"; the two lowest indices trim.
        let params = ParamPoint::new(0.3, 0.8).unwrap();
        let piis = eligible_piis(&v, &state, params);
        assert_eq!(
            piis.iter().map(|e| e.individual).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        let plan = trim_select(piis.clone(), params, Some(2));
        let trimmed: Vec<usize> = plan.trimmed_to_a().map(|s| s.individual).collect();
        assert_eq!(trimmed, vec![1, 2]);
        assert_eq!(plan.trimmed_to_b().count(), 0);
        let free: Vec<usize> = plan.free().map(|s| s.individual).collect();
        assert_eq!(free, vec![3, 4]);
        let (children, dead) = expand_exchange(&v, &state, &plan, params).unwrap();
        assert_eq!(children.len(), 4);
        assert_eq!(dead, 0);

        // r = q = 0.3 below the threshold 1/(2-0.8): defaults flip to
        // "uninformed".
        let params = ParamPoint::new(0.8, 0.3).unwrap();
        let plan = trim_select(eligible_piis(&v, &state, params), params, Some(2));
        let trimmed: Vec<usize> = plan.trimmed_to_b().map(|s| s.individual).collect();
        assert_eq!(trimmed, vec![1, 2]);

        // d at least the PII count leaves everyone free.
        let plan = trim_select(eligible_piis(&v, &state, params), params, Some(9));
        assert_eq!(plan.free_count(), 4);
        assert_eq!(plan.trimmed_to_a().count() + plan.trimmed_to_b().count(), 0);
    }

    #[test]
    fn scenario_probability_two_node() {
        let net = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[vec![0, 0], vec![0, 1]]).unwrap();
        let v = Village::new("pair", net, seeds, y).unwrap();
        let params = ParamPoint::new(0.5, 0.5).unwrap();

        let informed = vec![BitVec::from_bools(&[true, true])];
        let p1 = scenario_probability(&v, params, &InfoScenarioRef::new(&informed));
        assert!((p1 - 0.125).abs() < 1e-15);

        // The neighbor cannot participate while uninformed.
        let uninformed = vec![BitVec::from_bools(&[true, false])];
        let p0 = scenario_probability(&v, params, &InfoScenarioRef::new(&uninformed));
        assert_eq!(p0, 0.0);
    }

    #[test]
    fn budget_guard() {
        let v = graph1_village();
        assert_eq!(ensure_within_budget(&v, None, 1000).unwrap(), 20);
        match ensure_within_budget(&v, None, 10) {
            Err(Error::BudgetExceeded { estimate, budget }) => {
                assert!(estimate > 10);
                assert_eq!(budget, 10);
            }
            other => panic!("expected budget error, got {:?}", other),
        }
        assert_eq!(ensure_within_budget(&v, Some(0), 10).unwrap(), 1);
    }

    #[test]
    fn impossible_data_yields_minus_infinity_not_error() {
        // The neighbor participates in period 2, but transmission is
        // impossible at q = 0: every branch dies.
        let net = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[vec![1, 1], vec![0, 1]]).unwrap();
        let v = Village::new("pair", net, seeds, y).unwrap();
        let eval =
            village_log_likelihood(&v, ParamPoint::new(0.5, 0.0).unwrap(), None).unwrap();
        assert_eq!(eval.log_likelihood, f64::NEG_INFINITY);
        assert!(eval.dead_branches > 0);
        assert_eq!(eval.retained_branches, 0);
    }
}
