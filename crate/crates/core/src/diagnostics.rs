//! Approximation-error quantification and trimming audits.
//!
//! The trimmed likelihood leaves out scenario mass; these tools measure
//! how much, verify the structural identities the error curve must obey,
//! bound the error from the retained branches alone, and audit individual
//! trimming choices against their exactly-evaluated alternatives,
//! connecting wrong choices to the local graph topology around each
//! trimmed agent.

use crate::error::{Error, Result};
use crate::logsum::log_sum_exp;
use crate::model::{ParamPoint, SeedVector, Village, VillageNetwork};
use crate::scenario::{
    decomposition_full, eligible_piis, ensure_within_budget, evaluate_from, expand_exchange,
    trim_select, ExchangeState, TrimPlan,
};

/// The error curve of one village at one parameter point: trimmed
/// log-likelihoods and their log-space errors for d = 0, 1, ..., plus the
/// newly retained probability mass at each step.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ErrorCurve {
    pub label: String,
    pub theta: ParamPoint,
    pub exact_log_likelihood: f64,
    /// Trimmed log-likelihood per trimming value, index d.
    pub trimmed_log_likelihoods: Vec<f64>,
    /// ε_d = exact − trimmed, index d. The final entry is exactly zero.
    pub epsilons: Vec<f64>,
    /// Log of the probability mass first retained at each d (`-inf` when
    /// a step retains nothing new).
    pub new_mass_logs: Vec<f64>,
}

/// One step of the slope identity ε_{d-1} − ε_d = log(1 + P(s_d)/Σ_{x<d} P(s_x)).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SlopeStep {
    pub d: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SlopeReport {
    pub steps: Vec<SlopeStep>,
    pub max_discrepancy: f64,
}

/// Per-step mass ratios P(s_d)/Σ_{x<d} P(s_x) and where they fail to be
/// nonincreasing. A ratio above 1 is a kink: the step retains more mass
/// than everything before it combined, and the error curve drops by more
/// than log 2 there.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConvexityReport {
    /// Ratio at step d, index aligned with d = 1, 2, ...
    pub ratios: Vec<f64>,
    /// Steps d where the ratio exceeds its predecessor.
    pub violations: Vec<usize>,
    /// Steps d where the ratio exceeds 1.
    pub kinks: Vec<usize>,
}

/// Curvature observed on a computed error curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    Convex,
    Concave,
    Mixed,
    /// Fewer than three points: curvature is not observable.
    Indeterminate,
}

/// Extrapolated worst-case error with the curvature actually observed.
/// No conservativeness guarantee is attached: whether the extrapolation
/// over- or under-states the true ε_0 depends on the curvature.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct InterpolatedEstimate {
    pub estimate: f64,
    pub curvature: Curvature,
}

/// Per-intermediate ip-betweenness values, with the final agents that had
/// to be excluded for lacking any intermediate neighbor.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BetweennessReport {
    /// (intermediate agent, b value), aligned with the input order.
    pub values: Vec<(usize, f64)>,
    pub excluded_finals: Vec<usize>,
}

/// Audit verdict for one trimmed agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Optimal,
    /// Fixed to "newly informed and opted out" although the uninformed
    /// alternative carries more probability mass.
    Mistake1,
    /// Fixed to "uninformed" although the informed alternative carries
    /// more probability mass.
    Mistake2,
}

/// One first-exchange trimmed agent: its local topology, the fixed
/// status, and the exactly-continued mass of the chosen configuration
/// against flipping this agent alone or its whole same-default group.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SubgraphAudit {
    pub individual: usize,
    /// ip-betweenness over the derived intermediate/final sets.
    pub betweenness: f64,
    /// Links to the informed set (the injection points).
    pub in_degree: usize,
    /// Links toward final agents.
    pub out_degree: usize,
    /// True when the agent was fixed to "newly informed and opted out".
    pub default_informed: bool,
    /// Log-mass of the configuration as chosen (normalized: the shared
    /// first-period factor is left out).
    pub chosen_log_mass: f64,
    /// Log-mass with this agent's status flipped.
    pub flipped_log_mass: f64,
    /// Log-mass with every same-default trimmed agent flipped jointly;
    /// absent when the agent's group has fewer than two members.
    pub group_flipped_log_mass: Option<f64>,
    pub verdict: Verdict,
}

/// Computes the error curve for d = 0..min(d_max, d̄) from one exact
/// decomposition of the scenario tree. Refuses (with the scenario-count
/// estimate) when the estimated branch count exceeds `budget`.
pub fn error_curve(
    village: &Village,
    theta: ParamPoint,
    d_max: usize,
    budget: u128,
) -> Result<ErrorCurve> {
    ensure_within_budget(village, None, budget)?;
    let (branches, _max_eligible) = decomposition_full(village, theta)?;
    let top_needed = branches.iter().map(|b| b.min_d).max().unwrap_or(0);
    let top = top_needed.min(d_max);
    let mut all_logs: Vec<f64> = branches.iter().map(|b| b.log_prob).collect();
    let exact = log_sum_exp(&mut all_logs);
    let mut trimmed = Vec::with_capacity(top + 1);
    let mut epsilons = Vec::with_capacity(top + 1);
    let mut new_mass = Vec::with_capacity(top + 1);
    for d in 0..=top {
        let mut upto: Vec<f64> = branches
            .iter()
            .filter(|b| b.min_d <= d)
            .map(|b| b.log_prob)
            .collect();
        let mut only: Vec<f64> = branches
            .iter()
            .filter(|b| b.min_d == d)
            .map(|b| b.log_prob)
            .collect();
        let l_d = log_sum_exp(&mut upto);
        trimmed.push(l_d);
        // Both -inf (all scenarios impossible): nothing is missing.
        if exact == f64::NEG_INFINITY && l_d == f64::NEG_INFINITY {
            epsilons.push(0.0);
        } else {
            epsilons.push(exact - l_d);
        }
        new_mass.push(log_sum_exp(&mut only));
    }
    Ok(ErrorCurve {
        label: village.label.clone(),
        theta,
        exact_log_likelihood: exact,
        trimmed_log_likelihoods: trimmed,
        epsilons,
        new_mass_logs: new_mass,
    })
}

/// Verifies the definitional slope identity
/// ε_{d-1} − ε_d = log(1 + P(s_d)/Σ_{x<d} P(s_x)) on a computed curve.
/// Steps where both sides are infinite (nothing retained before d) count
/// as exact matches.
pub fn slope_identity_check(curve: &ErrorCurve) -> SlopeReport {
    let mut steps = Vec::new();
    let mut max_discrepancy: f64 = 0.0;
    for d in 1..curve.epsilons.len() {
        let lhs = curve.epsilons[d - 1] - curve.epsilons[d];
        let ratio_log = curve.new_mass_logs[d] - curve.trimmed_log_likelihoods[d - 1];
        let rhs = ratio_log.exp().ln_1p();
        let discrepancy = if lhs.is_infinite() && rhs.is_infinite() {
            0.0
        } else {
            (lhs - rhs).abs()
        };
        max_discrepancy = max_discrepancy.max(discrepancy);
        steps.push(SlopeStep {
            d,
            lhs,
            rhs,
            discrepancy,
        });
    }
    SlopeReport {
        steps,
        max_discrepancy,
    }
}

/// Evaluates the mass-ratio condition for convexity of the error curve:
/// the curve is convex on a stretch exactly when the ratios
/// P(s_d)/Σ_{x<d} P(s_x) are nonincreasing there.
pub fn convexity_report(curve: &ErrorCurve) -> ConvexityReport {
    let mut ratios = Vec::new();
    let mut violations = Vec::new();
    let mut kinks = Vec::new();
    for d in 1..curve.new_mass_logs.len() {
        let ratio = (curve.new_mass_logs[d] - curve.trimmed_log_likelihoods[d - 1]).exp();
        if let Some(&prev) = ratios.last() {
            if ratio > prev {
                violations.push(d);
            }
        }
        if ratio > 1.0 {
            kinks.push(d);
        }
        ratios.push(ratio);
    }
    ConvexityReport {
        ratios,
        violations,
        kinks,
    }
}

/// Extrapolates the worst-case error at d = 0 from the first observed
/// slope, assuming a straight decline over `e1` steps, and reports the
/// curvature the curve prefix actually exhibits.
pub fn interpolated_error_estimate(
    curve: &ErrorCurve,
    e1: usize,
) -> Result<InterpolatedEstimate> {
    if curve.epsilons.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two error-curve points to extrapolate, got {}",
            curve.epsilons.len()
        )));
    }
    let slope = curve.epsilons[0] - curve.epsilons[1];
    let estimate = slope * e1 as f64;
    let eps = &curve.epsilons;
    let curvature = if eps.len() < 3 {
        Curvature::Indeterminate
    } else {
        let tol = 1e-12 * eps[0].abs().max(1.0);
        let second_diffs: Vec<f64> = (1..eps.len() - 1)
            .map(|i| eps[i + 1] - 2.0 * eps[i] + eps[i - 1])
            .collect();
        let convex = second_diffs.iter().all(|&x| x >= -tol);
        let concave = second_diffs.iter().all(|&x| x <= tol);
        match (convex, concave) {
            (true, _) => Curvature::Convex,
            (false, true) => Curvature::Concave,
            (false, false) => Curvature::Mixed,
        }
    };
    Ok(InterpolatedEstimate {
        estimate,
        curvature,
    })
}

/// Upper bound on the linear probability mass lost to first-exchange
/// trimming at `d`, returned in log space: 2^(e1 − d) times the smallest
/// joint mass (first period included, continuation exact) of any retained
/// first-exchange branch. The bound is valid where [`selection_check`]
/// reports the retained set dominating AND the live discarded count stays
/// within the 2^(e1 − d) multiplier: up to 2^e1 − 2^d branches are
/// discarded, so for 1 ≤ d ≤ e1 − 2 the multiplier can undercount them
/// and the true loss can exceed the bound even under ordered retention.
/// Where retention is ordered, the live discarded count times the
/// smallest retained mass always caps the loss; both counts come with a
/// [`SelectionReport`]. With more than one trimmable exchange the total
/// loss also has later-exchange components this bound does not see.
pub fn error_bound(
    village: &Village,
    theta: ParamPoint,
    d: usize,
    budget: u128,
) -> Result<f64> {
    if village.periods() < 3 {
        return Err(Error::InsufficientData(
            "the error bound needs a trimmable exchange, so at least 3 periods".into(),
        ));
    }
    ensure_within_budget(village, None, budget)?;
    let start = match crate::scenario::initial_state(village, theta) {
        Some(s) => s,
        None => return Ok(f64::NEG_INFINITY),
    };
    let piis = eligible_piis(village, &start, theta);
    let e1 = piis.len();
    if d > e1 {
        return Err(Error::Parameter(format!(
            "trimming is inactive at d = {d}: only {e1} PIIs at the first exchange"
        )));
    }
    let plan = trim_select(piis, theta, Some(d));
    let (children, dead) = expand_exchange(village, &start, &plan, theta)?;
    // A retained branch that died still counts: its mass is zero, so the
    // smallest retained mass — and with it the bound — collapses.
    let mut min_mass = if dead > 0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    for child in children {
        let eval = evaluate_from(village, theta, child, None)?;
        min_mass = min_mass.min(eval.log_likelihood);
    }
    if min_mass == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((e1 - d) as f64 * std::f64::consts::LN_2 + min_mass)
}

/// Outcome of checking the first-exchange retention property at one
/// parameter point: whether every branch the trimming plan keeps carries
/// at least as much exactly-continued joint mass as every branch it
/// discards. [`error_bound`] needs this to hold and its multiplier to
/// cover `omitted_live`; the product of `omitted_live` and
/// `retained_min_log_mass` caps the linear loss whenever `holds` is set.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SelectionReport {
    /// Smallest joint log-mass among the retained branches; `-inf` when a
    /// retained branch is impossible.
    pub retained_min_log_mass: f64,
    /// Largest joint log-mass among the discarded branches; `-inf` when
    /// nothing live is discarded.
    pub omitted_max_log_mass: f64,
    /// Live retained branches.
    pub retained_live: usize,
    /// Live discarded branches.
    pub omitted_live: usize,
    /// Retained branches that turned out impossible.
    pub dead_retained: u64,
    /// Whether the retained set dominates the discarded set.
    pub holds: bool,
}

/// Checks whether the first-exchange trimming plan at `d` keeps exactly
/// the heaviest branches: every retained branch's exactly-continued joint
/// mass must be at least every discarded branch's. The per-agent defaults
/// are chosen from single-factor odds, so aggregate masses can disagree
/// with them; this enumerates all 2^e1 first-exchange branches and
/// compares the two sides directly.
pub fn selection_check(
    village: &Village,
    theta: ParamPoint,
    d: usize,
    budget: u128,
) -> Result<SelectionReport> {
    if village.periods() < 3 {
        return Err(Error::InsufficientData(
            "the retention check needs a trimmable exchange, so at least 3 periods".into(),
        ));
    }
    ensure_within_budget(village, None, budget)?;
    let trivial = SelectionReport {
        retained_min_log_mass: f64::NEG_INFINITY,
        omitted_max_log_mass: f64::NEG_INFINITY,
        retained_live: 0,
        omitted_live: 0,
        dead_retained: 0,
        holds: true,
    };
    let start = match crate::scenario::initial_state(village, theta) {
        Some(s) => s,
        None => return Ok(trivial),
    };
    let piis = eligible_piis(village, &start, theta);
    let e1 = piis.len();
    if d > e1 {
        return Err(Error::Parameter(format!(
            "trimming is inactive at d = {d}: only {e1} PIIs at the first exchange"
        )));
    }
    let budget_plan = trim_select(piis.clone(), theta, Some(d));
    let fixed: Vec<(usize, bool)> = budget_plan
        .slots()
        .iter()
        .filter(|s| !s.free)
        .map(|s| (s.individual, s.default_informed))
        .collect();
    let full_plan = trim_select(piis, theta, None);
    let (children, _dead) = expand_exchange(village, &start, &full_plan, theta)?;
    let mut retained_min = f64::INFINITY;
    let mut omitted_max = f64::NEG_INFINITY;
    let mut retained_live = 0usize;
    let mut omitted_live = 0usize;
    for child in children {
        let retained = fixed
            .iter()
            .all(|&(i, informed)| child.informed.get(i) == informed);
        let mass = evaluate_from(village, theta, child, None)?.log_likelihood;
        if retained {
            retained_live += 1;
            retained_min = retained_min.min(mass);
        } else {
            omitted_live += 1;
            omitted_max = omitted_max.max(mass);
        }
    }
    // A retained branch that never surfaced was impossible; its zero mass
    // is still the retained minimum.
    let dead_retained = (1u64 << budget_plan.free_count()) - retained_live as u64;
    if dead_retained > 0 {
        retained_min = f64::NEG_INFINITY;
    }
    Ok(SelectionReport {
        retained_min_log_mass: retained_min,
        omitted_max_log_mass: omitted_max,
        retained_live,
        omitted_live,
        dead_retained,
        holds: retained_min >= omitted_max,
    })
}

/// ip-betweenness: for each intermediate agent j, the sum over adjacent
/// final agents k of 1/(number of intermediates adjacent to k). Values
/// above 1 mean j dominates its finals' access to the information; values
/// below 1 mean shared access. Finals with no intermediate neighbor are
/// excluded (reported and logged).
pub fn ip_betweenness(
    net: &VillageNetwork,
    seeds: &SeedVector,
    intermediates: &[usize],
    finals: &[usize],
) -> Result<BetweennessReport> {
    let is_ip_adjacent =
        |i: usize| net.informed_neighbor_count(i, seeds.bits()) > 0;
    for &j in intermediates {
        if !is_ip_adjacent(j) {
            return Err(Error::Parameter(format!(
                "intermediate agent {j} is not adjacent to any injection point"
            )));
        }
    }
    let inter_set: std::collections::HashSet<usize> = intermediates.iter().copied().collect();
    let mut excluded = Vec::new();
    let mut usable_finals = Vec::new();
    for &k in finals {
        if is_ip_adjacent(k) {
            return Err(Error::Parameter(format!(
                "final agent {k} is adjacent to an injection point"
            )));
        }
        let denom = net
            .row(k)
            .iter_ones()
            .filter(|i| inter_set.contains(i))
            .count();
        if denom == 0 {
            log::warn!("final agent {k} has no intermediate neighbor; excluded from betweenness");
            excluded.push(k);
        } else {
            usable_finals.push((k, denom));
        }
    }
    let values = intermediates
        .iter()
        .map(|&j| {
            let b: f64 = usable_finals
                .iter()
                .filter(|(k, _)| net.is_edge(j, *k))
                .map(|&(_, denom)| 1.0 / denom as f64)
                .sum();
            (j, b)
        })
        .collect();
    Ok(BetweennessReport {
        values,
        excluded_finals: excluded,
    })
}

/// The first-exchange branch state with the shared first-period factor
/// normalized away, so audited masses depend only on the choices under
/// comparison. `None` when the first period alone is impossible — the
/// audit then has nothing to compare.
fn initial_branch_state(village: &Village, theta: ParamPoint) -> Option<ExchangeState> {
    for i in 0..village.n() {
        if crate::model::initial_outcome_density(
            village.outcomes.participation(i, 1),
            village.seeds.is_ip(i),
            theta.p,
        ) == 0.0
        {
            return None;
        }
    }
    Some(ExchangeState {
        exchange: 1,
        informed: village.seeds.bits().clone(),
        log_prob: 0.0,
    })
}

/// Total exactly-continued log-mass of all branches the given
/// first-exchange plan retains.
fn plan_mass(village: &Village, theta: ParamPoint, start: &ExchangeState, plan: &TrimPlan) -> Result<f64> {
    let (children, _dead) = expand_exchange(village, start, plan, theta)?;
    let mut logs = Vec::with_capacity(children.len());
    for child in children {
        let eval = evaluate_from(village, theta, child, None)?;
        if eval.log_likelihood > f64::NEG_INFINITY {
            logs.push(eval.log_likelihood);
        }
    }
    Ok(log_sum_exp(&mut logs))
}

/// Audits every first-exchange trimming decision at the given parameter
/// point: each trimmed agent's fixed status is priced against flipping it
/// alone and against flipping its whole same-default group jointly, with
/// exact continuation and all other choices held fixed. Mass comparisons
/// ignore the shared first-period factor. Also attaches the local
/// topology quantities that drive systematic mistakes.
pub fn mistake_audit(
    village: &Village,
    theta: ParamPoint,
    d: usize,
    budget: u128,
) -> Result<Vec<SubgraphAudit>> {
    if village.periods() < 3 {
        return Err(Error::InsufficientData(
            "the trimming audit needs a trimmable exchange, so at least 3 periods".into(),
        ));
    }
    ensure_within_budget(village, None, budget)?;
    let start = match initial_branch_state(village, theta) {
        Some(s) => s,
        None => return Ok(Vec::new()),
    };
    let piis = eligible_piis(village, &start, theta);
    let intermediates: Vec<usize> = piis.iter().map(|e| e.individual).collect();
    let finals: Vec<usize> = (0..village.n())
        .filter(|&k| {
            !village.seeds.is_ip(k)
                && village
                    .network
                    .informed_neighbor_count(k, village.seeds.bits())
                    == 0
                && village
                    .network
                    .row(k)
                    .iter_ones()
                    .any(|j| intermediates.contains(&j))
        })
        .collect();
    let betweenness = ip_betweenness(&village.network, &village.seeds, &intermediates, &finals)?;
    let b_of: std::collections::HashMap<usize, f64> =
        betweenness.values.iter().copied().collect();

    let plan = trim_select(piis, theta, Some(d));
    let chosen_mass = plan_mass(village, theta, &start, &plan)?;
    let trimmed: Vec<(usize, bool)> = plan
        .slots()
        .iter()
        .filter(|s| !s.free)
        .map(|s| (s.individual, s.default_informed))
        .collect();
    // Joint flips of each same-default group, evaluated once.
    let mut group_mass: std::collections::HashMap<bool, f64> = std::collections::HashMap::new();
    for default_informed in [false, true] {
        let members: Vec<usize> = trimmed
            .iter()
            .filter(|&&(_, def)| def == default_informed)
            .map(|&(i, _)| i)
            .collect();
        if members.len() >= 2 {
            let flipped = plan.with_flipped_defaults(&members);
            group_mass.insert(default_informed, plan_mass(village, theta, &start, &flipped)?);
        }
    }
    let mut audits = Vec::new();
    for &(individual, default_informed) in &trimmed {
        let single = plan.with_flipped_defaults(&[individual]);
        let flipped_log_mass = plan_mass(village, theta, &start, &single)?;
        let group_flipped_log_mass = group_mass.get(&default_informed).copied();
        let best_alternative = group_flipped_log_mass
            .unwrap_or(f64::NEG_INFINITY)
            .max(flipped_log_mass);
        let verdict = if best_alternative > chosen_mass {
            if default_informed {
                Verdict::Mistake1
            } else {
                Verdict::Mistake2
            }
        } else {
            Verdict::Optimal
        };
        let in_degree = village
            .network
            .informed_neighbor_count(individual, village.seeds.bits());
        let out_degree = finals
            .iter()
            .filter(|&&k| village.network.is_edge(individual, k))
            .count();
        audits.push(SubgraphAudit {
            individual,
            betweenness: b_of.get(&individual).copied().unwrap_or(0.0),
            in_degree,
            out_degree,
            default_informed,
            chosen_log_mass: chosen_mass,
            flipped_log_mass,
            group_flipped_log_mass,
            verdict,
        });
    }
    Ok(audits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OutcomeMatrix, SeedVector, VillageNetwork};
    use crate::scenario::village_log_likelihood;

    const BUDGET: u128 = 1 << 24;

    fn graph1_village() -> Village {
        let net = VillageNetwork::from_edges(
            7,
            &[(0, 1), (0, 2), (1, 3), (2, 4), (2, 3), (3, 5), (4, 5)],
        )
        .unwrap();
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
        Village::new("graph1", net, seeds, OutcomeMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    /// Two injection points feeding one intermediate agent who alone
    /// reaches four final agents.
    fn funnel_village() -> Village {
        let net = VillageNetwork::from_edges(
            7,
            &[(0, 2), (1, 2), (2, 3), (2, 4), (2, 5), (2, 6)],
        )
        .unwrap();
        let seeds = SeedVector::from_flags(&[1, 1, 0, 0, 0, 0, 0]).unwrap();
        let rows = vec![
            vec![1, 1, 1],
            vec![1, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
        ];
        Village::new("funnel", net, seeds, OutcomeMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    /// Three injection points, each feeding its own intermediate agent;
    /// the intermediates share a single final agent.
    fn braid_village() -> Village {
        let net = VillageNetwork::from_edges(
            7,
            &[(0, 3), (1, 4), (2, 5), (3, 6), (4, 6), (5, 6)],
        )
        .unwrap();
        let seeds = SeedVector::from_flags(&[1, 1, 1, 0, 0, 0, 0]).unwrap();
        let rows = vec![
            vec![1, 1, 1],
            vec![1, 1, 1],
            vec![1, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
        ];
        Village::new("braid", net, seeds, OutcomeMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    fn star_village() -> Village {
        let net =
            VillageNetwork::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0, 0, 0, 0]).unwrap();
        let rows = vec![
            vec![1, 1, 1],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
            vec![0, 0, 0],
        ];
        Village::new("star", net, seeds, OutcomeMatrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn curve_matches_direct_evaluations_and_ends_at_zero() {
        let v = graph1_village();
        let theta = ParamPoint::new(0.4, 0.55).unwrap();
        let curve = error_curve(&v, theta, usize::MAX, BUDGET).unwrap();
        for (d, &trimmed) in curve.trimmed_log_likelihoods.iter().enumerate() {
            let direct = village_log_likelihood(&v, theta, Some(d))
                .unwrap()
                .log_likelihood;
            assert_eq!(trimmed.to_bits(), direct.to_bits());
        }
        for w in curve.epsilons.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for &e in &curve.epsilons {
            assert!(e >= -1e-12);
        }
        assert_eq!(*curve.epsilons.last().unwrap(), 0.0);

        // Budget refusal carries the estimate.
        assert!(matches!(
            error_curve(&v, theta, usize::MAX, 2),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn one_pii_curve_agrees_with_hand_computation() {
        let net = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[vec![1, 1, 1], vec![0, 0, 0]]).unwrap();
        let v = Village::new("pair3", net, seeds, y).unwrap();
        let theta = ParamPoint::new(0.5, 0.5).unwrap();
        let curve = error_curve(&v, theta, usize::MAX, BUDGET).unwrap();
        // Exchange 1 has one PII at r = 0.5 ≤ r* = 2/3, so d = 0 keeps the
        // uninformed branch: 0.5 · (1 − 0.25) after the first-period
        // factor 0.5. Exactly: trimmed = 0.5·0.5·0.75, exact adds the
        // informed branch 0.5·0.25·1.
        let retained = 0.5 * 0.5 * 0.75f64;
        let exact = retained + 0.5 * 0.25;
        assert!((curve.trimmed_log_likelihoods[0] - retained.ln()).abs() < 1e-12);
        assert!((curve.exact_log_likelihood - exact.ln()).abs() < 1e-12);
        assert!((curve.epsilons[0] - (exact.ln() - retained.ln())).abs() < 1e-12);
        assert_eq!(curve.epsilons.len(), 2);
        assert_eq!(curve.epsilons[1], 0.0);
    }

    #[test]
    fn slope_identity_holds_on_computed_curves() {
        for (village, p, q) in [
            (graph1_village(), 0.4, 0.55),
            (graph1_village(), 0.7, 0.2),
            (star_village(), 0.5, 0.5),
            (funnel_village(), 0.5, 0.5),
        ] {
            let theta = ParamPoint::new(p, q).unwrap();
            let curve = error_curve(&village, theta, usize::MAX, BUDGET).unwrap();
            let report = slope_identity_check(&curve);
            assert!(
                report.max_discrepancy <= 1e-10,
                "{} at ({p}, {q}): {}",
                village.label,
                report.max_discrepancy
            );
        }
    }

    #[test]
    fn convexity_report_flags_constructed_violation() {
        // Masses 0.5, 0.01, then 0.3: the third step retains more mass
        // relative to what came before than the second did.
        let masses = [0.5f64, 0.01, 0.3];
        let mut trimmed = Vec::new();
        let mut total = 0.0;
        for m in masses {
            total += m;
            trimmed.push(total.ln());
        }
        let exact = total.ln();
        let curve = ErrorCurve {
            label: "synthetic".into(),
            theta: ParamPoint::new(0.5, 0.5).unwrap(),
            exact_log_likelihood: exact,
            epsilons: trimmed.iter().map(|t| exact - t).collect(),
            trimmed_log_likelihoods: trimmed,
            new_mass_logs: masses.iter().map(|m| m.ln()).collect(),
        };
        let report = convexity_report(&curve);
        assert_eq!(report.violations, vec![2]);
        assert!(report.kinks.is_empty());

        // A step retaining more than everything before it is a kink, and
        // the slope there exceeds log 2.
        let star = star_village();
        let theta = ParamPoint::new(0.5, 0.9).unwrap();
        let curve = error_curve(&star, theta, usize::MAX, BUDGET).unwrap();
        let report = convexity_report(&curve);
        for (i, &ratio) in report.ratios.iter().enumerate() {
            let d = i + 1;
            let slope = curve.epsilons[d - 1] - curve.epsilons[d];
            assert_eq!(ratio > 1.0, slope > std::f64::consts::LN_2 + 1e-12);
            assert_eq!(report.kinks.contains(&d), ratio > 1.0);
        }
    }

    #[test]
    fn interpolation_examples() {
        let linear = ErrorCurve {
            label: "linear".into(),
            theta: ParamPoint::new(0.5, 0.5).unwrap(),
            exact_log_likelihood: 0.0,
            trimmed_log_likelihoods: vec![-0.4, -0.2, 0.0],
            epsilons: vec![0.4, 0.2, 0.0],
            new_mass_logs: vec![0.0, 0.0, 0.0],
        };
        let est = interpolated_error_estimate(&linear, 2).unwrap();
        assert!((est.estimate - 0.4).abs() < 1e-15);

        let single = ErrorCurve {
            epsilons: vec![0.4],
            ..linear.clone()
        };
        assert!(matches!(
            interpolated_error_estimate(&single, 2),
            Err(Error::InsufficientData(_))
        ));

        // On a star all PIIs appear at the first exchange, so a convex
        // curve extrapolated linearly over e1 steps overestimates ε_0.
        let star = star_village();
        let theta = ParamPoint::new(0.3, 0.4).unwrap();
        let curve = error_curve(&star, theta, usize::MAX, BUDGET).unwrap();
        let start = ExchangeState {
            exchange: 1,
            informed: star.seeds.bits().clone(),
            log_prob: 0.0,
        };
        let e1 = eligible_piis(&star, &start, theta).len();
        assert_eq!(e1, 4);
        let est = interpolated_error_estimate(&curve, e1).unwrap();
        if est.curvature == Curvature::Convex {
            assert!(est.estimate >= curve.epsilons[0] - 1e-12);
        }
    }

    #[test]
    fn bound_at_full_freedom_is_the_smallest_branch() {
        let net = VillageNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0]).unwrap();
        let y = OutcomeMatrix::from_rows(&[vec![1, 1, 1], vec![0, 0, 0]]).unwrap();
        let v = Village::new("pair3", net, seeds, y).unwrap();
        let theta = ParamPoint::new(0.5, 0.5).unwrap();
        // Branch masses: informed 0.5·0.25·1 = 0.125, uninformed
        // 0.5·0.5·0.75 = 0.1875. At d = e1 = 1 the factor is 2⁰.
        let bound = error_bound(&v, theta, 1, BUDGET).unwrap();
        assert!((bound - 0.125f64.ln()).abs() < 1e-12);
        assert!(error_bound(&v, theta, 2, BUDGET).is_err());

        let two_periods = Village::new(
            "pair2",
            VillageNetwork::from_edges(2, &[(0, 1)]).unwrap(),
            SeedVector::from_flags(&[1, 0]).unwrap(),
            OutcomeMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap(),
        )
        .unwrap();
        assert!(error_bound(&two_periods, theta, 0, BUDGET).is_err());
    }

    #[test]
    fn bound_dominates_error_under_its_premises() {
        for (village, p, q) in [
            (star_village(), 0.01, 0.99),
            (star_village(), 0.3, 0.4),
            (star_village(), 0.5, 0.5),
            (star_village(), 0.5, 0.9),
            (funnel_village(), 0.5, 0.5),
            (braid_village(), 0.4, 0.6),
        ] {
            let theta = ParamPoint::new(p, q).unwrap();
            let curve = error_curve(&village, theta, usize::MAX, BUDGET).unwrap();
            let e1 = curve.trimmed_log_likelihoods.len() - 1;
            for d in 0..=e1 {
                let sel = selection_check(&village, theta, d, BUDGET).unwrap();
                if !sel.holds || sel.retained_live == 0 {
                    continue;
                }
                let linear_error = curve.exact_log_likelihood.exp()
                    - curve.trimmed_log_likelihoods[d].exp();
                let cap = sel.omitted_live as f64 * sel.retained_min_log_mass.exp();
                assert!(
                    linear_error <= cap * (1.0 + 1e-9) + 1e-15,
                    "{} at ({p}, {q}), d = {d}: {linear_error} vs cap {cap}",
                    village.label
                );
                if sel.omitted_live as u128 > 1u128 << (e1 - d) {
                    continue;
                }
                let bound = error_bound(&village, theta, d, BUDGET).unwrap();
                assert!(
                    linear_error <= bound.exp() + 1e-15,
                    "{} at ({p}, {q}), d = {d}: {linear_error} vs {}",
                    village.label,
                    bound.exp()
                );
            }
        }
    }

    /// Ordered retention alone does not rescue the bound: on the star at
    /// p = q = 0.5 every leaf defaults to uninformed, d = 1 keeps the two
    /// branches of one free leaf, and the fourteen discarded branches tie
    /// or fall below both — yet their count exceeds the multiplier
    /// 2^(4−1) = 8, and the true loss lands above the bound while staying
    /// under the count-times-smallest-retained cap.
    #[test]
    fn ordered_retention_does_not_imply_the_bound() {
        let star = star_village();
        let theta = ParamPoint::new(0.5, 0.5).unwrap();
        let audits = mistake_audit(&star, theta, 1, BUDGET).unwrap();
        assert!(audits.iter().all(|a| a.verdict == Verdict::Optimal));

        let sel = selection_check(&star, theta, 1, BUDGET).unwrap();
        assert!(sel.holds);
        assert_eq!((sel.retained_live, sel.omitted_live), (2, 14));
        assert_eq!(sel.dead_retained, 0);
        // Each leaf contributes a = r(1−p) = 0.25 informed or
        // b·(1 − pr) = 0.5·0.75 uninformed; the hub's first period is 0.5.
        let retained_min = 0.5 * 0.375f64.powi(3) * 0.25;
        assert!((sel.retained_min_log_mass - retained_min.ln()).abs() < 1e-12);
        assert!((sel.omitted_max_log_mass - retained_min.ln()).abs() < 1e-12);

        let curve = error_curve(&star, theta, usize::MAX, BUDGET).unwrap();
        let exact = curve.exact_log_likelihood.exp();
        let trimmed = curve.trimmed_log_likelihoods[1].exp();
        assert!((exact - 0.5 * 0.625f64.powi(4)).abs() < 1e-15);
        assert!((trimmed - 0.5 * 0.375f64.powi(3) * 0.625).abs() < 1e-15);
        let linear_error = exact - trimmed;
        let bound = error_bound(&star, theta, 1, BUDGET).unwrap().exp();
        assert!((bound - 8.0 * retained_min).abs() < 1e-12);
        assert!(linear_error > bound + 1e-3);
        assert!(linear_error <= 14.0 * retained_min);
    }

    /// The per-agent defaults compare single factors, but retention is a
    /// property of whole branches: on a star the kept set at d = 3 pairs
    /// the fixed agent's heavy default with three light free choices,
    /// which weighs less than the discarded heavy-heavy-heavy-light
    /// combination. Every audit is clean, yet the bound genuinely fails.
    #[test]
    fn clean_audits_do_not_imply_the_bound() {
        let star = star_village();
        let theta = ParamPoint::new(0.01, 0.99).unwrap();
        for d in [0, 3] {
            let audits = mistake_audit(&star, theta, d, BUDGET).unwrap();
            assert!(!audits.is_empty());
            assert!(audits.iter().all(|a| a.verdict == Verdict::Optimal));
        }

        // r = 0.99, a = r(1−p) = 0.9801, b = 1−r = 0.01; a leaf kept
        // uninformed folds 1 − pr = 0.9901 at the last exchange. With the
        // first-period factor 0.01, the heaviest discarded branch at
        // d = 3 outweighs the lightest retained one by about 9800.
        let sel = selection_check(&star, theta, 3, BUDGET).unwrap();
        assert!(!sel.holds);
        assert_eq!((sel.retained_live, sel.omitted_live), (8, 8));
        assert_eq!(sel.dead_retained, 0);
        let retained_min = 0.01 * 0.9801 * (0.01f64 * 0.9901).powi(3);
        let omitted_max = 0.01 * (0.01 * 0.9901) * 0.9801f64.powi(3);
        assert!((sel.retained_min_log_mass - retained_min.ln()).abs() < 1e-9);
        assert!((sel.omitted_max_log_mass - omitted_max.ln()).abs() < 1e-9);

        let curve = error_curve(&star, theta, usize::MAX, BUDGET).unwrap();
        let bound = error_bound(&star, theta, 3, BUDGET).unwrap();
        let linear_error =
            curve.exact_log_likelihood.exp() - curve.trimmed_log_likelihoods[3].exp();
        assert!(linear_error > bound.exp() * 10.0);

        // Retention trivially holds at full freedom, where nothing is
        // discarded; the bound then caps a zero error.
        let sel = selection_check(&star, theta, 4, BUDGET).unwrap();
        assert!(sel.holds);
        assert_eq!(sel.omitted_live, 0);
        assert_eq!(sel.omitted_max_log_mass, f64::NEG_INFINITY);
    }

    /// With a single potentially informed agent the retention property and
    /// the audit coincide: one kept branch against one discarded.
    #[test]
    fn retention_check_matches_audit_on_single_agent_villages() {
        let funnel = funnel_village();
        let theta = ParamPoint::new(0.5, 0.5).unwrap();
        let audits = mistake_audit(&funnel, theta, 0, BUDGET).unwrap();
        assert_eq!(audits.len(), 1);
        assert_eq!(audits[0].verdict, Verdict::Mistake1);
        let sel = selection_check(&funnel, theta, 0, BUDGET).unwrap();
        assert!(!sel.holds);
        // First period: p² = 0.25. Kept default A: the intermediate opts
        // out informed, a = 0.75·0.5, and the four finals each fold
        // 1 − pr = 0.75. Discarded B: b = 0.25, the finals stay out of
        // reach, and the intermediate itself folds 1 − 0.5·0.75 = 0.625.
        let kept = 0.25 * 0.375 * 0.75f64.powi(4);
        let discarded = 0.25 * 0.25 * 0.625f64;
        assert!((sel.retained_min_log_mass - kept.ln()).abs() < 1e-12);
        assert!((sel.omitted_max_log_mass - discarded.ln()).abs() < 1e-12);

        // The factor-of-two headroom keeps the bound valid here even
        // though retention fails: the discarded mass is under twice the
        // kept mass. The check is still the only guarantee.
        let curve = error_curve(&funnel, theta, usize::MAX, BUDGET).unwrap();
        let bound = error_bound(&funnel, theta, 0, BUDGET).unwrap();
        let linear_error =
            curve.exact_log_likelihood.exp() - curve.trimmed_log_likelihoods[0].exp();
        assert!(linear_error <= bound.exp());

        assert!(matches!(
            selection_check(&funnel, theta, 2, BUDGET),
            Err(Error::Parameter(_))
        ));
        let two_periods = Village::new(
            "pair2",
            VillageNetwork::from_edges(2, &[(0, 1)]).unwrap(),
            SeedVector::from_flags(&[1, 0]).unwrap(),
            OutcomeMatrix::from_rows(&[vec![1, 1], vec![0, 0]]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            selection_check(&two_periods, theta, 0, BUDGET),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn betweenness_on_the_two_reference_subgraphs() {
        let funnel = funnel_village();
        let report = ip_betweenness(
            &funnel.network,
            &funnel.seeds,
            &[2],
            &[3, 4, 5, 6],
        )
        .unwrap();
        assert_eq!(report.values, vec![(2, 4.0)]);
        assert!(report.excluded_finals.is_empty());

        let braid = braid_village();
        let report = ip_betweenness(
            &braid.network,
            &braid.seeds,
            &[3, 4, 5],
            &[6],
        )
        .unwrap();
        for &(_, b) in &report.values {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }

        // Single intermediate, single final.
        let net = VillageNetwork::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0, 0]).unwrap();
        let report = ip_betweenness(&net, &seeds, &[1], &[2]).unwrap();
        assert_eq!(report.values, vec![(1, 1.0)]);

        // A final agent with no intermediate neighbor is excluded.
        let net =
            VillageNetwork::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let seeds = SeedVector::from_flags(&[1, 0, 0, 0]).unwrap();
        let report = ip_betweenness(&net, &seeds, &[1], &[2, 3]).unwrap();
        assert_eq!(report.excluded_finals, vec![3]);

        // An intermediate without IP adjacency violates the contract.
        assert!(ip_betweenness(&net, &seeds, &[2], &[3]).is_err());
    }

    #[test]
    fn audit_reproduces_the_funnel_mistake() {
        let v = funnel_village();
        let theta = ParamPoint::new(0.5, 0.5).unwrap();
        let audits = mistake_audit(&v, theta, 0, BUDGET).unwrap();
        assert_eq!(audits.len(), 1);
        let a = &audits[0];
        assert_eq!(a.individual, 2);
        assert!(a.default_informed);
        assert!((a.chosen_log_mass.exp() - 0.11865234375).abs() < 1e-9);
        assert!((a.flipped_log_mass.exp() - 0.15625).abs() < 1e-9);
        assert_eq!(a.verdict, Verdict::Mistake1);
        assert_eq!(a.betweenness, 4.0);
        assert_eq!(a.in_degree, 2);
        assert_eq!(a.out_degree, 4);
        assert!(a.group_flipped_log_mass.is_none());
    }

    #[test]
    fn audit_reproduces_the_braid_mistake_via_group_flip() {
        let v = braid_village();
        let theta = ParamPoint::new(0.4, 0.6).unwrap();
        let audits = mistake_audit(&v, theta, 0, BUDGET).unwrap();
        assert_eq!(audits.len(), 3);
        for a in &audits {
            assert!(!a.default_informed);
            assert!((a.chosen_log_mass.exp() - 0.028094464).abs() < 1e-9);
            // Flipping one agent alone does not pay...
            assert!((a.flipped_log_mass.exp() - 0.0252850176).abs() < 1e-9);
            assert!(a.flipped_log_mass < a.chosen_log_mass);
            // ...but flipping the whole group does.
            let group = a.group_flipped_log_mass.unwrap();
            assert!((group.exp() - 0.0291879936).abs() < 1e-9);
            assert_eq!(a.verdict, Verdict::Mistake2);
            assert!((a.betweenness - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(a.in_degree, 1);
            assert_eq!(a.out_degree, 1);
        }
    }

    #[test]
    fn audit_finds_no_mistakes_far_from_the_threshold() {
        let star = star_village();
        let theta = ParamPoint::new(0.01, 0.99).unwrap();
        let audits = mistake_audit(&star, theta, 0, BUDGET).unwrap();
        assert_eq!(audits.len(), 4);
        assert!(audits.iter().all(|a| a.verdict == Verdict::Optimal));
    }
}
