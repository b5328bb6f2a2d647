//! Brute-force reference implementations shared by the integration tests.
//! Everything here works from the public API and first principles — no
//! traversal machinery from the engine — so agreement with the engine is
//! evidence, not tautology.

use difftrim_core::{
    draw_ip, erdos_renyi, scenario_probability, simulate_adoption, BitVec, InfoScenarioRef,
    KeyedRng, ParamPoint, Village,
};

/// Every absorbing information spread over the village's horizon: each
/// exchange may inform any subset of the uninformed individuals that have
/// at least one informed neighbor. Spreads inconsistent with the observed
/// outcomes are included; they price to zero.
pub fn all_spreads(v: &Village) -> Vec<Vec<BitVec>> {
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
    assert!(frontier.len() < 64, "oracle only handles small frontiers");
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

/// Exact log-likelihood as a plain sum of per-spread joint probabilities.
pub fn oracle_log_likelihood(v: &Village, theta: ParamPoint) -> f64 {
    all_spreads(v)
        .iter()
        .map(|cols| scenario_probability(v, theta, &InfoScenarioRef::new(cols)))
        .sum::<f64>()
        .ln()
}

/// Number of enumerable spreads, unconditional on the outcomes.
pub fn oracle_spread_count(v: &Village) -> u128 {
    all_spreads(v).len() as u128
}

/// A random village whose outcomes were generated by the model itself, so
/// they are consistent by construction.
pub fn random_village(
    label: &str,
    n: usize,
    periods: usize,
    edge_prob: f64,
    theta0: ParamPoint,
    seed: u64,
) -> Village {
    let rng = KeyedRng::new(seed);
    let net = (0u64..)
        .map(|attempt| erdos_renyi(n, edge_prob, rng.absorb(attempt)).unwrap())
        .find(|net| (0..n).any(|i| net.degree(i) > 0))
        .unwrap();
    let s0 = draw_ip(n, rng.absorb(0xA11CE)).unwrap();
    let (outcomes, _) =
        simulate_adoption(&net, &s0, theta0.p, theta0.q, periods, rng.absorb(0xB0B)).unwrap();
    Village::new(label, net, s0, outcomes).unwrap()
}
