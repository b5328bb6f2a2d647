//! Numerically stable log-space accumulation.
//!
//! Likelihood contributions are accumulated per information scenario as
//! log-probabilities; combining them requires log-sum-exp. Summation order
//! must not depend on traversal or thread scheduling, so `log_sum_exp`
//! sorts its buffer into a canonical order and uses compensated summation.
//! The same inputs therefore always produce the same bits.

/// Log-sum-exp of a slice of log-values, tolerant of `-inf` entries.
///
/// The slice is sorted (descending) before summation so the result is
/// independent of input order, and the exp terms are added with Neumaier
/// compensation. An empty slice or all `-inf` yields `-inf`.
pub fn log_sum_exp(log_values: &mut [f64]) -> f64 {
    log_values.sort_unstable_by(|a, b| b.partial_cmp(a).expect("NaN in log values"));
    let max = match log_values.first() {
        Some(&m) if m > f64::NEG_INFINITY => m,
        _ => return f64::NEG_INFINITY,
    };
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &lv in log_values.iter() {
        if lv == f64::NEG_INFINITY {
            break;
        }
        let term = (lv - max).exp();
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    max + (sum + comp).ln()
}

/// Compensated (Neumaier) sum of plain values, sorted descending by
/// magnitude first for order independence.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| {
        b.abs()
            .partial_cmp(&a.abs())
            .expect("NaN in summands")
            .then(b.partial_cmp(a).unwrap())
    });
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
