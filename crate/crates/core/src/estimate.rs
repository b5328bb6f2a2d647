//! Sample-level likelihood surfaces, grid-search maximization, LR
//! confidence sets, and the two-period restricted-horizon baseline.
//!
//! Villages are independent, so the sample log-likelihood is the sum of
//! village log-likelihoods and every (village, grid point) pair is an
//! independent task. Grid points are evaluated in parallel; the gather
//! that assembles surfaces and sums across villages is sequential and
//! index-ordered, so surfaces are bit-identical no matter how many
//! workers run.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{initial_outcome_density, reception_probabilities, ParamPoint, Village};
use crate::scenario::village_log_likelihood;

/// Rectangular product grid over candidate (p, q) values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    p_values: Vec<f64>,
    q_values: Vec<f64>,
}

impl Grid {
    /// Builds a grid from explicit axes. Axes must be non-empty, strictly
    /// increasing, and within the closed unit interval; the default
    /// constructors stay strictly inside (0, 1) to avoid degenerate
    /// densities, but explicit boundary values are accepted here.
    pub fn new(p_values: Vec<f64>, q_values: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("p", &p_values), ("q", &q_values)] {
            if axis.is_empty() {
                return Err(Error::Parameter(format!("empty {name} axis")));
            }
            for w in axis.windows(2) {
                if w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less) {
                    return Err(Error::Parameter(format!(
                        "{name} axis must be strictly increasing, got {} then {}",
                        w[0], w[1]
                    )));
                }
            }
            if axis[0] < 0.0 || *axis.last().expect("non-empty") > 1.0 {
                return Err(Error::Parameter(format!(
                    "{name} axis must lie within [0, 1]"
                )));
            }
        }
        Ok(Grid { p_values, q_values })
    }

    /// The default 99×99 grid: both axes run 0.01, 0.02, ..., 0.99.
    pub fn default_full() -> Self {
        let axis: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        Grid {
            p_values: axis.clone(),
            q_values: axis,
        }
    }

    /// A uniform interior grid with the given step on both axes:
    /// step, 2·step, ... strictly below 1.
    pub fn uniform(step: f64) -> Result<Self> {
        if !(step > 0.0 && step < 0.5) {
            return Err(Error::Parameter(format!(
                "grid step must be in (0, 0.5), got {step}"
            )));
        }
        let mut axis = Vec::new();
        let mut k = 1usize;
        loop {
            let v = k as f64 * step;
            if v >= 1.0 - 1e-12 {
                break;
            }
            axis.push(v);
            k += 1;
        }
        Grid::new(axis.clone(), axis)
    }

    /// Restricts the grid to the values inside the given inclusive
    /// rectangle, keeping the original spacing.
    pub fn sub_rectangle(
        &self,
        p_range: (f64, f64),
        q_range: (f64, f64),
    ) -> Result<Grid> {
        let take = |axis: &[f64], (lo, hi): (f64, f64)| -> Vec<f64> {
            axis.iter().copied().filter(|v| *v >= lo && *v <= hi).collect()
        };
        Grid::new(
            take(&self.p_values, p_range),
            take(&self.q_values, q_range),
        )
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q_values
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.p_values.len() * self.q_values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index: p varies slowest.
    pub fn index(&self, ip: usize, iq: usize) -> usize {
        ip * self.q_values.len() + iq
    }

    pub fn point(&self, ip: usize, iq: usize) -> ParamPoint {
        ParamPoint::new(self.p_values[ip], self.q_values[iq])
            .expect("grid axes validated at construction")
    }

    /// All (ip, iq, point) triples in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize, ParamPoint)> + '_ {
        (0..self.p_values.len()).flat_map(move |ip| {
            (0..self.q_values.len()).map(move |iq| (ip, iq, self.point(ip, iq)))
        })
    }
}

/// Which likelihood a surface or estimate is based on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", content = "d", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Scenario-tree evaluation with at most `d` free PIIs per exchange.
    Trimmed(usize),
    /// Untrimmed scenario-tree evaluation.
    Exact,
    /// The restricted-horizon baseline using only the first two periods.
    TwoPeriod,
}

/// Sample log-likelihood evaluated at every grid point. `-inf` values are
/// kept (they mark parameter points where the data are impossible).
#[derive(Clone, Debug)]
pub struct LikelihoodSurface {
    pub grid: Grid,
    pub estimator: EstimatorKind,
    /// Row-major (p slowest) log-likelihood values.
    pub values: Vec<f64>,
    /// Row-major total dead-branch counts across villages.
    pub dead_branches: Vec<u64>,
}

impl LikelihoodSurface {
    pub fn value(&self, ip: usize, iq: usize) -> f64 {
        self.values[self.grid.index(ip, iq)]
    }

    /// Argmax grid indices; ties break to the lexicographically smallest
    /// (p, q). `None` when every point is `-inf`.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (ip, iq, _) in self.grid.points() {
            let v = self.value(ip, iq);
            if v == f64::NEG_INFINITY {
                continue;
            }
            match best {
                Some((_, bv)) if bv >= v => {}
                _ => best = Some(((ip, iq), v)),
            }
        }
        best.map(|(idx, _)| idx)
    }
}

/// One LR confidence set: every grid point whose LR statistic against the
/// argmax is at most the chi-square cutoff.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceSet {
    pub level: f64,
    pub cutoff: f64,
    pub points: Vec<ParamPoint>,
}

/// One grid-search estimate with its confidence sets.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EstimateRecord {
    pub estimator: EstimatorKind,
    pub p: f64,
    pub q: f64,
    pub log_likelihood: f64,
    /// True when the argmax lies on the grid border.
    pub boundary: bool,
    pub confidence_sets: Vec<ConfidenceSet>,
}

/// Output of [`estimate_sequence`]: one record and one surface per
/// estimator, in the order evaluated.
#[derive(Clone, Debug)]
pub struct SequenceResult {
    pub records: Vec<EstimateRecord>,
    pub surfaces: Vec<LikelihoodSurface>,
}

/// Chi-square quantile with 2 degrees of freedom, by exact inversion of
/// the regularized incomplete gamma function (which reduces to
/// `1 - exp(-x/2)` at this shape).
pub fn lr_cutoff(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    Ok(-2.0 * (1.0 - level).ln())
}

/// Sample log-likelihood: the sum over villages of the village
/// log-likelihood, each village evaluated at the smaller of `d` and its
/// own maximal PII count (capping at `d` enforces exactly that). `None`
/// evaluates every village exactly.
pub fn sample_log_likelihood(
    villages: &[Village],
    params: ParamPoint,
    d: Option<usize>,
) -> Result<f64> {
    let mut total = 0.0;
    for v in villages {
        total += village_log_likelihood(v, params, d)?.log_likelihood;
    }
    Ok(total)
}

/// One village's surface: per-point log-likelihoods and dead-branch
/// counts, plus the largest eligible-PII count seen anywhere on the grid.
fn village_surface(
    village: &Village,
    grid: &Grid,
    d: Option<usize>,
) -> Result<(Vec<f64>, Vec<u64>, usize)> {
    let started = std::time::Instant::now();
    let points: Vec<ParamPoint> = grid.points().map(|(_, _, pt)| pt).collect();
    let evals: Vec<_> = points
        .par_iter()
        .map(|&pt| village_log_likelihood(village, pt, d))
        .collect::<Result<_>>()?;
    let values = evals.iter().map(|e| e.log_likelihood).collect();
    let dead = evals.iter().map(|e| e.dead_branches).collect();
    let max_piis = evals.iter().map(|e| e.max_eligible_piis).max().unwrap_or(0);
    log::info!(
        "village {}: {} grid points at {} in {:.1} ms",
        village.label,
        points.len(),
        match d {
            Some(d) => format!("d = {d}"),
            None => "exact".to_string(),
        },
        started.elapsed().as_secs_f64() * 1e3,
    );
    Ok((values, dead, max_piis))
}

/// Sums per-village surfaces in village order (deterministic regardless
/// of how the per-point work was scheduled).
fn sum_surfaces(per_village: &[(Vec<f64>, Vec<u64>)], len: usize) -> (Vec<f64>, Vec<u64>) {
    let mut values = vec![0.0f64; len];
    let mut dead = vec![0u64; len];
    for (vv, dv) in per_village {
        for k in 0..len {
            values[k] += vv[k];
            dead[k] += dv[k];
        }
    }
    (values, dead)
}

/// Builds the surface, locates the argmax, and attaches confidence sets.
fn finish_search(
    villages: &[Village],
    per_village: &[(Vec<f64>, Vec<u64>)],
    grid: &Grid,
    estimator: EstimatorKind,
    levels: &[f64],
) -> Result<(LikelihoodSurface, EstimateRecord)> {
    let (values, dead_branches) = sum_surfaces(per_village, grid.len());
    let surface = LikelihoodSurface {
        grid: grid.clone(),
        estimator,
        values,
        dead_branches,
    };
    let Some((ip, iq)) = surface.argmax() else {
        // Every point is -inf: name the first village that is impossible
        // everywhere, or failing that the first with any impossible point.
        let culprit = (0..villages.len())
            .find(|&v| per_village[v].0.iter().all(|&x| x == f64::NEG_INFINITY))
            .or_else(|| {
                (0..villages.len()).find(|&v| per_village[v].0.contains(&f64::NEG_INFINITY))
            });
        let name = culprit.map_or_else(
            || "unknown".to_string(),
            |v| villages[v].label.clone(),
        );
        return Err(Error::EstimationFailed(format!(
            "the log-likelihood is -inf at every grid point; first inconsistent village: {name}"
        )));
    };
    let boundary = ip == 0
        || ip + 1 == grid.p_values().len()
        || iq == 0
        || iq + 1 == grid.q_values().len();
    let mut confidence_sets = Vec::with_capacity(levels.len());
    for &level in levels {
        confidence_sets.push(lr_confidence_set(&surface, level)?);
    }
    let point = grid.point(ip, iq);
    let record = EstimateRecord {
        estimator,
        p: point.p,
        q: point.q,
        log_likelihood: surface.value(ip, iq),
        boundary,
        confidence_sets,
    };
    Ok((surface, record))
}

/// Evaluates the sample log-likelihood at every grid point (in parallel)
/// and returns the surface together with the argmax record carrying one
/// confidence set per requested level. `d = None` evaluates exactly.
pub fn grid_search(
    villages: &[Village],
    grid: &Grid,
    d: Option<usize>,
    levels: &[f64],
) -> Result<(LikelihoodSurface, EstimateRecord)> {
    let per_village: Vec<(Vec<f64>, Vec<u64>)> = villages
        .iter()
        .map(|v| village_surface(v, grid, d).map(|(vals, dead, _)| (vals, dead)))
        .collect::<Result<_>>()?;
    let estimator = match d {
        Some(d) => EstimatorKind::Trimmed(d),
        None => EstimatorKind::Exact,
    };
    finish_search(villages, &per_village, grid, estimator, levels)
}

/// All grid points within the LR cutoff of the surface maximum. Points
/// with `-inf` log-likelihood are never included; the argmax always is.
pub fn lr_confidence_set(surface: &LikelihoodSurface, level: f64) -> Result<ConfidenceSet> {
    let cutoff = lr_cutoff(level)?;
    let max = surface
        .argmax()
        .map(|(ip, iq)| surface.value(ip, iq))
        .ok_or_else(|| {
            Error::EstimationFailed(
                "cannot build a confidence set on an all--inf surface".into(),
            )
        })?;
    let mut points = Vec::new();
    for (ip, iq, pt) in surface.grid.points() {
        let v = surface.value(ip, iq);
        if v > f64::NEG_INFINITY && 2.0 * (max - v) <= cutoff {
            points.push(pt);
        }
    }
    Ok(ConfidenceSet {
        level,
        cutoff,
        points,
    })
}

/// The two-period baseline log-likelihood: only the first two outcome
/// periods are used (extra columns are ignored), and the single exchange
/// involved makes the likelihood a closed-form product per individual —
/// no latent enumeration. Reception uses the observed injection points
/// directly.
pub fn two_period_log_likelihood(village: &Village, params: ParamPoint) -> f64 {
    let reception = reception_probabilities(&village.network, village.seeds.bits(), params.q)
        .expect("dimensions verified at village construction");
    let mut total = 0.0f64;
    for i in 0..village.n() {
        let y1 = village.outcomes.participation(i, 1);
        total += initial_outcome_density(y1, village.seeds.is_ip(i), params.p).ln();
        if y1 {
            continue;
        }
        let rp = reception.get(i) * params.p;
        let factor = if village.outcomes.participation(i, 2) {
            rp
        } else {
            1.0 - rp
        };
        total += factor.ln();
    }
    total
}

/// Grid search over the two-period baseline.
pub fn two_period_grid_search(
    villages: &[Village],
    grid: &Grid,
    levels: &[f64],
) -> Result<(LikelihoodSurface, EstimateRecord)> {
    let points: Vec<ParamPoint> = grid.points().map(|(_, _, pt)| pt).collect();
    let per_village: Vec<(Vec<f64>, Vec<u64>)> = villages
        .iter()
        .map(|v| {
            let values: Vec<f64> = points
                .par_iter()
                .map(|&pt| two_period_log_likelihood(v, pt))
                .collect();
            (values, vec![0u64; points.len()])
        })
        .collect();
    finish_search(villages, &per_village, grid, EstimatorKind::TwoPeriod, levels)
}

/// Produces the sequence of trimming estimates: one record per requested
/// `d` (ascending) and a final two-period baseline record. Once a
/// village's evaluation at some `d` never hits the trimming cap anywhere
/// on the grid, its surface is exact and is reused verbatim for every
/// larger `d`.
pub fn estimate_sequence(
    villages: &[Village],
    grid: &Grid,
    d_values: &[usize],
    levels: &[f64],
) -> Result<SequenceResult> {
    if d_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter(
            "trimming values must be sorted ascending".into(),
        ));
    }
    let mut records = Vec::new();
    let mut surfaces = Vec::new();
    // Per village: the surface from the previous d, and the d at which it
    // became exact (no point anywhere hit the cap).
    let mut cached: Vec<Option<(Vec<f64>, Vec<u64>)>> = vec![None; villages.len()];
    let mut exact_from: Vec<Option<usize>> = vec![None; villages.len()];
    for &d in d_values {
        let mut per_village = Vec::with_capacity(villages.len());
        for (vi, village) in villages.iter().enumerate() {
            if let (Some(d0), Some(cache)) = (exact_from[vi], cached[vi].as_ref()) {
                if d >= d0 {
                    per_village.push(cache.clone());
                    continue;
                }
            }
            let (values, dead, max_piis) = village_surface(village, grid, Some(d))?;
            if max_piis <= d && exact_from[vi].is_none() {
                exact_from[vi] = Some(d);
            }
            cached[vi] = Some((values, dead));
            per_village.push(cached[vi].clone().expect("just stored"));
        }
        let (surface, record) = finish_search(
            villages,
            &per_village,
            grid,
            EstimatorKind::Trimmed(d),
            levels,
        )?;
        surfaces.push(surface);
        records.push(record);
    }
    let (surface, record) = two_period_grid_search(villages, grid, levels)?;
    surfaces.push(surface);
    records.push(record);
    Ok(SequenceResult { records, surfaces })
}
