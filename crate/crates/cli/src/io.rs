//! File formats: village data, likelihood surfaces, estimate tables,
//! Monte Carlo records, error curves, and audits. Every writer here has a
//! loader that reads its output back exactly; floating-point cells use the
//! shortest representation that round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use difftrim_core::{
    BitVec, EstimateRecord, Error, ErrorCurve, InfoScenario, LikelihoodSurface, OutcomeMatrix,
    ParamPoint, ReplicationFailure, ReplicationResult, Result, SeedVector, SubgraphAudit,
    SummaryRow, Verdict, Village, VillageNetwork,
};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::Parameter(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, content).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

/// Splits into trimmed, non-empty lines with their 1-based numbers.
fn numbered_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect()
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

/// Loads a network from either a dense 0/1 adjacency matrix or a
/// two-column edge list with 1-based ids and an optional header line. A
/// file is dense exactly when every line has as many comma-separated
/// fields as there are lines and every field is 0 or 1.
pub fn load_network(path: &Path) -> Result<VillageNetwork> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    if lines.is_empty() {
        return Err(Error::Parameter(format!(
            "{}: no rows to parse",
            path.display()
        )));
    }
    let n = lines.len();
    let dense = lines.iter().all(|(_, l)| {
        let f = fields(l);
        f.len() == n && f.iter().all(|v| *v == "0" || *v == "1")
    });
    if dense {
        let matrix: Vec<Vec<u8>> = lines
            .iter()
            .map(|(_, l)| fields(l).iter().map(|v| if *v == "1" { 1 } else { 0 }).collect())
            .collect();
        return VillageNetwork::from_adjacency(&matrix);
    }

    let mut edges = Vec::new();
    let mut max_id = 0u64;
    for (idx, &(line_no, line)) in lines.iter().enumerate() {
        let f = fields(line);
        let parsed: Option<Vec<u64>> = f.iter().map(|v| v.parse().ok()).collect();
        let Some(ids) = parsed else {
            if idx == 0 {
                continue; // header
            }
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected two numeric ids, got {line:?}",
                path.display()
            )));
        };
        if ids.len() != 2 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected two columns, got {}",
                path.display(),
                ids.len()
            )));
        }
        if ids[0] == 0 || ids[1] == 0 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: ids are 1-based, got 0",
                path.display()
            )));
        }
        max_id = max_id.max(ids[0]).max(ids[1]);
        edges.push((ids[0] as usize - 1, ids[1] as usize - 1));
    }
    if edges.is_empty() {
        return Err(Error::Parameter(format!(
            "{}: no edges to parse",
            path.display()
        )));
    }
    VillageNetwork::from_edges(max_id as usize, &edges)
}

/// Writes the canonical dense form.
pub fn write_network(path: &Path, net: &VillageNetwork) -> Result<()> {
    let mut out = String::new();
    for i in 0..net.n() {
        for j in 0..net.n() {
            if j > 0 {
                out.push(',');
            }
            out.push(if net.is_edge(i, j) { '1' } else { '0' });
        }
        out.push('\n');
    }
    write_text(path, &out)
}

/// Loads an injection-point vector: one 0/1 flag per line, or a single
/// comma-separated line.
pub fn load_seeds(path: &Path) -> Result<SeedVector> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let tokens: Vec<(usize, &str)> = if lines.len() == 1 {
        fields(lines[0].1).into_iter().map(|f| (lines[0].0, f)).collect()
    } else {
        lines
    };
    let mut flags = Vec::with_capacity(tokens.len());
    for (line_no, tok) in tokens {
        match tok {
            "0" => flags.push(0),
            "1" => flags.push(1),
            other => {
                return Err(Error::Parameter(format!(
                    "{} line {line_no}: expected 0 or 1, got {other:?}",
                    path.display()
                )))
            }
        }
    }
    SeedVector::from_flags(&flags)
}

pub fn write_seeds(path: &Path, seeds: &SeedVector) -> Result<()> {
    let mut out = String::new();
    for i in 0..seeds.len() {
        out.push(if seeds.is_ip(i) { '1' } else { '0' });
        out.push('\n');
    }
    write_text(path, &out)
}

fn load_binary_matrix(path: &Path) -> Result<Vec<Vec<u8>>> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let mut rows = Vec::with_capacity(lines.len());
    for (line_no, line) in lines {
        let mut row = Vec::new();
        for tok in fields(line) {
            match tok {
                "0" => row.push(0),
                "1" => row.push(1),
                other => {
                    return Err(Error::Parameter(format!(
                        "{} line {line_no}: expected 0 or 1, got {other:?}",
                        path.display()
                    )))
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_binary_matrix(path: &Path, rows: &[Vec<u8>]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Loads an outcome matrix: one row per individual, one 0/1 column per
/// period.
pub fn load_outcomes(path: &Path) -> Result<OutcomeMatrix> {
    OutcomeMatrix::from_rows(&load_binary_matrix(path)?)
}

pub fn write_outcomes(path: &Path, outcomes: &OutcomeMatrix) -> Result<()> {
    write_binary_matrix(path, &outcomes.to_rows())
}

/// Loads a latent information scenario: one row per individual, one 0/1
/// column per exchange.
pub fn load_latent(path: &Path) -> Result<InfoScenario> {
    let rows = load_binary_matrix(path)?;
    let n = rows.len();
    let exchanges = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != exchanges {
            return Err(Error::Dimension(format!(
                "{}: row {i} has {} columns, expected {exchanges}",
                path.display(),
                row.len()
            )));
        }
    }
    let cols = (0..exchanges)
        .map(|e| {
            let mut col = BitVec::zeros(n);
            for (i, row) in rows.iter().enumerate() {
                col.set(i, row[e] == 1);
            }
            col
        })
        .collect();
    Ok(InfoScenario::from_cols(cols))
}

pub fn write_latent(path: &Path, scenario: &InfoScenario, n: usize) -> Result<()> {
    write_binary_matrix(path, &scenario.to_rows(n))
}

/// Loads one village directory: `network.csv`, `s0.csv`, `outcomes.csv`.
/// The directory name becomes the village label.
pub fn load_village(dir: &Path) -> Result<Village> {
    let label = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let network = load_network(&dir.join("network.csv"))?;
    let seeds = load_seeds(&dir.join("s0.csv"))?;
    let outcomes = load_outcomes(&dir.join("outcomes.csv"))?;
    Village::new(label, network, seeds, outcomes)
}

/// Writes one village directory; the latent truth is included when given.
pub fn write_village(dir: &Path, village: &Village, latent: Option<&InfoScenario>) -> Result<()> {
    write_network(&dir.join("network.csv"), &village.network)?;
    write_seeds(&dir.join("s0.csv"), &village.seeds)?;
    write_outcomes(&dir.join("outcomes.csv"), &village.outcomes)?;
    if let Some(s) = latent {
        write_latent(&dir.join("latent.csv"), s, village.n())?;
    }
    Ok(())
}

fn float_cell(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_float(path: &Path, line_no: usize, tok: &str) -> Result<f64> {
    tok.parse().map_err(|_| {
        Error::Parameter(format!(
            "{} line {line_no}: expected a number, got {tok:?}",
            path.display()
        ))
    })
}

/// One parsed surface row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceRow {
    pub p: f64,
    pub q: f64,
    pub loglik: f64,
    pub dead_branches: u64,
}

/// Writes a likelihood surface as CSV in row-major grid order.
pub fn write_surface(path: &Path, surface: &LikelihoodSurface) -> Result<()> {
    let mut out = String::from("p,q,loglik,dead_branches\n");
    for (ip, iq, pt) in surface.grid.points() {
        let k = surface.grid.index(ip, iq);
        writeln!(
            out,
            "{},{},{},{}",
            float_cell(pt.p),
            float_cell(pt.q),
            float_cell(surface.values[k]),
            surface.dead_branches[k]
        )
        .expect("string writes cannot fail");
    }
    write_text(path, &out)
}

pub fn load_surface(path: &Path) -> Result<Vec<SurfaceRow>> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let mut rows = Vec::new();
    for (line_no, line) in lines.iter().skip(1) {
        let f = fields(line);
        if f.len() != 4 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected 4 columns, got {}",
                path.display(),
                f.len()
            )));
        }
        rows.push(SurfaceRow {
            p: parse_float(path, *line_no, f[0])?,
            q: parse_float(path, *line_no, f[1])?,
            loglik: parse_float(path, *line_no, f[2])?,
            dead_branches: f[3].parse().map_err(|_| {
                Error::Parameter(format!(
                    "{} line {line_no}: expected a count, got {:?}",
                    path.display(),
                    f[3]
                ))
            })?,
        });
    }
    Ok(rows)
}

pub fn write_estimates(path: &Path, records: &[EstimateRecord]) -> Result<()> {
    let json = serde_json::to_string_pretty(records)
        .map_err(|e| Error::Parameter(format!("estimate serialization: {e}")))?;
    write_text(path, &format!("{json}\n"))
}

pub fn load_estimates(path: &Path) -> Result<Vec<EstimateRecord>> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

/// One JSON record per line.
pub fn write_results_jsonl(path: &Path, results: &[ReplicationResult]) -> Result<()> {
    let mut out = String::new();
    for r in results {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Parameter(format!("result serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn load_results_jsonl(path: &Path) -> Result<Vec<ReplicationResult>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn write_failures_jsonl(path: &Path, failures: &[ReplicationFailure]) -> Result<()> {
    let mut out = String::new();
    for f in failures {
        let line = serde_json::to_string(f)
            .map_err(|e| Error::Parameter(format!("failure serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn load_failures_jsonl(path: &Path) -> Result<Vec<ReplicationFailure>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn estimator_cell(e: difftrim_core::EstimatorKind) -> String {
    match e {
        difftrim_core::EstimatorKind::Trimmed(d) => format!("trimmed:{d}"),
        difftrim_core::EstimatorKind::Exact => "exact".to_string(),
        difftrim_core::EstimatorKind::TwoPeriod => "two_period".to_string(),
    }
}

fn parse_estimator(path: &Path, line_no: usize, tok: &str) -> Result<difftrim_core::EstimatorKind> {
    if let Some(d) = tok.strip_prefix("trimmed:") {
        let d = d.parse().map_err(|_| {
            Error::Parameter(format!(
                "{} line {line_no}: bad trimming value in {tok:?}",
                path.display()
            ))
        })?;
        return Ok(difftrim_core::EstimatorKind::Trimmed(d));
    }
    match tok {
        "exact" => Ok(difftrim_core::EstimatorKind::Exact),
        "two_period" => Ok(difftrim_core::EstimatorKind::TwoPeriod),
        other => Err(Error::Parameter(format!(
            "{} line {line_no}: unknown estimator {other:?}",
            path.display()
        ))),
    }
}

fn option_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), float_cell)
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut out = String::from("estimator,count,mean_p,se_p,mean_q,se_q,mean_gap\n");
    for row in summary {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            estimator_cell(row.estimator),
            row.count,
            float_cell(row.mean_p),
            option_cell(row.se_p),
            float_cell(row.mean_q),
            option_cell(row.se_q),
            float_cell(row.mean_gap)
        )
        .expect("string writes cannot fail");
    }
    write_text(path, &out)
}

pub fn load_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let mut rows = Vec::new();
    for (line_no, line) in lines.iter().skip(1) {
        let f = fields(line);
        if f.len() != 7 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected 7 columns, got {}",
                path.display(),
                f.len()
            )));
        }
        let opt = |tok: &str| -> Result<Option<f64>> {
            if tok.is_empty() {
                Ok(None)
            } else {
                parse_float(path, *line_no, tok).map(Some)
            }
        };
        rows.push(SummaryRow {
            estimator: parse_estimator(path, *line_no, f[0])?,
            count: f[1].parse().map_err(|_| {
                Error::Parameter(format!(
                    "{} line {line_no}: expected a count, got {:?}",
                    path.display(),
                    f[1]
                ))
            })?,
            mean_p: parse_float(path, *line_no, f[2])?,
            se_p: opt(f[3])?,
            mean_q: parse_float(path, *line_no, f[4])?,
            se_q: opt(f[5])?,
            mean_gap: parse_float(path, *line_no, f[6])?,
        });
    }
    Ok(rows)
}

/// Writes an error curve as CSV, one row per trimming value. The label
/// and parameter point repeat on every row so the file stands alone.
pub fn write_error_curve(path: &Path, curve: &ErrorCurve) -> Result<()> {
    let mut out = String::from("label,p,q,d,loglik,epsilon,new_mass_log,exact_loglik\n");
    for d in 0..curve.trimmed_log_likelihoods.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            curve.label,
            float_cell(curve.theta.p),
            float_cell(curve.theta.q),
            d,
            float_cell(curve.trimmed_log_likelihoods[d]),
            float_cell(curve.epsilons[d]),
            float_cell(curve.new_mass_logs[d]),
            float_cell(curve.exact_log_likelihood)
        )
        .expect("string writes cannot fail");
    }
    write_text(path, &out)
}

pub fn load_error_curve(path: &Path) -> Result<ErrorCurve> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let mut label = String::new();
    let mut theta = None;
    let mut exact = f64::NEG_INFINITY;
    let mut trimmed = Vec::new();
    let mut epsilons = Vec::new();
    let mut new_mass = Vec::new();
    for (line_no, line) in lines.iter().skip(1) {
        let f = fields(line);
        if f.len() != 8 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected 8 columns, got {}",
                path.display(),
                f.len()
            )));
        }
        label = f[0].to_string();
        theta = Some(ParamPoint::new(
            parse_float(path, *line_no, f[1])?,
            parse_float(path, *line_no, f[2])?,
        )?);
        trimmed.push(parse_float(path, *line_no, f[4])?);
        epsilons.push(parse_float(path, *line_no, f[5])?);
        new_mass.push(parse_float(path, *line_no, f[6])?);
        exact = parse_float(path, *line_no, f[7])?;
    }
    let theta = theta.ok_or_else(|| {
        Error::Parameter(format!("{}: no curve rows", path.display()))
    })?;
    Ok(ErrorCurve {
        label,
        theta,
        exact_log_likelihood: exact,
        trimmed_log_likelihoods: trimmed,
        epsilons,
        new_mass_logs: new_mass,
    })
}

fn verdict_cell(v: Verdict) -> &'static str {
    match v {
        Verdict::Optimal => "optimal",
        Verdict::Mistake1 => "mistake1",
        Verdict::Mistake2 => "mistake2",
    }
}

fn parse_verdict(path: &Path, line_no: usize, tok: &str) -> Result<Verdict> {
    match tok {
        "optimal" => Ok(Verdict::Optimal),
        "mistake1" => Ok(Verdict::Mistake1),
        "mistake2" => Ok(Verdict::Mistake2),
        other => Err(Error::Parameter(format!(
            "{} line {line_no}: unknown verdict {other:?}",
            path.display()
        ))),
    }
}

/// Writes a trimming audit as CSV, one row per trimmed agent.
pub fn write_audit(path: &Path, audits: &[SubgraphAudit]) -> Result<()> {
    let mut out = String::from(
        "individual,betweenness,in_degree,out_degree,default_informed,\
         chosen_log_mass,flipped_log_mass,group_flipped_log_mass,verdict\n",
    );
    for a in audits {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            a.individual,
            float_cell(a.betweenness),
            a.in_degree,
            a.out_degree,
            u8::from(a.default_informed),
            float_cell(a.chosen_log_mass),
            float_cell(a.flipped_log_mass),
            option_cell(a.group_flipped_log_mass),
            verdict_cell(a.verdict)
        )
        .expect("string writes cannot fail");
    }
    write_text(path, &out)
}

pub fn load_audit(path: &Path) -> Result<Vec<SubgraphAudit>> {
    let text = read_text(path)?;
    let lines = numbered_lines(&text);
    let mut rows = Vec::new();
    for (line_no, line) in lines.iter().skip(1) {
        let f = fields(line);
        if f.len() != 9 {
            return Err(Error::Parameter(format!(
                "{} line {line_no}: expected 9 columns, got {}",
                path.display(),
                f.len()
            )));
        }
        let count = |tok: &str| -> Result<usize> {
            tok.parse().map_err(|_| {
                Error::Parameter(format!(
                    "{} line {line_no}: expected a count, got {tok:?}",
                    path.display()
                ))
            })
        };
        rows.push(SubgraphAudit {
            individual: count(f[0])?,
            betweenness: parse_float(path, *line_no, f[1])?,
            in_degree: count(f[2])?,
            out_degree: count(f[3])?,
            default_informed: f[4] == "1",
            chosen_log_mass: parse_float(path, *line_no, f[5])?,
            flipped_log_mass: parse_float(path, *line_no, f[6])?,
            group_flipped_log_mass: if f[7].is_empty() {
                None
            } else {
                Some(parse_float(path, *line_no, f[7])?)
            },
            verdict: parse_verdict(path, *line_no, f[8])?,
        });
    }
    Ok(rows)
}
