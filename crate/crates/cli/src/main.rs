//! Command-line front end: simulation, grid-search estimation, Monte
//! Carlo studies, error curves, trimming audits, and scenario counting.
//!
//! Exit codes: 0 on success, 2 on validation errors, 3 when a scenario
//! budget refuses an evaluation. Failures print one machine-readable JSON
//! object to stderr.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use difftrim::io;
use difftrim_core::{
    count_scenarios, draw_ip, ensure_within_budget, erdos_renyi, error_curve, grid_search,
    mistake_audit, run_monte_carlo, simulate_adoption, small_world, Error, Grid, KeyedRng,
    MCConfig, ParamPoint, Result, Village,
};

#[derive(Parser, Debug)]
#[command(
    name = "difftrim",
    version,
    about = "Likelihood estimation for network diffusion with latent information spread"
)]
struct Cli {
    /// Worker threads. Defaults to the DIFFTRIM_WORKERS environment
    /// variable, then to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate adoption data on the given networks.
    Simulate(SimulateArgs),
    /// Grid-search estimation over one or more villages.
    Estimate(EstimateArgs),
    /// Seeded Monte Carlo study over replicated sub-networks.
    Mc(McArgs),
    /// Trimming error curve for one village at one parameter point.
    Errcurve(ErrcurveArgs),
    /// Trimming audit for one village at one parameter point.
    Audit(AuditArgs),
    /// Count the information scenarios of one village.
    CountScenarios(CountArgs),
}

/// A trimming value: a cap on free first-stage statuses, or unbounded for
/// the exact likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DSpec {
    Trimmed(usize),
    Unbounded,
}

impl DSpec {
    fn as_option(self) -> Option<usize> {
        match self {
            DSpec::Trimmed(d) => Some(d),
            DSpec::Unbounded => None,
        }
    }
}

impl FromStr for DSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "unbounded" {
            return Ok(DSpec::Unbounded);
        }
        s.parse()
            .map(DSpec::Trimmed)
            .map_err(|_| format!("expected a trimming value or \"unbounded\", got {s:?}"))
    }
}

impl fmt::Display for DSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DSpec::Trimmed(d) => write!(f, "{d}"),
            DSpec::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// Estimation grid arguments: an explicit value list per axis, or a
/// min/max/step range. Defaults to 0.01..=0.99 in steps of 0.01 on both
/// axes.
#[derive(Args, Clone, Debug)]
struct GridArgs {
    /// Explicit p-axis values, comma-separated and strictly increasing.
    #[arg(long, value_delimiter = ',')]
    p_values: Option<Vec<f64>>,

    /// Explicit q-axis values, comma-separated and strictly increasing.
    #[arg(long, value_delimiter = ',')]
    q_values: Option<Vec<f64>>,

    #[arg(long, conflicts_with = "p_values")]
    p_min: Option<f64>,

    #[arg(long, conflicts_with = "p_values")]
    p_max: Option<f64>,

    #[arg(long, conflicts_with = "p_values")]
    p_step: Option<f64>,

    #[arg(long, conflicts_with = "q_values")]
    q_min: Option<f64>,

    #[arg(long, conflicts_with = "q_values")]
    q_max: Option<f64>,

    #[arg(long, conflicts_with = "q_values")]
    q_step: Option<f64>,
}

fn range_axis(min: Option<f64>, max: Option<f64>, step: Option<f64>) -> Result<Vec<f64>> {
    let min = min.unwrap_or(0.01);
    let max = max.unwrap_or(0.99);
    let step = step.unwrap_or(0.01);
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Parameter(format!(
            "grid step must be positive, got {step}"
        )));
    }
    if max < min {
        return Err(Error::Parameter(format!(
            "grid range is empty: min {min} exceeds max {max}"
        )));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| min + i as f64 * step).collect())
}

impl GridArgs {
    fn build(&self) -> Result<Grid> {
        let p = match &self.p_values {
            Some(v) => v.clone(),
            None => range_axis(self.p_min, self.p_max, self.p_step)?,
        };
        let q = match &self.q_values {
            Some(v) => v.clone(),
            None => range_axis(self.q_min, self.q_max, self.q_step)?,
        };
        Grid::new(p, q)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Network file (dense 0/1 CSV or 1-based edge list); repeatable.
    #[arg(long = "network", required = true)]
    networks: Vec<PathBuf>,

    /// True participation probability.
    #[arg(long)]
    p0: f64,

    /// True per-link transmission probability.
    #[arg(long)]
    q0: f64,

    /// Observation periods.
    #[arg(long, default_value_t = 4)]
    periods: usize,

    /// Master seed; network k uses the sub-stream keyed by k.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output directory; village k is written to v<k>/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Village directory (network.csv, s0.csv, outcomes.csv); repeatable.
    #[arg(long = "village", required = true)]
    villages: Vec<PathBuf>,

    /// Trimming values: integers or "unbounded"; repeatable.
    #[arg(long = "d", default_values_t = [DSpec::Unbounded])]
    d: Vec<DSpec>,

    #[command(flatten)]
    grid: GridArgs,

    /// Confidence levels for likelihood-ratio confidence sets.
    #[arg(long, value_delimiter = ',', default_values_t = [0.95])]
    levels: Vec<f64>,

    /// Refuse any evaluation whose estimated branch count exceeds this.
    #[arg(long, default_value_t = 1u128 << 32)]
    budget: u128,

    /// Output directory for surface CSVs and estimates.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SurrogateKind {
    /// Erdős–Rényi with edge probability --er-prob.
    Er,
    /// Watts–Strogatz ring with degree --ws-k rewired with --ws-beta.
    Ws,
}

#[derive(Args, Debug)]
struct McArgs {
    /// Full source network files, cycled across villages; repeatable.
    #[arg(long = "source", conflicts_with = "surrogate")]
    sources: Vec<PathBuf>,

    /// Generate surrogate source networks instead of loading files.
    #[arg(long, value_enum)]
    surrogate: Option<SurrogateKind>,

    #[arg(long, default_value_t = 6)]
    surrogate_count: usize,

    #[arg(long, default_value_t = 30)]
    surrogate_n: usize,

    #[arg(long, default_value_t = 0.1)]
    er_prob: f64,

    #[arg(long, default_value_t = 4)]
    ws_k: usize,

    #[arg(long, default_value_t = 0.3)]
    ws_beta: f64,

    #[arg(long, default_value_t = 7)]
    surrogate_seed: u64,

    /// Submatrix size extracted from each source network.
    #[arg(long, default_value_t = 20)]
    n_sub: usize,

    /// Villages per sample.
    #[arg(long, default_value_t = 11)]
    villages: usize,

    #[arg(long, default_value_t = 90)]
    replications: usize,

    /// True participation probability.
    #[arg(long)]
    p0: f64,

    /// True per-link transmission probability.
    #[arg(long)]
    q0: f64,

    #[arg(long, default_value_t = 4)]
    periods: usize,

    /// First submatrix seed; replication r uses seed_s_start + r.
    #[arg(long, default_value_t = 1)]
    seed_s_start: u64,

    /// First data seed; replication r uses seed_d_start + r.
    #[arg(long, default_value_t = 2)]
    seed_d_start: u64,

    #[command(flatten)]
    grid: GridArgs,

    /// Confidence levels attached to each estimate.
    #[arg(long, value_delimiter = ',', default_values_t = [0.95])]
    levels: Vec<f64>,

    /// Cap on the structural walk that finds each village's maximal PII
    /// count.
    #[arg(long, default_value_t = 1usize << 22)]
    state_budget: usize,

    /// Refuse any exact evaluation whose estimated branch count exceeds
    /// this.
    #[arg(long, default_value_t = 1u128 << 32)]
    branch_budget: u128,

    /// Output directory for results.jsonl, failures.jsonl, summary.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ErrcurveArgs {
    /// Village directory (network.csv, s0.csv, outcomes.csv).
    #[arg(long)]
    village: PathBuf,

    #[arg(long)]
    p: f64,

    #[arg(long)]
    q: f64,

    /// Largest trimming value to compute; the curve already ends at the
    /// village's maximal PII count when that is smaller.
    #[arg(long, default_value_t = 64)]
    d_max: usize,

    /// Refuse when the estimated exact branch count exceeds this.
    #[arg(long, default_value_t = 1u128 << 32)]
    budget: u128,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Village directory (network.csv, s0.csv, outcomes.csv).
    #[arg(long)]
    village: PathBuf,

    #[arg(long)]
    p: f64,

    #[arg(long)]
    q: f64,

    /// Trimming value whose fixed agents are audited.
    #[arg(long)]
    d: usize,

    /// Refuse when the estimated branch count exceeds this.
    #[arg(long, default_value_t = 1u128 << 32)]
    budget: u128,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CountArgs {
    /// Village directory (network.csv, s0.csv, outcomes.csv).
    #[arg(long)]
    village: PathBuf,

    /// Number of information exchanges; defaults to T − 1.
    #[arg(long)]
    exchanges: Option<usize>,
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DIFFTRIM_WORKERS") {
        Ok(v) => v.parse().map(Some).map_err(|_| {
            Error::Parameter(format!(
                "DIFFTRIM_WORKERS must be a thread count, got {v:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    for (k, path) in args.networks.iter().enumerate() {
        let net = io::load_network(path)?;
        let rng = KeyedRng::new(args.seed).absorb(k as u64);
        let seeds = draw_ip(net.n(), rng)?;
        let (outcomes, latent) =
            simulate_adoption(&net, &seeds, args.p0, args.q0, args.periods, rng)?;
        let label = format!("v{}", k + 1);
        let village = Village::new(&label, net, seeds, outcomes)?;
        io::write_village(&args.out.join(&label), &village, Some(&latent))?;
        log::info!(
            "{label}: simulated {} individuals over {} periods from {}",
            village.n(),
            args.periods,
            path.display()
        );
    }
    Ok(())
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let villages: Vec<Village> = args
        .villages
        .iter()
        .map(|dir| io::load_village(dir))
        .collect::<Result<_>>()?;
    let grid = args.grid.build()?;
    let mut records = Vec::with_capacity(args.d.len());
    for spec in &args.d {
        let d = spec.as_option();
        for v in &villages {
            ensure_within_budget(v, d, args.budget)?;
        }
        let (surface, record) = grid_search(&villages, &grid, d, &args.levels)?;
        let name = match d {
            Some(d) => format!("surface_d{d}.csv"),
            None => "surface_exact.csv".to_string(),
        };
        io::write_surface(&args.out.join(name), &surface)?;
        log::info!(
            "{spec}: maximum at p = {}, q = {} with log-likelihood {}",
            record.p,
            record.q,
            record.log_likelihood
        );
        records.push(record);
    }
    io::write_estimates(&args.out.join("estimates.json"), &records)
}

fn run_mc(args: &McArgs) -> Result<()> {
    let sources = if let Some(kind) = args.surrogate {
        let rng = KeyedRng::new(args.surrogate_seed);
        (0..args.surrogate_count)
            .map(|k| match kind {
                SurrogateKind::Er => erdos_renyi(args.surrogate_n, args.er_prob, rng.absorb(k as u64)),
                SurrogateKind::Ws => {
                    small_world(args.surrogate_n, args.ws_k, args.ws_beta, rng.absorb(k as u64))
                }
            })
            .collect::<Result<Vec<_>>>()?
    } else if args.sources.is_empty() {
        return Err(Error::Parameter(
            "give --source files or pick a --surrogate network model".into(),
        ));
    } else {
        args.sources
            .iter()
            .map(|p| io::load_network(p))
            .collect::<Result<Vec<_>>>()?
    };
    let mut config = MCConfig::new(sources, args.p0, args.q0);
    config.n_sub = args.n_sub;
    config.villages = args.villages;
    config.replications = args.replications;
    config.periods = args.periods;
    config.seed_s_start = args.seed_s_start;
    config.seed_d_start = args.seed_d_start;
    config.grid = args.grid.build()?;
    config.levels = args.levels.clone();
    config.state_budget = args.state_budget;
    config.branch_budget = args.branch_budget;
    let output = run_monte_carlo(&config)?;
    io::write_results_jsonl(&args.out.join("results.jsonl"), &output.results)?;
    io::write_failures_jsonl(&args.out.join("failures.jsonl"), &output.failures)?;
    io::write_summary(&args.out.join("summary.csv"), &output.summary)?;
    log::info!(
        "{} replications succeeded, {} failed",
        output.results.len(),
        output.failures.len()
    );
    Ok(())
}

fn run_errcurve(args: &ErrcurveArgs) -> Result<()> {
    let village = io::load_village(&args.village)?;
    let theta = ParamPoint::new(args.p, args.q)?;
    let curve = error_curve(&village, theta, args.d_max, args.budget)?;
    io::write_error_curve(&args.out, &curve)
}

fn run_audit(args: &AuditArgs) -> Result<()> {
    let village = io::load_village(&args.village)?;
    let theta = ParamPoint::new(args.p, args.q)?;
    let audits = mistake_audit(&village, theta, args.d, args.budget)?;
    io::write_audit(&args.out, &audits)
}

fn run_count(args: &CountArgs) -> Result<()> {
    let village = io::load_village(&args.village)?;
    let exchanges = args.exchanges.unwrap_or(village.periods() - 1);
    let count = count_scenarios(&village.network, &village.seeds, exchanges);
    println!("{count}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = worker_count(cli.workers)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Mc(args) => run_mc(args),
        Command::Errcurve(args) => run_errcurve(args),
        Command::Audit(args) => run_audit(args),
        Command::CountScenarios(args) => run_count(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                Error::Dimension(_) => "dimension",
                Error::Network(_) => "network",
                Error::Parameter(_) => "parameter",
                Error::Inconsistent { .. } => "inconsistent",
                Error::EstimationFailed(_) => "estimation_failed",
                Error::BudgetExceeded { .. } => "budget_exceeded",
                Error::InsufficientData(_) => "insufficient_data",
            };
            let payload = serde_json::json!({ "kind": kind, "error": e.to_string() });
            eprintln!("{payload}");
            if matches!(e, Error::BudgetExceeded { .. }) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
