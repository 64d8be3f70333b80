//! Command-line driver: landscape analysis, geometry audits, delay
//! simulation, and parameter sweeps on toric conflict graphs, emitting
//! reproducible JSON bundles and CSV tables (see `docs/schema.md`).

use clap::Parser;
use hcgl::contour::audit_states;
use hcgl::landscape::{
    analyze_landscape, build_set_s, conductance_of_s, mean_hitting_time, mixing_time_bound,
    LandscapeError, LandscapeReport, UniformizedChain, MAX_SIGMA_FOR_SOLVES,
};
use hcgl::sim::{
    run_delay_experiment, run_replicated_delay_experiment, stability_probe, Estimate,
    ExperimentConfig, NetworkParams, ReplicatedDelayReport, SimError, SimulationRecord, Simulator,
    StabilityVerdict,
};
use hcgl::state_space::{ActivityLaw, StateId, StateSpace, StateSpaceError, DEFAULT_ENUM_CAP};
use hcgl::topology::ConflictGraph;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

const SCHEMA_VERSION: &str = "1";

/// States audited exhaustively; larger spaces are stride-sampled.
const AUDIT_EXHAUSTIVE_LIMIT: usize = 200_000;
const AUDIT_SAMPLE_TARGET: usize = 4_000;

#[derive(Parser, Debug)]
#[command(name = "hcgl", version, about = "Landscape analysis and simulation of \
random-access networks on toric conflict graphs")]
struct Cli {
    /// One of: analyze, audit, simulate, sweep.
    #[arg(long)]
    mode: String,
    /// Torus side length (even, >= 4).
    #[arg(long = "L", visible_alias = "side")]
    l: Option<usize>,
    /// Activity factor sigma = nu / (p mu).
    #[arg(long)]
    sigma: Option<f64>,
    /// Activation rate.
    #[arg(long)]
    nu: Option<f64>,
    /// Back-off probability in (0, 1].
    #[arg(long)]
    p: Option<f64>,
    /// Transmission completion rate.
    #[arg(long)]
    mu: Option<f64>,
    /// Arrival rate per node.
    #[arg(long)]
    lambda: Option<f64>,
    /// Normalized load rho = 2 lambda / mu.
    #[arg(long)]
    rho: Option<f64>,
    /// Simulated time horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Statistics start time (default: 10% of the horizon).
    #[arg(long)]
    warmup: Option<f64>,
    /// Independent simulation replicas.
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total-variation level for mixing-time bounds, in (0, 1/4).
    #[arg(long)]
    epsilon: Option<f64>,
    /// JSON bundle path (default: bundle to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV path: per-event trace (simulate) or table (sweep).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Comma-separated sigma values.
    #[arg(long = "sigma-grid")]
    sigma_grid: Option<String>,
    /// Comma-separated rho values.
    #[arg(long = "rho-grid")]
    rho_grid: Option<String>,
    /// JSON file with a NetworkParams object (base rates + per-node
    /// overrides); excludes the individual rate flags.
    #[arg(long = "params-file")]
    params_file: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    /// Invalid or inconsistent configuration (exit 2).
    Config(String),
    /// Unstable parameters or a refused computation (exit 3).
    Precondition(String),
    /// Audited identity or bound violated (exit 4).
    Violation(String),
    /// Unexpected internal failure (exit 1).
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Violation(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Precondition(m)
            | CliError::Violation(m)
            | CliError::Internal(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(format!("i/o failure: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("serialization failure: {e}"))
    }
}

impl From<LandscapeError> for CliError {
    fn from(e: LandscapeError) -> Self {
        match e {
            LandscapeError::TooLarge { .. }
            | LandscapeError::IllConditioned { .. }
            | LandscapeError::MixingTooCostly { .. }
            | LandscapeError::SigmaNotAboveOne { .. } => CliError::Precondition(e.to_string()),
            LandscapeError::BadEpsilon { .. } => CliError::Config(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Overloaded { .. } | SimError::BelowSigmaThreshold { .. } => {
                CliError::Precondition(e.to_string())
            }
            SimError::BadRates(_) | SimError::BadWindow(_) | SimError::NodeOutOfRange { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

// ======================================================================
// Configuration resolution
// ======================================================================

#[derive(Clone, Debug, Serialize)]
struct ConfigEcho {
    mode: String,
    l: usize,
    sigma: f64,
    nu: f64,
    p: f64,
    mu: f64,
    lambda: f64,
    rho: f64,
    horizon: f64,
    warmup: f64,
    replicas: usize,
    seed: u64,
    epsilon: f64,
    enum_cap: usize,
    sigma_grid: Option<Vec<f64>>,
    rho_grid: Option<Vec<f64>>,
    params_file: Option<String>,
}

struct Resolved {
    echo: ConfigEcho,
    params: NetworkParams,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
}

const REL_TOL: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(1.0)
}

fn parse_grid(s: &str, name: &str) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Config(format!("cannot parse {name} grid from '{s}'"))),
    }
}

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let l = cli.l.unwrap_or(4);
    if l < 4 || l % 2 != 0 {
        return Err(CliError::Config(format!(
            "L = {l} is not a valid torus side: the side must be even (and at least 4) so the \
             grid splits into equal even and odd parity classes"
        )));
    }

    let enum_cap = match std::env::var("HCGL_ENUM_CAP") {
        Ok(s) => s
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("HCGL_ENUM_CAP = '{s}' is not a number")))?,
        Err(_) => DEFAULT_ENUM_CAP,
    };

    // Rates: either a params file or flags.
    let (params, sigma, nu, p, mu, lambda, rho);
    if let Some(path) = &cli.params_file {
        if cli.sigma.is_some()
            || cli.nu.is_some()
            || cli.p.is_some()
            || cli.mu.is_some()
            || cli.lambda.is_some()
            || cli.rho.is_some()
        {
            return Err(CliError::Config(
                "--params-file excludes the individual rate flags".into(),
            ));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let loaded: NetworkParams = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?;
        loaded.validate().map_err(|e| CliError::Config(e.to_string()))?;
        mu = loaded.base.mu;
        p = loaded.base.p;
        nu = loaded.base.nu;
        lambda = loaded.base.lambda;
        sigma = loaded.sigma();
        rho = loaded.rho();
        params = loaded;
    } else {
        mu = cli.mu.unwrap_or(1.0);
        p = cli.p.unwrap_or(1.0);
        (sigma, nu) = match (cli.sigma, cli.nu) {
            (Some(s), Some(n)) => {
                if !close(s, n / (p * mu)) {
                    return Err(CliError::Config(format!(
                        "inconsistent rates: sigma = {s} but nu/(p mu) = {}",
                        n / (p * mu)
                    )));
                }
                (s, n)
            }
            (Some(s), None) => (s, s * p * mu),
            (None, Some(n)) => (n / (p * mu), n),
            (None, None) => (10.0, 10.0 * p * mu),
        };
        (lambda, rho) = match (cli.lambda, cli.rho) {
            (Some(la), Some(r)) => {
                if !close(la, 0.5 * r * mu) {
                    return Err(CliError::Config(format!(
                        "inconsistent load: lambda = {la} but rho mu / 2 = {}",
                        0.5 * r * mu
                    )));
                }
                (la, r)
            }
            (Some(la), None) => (la, 2.0 * la / mu),
            (None, Some(r)) => (0.5 * r * mu, r),
            (None, None) => match cli.mode.as_str() {
                "simulate" => (0.25 * mu, 0.5),
                _ => (0.0, 0.0),
            },
        };
        params = NetworkParams::homogeneous(lambda, mu, nu, p)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    let horizon = cli.horizon.unwrap_or(20_000.0);
    let warmup = cli.warmup.unwrap_or(0.1 * horizon);
    if !(horizon > 0.0) || warmup < 0.0 || warmup >= horizon {
        return Err(CliError::Config(format!(
            "need 0 <= warmup < horizon, got warmup = {warmup}, horizon = {horizon}"
        )));
    }
    let epsilon = cli.epsilon.unwrap_or(0.125);
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(CliError::Config(format!("epsilon must lie in (0, 1/4), got {epsilon}")));
    }

    let sigma_grid = cli.sigma_grid.as_deref().map(|s| parse_grid(s, "sigma")).transpose()?;
    let rho_grid = cli.rho_grid.as_deref().map(|s| parse_grid(s, "rho")).transpose()?;

    Ok(Resolved {
        echo: ConfigEcho {
            mode: cli.mode.clone(),
            l,
            sigma,
            nu,
            p,
            mu,
            lambda,
            rho,
            horizon,
            warmup,
            replicas: cli.replicas.unwrap_or(8),
            seed: cli.seed.unwrap_or(1),
            epsilon,
            enum_cap,
            sigma_grid,
            rho_grid,
            params_file: cli.params_file.as_ref().map(|p| p.display().to_string()),
        },
        params,
        out: cli.out.clone(),
        trace: cli.trace.clone(),
    })
}

fn torus(l: usize) -> Result<ConflictGraph, CliError> {
    ConflictGraph::torus(l).map_err(|e| CliError::Config(e.to_string()))
}

fn enumerate(graph: &ConflictGraph, cap: usize) -> Result<StateSpace, CliError> {
    StateSpace::enumerate_with_cap(graph, cap).map_err(|e| match e {
        StateSpaceError::CapExceeded { .. } | StateSpaceError::CapBeyondRepresentation(_) => {
            CliError::Config(format!("{e} (set HCGL_ENUM_CAP to override)"))
        }
        other => CliError::Internal(other.to_string()),
    })
}

// ======================================================================
// Bundles
// ======================================================================

#[derive(Serialize)]
struct Bundle<T: Serialize> {
    schema_version: &'static str,
    mode: &'static str,
    seed: u64,
    config: ConfigEcho,
    report: T,
}

fn emit<T: Serialize>(
    resolved: &Resolved,
    mode: &'static str,
    report: T,
    summary: &str,
) -> Result<(), CliError> {
    let bundle = Bundle {
        schema_version: SCHEMA_VERSION,
        mode,
        seed: resolved.echo.seed,
        config: resolved.echo.clone(),
        report,
    };
    let json = serde_json::to_string_pretty(&bundle)?;
    match &resolved.out {
        Some(path) => {
            std::fs::write(path, json)?;
            print!("{summary}");
            std::io::stdout().flush()?;
        }
        None => {
            println!("{json}");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = resolve(&cli)?;
    match cli.mode.as_str() {
        "analyze" => cmd_analyze(&resolved),
        "audit" => cmd_audit(&resolved),
        "simulate" => cmd_simulate(&resolved),
        "sweep" => cmd_sweep(&resolved),
        other => Err(CliError::Config(format!(
            "unknown mode '{other}': expected analyze, audit, simulate, or sweep"
        ))),
    }
}

// ======================================================================
// analyze
// ======================================================================

#[derive(Serialize)]
struct GridRow {
    sigma: f64,
    mean_hit_steps: Option<f64>,
    mean_hit_time: Option<f64>,
    conductance: Option<f64>,
    conductance_bound: Option<f64>,
    tmix_lower: Option<f64>,
    note: Option<String>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    landscape: LandscapeReport,
    grid: Vec<GridRow>,
    /// Smallest log-log slope of the mean hitting time between
    /// consecutive grid sigmas (where both solves succeeded).
    min_hitting_slope: Option<f64>,
}

fn cmd_analyze(resolved: &Resolved) -> Result<(), CliError> {
    let echo = &resolved.echo;
    let graph = torus(echo.l)?;
    let space = enumerate(&graph, echo.enum_cap)?;
    let landscape = analyze_landscape(&space, echo.sigma, echo.epsilon)?;

    let grid_sigmas = echo.sigma_grid.clone().unwrap_or_else(|| vec![echo.sigma]);
    let (e_id, o_id) = space
        .dominant_ids()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let set_s = build_set_s(&space)?;
    let mut grid = Vec::new();
    for &sigma in &grid_sigmas {
        let mut row = GridRow {
            sigma,
            mean_hit_steps: None,
            mean_hit_time: None,
            conductance: None,
            conductance_bound: None,
            tmix_lower: None,
            note: None,
        };
        if sigma > 1.0 {
            match conductance_of_s(&space, &set_s, sigma) {
                Ok(c) => {
                    row.conductance = Some(c.phi);
                    row.conductance_bound = Some(c.bound);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
            row.tmix_lower = mixing_time_bound(&space, &set_s, sigma, echo.epsilon).ok();
        }
        if sigma <= MAX_SIGMA_FOR_SOLVES {
            let chain = UniformizedChain::build(&space, sigma * echo.p * echo.mu, echo.p, echo.mu)?;
            match mean_hitting_time(&chain, e_id, &[o_id]) {
                Ok(ht) => {
                    row.mean_hit_steps = Some(ht.steps);
                    row.mean_hit_time = Some(ht.time);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
        } else {
            row.note = Some(format!(
                "sigma = {sigma} beyond the conditioning threshold {MAX_SIGMA_FOR_SOLVES}; \
                 hitting time not solved"
            ));
        }
        grid.push(row);
    }

    let mut min_slope: Option<f64> = None;
    for w in grid.windows(2) {
        if let (Some(t0), Some(t1)) = (w[0].mean_hit_time, w[1].mean_hit_time) {
            let slope = (t1 / t0).ln() / (w[1].sigma / w[0].sigma).ln();
            min_slope = Some(min_slope.map_or(slope, |m: f64| m.min(slope)));
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, "gamma = {}", landscape.gamma);
    let _ = writeln!(s, "set_s_size = {}", landscape.set_s.len());
    let _ = writeln!(s, "inner_boundary = {}", landscape.inner_boundary.len());
    let _ = writeln!(s, "outer_boundary = {}", landscape.outer_boundary.len());
    let _ = writeln!(s, "bottom_gap = {}", landscape.bottom_gap);
    let _ = writeln!(s, "spectral_gap = {:.11e}", landscape.spectral_gap);
    if let Some(c) = landscape.conductance {
        let _ = writeln!(s, "conductance = {c:.11e}");
    }
    if let Some(b) = landscape.conductance_bound {
        let _ = writeln!(s, "conductance_bound = {b:.11e}");
    }
    if let Some(t) = landscape.tmix_lower {
        let _ = writeln!(s, "tmix_lower = {t:.11e}");
    }
    if let Some(t) = landscape.mean_hit_eo {
        let _ = writeln!(s, "mean_hit_eo = {t:.11e}");
    }
    if let Some(m) = min_slope {
        let _ = writeln!(s, "min_hitting_slope = {m:.11e}");
    }
    emit(resolved, "analyze", AnalyzeReport { landscape, grid, min_hitting_slope: min_slope }, &s)
}

// ======================================================================
// audit
// ======================================================================

#[derive(Serialize)]
struct AuditBundle {
    n_states: usize,
    exhaustive: bool,
    n_states_checked: usize,
    n_cluster: usize,
    n_stripe: usize,
    n_cross: usize,
    n_critical_cross: usize,
    n_identity_violations: usize,
    n_disjointness_violations: usize,
    n_stripe_bound_violations: usize,
    n_critical_cross_bound_violations: usize,
    passed: bool,
    /// First reported violations, each with the offending
    /// configuration's hex dump.
    violations: Vec<String>,
}

fn cmd_audit(resolved: &Resolved) -> Result<(), CliError> {
    let echo = &resolved.echo;
    let graph = torus(echo.l)?;
    let space = enumerate(&graph, echo.enum_cap)?;
    let n = space.n_states();
    let exhaustive = n <= AUDIT_EXHAUSTIVE_LIMIT;
    let ids: Vec<StateId> = if exhaustive {
        (0..n as StateId).collect()
    } else {
        let stride = n.div_ceil(AUDIT_SAMPLE_TARGET);
        (0..n).step_by(stride).map(|i| i as StateId).collect()
    };
    let report = audit_states(&space, &ids).map_err(|e| CliError::Internal(e.to_string()))?;

    let bundle = AuditBundle {
        n_states: n,
        exhaustive,
        n_states_checked: report.n_states_checked,
        n_cluster: report.n_cluster,
        n_stripe: report.n_stripe,
        n_cross: report.n_cross,
        n_critical_cross: report.n_critical_cross,
        n_identity_violations: report.n_identity_violations,
        n_disjointness_violations: report.n_disjointness_violations,
        n_stripe_bound_violations: report.n_stripe_bound_violations,
        n_critical_cross_bound_violations: report.n_critical_cross_bound_violations,
        passed: report.passed,
        violations: report.violations.clone(),
    };

    let mut s = String::new();
    let _ = writeln!(s, "states = {n} (checked {})", report.n_states_checked);
    let _ = writeln!(
        s,
        "classes: cluster = {}, cross = {}, stripe = {}, critical_cross = {}",
        report.n_cluster, report.n_cross, report.n_stripe, report.n_critical_cross
    );
    let _ = writeln!(
        s,
        "violations: identity = {}, disjointness = {}, stripe_bound = {}, \
         critical_cross_bound = {}",
        report.n_identity_violations,
        report.n_disjointness_violations,
        report.n_stripe_bound_violations,
        report.n_critical_cross_bound_violations
    );
    let passed = report.passed;
    let first = report.violations.first().cloned();
    emit(resolved, "audit", bundle, &s)?;
    if !passed {
        Err(CliError::Violation(format!(
            "audit found violations ({} total); first: {}",
            report.n_violations(),
            first.unwrap_or_default()
        )))
    } else {
        Ok(())
    }
}

// ======================================================================
// simulate
// ======================================================================

#[derive(Serialize)]
struct DelayBoundCheck {
    /// Per-replica mean delay over mean even-period duration,
    /// aggregated across replicas.
    ratio: Estimate,
    /// Asymptotic lower bound 1 / (4 - 2 rho).
    bound: f64,
    /// Whether the estimate stays above the bound minus its own
    /// confidence half-width.
    holds_within_ci: bool,
}

#[derive(Serialize)]
struct SimulateReport {
    stability: StabilityVerdict,
    replicated: Option<ReplicatedDelayReport>,
    single: Option<SimulationRecord>,
    delay_bound: DelayBoundCheck,
    n_cycles_total: usize,
}

fn cmd_simulate(resolved: &Resolved) -> Result<(), CliError> {
    let echo = &resolved.echo;
    let graph = torus(echo.l)?;
    let params = &resolved.params;
    let verdict = stability_probe(params);

    if let Some(path) = &resolved.trace {
        write_trace(&graph, params, echo, path)?;
    }

    let config = ExperimentConfig::new(echo.horizon, echo.warmup, echo.seed);
    let bound = 1.0 / (4.0 - 2.0 * echo.rho);
    let (replicated, single, ratio, n_cycles_total);
    if echo.replicas >= 2 {
        let rep = run_replicated_delay_experiment(&graph, params, &config, echo.replicas)?;
        ratio = rep.delay_over_transition;
        n_cycles_total = rep.n_cycles_total;
        replicated = Some(rep);
        single = None;
    } else {
        let rec = run_delay_experiment(&graph, params, &config)?;
        let mean_t: f64 =
            rec.t_even_samples.iter().sum::<f64>() / rec.t_even_samples.len().max(1) as f64;
        ratio = Estimate {
            value: rec.mean_delay.value / mean_t,
            half_width: f64::NAN,
            confidence: config.confidence,
        };
        n_cycles_total = rec.cycles.len();
        single = Some(rec);
        replicated = None;
    }
    let delay_bound = DelayBoundCheck {
        ratio,
        bound,
        holds_within_ci: ratio.value >= bound - ratio.half_width.max(0.0),
    };

    let mut s = String::new();
    let _ = writeln!(s, "stability = {verdict:?}");
    let _ = writeln!(s, "cycles = {n_cycles_total}");
    let _ = writeln!(
        s,
        "delay_over_transition = {:.11e} +/- {:.11e}",
        delay_bound.ratio.value, delay_bound.ratio.half_width
    );
    let _ = writeln!(s, "delay_ratio_bound = {:.11e}", delay_bound.bound);
    if let Some(rep) = &replicated {
        let _ = writeln!(
            s,
            "mean_delay = {:.11e} +/- {:.11e}",
            rep.mean_delay.value, rep.mean_delay.half_width
        );
        let _ = writeln!(
            s,
            "queue_time_average = {:.11e} +/- {:.11e}",
            rep.queue_time_average.value, rep.queue_time_average.half_width
        );
        let _ = writeln!(
            s,
            "little_residual = {:.11e} (joint half-width {:.11e})",
            rep.little_residual, rep.little_joint_half_width
        );
    }
    emit(
        resolved,
        "simulate",
        SimulateReport { stability: verdict, replicated, single, delay_bound, n_cycles_total },
        &s,
    )
}

/// Writes a per-event CSV trace of a single run at the base seed.
fn write_trace(
    graph: &ConflictGraph,
    params: &NetworkParams,
    echo: &ConfigEcho,
    path: &PathBuf,
) -> Result<(), CliError> {
    match stability_probe(params) {
        StabilityVerdict::Stable => {}
        StabilityVerdict::Overloaded => {
            return Err(SimError::Overloaded { rho: params.rho() }.into());
        }
        StabilityVerdict::BelowSigmaThreshold => {
            let rho = params.rho();
            return Err(SimError::BelowSigmaThreshold {
                sigma: params.sigma(),
                threshold: rho / (2.0 * (1.0 - rho)),
            }
            .into());
        }
    }
    let (even, _) = graph
        .dominant_sets()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut sim = Simulator::new(graph, params, &even, None, echo.seed)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "time,node,event,queue_change")?;
    while sim.state().clock < echo.horizon {
        let e = sim.step();
        let kind = match e.kind {
            hcgl::sim::EventKind::Arrival => "arrival",
            hcgl::sim::EventKind::Activation => "activation",
            hcgl::sim::EventKind::CompletionBackOff => "completion_back_off",
            hcgl::sim::EventKind::CompletionContinue => "completion_continue",
        };
        writeln!(w, "{:.9},{},{},{}", e.time, e.node, kind, e.queue_change)?;
    }
    w.flush()?;
    Ok(())
}

// ======================================================================
// sweep
// ======================================================================

#[derive(Clone, Serialize)]
struct SweepRow {
    sigma: f64,
    rho: f64,
    lambda: f64,
    /// Exact network-mean activity fraction.
    theta_mean: Option<f64>,
    /// pi(E) + pi(O).
    dominant_mass: Option<f64>,
    /// Exact mean even-to-odd first-passage time.
    e_t_eo: Option<f64>,
    /// Simulated mean delay at the tagged node (when rho > 0).
    e_w: Option<f64>,
    conductance_bound: Option<f64>,
    /// 1 / (4 - 2 rho).
    delay_ratio_lower_bound: f64,
    status: String,
    message: String,
}

#[derive(Serialize)]
struct SweepReport {
    varying: &'static str,
    rows: Vec<SweepRow>,
}

fn cmd_sweep(resolved: &Resolved) -> Result<(), CliError> {
    let echo = &resolved.echo;
    let (varying, points): (&'static str, Vec<(f64, f64)>) =
        match (&echo.sigma_grid, &echo.rho_grid) {
            (Some(sg), None) => ("sigma", sg.iter().map(|&s| (s, echo.rho)).collect()),
            (None, Some(rg)) => ("rho", rg.iter().map(|&r| (echo.sigma, r)).collect()),
            _ => {
                return Err(CliError::Config(
                    "sweep needs exactly one of --sigma-grid or --rho-grid".into(),
                ))
            }
        };
    let graph = torus(echo.l)?;
    let space = enumerate(&graph, echo.enum_cap)?;
    let set_s = build_set_s(&space)?;
    let (e_id, o_id) = space
        .dominant_ids()
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(k, &(sigma, rho))| {
            let mut row = SweepRow {
                sigma,
                rho,
                lambda: 0.5 * rho * echo.mu,
                theta_mean: None,
                dominant_mass: None,
                e_t_eo: None,
                e_w: None,
                conductance_bound: None,
                delay_ratio_lower_bound: 1.0 / (4.0 - 2.0 * rho),
                status: "ok".into(),
                message: String::new(),
            };
            let mut errs: Vec<String> = Vec::new();

            match ActivityLaw::homogeneous(&space, sigma) {
                Ok(law) => {
                    let n = space.n_vertices() as f64;
                    let theta = (0..space.n_states() as StateId)
                        .map(|i| law.prob(i) * space.n_active(i) as f64)
                        .sum::<f64>()
                        / n;
                    row.theta_mean = Some(theta);
                    match law.dominant_mass(&space) {
                        Ok(m) => row.dominant_mass = Some(m),
                        Err(e) => errs.push(e.to_string()),
                    }
                }
                Err(e) => errs.push(e.to_string()),
            }

            if sigma > 1.0 {
                match conductance_of_s(&space, &set_s, sigma) {
                    Ok(c) => row.conductance_bound = Some(c.bound),
                    Err(e) => errs.push(e.to_string()),
                }
            }

            if sigma <= MAX_SIGMA_FOR_SOLVES {
                match UniformizedChain::build(&space, sigma * echo.p * echo.mu, echo.p, echo.mu)
                    .and_then(|chain| mean_hitting_time(&chain, e_id, &[o_id]))
                {
                    Ok(ht) => row.e_t_eo = Some(ht.time),
                    Err(e) => errs.push(e.to_string()),
                }
            } else {
                errs.push(format!(
                    "sigma = {sigma} beyond conditioning threshold; exact passage time skipped"
                ));
            }

            if rho > 0.0 {
                match NetworkParams::homogeneous(
                    0.5 * rho * echo.mu,
                    echo.mu,
                    sigma * echo.p * echo.mu,
                    echo.p,
                )
                .and_then(|p| {
                    let config = ExperimentConfig::new(
                        echo.horizon,
                        echo.warmup,
                        echo.seed + 1_000 * k as u64,
                    );
                    run_replicated_delay_experiment(
                        &graph,
                        &p,
                        &config,
                        echo.replicas.max(2),
                    )
                }) {
                    Ok(rep) => row.e_w = Some(rep.mean_delay.value),
                    Err(e) => errs.push(e.to_string()),
                }
            }

            if !errs.is_empty() {
                row.status = "partial".into();
                row.message = errs.join("; ");
            }
            row
        })
        .collect();

    if let Some(path) = &resolved.trace {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "sigma,rho,lambda,theta_mean,dominant_mass,e_t_eo,e_w,conductance_bound,\
             delay_ratio_lower_bound,status,message"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
        for r in &rows {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{},{},{},{},{},{:.12e},{},{}",
                r.sigma,
                r.rho,
                r.lambda,
                opt(r.theta_mean),
                opt(r.dominant_mass),
                opt(r.e_t_eo),
                opt(r.e_w),
                opt(r.conductance_bound),
                r.delay_ratio_lower_bound,
                r.status,
                r.message.replace(',', ";")
            )?;
        }
        w.flush()?;
    }

    let mut s = String::new();
    let _ = writeln!(s, "rows = {}", rows.len());
    for r in &rows {
        let _ = writeln!(
            s,
            "sigma = {:.6} rho = {:.6} e_t_eo = {} status = {}",
            r.sigma,
            r.rho,
            r.e_t_eo.map_or("-".into(), |x| format!("{x:.11e}")),
            r.status
        );
    }
    emit(resolved, "sweep", SweepReport { varying, rows }, &s)
}
