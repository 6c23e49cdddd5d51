//! `sched-mdp`: config-driven solver front end.
//!
//! Every command reads a JSON config describing the sensor fleet, writes
//! its artifacts into an output directory, and finishes with a
//! `manifest.json` recording the config hash, crate versions, and
//! effective settings. Reruns with identical inputs produce byte-identical
//! files.

mod config;
mod output;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use sched_mdp_core::estimation::SteadyState;
use sched_mdp_core::mdp::{build_instance, MdpInstance, MdpState, SystemConfig};
use sched_mdp_core::sim::{default_burn_in, monte_carlo_validate, rollout, McConfig};
use sched_mdp_core::solver::{
    discounted_value_iteration, evaluate_policy, relative_value_iteration, SolverMode,
    SolverOptions,
};
use sched_mdp_core::structure::{analyze, threshold_boundary, StructureReport};
use sched_mdp_core::Error as CoreError;

use config::{RunConfig, DEFAULT_MC_RUNS, DEFAULT_MC_SEED};
use output::{csv_num, Effective, Manifest, OutputDir, Versions};

/// Process exit codes, stable across versions: 2 config/validation,
/// 3 non-convergence, 4 truncation too tight, 5 structural violations.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    pub(crate) fn validation(message: String) -> Self {
        Self { code: 2, message }
    }

    pub(crate) fn other(message: String) -> Self {
        Self { code: 1, message }
    }

    /// Wraps a core error raised while interpreting a config section,
    /// prefixing the field path.
    pub(crate) fn at_field(prefix: &str, err: CoreError) -> Self {
        let message = match &err {
            CoreError::InvalidModel { field, reason } => format!("{prefix}.{field}: {reason}"),
            other => format!("{prefix}: {other}"),
        };
        Self { code: Self::code_for(&err), message }
    }

    fn code_for(err: &CoreError) -> u8 {
        match err {
            CoreError::InvalidModel { .. }
            | CoreError::DimensionMismatch(_)
            | CoreError::InvalidAction(_)
            | CoreError::InvalidOptions(_)
            | CoreError::UnknownState(_)
            | CoreError::StateExplosion { .. } => 2,
            CoreError::NonConvergence { .. }
            | CoreError::MaxIterations { .. }
            | CoreError::SingularInnovation => 3,
            CoreError::TruncationTooTight { .. } => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        Self { code: Self::code_for(&err), message: err.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "sched-mdp",
    version,
    about = "Optimal transmission scheduling for multi-sensor remote estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the holding-time truncation.
    #[arg(long, global = true)]
    tau_max: Option<u32>,
    /// Override the discount factor (discounted mode only).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Additionally dump the enumerated decision process as JSON.
    #[arg(long, global = true)]
    dump_mdp: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Per-sensor steady-state covariance and staleness cost table.
    SteadyState,
    /// Solve for the optimal schedule; writes the solution and policy.
    Solve,
    /// Solve, then audit the policy's structural invariants.
    Verify,
    /// Extract the two-sensor switching boundary as CSV.
    Boundary,
    /// Deterministic closed-loop rollout of the optimal policy.
    Simulate,
    /// Monte Carlo check of predicted versus sampled estimation error.
    ValidateMc,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SteadyState => "steady-state",
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Boundary => "boundary",
            Command::Simulate => "simulate",
            Command::ValidateMc => "validate-mc",
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let config_path = cli.config.as_ref().ok_or_else(|| {
        CliError::validation("missing required option --config <PATH>".into())
    })?;
    let raw = fs::read(config_path).map_err(|e| {
        CliError::validation(format!("reading {}: {e}", config_path.display()))
    })?;
    let cfg = RunConfig::parse(std::str::from_utf8(&raw).map_err(|e| {
        CliError::validation(format!("{}: not UTF-8: {e}", config_path.display()))
    })?)?;

    let out_root = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::create(&out_root)?;

    let sys = cfg.system_config(cli.tau_max)?;
    let (mode, opts) = cfg.solver_options(cli.alpha)?;
    let seed = cli.seed.or(cfg.simulation.seed);

    let code = dispatch(cli, &cfg, &sys, mode, &opts, seed, &mut out)?;

    let manifest = Manifest {
        command: cli.command.name().to_string(),
        config_sha256: output::sha256_hex(&raw),
        versions: Versions {
            cli: env!("CARGO_PKG_VERSION").to_string(),
            core: sched_mdp_core::VERSION.to_string(),
        },
        effective: Effective {
            tau_max: sys.tau_max,
            mode: match mode {
                SolverMode::RelativeVi => "relative_vi".to_string(),
                SolverMode::DiscountedVi => "discounted_vi".to_string(),
            },
            alpha: matches!(mode, SolverMode::DiscountedVi).then_some(opts.alpha),
            seed: (cli.command == Command::ValidateMc)
                .then_some(seed.unwrap_or(DEFAULT_MC_SEED)),
        },
        artifacts: Vec::new(),
    };
    out.write_manifest(&manifest)?;
    Ok(code)
}

fn dispatch(
    cli: &Cli,
    cfg: &RunConfig,
    sys: &SystemConfig,
    mode: SolverMode,
    opts: &SolverOptions,
    seed: Option<u64>,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    match cli.command {
        Command::SteadyState => cmd_steady_state(sys, out),
        Command::Solve => cmd_solve(sys, mode, opts, cli.dump_mdp, out),
        Command::Verify => cmd_verify(sys, opts, cli.dump_mdp, out),
        Command::Boundary => cmd_boundary(sys, mode, opts, cli.dump_mdp, out),
        Command::Simulate => cmd_simulate(cfg, sys, mode, opts, cli.dump_mdp, out),
        Command::ValidateMc => cmd_validate_mc(cfg, sys, mode, opts, seed, cli.dump_mdp, out),
    }
}

fn cmd_steady_state(sys: &SystemConfig, out: &mut OutputDir) -> Result<u8, CliError> {
    let mut sensors = Vec::new();
    for (i, model) in sys.models.iter().enumerate() {
        let steady = SteadyState::compute_default(model, sys.tau_max)
            .map_err(|e| CliError::at_field(&format!("system.models[{i}]"), e))?;
        sensors.push(json!({
            "sensor": i + 1,
            "d": model.d,
            "pbar": matrix_rows(&steady.pbar),
            "cost_table": steady.cost_table,
        }));
    }
    out.write_json(
        "steady_state.json",
        &json!({ "tau_max": sys.tau_max, "sensors": sensors }),
    )?;
    Ok(0)
}

/// Computes the policy for the configured mode together with a JSON
/// summary of the solve and the value vector backing the policy.
fn solve_configured(
    mdp: &MdpInstance,
    mode: SolverMode,
    opts: &SolverOptions,
) -> Result<(Vec<u32>, Vec<f64>, serde_json::Value), CliError> {
    match mode {
        SolverMode::RelativeVi => {
            let sol = relative_value_iteration(mdp, opts)?;
            let summary = json!({
                "mode": "relative_vi",
                "rho_star": sol.rho_star,
                "iterations": sol.iterations,
                "span_residual": sol.span_residual,
                "span_tol": opts.effective_span_tol(mdp),
            });
            Ok((sol.policy, sol.v, summary))
        }
        SolverMode::DiscountedVi => {
            let sol = discounted_value_iteration(mdp, opts)?;
            let summary = json!({
                "mode": "discounted_vi",
                "alpha": opts.alpha,
                "rho_estimate": sol.rho_estimate,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "span_tol": opts.effective_span_tol(mdp),
            });
            Ok((sol.policy, sol.u, summary))
        }
    }
}

fn cmd_solve(
    sys: &SystemConfig,
    mode: SolverMode,
    opts: &SolverOptions,
    dump: bool,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    let (_, mdp) = build_instance(sys)?;
    let (policy, values, mut summary) = solve_configured(&mdp, mode, opts)?;

    // Truncation audit before anything is written: if the optimal
    // recurrent class touches the clamp, the truncated model does not
    // represent the real system and the solve is rejected.
    let eval = evaluate_policy(&mdp, &policy)?;
    summary["num_states"] = json!(mdp.num_states());
    summary["num_actions"] = json!(mdp.num_actions());
    summary["audit"] = json!({
        "cycle_length": eval.recurrent.len(),
        "cycle_mean": eval.rho,
    });

    out.write_json("solution.json", &summary)?;
    write_policy_csv(out, &mdp, &policy, &values)?;
    if dump {
        dump_mdp(out, &mdp)?;
    }
    Ok(0)
}

fn cmd_verify(
    sys: &SystemConfig,
    opts: &SolverOptions,
    dump: bool,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    let (_, mdp) = build_instance(sys)?;
    // Structural invariants concern the average-cost optimum, so verify
    // always solves in relative-value mode.
    let sol = relative_value_iteration(&mdp, opts)?;
    let value_tol = 10.0 * opts.effective_span_tol(&mdp);
    let report = analyze(&mdp, &sol, value_tol);

    out.write_json("structure_report.json", &report_json(&mdp, &report, value_tol))?;
    if dump {
        dump_mdp(out, &mdp)?;
    }
    Ok(if report.is_clean() { 0 } else { 5 })
}

fn cmd_boundary(
    sys: &SystemConfig,
    mode: SolverMode,
    opts: &SolverOptions,
    dump: bool,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    let (_, mdp) = build_instance(sys)?;
    let (policy, _, _) = solve_configured(&mdp, mode, opts)?;
    let boundary = threshold_boundary(&mdp, &policy).ok_or_else(|| {
        CliError::validation(
            "boundary requires exactly two sensors and a single slot (m = 1)".into(),
        )
    })?;

    let rows = boundary.iter().map(|p| {
        vec![
            p.tau_other.to_string(),
            p.min_tau.map(|t| t.to_string()).unwrap_or_default(),
        ]
    });
    out.write_csv("boundary.csv", "tau_2,min_tau_1", rows)?;
    if dump {
        dump_mdp(out, &mdp)?;
    }
    Ok(0)
}

fn cmd_simulate(
    cfg: &RunConfig,
    sys: &SystemConfig,
    mode: SolverMode,
    opts: &SolverOptions,
    dump: bool,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    let (_, mdp) = build_instance(sys)?;
    let (policy, _, _) = solve_configured(&mdp, mode, opts)?;
    let trace = rollout(&mdp, &policy, &MdpState::initial(sys), cfg.rollout_horizon())?;

    let rows = (0..trace.costs.len()).map(|i| {
        vec![
            i.to_string(),
            csv_num(trace.costs[i]),
            csv_num(trace.running_average[i]),
        ]
    });
    out.write_csv("trace.csv", "step,cost,running_average", rows)?;
    if dump {
        dump_mdp(out, &mdp)?;
    }
    Ok(0)
}

fn cmd_validate_mc(
    cfg: &RunConfig,
    sys: &SystemConfig,
    mode: SolverMode,
    opts: &SolverOptions,
    seed: Option<u64>,
    dump: bool,
    out: &mut OutputDir,
) -> Result<u8, CliError> {
    let (steady, mdp) = build_instance(sys)?;
    let (policy, _, _) = solve_configured(&mdp, mode, opts)?;

    let burn_in = cfg.simulation.burn_in.unwrap_or_else(|| default_burn_in(&sys.models));
    let mc = McConfig {
        horizon: cfg.simulation.horizon.unwrap_or(burn_in + 100),
        runs: cfg.simulation.runs.unwrap_or(DEFAULT_MC_RUNS),
        seed: seed.unwrap_or(DEFAULT_MC_SEED),
        burn_in,
    };
    let summary =
        monte_carlo_validate(&sys.models, &steady, &mdp, &policy, &MdpState::initial(sys), &mc)?;

    let mut rows = Vec::new();
    for sensor in &summary.per_sensor {
        for k in 0..sensor.predicted.len() {
            rows.push(vec![
                (sensor.sensor + 1).to_string(),
                (sensor.first_step + k).to_string(),
                csv_num(sensor.predicted[k]),
                csv_num(sensor.empirical[k]),
                csv_num(sensor.stderr[k]),
            ]);
        }
    }
    out.write_csv("mc_summary.csv", "sensor,step,predicted,empirical,stderr", rows)?;

    let per_sensor: Vec<_> = summary
        .per_sensor
        .iter()
        .map(|s| {
            json!({
                "sensor": s.sensor + 1,
                "max_z": s.max_z,
                "local_filter_gap": s.local_gap,
            })
        })
        .collect();
    out.write_json(
        "mc_summary.json",
        &json!({
            "runs": summary.runs,
            "horizon": summary.horizon,
            "burn_in": summary.burn_in,
            "max_z": summary.max_z,
            "within_three_se": summary.within_three_se,
            "per_sensor": per_sensor,
        }),
    )?;
    if dump {
        dump_mdp(out, &mdp)?;
    }
    Ok(0)
}

fn write_policy_csv(
    out: &mut OutputDir,
    mdp: &MdpInstance,
    policy: &[u32],
    values: &[f64],
) -> Result<(), CliError> {
    let n = mdp.d.len();
    let mut header = String::from("state");
    for i in 1..=n {
        header.push_str(&format!(",tau_{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",nu_{i}"));
    }
    header.push_str(",clamped,cost,v,action");

    let rows = (0..mdp.num_states()).map(|s| {
        let state = &mdp.states[s];
        let mut row = Vec::with_capacity(2 * n + 5);
        row.push(s.to_string());
        row.extend(state.tau.iter().map(|t| t.to_string()));
        row.extend(state.nu.iter().map(|v| v.to_string()));
        row.push((mdp.clamped[s] as u8).to_string());
        row.push(csv_num(mdp.cost[s]));
        row.push(csv_num(values[s]));
        row.push(action_label(&mdp.actions[policy[s] as usize]));
        row
    });
    out.write_csv("policy.csv", &header, rows)
}

/// Renders an action as 1-based sensor indices, e.g. `1` or `1+3`.
fn action_label(action: &[usize]) -> String {
    action
        .iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join("+")
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn state_json(mdp: &MdpInstance, s: usize) -> serde_json::Value {
    json!({
        "index": s,
        "tau": mdp.states[s].tau,
        "nu": mdp.states[s].nu,
    })
}

fn report_json(mdp: &MdpInstance, report: &StructureReport, value_tol: f64) -> serde_json::Value {
    let consistency: Vec<_> = report
        .consistency
        .iter()
        .map(|v| {
            json!({
                "origin": state_json(mdp, v.origin),
                "state": state_json(mdp, v.state),
                "sensor": v.sensor + 1,
                "step": v.step,
                "action": v.action.iter().map(|i| i + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    let threshold: Vec<_> = report
        .threshold
        .iter()
        .map(|v| {
            json!({
                "sensor": v.sensor + 1,
                "lower": state_json(mdp, v.lower),
                "upper": state_json(mdp, v.upper),
                "lower_action": v.lower_action.iter().map(|i| i + 1).collect::<Vec<_>>(),
                "upper_action": v.upper_action.iter().map(|i| i + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    let monotonicity: Vec<_> = report
        .monotonicity
        .iter()
        .map(|v| {
            json!({
                "sensor": v.sensor + 1,
                "lower": state_json(mdp, v.lower),
                "upper": state_json(mdp, v.upper),
                "v_lower": v.v_lower,
                "v_upper": v.v_upper,
            })
        })
        .collect();
    let boundary = report.boundary.as_ref().map(|points| {
        points
            .iter()
            .map(|p| json!({ "tau_other": p.tau_other, "min_tau": p.min_tau }))
            .collect::<Vec<_>>()
    });
    json!({
        "clean": report.is_clean(),
        "value_tol": value_tol,
        "consistency": consistency,
        "threshold": threshold,
        "monotonicity": monotonicity,
        "boundary": boundary,
    })
}

fn dump_mdp(out: &mut OutputDir, mdp: &MdpInstance) -> Result<(), CliError> {
    let states: Vec<_> = (0..mdp.num_states()).map(|s| state_json(mdp, s)).collect();
    let next: Vec<Vec<u32>> = (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| mdp.next_of(s, a) as u32)
                .collect()
        })
        .collect();
    let actions: Vec<Vec<usize>> = mdp
        .actions
        .iter()
        .map(|a| a.iter().map(|i| i + 1).collect())
        .collect();
    out.write_json(
        "mdp_dump.json",
        &json!({
            "num_states": mdp.num_states(),
            "num_actions": mdp.num_actions(),
            "initial": mdp.initial,
            "d": mdp.d,
            "actions": actions,
            "states": states,
            "next": next,
            "cost": mdp.cost,
            "clamped": mdp.clamped,
        }),
    )
}
