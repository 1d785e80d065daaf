//! Subcommand implementations. Each command turns a resolved configuration
//! into output text; [`run`] adds loading, overrides and writing.

use std::path::{Path, PathBuf};

use aoii_core::{
    extract_thresholds, g_wait, replicate, rvi_solve, solve_cmdp, ChannelModel, CmdpSolution, LagrangianEvaluator,
    Policy, Regime, SimReport, SourceModel, Threshold,
};
use rayon::prelude::*;

use crate::config::{Format, Models, RunConfig, ValidateGrid};
use crate::format::{comment_header, num, opt_int, Record, Table};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Simulate,
    Validate,
    WaitAoii,
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reps: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.output.path = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(reps) = self.reps {
            cfg.sim.n_reps = reps;
        }
    }
}

/// Rendered output plus the number of failed validation checks.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub failures: usize,
}

/// Loads the configuration, runs `command` and writes its output.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    let outcome = execute(command, &cfg)?;
    match &cfg.output.path {
        Some(path) => std::fs::write(path, &outcome.text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => print!("{}", outcome.text),
    }
    if outcome.failures > 0 {
        return Err(CliError::Validation(outcome.failures));
    }
    Ok(())
}

/// Runs `command` on an already resolved configuration.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let models = cfg.models()?;
    let header = comment_header(&cfg.to_toml());
    let (body, failures) = match command {
        Command::Solve => (record_output(cfg, &solve_record(cfg, &models)?)?, 0),
        Command::Simulate => (record_output(cfg, &simulate_record(cfg, &models)?)?, 0),
        Command::WaitAoii => (record_output(cfg, &wait_record(cfg, &models)?)?, 0),
        Command::Sweep => (table_output(cfg, &sweep_table(cfg, &models)?)?, 0),
        Command::Validate => {
            let (table, failures) = validate_table(cfg, &models)?;
            (table_output(cfg, &table)?, failures)
        }
    };
    Ok(Outcome {
        text: format!("{header}{body}"),
        failures,
    })
}

fn record_output(cfg: &RunConfig, record: &Record) -> Result<String, CliError> {
    Ok(match cfg.output.format.unwrap_or(Format::Toml) {
        Format::Toml => record.render(),
        Format::Csv => record.render_csv(),
    })
}

fn table_output(cfg: &RunConfig, table: &Table) -> Result<String, CliError> {
    match cfg.output.format.unwrap_or(Format::Csv) {
        Format::Csv => Ok(table.render()),
        Format::Toml => Err(CliError::Config("output.format: tables are written as csv".into())),
    }
}

fn solution_policy(s: &CmdpSolution) -> Policy {
    match s.regime {
        Regime::NeverTransmit => Policy::NeverTransmit,
        Regime::PureThreshold => Policy::Threshold {
            n0: s.n_high.expect("threshold regime has a threshold"),
        },
        Regime::Mixed => Policy::Mixed {
            n_low: s.n_low.expect("mixed regime has a lower threshold"),
            rho_high: s.rho_high,
        },
    }
}

fn solve_record(cfg: &RunConfig, m: &Models) -> Result<Record, CliError> {
    let budget = cfg.budget_rate()?;
    let s = solve_cmdp(budget, &m.source, &m.channel, &m.penalty, &m.solver)?;
    let d = &s.diagnostics;
    let mut r = Record::new();
    r.text("regime", s.regime.as_str())
        .num("budget", s.budget)
        .num("lambda_star", s.lambda_star);
    opt_field(&mut r, "n_high", s.n_high.map(|v| v as f64));
    opt_field(&mut r, "n_low", s.n_low.map(|v| v as f64));
    r.num("rho_high", s.rho_high).num("rate_high", s.rate_high);
    opt_field(&mut r, "rate_low", s.rate_low);
    r.num("aoii_high", s.aoii_high);
    opt_field(&mut r, "aoii_low", s.aoii_low);
    r.num("predicted_rate", s.predicted_rate)
        .num("predicted_aoii", s.predicted_aoii)
        .int("sigma_depth", d.sigma_depth as u64)
        .int("m_depth", d.m_depth as u64)
        .int("doublings", d.doublings as u64)
        .int("bisections", d.bisections as u64)
        .int("threshold_evaluations", d.threshold_evaluations as u64)
        .num("truncation_mass", d.truncation_mass)
        .boolean("trace_monotone", d.trace_is_monotone())
        .text("notes", &d.notes.join("; "));
    Ok(r)
}

fn opt_field(r: &mut Record, key: &str, value: Option<f64>) {
    match value {
        Some(v) => r.num(key, v),
        None => r.text(key, "NA"),
    };
}

fn simulate_record(cfg: &RunConfig, m: &Models) -> Result<Record, CliError> {
    let fixed = cfg.policy.and_then(|p| p.fixed());
    let policy = match fixed {
        Some(p) => p,
        None => {
            let s = solve_cmdp(cfg.budget_rate()?, &m.source, &m.channel, &m.penalty, &m.solver)?;
            solution_policy(&s)
        }
    };
    let sim = &cfg.sim;
    let rep = replicate(&policy, &m.source, &m.channel, &m.penalty, sim.horizon, sim.seed, sim.n_reps)?;
    let mut r = Record::new();
    match policy {
        Policy::NeverTransmit => {
            r.text("policy", "never-transmit");
        }
        Policy::Threshold { n0 } => {
            r.text("policy", "threshold").int("n0", n0);
        }
        Policy::Mixed { n_low, rho_high } => {
            r.text("policy", "mixed").int("n_low", n_low).num("rho_high", rho_high);
        }
        Policy::Periodic { rate } => {
            r.text("policy", "periodic").num("rate", rate);
        }
    }
    sim_fields(&mut r, &rep);
    Ok(r)
}

fn sim_fields(r: &mut Record, rep: &SimReport) {
    r.int("horizon", rep.horizon)
        .int("seed", rep.seed)
        .int("n_reps", rep.replications as u64)
        .num("avg_aoii", rep.avg_aoii)
        .num("aoii_stderr", rep.aoii_stderr)
        .num("avg_rate", rep.avg_rate)
        .num("rate_stderr", rep.rate_stderr)
        .int("max_delta_seen", rep.max_delta_seen)
        .int("transmissions", rep.transmissions)
        .int("decode_successes", rep.decode_successes);
}

fn wait_record(cfg: &RunConfig, m: &Models) -> Result<Record, CliError> {
    let g = g_wait(&m.source, &m.penalty, &m.solver.series)?;
    let sim = &cfg.sim;
    let rep = replicate(
        &Policy::NeverTransmit,
        &m.source,
        &m.channel,
        &m.penalty,
        sim.horizon,
        sim.seed,
        sim.n_reps,
    )?;
    let mut r = Record::new();
    r.num("alpha", m.source.alpha())
        .num("mu", m.source.mu())
        .boolean("waiting_is_optimal", m.source.waiting_is_optimal())
        .num("g_wait", g);
    sim_fields(&mut r, &rep);
    Ok(r)
}

/// Column order of the sweep table.
pub const SWEEP_COLUMNS: [&str; 13] = [
    "R",
    "n_high",
    "n_low",
    "rho_high",
    "rate_analytic",
    "aoii_analytic",
    "rate_sim",
    "aoii_sim",
    "aoii_periodic",
    "regime",
    "aoii_sim_stderr",
    "aoii_periodic_stderr",
    "status",
];

fn sweep_row(budget: f64, cfg: &RunConfig, m: &Models) -> Vec<String> {
    let sim = &cfg.sim;
    let attempt = || -> Result<Vec<String>, CliError> {
        let s = solve_cmdp(budget, &m.source, &m.channel, &m.penalty, &m.solver)?;
        let run = |p: &Policy| replicate(p, &m.source, &m.channel, &m.penalty, sim.horizon, sim.seed, sim.n_reps);
        let optimal = run(&solution_policy(&s))?;
        let periodic = run(&Policy::Periodic { rate: budget })?;
        Ok(vec![
            num(budget),
            opt_int(s.n_high),
            opt_int(s.n_low),
            if s.regime == Regime::Mixed { num(s.rho_high) } else { "NA".into() },
            num(s.predicted_rate),
            num(s.predicted_aoii),
            num(optimal.avg_rate),
            num(optimal.avg_aoii),
            num(periodic.avg_aoii),
            s.regime.as_str().into(),
            num(optimal.aoii_stderr),
            num(periodic.aoii_stderr),
            "ok".into(),
        ])
    };
    attempt().unwrap_or_else(|e| {
        let mut row = vec!["NA".to_string(); SWEEP_COLUMNS.len()];
        row[0] = num(budget);
        row[SWEEP_COLUMNS.len() - 1] = format!("error: {e}");
        row
    })
}

/// One row per budget. Every row simulates with the same seed so that
/// neighbouring budgets share random numbers.
fn sweep_table(cfg: &RunConfig, m: &Models) -> Result<Table, CliError> {
    let grid = cfg.budget_grid()?;
    let rows: Vec<Vec<String>> = grid.par_iter().map(|&b| sweep_row(b, cfg, m)).collect();
    let mut table = Table::new(&SWEEP_COLUMNS);
    for row in rows {
        table.row(row);
    }
    Ok(table)
}

/// Column order of the validation report.
pub const VALIDATE_COLUMNS: [&str; 7] = ["check", "config", "lambda", "status", "expected", "measured", "discrepancy"];

struct Check {
    name: &'static str,
    pass: bool,
    expected: String,
    measured: String,
    discrepancy: f64,
}

fn default_grid() -> Vec<(SourceModel, ChannelModel, String)> {
    let mut out = Vec::new();
    for alpha in [0.2, 0.5, 0.8] {
        for n in [2u32, 16, 128] {
            for p_e in [0.1, 0.5, 0.9] {
                for c in [0.5, 1.0] {
                    for r_max in [0u32, 2, 64] {
                        let source = SourceModel::symmetric(alpha, n).expect("grid source");
                        let channel = ChannelModel::soft(p_e, c, Some(r_max)).expect("grid channel");
                        let label = format!("alpha={alpha} N={n} p_e={p_e} c={c} r_max={r_max}");
                        out.push((source, channel, label));
                    }
                }
            }
        }
    }
    out
}

fn validate_point(
    source: &SourceModel,
    channel: &ChannelModel,
    lambda: f64,
    cfg: &RunConfig,
    m: &Models,
) -> Result<Vec<Check>, CliError> {
    let v = &cfg.validate;
    let analytic_channel = if v.perturb_p_e != 0.0 {
        ChannelModel::new(
            (channel.p_e() + v.perturb_p_e).clamp(1e-9, 1.0 - 1e-9),
            channel.c(),
            channel.r_max(),
            channel.combining(),
        )?
    } else {
        *channel
    };
    let rvi = rvi_solve(lambda, source, channel, &m.penalty, &v.rvi())?;
    let mut checks = vec![Check {
        name: "rvi-converged",
        pass: rvi.converged,
        expected: num(v.span_tol),
        measured: num(rvi.span),
        discrepancy: rvi.span,
    }];
    let rvi_thresholds = extract_thresholds(&rvi);
    let relative = |a: f64, b: f64| ((a - b) / b).abs();
    if source.waiting_is_optimal() {
        let g = g_wait(source, &m.penalty, &m.solver.series)?;
        checks.push(Check {
            name: "waiting-never-transmits",
            pass: rvi_thresholds.is_empty(),
            expected: "none".into(),
            measured: opt_int(rvi_thresholds.get(&0).copied()),
            discrepancy: rvi_thresholds.len() as f64,
        });
        let d = relative(rvi.g, g);
        checks.push(Check {
            name: "waiting-cost",
            pass: d <= v.g_tol,
            expected: num(g),
            measured: num(rvi.g),
            discrepancy: d,
        });
        return Ok(checks);
    }
    let mut ev = LagrangianEvaluator::new(source, &analytic_channel, &m.penalty, &m.solver.series)?;
    let analytic = ev.optimal_threshold(lambda)?;
    let rvi_n0 = rvi_thresholds.get(&0).copied();
    let analytic_n0 = analytic.n0_star.value();
    checks.push(Check {
        name: "threshold",
        pass: analytic_n0 == rvi_n0,
        expected: opt_int(analytic_n0),
        measured: opt_int(rvi_n0),
        discrepancy: match (analytic_n0, rvi_n0) {
            (Some(a), Some(b)) => a.abs_diff(b) as f64,
            (None, None) => 0.0,
            _ => f64::INFINITY,
        },
    });
    if let Threshold::At(n0) = analytic.n0_star {
        let g = ev.g(n0, lambda)?;
        let d = relative(rvi.g, g);
        checks.push(Check {
            name: "cost",
            pass: d <= v.g_tol,
            expected: num(g),
            measured: num(rvi.g),
            discrepancy: d,
        });
    }
    Ok(checks)
}

fn validate_table(cfg: &RunConfig, m: &Models) -> Result<(Table, usize), CliError> {
    let v = &cfg.validate;
    if v.lambdas.is_empty() || v.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(CliError::Config("validate.lambdas: need finite values >= 0".into()));
    }
    v.rvi().validate()?;
    let points = match v.grid {
        ValidateGrid::Default => default_grid(),
        ValidateGrid::Config => vec![(m.source, m.channel, "config".to_string())],
    };
    let jobs: Vec<(usize, f64)> = (0..points.len())
        .flat_map(|i| v.lambdas.iter().map(move |&l| (i, l)))
        .collect();
    let results: Vec<Result<Vec<Check>, CliError>> = jobs
        .par_iter()
        .map(|&(i, lambda)| validate_point(&points[i].0, &points[i].1, lambda, cfg, m))
        .collect();
    let mut table = Table::new(&VALIDATE_COLUMNS);
    let mut failures = 0;
    for (&(i, lambda), result) in jobs.iter().zip(results) {
        for check in result? {
            failures += usize::from(!check.pass);
            table.row(vec![
                check.name.into(),
                points[i].2.clone(),
                num(lambda),
                if check.pass { "pass" } else { "fail" }.into(),
                check.expected,
                check.measured,
                num(check.discrepancy),
            ]);
        }
    }
    Ok((table, failures))
}
