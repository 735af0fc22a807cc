//! `oscq`: periodic steady state, Floquet multipliers and amplitude Q of
//! nonlinear oscillators from the command line.
//!
//! Exit codes:
//!
//! | code | meaning                                                  |
//! |------|----------------------------------------------------------|
//! | 0    | success (finite or infinite Q)                           |
//! | 1    | invalid input: usage, unknown model/parameter, bad value, I/O |
//! | 2    | no oscillation (no unit multiplier, equilibrium, no crossings) |
//! | 3    | steady-state or integration failure                      |
//! | 4    | eigenvalue computation failed                            |
//! | 5    | orbit is unstable                                        |
//! | 6    | too few usable cycles in a decay measurement             |

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use oscq_core::analysis::{
    perturb_and_measure, power_balance_curve, resonator_table, Direction, DEFAULT_NOISE_FLOOR,
};
use oscq_core::floquet::{Verdict, DEFAULT_UNIT_TOL};
use oscq_core::models::ModelKind;
use oscq_core::pipeline::{run_q, to_json, QOptions, Report};
use oscq_core::pss::find_pss;
use oscq_core::transient::{integrate, IntegratorConfig};
use oscq_core::{lookup, Error, Method, ModelSpec, PssMode};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "oscq", version, about = "Amplitude-stability Q factor of nonlinear oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List registered models with their parameters and defaults.
    List {
        #[arg(long)]
        json: bool,
    },
    /// Transient waveform as CSV.
    Tran(TranArgs),
    /// Periodic steady state: JSON summary, orbit CSV with --out.
    Pss(PssArgs),
    /// Full Floquet analysis and Q report.
    Q(QArgs),
    /// Perturbation-decay experiment compared against |λ2|.
    Perturb(PerturbArgs),
    /// Power-balance curves of the negative-resistance LC oscillator.
    Balance(BalanceArgs),
    /// Closed-form Q of a damped linear resonator.
    Resonator(ResonatorArgs),
}

#[derive(Debug, Clone, Args)]
struct ModelArgs {
    #[arg(long)]
    model: String,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, f64)>,
    /// backward-euler (be) or trapezoidal (trap).
    #[arg(long, default_value = "trapezoidal", value_parser = parse_method)]
    method: Method,
    #[arg(long, default_value_t = 2000)]
    steps_per_cycle: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct SteadyArgs {
    /// auto, shoot or detect.
    #[arg(long, default_value = "auto", value_parser = parse_pss_mode)]
    pss_mode: PssMode,
    #[arg(long, default_value_t = 20.0)]
    warmup: f64,
    #[arg(long, default_value_t = 1e-8)]
    pss_tol: f64,
    #[arg(long, default_value_t = DEFAULT_UNIT_TOL)]
    unit_tol: f64,
}

#[derive(Debug, Args)]
struct TranArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Duration in estimated periods.
    #[arg(long, default_value_t = 20.0)]
    cycles: f64,
    /// Initial state, comma separated; defaults to the model seed.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PssArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    steady: SteadyArgs,
    /// Orbit CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    steady: SteadyArgs,
    /// Orbit CSV of the steady state.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter sweep, e.g. K=1,5,20.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<(String, Vec<f64>)>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    steady: SteadyArgs,
    /// Kick size relative to orbit amplitude.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 40)]
    cycles: usize,
    /// lambda2 or random; defaults to lambda2 for a finite Q, random otherwise.
    #[arg(long)]
    direction: Option<String>,
    #[arg(long, default_value_t = DEFAULT_NOISE_FLOOR)]
    noise_floor: f64,
    /// Decay CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BalanceArgs {
    #[arg(long = "gain", default_value_t = 1.0)]
    k: f64,
    #[arg(long = "steepness", default_value_t = 2.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, default_value_t = 0.01)]
    vmin: f64,
    #[arg(long, default_value_t = 3.0)]
    vmax: f64,
    #[arg(long, default_value_t = 300)]
    points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ResonatorArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.02,0.01,0.005")]
    zeta: Vec<f64>,
    #[arg(long)]
    json: bool,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("'{value}' is not a number"))?;
    Ok((name.trim().to_string(), value))
}

fn parse_sweep(s: &str) -> Result<(String, Vec<f64>), String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=V1,V2,..., got '{s}'"))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("sweep needs at least one value".into());
    }
    Ok((name.trim().to_string(), values))
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_pss_mode(s: &str) -> Result<PssMode, String> {
    PssMode::parse(s).map_err(|e| e.to_string())
}

/// A failed command: message for standard error plus exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::UnknownModel(_)
        | Error::UnknownParameter { .. }
        | Error::InvalidParameter { .. }
        | Error::InvalidArgument(_)
        | Error::Io(_) => 1,
        Error::NoOscillation(_) | Error::ConstantSolution | Error::NoIntersection => 2,
        Error::ModelDomain { .. }
        | Error::Singular { .. }
        | Error::StepFailure { .. }
        | Error::ShootingDivergence { .. }
        | Error::DegenerateOrbit { .. } => 3,
        Error::EigenFailure { .. } => 4,
        Error::TooFewCycles { .. } => 6,
    }
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Finite | Verdict::Infinite => 0,
        Verdict::NotOscillating => 2,
        Verdict::Unstable => 5,
    }
}

type CmdResult = Result<u8, Failure>;

fn q_options(m: &ModelArgs, s: &SteadyArgs) -> QOptions {
    let mut opts = QOptions {
        mode: s.pss_mode,
        unit_tol: s.unit_tol,
        ..QOptions::default()
    };
    opts.pss.method = m.method;
    opts.pss.steps_per_period = m.steps_per_cycle;
    opts.pss.warmup_periods = s.warmup;
    opts.pss.tol = s.pss_tol;
    opts
}

fn resolve(m: &ModelArgs) -> Result<ModelSpec, Failure> {
    Ok(lookup(&m.model, &m.set)?)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        })
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    write_stdout(format!("{}\n", to_json(value)).as_bytes())
}

/// Writes to standard output; a closed pipe downstream is not an error.
fn write_stdout(bytes: &[u8]) -> Result<(), Failure> {
    match io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct ModelEntry {
    name: &'static str,
    description: &'static str,
    states: Vec<String>,
    params: Vec<(String, f64)>,
}

fn cmd_list(json: bool) -> CmdResult {
    let entries: Vec<ModelEntry> = ModelKind::ALL
        .iter()
        .map(|k| {
            let spec = k.spec(&[]).expect("defaults are valid");
            ModelEntry {
                name: k.name(),
                description: k.description(),
                states: spec.system.state_names(),
                params: spec.params.iter().map(|(n, v)| (n.to_string(), v)).collect(),
            }
        })
        .collect();
    if json {
        print_json(&entries)?;
    } else {
        let mut out = io::stdout().lock();
        for e in &entries {
            let params: Vec<String> = e.params.iter().map(|(n, v)| format!("{n}={v:?}")).collect();
            writeln!(out, "{:<15} {}", e.name, e.description)?;
            writeln!(out, "{:<15} states: {}", "", e.states.join(", "))?;
            writeln!(out, "{:<15} params: {}", "", params.join(" "))?;
        }
    }
    Ok(0)
}

fn cmd_tran(args: &TranArgs) -> CmdResult {
    let spec = resolve(&args.model)?;
    let x0 = match &args.x0 {
        Some(v) => {
            if v.len() != spec.system.dim() {
                return Err(Error::InvalidArgument(format!(
                    "--x0 has {} values, model {} has {} states",
                    v.len(),
                    spec.name(),
                    spec.system.dim()
                ))
                .into());
            }
            DVector::from_column_slice(v)
        }
        None => spec.seed.clone(),
    };
    if !(args.cycles > 0.0) {
        return Err(Error::InvalidArgument("--cycles must be positive".into()).into());
    }
    let cfg = IntegratorConfig {
        method: args.model.method,
        ..IntegratorConfig::per_period(args.model.method, spec.period_hint, args.model.steps_per_cycle)
    };
    let wave = integrate(&spec.system, &x0, 0.0, args.cycles * spec.period_hint, &cfg)?;
    match &args.out {
        Some(path) => wave.write_csv(create(path)?)?,
        None => {
            let mut buf = Vec::new();
            wave.write_csv(&mut buf)?;
            write_stdout(&buf)?;
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct PssDoc {
    model: String,
    params: Vec<(String, f64)>,
    #[serde(flatten)]
    summary: oscq_core::pss::PssSummary,
}

fn cmd_pss(args: &PssArgs) -> CmdResult {
    let spec = resolve(&args.model)?;
    let opts = q_options(&args.model, &args.steady);
    let pss = find_pss(&spec.system, &spec.seed, spec.period_hint, opts.mode, &opts.pss)?;
    if let Some(path) = &args.out {
        pss.write_csv(create(path)?)?;
    }
    print_json(&PssDoc {
        model: spec.name().to_string(),
        params: spec.params.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        summary: pss.summary(),
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct SweepPoint {
    parameter: String,
    value: f64,
    report: Option<Report>,
    error: Option<String>,
    exit_code: u8,
}

fn cmd_q(args: &QArgs) -> CmdResult {
    let opts = q_options(&args.model, &args.steady);
    let Some((name, values)) = &args.sweep else {
        let spec = resolve(&args.model)?;
        let run = run_q(&spec, &opts)?;
        if let Some(path) = &args.out {
            run.pss.write_csv(create(path)?)?;
        }
        let report = Report::new(&spec, &run, &opts);
        print_json(&report)?;
        return Ok(verdict_code(report.verdict));
    };
    if args.jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()).into());
    }
    let point = |value: f64| -> SweepPoint {
        let mut model = args.model.clone();
        model.set.retain(|(n, _)| n != name);
        model.set.push((name.clone(), value));
        let result = resolve(&model).and_then(|spec| {
            let run = run_q(&spec, &opts)?;
            Ok(Report::new(&spec, &run, &opts))
        });
        match result {
            Ok(report) => SweepPoint {
                parameter: name.clone(),
                value,
                exit_code: verdict_code(report.verdict),
                report: Some(report),
                error: None,
            },
            Err(f) => SweepPoint {
                parameter: name.clone(),
                value,
                report: None,
                error: Some(f.message),
                exit_code: f.code,
            },
        }
    };
    let points: Vec<SweepPoint> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Failure {
                code: 1,
                message: format!("cannot start worker pool: {e}"),
            })?;
        pool.install(|| values.par_iter().map(|&v| point(v)).collect())
    } else {
        values.iter().map(|&v| point(v)).collect()
    };
    for p in &points {
        if let Some(e) = &p.error {
            eprintln!("oscq: {}={}: {e}", p.parameter, p.value);
        }
    }
    print_json(&points)?;
    Ok(points.iter().map(|p| p.exit_code).find(|&c| c != 0).unwrap_or(0))
}

#[derive(Serialize)]
struct PerturbDoc {
    model: String,
    params: Vec<(String, f64)>,
    verdict: Verdict,
    lambda2_modulus: f64,
    q: Option<f64>,
    fitted_ratio: f64,
    empirical_q: Option<f64>,
    relative_gap: f64,
    non_decaying: bool,
    direction: String,
    eps: f64,
    cycles: usize,
    used_cycles: usize,
    noise_floor: f64,
}

fn cmd_perturb(args: &PerturbArgs) -> CmdResult {
    let spec = resolve(&args.model)?;
    let opts = q_options(&args.model, &args.steady);
    let run = run_q(&spec, &opts)?;
    let report = &run.monodromy.q_report;
    let direction = match args.direction.as_deref() {
        Some("lambda2") => Direction::Lambda2Eigenvector,
        Some("random") => Direction::Random { seed: args.model.seed },
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "unknown direction '{other}' (expected lambda2 or random)"
            ))
            .into())
        }
        None if report.verdict == Verdict::Finite => Direction::Lambda2Eigenvector,
        None => Direction::Random { seed: args.model.seed },
    };
    let m = perturb_and_measure(&spec.system, &run.pss, &direction, args.eps, args.cycles, args.noise_floor)?;
    if let Some(path) = &args.out {
        m.write_csv(create(path)?)?;
    }
    if m.non_decaying {
        eprintln!("oscq: deviation is non-decaying (r = {:.6})", m.fitted_ratio);
    }
    print_json(&PerturbDoc {
        model: spec.name().to_string(),
        params: spec.params.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        verdict: report.verdict,
        lambda2_modulus: report.lambda2_modulus,
        q: report.q,
        fitted_ratio: m.fitted_ratio,
        empirical_q: m.empirical_q,
        relative_gap: (m.fitted_ratio - report.lambda2_modulus).abs() / report.lambda2_modulus,
        non_decaying: m.non_decaying,
        direction: m.direction.clone(),
        eps: m.eps,
        cycles: args.cycles,
        used_cycles: m.used_cycles,
        noise_floor: m.noise_floor,
    })?;
    Ok(0)
}

#[derive(Serialize)]
struct BalanceDoc {
    k: f64,
    a: f64,
    omega: f64,
    intersection_vmax: f64,
    slope_pos: f64,
    slope_neg: f64,
    grid_points: usize,
}

fn cmd_balance(args: &BalanceArgs) -> CmdResult {
    if args.points < 2 || !(args.vmin > 0.0 && args.vmax > args.vmin) {
        return Err(Error::InvalidArgument("need 0 < vmin < vmax and at least 2 points".into()).into());
    }
    let step = (args.vmax - args.vmin) / (args.points - 1) as f64;
    let grid: Vec<f64> = (0..args.points).map(|i| args.vmin + step * i as f64).collect();
    let curve = power_balance_curve(args.k, args.a, args.omega, &grid)?;
    if let Some(path) = &args.out {
        curve.write_csv(create(path)?)?;
    }
    print_json(&BalanceDoc {
        k: curve.k,
        a: curve.a,
        omega: curve.omega,
        intersection_vmax: curve.intersection_vmax,
        slope_pos: curve.slope_pos,
        slope_neg: curve.slope_neg,
        grid_points: grid.len(),
    })?;
    Ok(0)
}

fn cmd_resonator(args: &ResonatorArgs) -> CmdResult {
    let rows = resonator_table(&args.zeta)?;
    if args.json {
        print_json(&rows)?;
    } else {
        let mut out = io::stdout().lock();
        writeln!(out, "{:>10} {:>14} {:>14} {:>12} {:>12}", "zeta", "ql1", "ql2", "2pi*ql2/ql1", "gap")?;
        for r in rows {
            writeln!(
                out,
                "{:>10} {:>14.6} {:>14.6} {:>12.6} {:>12.6}",
                r.zeta, r.ql1, r.ql2, r.ratio, r.gap
            )?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::List { json } => cmd_list(*json),
        Command::Tran(a) => cmd_tran(a),
        Command::Pss(a) => cmd_pss(a),
        Command::Q(a) => cmd_q(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Balance(a) => cmd_balance(a),
        Command::Resonator(a) => cmd_resonator(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("oscq: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
