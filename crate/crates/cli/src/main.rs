mod output;
mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use fldp::catalog;
use fldp::counterexample::{
    build_counterexample, detect_nonconvergence, free_energy_trace, write_trace_csv, BuildOptions, NonconvergenceReport,
    DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_K_MAX,
};
use fldp::ldp::{
    derivative_at_zero, ep_curve, free_energy_curve, ft_residuals, legendre_fenchel, mirrored, slope_range_grid,
    uniform_grid, write_curves_csv, write_ep_csv, write_rate_csv, FreeEnergyCurve, FtReport, RateFunction,
    DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_POINTS, DEFAULT_Z_POINTS,
};
use fldp::propagator::{asymptotic_law, integrate_law, DEFAULT_STEPS_PER_PERIOD};
use fldp::protocol::{ValidationReport, DEFAULT_VALIDATION_GRID};
use fldp::simulate::{
    mc_time_average, path_functionals, sample_from_law, write_trajectories_csv, ThinningSampler, McEstimate,
};
use fldp::{Direction, ErrorClass, Functional, RateModel, RateProtocol, ValidatedProtocol};

use output::{Failure, OutDir, Provenance};
use plot::{line_chart, Series};

#[derive(Parser)]
#[command(name = "fldp", version, about = "Heat and entropy production large deviations for periodically driven Markov chains")]
struct Cli {
    /// Worker threads for Monte Carlo and lambda sweeps.
    #[arg(long, global = true, env = "FLDP_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Also write SVG plots of the produced curves.
    #[arg(long, global = true)]
    plot: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check periodicity, nonnegativity, ergodic consistency and irreducibility.
    Validate(ValidateArgs),
    /// Sample trajectories and their heat and entropy production.
    Simulate(SimulateArgs),
    /// Forward and backward free energies on a lambda grid.
    FreeEnergy(CurveArgs),
    /// Legendre-Fenchel transforms of the free energies.
    RateFunction(RateArgs),
    /// Residuals of the forward/backward fluctuation symmetry.
    FtCheck(FtArgs),
    /// Entropy production rate over one period.
    EpRate(EpArgs),
    /// Free-energy trace of the alternating aperiodic protocol.
    Counterexample(CounterexampleArgs),
    /// Entropy production rate from the spectrum, the formula and simulation.
    Report(ReportArgs),
}

#[derive(Args, Serialize, Clone)]
struct ProtocolArgs {
    /// Protocol JSON file.
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STEPS_PER_PERIOD)]
    steps_per_period: usize,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Sample points per period.
    #[arg(long, default_value_t = DEFAULT_VALIDATION_GRID)]
    grid: usize,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, default_value_t = 10.0)]
    t: f64,
    #[arg(long, default_value_t = 100)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Which {
    W,
    S,
    Both,
}

impl Which {
    fn functionals(self) -> Vec<Functional> {
        match self {
            Which::W => vec![Functional::W],
            Which::S => vec![Functional::S],
            Which::Both => vec![Functional::W, Functional::S],
        }
    }
}

#[derive(Args, Serialize, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MIN, allow_negative_numbers = true)]
    lambda_min: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MAX, allow_negative_numbers = true)]
    lambda_max: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_POINTS)]
    lambda_points: usize,
    #[arg(long, value_enum, default_value_t = Which::Both)]
    functional: Which,
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Serialize)]
struct RateArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = DEFAULT_Z_POINTS)]
    z_points: usize,
}

#[derive(Args, Serialize)]
struct FtArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = DEFAULT_Z_POINTS)]
    z_points: usize,
    /// Largest accepted residual.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Serialize)]
struct EpArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args, Serialize)]
struct CounterexampleArgs {
    /// Homogeneous protocol whose rates define the base generator; the
    /// driven ring with rates 2 and 1 when absent.
    #[arg(long)]
    protocol: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STEPS_PER_PERIOD)]
    steps_per_period: usize,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    k_max: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// First epoch end; ten mixing times when absent.
    #[arg(long)]
    t1: Option<f64>,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[arg(long, default_value_t = 200.0)]
    t: f64,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

struct Loaded {
    protocol: ValidatedProtocol,
    text: String,
    name: String,
}

fn load(args: &ProtocolArgs) -> Result<Loaded, Failure> {
    load_path(&args.protocol)
}

fn load_path(path: &Path) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::new("config", ErrorClass::Config, format!("cannot read {}: {e}", path.display()))
    })?;
    let protocol = RateProtocol::from_json(&text)?.into_validated(DEFAULT_VALIDATION_GRID)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "protocol".into());
    Ok(Loaded { protocol, text, name })
}

fn lambda_grid(g: &GridArgs) -> Result<Vec<f64>, Failure> {
    Ok(uniform_grid(g.lambda_min, g.lambda_max, g.lambda_points)?)
}

fn curves(
    p: &ValidatedProtocol,
    functional: Functional,
    lambdas: &[f64],
    steps: usize,
) -> Result<(FreeEnergyCurve, FreeEnergyCurve), Failure> {
    let fwd = free_energy_curve(p, functional, Direction::Forward, lambdas, steps)?;
    let bwd = free_energy_curve(p, functional, Direction::Backward, &mirrored(lambdas), steps)?;
    Ok((fwd, bwd))
}

fn rates(fwd: &FreeEnergyCurve, bwd: &FreeEnergyCurve, points: usize) -> Result<(RateFunction, RateFunction), Failure> {
    let zs = slope_range_grid(fwd, points)?;
    Ok((legendre_fenchel(fwd, &zs)?, legendre_fenchel(bwd, &mirrored(&zs))?))
}

fn validate(cli: &Cli, args: &ValidateArgs, out: &OutDir) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.protocol.protocol).map_err(|e| {
        Failure::new(
            "config",
            ErrorClass::Config,
            format!("cannot read {}: {e}", args.protocol.protocol.display()),
        )
    })?;
    let report: ValidationReport = RateProtocol::from_json(&text)?.validate(args.grid)?;
    out.json("validation.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let _ = cli;
    if !report.passed {
        let kind = if report.violations.iter().any(|v| v.check == "ergodic_consistency") {
            "ergodic_consistency"
        } else {
            "validation"
        };
        let first = report.violations.first().map(|v| v.detail.clone()).unwrap_or_default();
        return Err(Failure::new(
            kind,
            ErrorClass::Validation,
            format!("{} violations; first: {first}", report.violations.len()),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct PathSummary {
    path_id: u64,
    initial_state: usize,
    final_state: usize,
    jumps: usize,
    w: f64,
    s: f64,
}

fn simulate(args: &SimulateArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let p = &loaded.protocol;
    let prov = Provenance::new(args.seed, args, &loaded.text);
    let steps = args.protocol.steps_per_period;
    let pi = asymptotic_law(p, steps)?.initial();
    let law = integrate_law(p, &pi, args.t, steps)?;
    let sampler = ThinningSampler::new(p, 0.0, args.t);
    let paths = (0..args.paths as u64)
        .map(|id| sample_from_law(p, &sampler, &pi, 0.0, args.t, args.seed, id))
        .collect::<fldp::Result<Vec<_>>>()?;
    let mut traj_csv = out.csv("trajectories.csv", &prov)?;
    write_trajectories_csv(p, &paths, &mut traj_csv)?;
    traj_csv.flush()?;
    let mut f = out.csv("functionals.csv", &prov)?;
    writeln!(f, "path_id,initial_state,final_state,jumps,W,S")?;
    let mut summaries = Vec::with_capacity(paths.len());
    for traj in &paths {
        let pf = path_functionals(p, traj, &law)?;
        let s = PathSummary {
            path_id: traj.path_id,
            initial_state: traj.initial_state + 1,
            final_state: traj.final_state() + 1,
            jumps: traj.jumps.len(),
            w: pf.w_total,
            s: pf.s_total,
        };
        writeln!(f, "{},{},{},{},{},{}", s.path_id, s.initial_state, s.final_state, s.jumps, s.w, s.s)?;
        summaries.push(s);
    }
    f.flush()?;
    let n = summaries.len().max(1) as f64;
    let summary = serde_json::json!({
        "protocol": loaded.name,
        "t": args.t,
        "paths": args.paths,
        "seed": args.seed,
        "mean_w": summaries.iter().map(|s| s.w).sum::<f64>() / n,
        "mean_s": summaries.iter().map(|s| s.s).sum::<f64>() / n,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn free_energy(cli: &Cli, args: &CurveArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let prov = Provenance::new(0, args, &loaded.text);
    let lambdas = lambda_grid(&args.grid)?;
    for functional in args.grid.functional.functionals() {
        let (fwd, bwd) = curves(&loaded.protocol, functional, &lambdas, args.protocol.steps_per_period)?;
        let name = format!("free_energy_{}", functional.name());
        let mut w = out.csv(&format!("{name}.csv"), &prov)?;
        write_curves_csv(&fwd, &bwd, &mut w)?;
        w.flush()?;
        if cli.plot {
            let svg = line_chart(
                &format!("{} free energy, {}", functional.name(), loaded.name),
                "lambda",
                "c(lambda)",
                &[
                    Series { label: "forward", xs: &fwd.lambdas, ys: &fwd.values },
                    Series { label: "backward", xs: &fwd.lambdas, ys: &bwd.values },
                ],
            );
            out.text(&format!("{name}.svg"), &svg)?;
        }
        info!("wrote {name}.csv");
    }
    Ok(())
}

fn rate_function(cli: &Cli, args: &RateArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let prov = Provenance::new(0, args, &loaded.text);
    let lambdas = lambda_grid(&args.grid)?;
    for functional in args.grid.functional.functionals() {
        let (fwd, bwd) = curves(&loaded.protocol, functional, &lambdas, args.protocol.steps_per_period)?;
        let (fr, br) = rates(&fwd, &bwd, args.z_points)?;
        let name = format!("rate_function_{}", functional.name());
        let mut w = out.csv(&format!("{name}.csv"), &prov)?;
        write_rate_csv(&fr, &br, &mut w)?;
        w.flush()?;
        if cli.plot {
            let bwd_values: Vec<f64> = br.values.iter().rev().cloned().collect();
            let svg = line_chart(
                &format!("{} rate function, {}", functional.name(), loaded.name),
                "z",
                "I(z)",
                &[
                    Series { label: "I(z)", xs: &fr.zs, ys: &fr.values },
                    Series { label: "I^B(-z)", xs: &fr.zs, ys: &bwd_values },
                ],
            );
            out.text(&format!("{name}.svg"), &svg)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FtCheck {
    protocol: String,
    tol: f64,
    time_symmetric: bool,
    residuals: Vec<(String, FtReport)>,
    passed: bool,
}

fn ft_check(args: &FtArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let lambdas = lambda_grid(&args.grid)?;
    let mut residuals = Vec::new();
    for functional in args.grid.functional.functionals() {
        let (fwd, bwd) = curves(&loaded.protocol, functional, &lambdas, args.protocol.steps_per_period)?;
        let (fr, br) = rates(&fwd, &bwd, args.z_points)?;
        let r = ft_residuals(&fwd, &bwd, &fr, &br, loaded.protocol.time_symmetric())?;
        residuals.push((functional.name().to_string(), r));
    }
    let passed = residuals.iter().all(|(_, r)| r.c_max <= args.tol && r.i_max <= args.tol);
    let report = FtCheck {
        protocol: loaded.name,
        tol: args.tol,
        time_symmetric: loaded.protocol.time_symmetric(),
        residuals,
        passed,
    };
    out.json("ft_check.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !passed {
        return Err(Failure::new(
            "tolerance_exceeded",
            ErrorClass::Numerical,
            format!("fluctuation residuals exceed {}", args.tol),
        ));
    }
    Ok(())
}

fn ep_rate(cli: &Cli, args: &EpArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let prov = Provenance::new(0, args, &loaded.text);
    let curve = ep_curve(&loaded.protocol, args.protocol.steps_per_period)?;
    let mut w = out.csv("ep_rate.csv", &prov)?;
    write_ep_csv(&curve, &mut w)?;
    w.flush()?;
    let summary = serde_json::json!({
        "protocol": loaded.name,
        "time_average": curve.time_average,
        "min": curve.values.iter().cloned().fold(f64::INFINITY, f64::min),
        "max": curve.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    });
    out.json("ep_rate.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if cli.plot {
        let svg = line_chart(
            &format!("entropy production rate, {}", loaded.name),
            "s",
            "e_p(s)",
            &[Series { label: "e_p", xs: &curve.grid, ys: &curve.values }],
        );
        out.text("ep_rate.svg", &svg)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CounterexampleSummary {
    lambda: f64,
    gamma: f64,
    k_max: usize,
    t1: f64,
    mixing_time: f64,
    smoothing_width: f64,
    slope_bound: f64,
    #[serde(flatten)]
    report: NonconvergenceReport,
}

fn counterexample(cli: &Cli, args: &CounterexampleArgs, out: &OutDir) -> Result<(), Failure> {
    let (base, text) = match &args.protocol {
        Some(path) => {
            let loaded = load_path(path)?;
            if !loaded.protocol.is_homogeneous() {
                return Err(Failure::new(
                    "construction",
                    ErrorClass::Validation,
                    "base protocol must have constant rates".into(),
                ));
            }
            (loaded.protocol.rate_matrix(0.0), loaded.text)
        }
        None => (catalog::p2().rate_matrix(0.0), String::new()),
    };
    let prov = Provenance::new(0, args, &text);
    let options = BuildOptions { t1: args.t1, smoothing_width: None };
    let cx = build_counterexample(args.alpha, args.beta, &base, args.gamma, args.k_max, options)?;
    let (trace, tol) = free_energy_trace(&cx, args.lambda, args.steps_per_period)?;
    let mut w = out.csv("counterexample_trace.csv", &prov)?;
    write_trace_csv(&trace, &mut w)?;
    w.flush()?;
    let report = detect_nonconvergence(&trace, tol)?;
    let s = &cx.schedule;
    let summary = CounterexampleSummary {
        lambda: args.lambda,
        gamma: s.gamma,
        k_max: s.k_max,
        t1: s.t1,
        mixing_time: s.mixing_time,
        smoothing_width: s.smoothing_width,
        slope_bound: s.slope_bound(),
        report,
    };
    out.json("counterexample.json", &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if cli.plot {
        let xs: Vec<f64> = trace.iter().map(|p| p.t.log10()).collect();
        let ys: Vec<f64> = trace.iter().map(|p| p.value).collect();
        let svg = line_chart(
            "finite-time entropy production free energy",
            "log10 t",
            "c(lambda, t)",
            &[Series { label: "trace", xs: &xs, ys: &ys }],
        );
        out.text("counterexample_trace.svg", &svg)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Triangle {
    protocol: String,
    spectral_derivative: f64,
    richardson_gap: f64,
    ep_time_average: f64,
    monte_carlo: McEstimate,
    mc_z_vs_spectral: f64,
    mc_z_vs_formula: f64,
    spectral_minus_formula: f64,
}

fn report(args: &ReportArgs, out: &OutDir) -> Result<(), Failure> {
    let loaded = load(&args.protocol)?;
    let p = &loaded.protocol;
    let steps = args.protocol.steps_per_period;
    let lambdas = uniform_grid(DEFAULT_LAMBDA_MIN, DEFAULT_LAMBDA_MAX, DEFAULT_LAMBDA_POINTS)?;
    let curve = free_energy_curve(p, Functional::S, Direction::Forward, &lambdas, steps)?;
    let d = derivative_at_zero(&curve)?;
    let ep = ep_curve(p, steps)?.time_average;
    let pi = asymptotic_law(p, steps)?.initial();
    let law = integrate_law(p, &pi, args.t, steps)?;
    let mc = mc_time_average(p, Functional::S, args.t, args.paths, args.seed, &pi, Some(&law))?;
    let triangle = Triangle {
        protocol: loaded.name,
        spectral_derivative: d.value,
        richardson_gap: d.richardson_gap(),
        ep_time_average: ep,
        mc_z_vs_spectral: mc.z_score(d.value),
        mc_z_vs_formula: mc.z_score(ep),
        spectral_minus_formula: d.value - ep,
        monte_carlo: mc,
    };
    out.json("report.json", &triangle)?;
    println!("{}", serde_json::to_string_pretty(&triangle)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new("config", ErrorClass::Config, e.to_string()))?;
    }
    let out = OutDir::create(&cli.out)?;
    match &cli.command {
        Command::Validate(a) => validate(cli, a, &out),
        Command::Simulate(a) => simulate(a, &out),
        Command::FreeEnergy(a) => free_energy(cli, a, &out),
        Command::RateFunction(a) => rate_function(cli, a, &out),
        Command::FtCheck(a) => ft_check(a, &out),
        Command::EpRate(a) => ep_rate(cli, a, &out),
        Command::Counterexample(a) => counterexample(cli, a, &out),
        Command::Report(a) => report(a, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).expect("failure serializes"));
            ExitCode::from(f.exit_code)
        }
    }
}
