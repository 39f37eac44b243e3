use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use an2cls::bench::{
    emit_outputs, performance_profile, read_rows, run_matrix, summarize, Budget, CostMetric, SolverSpec,
};
use an2cls::suite::{builtin_suite, problem_by_name, Scale};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bench", version, about = "Benchmark the adaptive Newton solvers and build performance profiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver x problem matrix and write rows, profiles, plot and summary.
    Run(RunArgs),
    /// Recompute profiles and the plot from an existing rows.csv.
    Profile {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "iterations")]
        cost: CostMetric,
    },
    /// List the problems of a suite.
    List {
        #[arg(long, default_value = "small")]
        suite: Scale,
    },
    /// Solve a single problem and print the trace as JSON lines.
    Solve {
        /// Problem name such as `chained_rosenbrock_2`.
        problem: String,
        #[arg(long, default_value = "an2cls-e")]
        solver: String,
        #[command(flatten)]
        settings: Settings,
    },
}

#[derive(clap::Args)]
struct Settings {
    /// First-order tolerance (ε, or ε1 for the second-order driver).
    #[arg(long)]
    eps: Option<f64>,
    /// Curvature tolerance of the second-order driver.
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Per-run time limit in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// `key=value` or JSON file overriding solver settings by name.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value = "small")]
    suite: Scale,
    /// Comma-separated subset of an2cls-e, an2cls-k, soan2cls.
    #[arg(long, default_value = "an2cls-e,an2cls-k", value_delimiter = ',')]
    solvers: Vec<String>,
    #[arg(long, default_value = "iterations")]
    cost: CostMetric,
    #[arg(long)]
    out: PathBuf,
    /// Run matrix entries in parallel.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    settings: Settings,
}

impl Settings {
    /// Defaults, then the config file, then explicit flags.
    fn apply(&self, spec: &mut SolverSpec) -> Result<()> {
        if let Some(path) = &self.config {
            apply_config_file(spec, path)?;
        }
        if let Some(eps) = self.eps {
            spec.set("eps1", &eps.to_string())?;
        }
        if let Some(eps2) = self.eps2 {
            spec.set("eps2", &eps2.to_string())?;
        }
        if let Some(m) = self.max_iter {
            spec.set("max_iterations", &m.to_string())?;
        }
        if let Some(t) = self.time_limit {
            spec.set("time_limit_seconds", &t.to_string())?;
        }
        spec.validate()?;
        Ok(())
    }

    fn solver(&self, name: &str) -> Result<SolverSpec> {
        let mut spec = SolverSpec::standard(name)?;
        self.apply(&mut spec).with_context(|| format!("configuring {name}"))?;
        Ok(spec)
    }
}

fn apply_config_file(spec: &mut SolverSpec, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let backend = spec.base().backend;
    if text.trim_start().starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let Some(map) = value.as_object() else { bail!("{} must hold a flat JSON object", path.display()) };
        for (k, v) in map {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                other => bail!("{k}: unsupported JSON value {other}"),
            };
            spec.set(k, &v)?;
        }
    } else {
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let Some((k, v)) = line.split_once('=') else { bail!("expected key=value, got `{line}`") };
            spec.set(k.trim(), v.trim())?;
        }
    }
    // the solver name fixes the backend
    if spec.base().backend != backend {
        bail!("{}: backend cannot be changed for solver {}", path.display(), spec.name);
    }
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let problems = builtin_suite(args.suite);
    let solvers = args.solvers.iter().map(|s| args.settings.solver(s.trim())).collect::<Result<Vec<_>>>()?;
    let budget = Budget {
        max_iterations: solvers[0].base().max_iterations,
        time_limit_seconds: solvers[0].base().time_limit_seconds,
        parallel: args.parallel,
    };
    eprintln!("running {} solvers x {} problems ({} suite)", solvers.len(), problems.len(), args.suite);
    let rows = run_matrix(&problems, &solvers, &budget)?;
    let curves = performance_profile(&rows, args.cost)?;
    let paths = emit_outputs(&rows, &curves, args.cost, &args.out)?;
    print_summary(&rows, &curves, args.cost);
    eprintln!("wrote {}", paths.rows.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

fn print_summary(rows: &[an2cls::bench::BenchRow], curves: &[an2cls::bench::ProfileCurve], cost: CostMetric) {
    let summary = summarize(rows, curves, cost);
    println!("{:<12} {:>6} {:>10} {:>12}", "solver", "pi", "converged", "reliability");
    for s in &summary.solvers {
        println!("{:<12} {:>6.3} {:>6}/{:<3} {:>11.2}%", s.solver, s.pi, s.converged, s.runs, s.reliability_percent);
    }
}

fn profile(rows: &Path, out: &Path, cost: CostMetric) -> Result<()> {
    let rows = read_rows(rows).with_context(|| format!("reading {}", rows.display()))?;
    let curves = performance_profile(&rows, cost)?;
    emit_outputs(&rows, &curves, cost, out)?;
    print_summary(&rows, &curves, cost);
    Ok(())
}

fn solve_one(problem: &str, solver: &str, settings: &Settings) -> Result<()> {
    let problem = problem_by_name(problem)?;
    let spec = settings.solver(solver)?;
    let res = spec.run(&problem)?;
    for r in &res.trace {
        println!("{}", serde_json::to_string(r)?);
    }
    eprintln!(
        "{}: {} after {} iterations, f = {:.6e}, |g| = {:.3e}",
        problem.name(),
        res.status,
        res.iterations(),
        res.f,
        res.grad_norm
    );
    if let Some(msg) = &res.message {
        eprintln!("{msg}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Profile { rows, out, cost } => profile(rows, out, *cost),
        Command::List { suite } => {
            for p in builtin_suite(*suite) {
                println!("{}\t{}", p.name(), p.dim());
            }
            Ok(())
        }
        Command::Solve { problem, solver, settings } => solve_one(problem, solver, settings),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
