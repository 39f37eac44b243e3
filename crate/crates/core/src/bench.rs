//! Solver × problem benchmark matrices and Dolan–Moré performance profiles.
//!
//! For a cost metric, each problem's ratio is `cost / best cost among the
//! solvers that converged on it`; runs that did not converge get ratio `∞`.
//! A solver's curve `ρ_s(τ)` is the fraction of problems with ratio `<= τ`.
//! The summary statistic `π` is the mean of `ρ_s` sampled at `τ = 1, ..., 10`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, SOConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::second_order::solve_so;
use crate::solver::{solve, SolveResult, SolveStatus};
use crate::stepcomp::StepKind;

/// Abscissae over which `π` averages the profile.
pub const PI_SAMPLES: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];

/// Description of the `π` convention, stored with every summary.
pub const PI_CONVENTION: &str = "mean of rho_s(tau) sampled at tau = 1, 2, ..., 10";

#[derive(Debug, Clone, PartialEq)]
pub enum SolverKind {
    FirstOrder(SolverConfig),
    SecondOrder(SOConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub name: String,
    pub kind: SolverKind,
}

/// Names accepted by [`SolverSpec::standard`].
pub const STANDARD_SOLVERS: &[&str] = &["an2cls-e", "an2cls-k", "soan2cls"];

impl SolverSpec {
    /// `an2cls-e` (exact backend), `an2cls-k` (Krylov backend) or `soan2cls`
    /// (second-order driver, exact backend), each with default settings.
    pub fn standard(name: &str) -> Result<Self> {
        let kind = match name {
            "an2cls-e" => SolverKind::FirstOrder(SolverConfig::default_config(Backend::Exact)),
            "an2cls-k" => SolverKind::FirstOrder(SolverConfig::default_config(Backend::Krylov)),
            "soan2cls" => SolverKind::SecondOrder(SOConfig::default()),
            other => {
                return Err(Error::Config(format!(
                    "unknown solver `{other}` (expected one of {})",
                    STANDARD_SOLVERS.join(", ")
                )))
            }
        };
        Ok(Self { name: name.to_string(), kind })
    }

    pub fn base(&self) -> &SolverConfig {
        match &self.kind {
            SolverKind::FirstOrder(c) => c,
            SolverKind::SecondOrder(c) => &c.base,
        }
    }

    pub fn base_mut(&mut self) -> &mut SolverConfig {
        match &mut self.kind {
            SolverKind::FirstOrder(c) => c,
            SolverKind::SecondOrder(c) => &mut c.base,
        }
    }

    /// Sets a configuration key; `eps1`/`eps2` only apply to the
    /// second-order driver and are ignored by first-order solvers.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match &mut self.kind {
            SolverKind::SecondOrder(c) => c.set(key, value),
            SolverKind::FirstOrder(_) if key == "eps2" => Ok(()),
            SolverKind::FirstOrder(c) if key == "eps1" => c.set("eps", value),
            SolverKind::FirstOrder(c) => c.set(key, value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SolverKind::FirstOrder(c) => c.validate(),
            SolverKind::SecondOrder(c) => c.validate(),
        }
    }

    pub fn run(&self, problem: &Problem) -> Result<SolveResult> {
        match &self.kind {
            SolverKind::FirstOrder(c) => solve(problem, c),
            SolverKind::SecondOrder(c) => solve_so(problem, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Converged,
    IterationLimit,
    TimeLimit,
    NumericalFailure,
    /// The solver cannot handle the problem (dense Hessian above the cap).
    Unsupported,
}

impl From<SolveStatus> for RowStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => RowStatus::Converged,
            SolveStatus::IterationLimit => RowStatus::IterationLimit,
            SolveStatus::TimeLimit => RowStatus::TimeLimit,
            SolveStatus::NumericalFailure => RowStatus::NumericalFailure,
        }
    }
}

/// One (solver, problem) run; serialized to `rows.csv` in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub solver: String,
    pub problem: String,
    pub dimension: usize,
    pub status: RowStatus,
    pub iterations: usize,
    pub successful_iterations: usize,
    pub f_evals: usize,
    pub g_evals: usize,
    pub h_evals: usize,
    pub hess_vec_evals: usize,
    pub wall_time_seconds: f64,
    pub final_grad_norm: f64,
    pub negative_curvature_steps: usize,
    pub mean_krylov_dim: Option<f64>,
}

impl BenchRow {
    pub fn converged(&self) -> bool {
        self.status == RowStatus::Converged
    }

    fn from_result(solver: &str, problem: &Problem, res: &SolveResult) -> Self {
        Self {
            solver: solver.to_string(),
            problem: problem.name().to_string(),
            dimension: problem.dim(),
            status: res.status.into(),
            iterations: res.iterations(),
            successful_iterations: res.successful_iterations(),
            f_evals: res.evals.f,
            g_evals: res.evals.g,
            h_evals: res.evals.h,
            hess_vec_evals: res.evals.hess_vec,
            wall_time_seconds: res.elapsed_seconds,
            final_grad_norm: res.grad_norm,
            negative_curvature_steps: res.count_kind(StepKind::NegativeCurvature)
                + res.count_kind(StepKind::SecondOrder),
            mean_krylov_dim: res.mean_krylov_dim(),
        }
    }

    fn without_result(solver: &str, problem: &Problem, status: RowStatus) -> Self {
        let g0 = problem.gradient(problem.initial_point()).map(|g| g.norm()).unwrap_or(f64::INFINITY);
        Self {
            solver: solver.to_string(),
            problem: problem.name().to_string(),
            dimension: problem.dim(),
            status,
            iterations: 0,
            successful_iterations: 0,
            f_evals: 0,
            g_evals: 0,
            h_evals: 0,
            hess_vec_evals: 0,
            wall_time_seconds: 0.0,
            final_grad_norm: g0,
            negative_curvature_steps: 0,
            mean_krylov_dim: None,
        }
    }
}

/// Limits applied to every run of a matrix, overriding the solver configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iterations: usize,
    pub time_limit_seconds: f64,
    /// Run the matrix entries on the rayon thread pool.
    pub parallel: bool,
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iterations: 5000, time_limit_seconds: 3600.0, parallel: false }
    }
}

/// Runs every solver on every problem; rows are ordered solver-major.
///
/// Solver failures become rows; only invalid configurations are errors.
pub fn run_matrix(problems: &[Problem], solvers: &[SolverSpec], budget: &Budget) -> Result<Vec<BenchRow>> {
    if problems.is_empty() || solvers.is_empty() {
        return Err(Error::Config("benchmark needs at least one problem and one solver".into()));
    }
    let solvers: Vec<SolverSpec> = solvers
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let base = s.base_mut();
            base.max_iterations = budget.max_iterations;
            base.time_limit_seconds = budget.time_limit_seconds;
            s.validate().map(|_| s)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(&SolverSpec, &Problem)> =
        solvers.iter().flat_map(|s| problems.iter().map(move |p| (s, p))).collect();
    let run_one = |(s, p): &(&SolverSpec, &Problem)| -> BenchRow {
        match s.run(p) {
            Ok(res) => BenchRow::from_result(&s.name, p, &res),
            Err(Error::DenseUnavailable { .. }) => BenchRow::without_result(&s.name, p, RowStatus::Unsupported),
            Err(_) => BenchRow::without_result(&s.name, p, RowStatus::NumericalFailure),
        }
    };
    Ok(if budget.parallel { pairs.par_iter().map(run_one).collect() } else { pairs.iter().map(run_one).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMetric {
    #[default]
    Iterations,
    Evaluations,
    Time,
}

impl CostMetric {
    /// Run cost, floored so that ratios stay finite (1 for counts, 1 µs for time).
    pub fn cost(self, row: &BenchRow) -> f64 {
        match self {
            CostMetric::Iterations => row.iterations.max(1) as f64,
            CostMetric::Evaluations => (row.f_evals + row.g_evals + row.h_evals + row.hess_vec_evals).max(1) as f64,
            CostMetric::Time => row.wall_time_seconds.max(1e-6),
        }
    }
}

impl fmt::Display for CostMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMetric::Iterations => "iterations",
            CostMetric::Evaluations => "evaluations",
            CostMetric::Time => "time",
        })
    }
}

impl FromStr for CostMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(CostMetric::Iterations),
            "evaluations" => Ok(CostMetric::Evaluations),
            "time" => Ok(CostMetric::Time),
            other => Err(Error::Config(format!("unknown cost metric `{other}`"))),
        }
    }
}

/// Step function `ρ_s(τ)` sampled at each of its breakpoints, at the
/// integers `1..=10`, and at `tau_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
}

impl ProfileCurve {
    /// `ρ_s(τ)`; `0` below the first sample.
    pub fn value_at(&self, tau: f64) -> f64 {
        match self.taus.partition_point(|&t| t <= tau) {
            0 => 0.0,
            i => self.values[i - 1],
        }
    }

    pub fn tau_max(&self) -> f64 {
        self.taus.last().copied().unwrap_or(1.0)
    }
}

/// Dolan–Moré profiles, one curve per solver in order of first appearance.
pub fn performance_profile(rows: &[BenchRow], metric: CostMetric) -> Result<Vec<ProfileCurve>> {
    if rows.is_empty() {
        return Err(Error::Config("performance profile needs at least one row".into()));
    }
    let solvers = unique(rows.iter().map(|r| r.solver.as_str()));
    let problems = unique(rows.iter().map(|r| r.problem.as_str()));
    let find = |s: &str, p: &str| rows.iter().find(|r| r.solver == s && r.problem == p);

    // ratios[solver][problem]
    let mut ratios = vec![vec![f64::INFINITY; problems.len()]; solvers.len()];
    for (j, p) in problems.iter().enumerate() {
        let best = solvers
            .iter()
            .filter_map(|s| find(s, p).filter(|r| r.converged()).map(|r| metric.cost(r)))
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            for (i, s) in solvers.iter().enumerate() {
                if let Some(r) = find(s, p).filter(|r| r.converged()) {
                    ratios[i][j] = metric.cost(r) / best;
                }
            }
        }
    }

    let finite_max = ratios.iter().flatten().copied().filter(|r| r.is_finite()).fold(1.0, f64::max);
    let tau_max = finite_max.max(PI_SAMPLES[PI_SAMPLES.len() - 1]);
    let mut taus: Vec<f64> =
        ratios.iter().flatten().copied().filter(|r| r.is_finite()).chain(PI_SAMPLES).chain([tau_max]).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let np = problems.len() as f64;
    Ok(solvers
        .iter()
        .zip(&ratios)
        .map(|(s, rs)| ProfileCurve {
            solver: s.to_string(),
            values: taus.iter().map(|&t| rs.iter().filter(|&&r| r <= t).count() as f64 / np).collect(),
            taus: taus.clone(),
        })
        .collect())
}

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// `(π, reliability %)` for one solver's curve and the rows it came from.
pub fn efficiency_metrics(curve: &ProfileCurve, rows: &[BenchRow]) -> (f64, f64) {
    let pi = PI_SAMPLES.iter().map(|&t| curve.value_at(t)).sum::<f64>() / PI_SAMPLES.len() as f64;
    let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.solver == curve.solver).collect();
    let reliability = if mine.is_empty() {
        0.0
    } else {
        100.0 * mine.iter().filter(|r| r.converged()).count() as f64 / mine.len() as f64
    };
    (pi, reliability)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: String,
    pub pi: f64,
    pub reliability_percent: f64,
    pub runs: usize,
    pub converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cost_metric: CostMetric,
    pub pi_convention: String,
    pub solvers: Vec<SolverSummary>,
}

pub fn summarize(rows: &[BenchRow], curves: &[ProfileCurve], metric: CostMetric) -> Summary {
    Summary {
        cost_metric: metric,
        pi_convention: PI_CONVENTION.to_string(),
        solvers: curves
            .iter()
            .map(|c| {
                let (pi, reliability_percent) = efficiency_metrics(c, rows);
                SolverSummary {
                    solver: c.solver.clone(),
                    pi,
                    reliability_percent,
                    runs: rows.iter().filter(|r| r.solver == c.solver).count(),
                    converged: rows.iter().filter(|r| r.solver == c.solver && r.converged()).count(),
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub rows: PathBuf,
    pub profiles: PathBuf,
    pub svg: PathBuf,
    pub summary: PathBuf,
}

/// Writes `rows.csv`, `profiles.csv`, `profile.svg` and `summary.json`.
pub fn emit_outputs(
    rows: &[BenchRow],
    curves: &[ProfileCurve],
    metric: CostMetric,
    out_dir: &Path,
) -> Result<OutputPaths> {
    fs::create_dir_all(out_dir)?;
    let paths = OutputPaths {
        rows: out_dir.join("rows.csv"),
        profiles: out_dir.join("profiles.csv"),
        svg: out_dir.join("profile.svg"),
        summary: out_dir.join("summary.json"),
    };
    write_rows(rows, &paths.rows)?;

    let mut w = csv::Writer::from_path(&paths.profiles)?;
    w.write_record(["solver", "tau", "rho"])?;
    for c in curves {
        for (t, v) in c.taus.iter().zip(&c.values) {
            w.write_record([c.solver.clone(), t.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;

    fs::write(&paths.svg, profile_svg(curves, metric))?;
    fs::write(&paths.summary, serde_json::to_string_pretty(&summarize(rows, curves, metric))?)?;
    Ok(paths)
}

pub fn write_rows(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Reads `profiles.csv` back into curves.
pub fn read_profiles(path: &Path) -> Result<Vec<ProfileCurve>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut curves: Vec<ProfileCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("malformed profiles.csv record {rec:?}")))
        };
        let (solver, tau, rho) = (rec.get(0).unwrap_or_default().to_string(), parse(1)?, parse(2)?);
        match curves.iter_mut().find(|c| c.solver == solver) {
            Some(c) => {
                c.taus.push(tau);
                c.values.push(rho);
            }
            None => curves.push(ProfileCurve { solver, taus: vec![tau], values: vec![rho] }),
        }
    }
    Ok(curves)
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Step plot of the curves against `log2 τ`.
pub fn profile_svg(curves: &[ProfileCurve], metric: CostMetric) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 60.0, 160.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let xmax = curves.iter().map(|c| c.tau_max()).fold(1.0, f64::max).log2().max(1.0);
    let px = |tau: f64| left + pw * tau.log2() / xmax;
    let py = |rho: f64| top + ph * (1.0 - rho);

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="18" text-anchor="middle">Performance profile ({metric})</text>
<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>
"#,
        left + pw / 2.0
    );
    for i in 0..=4 {
        let rho = i as f64 / 4.0;
        svg.push_str(&format!(
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{y:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{rho}</text>\n",
            left + pw,
            left - 6.0,
            py(rho) + 4.0,
            y = py(rho)
        ));
    }
    let ticks = xmax.ceil() as i32;
    for k in 0..=ticks {
        let x = px(2f64.powi(k));
        if x > left + pw + 0.5 {
            break;
        }
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" x2=\"{x:.1}\" y1=\"{top}\" y2=\"{}\" stroke=\"#ddd\"/><text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            top + ph,
            top + ph + 16.0,
            2f64.powi(k)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">τ (log2 scale)</text>\n",
        left + pw / 2.0,
        h - 10.0
    ));
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = Vec::new();
        let mut prev = 0.0;
        for (&t, &v) in c.taus.iter().zip(&c.values) {
            points.push(format!("{:.2},{:.2}", px(t), py(prev)));
            points.push(format!("{:.2},{:.2}", px(t), py(v)));
            prev = v;
        }
        points.push(format!("{:.2},{:.2}", left + pw, py(prev)));
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = top + 16.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{x0}\" x2=\"{x1}\" y1=\"{ly}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{x2}\" y=\"{}\">{}</text>\n",
            ly + 4.0,
            xml_escape(&c.solver),
            x0 = left + pw + 12.0,
            x1 = left + pw + 36.0,
            x2 = left + pw + 42.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
