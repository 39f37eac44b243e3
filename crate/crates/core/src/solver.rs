//! The outer adaptive-regularization loop.
//!
//! Each iteration asks a step backend for a trial step, screens Newton steps
//! with a cheap gradient test, evaluates the acceptance ratio
//! `ρ = (f(x) - f(x+s)) / -(gᵀs + ½ sᵀHs)`, rejects steps whose new gradient
//! grows too much, and updates `σ`. Rejected iterations leave `x` unchanged
//! and multiply `σ` by `γ2`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{Backend, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::sym_eig_min;
use crate::problem::Problem;
use crate::second_order;
use crate::stepcomp::{
    stepcomp_exact_preconditioned, stepcomp_krylov_preconditioned, ProblemHessian, StepKind, StepOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    TimeLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub f: usize,
    pub g: usize,
    pub h: usize,
    pub hess_vec: usize,
}

/// One iteration of the trace. `sigma`, `grad_norm` and `f` describe the
/// iterate the step was computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub kind: StepKind,
    pub sigma: f64,
    pub mu: f64,
    /// Absent when the Newton screening test rejected the step before the
    /// ratio was computed, or when the trial value was not finite.
    pub rho: Option<f64>,
    pub grad_norm: f64,
    pub f: f64,
    pub step_norm: f64,
    /// `gᵀs + ½ sᵀHs`.
    pub model_value: f64,
    pub kappa: f64,
    pub reject: bool,
    /// Rejected by the Newton screening test.
    pub cond_reject: bool,
    pub trial_grad_norm: Option<f64>,
    pub lambda_min: Option<f64>,
    pub krylov_dim: Option<usize>,
    pub grad_evals: usize,
    pub hess_evals: usize,
    pub hess_vec_evals: usize,
}

impl IterationRecord {
    pub fn accepted(&self) -> bool {
        !self.reject
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub status: SolveStatus,
    /// Error text for [`SolveStatus::NumericalFailure`].
    pub message: Option<String>,
    pub trace: Vec<IterationRecord>,
    pub evals: EvalCounts,
    pub sigma: f64,
    /// Minimum Hessian eigenvalue at the final iterate (second-order driver only).
    pub lambda_min: Option<f64>,
    pub elapsed_seconds: f64,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn successful_iterations(&self) -> usize {
        self.trace.iter().filter(|r| r.accepted()).count()
    }

    pub fn count_kind(&self, kind: StepKind) -> usize {
        self.trace.iter().filter(|r| r.kind == kind).count()
    }

    pub fn mean_krylov_dim(&self) -> Option<f64> {
        let dims: Vec<usize> = self.trace.iter().filter_map(|r| r.krylov_dim).collect();
        (!dims.is_empty()).then(|| dims.iter().sum::<usize>() as f64 / dims.len() as f64)
    }
}

/// `ρ = (f_k - f_trial) / -q`; `q` must be negative.
pub fn compute_rho(f_k: f64, f_trial: f64, q: f64) -> Result<f64> {
    if !(q < 0.0) {
        return Err(Error::ModelDecrease { q });
    }
    Ok((f_k - f_trial) / -q)
}

/// Lower-endpoint σ update.
pub fn update_sigma(sigma: f64, rho: Option<f64>, reject: bool, cfg: &SolverConfig) -> f64 {
    match (reject, rho) {
        (true, _) => cfg.gamma2 * sigma,
        (false, Some(r)) if r >= cfg.eta2 => (cfg.gamma1 * sigma).max(cfg.sigma_min),
        (false, _) => sigma,
    }
}

/// Gradient-growth constant of the rejection test for first-order steps.
pub fn kappa_k(kind: StepKind, mu: f64, sigma: f64, cfg: &SolverConfig) -> Result<f64> {
    match kind {
        StepKind::Newton => Ok(cfg.kappa_upnewt()),
        StepKind::NegativeCurvature => {
            let kc = cfg.kappa_c;
            Ok(1.5 * kc * kc * cfg.theta * cfg.theta * (1.0 - cfg.eta2) + 1.0 + kc * mu / sigma.sqrt())
        }
        StepKind::SecondOrder => Err(Error::Contract("kappa_k is defined for first-order steps only".into())),
    }
}

/// Minimizes `problem` to `‖g‖ <= cfg.eps`.
///
/// Configuration and compatibility problems are returned as errors; failures
/// during the iteration end the run with [`SolveStatus::NumericalFailure`]
/// and the partial trace.
pub fn solve(problem: &Problem, cfg: &SolverConfig) -> Result<SolveResult> {
    drive(problem, cfg, None)
}

pub(crate) fn drive(problem: &Problem, cfg: &SolverConfig, eps2: Option<f64>) -> Result<SolveResult> {
    cfg.validate()?;
    cfg.preconditioner.check_dim(problem.dim())?;
    let needs_dense = cfg.backend == Backend::Exact || eps2.is_some();
    if needs_dense && !problem.has_dense_hessian() {
        return Err(Error::DenseUnavailable {
            name: problem.name().to_string(),
            dim: problem.dim(),
            cap: problem.dense_cap(),
        });
    }
    let start = Instant::now();
    let mut run = Run {
        problem,
        cfg,
        eps2,
        x: problem.initial_point().clone(),
        f: f64::NAN,
        g: DVector::zeros(problem.dim()),
        sigma: cfg.sigma_min,
        hess: None,
        evals: EvalCounts::default(),
        trace: Vec::new(),
        lambda_min: None,
    };
    let (status, message) = match run.iterate(start) {
        Ok(status) => (status, None),
        Err(e) => (SolveStatus::NumericalFailure, Some(e.to_string())),
    };
    Ok(SolveResult {
        grad_norm: run.g.norm(),
        x: run.x,
        f: run.f,
        status,
        message,
        trace: run.trace,
        evals: run.evals,
        sigma: run.sigma,
        lambda_min: run.lambda_min,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

struct Run<'a> {
    problem: &'a Problem,
    cfg: &'a SolverConfig,
    eps2: Option<f64>,
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    sigma: f64,
    /// Hessian at `x`, kept across rejected iterations.
    hess: Option<DMatrix<f64>>,
    evals: EvalCounts,
    trace: Vec<IterationRecord>,
    lambda_min: Option<f64>,
}

impl Run<'_> {
    /// Trial-point value; `None` marks a non-finite result.
    fn trial_value(&mut self, x: &DVector<f64>) -> Result<Option<f64>> {
        self.evals.f += 1;
        match self.problem.value(x) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Evaluation { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn trial_gradient(&mut self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.evals.g += 1;
        match self.problem.gradient(x) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Evaluation { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn ensure_hessian(&mut self) -> Result<()> {
        if self.hess.is_none() {
            self.evals.h += 1;
            self.hess = Some(self.problem.hessian(&self.x)?);
        }
        Ok(())
    }

    fn iterate(&mut self, start: Instant) -> Result<SolveStatus> {
        self.evals.f += 1;
        self.f = self.problem.value(&self.x)?;
        self.evals.g += 1;
        self.g = self.problem.gradient(&self.x)?;
        self.sigma = self.cfg.sigma0.resolve(self.cfg.preconditioner.dual_norm(&self.g), self.cfg.sigma_min);

        loop {
            let mut second_order = None;
            if self.g.norm() <= self.cfg.eps {
                let Some(eps2) = self.eps2 else {
                    return Ok(SolveStatus::Converged);
                };
                self.ensure_hessian()?;
                let (lambda, u) = sym_eig_min(self.hess.as_ref().expect("cached"))?;
                self.lambda_min = Some(lambda);
                if lambda >= -eps2 {
                    return Ok(SolveStatus::Converged);
                }
                second_order = Some((lambda, u));
            }
            if self.trace.len() >= self.cfg.max_iterations {
                return Ok(SolveStatus::IterationLimit);
            }
            if start.elapsed().as_secs_f64() >= self.cfg.time_limit_seconds {
                return Ok(SolveStatus::TimeLimit);
            }
            let before = self.evals;
            let mut record = match second_order {
                Some((lambda, u)) => self.second_order_iteration(lambda, u)?,
                None => self.first_order_iteration()?,
            };
            record.grad_evals = self.evals.g - before.g;
            record.hess_evals = self.evals.h - before.h;
            record.hess_vec_evals = self.evals.hess_vec - before.hess_vec;
            self.trace.push(record);
        }
    }

    fn compute_step(&mut self) -> Result<StepOutcome> {
        let cfg = self.cfg;
        match cfg.backend {
            Backend::Exact => {
                self.ensure_hessian()?;
                let h = self.hess.as_ref().expect("cached");
                stepcomp_exact_preconditioned(&self.g, h, self.sigma, cfg.kappa_c, &cfg.preconditioner)
            }
            Backend::Krylov => {
                let op = ProblemHessian::new(self.problem, &self.x);
                let out = stepcomp_krylov_preconditioned(
                    &self.g,
                    &op,
                    self.sigma,
                    cfg.kappa_c,
                    cfg.kappa_theta,
                    cfg.theta,
                    self.problem.dim(),
                    &cfg.preconditioner,
                );
                self.evals.hess_vec += op.calls();
                out
            }
        }
    }

    fn first_order_iteration(&mut self) -> Result<IterationRecord> {
        let cfg = self.cfg;
        let pre = &cfg.preconditioner;
        let sigma = self.sigma;
        let g_dual = pre.dual_norm(&self.g);
        let outcome = self.compute_step()?;
        let q = outcome.model_value;
        if !(q < 0.0) {
            return Err(Error::ModelDecrease { q });
        }
        let kappa = kappa_k(outcome.kind, outcome.mu, sigma, cfg)?;
        let s_norm = pre.primal_norm(&outcome.step);
        let x_trial = &self.x + &outcome.step;

        let mut rho = None;
        let mut cond_reject = false;
        let mut trial = None;
        let mut trial_grad_norm = None;
        let reject = if outcome.kind == StepKind::Newton {
            match self.trial_gradient(&x_trial)? {
                None => true,
                Some(gt) => {
                    let gt_dual = pre.dual_norm(&gt);
                    trial_grad_norm = Some(gt.norm());
                    if gt_dual > 0.5 * g_dual && s_norm < 1.0 / (sigma.sqrt() * cfg.kappa_slow()) {
                        cond_reject = true;
                        true
                    } else {
                        match self.trial_value(&x_trial)? {
                            None => true,
                            Some(ft) => {
                                let r = compute_rho(self.f, ft, q)?;
                                rho = Some(r);
                                trial = Some((ft, gt));
                                r < cfg.eta1 || gt_dual > kappa * g_dual / cfg.eps
                            }
                        }
                    }
                }
            }
        } else {
            match self.trial_value(&x_trial)? {
                None => true,
                Some(ft) => {
                    let r = compute_rho(self.f, ft, q)?;
                    rho = Some(r);
                    if r < cfg.eta1 {
                        true
                    } else {
                        match self.trial_gradient(&x_trial)? {
                            None => true,
                            Some(gt) => {
                                let gt_dual = pre.dual_norm(&gt);
                                trial_grad_norm = Some(gt.norm());
                                trial = Some((ft, gt));
                                gt_dual > kappa * g_dual / cfg.eps
                            }
                        }
                    }
                }
            }
        };

        let record = IterationRecord {
            k: self.trace.len(),
            kind: outcome.kind,
            sigma,
            mu: outcome.mu,
            rho,
            grad_norm: self.g.norm(),
            f: self.f,
            step_norm: outcome.step.norm(),
            model_value: q,
            kappa,
            reject,
            cond_reject,
            trial_grad_norm,
            lambda_min: None,
            krylov_dim: outcome.krylov_dim,
            grad_evals: 0,
            hess_evals: 0,
            hess_vec_evals: 0,
        };
        self.finish(reject, rho, x_trial, trial);
        Ok(record)
    }

    fn second_order_iteration(&mut self, lambda: f64, u: DVector<f64>) -> Result<IterationRecord> {
        let cfg = self.cfg;
        let sigma = self.sigma;
        let h = self.hess.as_ref().expect("cached before second-order steps");
        let (s, kappa_hess) = second_order::step_from_eigenpair(&self.g, lambda, u, sigma, cfg.sigma_min, cfg.eta2);
        let q = self.g.dot(&s) + 0.5 * s.dot(&(h * &s));
        if !(q < 0.0) {
            return Err(Error::ModelDecrease { q });
        }
        let x_trial = &self.x + &s;
        let mut rho = None;
        let mut trial = None;
        let mut trial_grad_norm = None;
        // reject if either test fires
        let reject = match self.trial_value(&x_trial)? {
            None => true,
            Some(ft) => {
                let r = compute_rho(self.f, ft, q)?;
                rho = Some(r);
                if r < cfg.eta1 {
                    true
                } else {
                    match self.trial_gradient(&x_trial)? {
                        None => true,
                        Some(gt) => {
                            let gtn = gt.norm();
                            trial_grad_norm = Some(gtn);
                            trial = Some((ft, gt));
                            gtn > kappa_hess
                        }
                    }
                }
            }
        };
        let record = IterationRecord {
            k: self.trace.len(),
            kind: StepKind::SecondOrder,
            sigma,
            mu: (-lambda).max(0.0),
            rho,
            grad_norm: self.g.norm(),
            f: self.f,
            step_norm: s.norm(),
            model_value: q,
            kappa: kappa_hess,
            reject,
            cond_reject: false,
            trial_grad_norm,
            lambda_min: Some(lambda),
            krylov_dim: None,
            grad_evals: 0,
            hess_evals: 0,
            hess_vec_evals: 0,
        };
        self.finish(reject, rho, x_trial, trial);
        Ok(record)
    }

    fn finish(&mut self, reject: bool, rho: Option<f64>, x_trial: DVector<f64>, trial: Option<(f64, DVector<f64>)>) {
        if !reject {
            let (ft, gt) = trial.expect("accepted steps have trial value and gradient");
            self.x = x_trial;
            self.f = ft;
            self.g = gt;
            self.hess = None;
        }
        self.sigma = update_sigma(self.sigma, rho, reject, self.cfg);
    }
}
