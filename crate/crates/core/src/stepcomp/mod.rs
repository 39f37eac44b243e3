//! Trial-step computation.
//!
//! A backend receives the gradient `g`, Hessian access, the regularization
//! weight `σ` and the step constants, and returns a tentative regularization
//! `μ` with a trial step. If `μ <= κ_C √σ ‖g‖` the step approximately solves
//! `(H + (√σ‖g‖ + μ) I) s = -g` (a *Newton* step); otherwise it is a scaled
//! unit direction of sufficiently negative curvature.
//!
//! [`verify_step_conditions`] checks those output conditions after the fact and
//! is used by the test suites of both backends.

use std::cell::Cell;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Problem;

pub mod exact;
pub mod krylov;

pub use exact::{stepcomp_exact, stepcomp_exact_preconditioned};
pub use krylov::{build_subspace_negcurv, stepcomp_krylov, stepcomp_krylov_preconditioned, LanczosState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Newton,
    NegativeCurvature,
    SecondOrder,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Newton => "newton",
            StepKind::NegativeCurvature => "negative-curvature",
            StepKind::SecondOrder => "second-order",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: DVector<f64>,
    pub mu: f64,
    pub kind: StepKind,
    /// `‖(H + (√σ‖g‖ + μ) I) s + g‖` for Newton steps, `None` otherwise.
    pub residual_norm: Option<f64>,
    pub krylov_dim: Option<usize>,
    /// Quadratic model value `gᵀs + ½ sᵀHs`.
    pub model_value: f64,
}

/// Hessian access for the step backends.
pub trait HessianOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>>;
}

impl HessianOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self * v)
    }
}

/// Hessian-vector products of a problem at a fixed point, with a call counter.
pub struct ProblemHessian<'a> {
    problem: &'a Problem,
    x: &'a DVector<f64>,
    calls: Cell<usize>,
}

impl<'a> ProblemHessian<'a> {
    pub fn new(problem: &'a Problem, x: &'a DVector<f64>) -> Self {
        Self { problem, x, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl HessianOperator for ProblemHessian<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.calls.set(self.calls.get() + 1);
        self.problem.hess_vec(self.x, v)
    }
}

/// `D H D` for a diagonal scaling `D`, applied matrix-free.
pub(crate) struct ScaledOperator<'a> {
    pub inner: &'a dyn HessianOperator,
    pub scale: &'a DVector<f64>,
}

impl HessianOperator for ScaledOperator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.inner.apply(&v.component_mul(self.scale))?;
        Ok(w.component_mul(self.scale))
    }
}

/// Smallest admissible diagonal preconditioner entry.
pub const PRECONDITIONER_FLOOR: f64 = 1e-12;

/// Diagonal preconditioner `M`, defining the primal norm `‖x‖_M = √(xᵀMx)`
/// and the dual norm `‖x‖_{M⁻¹}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Preconditioner {
    #[default]
    Identity,
    Diagonal(DVector<f64>),
}

impl Preconditioner {
    /// Diagonal preconditioner; entries are floored at [`PRECONDITIONER_FLOOR`].
    pub fn diagonal(entries: impl IntoIterator<Item = f64>) -> Result<Self> {
        let v: Vec<f64> = entries.into_iter().collect();
        if v.is_empty() || v.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("diagonal preconditioner needs finite entries".into()));
        }
        Ok(Preconditioner::Diagonal(DVector::from_iterator(
            v.len(),
            v.into_iter().map(|m| m.max(PRECONDITIONER_FLOOR)),
        )))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Preconditioner::Identity)
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            Preconditioner::Diagonal(m) if m.len() != n => Err(Error::Dimension { expected: n, got: m.len() }),
            _ => Ok(()),
        }
    }

    /// `M^{-1/2}` as a vector, or `None` for the identity.
    pub(crate) fn inv_sqrt(&self) -> Option<DVector<f64>> {
        match self {
            Preconditioner::Identity => None,
            Preconditioner::Diagonal(m) => Some(m.map(|v| 1.0 / v.sqrt())),
        }
    }

    pub fn primal_norm(&self, x: &DVector<f64>) -> f64 {
        match self {
            Preconditioner::Identity => x.norm(),
            Preconditioner::Diagonal(m) => x.iter().zip(m.iter()).map(|(a, w)| w * a * a).sum::<f64>().sqrt(),
        }
    }

    pub fn dual_norm(&self, x: &DVector<f64>) -> f64 {
        match self {
            Preconditioner::Identity => x.norm(),
            Preconditioner::Diagonal(m) => x.iter().zip(m.iter()).map(|(a, w)| a * a / w).sum::<f64>().sqrt(),
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Preconditioner::Identity => x.clone(),
            Preconditioner::Diagonal(m) => x.component_mul(m),
        }
    }
}

/// Constants the step outputs are checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConstants {
    pub kappa_c: f64,
    pub kappa_theta: f64,
    pub theta: f64,
}

/// Outcome of [`verify_step_conditions`]: empty `violations` means success.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepConditionReport {
    pub violations: Vec<String>,
}

impl StepConditionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative tolerance used by the verifier.
pub const VERIFY_TOL: f64 = 1e-9;

/// Checks a backend outcome against the Newton / negative-curvature output
/// conditions, in Euclidean norms.
pub fn verify_step_conditions(
    g: &DVector<f64>,
    h: &dyn HessianOperator,
    sigma: f64,
    outcome: &StepOutcome,
    consts: StepConstants,
) -> Result<StepConditionReport> {
    verify_step_conditions_preconditioned(g, h, sigma, outcome, consts, &Preconditioner::Identity)
}

/// As [`verify_step_conditions`] with `‖·‖_M` as primal and `‖·‖_{M⁻¹}` as dual
/// norm. The curvature bound on `Hu` is measured in the dual norm.
pub fn verify_step_conditions_preconditioned(
    g: &DVector<f64>,
    h: &dyn HessianOperator,
    sigma: f64,
    outcome: &StepOutcome,
    consts: StepConstants,
    precond: &Preconditioner,
) -> Result<StepConditionReport> {
    let tol = VERIFY_TOL;
    let mut violations = Vec::new();
    let s = &outcome.step;
    let mu = outcome.mu;
    let sqrt_sigma = sigma.sqrt();
    let gnorm = precond.dual_norm(g);
    let threshold = consts.kappa_c * sqrt_sigma * gnorm;
    let newton = mu <= threshold;

    match (newton, outcome.kind) {
        (true, StepKind::Newton) | (false, StepKind::NegativeCurvature) => {}
        (_, kind) => violations.push(format!("kind {kind} inconsistent with mu = {mu:e} vs threshold {threshold:e}")),
    }

    if newton {
        let hs = h.apply(s)?;
        let ms = precond.apply(s);
        let s_m = precond.primal_norm(s);
        let tau = sqrt_sigma * gnorm + mu;
        let curvature = s.dot(&hs) + mu * s.dot(&ms);
        let scale_posdef = hs.norm() * s.norm() + mu * s.dot(&ms).abs();
        if curvature < -tol * scale_posdef {
            violations.push(format!("sᵀ(H + μM)s = {curvature:e} < 0"));
        }
        let r = &hs + tau * &ms + g;
        let r_norm = precond.dual_norm(&r);
        let scale = gnorm + precond.dual_norm(&hs) + tau * s_m;
        let bound = consts.kappa_theta * (sqrt_sigma * gnorm * s_m).min(gnorm);
        if r_norm > bound + tol * scale {
            violations.push(format!("residual {r_norm:e} exceeds bound {bound:e}"));
        }
        let rs = r.dot(s);
        if rs.abs() > tol * scale * s_m {
            violations.push(format!("rᵀs = {rs:e} not zero"));
        }
    } else {
        let c = consts.theta * consts.kappa_c / sqrt_sigma;
        let u = s / c;
        let hu = h.apply(&u)?;
        let gu = g.dot(&u);
        if gu > tol * gnorm {
            violations.push(format!("gᵀu = {gu:e} > 0"));
        }
        let u_norm = precond.primal_norm(&u);
        if (u_norm - 1.0).abs() > tol {
            violations.push(format!("‖u‖ = {u_norm} is not 1"));
        }
        let hu_dual = precond.dual_norm(&hu);
        let uhu = u.dot(&hu);
        if uhu > -consts.theta * mu + tol * (hu_dual + mu) {
            violations.push(format!("uᵀHu = {uhu:e} > -θμ = {:e}", -consts.theta * mu));
        }
        let cap = mu / consts.theta;
        let scale = hu_dual + cap;
        if hu_dual * hu_dual > cap * cap + tol * scale * scale {
            violations.push(format!("‖Hu‖² = {:e} > μ²/θ² = {:e}", hu_dual * hu_dual, cap * cap));
        }
    }
    Ok(StepConditionReport { violations })
}

pub(crate) fn model_value(g: &DVector<f64>, s: &DVector<f64>, hs: &DVector<f64>) -> f64 {
    g.dot(s) + 0.5 * s.dot(hs)
}
