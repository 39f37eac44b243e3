//! Matrix-free step computation over growing Krylov subspaces.
//!
//! The Lanczos process started from `g` builds an orthonormal basis `V_p` and
//! the tridiagonal `T_p = V_pᵀ H V_p`. At each dimension the subspace
//! regularization `μ = max(0, -λ_min(T_p))` selects either a subspace Newton
//! solve, accepted once its residual `|α_{p+1} e_pᵀ y_p|` is small enough, or
//! a subspace negative-curvature direction, accepted once its off-subspace
//! curvature `|α_{p+1} e_pᵀ u_p|` is small enough. Both residuals follow from
//! `H V_p = V_p T_p + α_{p+1} v_{p+1} e_pᵀ`.

use nalgebra::DVector;

use super::{HessianOperator, Preconditioner, ScaledOperator, StepKind, StepOutcome};
use crate::error::{Error, Result};
use crate::linalg::{solve_tridiag_shifted, tridiag_eig_min_below, SymTridiag, EIG_TOL};

/// Lanczos basis, tridiagonal projection and pending residual.
#[derive(Debug, Clone)]
pub struct LanczosState {
    basis: Vec<DVector<f64>>,
    tridiag: SymTridiag,
    residual: DVector<f64>,
    next_alpha: f64,
    alpha1: f64,
}

impl LanczosState {
    /// Empty state (`p = 0`) whose first basis vector will be `g / ‖g‖`.
    pub fn new(g: &DVector<f64>) -> Self {
        let alpha1 = g.norm();
        Self { basis: Vec::new(), tridiag: SymTridiag::default(), residual: g.clone(), next_alpha: alpha1, alpha1 }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis
    }

    /// `T_p`; meaningless before the first [`LanczosState::extend`].
    pub fn tridiag(&self) -> &SymTridiag {
        &self.tridiag
    }

    /// `α_{p+1} = ‖r_{p+1}‖`.
    pub fn next_alpha(&self) -> f64 {
        self.next_alpha
    }

    /// `α_1 = ‖g‖`.
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    /// The unnormalized next residual `r_{p+1}`.
    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    /// `V_p y`.
    pub fn combine(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.residual.len());
        for (v, &c) in self.basis.iter().zip(y.iter()) {
            out.axpy(c, v, 1.0);
        }
        out
    }

    /// Appends `v_{p+1} = r_{p+1}/α_{p+1}`, its diagonal entry, and the next
    /// residual, reorthogonalized twice against the whole basis.
    pub fn extend(&mut self, h: &dyn HessianOperator) -> Result<()> {
        if !(self.next_alpha > 0.0) {
            return Err(Error::Contract("cannot extend a Lanczos basis after breakdown".into()));
        }
        let v = &self.residual / self.next_alpha;
        let mut w = h.apply(&v)?;
        let mut delta = v.dot(&w);
        w.axpy(-delta, &v, 1.0);
        if let Some(prev) = self.basis.last() {
            w.axpy(-self.next_alpha, prev, 1.0);
        }
        for _ in 0..2 {
            for vi in &self.basis {
                let c = vi.dot(&w);
                w.axpy(-c, vi, 1.0);
            }
            let c = v.dot(&w);
            w.axpy(-c, &v, 1.0);
            delta += c;
        }
        self.tridiag.push(delta, self.next_alpha);
        self.basis.push(v);
        self.next_alpha = w.norm();
        self.residual = w;
        Ok(())
    }
}

fn breakdown_tol(gnorm: f64) -> f64 {
    1e-13 * (1.0 + gnorm)
}

/// Krylov trial step. `max_dim` caps the subspace dimension (it is clamped
/// to `n`); hitting a cap below `n` without an acceptable step is an error.
#[allow(clippy::too_many_arguments)]
pub fn stepcomp_krylov(
    g: &DVector<f64>,
    h: &dyn HessianOperator,
    sigma: f64,
    kappa_c: f64,
    kappa_theta: f64,
    theta: f64,
    max_dim: usize,
) -> Result<StepOutcome> {
    let n = g.len();
    if h.dim() != n {
        return Err(Error::Dimension { expected: n, got: h.dim() });
    }
    if !(theta > 0.0 && theta <= 1.0) || !(kappa_theta >= 0.0) || max_dim == 0 {
        return Err(Error::Config(format!(
            "invalid Krylov constants: theta = {theta}, kappa_theta = {kappa_theta}, max_dim = {max_dim}"
        )));
    }
    let gnorm = g.norm();
    if !(gnorm > 0.0) {
        return Err(Error::Contract("Krylov step needs a non-zero gradient".into()));
    }
    let max_dim = max_dim.min(n);
    let sqrt_sigma = sigma.sqrt();
    let reg = sqrt_sigma * gnorm;
    let threshold = kappa_c * reg;
    let tol = breakdown_tol(gnorm);

    let mut state = LanczosState::new(g);
    let mut lambda_prev = None;
    loop {
        state.extend(h)?;
        let p = state.dim();
        let t = state.tridiag().clone();
        let alpha_next = state.next_alpha();
        let exhausted = alpha_next <= tol || p == n;
        let (lambda, w) = tridiag_eig_min_below(&t, lambda_prev)?;
        lambda_prev = Some(lambda);
        let mut mu = (-lambda).max(0.0);
        let rhs = {
            let mut e = DVector::zeros(p);
            e[0] = -state.alpha1();
            e
        };

        if mu <= threshold {
            let y = match solve_tridiag_shifted(&t, reg + mu, &rhs) {
                Ok(y) => Some(y),
                Err(Error::ShiftTooSmall { .. }) => {
                    mu += 10.0 * EIG_TOL * (1.0 + t.norm_bound());
                    if mu <= threshold {
                        Some(solve_tridiag_shifted(&t, reg + mu, &rhs)?)
                    } else {
                        None
                    }
                }
                Err(e) => return Err(e),
            };
            if let Some(y) = y {
                let resid = (alpha_next * y[p - 1]).abs();
                if exhausted || resid <= kappa_theta * (reg * y.norm()).min(gnorm) {
                    let ty = t.mul_vec(&y);
                    return Ok(StepOutcome {
                        model_value: state.alpha1() * y[0] + 0.5 * y.dot(&ty),
                        step: state.combine(&y),
                        mu,
                        kind: StepKind::Newton,
                        residual_norm: Some(resid),
                        krylov_dim: Some(p),
                    });
                }
            }
        }

        if mu > threshold {
            let y = solve_tridiag_shifted(&t, reg + mu, &rhs).ok();
            let u = combine_negcurv(y.as_ref(), &t, theta, lambda, w);
            let tu = t.mul_vec(&u);
            let off = alpha_next * u[p - 1];
            let lam2 = lambda * lambda;
            // The second test only binds when `u` is the fallback eigenvector
            // with θ > 1/√2; it keeps ‖Hu‖ <= μ/θ for the full-space step.
            let accept = exhausted
                || (off * off <= lam2 / (2.0 * theta * theta)
                    && tu.norm_squared() + off * off <= lam2 / (theta * theta));
            if accept {
                let c = theta * kappa_c / sqrt_sigma;
                return Ok(StepOutcome {
                    model_value: c * state.alpha1() * u[0] + 0.5 * c * c * u.dot(&tu),
                    step: c * state.combine(&u),
                    mu,
                    kind: StepKind::NegativeCurvature,
                    residual_norm: None,
                    krylov_dim: Some(p),
                });
            }
        }

        if p >= max_dim {
            return Err(Error::SubspaceExhausted { dim: p, n });
        }
    }
}

/// Subspace negative-curvature direction `u_p`: a unit vector with
/// `e_1ᵀu <= 0`, `uᵀTu <= θ λ_min(T)` and `uᵀT²u <= λ_min(T)² / (2θ²)`.
///
/// Candidates `normalize(c y + w)` are tried with `w` the oriented minimum
/// eigenvector of `T` and `c = k / (1 + ‖y‖)` for `k = 1, 1/2, 1/4`; the first
/// admissible one wins, otherwise `w` itself is returned.
pub fn build_subspace_negcurv(y: Option<&DVector<f64>>, t: &SymTridiag, theta: f64) -> Result<DVector<f64>> {
    let (lambda, w) = tridiag_eig_min_below(t, None)?;
    if !(lambda < 0.0) {
        return Err(Error::Contract(format!("no negative curvature in subspace (λ_min = {lambda:e})")));
    }
    Ok(combine_negcurv(y, t, theta, lambda, w))
}

const COMBINATION_WEIGHTS: [f64; 3] = [1.0, 0.5, 0.25];

fn combine_negcurv(
    y: Option<&DVector<f64>>,
    t: &SymTridiag,
    theta: f64,
    lambda: f64,
    mut w: DVector<f64>,
) -> DVector<f64> {
    if w[0] > 0.0 {
        w.neg_mut();
    }
    let Some(y) = y.filter(|y| y.len() == w.len() && y.iter().all(|v| v.is_finite())) else {
        return w;
    };
    let ynorm = y.norm();
    if ynorm == 0.0 {
        return w;
    }
    let curvature_cap = lambda * lambda / (2.0 * theta * theta);
    for k in COMBINATION_WEIGHTS {
        let mut u = (k / (1.0 + ynorm)) * y + &w;
        let nrm = u.norm();
        if !(nrm > 0.0) {
            continue;
        }
        u /= nrm;
        if u[0] > 0.0 {
            u.neg_mut();
        }
        let tu = t.mul_vec(&u);
        if u.dot(&tu) <= theta * lambda && tu.norm_squared() <= curvature_cap {
            return u;
        }
    }
    w
}

/// Krylov step in the geometry of a diagonal preconditioner `M`.
///
/// Equivalent to preconditioned Lanczos: the iteration runs on
/// `M^{-1/2} H M^{-1/2}` from `M^{-1/2} g` and the step is mapped back by
/// `M^{-1/2}`, so residuals are measured in `‖·‖_{M⁻¹}` and steps in `‖·‖_M`.
#[allow(clippy::too_many_arguments)]
pub fn stepcomp_krylov_preconditioned(
    g: &DVector<f64>,
    h: &dyn HessianOperator,
    sigma: f64,
    kappa_c: f64,
    kappa_theta: f64,
    theta: f64,
    max_dim: usize,
    precond: &Preconditioner,
) -> Result<StepOutcome> {
    precond.check_dim(g.len())?;
    let Some(d) = precond.inv_sqrt() else {
        return stepcomp_krylov(g, h, sigma, kappa_c, kappa_theta, theta, max_dim);
    };
    let op = ScaledOperator { inner: h, scale: &d };
    let mut out = stepcomp_krylov(&g.component_mul(&d), &op, sigma, kappa_c, kappa_theta, theta, max_dim)?;
    out.step.component_mul_assign(&d);
    Ok(out)
}
