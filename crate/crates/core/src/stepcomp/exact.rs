//! Step computation from a dense eigen-decomposition and an exact shifted
//! solve. Outputs satisfy the step conditions with `θ = 1`, `κ_θ = 0`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{model_value, Preconditioner, StepKind, StepOutcome};
use crate::error::{Error, Result};
use crate::linalg::{solve_shifted, sym_eig_min, EIG_TOL};

/// Exact trial step for gradient `g`, Hessian `h` and weight `sigma`.
///
/// `μ = max(0, -λ_min(H))`. When `μ <= κ_C √σ ‖g‖` the step solves
/// `(H + (μ + √σ‖g‖) I) s = -g`; otherwise `s = (κ_C/√σ) u` with `u` the unit
/// minimum eigenvector oriented so that `gᵀu <= 0`.
pub fn stepcomp_exact(g: &DVector<f64>, h: &DMatrix<f64>, sigma: f64, kappa_c: f64) -> Result<StepOutcome> {
    let n = g.len();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::Dimension { expected: n, got: h.nrows() });
    }
    let gnorm = g.norm();
    if !(gnorm > 0.0) {
        return Err(Error::Contract("exact step needs a non-zero gradient".into()));
    }
    let sqrt_sigma = sigma.sqrt();
    let threshold = kappa_c * sqrt_sigma * gnorm;

    // a successful factorization of H certifies λ_min > 0, hence μ = 0
    let mut eig = None;
    let mut mu = if Cholesky::new(h.clone()).is_some() {
        0.0
    } else {
        let (lambda, u) = sym_eig_min(h)?;
        eig = Some((lambda, u));
        (-lambda).max(0.0)
    };

    if mu <= threshold {
        match solve_shifted(h, mu + sqrt_sigma * gnorm, g) {
            Ok(s) => return Ok(newton_outcome(g, h, s, mu, sqrt_sigma * gnorm)),
            Err(Error::ShiftTooSmall { .. }) => {
                // λ_min slightly overestimated: inflate once and retry
                mu += 10.0 * EIG_TOL * (1.0 + h.norm());
                if mu <= threshold {
                    let s = solve_shifted(h, mu + sqrt_sigma * gnorm, g)?;
                    return Ok(newton_outcome(g, h, s, mu, sqrt_sigma * gnorm));
                }
            }
            Err(e) => return Err(e),
        }
    }

    let (_, mut u) = match eig {
        Some(e) => e,
        None => sym_eig_min(h)?,
    };
    if g.dot(&u) > 0.0 {
        u.neg_mut();
    }
    let s = (kappa_c / sqrt_sigma) * u;
    let hs = h * &s;
    Ok(StepOutcome {
        model_value: model_value(g, &s, &hs),
        step: s,
        mu,
        kind: StepKind::NegativeCurvature,
        residual_norm: None,
        krylov_dim: None,
    })
}

fn newton_outcome(g: &DVector<f64>, h: &DMatrix<f64>, s: DVector<f64>, mu: f64, reg: f64) -> StepOutcome {
    let hs = h * &s;
    let r = &hs + (reg + mu) * &s + g;
    StepOutcome {
        model_value: model_value(g, &s, &hs),
        step: s,
        mu,
        kind: StepKind::Newton,
        residual_norm: Some(r.norm()),
        krylov_dim: None,
    }
}

/// Exact step in the geometry of a diagonal preconditioner `M`: the
/// computation runs on `M^{-1/2} H M^{-1/2}` and `M^{-1/2} g`, and the step is
/// mapped back, so `μ = max(0, -λ_min(M^{-1/2} H M^{-1/2}))`.
pub fn stepcomp_exact_preconditioned(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    sigma: f64,
    kappa_c: f64,
    precond: &Preconditioner,
) -> Result<StepOutcome> {
    precond.check_dim(g.len())?;
    let Some(d) = precond.inv_sqrt() else {
        return stepcomp_exact(g, h, sigma, kappa_c);
    };
    let g_scaled = g.component_mul(&d);
    let h_scaled = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| d[i] * h[(i, j)] * d[j]);
    let mut out = stepcomp_exact(&g_scaled, &h_scaled, sigma, kappa_c)?;
    out.step.component_mul_assign(&d);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepcomp::{verify_step_conditions, StepConstants};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EXACT: StepConstants = StepConstants { kappa_c: 1000.0, kappa_theta: 0.0, theta: 1.0 };

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn identity_hessian_gives_newton() {
        let out = stepcomp_exact(&dv(&[1.0, 0.0]), &DMatrix::identity(2, 2), 1.0, 1000.0).unwrap();
        assert_eq!(out.kind, StepKind::Newton);
        assert_eq!(out.mu, 0.0);
        assert!((&out.step - dv(&[-0.5, 0.0])).amax() < 1e-15);
    }

    #[test]
    fn tiny_gradient_with_indefinite_hessian_gives_negative_curvature() {
        let g = dv(&[1e-9, 0.0]);
        let h = DMatrix::from_diagonal(&dv(&[-2.0, 1.0]));
        let out = stepcomp_exact(&g, &h, 1.0, 1000.0).unwrap();
        assert_eq!(out.kind, StepKind::NegativeCurvature);
        assert!((out.mu - 2.0).abs() < 1e-14);
        assert!((out.step[0] + 1000.0).abs() < 1e-9 && out.step[1].abs() < 1e-9);
        let report = verify_step_conditions(&g, &h, 1.0, &out, EXACT).unwrap();
        assert!(report.passed(), "{report:?}");
        let u = &out.step / 1000.0;
        assert!((u.dot(&(&h * &u)) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_newton_closed_form() {
        let out = stepcomp_exact(&dv(&[1.0, 1.0]), &DMatrix::from_diagonal(&dv(&[1.0, 3.0])), 4.0, 1000.0).unwrap();
        assert_eq!(out.kind, StepKind::Newton);
        let tau = 2.0 * 2f64.sqrt();
        assert!((out.step[0] + 1.0 / (1.0 + tau)).abs() < 1e-14);
        assert!((out.step[1] + 1.0 / (3.0 + tau)).abs() < 1e-14);
        assert!((out.step[0] + 0.26120).abs() < 5e-6 && (out.step[1] + 0.17157).abs() < 5e-6);
    }

    #[test]
    fn boundary_mu_routes_to_newton() {
        // μ = 1 = κ_C √σ ‖g‖ exactly
        let h = DMatrix::from_diagonal(&dv(&[-1.0, 3.0]));
        let out = stepcomp_exact(&dv(&[0.0, 1.0]), &h, 1.0, 1.0).unwrap();
        assert_eq!(out.mu, 1.0);
        assert_eq!(out.kind, StepKind::Newton);
    }

    #[test]
    fn zero_gradient_is_a_contract_error() {
        assert!(stepcomp_exact(&dv(&[0.0, 0.0]), &DMatrix::identity(2, 2), 1.0, 10.0).is_err());
    }

    #[test]
    fn random_outputs_satisfy_step_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let n = rng.random_range(1..=20);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = (&a + a.transpose()) * 0.5;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)) * 10f64.powf(rng.random_range(-6.0..1.0));
            let sigma = 10f64.powf(rng.random_range(-8.0..4.0));
            let out = stepcomp_exact(&g, &h, sigma, 1000.0).unwrap();
            let report = verify_step_conditions(&g, &h, sigma, &out, EXACT).unwrap();
            assert!(report.passed(), "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn perturbed_step_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &a * a.transpose() + DMatrix::identity(n, n);
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut out = stepcomp_exact(&g, &h, 1.0, 1000.0).unwrap();
        assert!(verify_step_conditions(&g, &h, 1.0, &out, EXACT).unwrap().passed());
        out.step[0] += 1e-3;
        assert!(!verify_step_conditions(&g, &h, 1.0, &out, EXACT).unwrap().passed());
    }

    #[test]
    fn identity_preconditioner_is_a_no_op() {
        let g = dv(&[0.3, -1.0, 2.0]);
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, -1.0, 0.5, 0.0, 0.5, 3.0]);
        let a = stepcomp_exact(&g, &h, 0.7, 1000.0).unwrap();
        let b = stepcomp_exact_preconditioned(&g, &h, 0.7, 1000.0, &Preconditioner::Identity).unwrap();
        assert_eq!(a, b);
    }
}
