//! Second-order driver.
//!
//! While `‖g‖ > ε1` it behaves exactly like [`crate::solver::solve`] with
//! `ε = ε1`. Once the gradient is small, it either stops (`λ_min(H) >= -ε2`)
//! or moves along the minimum eigenvector, `s = u/√σ` with `gᵀu <= 0`.
//! Such a step is rejected when `ρ < η1` or when
//! `‖∇f(x+s)‖ > κ_hess = 3(1-η2)|λ|/(2√σ_min) + 1 + |λ|/√σ`.

use nalgebra::{DMatrix, DVector};

use crate::config::SOConfig;
use crate::error::{Error, Result};
use crate::linalg::sym_eig_min;
use crate::problem::Problem;
use crate::solver::{drive, SolveResult};

/// Minimizes `problem` to an approximate second-order critical point.
pub fn solve_so(problem: &Problem, config: &SOConfig) -> Result<SolveResult> {
    config.validate()?;
    drive(problem, &config.base, Some(config.eps2))
}

/// `κ_hess` for minimum eigenvalue `lambda` at weight `sigma`.
pub fn kappa_hess(lambda: f64, sigma: f64, sigma_min: f64, eta2: f64) -> f64 {
    let l = lambda.abs();
    3.0 * (1.0 - eta2) * l / (2.0 * sigma_min.sqrt()) + 1.0 + l / sigma.sqrt()
}

/// Second-order step `(s, κ_hess)` at a point with `λ_min(H) < -ε2`.
pub fn so_step(g: &DVector<f64>, h: &DMatrix<f64>, sigma: f64, config: &SOConfig) -> Result<(DVector<f64>, f64)> {
    if g.len() != h.nrows() {
        return Err(Error::Dimension { expected: h.nrows(), got: g.len() });
    }
    let (lambda, u) = sym_eig_min(h)?;
    if lambda >= -config.eps2 {
        return Err(Error::Contract(format!(
            "second-order step requested with λ_min = {lambda:e} >= -eps2 = {:e}",
            -config.eps2
        )));
    }
    Ok(step_from_eigenpair(g, lambda, u, sigma, config.base.sigma_min, config.base.eta2))
}

pub(crate) fn step_from_eigenpair(
    g: &DVector<f64>,
    lambda: f64,
    mut u: DVector<f64>,
    sigma: f64,
    sigma_min: f64,
    eta2: f64,
) -> (DVector<f64>, f64) {
    if g.dot(&u) > 0.0 {
        u.neg_mut();
    }
    (u / sigma.sqrt(), kappa_hess(lambda, sigma, sigma_min, eta2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Backend, SolverConfig};
    use crate::solver::{solve, SolveStatus};
    use crate::stepcomp::StepKind;
    use crate::suite;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn kappa_hess_example() {
        assert!((kappa_hess(-1.0, 4.0, 1e-8, 0.95) - 751.5).abs() < 1e-9);
    }

    #[test]
    fn step_on_diagonal_hessian() {
        let h = DMatrix::from_diagonal(&dv(&[-1.0, 2.0]));
        let (s, k) = so_step(&dv(&[0.0, 0.0]), &h, 4.0, &SOConfig::default()).unwrap();
        assert!((s[0].abs() - 0.5).abs() < 1e-14 && s[1].abs() < 1e-14);
        assert!((k - 751.5).abs() < 1e-9);
        let decrease = -(0.5 * s.dot(&(&h * &s)));
        assert!(decrease >= 1.0 / 8.0 * (1.0 - 1e-12));
    }

    #[test]
    fn step_sign_follows_gradient() {
        let h = DMatrix::from_diagonal(&dv(&[-1.0, 2.0]));
        let (s, _) = so_step(&dv(&[1e-9, 0.0]), &h, 4.0, &SOConfig::default()).unwrap();
        assert!((s - dv(&[-0.5, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn step_requires_negative_curvature() {
        let h = DMatrix::from_diagonal(&dv(&[1.0, 2.0]));
        assert!(so_step(&dv(&[0.0, 0.0]), &h, 1.0, &SOConfig::default()).is_err());
    }

    #[test]
    fn random_indefinite_steps_satisfy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = SOConfig::default();
        for _ in 0..50 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let h = (&a + a.transpose()) * 0.5 - DMatrix::identity(5, 5) * 0.5;
            let g = DVector::from_fn(5, |_, _| rng.random_range(-1e-7..1e-7));
            let sigma = 10f64.powf(rng.random_range(-4.0..4.0));
            let (lambda, _) = sym_eig_min(&h).unwrap();
            let (s, _) = so_step(&g, &h, sigma, &cfg).unwrap();
            assert!((s.norm() - 1.0 / sigma.sqrt()).abs() < 1e-12 * s.norm());
            assert!(g.dot(&s) <= 0.0);
            assert!((s.dot(&(&h * &s)) - lambda / sigma).abs() < 1e-9 * (1.0 + lambda.abs() / sigma));
            let decrease = -(g.dot(&s) + 0.5 * s.dot(&(&h * &s)));
            assert!(decrease >= lambda.abs() / (2.0 * sigma) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn escapes_strict_saddle() {
        let res = solve_so(&suite::double_well_saddle(5), &SOConfig::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Converged, "{res:?}");
        assert!(res.grad_norm <= 1e-6);
        assert!(res.lambda_min.unwrap() >= -1e-3);
        assert!(res.count_kind(StepKind::SecondOrder) >= 1);
        for r in &res.trace {
            assert_eq!(r.kind == StepKind::SecondOrder, r.grad_norm <= 1e-6);
        }
    }

    #[test]
    fn second_order_point_terminates_immediately() {
        let at_min = Problem::new("rosen_min", dv(&[1.0, 1.0]), RosenAt).unwrap();
        let res = solve_so(&at_min, &SOConfig::default()).unwrap();
        assert!(res.trace.is_empty());
        assert_eq!(res.status, SolveStatus::Converged);
    }

    struct RosenAt;

    impl crate::problem::Objective for RosenAt {
        fn dim(&self) -> usize {
            2
        }

        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }

        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            let t = x[1] - x[0] * x[0];
            out[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * t;
            out[1] = 200.0 * t;
        }

        fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64)) {
            visit(0, 0, 2.0 - 400.0 * (x[1] - 3.0 * x[0] * x[0]));
            visit(0, 1, -400.0 * x[0]);
            visit(1, 1, 200.0);
        }
    }

    #[test]
    fn matches_first_order_driver_on_convex_problems() {
        let base = SolverConfig::default_config(Backend::Exact);
        let p = suite::convex_quadratic(10);
        let a = solve(&p, &base).unwrap();
        let b = solve_so(&p, &SOConfig::new(base, 1e-3)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x, b.x);
    }
}
