//! Objective-function interface and finite-difference derivative checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension for which a dense Hessian is materialized by default.
pub const DEFAULT_DENSE_CAP: usize = 1000;

/// A twice continuously differentiable function `R^n -> R`.
///
/// Implementations report the Hessian through [`Objective::hessian_entries`];
/// both the dense Hessian and Hessian-vector products are assembled from those
/// entries, so the two access paths can never disagree.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient at `x` into `out` (overwriting it).
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Visits the upper triangle (`i <= j`) of the Hessian at `x`.
    /// Repeated `(i, j)` pairs accumulate.
    fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64));
}

/// Analysis-only constants attached to a problem; used by test oracles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetadata {
    pub f_low: Option<f64>,
    pub l0: Option<f64>,
    pub l1: Option<f64>,
    pub delta: Option<f64>,
    pub kappa_b: Option<f64>,
}

/// A named objective with a starting point.
///
/// Cloning is cheap; evaluators are pure, so a `Problem` can be shared
/// between concurrent solves.
#[derive(Clone)]
pub struct Problem {
    name: String,
    x0: DVector<f64>,
    objective: Arc<dyn Objective>,
    metadata: ProblemMetadata,
    dense_cap: usize,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("metadata", &self.metadata)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(name: impl Into<String>, x0: DVector<f64>, objective: impl Objective + 'static) -> Result<Self> {
        let objective: Arc<dyn Objective> = Arc::new(objective);
        if objective.dim() == 0 {
            return Err(Error::Config("problem dimension must be positive".into()));
        }
        if x0.len() != objective.dim() {
            return Err(Error::Dimension { expected: objective.dim(), got: x0.len() });
        }
        Ok(Self {
            name: name.into(),
            x0,
            objective,
            metadata: ProblemMetadata::default(),
            dense_cap: DEFAULT_DENSE_CAP,
        })
    }

    pub fn with_metadata(mut self, metadata: ProblemMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn with_dense_cap(mut self, cap: usize) -> Self {
        self.dense_cap = cap;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn initial_point(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn metadata(&self) -> &ProblemMetadata {
        &self.metadata
    }

    pub fn dense_cap(&self) -> usize {
        self.dense_cap
    }

    pub fn has_dense_hessian(&self) -> bool {
        self.dim() <= self.dense_cap
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        if !all_finite(x.as_slice()) {
            return Err(Error::Evaluation { what: "input point", x: x.as_slice().to_vec() });
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        let f = self.objective.value(x.as_slice());
        if !f.is_finite() {
            return Err(Error::Evaluation { what: "objective value", x: x.as_slice().to_vec() });
        }
        Ok(f)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut g = DVector::zeros(self.dim());
        self.objective.gradient(x.as_slice(), g.as_mut_slice());
        if !all_finite(g.as_slice()) {
            return Err(Error::Evaluation { what: "gradient", x: x.as_slice().to_vec() });
        }
        Ok(g)
    }

    /// Dense symmetric Hessian; refused above the dense cap.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if !self.has_dense_hessian() {
            return Err(Error::DenseUnavailable { name: self.name.clone(), dim: self.dim(), cap: self.dense_cap });
        }
        self.check_point(x)?;
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        self.objective.hessian_entries(x.as_slice(), &mut |i, j, v| {
            h[(i, j)] += v;
            if i != j {
                h[(j, i)] += v;
            }
        });
        if !all_finite(h.as_slice()) {
            return Err(Error::Evaluation { what: "Hessian", x: x.as_slice().to_vec() });
        }
        Ok(h)
    }

    /// Hessian-vector product `H(x) v`, available at any dimension.
    pub fn hess_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        if v.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: v.len() });
        }
        let mut out = DVector::zeros(self.dim());
        self.objective.hessian_entries(x.as_slice(), &mut |i, j, h| {
            out[i] += h * v[j];
            if i != j {
                out[j] += h * v[i];
            }
        });
        if !all_finite(out.as_slice()) {
            return Err(Error::Evaluation { what: "Hessian-vector product", x: x.as_slice().to_vec() });
        }
        Ok(out)
    }

    /// Value, gradient and dense Hessian at `x`.
    pub fn eval_all(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?, self.hessian(x)?))
    }

    /// Compares analytic derivatives with central differences at `x`.
    ///
    /// Errors are measured as `max|fd - analytic| / max(1, max|analytic|)`,
    /// the gradient against differences of `f` and the Hessian (column by
    /// column through `hess_vec`) against differences of the gradient.
    pub fn check_derivatives(&self, x: &DVector<f64>, h: f64) -> Result<DerivativeReport> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
        }
        let n = self.dim();
        let g = self.gradient(x)?;

        let mut grad_err: f64 = 0.0;
        let mut xp = x.clone();
        for i in 0..n {
            let xi = x[i];
            xp[i] = xi + h;
            let fp = self.value(&xp)?;
            xp[i] = xi - h;
            let fm = self.value(&xp)?;
            xp[i] = xi;
            grad_err = grad_err.max(((fp - fm) / (2.0 * h) - g[i]).abs());
        }
        let grad_error = grad_err / g.amax().max(1.0);

        let mut hess_err: f64 = 0.0;
        let mut hess_scale: f64 = 1.0;
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.hess_vec(x, &e)?;
            e[j] = 0.0;
            let xj = x[j];
            xp[j] = xj + h;
            let gp = self.gradient(&xp)?;
            xp[j] = xj - h;
            let gm = self.gradient(&xp)?;
            xp[j] = xj;
            for i in 0..n {
                hess_err = hess_err.max(((gp[i] - gm[i]) / (2.0 * h) - col[i]).abs());
            }
            hess_scale = hess_scale.max(col.amax());
        }
        let hessian_error = hess_err / hess_scale;

        Ok(DerivativeReport {
            step: h,
            gradient_error: grad_error,
            hessian_error,
            gradient_tolerance: 10.0 * h,
            hessian_tolerance: 100.0 * h,
            gradient_ok: grad_error <= 10.0 * h,
            hessian_ok: hessian_error <= 100.0 * h,
        })
    }

    /// Runs [`Problem::check_derivatives`] at `count` points drawn uniformly
    /// from the box `x0 ± radius`, using a seeded generator.
    pub fn check_derivatives_random(&self, count: usize, radius: f64, h: f64, seed: u64) -> Result<RandomCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let x = DVector::from_fn(self.dim(), |i, _| self.x0[i] + rng.random_range(-radius..=radius));
            points.push(self.check_derivatives(&x, h)?);
        }
        Ok(RandomCheckReport { seed, radius, points })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub step: f64,
    pub gradient_error: f64,
    pub hessian_error: f64,
    pub gradient_tolerance: f64,
    pub hessian_tolerance: f64,
    pub gradient_ok: bool,
    pub hessian_ok: bool,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.gradient_ok && self.hessian_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomCheckReport {
    pub seed: u64,
    pub radius: f64,
    pub points: Vec<DerivativeReport>,
}

impl RandomCheckReport {
    pub fn max_gradient_error(&self) -> f64 {
        self.points.iter().map(|p| p.gradient_error).fold(0.0, f64::max)
    }

    pub fn max_hessian_error(&self) -> f64 {
        self.points.iter().map(|p| p.hessian_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.points.iter().all(DerivativeReport::passed)
    }
}

/// An objective assembled from closures, with a dense Hessian callback.
///
/// Intended for small user-defined problems (bindings, tests); the bundled
/// suite uses structured objectives instead.
pub struct FnObjective<F, G, H> {
    dim: usize,
    value: F,
    gradient: G,
    hessian: H,
}

impl<F, G, H> FnObjective<F, G, H>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
    H: Fn(&[f64], &mut DMatrix<f64>) + Send + Sync,
{
    pub fn new(dim: usize, value: F, gradient: G, hessian: H) -> Self {
        Self { dim, value, gradient, hessian }
    }
}

impl<F, G, H> Objective for FnObjective<F, G, H>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
    H: Fn(&[f64], &mut DMatrix<f64>) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64)) {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        (self.hessian)(x, &mut h);
        // symmetrize so that a slightly asymmetric callback still yields symmetric storage
        for j in 0..self.dim {
            for i in 0..=j {
                let v = if i == j { h[(i, i)] } else { 0.5 * (h[(i, j)] + h[(j, i)]) };
                if v != 0.0 {
                    visit(i, j, v);
                }
            }
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite;

    fn half_norm_sq(n: usize) -> Problem {
        Problem::new(
            "half_norm_sq",
            DVector::from_element(n, 1.0),
            FnObjective::new(
                n,
                |x: &[f64]| 0.5 * x.iter().map(|a| a * a).sum::<f64>(),
                |x: &[f64], g: &mut [f64]| g.copy_from_slice(x),
                |_: &[f64], h: &mut DMatrix<f64>| h.fill_with_identity(),
            ),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_eval_all() {
        let p = half_norm_sq(2);
        let (f, g, h) = p.eval_all(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(f, 12.5);
        assert_eq!(g.as_slice(), &[3.0, 4.0]);
        assert_eq!(h, DMatrix::identity(2, 2));
        let hv = p.hess_vec(&DVector::from_vec(vec![3.0, 4.0]), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(hv.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn rosenbrock_values() {
        let p = suite::chained_rosenbrock(2);
        let (f, g, _) = p.eval_all(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let f0 = p.value(&DVector::from_vec(vec![-1.2, 1.0])).unwrap();
        // (1 - x1)^2 + 100 (x2 - x1^2)^2 with x = (-1.2, 1)
        let expected = (1.0f64 + 1.2).powi(2) + 100.0 * (1.0f64 - 1.44).powi(2);
        assert!((f0 - expected).abs() < 1e-12);
        assert!((f0 - 24.2).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock_hess_vec_is_first_column() {
        let p = suite::chained_rosenbrock(2);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let col = p.hess_vec(&x, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        // H(1,1) = [[802, -400], [-400, 200]]
        assert_eq!(col.as_slice(), &[802.0, -400.0]);
        let h = p.hessian(&x).unwrap();
        assert_eq!(h.column(0).clone_owned(), col);
    }

    #[test]
    fn quartic_one_dimensional_hess_vec() {
        let p = Problem::new(
            "x4",
            DVector::from_element(1, 2.0),
            FnObjective::new(
                1,
                |x: &[f64]| x[0].powi(4),
                |x: &[f64], g: &mut [f64]| g[0] = 4.0 * x[0].powi(3),
                |x: &[f64], h: &mut DMatrix<f64>| h[(0, 0)] = 12.0 * x[0] * x[0],
            ),
        )
        .unwrap();
        let hv = p.hess_vec(&DVector::from_element(1, 2.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(hv[0], 48.0);
    }

    #[test]
    fn derivative_check_at_rosenbrock_minimizer() {
        let p = suite::chained_rosenbrock(2);
        let r = p.check_derivatives(&DVector::from_vec(vec![1.0, 1.0]), 1e-5).unwrap();
        // g = 0 exactly; what remains is the O(h²) truncation term 400h²
        assert!(r.gradient_error < 1e-7, "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn derivative_check_quadratic_hessian_is_exact() {
        let p = half_norm_sq(4);
        let r = p.check_derivatives(&DVector::from_vec(vec![0.3, -1.0, 2.0, 5.0]), 1e-5).unwrap();
        assert!(r.hessian_error < 1e-9, "{r:?}");
    }

    struct Corrupted(Problem);

    impl Objective for Corrupted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn value(&self, x: &[f64]) -> f64 {
            self.0.value(&DVector::from_column_slice(x)).unwrap()
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            let g = self.0.gradient(&DVector::from_column_slice(x)).unwrap();
            out.copy_from_slice(g.as_slice());
            out[0] += 1.0;
        }
        fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64)) {
            let h = self.0.hessian(&DVector::from_column_slice(x)).unwrap();
            for j in 0..h.ncols() {
                for i in 0..=j {
                    visit(i, j, h[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let base = suite::chained_rosenbrock(2);
        let p = Problem::new("bad", base.initial_point().clone(), Corrupted(base)).unwrap();
        let r = p.check_derivatives(&DVector::from_vec(vec![1.0, 1.0]), 1e-5).unwrap();
        assert!(!r.gradient_ok);
        assert!(r.gradient_error > 0.5);
    }

    #[test]
    fn non_finite_value_is_an_evaluation_error() {
        let p = suite::exp_composite(2);
        let err = p.value(&DVector::from_vec(vec![1000.0, 0.0])).unwrap_err();
        match err {
            Error::Evaluation { x, .. } => assert_eq!(x, vec![1000.0, 0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = half_norm_sq(3);
        assert!(matches!(p.value(&DVector::zeros(2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dense_hessian_refused_above_cap() {
        let p = half_norm_sq(5).with_dense_cap(4);
        assert!(matches!(p.hessian(&DVector::zeros(5)), Err(Error::DenseUnavailable { .. })));
        assert!(p.hess_vec(&DVector::zeros(5), &DVector::zeros(5)).is_ok());
    }

    #[test]
    fn random_check_records_seed() {
        let p = suite::separable_quartic(3);
        let r = p.check_derivatives_random(3, 1.0, 1e-6, 42).unwrap();
        assert_eq!(r.seed, 42);
        assert_eq!(r.points.len(), 3);
        let again = p.check_derivatives_random(3, 1.0, 1e-6, 42).unwrap();
        assert_eq!(r, again);
    }
}
