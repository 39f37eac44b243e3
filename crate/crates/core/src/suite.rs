//! Bundled analytic test problems.
//!
//! Most problems are either separable (`f = sum_i phi_i(x_i)`) or sums of
//! squared residuals with explicit residual derivatives; the Hessian is
//! assembled from those pieces, which keeps every entry analytic.
//!
//! Problems are named `<family>_<n>`, e.g. `chained_rosenbrock_2`, and
//! [`problem_by_name`] rebuilds any family at any admissible dimension.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Objective, Problem, ProblemMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    /// Inclusive dimension bracket of the scale.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Scale::Small => (2, 49),
            Scale::Medium => (50, 997),
            Scale::Large => (1000, 5000),
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            "large" => Ok(Scale::Large),
            other => Err(Error::Config(format!("unknown suite scale `{other}`"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Small => "small",
            Scale::Medium => "medium",
            Scale::Large => "large",
        })
    }
}

pub fn builtin_suite(scale: Scale) -> Vec<Problem> {
    match scale {
        Scale::Small => vec![
            chained_rosenbrock(2),
            chained_rosenbrock(10),
            separable_quartic(10),
            exp_composite(10),
            convex_quadratic(10),
            double_well_saddle(5),
            beale(),
            powell_singular(4),
            wood(),
            freudenstein_roth(),
            dixon_price(10),
            powell_singular(20),
        ],
        Scale::Medium => vec![
            chained_rosenbrock(100),
            separable_quartic(100),
            exp_composite(50),
            convex_quadratic(200),
            dixon_price(100),
            powell_singular(100),
            double_well_saddle(50),
        ],
        Scale::Large => {
            vec![separable_quartic(5000), chained_rosenbrock(1500), exp_composite(2000), convex_quadratic(1000)]
        }
    }
}

pub const FAMILIES: &[&str] = &[
    "chained_rosenbrock",
    "separable_quartic",
    "exp_composite",
    "convex_quadratic",
    "double_well_saddle",
    "powell_singular",
    "dixon_price",
    "beale",
    "wood",
    "freudenstein_roth",
];

/// Builds a problem from its `<family>_<n>` name.
pub fn problem_by_name(name: &str) -> Result<Problem> {
    let unknown = || Error::UnknownProblem(name.to_string());
    let (family, n) = name.rsplit_once('_').ok_or_else(unknown)?;
    let n: usize = n.parse().map_err(|_| unknown())?;
    if n == 0 {
        return Err(unknown());
    }
    let p = match family {
        "chained_rosenbrock" if n >= 2 => chained_rosenbrock(n),
        "separable_quartic" => separable_quartic(n),
        "exp_composite" => exp_composite(n),
        "convex_quadratic" => convex_quadratic(n),
        "double_well_saddle" => double_well_saddle(n),
        "powell_singular" if n.is_multiple_of(4) => powell_singular(n),
        "dixon_price" if n >= 2 => dixon_price(n),
        "beale" if n == 2 => beale(),
        "wood" if n == 4 => wood(),
        "freudenstein_roth" if n == 2 => freudenstein_roth(),
        _ => return Err(unknown()),
    };
    Ok(p)
}

fn named(family: &str, x0: Vec<f64>, objective: impl Objective + 'static, meta: ProblemMetadata) -> Problem {
    let n = x0.len();
    Problem::new(format!("{family}_{n}"), DVector::from_vec(x0), objective)
        .expect("suite problems are well formed")
        .with_metadata(meta)
}

fn lower_bound(f_low: f64) -> ProblemMetadata {
    ProblemMetadata { f_low: Some(f_low), ..Default::default() }
}

// ---------------------------------------------------------------------------
// separable objectives

type Phi = dyn Fn(usize, f64) -> (f64, f64, f64) + Send + Sync;

/// `f(x) = sum_i phi(i, x_i)`, with `phi` returning value and two derivatives.
pub struct Separable {
    dim: usize,
    phi: Box<Phi>,
}

impl Separable {
    pub fn new(dim: usize, phi: impl Fn(usize, f64) -> (f64, f64, f64) + Send + Sync + 'static) -> Self {
        Self { dim, phi: Box::new(phi) }
    }
}

impl Objective for Separable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, &xi)| (self.phi)(i, xi).0).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (i, (&xi, o)) in x.iter().zip(out.iter_mut()).enumerate() {
            *o = (self.phi)(i, xi).1;
        }
    }

    fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64)) {
        for (i, &xi) in x.iter().enumerate() {
            visit(i, i, (self.phi)(i, xi).2);
        }
    }
}

/// `sum_i x_i^4 - x_i^2`; minimizers at `x_i = ±1/sqrt(2)`.
pub fn separable_quartic(n: usize) -> Problem {
    let x0 = (0..n)
        .map(|i| {
            let magnitude = 1.0 + 0.5 * (i % 3) as f64;
            if i % 2 == 0 {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    let obj = Separable::new(n, |_, x| {
        let x2 = x * x;
        (x2 * x2 - x2, 4.0 * x2 * x - 2.0 * x, 12.0 * x2 - 2.0)
    });
    let meta = ProblemMetadata { kappa_b: Some(2.0), ..lower_bound(-(n as f64) / 4.0) };
    named("separable_quartic", x0, obj, meta)
}

/// `sum_i exp(x_i) - x_i`; minimizer at the origin with `f = n`.
pub fn exp_composite(n: usize) -> Problem {
    let x0 = (0..n).map(|i| 1.0 + 0.5 * (i % 3) as f64).collect();
    let obj = Separable::new(n, |_, x| {
        let e = x.exp();
        (e - x, e - 1.0, e)
    });
    let meta = ProblemMetadata { kappa_b: Some(0.0), ..lower_bound(n as f64) };
    named("exp_composite", x0, obj, meta)
}

/// `1/2 sum_i d_i x_i^2` with `d_i` evenly spaced in `[1, 10]`.
pub fn convex_quadratic(n: usize) -> Problem {
    let obj = Separable::new(n, move |i, x| {
        let d = if n > 1 { 1.0 + 9.0 * i as f64 / (n - 1) as f64 } else { 1.0 };
        (0.5 * d * x * x, d * x, d)
    });
    let meta = ProblemMetadata { l0: Some(0.0), l1: Some(0.0), kappa_b: Some(0.0), ..lower_bound(0.0) };
    named("convex_quadratic", vec![1.0; n], obj, meta)
}

/// `sum_i (x_i^2 - 1)^2` started at `(0, 1, ..., 1)`: a stationary point
/// whose Hessian `diag(-4, 8, ..., 8)` has one negative eigenvalue.
pub fn double_well_saddle(n: usize) -> Problem {
    let mut x0 = vec![1.0; n];
    x0[0] = 0.0;
    let obj = Separable::new(n, |_, x| {
        let x2 = x * x;
        ((x2 - 1.0) * (x2 - 1.0), 4.0 * x * (x2 - 1.0), 12.0 * x2 - 4.0)
    });
    let meta = ProblemMetadata { kappa_b: Some(4.0), ..lower_bound(0.0) };
    named("double_well_saddle", x0, obj, meta)
}

// ---------------------------------------------------------------------------
// sums of squares

/// One residual `r` with its gradient and upper-triangle Hessian entries.
pub struct Residual<'a> {
    pub value: f64,
    pub grad: &'a [(usize, f64)],
    pub hess: &'a [(usize, usize, f64)],
}

type ResidualFn = dyn Fn(&[f64], &mut dyn FnMut(Residual<'_>)) + Send + Sync;

/// `f(x) = sum_k r_k(x)^2`.
pub struct SumOfSquares {
    dim: usize,
    residuals: Box<ResidualFn>,
}

impl SumOfSquares {
    pub fn new(dim: usize, residuals: impl Fn(&[f64], &mut dyn FnMut(Residual<'_>)) + Send + Sync + 'static) -> Self {
        Self { dim, residuals: Box::new(residuals) }
    }
}

impl Objective for SumOfSquares {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        (self.residuals)(x, &mut |r| f += r.value * r.value);
        f
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        (self.residuals)(x, &mut |r| {
            for &(i, d) in r.grad {
                out[i] += 2.0 * r.value * d;
            }
        });
    }

    fn hessian_entries(&self, x: &[f64], visit: &mut dyn FnMut(usize, usize, f64)) {
        (self.residuals)(x, &mut |r| {
            for (a, &(i, di)) in r.grad.iter().enumerate() {
                visit(i, i, 2.0 * di * di);
                for &(j, dj) in &r.grad[a + 1..] {
                    visit(i.min(j), i.max(j), 2.0 * di * dj);
                }
            }
            for &(i, j, h) in r.hess {
                visit(i, j, 2.0 * r.value * h);
            }
        });
    }
}

/// `sum_{i<n} 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`, started at
/// `(-1.2, 1, -1.2, 1, ...)`.
pub fn chained_rosenbrock(n: usize) -> Problem {
    assert!(n >= 2, "chained Rosenbrock needs n >= 2");
    let x0 = (0..n).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect();
    let obj = SumOfSquares::new(n, move |x, emit| {
        for i in 0..n - 1 {
            emit(Residual {
                value: 10.0 * (x[i + 1] - x[i] * x[i]),
                grad: &[(i, -20.0 * x[i]), (i + 1, 10.0)],
                hess: &[(i, i, -20.0)],
            });
            emit(Residual { value: 1.0 - x[i], grad: &[(i, -1.0)], hess: &[] });
        }
    });
    named("chained_rosenbrock", x0, obj, lower_bound(0.0))
}

/// Extended Powell singular function (`n` a multiple of 4); the Hessian is
/// singular at the minimizer.
pub fn powell_singular(n: usize) -> Problem {
    assert!(n.is_multiple_of(4) && n > 0, "Powell singular needs n a positive multiple of 4");
    let x0 = (0..n).map(|i| [3.0, -1.0, 0.0, 1.0][i % 4]).collect();
    let s5 = 5f64.sqrt();
    let s10 = 10f64.sqrt();
    let obj = SumOfSquares::new(n, move |x, emit| {
        for a in (0..n).step_by(4) {
            emit(Residual { value: x[a] + 10.0 * x[a + 1], grad: &[(a, 1.0), (a + 1, 10.0)], hess: &[] });
            emit(Residual { value: s5 * (x[a + 2] - x[a + 3]), grad: &[(a + 2, s5), (a + 3, -s5)], hess: &[] });
            let d = x[a + 1] - 2.0 * x[a + 2];
            emit(Residual {
                value: d * d,
                grad: &[(a + 1, 2.0 * d), (a + 2, -4.0 * d)],
                hess: &[(a + 1, a + 1, 2.0), (a + 1, a + 2, -4.0), (a + 2, a + 2, 8.0)],
            });
            let e = x[a] - x[a + 3];
            emit(Residual {
                value: s10 * e * e,
                grad: &[(a, 2.0 * s10 * e), (a + 3, -2.0 * s10 * e)],
                hess: &[(a, a, 2.0 * s10), (a, a + 3, -2.0 * s10), (a + 3, a + 3, 2.0 * s10)],
            });
        }
    });
    named("powell_singular", x0, obj, lower_bound(0.0))
}

/// `(x_1 - 1)^2 + sum_{i>=2} i (2 x_i^2 - x_{i-1})^2`.
pub fn dixon_price(n: usize) -> Problem {
    assert!(n >= 2, "Dixon-Price needs n >= 2");
    let obj = SumOfSquares::new(n, move |x, emit| {
        emit(Residual { value: x[0] - 1.0, grad: &[(0, 1.0)], hess: &[] });
        for k in 1..n {
            let w = ((k + 1) as f64).sqrt();
            emit(Residual {
                value: w * (2.0 * x[k] * x[k] - x[k - 1]),
                grad: &[(k - 1, -w), (k, 4.0 * w * x[k])],
                hess: &[(k, k, 4.0 * w)],
            });
        }
    });
    named("dixon_price", vec![1.0; n], obj, lower_bound(0.0))
}

pub fn beale() -> Problem {
    const C: [f64; 3] = [1.5, 2.25, 2.625];
    let obj = SumOfSquares::new(2, |x, emit| {
        let (u, v) = (x[0], x[1]);
        for (k, &c) in C.iter().enumerate() {
            let i = (k + 1) as i32;
            let fi = i as f64;
            emit(Residual {
                value: c - u + u * v.powi(i),
                grad: &[(0, v.powi(i) - 1.0), (1, fi * u * v.powi(i - 1))],
                hess: &[(0, 1, fi * v.powi(i - 1)), (1, 1, fi * (fi - 1.0) * u * v.powi((i - 2).max(0)))],
            });
        }
    });
    named("beale", vec![1.0, 1.0], obj, lower_bound(0.0))
}

pub fn wood() -> Problem {
    let s90 = 90f64.sqrt();
    let s10 = 10f64.sqrt();
    let obj = SumOfSquares::new(4, move |x, emit| {
        emit(Residual {
            value: 10.0 * (x[1] - x[0] * x[0]),
            grad: &[(0, -20.0 * x[0]), (1, 10.0)],
            hess: &[(0, 0, -20.0)],
        });
        emit(Residual { value: 1.0 - x[0], grad: &[(0, -1.0)], hess: &[] });
        emit(Residual {
            value: s90 * (x[3] - x[2] * x[2]),
            grad: &[(2, -2.0 * s90 * x[2]), (3, s90)],
            hess: &[(2, 2, -2.0 * s90)],
        });
        emit(Residual { value: 1.0 - x[2], grad: &[(2, -1.0)], hess: &[] });
        emit(Residual { value: s10 * (x[1] + x[3] - 2.0), grad: &[(1, s10), (3, s10)], hess: &[] });
        emit(Residual { value: (x[1] - x[3]) / s10, grad: &[(1, 1.0 / s10), (3, -1.0 / s10)], hess: &[] });
    });
    named("wood", vec![-3.0, -1.0, -3.0, -1.0], obj, lower_bound(0.0))
}

/// Freudenstein-Roth; has a spurious local minimizer with `f ≈ 48.98`.
pub fn freudenstein_roth() -> Problem {
    let obj = SumOfSquares::new(2, |x, emit| {
        let (u, v) = (x[0], x[1]);
        emit(Residual {
            value: -13.0 + u + ((5.0 - v) * v - 2.0) * v,
            grad: &[(0, 1.0), (1, 10.0 * v - 3.0 * v * v - 2.0)],
            hess: &[(1, 1, 10.0 - 6.0 * v)],
        });
        emit(Residual {
            value: -29.0 + u + ((v + 1.0) * v - 14.0) * v,
            grad: &[(0, 1.0), (1, 3.0 * v * v + 2.0 * v - 14.0)],
            hess: &[(1, 1, 6.0 * v + 2.0)],
        });
    });
    named("freudenstein_roth", vec![0.5, -2.0], obj, lower_bound(0.0))
}
