//! Dense symmetric linear algebra used by the step backends: extreme
//! eigenpairs and positive-definite shifted solves, for general symmetric
//! matrices and for symmetric tridiagonal ones.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative accuracy demanded of every eigenpair returned from this module.
pub const EIG_TOL: f64 = 1e-10;

const SOLVE_REL_TOL: f64 = 1e-12;

/// Symmetric tridiagonal matrix with diagonal `δ_1..δ_p` and off-diagonal
/// `α_2..α_p`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymTridiag {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
}

impl SymTridiag {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Config("tridiagonal matrix must have order >= 1".into()));
        }
        if offdiag.len() + 1 != diag.len() {
            return Err(Error::Dimension { expected: diag.len() - 1, got: offdiag.len() });
        }
        Ok(Self { diag, offdiag })
    }

    pub fn order(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    /// Appends a row/column: `offdiag` couples the new entry to the previous last one.
    pub(crate) fn push(&mut self, diag: f64, offdiag: f64) {
        if !self.diag.is_empty() {
            self.offdiag.push(offdiag);
        }
        self.diag.push(diag);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.order();
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag));
        for (i, &a) in self.offdiag.iter().enumerate() {
            m[(i, i + 1)] = a;
            m[(i + 1, i)] = a;
        }
        debug_assert_eq!(m.nrows(), p);
        m
    }

    pub fn mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.order();
        DVector::from_fn(p, |i, _| {
            let mut v = self.diag[i] * y[i];
            if i > 0 {
                v += self.offdiag[i - 1] * y[i - 1];
            }
            if i + 1 < p {
                v += self.offdiag[i] * y[i + 1];
            }
            v
        })
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let p = self.order();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..p {
            let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
            let right = if i + 1 < p { self.offdiag[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    /// Upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    /// Number of eigenvalues strictly below `x` (Sturm count).
    fn count_below(&self, x: f64, pivmin: f64) -> usize {
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q.abs() <= pivmin {
            q = -pivmin;
        }
        if q < 0.0 {
            count += 1;
        }
        for i in 1..self.order() {
            let a = self.offdiag[i - 1];
            q = self.diag[i] - x - a * a / q;
            if q.abs() <= pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }
}

/// Minimum eigenvalue and a unit eigenvector of a symmetric matrix.
///
/// The eigenvector sign is arbitrary.
pub fn sym_eig_min(h: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let n = h.nrows();
    if n == 0 || h.ncols() != n {
        return Err(Error::Dimension { expected: n, got: h.ncols() });
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::Numerical("symmetric eigen-iteration did not converge".into()))?;
    let imin = eig.eigenvalues.imin();
    let lambda = eig.eigenvalues[imin];
    let mut u = eig.eigenvectors.column(imin).clone_owned();
    u /= u.norm();
    let scale = 1.0 + h.amax() * n as f64;
    let resid = (h * &u - lambda * &u).norm();
    if resid > EIG_TOL * scale {
        return Err(Error::Numerical(format!("eigenpair residual {resid:e} above tolerance")));
    }
    Ok((lambda, u))
}

/// Solves `(H + τI) s = -g` through a Cholesky factorization.
///
/// A failed factorization means the shift does not make the matrix
/// positive definite and is reported as [`Error::ShiftTooSmall`].
pub fn solve_shifted(h: &DMatrix<f64>, tau: f64, g: &DVector<f64>) -> Result<DVector<f64>> {
    let n = h.nrows();
    if g.len() != n {
        return Err(Error::Dimension { expected: n, got: g.len() });
    }
    let mut a = h.clone();
    for i in 0..n {
        a[(i, i)] += tau;
    }
    let chol = Cholesky::new(a.clone()).ok_or(Error::ShiftTooSmall { shift: tau })?;
    let mut s = -chol.solve(g);
    let gnorm = g.norm();
    for _ in 0..3 {
        let r = &a * &s + g;
        if r.norm() <= SOLVE_REL_TOL * gnorm {
            break;
        }
        s -= chol.solve(&r);
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::ShiftTooSmall { shift: tau });
    }
    Ok(s)
}

/// Minimum eigenpair of a symmetric tridiagonal matrix by Sturm bisection
/// followed by inverse iteration. Cost is `O(p)` per bisection step.
pub fn tridiag_eig_min(t: &SymTridiag) -> Result<(f64, DVector<f64>)> {
    tridiag_eig_min_below(t, None)
}

/// As [`tridiag_eig_min`], with an optional upper bound on the minimum
/// eigenvalue (e.g. the previous Lanczos estimate, by interlacing) to
/// shorten the bisection.
pub fn tridiag_eig_min_below(t: &SymTridiag, upper: Option<f64>) -> Result<(f64, DVector<f64>)> {
    let p = t.order();
    if t.diag.iter().chain(&t.offdiag).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("tridiagonal matrix has non-finite entries".into()));
    }
    if p == 1 {
        return Ok((t.diag[0], DVector::from_element(1, 1.0)));
    }
    let norm = t.norm_bound().max(f64::MIN_POSITIVE);
    let max_off2 = t.offdiag.iter().fold(0.0f64, |m, a| m.max(a * a));
    let pivmin = f64::MIN_POSITIVE * max_off2.max(1.0);

    let (glo, ghi) = t.gershgorin();
    let mut lo = glo - 2.0 * f64::EPSILON * norm - pivmin;
    let mut hi = ghi + 2.0 * f64::EPSILON * norm + pivmin;
    if let Some(ub) = upper {
        let candidate = ub + 1e-12 * norm;
        if candidate < hi && candidate > lo && t.count_below(candidate, pivmin) >= 1 {
            hi = candidate;
        }
    }
    for _ in 0..256 {
        let width_tol = 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) + pivmin;
        if hi - lo <= width_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if t.count_below(mid, pivmin) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let y = inverse_iteration(t, lambda, norm)?;
    Ok((lambda, y))
}

fn inverse_iteration(t: &SymTridiag, lambda: f64, norm: f64) -> Result<DVector<f64>> {
    let p = t.order();
    let tiny = f64::EPSILON * norm;
    let lu = ShiftedTridiagLu::factor(t, lambda, tiny);
    let mut y = DVector::from_fn(p, |i, _| 1.0 + 0.25 * ((i * 7919) % 13) as f64 / 13.0);
    y /= y.norm();
    let target = 0.1 * EIG_TOL * (1.0 + norm);
    let mut best = (f64::INFINITY, y.clone());
    for _ in 0..8 {
        lu.solve_in_place(y.as_mut_slice());
        let nrm = y.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            break;
        }
        y /= nrm;
        let resid = (t.mul_vec(&y) - lambda * &y).norm();
        if resid < best.0 {
            best = (resid, y.clone());
        }
        if resid <= target {
            break;
        }
    }
    if best.0 > EIG_TOL * (1.0 + norm) {
        return Err(Error::Numerical(format!("tridiagonal inverse iteration residual {:e} above tolerance", best.0)));
    }
    Ok(best.1)
}

/// LU factorization with partial pivoting of `T - λI` (LAPACK `gttrf` layout).
/// Vanishing pivots are replaced by `tiny` so the near-singular systems of
/// inverse iteration stay solvable.
struct ShiftedTridiagLu {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl ShiftedTridiagLu {
    fn factor(t: &SymTridiag, shift: f64, tiny: f64) -> Self {
        let p = t.order();
        let mut d: Vec<f64> = t.diag.iter().map(|v| v - shift).collect();
        let mut dl = t.offdiag.clone();
        let mut du = t.offdiag.clone();
        let mut du2 = vec![0.0; p.saturating_sub(2)];
        let mut swapped = vec![false; p.saturating_sub(1)];
        for i in 0..p - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i].abs() < tiny {
                    d[i] = tiny;
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < p {
                    du2[i] = du[i + 1];
                    du[i + 1] *= -fact;
                }
                swapped[i] = true;
            }
        }
        if d[p - 1].abs() < tiny {
            d[p - 1] = tiny;
        }
        Self { dl, d, du, du2, swapped }
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let p = self.d.len();
        for i in 0..p - 1 {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[p - 1] /= self.d[p - 1];
        if p > 1 {
            b[p - 2] = (b[p - 2] - self.du[p - 2] * b[p - 1]) / self.d[p - 2];
        }
        for i in (0..p.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Solves `(T + τI) y = rhs` with an `LDLᵀ` factorization in `O(p)`.
/// A non-positive pivot is reported as [`Error::ShiftTooSmall`].
pub fn solve_tridiag_shifted(t: &SymTridiag, tau: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let p = t.order();
    if rhs.len() != p {
        return Err(Error::Dimension { expected: p, got: rhs.len() });
    }
    let mut d = vec![0.0; p];
    let mut l = vec![0.0; p];
    d[0] = t.diag[0] + tau;
    if !(d[0] > 0.0) {
        return Err(Error::ShiftTooSmall { shift: tau });
    }
    for i in 1..p {
        let a = t.offdiag[i - 1];
        l[i] = a / d[i - 1];
        d[i] = t.diag[i] + tau - l[i] * a;
        if !(d[i] > 0.0) {
            return Err(Error::ShiftTooSmall { shift: tau });
        }
    }
    let mut y = rhs.clone();
    for i in 1..p {
        y[i] -= l[i] * y[i - 1];
    }
    for i in 0..p {
        y[i] /= d[i];
    }
    for i in (0..p - 1).rev() {
        y[i] -= l[i + 1] * y[i + 1];
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn assert_parallel(u: &DVector<f64>, expected: &[f64], tol: f64) {
        let e = dv(expected).normalize();
        assert!((u.dot(&e).abs() - 1.0).abs() < tol, "{u} not parallel to {e}");
    }

    /// Cyclic Jacobi rotations: the full spectrum, independent of nalgebra's eigensolver.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[(i, i)]).collect()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn eig_min_examples() {
        let (l, _) = sym_eig_min(&DMatrix::identity(3, 3)).unwrap();
        assert!((l - 1.0).abs() < 1e-14);

        let (l, u) = sym_eig_min(&DMatrix::from_diagonal(&dv(&[-2.0, 1.0]))).unwrap();
        assert!((l + 2.0).abs() < 1e-14);
        assert_parallel(&u, &[1.0, 0.0], 1e-12);

        let (l, u) = sym_eig_min(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        assert_parallel(&u, &[1.0, -1.0], 1e-12);
    }

    #[test]
    fn eig_min_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 2, 3, 7, 20, 50] {
            for _ in 0..5 {
                let h = random_symmetric(&mut rng, n);
                let (l, u) = sym_eig_min(&h).unwrap();
                let oracle = jacobi_eigenvalues(h.clone()).into_iter().fold(f64::INFINITY, f64::min);
                assert!((l - oracle).abs() < 1e-9, "n={n}: {l} vs {oracle}");
                assert!((u.norm() - 1.0).abs() < 1e-12);
                assert!((&h * &u - l * &u).norm() <= EIG_TOL * (1.0 + h.norm()));
            }
        }
    }

    #[test]
    fn eig_min_rejects_non_finite() {
        let h = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(sym_eig_min(&h), Err(Error::Numerical(_))));
    }

    #[test]
    fn shifted_solve_examples() {
        let s = solve_shifted(&DMatrix::identity(2, 2), 1.0, &dv(&[1.0, 0.0])).unwrap();
        assert!((s - dv(&[-0.5, 0.0])).amax() < 1e-15);

        let tau = 2.0 * 2f64.sqrt();
        let s = solve_shifted(&DMatrix::from_diagonal(&dv(&[1.0, 3.0])), tau, &dv(&[1.0, 1.0])).unwrap();
        assert!((s[0] + 1.0 / (1.0 + tau)).abs() < 1e-15);
        assert!((s[1] + 1.0 / (3.0 + tau)).abs() < 1e-15);
        assert!((s[0] + 0.26120).abs() < 5e-6 && (s[1] + 0.17157).abs() < 5e-6);

        let s = solve_shifted(&DMatrix::from_diagonal(&dv(&[-1.0, 1.0])), 2.0, &dv(&[1.0, 1.0])).unwrap();
        assert!((s[0] + 1.0).abs() < 1e-15 && (s[1] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_solve_refuses_indefinite() {
        let h = DMatrix::from_diagonal(&dv(&[-1.0, 1.0]));
        assert!(matches!(solve_shifted(&h, 0.5, &dv(&[1.0, 1.0])), Err(Error::ShiftTooSmall { .. })));
    }

    #[test]
    fn shifted_solve_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3, 10, 40] {
            let h = random_symmetric(&mut rng, n);
            let (l, _) = sym_eig_min(&h).unwrap();
            let tau = -l + 0.1;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let s = solve_shifted(&h, tau, &g).unwrap();
            let r = &h * &s + tau * &s + &g;
            assert!(r.norm() <= 1e-12 * g.norm(), "{}", r.norm() / g.norm());
        }
    }

    #[test]
    fn tridiag_eig_examples() {
        let (l, y) = tridiag_eig_min(&SymTridiag::new(vec![1.0], vec![]).unwrap()).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(y.as_slice(), &[1.0]);

        let (l, y) = tridiag_eig_min(&SymTridiag::new(vec![0.0, 0.0], vec![1.0]).unwrap()).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        assert_parallel(&y, &[1.0, -1.0], 1e-12);

        let (l, y) = tridiag_eig_min(&SymTridiag::new(vec![1.5, 1.5], vec![0.5]).unwrap()).unwrap();
        assert!((l - 1.0).abs() < 1e-14);
        assert_parallel(&y, &[1.0, -1.0], 1e-12);
    }

    #[test]
    fn tridiag_with_zero_coupling() {
        let t = SymTridiag::new(vec![-1.0, 1.0], vec![0.0]).unwrap();
        let (l, y) = tridiag_eig_min(&t).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        assert_parallel(&y, &[1.0, 0.0], 1e-12);

        let t = SymTridiag::new(vec![2.0, 2.0, -3.0], vec![0.0, 0.0]).unwrap();
        let (l, y) = tridiag_eig_min(&t).unwrap();
        assert!((l + 3.0).abs() < 1e-14);
        assert_parallel(&y, &[0.0, 0.0, 1.0], 1e-12);
    }

    #[test]
    fn tridiag_solve_examples() {
        let y = solve_tridiag_shifted(&SymTridiag::new(vec![1.0], vec![]).unwrap(), 3.0, &dv(&[-3.0])).unwrap();
        assert_eq!(y.as_slice(), &[-0.75]);

        let t = SymTridiag::new(vec![1.5, 1.5], vec![0.5]).unwrap();
        let y = solve_tridiag_shifted(&t, 0.5, &dv(&[-1.0, 0.0])).unwrap();
        assert!((y[0] + 8.0 / 15.0).abs() < 1e-15 && (y[1] - 2.0 / 15.0).abs() < 1e-15);

        let t = SymTridiag::new(vec![1.0, 1.0], vec![0.0]).unwrap();
        let y = solve_tridiag_shifted(&t, 0.0, &dv(&[1.0, 1.0])).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn tridiag_solve_refuses_indefinite() {
        let t = SymTridiag::new(vec![0.0, 0.0], vec![1.0]).unwrap();
        assert!(matches!(solve_tridiag_shifted(&t, 0.5, &dv(&[1.0, 0.0])), Err(Error::ShiftTooSmall { .. })));
    }

    #[test]
    fn invalid_tridiag_shapes() {
        assert!(SymTridiag::new(vec![], vec![]).is_err());
        assert!(SymTridiag::new(vec![1.0, 2.0], vec![]).is_err());
    }

    fn arb_tridiag() -> impl Strategy<Value = SymTridiag> {
        (1usize..40).prop_flat_map(|p| {
            (proptest::collection::vec(-10.0f64..10.0, p), proptest::collection::vec(-5.0f64..5.0, p - 1))
                .prop_map(|(d, e)| SymTridiag::new(d, e).unwrap())
        })
    }

    proptest! {
        #[test]
        fn tridiag_eig_agrees_with_dense(t in arb_tridiag()) {
            let (l, y) = tridiag_eig_min(&t).unwrap();
            let (ld, _) = sym_eig_min(&t.to_dense()).unwrap();
            prop_assert!((l - ld).abs() <= 1e-10 * (1.0 + t.norm_bound()));
            prop_assert!((y.norm() - 1.0).abs() < 1e-12);
            prop_assert!((t.mul_vec(&y) - l * &y).norm() <= EIG_TOL * (1.0 + t.norm_bound()));
        }

        #[test]
        fn tridiag_solve_agrees_with_dense(t in arb_tridiag(), margin in 0.01f64..5.0) {
            let (l, _) = tridiag_eig_min(&t).unwrap();
            let tau = -l + margin;
            let p = t.order();
            let rhs = DVector::from_fn(p, |i, _| (i as f64 * 0.37).sin() + 0.5);
            let y = solve_tridiag_shifted(&t, tau, &rhs).unwrap();
            let dense = solve_shifted(&t.to_dense(), tau, &(-&rhs)).unwrap();
            let scale = 1.0 + dense.norm();
            prop_assert!((&y - &dense).norm() <= 1e-10 * scale * (1.0 + t.norm_bound() / margin));
            let resid = t.mul_vec(&y) + tau * &y - &rhs;
            prop_assert!(resid.norm() <= 1e-12 * rhs.norm() * (1.0 + (t.norm_bound() + tau.abs()) / margin));
        }

        #[test]
        fn warm_start_gives_same_eigenvalue(t in arb_tridiag(), slack in 0.0f64..1.0) {
            let (l, _) = tridiag_eig_min(&t).unwrap();
            let (lw, _) = tridiag_eig_min_below(&t, Some(l + slack)).unwrap();
            prop_assert!((l - lw).abs() <= 1e-12 * (1.0 + t.norm_bound()));
        }
    }
}
