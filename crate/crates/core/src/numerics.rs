//! Dense linear-algebra primitives shared by the rest of the crate.
//!
//! Everything is `f64`. Symmetric positive-definite solves go through a
//! Cholesky factorization with a doubling jitter schedule, and the
//! pseudo-inverse is computed from a thin SVD with an explicit rank cutoff.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Jitter schedule for near-singular SPD solves.
///
/// The solve is first attempted without jitter, then with
/// `jitter * 2^k` for `k = 0..=max_jitter_doublings`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdPolicy {
    pub jitter: f64,
    pub max_jitter_doublings: u32,
}

impl Default for SpdPolicy {
    fn default() -> Self {
        SpdPolicy {
            jitter: 1e-8,
            max_jitter_doublings: 10,
        }
    }
}

impl SpdPolicy {
    /// Jitter values tried in order.
    fn schedule(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(0.0).chain(
            (0..=self.max_jitter_doublings).map(move |k| self.jitter * 2f64.powi(k as i32)),
        )
    }
}

/// Cholesky factor of `A + jitter * I`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    logdet: f64,
}

impl SpdFactor {
    pub fn new(a: &Matrix, policy: &SpdPolicy) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims(format!(
                "SPD factorization needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        ensure_finite(a, "SPD matrix")?;
        check_symmetric(a)?;
        if policy.jitter <= 0.0 {
            return Err(Error::InvalidConfig("jitter must be positive".into()));
        }
        let n = a.nrows();
        let mut last = 0.0;
        for jitter in policy.schedule() {
            last = jitter;
            let mut shifted = a.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    shifted[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(shifted) {
                let l = chol.l_dirty();
                let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
                if logdet.is_finite() {
                    return Ok(SpdFactor {
                        chol,
                        jitter,
                        logdet,
                    });
                }
            }
        }
        Err(Error::NotSpd { jitter: last })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Jitter that was added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `ln |A + jitter I|`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.nrows() != self.dim() {
            return Err(Error::dims(format!(
                "right-hand side has {} rows, factor has dimension {}",
                b.nrows(),
                self.dim()
            )));
        }
        Ok(self.chol.solve(b))
    }

    pub fn solve_vec(&self, b: &Vector) -> Result<Vector> {
        if b.len() != self.dim() {
            return Err(Error::dims(format!(
                "right-hand side has length {}, factor has dimension {}",
                b.len(),
                self.dim()
            )));
        }
        Ok(self.chol.solve(b))
    }

    /// Explicit inverse of the jittered matrix.
    pub fn inverse(&self) -> Matrix {
        self.chol.inverse()
    }

    /// Lower Cholesky factor `L` with `L L^T = A + jitter I`.
    pub fn lower(&self) -> Matrix {
        self.chol.l()
    }

    /// Solve `L y = b` with the lower Cholesky factor.
    pub fn solve_lower(&self, b: &Matrix) -> Matrix {
        self.chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }
}

/// Result of [`cholesky_solve`].
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Matrix,
    pub logdet: f64,
    pub jitter: f64,
}

/// Solve `(A + jI) X = B` for symmetric positive (semi-)definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix, policy: &SpdPolicy) -> Result<SpdSolution> {
    if b.nrows() != a.nrows() {
        return Err(Error::dims(format!(
            "B has {} rows but A is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(b, "right-hand side")?;
    let factor = SpdFactor::new(a, policy)?;
    Ok(SpdSolution {
        x: factor.solve(b)?,
        logdet: factor.logdet(),
        jitter: factor.jitter(),
    })
}

/// Thin SVD of a tall matrix (`rows >= cols`) by one-sided Jacobi rotations.
///
/// Returns `(U, sigma, V)` with `A = U diag(sigma) V^T`, `U` of size
/// `rows x cols`. Columns of `U` belonging to zero singular values are zero.
pub fn svd_jacobi(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    assert!(m >= n, "svd_jacobi expects a tall matrix");
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wp, wq) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut u = w;
    for (j, &s) in sigma.iter().enumerate() {
        if s > 0.0 {
            u.column_mut(j).unscale_mut(s);
        }
    }
    (u, sigma, v)
}

/// Moore-Penrose pseudo-inverse from the SVD.
///
/// Singular values below `rank_tol_factor * max(rows, cols) * sigma_max`
/// are treated as zero.
pub fn pinv_svd(a: &Matrix, rank_tol_factor: f64) -> Result<Matrix> {
    ensure_finite(a, "pseudo-inverse input")?;
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    if rows < cols {
        return Ok(pinv_svd(&a.transpose(), rank_tol_factor)?.transpose());
    }
    let (u, sigma, v) = svd_jacobi(a);
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rank_tol_factor * rows.max(cols) as f64 * sigma_max;
    // A^+ = V diag(1/sigma) U^T over the retained singular triplets
    let mut scaled_v = v;
    for (k, &s) in sigma.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        scaled_v.column_mut(k).scale_mut(inv);
    }
    Ok(scaled_v * u.transpose())
}

/// Pseudo-inverse with the default machine-epsilon rank cutoff.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    pinv_svd(a, f64::EPSILON)
}

/// `M = B A^T (A A^T + lambda I)^{-1}`, the ridge solution of `min ||B - M A||^2 + lambda ||M||^2`.
pub fn ridge_solve_right(b: &Matrix, a: &Matrix, lambda: f64) -> Result<Matrix> {
    if b.ncols() != a.ncols() {
        return Err(Error::dims(format!(
            "B has {} columns but A has {}",
            b.ncols(),
            a.ncols()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ridge lambda must be nonnegative, got {lambda}"
        )));
    }
    let mut gram = a * a.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = a * b.transpose();
    let factor = SpdFactor::new(&gram, &SpdPolicy::default())?;
    Ok(factor.solve(&rhs)?.transpose())
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::dims(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// `(A + A^T) / 2`, in place.
pub fn symmetrize(a: &mut Matrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let g = random_matrix(rng, n, n);
        &g * g.transpose() + Matrix::identity(n, n) * 0.5
    }

    /// Gaussian elimination with partial pivoting, independent of nalgebra's solvers.
    fn gauss_solve(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.nrows();
        let m = b.ncols();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| a[(i, j)])
                    .chain((0..m).map(|j| b[(i, j)]))
                    .collect()
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
                .unwrap();
            aug.swap(col, piv);
            for row in (col + 1)..n {
                let f = aug[row][col] / aug[col][col];
                for k in col..(n + m) {
                    aug[row][k] -= f * aug[col][k];
                }
            }
        }
        let mut x = Matrix::zeros(n, m);
        for j in 0..m {
            for i in (0..n).rev() {
                let mut s = aug[i][n + j];
                for k in (i + 1)..n {
                    s -= aug[i][k] * x[(k, j)];
                }
                x[(i, j)] = s / aug[i][i];
            }
        }
        x
    }

    #[test]
    fn cholesky_identity() {
        let a = Matrix::identity(3, 3);
        let sol = cholesky_solve(&a, &a, &SpdPolicy::default()).unwrap();
        assert!((sol.x - Matrix::identity(3, 3)).norm() < 1e-15);
        assert!(sol.logdet.abs() < 1e-15);
        assert_eq!(sol.jitter, 0.0);
    }

    #[test]
    fn cholesky_diagonal() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let b = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let sol = cholesky_solve(&a, &b, &SpdPolicy::default()).unwrap();
        assert!((sol.x[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((sol.x[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((sol.logdet - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cholesky_matches_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_spd(&mut rng, 5);
            let b = random_matrix(&mut rng, 5, 3);
            let sol = cholesky_solve(&a, &b, &SpdPolicy::default()).unwrap();
            let resid = (&a * &sol.x - &b).norm() / b.norm();
            assert!(resid < 1e-8, "residual {resid}");
            let oracle = gauss_solve(&a, &b);
            assert!((&sol.x - oracle).norm() < 1e-10);
            let logdet_oracle = a.clone().lu().determinant().ln();
            assert!((sol.logdet - logdet_oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_uses_jitter_for_singular_psd() {
        // rank-1 PSD matrix
        let v = Matrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let b = Matrix::identity(3, 3);
        let sol = cholesky_solve(&a, &b, &SpdPolicy::default()).unwrap();
        assert!(sol.jitter > 0.0);
        let mut shifted = a.clone();
        for i in 0..3 {
            shifted[(i, i)] += sol.jitter;
        }
        let resid = (&shifted * &sol.x - &b).norm() / b.norm();
        assert!(resid < 1e-6, "residual {resid}");
    }

    #[test]
    fn cholesky_rejects_indefinite_and_bad_shapes() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = Matrix::identity(2, 2);
        assert!(matches!(
            cholesky_solve(&a, &b, &SpdPolicy::default()),
            Err(Error::NotSpd { .. })
        ));
        let b3 = Matrix::identity(3, 3);
        assert!(matches!(
            cholesky_solve(&Matrix::identity(2, 2), &b3, &SpdPolicy::default()),
            Err(Error::DimensionMismatch(_))
        ));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(cholesky_solve(&asym, &b, &SpdPolicy::default()).is_err());
    }

    #[test]
    fn pinv_identity_and_column() {
        let i4 = Matrix::identity(4, 4);
        assert!((pinv(&i4).unwrap() - &i4).norm() < 1e-14);

        let a = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let p = pinv(&a).unwrap();
        assert_eq!(p.shape(), (1, 2));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15 && (p[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((&a * &p * &a - &a).norm() < 1e-14);
    }

    #[test]
    fn pinv_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 4);
        let ata = a.transpose() * &a;
        let oracle = gauss_solve(&ata, &a.transpose());
        let p = pinv(&a).unwrap();
        assert!((p - oracle).amax() < 1e-10);
    }

    #[test]
    fn pinv_moore_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..400 {
            let r = rng.random_range(1..=20);
            let c = rng.random_range(1..=20);
            // occasionally rank deficient
            let a = if rng.random_bool(0.3) && r > 1 && c > 1 {
                let k = rng.random_range(1..r.min(c));
                random_matrix(&mut rng, r, k) * random_matrix(&mut rng, k, c)
            } else {
                random_matrix(&mut rng, r, c)
            };
            let p = pinv(&a).unwrap();
            assert!((&a * &p * &a - &a).norm() < 1e-8);
            assert!((&p * &a * &p - &p).norm() < 1e-8);
            let ap = &a * &p;
            let pa = &p * &a;
            assert!((&ap - ap.transpose()).norm() < 1e-8);
            assert!((&pa - pa.transpose()).norm() < 1e-8);
        }
    }

    #[test]
    fn jacobi_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let c = rng.random_range(1..=8);
            let r = rng.random_range(c..=30);
            let k = rng.random_range(1..=c);
            let a = random_matrix(&mut rng, r, k) * random_matrix(&mut rng, k, c);
            let (u, s, v) = svd_jacobi(&a);
            let rec = &u * Matrix::from_diagonal(&Vector::from_vec(s.clone())) * v.transpose();
            assert!((rec - &a).norm() < 1e-12 * a.norm().max(1.0));
            assert!((v.transpose() * &v - Matrix::identity(c, c)).amax() < 1e-12);
            let rank = s.iter().filter(|&&x| x > 1e-10).count();
            assert_eq!(rank, k);
        }
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(pinv(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ridge_identity_and_scaling() {
        let i2 = Matrix::identity(2, 2);
        let m = ridge_solve_right(&i2, &i2, 1e-12).unwrap();
        assert!((m - &i2).norm() < 1e-10);

        let a = &i2 * 2.0;
        let b = &i2 * 4.0;
        let m = ridge_solve_right(&b, &a, 0.0).unwrap();
        assert!((m - &i2 * 2.0).norm() < 1e-14);
    }

    #[test]
    fn ridge_approaches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 3, 10);
        let b = random_matrix(&mut rng, 2, 10);
        let exact = &b * pinv(&a).unwrap();
        let m = ridge_solve_right(&b, &a, 1e-8).unwrap();
        assert!((&m - &exact).amax() < 1e-6);

        let errs: Vec<f64> = [1e-4, 1e-6, 1e-8]
            .iter()
            .map(|&l| (ridge_solve_right(&b, &a, l).unwrap() - &exact).norm())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn ridge_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(
            ridge_solve_right(&b, &a, 1e-8),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
