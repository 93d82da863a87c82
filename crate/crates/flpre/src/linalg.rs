//! Small dense linear-algebra kernels.
//!
//! Every system solved in this crate is symmetric and at most a few dozen
//! rows (the basis dimension), so a plain Cholesky factorization and a Jacobi
//! eigenvalue sweep cover everything without pulling in a LAPACK backend.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{FlpreError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: ArrayView2<f64>, context: &str) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(FlpreError::DimensionMismatch {
            context: format!("cholesky({context})"),
            expected: n,
            found: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // Pivot tolerance relative to the diagonal scale; the comparison also
        // rejects NaN pivots.
        let scale = a[(j, j)].abs().max(1.0);
        if d.is_nan() || d <= scale * 1e-14 {
            return Err(FlpreError::SingularMatrix {
                context: context.to_string(),
                detail: format!("pivot {d:.3e} at column {j}"),
            });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    // forward substitution
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    // backward substitution
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve a symmetric positive-definite system `a x = b`.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView1<f64>, context: &str) -> Result<Array1<f64>> {
    let l = cholesky(a, context)?;
    Ok(cholesky_solve(&l, b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: ArrayView2<f64>, context: &str) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a, context)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(&l, e.view());
        inv.column_mut(j).assign(&col);
    }
    // Symmetrize to wash out the last bits of factorization asymmetry.
    let inv_t = inv.t().to_owned();
    Ok((&inv + &inv_t) * 0.5)
}

/// trace(a^{-1} b) for symmetric positive-definite `a`.
pub fn trace_solve(a: ArrayView2<f64>, b: ArrayView2<f64>, context: &str) -> Result<f64> {
    let l = cholesky(a, context)?;
    let mut tr = 0.0;
    for j in 0..b.ncols() {
        let col = cholesky_solve(&l, b.column(j));
        tr += col[j];
    }
    Ok(tr)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
///
/// Nodes are the roots of the Legendre polynomial P_m, found by Newton
/// iteration from the Chebyshev initial guess.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_m(x) and P_m'(x) by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let b = array![1.0, 2.0, 3.0];
        let x = solve_spd(a.view(), b.view(), "test").unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view(), "test").is_err());
    }

    #[test]
    fn inverse_matches_solve() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let inv = inverse_spd(a.view(), "test").unwrap();
        let id = a.dot(&inv);
        assert_abs_diff_eq!(id[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[(0, 1)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_eigenvalues_of_diagonal_plus_rank_one() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = sym_eigenvalues(a.view());
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn trace_solve_identity() {
        let a = array![[3.0, 0.5], [0.5, 2.0]];
        let tr = trace_solve(a.view(), a.view(), "test").unwrap();
        assert_abs_diff_eq!(tr, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // m nodes integrate degree 2m-1 exactly: check x^4 with m = 3 on [-1,1].
        let (x, w) = gauss_legendre(3);
        let integral: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(4)).sum();
        assert_abs_diff_eq!(integral, 2.0 / 5.0, epsilon = 1e-14);
        let (x, w) = gauss_legendre(1);
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 2.0, epsilon = 1e-15);
    }
}
