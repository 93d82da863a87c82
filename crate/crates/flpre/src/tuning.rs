//! Smoothing-parameter selection: BIC over a lambda grid.
//!
//! `BIC(lambda) = log(RSS) + (log n / n) df`, where RSS is the mean per-point
//! criterion value at the fitted coefficients and df is the effective degrees
//! of freedom `trace(H_lambda^{-1} H_0)` of the ridge-type smoother. At
//! lambda = 0 the df equals the basis dimension.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::basis::DesignMatrix;
use crate::error::{FlpreError, Result};
use crate::linalg::trace_solve;
use crate::lpre::{FitMethod, FitResult};

/// Default lambda grid: 15 log-spaced points in [1e-6, 1e2].
pub fn default_lambda_grid() -> Vec<f64> {
    let lo = 1e-6f64.ln();
    let hi = 1e2f64.ln();
    (0..15)
        .map(|i| (lo + (hi - lo) * i as f64 / 14.0).exp())
        .collect()
}

fn df_from_parts(h0: &Array2<f64>, penalty: ArrayView2<f64>, lambda: f64) -> Result<f64> {
    let mut h_lambda = h0.clone();
    h_lambda.scaled_add(lambda, &penalty);
    trace_solve(h_lambda.view(), h0.view(), "effective degrees of freedom")
}

/// BIC of a fitted model, using the criterion matching its method.
pub fn bic(fit: &FitResult, design: &DesignMatrix, responses: ArrayView1<f64>) -> Result<f64> {
    if responses.len() != design.n() {
        return Err(FlpreError::DimensionMismatch {
            context: "responses".to_string(),
            expected: design.n(),
            found: responses.len(),
        });
    }
    let n = design.n();
    let nf = n as f64;
    let dim = design.dim();
    let rows = design.rows();
    let fitted = rows.dot(&fit.theta);
    let mut rss = 0.0;
    let mut h0 = Array2::<f64>::zeros((dim, dim));
    for i in 0..n {
        let u = fitted[i];
        let (per_point, weight) = match fit.method {
            FitMethod::Flpre => {
                let omega = responses[i] * (-u).exp();
                (omega + 1.0 / omega - 2.0, omega + 1.0 / omega)
            }
            FitMethod::Fls => {
                let r = responses[i].ln() - u;
                (r * r, 1.0)
            }
            FitMethod::Flad => {
                let r = responses[i].ln() - u;
                (r.abs(), 1.0 / (r * r + 1e-12).sqrt())
            }
        };
        rss += per_point;
        let row = rows.row(i);
        for a in 0..dim {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..dim {
                h0[(a, b)] += weight * ra * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in (a + 1)..dim {
            h0[(b, a)] = h0[(a, b)];
        }
    }
    rss /= nf;
    if rss <= 0.0 {
        return Err(FlpreError::BicUndefined);
    }
    let df = df_from_parts(&h0, design.penalty(), fit.lambda)?;
    Ok(rss.ln() + nf.ln() / nf * df)
}

/// BIC of an inverse-probability-weighted subsample fit.
///
/// The weighted mean loss is the unbiased estimate of the full-data RSS and
/// the complexity penalty uses the subsample size, which governs the
/// information actually available for selection.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bic_weighted(
    rows: ArrayView2<f64>,
    responses: ArrayView1<f64>,
    weights: &[f64],
    penalty: ArrayView2<f64>,
    lambda: f64,
    theta: ArrayView1<f64>,
    n_full: usize,
    r: usize,
) -> Result<f64> {
    let dim = rows.ncols();
    let mut rss = 0.0;
    let mut h0 = Array2::<f64>::zeros((dim, dim));
    for i in 0..rows.nrows() {
        let u = rows.row(i).dot(&theta);
        let omega = responses[i] * (-u).exp();
        let w = weights[i];
        rss += w * (omega + 1.0 / omega - 2.0);
        let hw = w * (omega + 1.0 / omega);
        let row = rows.row(i);
        for a in 0..dim {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..dim {
                h0[(a, b)] += hw * ra * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in (a + 1)..dim {
            h0[(b, a)] = h0[(a, b)];
        }
    }
    rss /= n_full as f64;
    if rss <= 0.0 {
        return Err(FlpreError::BicUndefined);
    }
    let df = df_from_parts(&h0, penalty, lambda)?;
    let rf = r as f64;
    Ok(rss.ln() + rf.ln() / rf * df)
}

/// Outcome of a grid search over lambda.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub fit: FitResult,
    /// Evaluated (lambda, BIC) pairs; `None` marks grid points that failed.
    pub path: Vec<(f64, Option<f64>)>,
}

/// Pick the BIC-minimizing lambda on a grid, breaking ties toward the larger
/// (smoother) value. The grid is deduplicated, so repeated entries cannot
/// change the result.
pub fn select_lambda<F>(grid: &[f64], mut eval: F) -> Result<LambdaSelection>
where
    F: FnMut(f64) -> Result<(FitResult, f64)>,
{
    if grid.is_empty() {
        return Err(FlpreError::LambdaSelection("empty lambda grid".to_string()));
    }
    let mut lambdas: Vec<f64> = grid.to_vec();
    for (i, l) in lambdas.iter().enumerate() {
        if !(l.is_finite() && *l >= 0.0) {
            return Err(FlpreError::LambdaSelection(format!(
                "lambda grid entry {i} is invalid: {l}"
            )));
        }
    }
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let mut best: Option<(f64, FitResult, f64)> = None;
    let mut path = Vec::with_capacity(lambdas.len());
    let mut first_err: Option<FlpreError> = None;
    for &lambda in &lambdas {
        match eval(lambda) {
            Ok((fit, score)) if score.is_finite() => {
                path.push((lambda, Some(score)));
                let replace = match &best {
                    None => true,
                    Some((_, _, b)) => score <= *b,
                };
                if replace {
                    best = Some((lambda, fit, score));
                }
            }
            Ok((_, score)) => {
                path.push((lambda, None));
                if first_err.is_none() {
                    first_err = Some(FlpreError::LambdaSelection(format!(
                        "BIC at lambda = {lambda} is not finite: {score}"
                    )));
                }
            }
            Err(e) => {
                path.push((lambda, None));
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some((lambda, fit, _)) => Ok(LambdaSelection { lambda, fit, path }),
        None => Err(first_err.unwrap_or_else(|| {
            FlpreError::LambdaSelection("no lambda could be evaluated".to_string())
        })),
    }
}

/// Convenience: select lambda for a full-data fit of the given method.
pub fn select_lambda_for_method(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    method: FitMethod,
    grid: &[f64],
    options: &crate::lpre::NewtonOptions,
) -> Result<LambdaSelection> {
    let mut warm: Option<Array1<f64>> = None;
    select_lambda(grid, |lambda| {
        let fit = match method {
            FitMethod::Flpre => {
                let mut opts = options.clone();
                if opts.init.is_none() {
                    opts.init = warm.clone();
                }
                crate::lpre::fit_newton(design, responses, lambda, &opts)?
            }
            FitMethod::Fls => crate::baselines::fit_fls(design, responses, lambda)?,
            FitMethod::Flad => crate::baselines::fit_flad(design, responses, lambda)?,
        };
        warm = Some(fit.theta.clone());
        let score = bic(&fit, design, responses)?;
        Ok((fit, score))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, penalty_matrix};
    use crate::lpre::{fit_newton, NewtonOptions};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_problem(seed: u64, n: usize, dim: usize) -> (DesignMatrix, Array1<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rows = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() - 0.5);
        let y = Array1::from_shape_fn(n, |_| (rng.random::<f64>() * 2.0 - 1.0).exp());
        let basis = make_basis(dim - 4, 3, 2).unwrap();
        (
            DesignMatrix::from_parts(rows, penalty_matrix(&basis), basis).unwrap(),
            y,
        )
    }

    #[test]
    fn df_is_dimension_at_lambda_zero() {
        let (design, y) = random_problem(3, 60, 8);
        let fit = fit_newton(&design, y.view(), 0.0, &NewtonOptions::default()).unwrap();
        let fitted = design.rows().dot(&fit.theta);
        let mut rss = 0.0;
        for i in 0..design.n() {
            let omega = y[i] * (-fitted[i]).exp();
            rss += omega + 1.0 / omega - 2.0;
        }
        rss /= design.n() as f64;
        let b = bic(&fit, &design, y.view()).unwrap();
        let n = design.n() as f64;
        // df == dim exactly when lambda == 0
        let expected = rss.ln() + n.ln() / n * design.dim() as f64;
        assert_abs_diff_eq!(b, expected, epsilon = 1e-8);
    }

    #[test]
    fn bic_two_point_reference_value() {
        // omega values {e, 1}, n = 2, df = 1:
        // log((e + 1/e - 2)/2) + (log 2 / 2) * 1
        let e = std::f64::consts::E;
        let rss = (e + 1.0 / e - 2.0) / 2.0;
        let expected = rss.ln() + 2.0f64.ln() / 2.0;
        assert_abs_diff_eq!(expected, -0.26392, epsilon = 1e-4);

        // realize it with a 1-d design: rows (1, 1), theta = 0, y = (e, 1)
        let design = DesignMatrix::from_raw(
            Array2::from_elem((2, 1), 1.0),
            Array2::from_elem((1, 1), 1.0),
        )
        .unwrap();
        let fit = FitResult {
            method: crate::lpre::FitMethod::Flpre,
            theta: ndarray::array![0.0],
            lambda: 0.0,
            iterations: 0,
            converged: true,
            final_gradient_norm: 0.0,
            loss: 0.0,
            loss_trace: vec![],
            n: 2,
            g_hat: None,
            h_hat: None,
            v_full: None,
        };
        let y = ndarray::array![e, 1.0];
        let b = bic(&fit, &design, y.view()).unwrap();
        assert_abs_diff_eq!(b, expected, epsilon = 1e-12);
    }

    #[test]
    fn bic_rejects_perfect_fit() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let rows = Array2::from_shape_fn((20, 4), |_| rng.random::<f64>() - 0.5);
        let theta = ndarray::array![0.2, -0.4, 0.6, 0.1];
        let y = rows.dot(&theta).mapv(f64::exp);
        let design = DesignMatrix::from_raw(rows, Array2::zeros((4, 4))).unwrap();
        let fit = FitResult {
            method: crate::lpre::FitMethod::Flpre,
            theta,
            lambda: 0.0,
            iterations: 0,
            converged: true,
            final_gradient_norm: 0.0,
            loss: 0.0,
            loss_trace: vec![],
            n: 20,
            g_hat: None,
            h_hat: None,
            v_full: None,
        };
        assert!(matches!(
            bic(&fit, &design, y.view()),
            Err(FlpreError::BicUndefined)
        ));
    }

    #[test]
    fn df_decreases_toward_penalty_nullity() {
        // exact trace monotonicity holds for a fixed weight matrix H_0
        let (design, y) = random_problem(11, 120, 10);
        let q = 2; // basis built with penalty order 2
        let fit = fit_newton(&design, y.view(), 0.0, &NewtonOptions::default()).unwrap();
        let fitted = design.rows().dot(&fit.theta);
        let dim = design.dim();
        let mut h0 = Array2::<f64>::zeros((dim, dim));
        for i in 0..design.n() {
            let omega = y[i] * (-fitted[i]).exp();
            let w = omega + 1.0 / omega;
            for a in 0..dim {
                for b in 0..dim {
                    h0[(a, b)] += w * design.rows()[(i, a)] * design.rows()[(i, b)];
                }
            }
        }
        let mut prev = f64::INFINITY;
        let mut last_df = f64::NAN;
        for &lambda in &[0.0, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8, 1e10] {
            let df = df_from_parts(&h0, design.penalty(), lambda).unwrap();
            // slack covers factorization noise at condition numbers ~ 1e9
            assert!(df <= prev + 1e-6, "df not monotone at lambda = {lambda}");
            prev = df;
            last_df = df;
        }
        assert_abs_diff_eq!(prev, last_df, epsilon = 0.0);
        // dominating penalty leaves the q-dimensional null space of D_q
        assert_abs_diff_eq!(last_df, q as f64, epsilon = 1e-3);
    }

    #[test]
    fn select_lambda_singleton_and_duplicates() {
        let (design, y) = random_problem(17, 50, 8);
        let opts = NewtonOptions::default();
        let single = select_lambda_for_method(
            &design,
            y.view(),
            crate::lpre::FitMethod::Flpre,
            &[0.5],
            &opts,
        )
        .unwrap();
        assert_abs_diff_eq!(single.lambda, 0.5, epsilon = 0.0);

        let grid = [1e-3, 1e-1, 10.0];
        let dup_grid = [1e-1, 1e-3, 10.0, 1e-1, 1e-3];
        let a = select_lambda_for_method(
            &design,
            y.view(),
            crate::lpre::FitMethod::Flpre,
            &grid,
            &opts,
        )
        .unwrap();
        let b = select_lambda_for_method(
            &design,
            y.view(),
            crate::lpre::FitMethod::Flpre,
            &dup_grid,
            &opts,
        )
        .unwrap();
        assert_abs_diff_eq!(a.lambda, b.lambda, epsilon = 0.0);
        // the selected BIC is the path minimum
        let best = a
            .path
            .iter()
            .filter_map(|(_, s)| *s)
            .fold(f64::INFINITY, f64::min);
        let selected = a
            .path
            .iter()
            .find(|(l, _)| *l == a.lambda)
            .and_then(|(_, s)| *s)
            .unwrap();
        assert_abs_diff_eq!(selected, best, epsilon = 0.0);
    }

    #[test]
    fn select_lambda_rejects_empty_or_invalid_grids() {
        assert!(select_lambda(&[], |_| unreachable!()).is_err());
        let r = select_lambda(&[f64::NAN], |_| unreachable!());
        assert!(r.is_err());
    }
}
