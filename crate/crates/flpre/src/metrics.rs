//! Evaluation metrics: root integrated squared error of slope curves (IMSE),
//! root predicted squared error of fitted indices (RPSE), and the prediction
//! criteria MAPE / MPPE for positive responses.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{FlpreError, Result};

/// Composite trapezoid rule over a strictly increasing grid.
pub fn trapezoid(grid: ArrayView1<f64>, values: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..grid.len() - 1 {
        acc += 0.5 * (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]);
    }
    acc
}

/// Uniform grid of `m` points on [0, 1]; 1001 points resolve the oscillation
/// of the study's slope curves well past convergence.
pub fn uniform_grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Root integrated squared difference of two curves sampled on `grid`:
/// `sqrt(int (est - ref)^2 dt)` by composite trapezoid.
pub fn imse(est: ArrayView1<f64>, reference: ArrayView1<f64>, grid: ArrayView1<f64>) -> f64 {
    assert_eq!(est.len(), grid.len(), "curve/grid length mismatch");
    assert_eq!(reference.len(), grid.len(), "curve/grid length mismatch");
    let sq: Vec<f64> = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    trapezoid(grid, ArrayView1::from(&sq)).max(0.0).sqrt()
}

/// Root mean squared difference of fitted indices over a test set:
/// `sqrt( mean_i ( int x_i (est - ref) dt )^2 )`, with curves sampled row-wise
/// on `grid`.
pub fn rpse(
    est: ArrayView1<f64>,
    reference: ArrayView1<f64>,
    grid: ArrayView1<f64>,
    test_curves: ArrayView2<f64>,
) -> f64 {
    assert!(test_curves.nrows() > 0, "test set must be nonempty");
    assert_eq!(test_curves.ncols(), grid.len(), "curve/grid length mismatch");
    let diff: Vec<f64> = est
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| a - b)
        .collect();
    let mut acc = 0.0;
    for i in 0..test_curves.nrows() {
        let integrand: Vec<f64> = test_curves
            .row(i)
            .iter()
            .zip(&diff)
            .map(|(x, d)| x * d)
            .collect();
        let idx = trapezoid(grid, ArrayView1::from(&integrand));
        acc += idx * idx;
    }
    (acc / test_curves.nrows() as f64).sqrt()
}

/// Mean absolute prediction error and mean product relative prediction error
/// `(y - yhat)^2 / (y yhat)` over a test set of positive responses.
pub fn mape_mppe(y_true: &[f64], y_pred: &[f64]) -> Result<(f64, f64)> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(FlpreError::DimensionMismatch {
            context: "mape_mppe".to_string(),
            expected: y_true.len().max(1),
            found: y_pred.len(),
        });
    }
    let mut mape = 0.0;
    let mut mppe = 0.0;
    for (i, (&y, &yh)) in y_true.iter().zip(y_pred).enumerate() {
        if !(y.is_finite() && y > 0.0) {
            return Err(FlpreError::NonPositiveResponse { index: i, value: y });
        }
        if !(yh.is_finite() && yh > 0.0) {
            return Err(FlpreError::NonPositiveResponse { index: i, value: yh });
        }
        mape += (y - yh).abs();
        mppe += (y - yh) * (y - yh) / (y * yh);
    }
    let m = y_true.len() as f64;
    Ok((mape / m, mppe / m))
}

/// One evaluation record; fields absent from a given run stay `None`.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub imse: Option<f64>,
    pub rpse: Option<f64>,
    pub mape: Option<f64>,
    pub mppe: Option<f64>,
}

impl MetricReport {
    /// All present entries must be finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("imse", self.imse),
            ("rpse", self.rpse),
            ("mape", self.mape),
            ("mppe", self.mppe),
        ] {
            if let Some(x) = v {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(FlpreError::InvalidInput(format!(
                        "metric {name} is invalid: {x}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};

    #[test]
    fn imse_of_identical_and_shifted_curves() {
        let grid = Array1::from_vec(uniform_grid(1001));
        let a = Array1::from_elem(1001, 1.5);
        assert_abs_diff_eq!(imse(a.view(), a.view(), grid.view()), 0.0, epsilon = 1e-15);
        let b = Array1::from_elem(1001, 0.5);
        assert_abs_diff_eq!(imse(a.view(), b.view(), grid.view()), 1.0, epsilon = 1e-12);
        // difference t: sqrt(int t^2) = sqrt(1/3)
        let est = grid.clone();
        let zero = Array1::zeros(1001);
        assert_abs_diff_eq!(
            imse(est.view(), zero.view(), grid.view()),
            (1.0f64 / 3.0).sqrt(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn imse_scales_with_difference() {
        let grid = Array1::from_vec(uniform_grid(501));
        let est = grid.mapv(|t| (3.0 * t).sin());
        let zero = Array1::zeros(501);
        let one = imse(est.view(), zero.view(), grid.view());
        let scaled = est.mapv(|v| -2.5 * v);
        let two = imse(scaled.view(), zero.view(), grid.view());
        assert_abs_diff_eq!(two, 2.5 * one, epsilon = 1e-12);
    }

    #[test]
    fn rpse_constant_test_curve_reads_off_the_difference() {
        let grid = Array1::from_vec(uniform_grid(401));
        let est = Array1::from_elem(401, 2.0);
        let reference = Array1::from_elem(401, 2.0 - 0.7);
        let ones = Array2::from_elem((3, 401), 1.0);
        let r = rpse(est.view(), reference.view(), grid.view(), ones.view());
        assert_abs_diff_eq!(r, 0.7, epsilon = 1e-12);
        let same = rpse(est.view(), est.view(), grid.view(), ones.view());
        assert_abs_diff_eq!(same, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rpse_matches_naive_double_loop() {
        let grid = Array1::from_vec(uniform_grid(101));
        let est = grid.mapv(|t| t * t);
        let reference = grid.mapv(|t| (2.0 * t).cos());
        let curves = Array2::from_shape_fn((5, 101), |(i, j)| {
            ((i + 1) as f64 * grid[j]).sin() + 0.3
        });
        let fast = rpse(est.view(), reference.view(), grid.view(), curves.view());
        let mut acc = 0.0;
        for i in 0..5 {
            let mut idx = 0.0;
            for j in 0..100 {
                let f0 = curves[(i, j)] * (est[j] - reference[j]);
                let f1 = curves[(i, j + 1)] * (est[j + 1] - reference[j + 1]);
                idx += 0.5 * (grid[j + 1] - grid[j]) * (f0 + f1);
            }
            acc += idx * idx;
        }
        let slow = (acc / 5.0).sqrt();
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-12);
    }

    #[test]
    fn mape_mppe_reference_values_and_symmetry() {
        let (mape, mppe) = mape_mppe(&[2.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(mape, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mppe, 0.5, epsilon = 1e-15);

        let y = [2.0, 5.0, 1.3];
        let p = [1.1, 4.2, 2.8];
        let (_, m1) = mape_mppe(&y, &p).unwrap();
        let (_, m2) = mape_mppe(&p, &y).unwrap();
        assert_abs_diff_eq!(m1, m2, epsilon = 1e-15);

        let (zm, zp) = mape_mppe(&y, &y).unwrap();
        assert_abs_diff_eq!(zm, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(zp, 0.0, epsilon = 1e-15);

        assert!(mape_mppe(&[1.0], &[0.0]).is_err());
        assert!(mape_mppe(&[1.0], &[-1.0]).is_err());
    }
}
