//! Normalized B-spline bases on [0, 1]: evaluation, derivatives, the
//! roughness-penalty Gram matrix and projection of discretized functional
//! covariates onto the basis.
//!
//! The knot vector is clamped (open): `degree + 1` repeated boundary knots at
//! 0 and 1 with equispaced interior knots `j / (K + 1)`, so a basis with `K`
//! interior knots and degree `p` has `K + p + 1` functions. Evaluation uses
//! the Cox–de Boor recurrence with the right-continuity convention at knots
//! (left limit at t = 1).

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{FlpreError, Result};
use crate::linalg::gauss_legendre;

/// B-spline basis description: knot layout, degree and penalty order.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    interior_knots: usize,
    degree: usize,
    penalty_order: usize,
    knots: Vec<f64>,
}

/// One functional observation: a curve sampled on a grid in [0, 1] plus its
/// strictly positive scalar response.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    grid: Vec<f64>,
    values: Vec<f64>,
    response: f64,
}

/// Projected design: one row `B_i = ∫ x_i(t) B(t) dt` per sample, together
/// with the derivative penalty matrix of the basis.
///
/// Designs built from curves always carry their basis; `from_raw` admits
/// synthetic coefficient-space problems that have none.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    rows: Array2<f64>,
    penalty: Array2<f64>,
    basis: Option<BasisConfig>,
}

/// Build a clamped uniform basis with `interior_knots` equispaced interior
/// knots, degree `degree` and derivative penalty order `penalty_order`.
pub fn make_basis(interior_knots: usize, degree: usize, penalty_order: usize) -> Result<BasisConfig> {
    if penalty_order < 1 || penalty_order > degree {
        return Err(FlpreError::InvalidBasisConfig(format!(
            "penalty order must satisfy 1 <= q <= degree, got q = {penalty_order}, degree = {degree}"
        )));
    }
    let k = interior_knots;
    let p = degree;
    let mut knots = Vec::with_capacity(2 * (p + 1) + k);
    knots.extend(std::iter::repeat_n(0.0, p + 1));
    for j in 1..=k {
        knots.push(j as f64 / (k as f64 + 1.0));
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    Ok(BasisConfig {
        interior_knots: k,
        degree: p,
        penalty_order,
        knots,
    })
}

impl BasisConfig {
    /// Number of basis functions, `K + p + 1`.
    pub fn dim(&self) -> usize {
        self.interior_knots + self.degree + 1
    }

    pub fn interior_knots(&self) -> usize {
        self.interior_knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn penalty_order(&self) -> usize {
        self.penalty_order
    }

    /// Full clamped knot vector including boundary repeats.
    pub fn knot_vector(&self) -> &[f64] {
        &self.knots
    }

    /// All basis function values at `t`.
    pub fn eval(&self, t: f64) -> Result<Array1<f64>> {
        self.check_domain(t)?;
        Ok(Array1::from_vec(self.values_of_degree(self.degree, t)))
    }

    /// All `order`-th derivatives at `t` (order 0 reduces to `eval`).
    pub fn eval_deriv(&self, t: f64, order: usize) -> Result<Array1<f64>> {
        self.check_domain(t)?;
        if order > self.degree {
            return Err(FlpreError::InvalidInput(format!(
                "derivative order {order} exceeds degree {}",
                self.degree
            )));
        }
        let p = self.degree;
        let mut vals = self.values_of_degree(p - order, t);
        for target in (p - order + 1)..=p {
            let len = self.knots.len() - target - 1;
            let mut next = vec![0.0; len];
            for (i, slot) in next.iter_mut().enumerate() {
                let d1 = self.knots[i + target] - self.knots[i];
                let d2 = self.knots[i + target + 1] - self.knots[i + 1];
                let a = if d1 > 0.0 { vals[i] / d1 } else { 0.0 };
                let b = if d2 > 0.0 { vals[i + 1] / d2 } else { 0.0 };
                *slot = target as f64 * (a - b);
            }
            vals = next;
        }
        Ok(Array1::from_vec(vals))
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FlpreError::InvalidInput(format!(
                "evaluation point {t} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Cox–de Boor bottom-up evaluation of every degree-`d` function.
    fn values_of_degree(&self, d: usize, t: f64) -> Vec<f64> {
        let knots = &self.knots;
        let len = knots.len();
        let mut vals = vec![0.0; len - 1];
        let last = knots[len - 1];
        if t >= last {
            // left-limit convention: t = 1 belongs to the last nonempty span
            let mut i = len - 2;
            while knots[i] >= last {
                i -= 1;
            }
            vals[i] = 1.0;
        } else {
            for i in 0..len - 1 {
                if knots[i] <= t && t < knots[i + 1] {
                    vals[i] = 1.0;
                    break;
                }
            }
        }
        for deg in 1..=d {
            let m = len - deg - 1;
            let mut next = vec![0.0; m];
            for (i, slot) in next.iter_mut().enumerate() {
                let d1 = knots[i + deg] - knots[i];
                let d2 = knots[i + deg + 1] - knots[i + 1];
                let a = if d1 > 0.0 {
                    (t - knots[i]) / d1 * vals[i]
                } else {
                    0.0
                };
                let b = if d2 > 0.0 {
                    (knots[i + deg + 1] - t) / d2 * vals[i + 1]
                } else {
                    0.0
                };
                *slot = a + b;
            }
            vals = next;
        }
        vals
    }

    /// Nonempty knot spans as (start, end) pairs.
    fn spans(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let p = self.degree;
        let k = self.interior_knots;
        (p..=p + k).map(|j| (self.knots[j], self.knots[j + 1]))
    }
}

/// Gram matrix of the q-th basis derivatives, `D_q = ∫ B^{(q)} (B^{(q)})^T dt`.
///
/// Gauss–Legendre quadrature per knot span with `p - q + 1` nodes, which is
/// exact for the degree `2(p - q)` piecewise-polynomial integrand.
pub fn penalty_matrix(basis: &BasisConfig) -> Array2<f64> {
    let dim = basis.dim();
    let q = basis.penalty_order();
    let nodes = basis.degree() - q + 1;
    let (gx, gw) = gauss_legendre(nodes);
    let mut d = Array2::<f64>::zeros((dim, dim));
    for (a, b) in basis.spans() {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in gx.iter().zip(&gw) {
            let t = mid + half * x;
            let v = basis
                .eval_deriv(t, q)
                .expect("quadrature node inside the domain");
            let scale = w * half;
            for i in 0..dim {
                let vi = v[i];
                if vi == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    d[(i, j)] += scale * vi * v[j];
                }
            }
        }
    }
    d
}

impl FunctionalSample {
    /// Validate and build a functional observation.
    pub fn new(grid: Vec<f64>, values: Vec<f64>, response: f64) -> Result<Self> {
        if grid.len() < 2 {
            return Err(FlpreError::InvalidSample {
                index: None,
                reason: format!("grid must contain at least 2 points, got {}", grid.len()),
            });
        }
        if grid.len() != values.len() {
            return Err(FlpreError::InvalidSample {
                index: None,
                reason: format!(
                    "grid has {} points but {} values were given",
                    grid.len(),
                    values.len()
                ),
            });
        }
        for (i, &t) in grid.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(FlpreError::InvalidSample {
                    index: None,
                    reason: format!("grid point {t} at position {i} outside [0, 1]"),
                });
            }
            if i > 0 && t <= grid[i - 1] {
                return Err(FlpreError::InvalidSample {
                    index: None,
                    reason: format!("grid not strictly increasing at position {i}"),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FlpreError::InvalidSample {
                index: None,
                reason: "curve values must be finite".to_string(),
            });
        }
        if !(response.is_finite() && response > 0.0) {
            return Err(FlpreError::InvalidSample {
                index: None,
                reason: format!("response must be strictly positive, got {response}"),
            });
        }
        Ok(Self {
            grid,
            values,
            response,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn response(&self) -> f64 {
        self.response
    }

    /// Whether the observation grid reaches both domain endpoints.
    pub fn covers_domain(&self) -> bool {
        self.grid[0] <= f64::EPSILON && self.grid[self.grid.len() - 1] >= 1.0 - f64::EPSILON
    }
}

/// Trapezoid weights over a grid extended to cover [0, 1]; curves that do not
/// reach the endpoints are extrapolated as constants.
///
/// Returns (points, weights, source index per point).
fn extended_trapezoid_grid(grid: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let g = grid.len();
    let mut pts = Vec::with_capacity(g + 2);
    let mut src = Vec::with_capacity(g + 2);
    if grid[0] > 0.0 {
        pts.push(0.0);
        src.push(0);
    }
    for (i, &t) in grid.iter().enumerate() {
        pts.push(t);
        src.push(i);
    }
    if grid[g - 1] < 1.0 {
        pts.push(1.0);
        src.push(g - 1);
    }
    let m = pts.len();
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = pts[i + 1] - pts[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    (pts, w, src)
}

/// Projected covariate `B_i = ∫ x_i(t) B(t) dt` by composite trapezoid on the
/// observation grid.
pub fn project_covariate(sample: &FunctionalSample, basis: &BasisConfig) -> Result<Array1<f64>> {
    let (pts, w, src) = extended_trapezoid_grid(sample.grid());
    let mut out = Array1::<f64>::zeros(basis.dim());
    for ((&t, &wt), &s) in pts.iter().zip(&w).zip(&src) {
        let x = sample.values()[s];
        if x == 0.0 || wt == 0.0 {
            continue;
        }
        let b = basis.eval(t)?;
        out.scaled_add(wt * x, &b);
    }
    Ok(out)
}

impl DesignMatrix {
    /// Assemble a basis-backed design from precomputed parts.
    pub fn from_parts(rows: Array2<f64>, penalty: Array2<f64>, basis: BasisConfig) -> Result<Self> {
        if rows.ncols() != basis.dim() {
            return Err(FlpreError::DimensionMismatch {
                context: "design rows".to_string(),
                expected: basis.dim(),
                found: rows.ncols(),
            });
        }
        let mut design = Self::from_raw(rows, penalty)?;
        design.basis = Some(basis);
        Ok(design)
    }

    /// Assemble a design without a basis (pure coefficient-space problems).
    pub fn from_raw(rows: Array2<f64>, penalty: Array2<f64>) -> Result<Self> {
        if penalty.nrows() != rows.ncols() || penalty.ncols() != rows.ncols() {
            return Err(FlpreError::DimensionMismatch {
                context: "penalty matrix".to_string(),
                expected: rows.ncols(),
                found: penalty.nrows(),
            });
        }
        Ok(Self {
            rows,
            penalty,
            basis: None,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn penalty(&self) -> ArrayView2<'_, f64> {
        self.penalty.view()
    }

    pub fn basis(&self) -> Option<&BasisConfig> {
        self.basis.as_ref()
    }
}

/// Project every sample onto the basis and attach the penalty matrix.
///
/// Rows are evaluated in parallel; output ordering matches the input.
pub fn build_design(samples: &[FunctionalSample], basis: &BasisConfig) -> Result<DesignMatrix> {
    if samples.is_empty() {
        return Err(FlpreError::InvalidInput(
            "design requires at least one sample".to_string(),
        ));
    }
    let projected: Vec<Result<Array1<f64>>> = samples
        .par_iter()
        .map(|s| project_covariate(s, basis))
        .collect();
    let dim = basis.dim();
    let mut rows = Array2::<f64>::zeros((samples.len(), dim));
    for (i, res) in projected.into_iter().enumerate() {
        match res {
            Ok(row) => rows.row_mut(i).assign(&row),
            Err(FlpreError::InvalidSample { reason, .. }) => {
                return Err(FlpreError::InvalidSample {
                    index: Some(i),
                    reason,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DesignMatrix {
        rows,
        penalty: penalty_matrix(basis),
        basis: Some(basis.clone()),
    })
}

/// Fast design assembly when all curves share one observation grid.
///
/// `curves` holds one curve per row, sampled at `grid`. The projection of
/// every curve reduces to a single matrix product against the basis values
/// weighted by the trapezoid rule, which matches `project_covariate` row by
/// row.
pub fn build_design_on_grid(
    grid: &[f64],
    curves: ArrayView2<f64>,
    basis: &BasisConfig,
) -> Result<DesignMatrix> {
    if grid.len() < 2 {
        return Err(FlpreError::InvalidInput(
            "shared grid must contain at least 2 points".to_string(),
        ));
    }
    if curves.ncols() != grid.len() {
        return Err(FlpreError::DimensionMismatch {
            context: "shared-grid curves".to_string(),
            expected: grid.len(),
            found: curves.ncols(),
        });
    }
    for i in 1..grid.len() {
        if grid[i] <= grid[i - 1] {
            return Err(FlpreError::InvalidInput(
                "shared grid must be strictly increasing".to_string(),
            ));
        }
    }
    if !(0.0..=1.0).contains(&grid[0]) || grid[grid.len() - 1] > 1.0 {
        return Err(FlpreError::InvalidInput(
            "shared grid must lie inside [0, 1]".to_string(),
        ));
    }
    let (pts, w, src) = extended_trapezoid_grid(grid);
    let dim = basis.dim();
    // quadrature operator: column g collects the weighted basis values that
    // multiply curve value x(grid[g])
    let mut quad = Array2::<f64>::zeros((grid.len(), dim));
    for ((&t, &wt), &s) in pts.iter().zip(&w).zip(&src) {
        let b = basis.eval(t)?;
        let mut row = quad.row_mut(s);
        row.scaled_add(wt, &b);
    }
    let rows = curves.dot(&quad);
    Ok(DesignMatrix {
        rows,
        penalty: penalty_matrix(basis),
        basis: Some(basis.clone()),
    })
}
