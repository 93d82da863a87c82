//! Penalized least-product-relative-error (LPRE) estimation.
//!
//! The criterion for a positive response y and linear predictor u = B_i'theta
//! multiplies the two relative errors |y - exp(u)|/y and |y - exp(u)|/exp(u),
//! giving the smooth strictly convex per-point loss
//! `omega + 1/omega - 2` with `omega = y * exp(-u)`. The penalized objective
//! adds `(lambda/2) theta' D_q theta`. Minimization is plain Newton with
//! backtracking step-halving; the fixed point is identical to the undamped
//! iteration because the objective is strictly convex.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::basis::{project_covariate, BasisConfig, DesignMatrix, FunctionalSample};
use crate::error::{FlpreError, Result};
use crate::linalg::{inverse_spd, solve_spd};
use crate::stats::normal_quantile;

/// Largest |linear predictor| fed to `exp` before a step is rejected.
pub const EXP_SAFE_BOUND: f64 = 700.0;

/// Which estimator produced a [`FitResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Flpre,
    Fls,
    Flad,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::Flpre => "FLPRE",
            FitMethod::Fls => "FLS",
            FitMethod::Flad => "FLAD",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FLPRE" => Ok(FitMethod::Flpre),
            "FLS" => Ok(FitMethod::Fls),
            "FLAD" => Ok(FitMethod::Flad),
            other => Err(FlpreError::InvalidInput(format!(
                "unknown method '{other}' (expected FLPRE, FLS or FLAD)"
            ))),
        }
    }
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fitted coefficients plus convergence diagnostics and, when available, the
/// plug-in sandwich variance pieces.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: FitMethod,
    pub theta: Array1<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// Objective value at the returned coefficients.
    pub loss: f64,
    /// Objective value after every accepted step (non-increasing).
    pub loss_trace: Vec<f64>,
    pub n: usize,
    pub g_hat: Option<Array2<f64>>,
    pub h_hat: Option<Array2<f64>>,
    pub v_full: Option<Array2<f64>>,
}

/// Newton solver controls.
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Gradient max-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative coefficient-change threshold treated as a stall.
    pub rel_change_tol: f64,
    /// Starting point; `None` uses the log-scale ridge solution, falling back
    /// to zero.
    pub init: Option<Array1<f64>>,
    /// Optional ridge added to the Hessian diagonal, scaled by the diagonal
    /// magnitude (the `--jitter` escape hatch for rank-deficient designs;
    /// curves living in a lower-dimensional function family than the fitting
    /// basis make the unpenalized Hessian exactly singular).
    pub hessian_jitter: Option<f64>,
    pub max_halvings: u32,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            rel_change_tol: 1e-10,
            init: None,
            hessian_jitter: None,
            max_halvings: 30,
        }
    }
}

fn check_inputs(design: &DesignMatrix, responses: ArrayView1<f64>, lambda: f64) -> Result<()> {
    if responses.len() != design.n() {
        return Err(FlpreError::DimensionMismatch {
            context: "responses".to_string(),
            expected: design.n(),
            found: responses.len(),
        });
    }
    for (i, &y) in responses.iter().enumerate() {
        if !(y.is_finite() && y > 0.0) {
            return Err(FlpreError::NonPositiveResponse { index: i, value: y });
        }
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(FlpreError::InvalidInput(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

fn check_theta(design: &DesignMatrix, theta: ArrayView1<f64>) -> Result<()> {
    if theta.len() != design.dim() {
        return Err(FlpreError::DimensionMismatch {
            context: "theta".to_string(),
            expected: design.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// Shared evaluation core for the full-data (unit weights) and
/// inverse-probability-weighted objectives.
pub(crate) struct WeightedLpre<'a> {
    pub rows: ArrayView2<'a, f64>,
    pub responses: ArrayView1<'a, f64>,
    /// Per-row loss multipliers; `None` means all ones.
    pub weights: Option<&'a [f64]>,
    pub penalty: ArrayView2<'a, f64>,
    pub lambda: f64,
}

impl<'a> WeightedLpre<'a> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn linear_predictor(&self, theta: ArrayView1<f64>, i: usize) -> Result<f64> {
        let u = self.rows.row(i).dot(&theta);
        if u.abs() > EXP_SAFE_BOUND {
            return Err(FlpreError::ExpOverflow {
                index: i,
                value: u,
                bound: EXP_SAFE_BOUND,
            });
        }
        Ok(u)
    }

    pub fn penalty_value(&self, theta: ArrayView1<f64>) -> f64 {
        0.5 * self.lambda * theta.dot(&self.penalty.dot(&theta))
    }

    pub fn loss(&self, theta: ArrayView1<f64>) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..self.rows.nrows() {
            let u = self.linear_predictor(theta, i)?;
            let omega = self.responses[i] * (-u).exp();
            sum += self.weight(i) * (omega + 1.0 / omega - 2.0);
        }
        Ok(sum + self.penalty_value(theta))
    }

    pub fn gradient(&self, theta: ArrayView1<f64>) -> Result<Array1<f64>> {
        let dim = self.rows.ncols();
        let mut g = Array1::<f64>::zeros(dim);
        for i in 0..self.rows.nrows() {
            let u = self.linear_predictor(theta, i)?;
            let omega = self.responses[i] * (-u).exp();
            let factor = self.weight(i) * (-omega + 1.0 / omega);
            g.scaled_add(factor, &self.rows.row(i));
        }
        g.scaled_add(self.lambda, &self.penalty.dot(&theta));
        Ok(g)
    }

    pub fn hessian(&self, theta: ArrayView1<f64>) -> Result<Array2<f64>> {
        let dim = self.rows.ncols();
        let mut h = Array2::<f64>::zeros((dim, dim));
        for i in 0..self.rows.nrows() {
            let u = self.linear_predictor(theta, i)?;
            let omega = self.responses[i] * (-u).exp();
            let w = self.weight(i) * (omega + 1.0 / omega);
            let row = self.rows.row(i);
            for a in 0..dim {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let wra = w * ra;
                for b in a..dim {
                    h[(a, b)] += wra * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in (a + 1)..dim {
                h[(b, a)] = h[(a, b)];
            }
        }
        h.scaled_add(self.lambda, &self.penalty);
        Ok(h)
    }

    /// Newton minimization with backtracking step-halving.
    pub fn minimize(&self, options: &NewtonOptions, init: Array1<f64>) -> Result<NewtonOutcome> {
        let mut theta = init;
        let mut loss = match self.loss(theta.view()) {
            Ok(l) => l,
            Err(FlpreError::ExpOverflow { .. }) => {
                // fall back to the always-safe origin
                theta.fill(0.0);
                self.loss(theta.view())?
            }
            Err(e) => return Err(e),
        };
        let mut trace = vec![loss];
        let mut converged = false;
        let mut iterations = 0;
        let mut gnorm = f64::INFINITY;
        for iter in 0..options.max_iter {
            let g = self.gradient(theta.view())?;
            gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gnorm < options.tol {
                converged = true;
                iterations = iter;
                break;
            }
            let mut h = self.hessian(theta.view())?;
            if let Some(j) = options.hessian_jitter {
                let scale = 1.0 + (0..h.nrows()).fold(0.0f64, |m, d| m.max(h[(d, d)].abs()));
                for d in 0..h.nrows() {
                    h[(d, d)] += j * scale;
                }
            }
            let step = solve_spd(h.view(), g.view(), "newton step").map_err(|e| {
                FlpreError::SingularHessian {
                    iteration: iter,
                    detail: e.to_string(),
                }
            })?;
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=options.max_halvings {
                let trial = &theta - &(&step * alpha);
                match self.loss(trial.view()) {
                    Ok(l) if l <= loss + 1e-14 * (1.0 + loss.abs()) => {
                        accepted = Some((trial, l));
                        break;
                    }
                    Ok(_) | Err(FlpreError::ExpOverflow { .. }) => {
                        alpha *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
            iterations = iter + 1;
            let Some((trial, new_loss)) = accepted else {
                // step-halving exhausted: report the non-converged state
                break;
            };
            let change = (&trial - &theta)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = theta.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            theta = trial;
            loss = new_loss;
            trace.push(loss);
            if change / scale < options.rel_change_tol {
                let g = self.gradient(theta.view())?;
                gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                converged = gnorm < options.tol;
                break;
            }
        }
        if !converged {
            let g = self.gradient(theta.view())?;
            gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            converged = gnorm < options.tol;
        }
        Ok(NewtonOutcome {
            theta,
            loss,
            loss_trace: trace,
            iterations,
            converged,
            final_gradient_norm: gnorm,
        })
    }
}

pub(crate) struct NewtonOutcome {
    pub theta: Array1<f64>,
    pub loss: f64,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
}

/// Penalized LPRE objective value.
pub fn lpre_loss(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    lambda: f64,
) -> Result<f64> {
    check_inputs(design, responses, lambda)?;
    check_theta(design, theta)?;
    problem(design, responses, lambda).loss(theta)
}

/// Gradient of the penalized LPRE objective.
pub fn lpre_gradient(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    lambda: f64,
) -> Result<Array1<f64>> {
    check_inputs(design, responses, lambda)?;
    check_theta(design, theta)?;
    problem(design, responses, lambda).gradient(theta)
}

/// Hessian of the penalized LPRE objective.
pub fn lpre_hessian(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    check_inputs(design, responses, lambda)?;
    check_theta(design, theta)?;
    problem(design, responses, lambda).hessian(theta)
}

/// The quadratic roughness penalty `(lambda/2) theta' D_q theta`.
pub fn penalty_value(design: &DesignMatrix, theta: ArrayView1<f64>, lambda: f64) -> f64 {
    0.5 * lambda * theta.dot(&design.penalty().dot(&theta))
}

fn problem<'a>(
    design: &'a DesignMatrix,
    responses: ArrayView1<'a, f64>,
    lambda: f64,
) -> WeightedLpre<'a> {
    WeightedLpre {
        rows: design.rows(),
        responses,
        weights: None,
        penalty: design.penalty(),
        lambda,
    }
}

/// Minimize the penalized LPRE objective by Newton–Raphson.
///
/// The default start is the log-scale ridge (FLS) solution; step-halving
/// guards against early-iteration overflow and guarantees a non-increasing
/// loss trace. Singular Hessians surface as errors so the caller can decide
/// whether to add jitter.
pub fn fit_newton(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    lambda: f64,
    options: &NewtonOptions,
) -> Result<FitResult> {
    check_inputs(design, responses, lambda)?;
    let init = match &options.init {
        Some(v) => {
            check_theta(design, v.view())?;
            v.clone()
        }
        None => crate::baselines::fls_theta(design, responses, lambda)
            .unwrap_or_else(|_| Array1::zeros(design.dim())),
    };
    let prob = problem(design, responses, lambda);
    let out = prob.minimize(options, init)?;
    let mut fit = FitResult {
        method: FitMethod::Flpre,
        theta: out.theta,
        lambda,
        iterations: out.iterations,
        converged: out.converged,
        final_gradient_norm: out.final_gradient_norm,
        loss: out.loss,
        loss_trace: out.loss_trace,
        n: design.n(),
        g_hat: None,
        h_hat: None,
        v_full: None,
    };
    if fit.converged {
        if let Ok((g, h)) = sandwich_matrices(design, responses, fit.theta.view(), lambda) {
            fit.v_full = variance_from_parts(design, &h, &g).ok();
            fit.g_hat = Some(g);
            fit.h_hat = Some(h);
        }
    }
    Ok(fit)
}

/// Plug-in matrices `G_hat = (1/n) sum s_i^2 B_i B_i'` and
/// `H_hat = (1/n) sum (omega_i + 1/omega_i) B_i B_i' + (lambda/n) D_q`, with
/// `s_i = -omega_i + 1/omega_i` evaluated at `theta`.
pub fn sandwich_matrices(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_inputs(design, responses, lambda)?;
    check_theta(design, theta)?;
    let n = design.n();
    let dim = design.dim();
    let rows = design.rows();
    let mut g = Array2::<f64>::zeros((dim, dim));
    let mut h = Array2::<f64>::zeros((dim, dim));
    for i in 0..n {
        let u = rows.row(i).dot(&theta);
        if u.abs() > EXP_SAFE_BOUND {
            return Err(FlpreError::ExpOverflow {
                index: i,
                value: u,
                bound: EXP_SAFE_BOUND,
            });
        }
        let omega = responses[i] * (-u).exp();
        let s = -omega + 1.0 / omega;
        let wp = omega + 1.0 / omega;
        let row = rows.row(i);
        for a in 0..dim {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..dim {
                g[(a, b)] += s * s * ra * row[b];
                h[(a, b)] += wp * ra * row[b];
            }
        }
    }
    let nf = n as f64;
    for a in 0..dim {
        for b in a..dim {
            g[(a, b)] /= nf;
            h[(a, b)] /= nf;
            g[(b, a)] = g[(a, b)];
            h[(b, a)] = h[(a, b)];
        }
    }
    h.scaled_add(lambda / nf, &design.penalty());
    Ok((g, h))
}

fn variance_from_parts(
    design: &DesignMatrix,
    h_hat: &Array2<f64>,
    g_hat: &Array2<f64>,
) -> Result<Array2<f64>> {
    let k = design
        .basis()
        .ok_or_else(|| {
            FlpreError::InvalidInput(
                "variance estimation requires a basis-backed design".to_string(),
            )
        })?
        .interior_knots();
    if k == 0 {
        return Err(FlpreError::InvalidInput(
            "variance normalization requires at least one interior knot".to_string(),
        ));
    }
    let h_inv = inverse_spd(h_hat.view(), "H_hat").map_err(|e| FlpreError::SingularMatrix {
        context: "H_hat".to_string(),
        detail: format!("{e}; a larger lambda or more data may help"),
    })?;
    let v = h_inv.dot(g_hat).dot(&h_inv) / k as f64;
    let vt = v.t().to_owned();
    Ok((&v + &vt) * 0.5)
}

/// Sandwich variance `V_full = K^{-1} H_hat^{-1} G_hat H_hat^{-1}` of the
/// full-data estimator, returned together with its plug-in pieces.
pub fn sandwich_variance(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    fit: &FitResult,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    if !fit.converged {
        return Err(FlpreError::NotConverged {
            iterations: fit.iterations,
            gradient_norm: fit.final_gradient_norm,
        });
    }
    let (g, h) = sandwich_matrices(design, responses, fit.theta.view(), fit.lambda)?;
    let v = variance_from_parts(design, &h, &g)?;
    Ok((g, h, v))
}

/// Slope curve evaluated on a grid, optionally with pointwise standard errors
/// and a symmetric confidence band at the given level.
#[derive(Debug, Clone)]
pub struct BetaCurve {
    pub t: Array1<f64>,
    pub beta: Array1<f64>,
    pub se: Option<Array1<f64>>,
    pub lower: Option<Array1<f64>>,
    pub upper: Option<Array1<f64>>,
}

/// Evaluate `beta_hat(t) = B(t)' theta_hat` on `t_grid`.
///
/// With `band_level = Some(level)` the result carries the pointwise standard
/// error `sqrt(K B(t)' V_full B(t) / n)` and the corresponding normal band;
/// this requires the fit to hold a variance estimate.
pub fn predict_beta(
    fit: &FitResult,
    basis: &BasisConfig,
    t_grid: &[f64],
    band_level: Option<f64>,
) -> Result<BetaCurve> {
    if fit.theta.len() != basis.dim() {
        return Err(FlpreError::DimensionMismatch {
            context: "predict_beta".to_string(),
            expected: basis.dim(),
            found: fit.theta.len(),
        });
    }
    let m = t_grid.len();
    let mut beta = Array1::<f64>::zeros(m);
    let mut bvals = Vec::with_capacity(m);
    for (j, &t) in t_grid.iter().enumerate() {
        let b = basis.eval(t)?;
        beta[j] = b.dot(&fit.theta);
        bvals.push(b);
    }
    let (se, lower, upper) = match band_level {
        None => (None, None, None),
        Some(level) => {
            if !(0.0 < level && level < 1.0) {
                return Err(FlpreError::InvalidInput(format!(
                    "confidence level must be in (0,1), got {level}"
                )));
            }
            let v = fit.v_full.as_ref().ok_or_else(|| {
                FlpreError::InvalidInput(
                    "fit carries no variance estimate; refit with variance enabled".to_string(),
                )
            })?;
            let k = basis.interior_knots() as f64;
            let n = fit.n as f64;
            let z = normal_quantile(0.5 + level / 2.0);
            let mut se = Array1::<f64>::zeros(m);
            let mut lo = Array1::<f64>::zeros(m);
            let mut hi = Array1::<f64>::zeros(m);
            for (j, b) in bvals.iter().enumerate() {
                let quad = b.dot(&v.dot(b)).max(0.0);
                se[j] = (k * quad / n).sqrt();
                lo[j] = beta[j] - z * se[j];
                hi[j] = beta[j] + z * se[j];
            }
            (Some(se), Some(lo), Some(hi))
        }
    };
    Ok(BetaCurve {
        t: Array1::from_vec(t_grid.to_vec()),
        beta,
        se,
        lower,
        upper,
    })
}

/// Predicted response `exp(B_new' theta_hat)` for a new curve.
pub fn predict_response(
    fit: &FitResult,
    basis: &BasisConfig,
    sample: &FunctionalSample,
) -> Result<f64> {
    let b = project_covariate(sample, basis)?;
    if b.len() != fit.theta.len() {
        return Err(FlpreError::DimensionMismatch {
            context: "predict_response".to_string(),
            expected: fit.theta.len(),
            found: b.len(),
        });
    }
    let u = b.dot(&fit.theta);
    if u.abs() > EXP_SAFE_BOUND {
        return Err(FlpreError::ExpOverflow {
            index: 0,
            value: u,
            bound: EXP_SAFE_BOUND,
        });
    }
    Ok(u.exp())
}
