//! Synthetic data generation for the simulation studies: smooth random
//! curves built from a cubic B-spline expansion, four positive error laws,
//! the reference slope function and model responses.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::basis::make_basis;
use crate::error::{FlpreError, Result};
use crate::linalg::cholesky;

/// Distribution of the basis coefficients that build the random curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateLaw {
    /// Gaussian coefficients with AR(0.5) covariance.
    C1,
    /// Multivariate t with 5 degrees of freedom, scale Sigma/10.
    C2,
    /// Balanced mixture of Gaussians centered at +1 and -1.
    C3,
}

/// Distribution of the positive multiplicative error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorLaw {
    /// log(eps) ~ N(0, 1)
    R1,
    /// log(eps) ~ U(-2, 2)
    R2,
    /// density proportional to exp(-x - 1/x - log x + 2) on x > 0
    R3,
    /// eps ~ U(0.5, b) with b chosen so that E(eps) = E(1/eps)
    R4,
}

impl std::str::FromStr for CovariateLaw {
    type Err = FlpreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(CovariateLaw::C1),
            "C2" => Ok(CovariateLaw::C2),
            "C3" => Ok(CovariateLaw::C3),
            other => Err(FlpreError::InvalidInput(format!(
                "unknown covariate law '{other}' (expected C1, C2 or C3)"
            ))),
        }
    }
}

impl std::str::FromStr for ErrorLaw {
    type Err = FlpreError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R1" => Ok(ErrorLaw::R1),
            "R2" => Ok(ErrorLaw::R2),
            "R3" => Ok(ErrorLaw::R3),
            "R4" => Ok(ErrorLaw::R4),
            other => Err(FlpreError::InvalidInput(format!(
                "unknown error law '{other}' (expected R1, R2, R3 or R4)"
            ))),
        }
    }
}

impl std::fmt::Display for CovariateLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovariateLaw::C1 => "C1",
            CovariateLaw::C2 => "C2",
            CovariateLaw::C3 => "C3",
        })
    }
}

impl std::fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorLaw::R1 => "R1",
            ErrorLaw::R2 => "R2",
            ErrorLaw::R3 => "R3",
            ErrorLaw::R4 => "R4",
        })
    }
}

/// Simulation settings; curves are sampled at `grid_size` equally spaced
/// points in [0, 1] from `gen_basis_dim` cubic B-spline coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub covariate_law: CovariateLaw,
    pub error_law: ErrorLaw,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_gen_basis_dim")]
    pub gen_basis_dim: usize,
    pub seed: u64,
}

fn default_grid_size() -> usize {
    100
}

fn default_gen_basis_dim() -> usize {
    10
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(FlpreError::InvalidInput("n must be at least 1".to_string()));
        }
        if self.grid_size < 2 {
            return Err(FlpreError::InvalidInput(
                "grid_size must be at least 2".to_string(),
            ));
        }
        if self.gen_basis_dim < 4 {
            return Err(FlpreError::InvalidInput(
                "gen_basis_dim must be at least 4 (cubic generator basis)".to_string(),
            ));
        }
        Ok(())
    }
}

/// A generated dataset: shared grid, curve matrix (one row per sample),
/// responses and the noise-free indices.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub grid: Vec<f64>,
    pub curves: Array2<f64>,
    pub responses: Array1<f64>,
    pub errors: Array1<f64>,
}

/// Reference slope `beta(t) = 7 t^3 + 2 sin(4 pi t + 0.2)`.
pub fn true_beta(t: f64) -> f64 {
    7.0 * t * t * t + 2.0 * (4.0 * std::f64::consts::PI * t + 0.2).sin()
}

fn ar_covariance_cholesky(dim: usize) -> Array2<f64> {
    let sigma = Array2::from_shape_fn((dim, dim), |(i, j)| {
        0.5f64.powi((i as i64 - j as i64).unsigned_abs() as i32)
    });
    cholesky(sigma.view(), "AR(0.5) covariance").expect("AR covariance is positive definite")
}

/// Draw curves on an equispaced grid as `x_i = sum_j a_ij B_j` with the
/// coefficient rows following the configured law.
pub fn gen_covariates(config: &SimConfig, rng: &mut ChaCha12Rng) -> Result<(Vec<f64>, Array2<f64>)> {
    config.validate()?;
    let dim = config.gen_basis_dim;
    let g = config.grid_size;
    let grid: Vec<f64> = (0..g).map(|i| i as f64 / (g - 1) as f64).collect();
    let basis = make_basis(dim - 4, 3, 2)?;
    let mut basis_at_grid = Array2::<f64>::zeros((g, dim));
    for (row, &t) in grid.iter().enumerate() {
        basis_at_grid.row_mut(row).assign(&basis.eval(t)?);
    }
    let chol = ar_covariance_cholesky(dim);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let chi5 = ChiSquared::new(5.0).expect("chi-squared(5)");
    let mut coeffs = Array2::<f64>::zeros((config.n, dim));
    let mut z = Array1::<f64>::zeros(dim);
    for i in 0..config.n {
        for v in z.iter_mut() {
            *v = normal.sample(rng);
        }
        let correlated = chol.dot(&z);
        match config.covariate_law {
            CovariateLaw::C1 => coeffs.row_mut(i).assign(&correlated),
            CovariateLaw::C2 => {
                let u: f64 = chi5.sample(rng);
                let scale = (5.0 / u).sqrt() / 10.0f64.sqrt();
                coeffs.row_mut(i).assign(&(&correlated * scale));
            }
            CovariateLaw::C3 => {
                let sign = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
                coeffs.row_mut(i).assign(&(&correlated + sign));
            }
        }
    }
    let curves = coeffs.dot(&basis_at_grid.t());
    Ok((grid, curves))
}

/// Upper endpoint of the R4 uniform law, the root of
/// `(b^2 - 0.25)/2 = ln(2 b)` that balances E(eps) and E(1/eps).
pub fn r4_upper_bound() -> f64 {
    static B: OnceLock<f64> = OnceLock::new();
    *B.get_or_init(|| {
        let f = |b: f64| (b * b - 0.25) / 2.0 - (2.0 * b).ln();
        let (mut lo, mut hi) = (1.0f64, 3.0f64);
        debug_assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Log-normal proposal spread for the R3 rejection sampler.
const R3_PROPOSAL_SIGMA: f64 = 0.8;

/// log of the unnormalized R3 density, `-x - 1/x - ln x + 2`.
fn r3_log_unnormalized(x: f64) -> f64 {
    -x - 1.0 / x - x.ln() + 2.0
}

/// One R3 draw by rejection from a LogNormal(0, 0.8) proposal.
///
/// The likelihood ratio is maximized exactly at x = 1, where it equals
/// sigma * sqrt(2 pi); the envelope uses that bound with a tiny safety factor.
fn sample_r3(rng: &mut ChaCha12Rng) -> f64 {
    let sigma = R3_PROPOSAL_SIGMA;
    let log_envelope = (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln() + 1e-12;
    let normal = Normal::new(0.0, sigma).expect("proposal normal");
    loop {
        let z: f64 = normal.sample(rng);
        let x = z.exp();
        // log proposal density of LogNormal(0, sigma) at x
        let log_g = -z * z / (2.0 * sigma * sigma)
            - z
            - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let log_accept = r3_log_unnormalized(x) - log_g - log_envelope;
        if rng.random::<f64>().ln() < log_accept {
            return x;
        }
    }
}

/// Draw `n` positive errors from the requested law.
pub fn gen_errors(law: ErrorLaw, n: usize, rng: &mut ChaCha12Rng) -> Array1<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array1::from_shape_fn(n, |_| match law {
        ErrorLaw::R1 => {
            let z: f64 = normal.sample(rng);
            z.exp()
        }
        ErrorLaw::R2 => rng.random_range(-2.0..2.0f64).exp(),
        ErrorLaw::R3 => sample_r3(rng),
        ErrorLaw::R4 => rng.random_range(0.5..r4_upper_bound()),
    })
}

/// Responses `y_i = exp( int x_i(t) beta(t) dt ) * eps_i`, with the integral
/// by composite trapezoid on the generation grid.
pub fn gen_response(
    grid: &[f64],
    curves: ArrayView2<f64>,
    beta: impl Fn(f64) -> f64,
    errors: ArrayView1<f64>,
) -> Array1<f64> {
    assert_eq!(curves.nrows(), errors.len(), "curves/errors length mismatch");
    assert_eq!(curves.ncols(), grid.len(), "curves/grid length mismatch");
    let beta_vals: Vec<f64> = grid.iter().map(|&t| beta(t)).collect();
    let mut y = Array1::<f64>::zeros(curves.nrows());
    for i in 0..curves.nrows() {
        let mut idx = 0.0;
        for gpt in 0..grid.len() - 1 {
            let f0 = curves[(i, gpt)] * beta_vals[gpt];
            let f1 = curves[(i, gpt + 1)] * beta_vals[gpt + 1];
            idx += 0.5 * (grid[gpt + 1] - grid[gpt]) * (f0 + f1);
        }
        y[i] = idx.exp() * errors[i];
    }
    y
}

/// Generate a full dataset under the configured laws and seed.
pub fn simulate(config: &SimConfig) -> Result<SimulatedData> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let (grid, curves) = gen_covariates(config, &mut rng)?;
    let errors = gen_errors(config.error_law, config.n, &mut rng);
    let responses = gen_response(&grid, curves.view(), true_beta, errors.view());
    Ok(SimulatedData {
        grid,
        curves,
        responses,
        errors,
    })
}

impl SimulatedData {
    /// View the dataset as per-sample functional observations.
    pub fn to_samples(&self) -> Result<Vec<crate::basis::FunctionalSample>> {
        (0..self.curves.nrows())
            .map(|i| {
                crate::basis::FunctionalSample::new(
                    self.grid.clone(),
                    self.curves.row(i).to_vec(),
                    self.responses[i],
                )
            })
            .collect()
    }
}
