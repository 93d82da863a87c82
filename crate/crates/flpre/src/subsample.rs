//! Subsampling estimation for massive data: sampling probability schemes
//! (uniform, A-optimal, L-optimal), multinomial draws with replacement via an
//! alias table, the inverse-probability-weighted estimator, its conditional
//! variance estimator and the two-step pilot procedure.
//!
//! The A-optimal probabilities minimize the trace of the subsampling
//! estimator's asymptotic variance; the L-optimal ones minimize the trace of
//! its probability-dependent core, which avoids forming `H_hat^{-1}` per
//! point and costs only O(n (K + p + 1)).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::collections::HashMap;

use crate::basis::DesignMatrix;
use crate::error::{FlpreError, Result};
use crate::linalg::inverse_spd;
use crate::lpre::{sandwich_matrices, NewtonOptions, WeightedLpre, EXP_SAFE_BOUND};
use crate::tuning::bic_weighted;

/// Which probability scheme produced a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Uniform,
    FAopt,
    FLopt,
}

impl SchemeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeKind::Uniform => "Unif",
            SchemeKind::FAopt => "FAopt",
            SchemeKind::FLopt => "FLopt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(SchemeKind::Uniform),
            "faopt" => Ok(SchemeKind::FAopt),
            "flopt" => Ok(SchemeKind::FLopt),
            other => Err(FlpreError::InvalidInput(format!(
                "unknown subsample kind '{other}' (expected uniform, FAopt or FLopt)"
            ))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalized sampling probabilities over the full data.
#[derive(Debug, Clone)]
pub struct SubsampleScheme {
    kind: SchemeKind,
    probs: Array1<f64>,
    alpha: f64,
}

impl SubsampleScheme {
    /// Build a scheme from explicit nonnegative weights; they are normalized
    /// to sum to one.
    pub fn from_probs(kind: SchemeKind, probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(FlpreError::InvalidInput(
                "probabilities must be finite and nonnegative".to_string(),
            ));
        }
        Self::from_scores(kind, Array1::from_vec(probs))
    }

    fn from_scores(kind: SchemeKind, mut scores: Array1<f64>) -> Result<Self> {
        let total = kahan_sum(scores.iter().copied());
        if !(total.is_finite() && total > 0.0) {
            return Err(FlpreError::DegenerateProbabilities);
        }
        scores.mapv_inplace(|s| s / total);
        // second pass pins the sum to 1 well below the 1e-12 contract
        let total = kahan_sum(scores.iter().copied());
        scores.mapv_inplace(|s| s / total);
        Ok(Self {
            kind,
            probs: scores,
            alpha: 0.0,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Blend with the uniform distribution: `(1 - alpha) pi + alpha / n`.
    ///
    /// A positive `alpha` bounds `max_i 1/(n pi_i)` by `1/alpha`, keeping
    /// inverse-probability weights under control on near-degenerate schemes.
    pub fn with_mixing(mut self, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(FlpreError::InvalidInput(format!(
                "mixing weight must lie in [0, 1), got {alpha}"
            )));
        }
        if alpha == 0.0 {
            return Ok(self);
        }
        let n = self.probs.len() as f64;
        self.probs.mapv_inplace(|p| (1.0 - alpha) * p + alpha / n);
        let total = kahan_sum(self.probs.iter().copied());
        self.probs.mapv_inplace(|p| p / total);
        self.alpha = alpha;
        Ok(self)
    }
}

fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Uniform probabilities 1/n.
pub fn probs_uniform(n: usize) -> Result<SubsampleScheme> {
    if n == 0 {
        return Err(FlpreError::InvalidInput(
            "uniform scheme requires n >= 1".to_string(),
        ));
    }
    Ok(SubsampleScheme {
        kind: SchemeKind::Uniform,
        probs: Array1::from_elem(n, 1.0 / n as f64),
        alpha: 0.0,
    })
}

fn residual_factor(design: &DesignMatrix, responses: ArrayView1<f64>, theta: ArrayView1<f64>, i: usize) -> Result<f64> {
    let u = design.rows().row(i).dot(&theta);
    if u.abs() > EXP_SAFE_BOUND {
        return Err(FlpreError::ExpOverflow {
            index: i,
            value: u,
            bound: EXP_SAFE_BOUND,
        });
    }
    let omega = responses[i] * (-u).exp();
    Ok(-omega + 1.0 / omega)
}

/// L-optimal probabilities: `pi_i` proportional to
/// `|-omega_i + 1/omega_i| * ||B_i||_2` at the reference coefficients.
pub fn probs_flopt(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta_ref: ArrayView1<f64>,
) -> Result<SubsampleScheme> {
    let scores: Vec<Result<f64>> = (0..design.n())
        .into_par_iter()
        .map(|i| {
            let s = residual_factor(design, responses, theta_ref, i)?;
            let norm = design.rows().row(i).dot(&design.rows().row(i)).sqrt();
            Ok(s.abs() * norm)
        })
        .collect();
    let scores: Result<Vec<f64>> = scores.into_iter().collect();
    SubsampleScheme::from_scores(SchemeKind::FLopt, Array1::from_vec(scores?))
}

/// A-optimal probabilities: `pi_i` proportional to
/// `|-omega_i + 1/omega_i| * ||H_ref^{-1} B_i||_2`.
pub fn probs_faopt(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta_ref: ArrayView1<f64>,
    h_ref: ArrayView2<f64>,
) -> Result<SubsampleScheme> {
    if h_ref.nrows() != design.dim() || h_ref.ncols() != design.dim() {
        return Err(FlpreError::DimensionMismatch {
            context: "H reference".to_string(),
            expected: design.dim(),
            found: h_ref.nrows(),
        });
    }
    let h_inv = inverse_spd(h_ref, "H reference")?;
    let scores: Vec<Result<f64>> = (0..design.n())
        .into_par_iter()
        .map(|i| {
            let s = residual_factor(design, responses, theta_ref, i)?;
            let v = h_inv.dot(&design.rows().row(i));
            Ok(s.abs() * v.dot(&v).sqrt())
        })
        .collect();
    let scores: Result<Vec<f64>> = scores.into_iter().collect();
    SubsampleScheme::from_scores(SchemeKind::FAopt, Array1::from_vec(scores?))
}

/// Alias table for O(1) categorical draws after an O(n) build (Vose's method).
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(probs: ArrayView1<f64>) -> Self {
        let n = probs.len();
        let nf = n as f64;
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * nf).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small: Vec<usize> = Vec::with_capacity(n);
        let mut large: Vec<usize> = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers in either stack are 1 up to roundoff
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
            alias[i] = i;
        }
        Self { prob, alias }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// Multiplicities of a with-replacement draw, stored sparsely as sorted
/// (index, count) pairs so downstream work scales with the number of distinct
/// points rather than n.
#[derive(Debug, Clone)]
pub struct SubsampleDraw {
    counts: Vec<(usize, u32)>,
    r: usize,
    seed: Option<u64>,
}

impl SubsampleDraw {
    /// Build a draw from explicit multiplicities (forced designs in tests and
    /// balanced-draw identities).
    pub fn from_counts(counts: Vec<(usize, u32)>, seed: Option<u64>) -> Result<Self> {
        let mut sorted = counts;
        sorted.sort_by_key(|(i, _)| *i);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(FlpreError::InvalidInput(format!(
                    "duplicate index {} in draw counts",
                    w[0].0
                )));
            }
        }
        if sorted.iter().any(|&(_, c)| c == 0) {
            return Err(FlpreError::InvalidInput(
                "draw counts must be positive".to_string(),
            ));
        }
        let r = sorted.iter().map(|&(_, c)| c as usize).sum();
        if r == 0 {
            return Err(FlpreError::InvalidInput(
                "draw must contain at least one point".to_string(),
            ));
        }
        Ok(Self {
            counts: sorted,
            r,
            seed,
        })
    }

    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Materialize the length-n multiplicity vector.
    pub fn dense(&self, n: usize) -> Vec<u32> {
        let mut out = vec![0u32; n];
        for &(i, c) in &self.counts {
            out[i] = c;
        }
        out
    }
}

/// Draw `r` points with replacement following the scheme.
pub fn draw_with_replacement(
    scheme: &SubsampleScheme,
    r: usize,
    rng: &mut impl Rng,
) -> Result<SubsampleDraw> {
    if r == 0 {
        return Err(FlpreError::InvalidInput(
            "subsample size r must be at least 1".to_string(),
        ));
    }
    let table = AliasTable::new(scheme.probs());
    let mut counts: HashMap<usize, u32> = HashMap::new();
    for _ in 0..r {
        *counts.entry(table.sample(rng)).or_insert(0) += 1;
    }
    let mut counts: Vec<(usize, u32)> = counts.into_iter().collect();
    counts.sort_by_key(|(i, _)| *i);
    Ok(SubsampleDraw {
        counts,
        r,
        seed: None,
    })
}

/// Seeded convenience wrapper around [`draw_with_replacement`].
pub fn draw_seeded(scheme: &SubsampleScheme, r: usize, seed: u64) -> Result<SubsampleDraw> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = draw_with_replacement(scheme, r, &mut rng)?;
    draw.seed = Some(seed);
    Ok(draw)
}

/// Derive independent stream seeds from a root seed (SplitMix64 mixing).
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Controls for subsample estimation.
#[derive(Debug, Clone)]
pub struct SubsampleOptions {
    pub newton: NewtonOptions,
    /// Uniform mixing weight applied to optimal schemes (0 disables).
    pub alpha_mix: f64,
    /// Fill the variance matrices of the result (costs an O(n dim^2) pass).
    pub compute_variance: bool,
}

impl Default for SubsampleOptions {
    fn default() -> Self {
        Self {
            newton: NewtonOptions::default(),
            alpha_mix: 0.0,
            compute_variance: false,
        }
    }
}

/// A subsample estimate with its draw metadata and optional variance.
#[derive(Debug, Clone)]
pub struct SubsampleFit {
    pub theta: Array1<f64>,
    pub lambda: f64,
    pub kind: SchemeKind,
    pub r: usize,
    pub r0: Option<usize>,
    pub pilot_theta: Option<Array1<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// Weighted objective value at the estimate.
    pub loss: f64,
    /// `V = K^{-1} H_hat^{-1} V_pi H_hat^{-1}` when variance was requested.
    pub v: Option<Array2<f64>>,
    pub v_pi: Option<Array2<f64>>,
    /// (lambda, BIC) pairs when lambda was selected on the subsample.
    pub bic_path: Option<Vec<(f64, Option<f64>)>>,
}

struct CompactSubsample {
    rows: Array2<f64>,
    responses: Array1<f64>,
    /// Inverse-probability loss weights `R_i / (r pi_i)`.
    weights: Vec<f64>,
}

fn compact_subsample(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    draw: &SubsampleDraw,
    scheme: &SubsampleScheme,
) -> Result<CompactSubsample> {
    if scheme.n() != design.n() {
        return Err(FlpreError::DimensionMismatch {
            context: "scheme probabilities".to_string(),
            expected: design.n(),
            found: scheme.n(),
        });
    }
    let m = draw.distinct();
    let dim = design.dim();
    let mut rows = Array2::<f64>::zeros((m, dim));
    let mut y = Array1::<f64>::zeros(m);
    let mut weights = Vec::with_capacity(m);
    let r = draw.r() as f64;
    let probs = scheme.probs();
    for (k, &(i, c)) in draw.counts().iter().enumerate() {
        if i >= design.n() {
            return Err(FlpreError::InvalidInput(format!(
                "draw refers to index {i} outside the data (n = {})",
                design.n()
            )));
        }
        let pi = probs[i];
        if pi <= 0.0 {
            return Err(FlpreError::ZeroProbability { index: i, pi });
        }
        rows.row_mut(k).assign(&design.rows().row(i));
        y[k] = responses[i];
        weights.push(c as f64 / (r * pi));
    }
    Ok(CompactSubsample {
        rows,
        responses: y,
        weights,
    })
}

/// Minimize the inverse-probability-weighted objective
/// `(1/r) sum_i (R_i / pi_i) (omega_i + 1/omega_i - 2) + (lambda/2) theta' D theta`.
pub fn fit_weighted(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    draw: &SubsampleDraw,
    scheme: &SubsampleScheme,
    lambda: f64,
    options: &SubsampleOptions,
) -> Result<SubsampleFit> {
    let compact = compact_subsample(design, responses, draw, scheme)?;
    let prob = WeightedLpre {
        rows: compact.rows.view(),
        responses: compact.responses.view(),
        weights: Some(&compact.weights),
        penalty: design.penalty(),
        lambda,
    };
    let init = match &options.newton.init {
        Some(v) => v.clone(),
        None => {
            let sub = DesignMatrix::from_raw(compact.rows.clone(), design.penalty().to_owned())?;
            crate::baselines::fls_theta_weighted(
                &sub,
                compact.responses.view(),
                Some(&compact.weights),
                lambda,
            )
            .unwrap_or_else(|_| Array1::zeros(design.dim()))
        }
    };
    let out = prob.minimize(&options.newton, init).map_err(|e| match e {
        FlpreError::SingularHessian { iteration, detail } => FlpreError::SingularHessian {
            iteration,
            detail: format!("{detail} (weighted subsample; a larger r or alpha mixing may help)"),
        },
        other => other,
    })?;
    let (v, v_pi) = if options.compute_variance {
        let (v, v_pi) = subsample_variance(design, responses, out.theta.view(), scheme, lambda)?;
        (Some(v), Some(v_pi))
    } else {
        (None, None)
    };
    Ok(SubsampleFit {
        theta: out.theta,
        lambda,
        kind: scheme.kind(),
        r: draw.r(),
        r0: None,
        pilot_theta: None,
        iterations: out.iterations,
        converged: out.converged,
        final_gradient_norm: out.final_gradient_norm,
        loss: out.loss,
        v,
        v_pi,
        bic_path: None,
    })
}

/// Conditional variance estimator of the subsample fit:
/// `V_pi = (1/n^2) sum (1/pi_i) s_i^2 B_i B_i'` and
/// `V = K^{-1} H_hat^{-1} V_pi H_hat^{-1}`, both evaluated at `theta`.
///
/// Terms with an exactly zero residual factor contribute nothing and are
/// skipped regardless of their probability.
pub fn subsample_variance(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    theta: ArrayView1<f64>,
    scheme: &SubsampleScheme,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if scheme.n() != design.n() {
        return Err(FlpreError::DimensionMismatch {
            context: "scheme probabilities".to_string(),
            expected: design.n(),
            found: scheme.n(),
        });
    }
    let n = design.n();
    let dim = design.dim();
    let probs = scheme.probs();
    let rows = design.rows();
    let mut v_pi = Array2::<f64>::zeros((dim, dim));
    for i in 0..n {
        let s = residual_factor(design, responses, theta, i)?;
        if s == 0.0 {
            continue;
        }
        let pi = probs[i];
        if pi <= 0.0 {
            return Err(FlpreError::ZeroProbability { index: i, pi });
        }
        let w = s * s / pi;
        let row = rows.row(i);
        for a in 0..dim {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..dim {
                v_pi[(a, b)] += w * ra * row[b];
            }
        }
    }
    let n2 = (n * n) as f64;
    for a in 0..dim {
        for b in a..dim {
            v_pi[(a, b)] /= n2;
            v_pi[(b, a)] = v_pi[(a, b)];
        }
    }
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
    let (_, h_hat) = sandwich_matrices(design, responses, theta, lambda)?;
    let h_inv = inverse_spd(h_hat.view(), "H_hat")?;
    let v = h_inv.dot(&v_pi).dot(&h_inv) / k as f64;
    let vt = v.t().to_owned();
    Ok(((&v + &vt) * 0.5, v_pi))
}

/// Two-step estimator: a uniform pilot of size `r0` at lambda = 0 feeds the
/// L-optimal probabilities, then the main draw of size `r` is fitted with
/// lambda selected by BIC on that subsample. The pilot sample is not merged
/// into the second step.
///
/// `kind` chooses the optimal probabilities of the second step: `FLopt` (the
/// procedure's default) or `FAopt`, whose `H_hat` is evaluated at the pilot
/// coefficients with lambda = 0.
#[allow(clippy::too_many_arguments)]
pub fn two_step_fit(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    kind: SchemeKind,
    r0: usize,
    r: usize,
    lambda_grid: &[f64],
    seed: u64,
    options: &SubsampleOptions,
) -> Result<SubsampleFit> {
    if r0 < design.dim() {
        return Err(FlpreError::InvalidInput(format!(
            "pilot size r0 = {r0} is below the basis dimension {}",
            design.dim()
        )));
    }
    if lambda_grid.is_empty() {
        return Err(FlpreError::LambdaSelection("empty lambda grid".to_string()));
    }
    let uniform = probs_uniform(design.n())?;
    let mut pilot_opts = SubsampleOptions {
        newton: options.newton.clone(),
        alpha_mix: 0.0,
        compute_variance: false,
    };
    pilot_opts.newton.init = None;
    // The pilot runs unpenalized and only feeds the sampling scores through
    // the fitted indices B_i' theta, which stay identified even when the
    // unpenalized Hessian is rank-deficient; a tiny solver ridge keeps that
    // case solvable.
    pilot_opts.newton.hessian_jitter = options.newton.hessian_jitter.or(Some(1e-10));
    let mut pilot = None;
    for (attempt, size) in [(0u64, r0), (1, r0 * 2)] {
        let draw = draw_seeded(&uniform, size, derive_seed(seed, attempt))?;
        let fit = fit_weighted(design, responses, &draw, &uniform, 0.0, &pilot_opts)?;
        if fit.converged {
            pilot = Some(fit);
            break;
        }
    }
    let pilot = pilot.ok_or(FlpreError::NotConverged {
        iterations: pilot_opts.newton.max_iter,
        gradient_norm: f64::NAN,
    })?;

    let mut scheme = match kind {
        SchemeKind::FLopt => probs_flopt(design, responses, pilot.theta.view())?,
        SchemeKind::FAopt => {
            let (_, h_pilot) = sandwich_matrices(design, responses, pilot.theta.view(), 0.0)?;
            probs_faopt(design, responses, pilot.theta.view(), h_pilot.view())?
        }
        SchemeKind::Uniform => {
            return Err(FlpreError::InvalidInput(
                "two-step estimation expects FLopt or FAopt; use a one-shot uniform fit instead"
                    .to_string(),
            ))
        }
    };
    if options.alpha_mix > 0.0 {
        scheme = scheme.with_mixing(options.alpha_mix)?;
    }
    let draw = draw_seeded(&scheme, r, derive_seed(seed, 2))?;

    let mut main_opts = SubsampleOptions {
        newton: options.newton.clone(),
        alpha_mix: options.alpha_mix,
        compute_variance: false,
    };
    main_opts.newton.init = Some(pilot.theta.clone());

    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();

    let (chosen, path) = if lambdas.len() == 1 {
        (
            fit_weighted(design, responses, &draw, &scheme, lambdas[0], &main_opts)?,
            None,
        )
    } else {
        let compact = compact_subsample(design, responses, &draw, &scheme)?;
        let mut best: Option<(SubsampleFit, f64)> = None;
        let mut path = Vec::with_capacity(lambdas.len());
        let mut first_err: Option<FlpreError> = None;
        for &lambda in &lambdas {
            match fit_weighted(design, responses, &draw, &scheme, lambda, &main_opts) {
                Ok(fit) => {
                    let score = bic_weighted(
                        compact.rows.view(),
                        compact.responses.view(),
                        &compact.weights,
                        design.penalty(),
                        lambda,
                        fit.theta.view(),
                        design.n(),
                        draw.r(),
                    );
                    match score {
                        Ok(s) if s.is_finite() => {
                            path.push((lambda, Some(s)));
                            let replace = match &best {
                                None => true,
                                Some((_, b)) => s <= *b,
                            };
                            if replace {
                                best = Some((fit, s));
                            }
                        }
                        Ok(_) | Err(_) => path.push((lambda, None)),
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
        let (fit, _) = best.ok_or_else(|| {
            first_err.unwrap_or_else(|| {
                FlpreError::LambdaSelection(
                    "BIC is undefined at every grid point".to_string(),
                )
            })
        })?;
        (fit, Some(path))
    };

    let (v, v_pi) = if options.compute_variance {
        let (v, v_pi) =
            subsample_variance(design, responses, chosen.theta.view(), &scheme, chosen.lambda)?;
        (Some(v), Some(v_pi))
    } else {
        (None, None)
    };
    Ok(SubsampleFit {
        r0: Some(r0),
        pilot_theta: Some(pilot.theta),
        v,
        v_pi,
        bic_path: path,
        ..chosen
    })
}

/// One-shot uniform subsample fit at a fixed lambda.
pub fn uniform_one_shot(
    design: &DesignMatrix,
    responses: ArrayView1<f64>,
    r: usize,
    lambda: f64,
    seed: u64,
    options: &SubsampleOptions,
) -> Result<SubsampleFit> {
    let scheme = probs_uniform(design.n())?;
    let draw = draw_seeded(&scheme, r, derive_seed(seed, 2))?;
    fit_weighted(design, responses, &draw, &scheme, lambda, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_basis, penalty_matrix};
    use crate::lpre::fit_newton;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_design(seed: u64, n: usize, dim: usize) -> (DesignMatrix, Array1<f64>) {
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
    fn uniform_probabilities() {
        let s = probs_uniform(4).unwrap();
        for p in s.probs().iter() {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
        let s = probs_uniform(1).unwrap();
        assert_abs_diff_eq!(s.probs()[0], 1.0, epsilon = 1e-15);
        assert!(probs_uniform(0).is_err());
    }

    #[test]
    fn schemes_sum_to_one() {
        let (design, y) = random_design(3, 500, 8);
        let theta = Array1::zeros(8);
        let s = probs_flopt(&design, y.view(), theta.view()).unwrap();
        assert!((kahan_sum(s.probs().iter().copied()) - 1.0).abs() < 1e-12);
        let mixed = s.with_mixing(0.2).unwrap();
        assert!((kahan_sum(mixed.probs().iter().copied()) - 1.0).abs() < 1e-12);
        let n = mixed.n() as f64;
        assert!(mixed.probs().iter().all(|&p| p >= 0.2 / n));
    }

    #[test]
    fn flopt_zeroes_perfectly_fit_points() {
        // rows e1, e1; theta = 0; y = (e, 1): the second point fits exactly
        let rows = array![[1.0, 0.0], [1.0, 0.0]];
        let design = DesignMatrix::from_raw(rows, Array2::zeros((2, 2))).unwrap();
        let y = array![std::f64::consts::E, 1.0];
        let theta = array![0.0, 0.0];
        let s = probs_flopt(&design, y.view(), theta.view()).unwrap();
        assert_abs_diff_eq!(s.probs()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.probs()[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn flopt_symmetric_duplicates_split_evenly() {
        let rows = array![[0.4, 0.6], [0.4, 0.6]];
        let design = DesignMatrix::from_raw(rows, Array2::zeros((2, 2))).unwrap();
        let y = array![2.0, 2.0];
        let theta = array![0.1, 0.1];
        let s = probs_flopt(&design, y.view(), theta.view()).unwrap();
        assert_abs_diff_eq!(s.probs()[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.probs()[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn faopt_with_identity_equals_flopt() {
        let (design, y) = random_design(5, 60, 8);
        let theta = Array1::from_elem(8, 0.05);
        let fl = probs_flopt(&design, y.view(), theta.view()).unwrap();
        let fa = probs_faopt(&design, y.view(), theta.view(), Array2::eye(8).view()).unwrap();
        for i in 0..60 {
            assert_abs_diff_eq!(fl.probs()[i], fa.probs()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn score_ratio_one_to_three_normalizes_to_quarters() {
        // residual factors with |s| = 1 and |s| = 3 on unit rows
        let w1 = (1.0 + 5.0f64.sqrt()) / 2.0; // omega - 1/omega = 1
        let w3 = (3.0 + 13.0f64.sqrt()) / 2.0; // omega - 1/omega = 3
        let rows = array![[1.0, 0.0], [0.0, 1.0]];
        let design = DesignMatrix::from_raw(rows, Array2::zeros((2, 2))).unwrap();
        let y = array![w1, w3];
        let theta = array![0.0, 0.0];
        let s = probs_flopt(&design, y.view(), theta.view()).unwrap();
        assert_abs_diff_eq!(s.probs()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(s.probs()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn probabilities_are_invariant_to_common_score_scaling() {
        let (design, y) = random_design(7, 40, 8);
        let theta = Array1::from_elem(8, 0.02);
        let base = probs_flopt(&design, y.view(), theta.view()).unwrap();
        let scaled_rows = design.rows().to_owned() * 2.0;
        let scaled = DesignMatrix::from_raw(scaled_rows, design.penalty().to_owned()).unwrap();
        // doubling every row doubles ||B_i|| and changes residuals; rescale
        // theta to keep the residual factors identical
        let theta_half = &theta * 0.5;
        let after = probs_flopt(&scaled, y.view(), theta_half.view()).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(base.probs()[i], after.probs()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_scores_are_rejected() {
        let rows = array![[1.0, 0.0]];
        let design = DesignMatrix::from_raw(rows, Array2::zeros((2, 2))).unwrap();
        let y = array![1.0];
        let theta = array![0.0, 0.0];
        assert!(matches!(
            probs_flopt(&design, y.view(), theta.view()),
            Err(FlpreError::DegenerateProbabilities)
        ));
    }

    #[test]
    fn degenerate_draw_concentrates() {
        let scheme = SubsampleScheme {
            kind: SchemeKind::Uniform,
            probs: array![1.0, 0.0],
            alpha: 0.0,
        };
        let draw = draw_seeded(&scheme, 5, 9).unwrap();
        assert_eq!(draw.dense(2), vec![5, 0]);
    }

    #[test]
    fn uniform_draw_matches_multinomial_moments() {
        let scheme = probs_uniform(4).unwrap();
        let r = 40_000;
        let draw = draw_seeded(&scheme, r, 1234).unwrap();
        let se = (0.25 * 0.75 / r as f64).sqrt();
        for &(_, c) in draw.counts() {
            let frac = c as f64 / r as f64;
            assert!(
                (frac - 0.25).abs() < 3.0 * se,
                "fraction {frac} vs 0.25 (se {se})"
            );
        }
        assert_eq!(draw.r(), r);
        assert_eq!(
            draw.counts().iter().map(|&(_, c)| c as usize).sum::<usize>(),
            r
        );
    }

    #[test]
    fn draws_are_deterministic_under_seed() {
        let (design, y) = random_design(11, 300, 8);
        let theta = Array1::zeros(8);
        let scheme = probs_flopt(&design, y.view(), theta.view()).unwrap();
        let a = draw_seeded(&scheme, 50, 777).unwrap();
        let b = draw_seeded(&scheme, 50, 777).unwrap();
        assert_eq!(a.counts(), b.counts());
        let c = draw_seeded(&scheme, 50, 778).unwrap();
        assert_ne!(a.counts(), c.counts());
    }

    #[test]
    fn balanced_uniform_draw_recovers_the_full_fit() {
        let (design, y) = random_design(13, 12, 8);
        let lambda = 0.05;
        let full = fit_newton(&design, y.view(), lambda, &NewtonOptions::default()).unwrap();
        // R_i = r pi_i exactly: 3 copies of each point, r = 36
        let counts: Vec<(usize, u32)> = (0..12).map(|i| (i, 3)).collect();
        let draw = SubsampleDraw::from_counts(counts, None).unwrap();
        let scheme = probs_uniform(12).unwrap();
        let fit = fit_weighted(
            &design,
            y.view(),
            &draw,
            &scheme,
            lambda,
            &SubsampleOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        for j in 0..8 {
            assert_abs_diff_eq!(fit.theta[j], full.theta[j], epsilon = 1e-7);
        }
    }

    #[test]
    fn single_point_draw_solves_the_scalar_problem() {
        let rows = Array2::from_elem((5, 1), 1.0);
        let design = DesignMatrix::from_raw(rows, Array2::zeros((1, 1))).unwrap();
        let y = array![2.0, 3.0, 5.0, 7.0, 11.0];
        let scheme = probs_uniform(5).unwrap();
        let draw = SubsampleDraw::from_counts(vec![(2, 4)], None).unwrap();
        let fit = fit_weighted(
            &design,
            y.view(),
            &draw,
            &scheme,
            0.0,
            &SubsampleOptions::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(fit.theta[0], 5.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn weighted_sum_is_unbiased_over_draws() {
        let (design, y) = random_design(17, 25, 8);
        let theta = Array1::from_elem(8, 0.1);
        let scheme = probs_flopt(&design, y.view(), theta.view())
            .unwrap()
            .with_mixing(0.3)
            .unwrap();
        // per-point values g_i: the LPRE summands at theta
        let g: Vec<f64> = (0..25)
            .map(|i| {
                let u = design.rows().row(i).dot(&theta);
                let omega = y[i] * (-u).exp();
                omega + 1.0 / omega - 2.0
            })
            .collect();
        let target: f64 = g.iter().sum();
        let r = 10usize;
        let reps = 800;
        let mut sums = Vec::with_capacity(reps);
        for k in 0..reps {
            let draw = draw_seeded(&scheme, r, derive_seed(42, k as u64)).unwrap();
            let s: f64 = draw
                .counts()
                .iter()
                .map(|&(i, c)| c as f64 / scheme.probs()[i] * g[i])
                .sum();
            sums.push(s / r as f64);
        }
        let m = crate::stats::mean(&sums);
        let se = crate::stats::sd(&sums) / (reps as f64).sqrt();
        assert!(
            (m - target).abs() < 5.0 * se,
            "mean {m} vs target {target} (se {se})"
        );
    }

    #[test]
    fn variance_estimator_reference_cases() {
        // exact fit: V_pi = 0
        let rows = array![[1.0, 0.3, 0.0], [0.2, 0.9, 0.0], [0.5, 0.5, 0.0]];
        let theta3 = array![0.4, -0.2, 0.0];
        let y = rows.dot(&theta3).mapv(f64::exp);
        let basis = make_basis(1, 1, 1).unwrap();
        let design = DesignMatrix::from_parts(rows, penalty_matrix(&basis), basis).unwrap();
        let scheme = probs_uniform(3).unwrap();
        let (v, v_pi) =
            subsample_variance(&design, y.view(), theta3.view(), &scheme, 0.1).unwrap();
        assert!(v_pi.iter().all(|x| x.abs() < 1e-12));
        assert!(v.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn variance_single_point_formula() {
        let basis = make_basis(1, 1, 1).unwrap();
        let rows = array![[0.7, 0.2, 0.1]];
        let design =
            DesignMatrix::from_parts(rows.clone(), penalty_matrix(&basis), basis).unwrap();
        let y = array![2.0];
        let theta = array![0.0, 0.0, 0.0];
        let scheme = probs_uniform(1).unwrap();
        // positive lambda keeps H_hat invertible for the V factor; V_pi itself
        // does not depend on lambda
        let (_, v_pi) =
            subsample_variance(&design, y.view(), theta.view(), &scheme, 0.5).unwrap();
        let s = -2.0 + 0.5;
        for a in 0..3 {
            for b in 0..3 {
                assert_abs_diff_eq!(
                    v_pi[(a, b)],
                    s * s * rows[(0, a)] * rows[(0, b)],
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn flopt_never_exceeds_uniform_on_trace() {
        for seed in [1u64, 2, 3, 4, 5] {
            let (design, y) = random_design(seed, 50, 8);
            let fit = fit_newton(&design, y.view(), 0.01, &NewtonOptions::default()).unwrap();
            let uniform = probs_uniform(50).unwrap();
            let flopt = probs_flopt(&design, y.view(), fit.theta.view()).unwrap();
            let (_, vp_u) =
                subsample_variance(&design, y.view(), fit.theta.view(), &uniform, 0.01).unwrap();
            let tr_u: f64 = (0..8).map(|i| vp_u[(i, i)]).sum();
            let (_, vp_f) =
                subsample_variance(&design, y.view(), fit.theta.view(), &flopt, 0.01).unwrap();
            let tr_f: f64 = (0..8).map(|i| vp_f[(i, i)]).sum();
            assert!(
                tr_f <= tr_u * (1.0 + 1e-12),
                "seed {seed}: tr(FLopt) = {tr_f} > tr(Unif) = {tr_u}"
            );
        }
    }

    #[test]
    fn two_step_is_deterministic_and_validates_r0() {
        let (design, y) = random_design(23, 400, 8);
        let opts = SubsampleOptions::default();
        let kind = SchemeKind::FLopt;
        assert!(two_step_fit(&design, y.view(), kind, 4, 50, &[0.0], 7, &opts).is_err());
        let a =
            two_step_fit(&design, y.view(), kind, 40, 80, &[1e-4, 1e-2, 1.0], 7, &opts).unwrap();
        let b =
            two_step_fit(&design, y.view(), kind, 40, 80, &[1e-4, 1e-2, 1.0], 7, &opts).unwrap();
        assert!(a.converged);
        assert_eq!(a.r0, Some(40));
        assert!(a.pilot_theta.is_some());
        for j in 0..8 {
            assert_abs_diff_eq!(a.theta[j], b.theta[j], epsilon = 0.0);
        }
        assert!(a.bic_path.is_some());
    }

    #[test]
    fn two_step_supports_faopt_and_rejects_uniform() {
        let (design, y) = random_design(29, 400, 8);
        let opts = SubsampleOptions::default();
        let fit = two_step_fit(
            &design,
            y.view(),
            SchemeKind::FAopt,
            40,
            80,
            &[1e-3],
            11,
            &opts,
        )
        .unwrap();
        assert!(fit.converged);
        assert_eq!(fit.kind, SchemeKind::FAopt);
        assert!(two_step_fit(
            &design,
            y.view(),
            SchemeKind::Uniform,
            40,
            80,
            &[1e-3],
            11,
            &opts
        )
        .is_err());
    }
}
