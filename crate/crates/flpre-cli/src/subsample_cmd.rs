use clap::Args;
use ndarray::Array1;
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

use flpre::io::{self, SubsampleRunRow};
use flpre::metrics::uniform_grid;
use flpre::subsample::SchemeKind;
use flpre::{
    build_design, make_basis, predict_beta, two_step_fit, uniform_one_shot, FitMethod, FitResult,
    FlpreError, Result, SubsampleOptions,
};

use crate::config::{resolve_knots, resolve_lambda, FileConfig, LambdaSpec};

#[derive(Args)]
pub struct SubsampleArgs {
    /// Functional data CSV (long format: id,t,x)
    #[arg(long)]
    input: PathBuf,
    /// Responses CSV (id,y)
    #[arg(long)]
    responses: PathBuf,
    /// Output model JSON path
    #[arg(long)]
    output: PathBuf,
    /// Sampling probabilities: uniform, FLopt or FAopt
    #[arg(long)]
    subsample_kind: Option<String>,
    /// Pilot subsample size (two-step methods)
    #[arg(long)]
    r0: Option<usize>,
    /// Main subsample size
    #[arg(long)]
    r: Option<usize>,
    /// Blend optimal probabilities with uniform: (1-a) pi + a/n
    #[arg(long)]
    alpha_mix: Option<f64>,
    /// Fixed smoothing parameter
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated lambda grid for subsample BIC selection
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Full-data model JSON to measure IMSE/RPSE against
    #[arg(long)]
    full_model: Option<PathBuf>,
    /// Measure IMSE against the built-in reference slope instead
    #[arg(long)]
    true_beta: bool,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Interior knot count
    #[arg(long)]
    knots: Option<usize>,
    /// Knot-count rule; n14 sets K = ceil(n^{1/4})
    #[arg(long)]
    knots_rule: Option<String>,
    /// Spline degree
    #[arg(long)]
    degree: Option<usize>,
    /// Derivative order of the roughness penalty
    #[arg(long)]
    penalty_order: Option<usize>,
    /// Append the per-run record to this CSV
    #[arg(long)]
    runs_out: Option<PathBuf>,
    /// Export the sampling probabilities for audit (id,pi)
    #[arg(long)]
    scheme_out: Option<PathBuf>,
    /// Optional JSON config file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedSubsample {
    command: &'static str,
    input: String,
    responses: String,
    output: String,
    subsample_kind: String,
    r0: Option<usize>,
    r: usize,
    alpha_mix: f64,
    lambda: Option<f64>,
    lambda_grid: Option<Vec<f64>>,
    knots: usize,
    degree: usize,
    penalty_order: usize,
    seed: u64,
}

pub fn run(args: SubsampleArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let kind = SchemeKind::parse(
        &args
            .subsample_kind
            .or(file.subsample_kind)
            .unwrap_or_else(|| "flopt".to_string()),
    )?;
    let r = args
        .r
        .or(file.r)
        .ok_or_else(|| FlpreError::InvalidInput("--r is required".to_string()))?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let alpha_mix = args.alpha_mix.or(file.alpha_mix).unwrap_or(0.0);

    let dataset = io::read_dataset(&args.input, &args.responses)?;
    if dataset.extended_grids > 0 {
        eprintln!(
            "warning: {} curve(s) do not reach both endpoints of [0,1]; \
             extrapolating them as constants",
            dataset.extended_grids
        );
    }
    let n = dataset.samples.len();
    let knots = resolve_knots(
        args.knots.or(file.knots),
        args.knots_rule.or(file.knots_rule).as_deref(),
        n,
        flpre::knots_rule_n14(n),
    )?;
    let degree = args.degree.or(file.degree).unwrap_or(3);
    let penalty_order = args.penalty_order.or(file.penalty_order).unwrap_or(2);
    let basis = make_basis(knots, degree, penalty_order)?;
    let r0 = args.r0.or(file.r0);
    let lambda_spec = resolve_lambda(
        args.lambda.or(file.lambda),
        args.lambda_grid.or(file.lambda_grid),
    )?;

    let resolved = ResolvedSubsample {
        command: "subsample",
        input: args.input.display().to_string(),
        responses: args.responses.display().to_string(),
        output: args.output.display().to_string(),
        subsample_kind: kind.as_str().to_string(),
        r0,
        r,
        alpha_mix,
        lambda: match &lambda_spec {
            LambdaSpec::Fixed(l) => Some(*l),
            LambdaSpec::Grid(_) => None,
        },
        lambda_grid: match &lambda_spec {
            LambdaSpec::Fixed(_) => None,
            LambdaSpec::Grid(g) => Some(g.clone()),
        },
        knots,
        degree,
        penalty_order,
        seed,
    };
    println!("{}", serde_json::to_string(&resolved)?);
    let meta_path = args.output.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&resolved)?)?;

    let design = build_design(&dataset.samples, &basis)?;
    let responses = dataset.responses();
    let options = SubsampleOptions {
        alpha_mix,
        ..Default::default()
    };

    let started = Instant::now();
    let fit = match kind {
        SchemeKind::Uniform => {
            let lambda = match &lambda_spec {
                LambdaSpec::Fixed(l) => *l,
                LambdaSpec::Grid(_) => {
                    return Err(FlpreError::InvalidInput(
                        "one-shot uniform subsampling needs a fixed --lambda".to_string(),
                    ))
                }
            };
            uniform_one_shot(&design, responses.view(), r, lambda, seed, &options)?
        }
        SchemeKind::FLopt | SchemeKind::FAopt => {
            let r0 = r0.ok_or_else(|| {
                FlpreError::InvalidInput("--r0 is required for two-step methods".to_string())
            })?;
            let grid = match &lambda_spec {
                LambdaSpec::Fixed(l) => vec![*l],
                LambdaSpec::Grid(g) => g.clone(),
            };
            two_step_fit(&design, responses.view(), kind, r0, r, &grid, seed, &options)?
        }
    };
    let fit_seconds = started.elapsed().as_secs_f64();

    if let Some(path) = &args.scheme_out {
        // re-derive the scheme actually used so the export matches the draw
        let theta_ref: Option<&Array1<f64>> = fit.pilot_theta.as_ref();
        let scheme = match (kind, theta_ref) {
            (SchemeKind::Uniform, _) => flpre::probs_uniform(n)?,
            (SchemeKind::FLopt, Some(t)) => {
                flpre::probs_flopt(&design, responses.view(), t.view())?
                    .with_mixing(alpha_mix.max(0.0))?
            }
            (SchemeKind::FAopt, Some(t)) => {
                let (_, h) = flpre::lpre::sandwich_matrices(&design, responses.view(), t.view(), 0.0)?;
                flpre::probs_faopt(&design, responses.view(), t.view(), h.view())?
                    .with_mixing(alpha_mix.max(0.0))?
            }
            (_, None) => flpre::probs_uniform(n)?,
        };
        io::write_scheme_csv(path, &scheme)?;
    }

    // persist as a model document so predict can consume it
    let as_fit = FitResult {
        method: FitMethod::Flpre,
        theta: fit.theta.clone(),
        lambda: fit.lambda,
        iterations: fit.iterations,
        converged: fit.converged,
        final_gradient_norm: fit.final_gradient_norm,
        loss: fit.loss,
        loss_trace: vec![],
        n,
        g_hat: None,
        h_hat: None,
        v_full: fit.v.clone(),
    };
    io::save_model(&args.output, &as_fit, &basis)?;

    // IMSE of the subsample slope against the requested reference
    let grid_1001 = uniform_grid(1001);
    let curve = predict_beta(&as_fit, &basis, &grid_1001, None)?;
    let g = Array1::from_vec(grid_1001.clone());
    let imse = if let Some(full_path) = &args.full_model {
        let (full_fit, full_basis) = io::load_model(full_path)?;
        let full_curve = predict_beta(&full_fit, &full_basis, &grid_1001, None)?;
        Some(flpre::imse(curve.beta.view(), full_curve.beta.view(), g.view()))
    } else if args.true_beta {
        let truth = Array1::from_iter(grid_1001.iter().map(|&t| flpre::true_beta(t)));
        Some(flpre::imse(curve.beta.view(), truth.view(), g.view()))
    } else {
        None
    };

    println!(
        "kind={} r0={:?} r={} lambda={:.6e} converged={} imse={:?} seconds={:.3}",
        kind, fit.r0, fit.r, fit.lambda, fit.converged, imse, fit_seconds
    );

    if let Some(path) = &args.runs_out {
        let row = SubsampleRunRow {
            seed,
            method: kind.as_str().to_string(),
            r0: fit.r0,
            r: fit.r,
            lambda: fit.lambda,
            imse,
            rpse: None,
            fit_seconds,
        };
        io::write_subsample_runs_csv(path, &[row])?;
    }

    if !fit.converged {
        return Err(FlpreError::NotConverged {
            iterations: fit.iterations,
            gradient_norm: fit.final_gradient_norm,
        });
    }
    Ok(())
}
