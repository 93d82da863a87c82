use clap::Args;
use ndarray::Array1;
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

use flpre::io::{self, ResultsRow};
use flpre::metrics::uniform_grid;
use flpre::{
    build_design, make_basis, predict_beta, select_lambda_for_method, FitMethod, FitResult,
    FlpreError, NewtonOptions, Result,
};

use crate::config::{resolve_knots, resolve_lambda, FileConfig, LambdaSpec};

#[derive(Args)]
pub struct FitArgs {
    /// Functional data CSV (long format: id,t,x)
    #[arg(long)]
    input: PathBuf,
    /// Responses CSV (id,y)
    #[arg(long)]
    responses: PathBuf,
    /// Output model JSON path
    #[arg(long)]
    output: PathBuf,
    /// Estimator: FLPRE, FLS or FLAD
    #[arg(long)]
    method: Option<String>,
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
    /// Fixed smoothing parameter
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated lambda grid for BIC selection
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Add a 1e-10 ridge to the Newton Hessian (rank-deficient designs)
    #[arg(long)]
    jitter: bool,
    /// Write the fitted slope curve on a 1001-point grid
    #[arg(long)]
    beta_out: Option<PathBuf>,
    /// Confidence level for pointwise slope bands in --beta-out
    #[arg(long)]
    band_level: Option<f64>,
    /// Compare the fitted slope against the built-in reference slope and
    /// report IMSE
    #[arg(long)]
    true_beta: bool,
    /// Append a metric row to this results CSV
    #[arg(long)]
    results: Option<PathBuf>,
    /// Row identifier used in --results
    #[arg(long)]
    run_id: Option<String>,
    /// Optional JSON config file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedFit {
    command: &'static str,
    input: String,
    responses: String,
    output: String,
    method: String,
    knots: usize,
    degree: usize,
    penalty_order: usize,
    lambda: Option<f64>,
    lambda_grid: Option<Vec<f64>>,
    jitter: bool,
}

pub fn run(args: FitArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let method = FitMethod::parse(
        &args
            .method
            .or(file.method)
            .unwrap_or_else(|| "FLPRE".to_string()),
    )?;
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
        10,
    )?;
    let degree = args.degree.or(file.degree).unwrap_or(3);
    let penalty_order = args.penalty_order.or(file.penalty_order).unwrap_or(2);
    let lambda_spec = resolve_lambda(
        args.lambda.or(file.lambda),
        args.lambda_grid.or(file.lambda_grid),
    )?;

    let resolved = ResolvedFit {
        command: "fit",
        input: args.input.display().to_string(),
        responses: args.responses.display().to_string(),
        output: args.output.display().to_string(),
        method: method.as_str().to_string(),
        knots,
        degree,
        penalty_order,
        lambda: match &lambda_spec {
            LambdaSpec::Fixed(l) => Some(*l),
            LambdaSpec::Grid(_) => None,
        },
        lambda_grid: match &lambda_spec {
            LambdaSpec::Fixed(_) => None,
            LambdaSpec::Grid(g) => Some(g.clone()),
        },
        jitter: args.jitter,
    };
    println!("{}", serde_json::to_string(&resolved)?);
    let meta_path = args.output.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&resolved)?)?;

    let basis = make_basis(knots, degree, penalty_order)?;
    let design = build_design(&dataset.samples, &basis)?;
    let responses = dataset.responses();
    let newton = NewtonOptions {
        hessian_jitter: args.jitter.then_some(1e-10),
        ..Default::default()
    };

    let started = Instant::now();
    let fit: FitResult = match &lambda_spec {
        LambdaSpec::Fixed(lambda) => match method {
            FitMethod::Flpre => flpre::fit_newton(&design, responses.view(), *lambda, &newton)?,
            FitMethod::Fls => flpre::fit_fls(&design, responses.view(), *lambda)?,
            FitMethod::Flad => flpre::fit_flad(&design, responses.view(), *lambda)?,
        },
        LambdaSpec::Grid(grid) => {
            select_lambda_for_method(&design, responses.view(), method, grid, &newton)?.fit
        }
    };
    let seconds = started.elapsed().as_secs_f64();

    io::save_model(&args.output, &fit, &basis)?;
    println!(
        "method={} n={} K={} lambda={:.6e} converged={} iterations={} gradient_norm={:.3e} loss={:.6} seconds={:.3}",
        fit.method,
        fit.n,
        knots,
        fit.lambda,
        fit.converged,
        fit.iterations,
        fit.final_gradient_norm,
        fit.loss,
        seconds
    );

    let grid_1001 = uniform_grid(1001);
    if let Some(path) = &args.beta_out {
        let band = if fit.v_full.is_some() {
            args.band_level
        } else {
            None
        };
        let curve = predict_beta(&fit, &basis, &grid_1001, band)?;
        io::write_beta_curve_csv(path, &curve)?;
    }

    let imse_true = if args.true_beta {
        let curve = predict_beta(&fit, &basis, &grid_1001, None)?;
        let truth = Array1::from_iter(grid_1001.iter().map(|&t| flpre::true_beta(t)));
        let g = Array1::from_vec(grid_1001.clone());
        let v = flpre::imse(curve.beta.view(), truth.view(), g.view());
        println!("imse_vs_true_beta={v:.6}");
        Some(v)
    } else {
        None
    };

    if let Some(path) = &args.results {
        let row = ResultsRow {
            run_id: args.run_id.clone().unwrap_or_else(|| "fit".to_string()),
            method: fit.method.as_str().to_string(),
            n: fit.n,
            r0: None,
            r: None,
            k: knots,
            lambda: fit.lambda,
            imse: imse_true,
            rpse: None,
            mape: None,
            mppe: None,
            seconds,
        };
        io::append_results_csv(path, &[row])?;
    }

    if !fit.converged {
        return Err(FlpreError::NotConverged {
            iterations: fit.iterations,
            gradient_norm: fit.final_gradient_norm,
        });
    }
    Ok(())
}
