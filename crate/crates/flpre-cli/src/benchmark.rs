use clap::Args;
use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use flpre::io::{self, ResultsRow};
use flpre::metrics::uniform_grid;
use flpre::subsample::{derive_seed, SchemeKind};
use flpre::{
    build_design_on_grid, make_basis, predict_beta, select_lambda_for_method, two_step_fit,
    uniform_one_shot, CovariateLaw, ErrorLaw, FitMethod, FlpreError, NewtonOptions, Result,
    SimConfig, SubsampleOptions,
};

use crate::config::{resolve_knots, resolve_lambda, FileConfig, LambdaSpec};

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Training sample count
    #[arg(long)]
    n: Option<usize>,
    /// Covariate law: C1, C2 or C3
    #[arg(long)]
    covariate_law: Option<String>,
    /// Error law: R1, R2, R3 or R4
    #[arg(long)]
    error_law: Option<String>,
    /// Test sample count for RPSE
    #[arg(long, default_value_t = 1000)]
    test_n: usize,
    /// Comma-separated subsample sizes
    #[arg(long, value_delimiter = ',')]
    r_list: Vec<usize>,
    /// Pilot subsample size
    #[arg(long)]
    r0: Option<usize>,
    /// Subsampling methods to compare
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("flopt"), String::from("uniform")])]
    kinds: Vec<String>,
    /// Replications per (method, r) cell
    #[arg(long)]
    replications: Option<usize>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Interior knot count (default: ceil(n^{1/4}))
    #[arg(long)]
    knots: Option<usize>,
    /// Knot-count rule; n14 sets K = ceil(n^{1/4})
    #[arg(long)]
    knots_rule: Option<String>,
    /// Fixed smoothing parameter for the full fit (reused by subsamples)
    #[arg(long)]
    lambda: Option<f64>,
    /// Lambda grid for full-data BIC selection
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Blend optimal probabilities with uniform
    #[arg(long)]
    alpha_mix: Option<f64>,
    /// Output directory for results.csv, timing.csv and meta.json
    #[arg(long)]
    output_dir: PathBuf,
    /// Optional JSON config file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedBenchmark {
    command: &'static str,
    n: usize,
    test_n: usize,
    covariate_law: String,
    error_law: String,
    r_list: Vec<usize>,
    r0: usize,
    kinds: Vec<String>,
    replications: usize,
    knots: usize,
    lambda_full: f64,
    alpha_mix: f64,
    seed: u64,
}

struct RepOutcome {
    kind: SchemeKind,
    r: usize,
    rep: usize,
    lambda: f64,
    imse: f64,
    rpse: f64,
    seconds: f64,
}

pub fn run(args: BenchmarkArgs) -> Result<()> {
    let file = FileConfig::load(args.config.as_deref())?;
    let n = args
        .n
        .or(file.n)
        .ok_or_else(|| FlpreError::InvalidInput("--n is required".to_string()))?;
    let covariate_law: CovariateLaw = args
        .covariate_law
        .or(file.covariate_law)
        .ok_or_else(|| FlpreError::InvalidInput("--covariate-law is required".to_string()))?
        .parse()?;
    let error_law: ErrorLaw = args
        .error_law
        .or(file.error_law)
        .ok_or_else(|| FlpreError::InvalidInput("--error-law is required".to_string()))?
        .parse()?;
    let replications = args.replications.or(file.replications).unwrap_or(100);
    if replications == 0 {
        return Err(FlpreError::InvalidInput(
            "--replications must be at least 1".to_string(),
        ));
    }
    if args.r_list.is_empty() {
        return Err(FlpreError::InvalidInput("--r-list is required".to_string()));
    }
    let kinds: Vec<SchemeKind> = args
        .kinds
        .iter()
        .map(|s| SchemeKind::parse(s))
        .collect::<Result<_>>()?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let r0 = args.r0.or(file.r0).unwrap_or(1000);
    let knots = resolve_knots(
        args.knots.or(file.knots),
        args.knots_rule.or(file.knots_rule).as_deref(),
        n,
        flpre::knots_rule_n14(n),
    )?;
    let alpha_mix = args.alpha_mix.or(file.alpha_mix).unwrap_or(0.0);

    std::fs::create_dir_all(&args.output_dir)?;

    // data generation (not timed)
    let train_cfg = SimConfig {
        n,
        covariate_law,
        error_law,
        grid_size: 100,
        gen_basis_dim: 10,
        seed: derive_seed(seed, 1_000_001),
    };
    let test_cfg = SimConfig {
        n: args.test_n,
        seed: derive_seed(seed, 1_000_002),
        ..train_cfg.clone()
    };
    let train = flpre::simulate(&train_cfg)?;
    let test = flpre::simulate(&test_cfg)?;

    let basis = make_basis(knots, 3, 2)?;
    let design = build_design_on_grid(&train.grid, train.curves.view(), &basis)?;
    let responses = &train.responses;

    // full-data fit, timed separately from generation and projection
    let lambda_spec = resolve_lambda(
        args.lambda.or(file.lambda),
        args.lambda_grid.or(file.lambda_grid),
    )?;
    let newton = NewtonOptions::default();
    let full_started = Instant::now();
    let full_fit = match &lambda_spec {
        LambdaSpec::Fixed(l) => flpre::fit_newton(&design, responses.view(), *l, &newton)?,
        LambdaSpec::Grid(g) => {
            select_lambda_for_method(&design, responses.view(), FitMethod::Flpre, g, &newton)?.fit
        }
    };
    let full_seconds = full_started.elapsed().as_secs_f64();
    if !full_fit.converged {
        return Err(FlpreError::NotConverged {
            iterations: full_fit.iterations,
            gradient_norm: full_fit.final_gradient_norm,
        });
    }
    let lambda_full = full_fit.lambda;

    let resolved = ResolvedBenchmark {
        command: "benchmark",
        n,
        test_n: args.test_n,
        covariate_law: covariate_law.to_string(),
        error_law: error_law.to_string(),
        r_list: args.r_list.clone(),
        r0,
        kinds: kinds.iter().map(|k| k.as_str().to_string()).collect(),
        replications,
        knots,
        lambda_full,
        alpha_mix,
        seed,
    };
    println!("{}", serde_json::to_string(&resolved)?);
    std::fs::write(
        args.output_dir.join("meta.json"),
        serde_json::to_string_pretty(&resolved)?,
    )?;

    // reference curves for the metrics
    let grid_1001 = uniform_grid(1001);
    let g1001 = Array1::from_vec(grid_1001.clone());
    let full_curve_fine = predict_beta(&full_fit, &basis, &grid_1001, None)?;
    let full_curve_data = predict_beta(&full_fit, &basis, &train.grid, None)?;
    let data_grid = Array1::from_vec(train.grid.clone());

    let options = SubsampleOptions {
        alpha_mix,
        ..Default::default()
    };

    let jobs: Vec<(SchemeKind, usize, usize)> = kinds
        .iter()
        .flat_map(|&kind| {
            args.r_list
                .iter()
                .flat_map(move |&r| (0..replications).map(move |rep| (kind, r, rep)))
        })
        .collect();

    let outcomes: Vec<Result<RepOutcome>> = jobs
        .par_iter()
        .map(|&(kind, r, rep)| {
            let stream = (rep as u64) << 24 | (r as u64) << 4 | kind as u64;
            let rep_seed = derive_seed(seed, stream);
            let started = Instant::now();
            let fit = match kind {
                SchemeKind::Uniform => {
                    uniform_one_shot(&design, responses.view(), r, lambda_full, rep_seed, &options)?
                }
                _ => two_step_fit(
                    &design,
                    responses.view(),
                    kind,
                    r0,
                    r,
                    &[lambda_full],
                    rep_seed,
                    &options,
                )?,
            };
            let seconds = started.elapsed().as_secs_f64();
            let as_fit = flpre::FitResult {
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
                v_full: None,
            };
            let sub_fine = predict_beta(&as_fit, &basis, &grid_1001, None)?;
            let imse = flpre::imse(sub_fine.beta.view(), full_curve_fine.beta.view(), g1001.view());
            let sub_data = predict_beta(&as_fit, &basis, &train.grid, None)?;
            let rpse = flpre::rpse(
                sub_data.beta.view(),
                full_curve_data.beta.view(),
                data_grid.view(),
                test.curves.view(),
            );
            Ok(RepOutcome {
                kind,
                r,
                rep,
                lambda: fit.lambda,
                imse,
                rpse,
                seconds,
            })
        })
        .collect();
    let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    // per-replication rows
    let mut rows = Vec::with_capacity(outcomes.len() + 1);
    rows.push(ResultsRow {
        run_id: "full".to_string(),
        method: "Full".to_string(),
        n,
        r0: None,
        r: None,
        k: knots,
        lambda: lambda_full,
        imse: Some(0.0),
        rpse: Some(0.0),
        mape: None,
        mppe: None,
        seconds: full_seconds,
    });
    for o in &outcomes {
        rows.push(ResultsRow {
            run_id: format!("{}-r{}-rep{}", o.kind, o.r, o.rep),
            method: o.kind.as_str().to_string(),
            n,
            r0: match o.kind {
                SchemeKind::Uniform => None,
                _ => Some(r0),
            },
            r: Some(o.r),
            k: knots,
            lambda: o.lambda,
            imse: Some(o.imse),
            rpse: Some(o.rpse),
            mape: None,
            mppe: None,
            seconds: o.seconds,
        });
    }
    let results_path = args.output_dir.join("results.csv");
    if results_path.exists() {
        std::fs::remove_file(&results_path)?;
    }
    io::append_results_csv(&results_path, &rows)?;

    // aggregate timing table
    let timing_path = args.output_dir.join("timing.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&timing_path)?);
    writeln!(
        w,
        "method,r,mean_seconds,sd_seconds,mean_imse,mean_rpse,replications"
    )?;
    writeln!(w, "Full,,{full_seconds},,0,0,1")?;
    for &kind in &kinds {
        for &r in &args.r_list {
            let cell: Vec<&RepOutcome> = outcomes
                .iter()
                .filter(|o| o.kind == kind && o.r == r)
                .collect();
            let secs: Vec<f64> = cell.iter().map(|o| o.seconds).collect();
            let imses: Vec<f64> = cell.iter().map(|o| o.imse).collect();
            let rpses: Vec<f64> = cell.iter().map(|o| o.rpse).collect();
            let mean_s = flpre::stats::mean(&secs);
            let sd_s = if secs.len() > 1 {
                flpre::stats::sd(&secs)
            } else {
                0.0
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                kind.as_str(),
                r,
                mean_s,
                sd_s,
                flpre::stats::mean(&imses),
                flpre::stats::mean(&rpses),
                cell.len()
            )?;
            println!(
                "{} r={r}: mean_imse={:.6} mean_rpse={:.6} mean_seconds={:.4} (full fit {:.4}s)",
                kind.as_str(),
                flpre::stats::mean(&imses),
                flpre::stats::mean(&rpses),
                mean_s,
                full_seconds
            );
        }
    }
    w.flush()?;
    Ok(())
}
