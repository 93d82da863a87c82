use clap::Args;
use serde::Serialize;
use std::path::PathBuf;

use flpre::{simulate, CovariateLaw, ErrorLaw, FlpreError, Result, SimConfig};

use crate::config::FileConfig;

#[derive(Args)]
pub struct SimulateArgs {
    /// Number of samples
    #[arg(long)]
    n: Option<usize>,
    /// Covariate law: C1, C2 or C3
    #[arg(long)]
    covariate_law: Option<String>,
    /// Error law: R1, R2, R3 or R4
    #[arg(long)]
    error_law: Option<String>,
    /// Observation grid size
    #[arg(long)]
    grid_size: Option<usize>,
    /// Number of generator basis coefficients
    #[arg(long)]
    gen_basis_dim: Option<usize>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for functional.csv, responses.csv and meta.json
    #[arg(long)]
    output_dir: PathBuf,
    /// Optional JSON config file (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResolvedSimulate<'a> {
    command: &'a str,
    #[serde(flatten)]
    sim: &'a SimConfig,
    output_dir: String,
}

pub fn run(args: SimulateArgs) -> Result<()> {
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
    let config = SimConfig {
        n,
        covariate_law,
        error_law,
        grid_size: args.grid_size.or(file.grid_size).unwrap_or(100),
        gen_basis_dim: args.gen_basis_dim.or(file.gen_basis_dim).unwrap_or(10),
        seed: args.seed.or(file.seed).unwrap_or(0),
    };
    config.validate()?;
    std::fs::create_dir_all(&args.output_dir)?;
    let resolved = ResolvedSimulate {
        command: "simulate",
        sim: &config,
        output_dir: args.output_dir.display().to_string(),
    };
    println!("{}", serde_json::to_string(&resolved)?);

    let data = simulate(&config)?;
    flpre::io::write_functional_csv(
        &args.output_dir.join("functional.csv"),
        &data.grid,
        &data.curves,
    )?;
    flpre::io::write_responses_csv(&args.output_dir.join("responses.csv"), &data.responses)?;
    let meta = serde_json::to_string_pretty(&config)?;
    std::fs::write(args.output_dir.join("meta.json"), meta)?;
    println!(
        "wrote {} samples on a {}-point grid to {}",
        config.n,
        config.grid_size,
        args.output_dir.display()
    );
    Ok(())
}
