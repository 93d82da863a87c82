use clap::Args;
use serde::Serialize;
use std::path::PathBuf;

use flpre::io;
use flpre::{mape_mppe, predict_response, FlpreError, FunctionalSample, Result};

#[derive(Args)]
pub struct PredictArgs {
    /// Saved model JSON
    #[arg(long)]
    model: PathBuf,
    /// Functional data CSV with the curves to predict (long format: id,t,x)
    #[arg(long)]
    input: PathBuf,
    /// Optional responses CSV; enables MAPE/MPPE reporting
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Output predictions CSV (id, y_true, y_pred)
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct ResolvedPredict {
    command: &'static str,
    model: String,
    input: String,
    responses: Option<String>,
    output: String,
}

pub fn run(args: PredictArgs) -> Result<()> {
    let resolved = ResolvedPredict {
        command: "predict",
        model: args.model.display().to_string(),
        input: args.input.display().to_string(),
        responses: args.responses.as_ref().map(|p| p.display().to_string()),
        output: args.output.display().to_string(),
    };
    println!("{}", serde_json::to_string(&resolved)?);

    let (fit, basis) = io::load_model(&args.model)?;
    let (ids, curves) = io::read_functional_csv(&args.input)?;
    let truth: Option<Vec<f64>> = match &args.responses {
        None => None,
        Some(path) => {
            let map = io::read_responses_csv(path)?;
            let mut out = Vec::with_capacity(ids.len());
            for id in &ids {
                let y = *map.get(id).ok_or_else(|| {
                    FlpreError::Data(format!("no response found for id '{id}'"))
                })?;
                out.push(y);
            }
            Some(out)
        }
    };

    let mut preds = Vec::with_capacity(ids.len());
    let mut extended = 0usize;
    for (i, (grid, values)) in curves.into_iter().enumerate() {
        // prediction needs no response; a placeholder satisfies validation
        let sample = FunctionalSample::new(grid, values, 1.0).map_err(|e| match e {
            FlpreError::InvalidSample { reason, .. } => FlpreError::InvalidSample {
                index: Some(i),
                reason: format!("id '{}': {reason}", ids[i]),
            },
            other => other,
        })?;
        if !sample.covers_domain() {
            extended += 1;
        }
        preds.push(predict_response(&fit, &basis, &sample)?);
    }
    if extended > 0 {
        eprintln!(
            "warning: {extended} curve(s) do not reach both endpoints of [0,1]; \
             extrapolating them as constants"
        );
    }

    io::write_predictions_csv(&args.output, &ids, truth.as_deref(), &preds)?;
    if let Some(y_true) = &truth {
        let (mape, mppe) = mape_mppe(y_true, &preds)?;
        println!("n_test={} mape={mape:.6} mppe={mppe:.6}", ids.len());
    } else {
        println!("n_test={} (no responses given; metrics skipped)", ids.len());
    }
    Ok(())
}
