//! Optional JSON config file; precedence is flags > config file > defaults.

use serde::Deserialize;
use std::path::Path;

use flpre::{FlpreError, Result};

/// Partial settings loadable from `--config`; any field a command does not
/// use is simply ignored by that command.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub n: Option<usize>,
    pub covariate_law: Option<String>,
    pub error_law: Option<String>,
    pub grid_size: Option<usize>,
    pub gen_basis_dim: Option<usize>,
    pub seed: Option<u64>,
    pub knots: Option<usize>,
    pub knots_rule: Option<String>,
    pub degree: Option<usize>,
    pub penalty_order: Option<usize>,
    pub method: Option<String>,
    pub lambda: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub subsample_kind: Option<String>,
    pub r0: Option<usize>,
    pub r: Option<usize>,
    pub alpha_mix: Option<f64>,
    pub replications: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let raw = std::fs::read_to_string(p)?;
                serde_json::from_str(&raw).map_err(|e| {
                    FlpreError::InvalidInput(format!("config file {}: {e}", p.display()))
                })
            }
        }
    }
}

/// Resolve the basis size: an explicit knot count or the n^{1/4} rule, which
/// are mutually exclusive.
pub fn resolve_knots(
    knots: Option<usize>,
    rule: Option<&str>,
    n: usize,
    default_k: usize,
) -> Result<usize> {
    match (knots, rule) {
        (Some(_), Some(_)) => Err(FlpreError::InvalidInput(
            "--knots and --knots-rule are mutually exclusive".to_string(),
        )),
        (Some(k), None) => Ok(k),
        (None, Some(rule)) => {
            if rule != "n14" {
                return Err(FlpreError::InvalidInput(format!(
                    "unknown knots rule '{rule}' (expected n14)"
                )));
            }
            Ok(flpre::knots_rule_n14(n))
        }
        (None, None) => Ok(default_k),
    }
}

/// Resolve the lambda settings to either a fixed value or a selection grid.
pub fn resolve_lambda(lambda: Option<f64>, grid: Option<Vec<f64>>) -> Result<LambdaSpec> {
    match (lambda, grid) {
        (Some(_), Some(_)) => Err(FlpreError::InvalidInput(
            "--lambda and --lambda-grid are mutually exclusive".to_string(),
        )),
        (Some(l), None) => Ok(LambdaSpec::Fixed(l)),
        (None, Some(g)) => Ok(LambdaSpec::Grid(g)),
        (None, None) => Ok(LambdaSpec::Grid(flpre::default_lambda_grid())),
    }
}

#[derive(Debug, Clone)]
pub enum LambdaSpec {
    Fixed(f64),
    Grid(Vec<f64>),
}
