//! Data and model persistence.
//!
//! Functional data travels as long-format CSV with columns `id,t,x`
//! (`t` in [0, 1], UTF-8, header required, `.` decimal separator) joined
//! against a responses CSV with columns `id,y`. Fitted models persist as a
//! JSON document whose coefficient vector round-trips at full precision.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::basis::{make_basis, BasisConfig, FunctionalSample};
use crate::error::{FlpreError, Result};
use crate::lpre::{BetaCurve, FitMethod, FitResult};
use crate::subsample::SubsampleScheme;

/// Parsed functional dataset plus ingestion diagnostics.
#[derive(Debug)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub samples: Vec<FunctionalSample>,
    /// Curves whose grid does not reach both endpoints of [0, 1]; these are
    /// projected with constant extrapolation.
    pub extended_grids: usize,
}

impl Dataset {
    pub fn responses(&self) -> Array1<f64> {
        Array1::from_iter(self.samples.iter().map(|s| s.response()))
    }
}

fn csv_err(line: u64, message: impl Into<String>) -> FlpreError {
    FlpreError::Csv {
        line,
        message: message.into(),
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn check_headers(actual: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let got: Vec<String> = actual.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if got != expected {
        return Err(FlpreError::Data(format!(
            "{}: expected header '{}', found '{}'",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| csv_err(record_line(record), format!("missing column '{name}'")))?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| csv_err(record_line(record), format!("cannot parse {name} from '{raw}'")))
}

/// One curve as parallel (grid, values) vectors, before a response is joined.
pub type RawCurve = (Vec<f64>, Vec<f64>);

/// Read long-format functional observations: one `(id, t, x)` row per point.
///
/// Rows may arrive in any order; points are sorted by `t` within each id and
/// ids keep their order of first appearance.
pub fn read_functional_csv(path: &Path) -> Result<(Vec<String>, Vec<RawCurve>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    check_headers(
        reader
            .headers()
            .map_err(|e| FlpreError::Data(e.to_string()))?,
        &["id", "t", "x"],
        path,
    )?;
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut points: Vec<Vec<(f64, f64)>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            csv_err(e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let id = record
            .get(0)
            .ok_or_else(|| csv_err(record_line(&record), "missing column 'id'"))?
            .trim()
            .to_string();
        let t: f64 = parse_field(&record, 1, "t")?;
        let x: f64 = parse_field(&record, 2, "x")?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            points.push(Vec::new());
            points.len() - 1
        });
        points[slot].push((t, x));
    }
    if order.is_empty() {
        return Err(FlpreError::Data(format!(
            "{}: no observations found",
            path.display()
        )));
    }
    let mut curves = Vec::with_capacity(points.len());
    for (slot, mut pts) in points.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pts.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(FlpreError::Data(format!(
                    "id '{}' has duplicate observation time t = {}",
                    order[slot], w[0].0
                )));
            }
        }
        let (grid, values): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        curves.push((grid, values));
    }
    Ok((order, curves))
}

/// Read responses `id,y` and return them keyed by id.
pub fn read_responses_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    check_headers(
        reader
            .headers()
            .map_err(|e| FlpreError::Data(e.to_string()))?,
        &["id", "y"],
        path,
    )?;
    let mut map = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            csv_err(e.position().map_or(0, |p| p.line()), e.to_string())
        })?;
        let id = record
            .get(0)
            .ok_or_else(|| csv_err(record_line(&record), "missing column 'id'"))?
            .trim()
            .to_string();
        let y: f64 = parse_field(&record, 1, "y")?;
        if map.insert(id.clone(), y).is_some() {
            return Err(csv_err(
                record_line(&record),
                format!("duplicate response for id '{id}'"),
            ));
        }
    }
    Ok(map)
}

/// Read and join the functional and response files into validated samples.
pub fn read_dataset(curves_path: &Path, responses_path: &Path) -> Result<Dataset> {
    let (ids, curves) = read_functional_csv(curves_path)?;
    let responses = read_responses_csv(responses_path)?;
    let mut samples = Vec::with_capacity(ids.len());
    let mut extended = 0usize;
    for (i, (id, (grid, values))) in ids.iter().zip(curves).enumerate() {
        let y = *responses.get(id).ok_or_else(|| {
            FlpreError::Data(format!("no response found for id '{id}'"))
        })?;
        let sample = FunctionalSample::new(grid, values, y).map_err(|e| match e {
            FlpreError::InvalidSample { reason, .. } => FlpreError::InvalidSample {
                index: Some(i),
                reason: format!("id '{id}': {reason}"),
            },
            other => other,
        })?;
        if !sample.covers_domain() {
            extended += 1;
        }
        samples.push(sample);
    }
    Ok(Dataset {
        ids,
        samples,
        extended_grids: extended,
    })
}

/// Write curves sharing one grid in long format.
pub fn write_functional_csv(path: &Path, grid: &[f64], curves: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "t", "x"])
        .map_err(|e| FlpreError::Data(e.to_string()))?;
    for i in 0..curves.nrows() {
        for (g, &t) in grid.iter().enumerate() {
            w.write_record(&[
                i.to_string(),
                format!("{t}"),
                format!("{}", curves[(i, g)]),
            ])
            .map_err(|e| FlpreError::Data(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_responses_csv(path: &Path, responses: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "y"])
        .map_err(|e| FlpreError::Data(e.to_string()))?;
    for (i, y) in responses.iter().enumerate() {
        w.write_record(&[i.to_string(), format!("{y}")])
            .map_err(|e| FlpreError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Persisted model document (version 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub version: u32,
    pub method: String,
    pub degree: usize,
    pub penalty_order: usize,
    pub interior_knots: usize,
    pub knot_vector: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub n: usize,
    pub loss: f64,
}

impl ModelJson {
    pub fn from_fit(fit: &FitResult, basis: &BasisConfig) -> Self {
        Self {
            version: 1,
            method: fit.method.as_str().to_string(),
            degree: basis.degree(),
            penalty_order: basis.penalty_order(),
            interior_knots: basis.interior_knots(),
            knot_vector: basis.knot_vector().to_vec(),
            theta: fit.theta.to_vec(),
            lambda: fit.lambda,
            converged: fit.converged,
            n: fit.n,
            loss: fit.loss,
        }
    }

    /// Rebuild the basis and a minimal fit record, verifying internal
    /// consistency of the stored document.
    pub fn into_fit(self) -> Result<(FitResult, BasisConfig)> {
        let basis = make_basis(self.interior_knots, self.degree, self.penalty_order)?;
        if basis.knot_vector() != self.knot_vector.as_slice() {
            return Err(FlpreError::ModelMismatch {
                expected: format!(
                    "uniform clamped knots for K={}, p={}",
                    self.interior_knots, self.degree
                ),
                found: "a different stored knot vector".to_string(),
            });
        }
        if self.theta.len() != basis.dim() {
            return Err(FlpreError::ModelMismatch {
                expected: format!("{} coefficients", basis.dim()),
                found: format!("{}", self.theta.len()),
            });
        }
        let method = FitMethod::parse(&self.method)?;
        let fit = FitResult {
            method,
            theta: Array1::from_vec(self.theta),
            lambda: self.lambda,
            iterations: 0,
            converged: self.converged,
            final_gradient_norm: f64::NAN,
            loss: self.loss,
            loss_trace: vec![],
            n: self.n,
            g_hat: None,
            h_hat: None,
            v_full: None,
        };
        Ok((fit, basis))
    }
}

pub fn save_model(path: &Path, fit: &FitResult, basis: &BasisConfig) -> Result<()> {
    let doc = ModelJson::from_fit(fit, basis);
    let json = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(FitResult, BasisConfig)> {
    let raw = std::fs::read_to_string(path)?;
    let doc: ModelJson = serde_json::from_str(&raw)?;
    if doc.version != 1 {
        return Err(FlpreError::ModelMismatch {
            expected: "model document version 1".to_string(),
            found: format!("version {}", doc.version),
        });
    }
    doc.into_fit()
}

/// Write a slope curve (and bands, when present) for plotting.
pub fn write_beta_curve_csv(path: &Path, curve: &BetaCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    let with_bands = curve.se.is_some();
    if with_bands {
        w.write_record(["t", "beta", "se", "lower", "upper"])
    } else {
        w.write_record(["t", "beta"])
    }
    .map_err(|e| FlpreError::Data(e.to_string()))?;
    for i in 0..curve.t.len() {
        if with_bands {
            w.write_record(&[
                format!("{}", curve.t[i]),
                format!("{}", curve.beta[i]),
                format!("{}", curve.se.as_ref().unwrap()[i]),
                format!("{}", curve.lower.as_ref().unwrap()[i]),
                format!("{}", curve.upper.as_ref().unwrap()[i]),
            ])
        } else {
            w.write_record(&[format!("{}", curve.t[i]), format!("{}", curve.beta[i])])
        }
        .map_err(|e| FlpreError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Export sampling probabilities for audit as `id,pi`.
pub fn write_scheme_csv(path: &Path, scheme: &SubsampleScheme) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "pi"])
        .map_err(|e| FlpreError::Data(e.to_string()))?;
    for (i, p) in scheme.probs().iter().enumerate() {
        w.write_record(&[i.to_string(), format!("{p}")])
            .map_err(|e| FlpreError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Predictions as `id,y_true,y_pred` (`y_true` empty when unknown).
pub fn write_predictions_csv(
    path: &Path,
    ids: &[String],
    y_true: Option<&[f64]>,
    y_pred: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FlpreError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["id", "y_true", "y_pred"])
        .map_err(|e| FlpreError::Data(e.to_string()))?;
    for (i, id) in ids.iter().enumerate() {
        let truth = y_true.map_or(String::new(), |t| format!("{}", t[i]));
        w.write_record(&[id.clone(), truth, format!("{}", y_pred[i])])
            .map_err(|e| FlpreError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the aggregated results table.
#[derive(Debug, Clone)]
pub struct ResultsRow {
    pub run_id: String,
    pub method: String,
    pub n: usize,
    pub r0: Option<usize>,
    pub r: Option<usize>,
    pub k: usize,
    pub lambda: f64,
    pub imse: Option<f64>,
    pub rpse: Option<f64>,
    pub mape: Option<f64>,
    pub mppe: Option<f64>,
    pub seconds: f64,
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), |x| format!("{x}"))
}

/// Append rows to a results CSV, writing the header only on creation.
pub fn append_results_csv(path: &Path, rows: &[ResultsRow]) -> Result<()> {
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = std::io::BufWriter::new(file);
    if !exists {
        writeln!(
            w,
            "run_id,method,n,r0,r,K,lambda,imse,rpse,mape,mppe,seconds"
        )?;
    }
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.run_id,
            row.method,
            row.n,
            opt_str(&row.r0),
            opt_str(&row.r),
            row.k,
            row.lambda,
            opt_str(&row.imse),
            opt_str(&row.rpse),
            opt_str(&row.mape),
            opt_str(&row.mppe),
            row.seconds
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One per-replication record of a subsampling run.
#[derive(Debug, Clone)]
pub struct SubsampleRunRow {
    pub seed: u64,
    pub method: String,
    pub r0: Option<usize>,
    pub r: usize,
    pub lambda: f64,
    pub imse: Option<f64>,
    pub rpse: Option<f64>,
    pub fit_seconds: f64,
}

pub fn write_subsample_runs_csv(path: &Path, rows: &[SubsampleRunRow]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "seed,method,r0,r,lambda,imse,rpse,fit_seconds")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.seed,
            row.method,
            opt_str(&row.r0),
            row.r,
            row.lambda,
            opt_str(&row.imse),
            opt_str(&row.rpse),
            row.fit_seconds
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpre::NewtonOptions;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn functional_csv_round_trip_with_join() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let yp = dir.path().join("y.csv");
        let grid: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let curves = array![[1.0, 2.0, 3.0, 4.0, 5.0], [0.5, 0.4, 0.3, 0.2, 0.1]];
        write_functional_csv(&xp, &grid, &curves).unwrap();
        write_responses_csv(&yp, &array![2.5, 7.25]).unwrap();
        let ds = read_dataset(&xp, &yp).unwrap();
        assert_eq!(ds.ids, vec!["0", "1"]);
        assert_eq!(ds.extended_grids, 0);
        assert_abs_diff_eq!(ds.samples[0].values()[2], 3.0, epsilon = 0.0);
        assert_abs_diff_eq!(ds.samples[1].response(), 7.25, epsilon = 0.0);
    }

    #[test]
    fn ingestion_errors_carry_context() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let yp = dir.path().join("y.csv");
        std::fs::write(&xp, "id,t,x\n0,0.0,1.0\n0,1.0,not_a_number\n").unwrap();
        std::fs::write(&yp, "id,y\n0,2.0\n").unwrap();
        let err = read_dataset(&xp, &yp).unwrap_err();
        assert!(matches!(err, FlpreError::Csv { line: 3, .. }), "{err}");

        std::fs::write(&xp, "id,t,x\n0,0.0,1.0\n0,1.0,2.0\n1,0.0,1.0\n1,1.0,1.0\n").unwrap();
        let err = read_dataset(&xp, &yp).unwrap_err();
        assert!(err.to_string().contains("id '1'"), "{err}");

        std::fs::write(&xp, "id,time,x\n").unwrap();
        assert!(read_dataset(&xp, &yp).is_err());
    }

    #[test]
    fn nonpositive_response_is_rejected_with_id() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let yp = dir.path().join("y.csv");
        std::fs::write(&xp, "id,t,x\na,0.0,1.0\na,1.0,2.0\n").unwrap();
        std::fs::write(&yp, "id,y\na,-3.0\n").unwrap();
        let err = read_dataset(&xp, &yp).unwrap_err();
        assert!(err.to_string().contains("'a'"), "{err}");
    }

    #[test]
    fn model_json_round_trips_theta_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        // K = 10 puts knots like 1/11 in the file, values a lossy float
        // parser reads back one ulp off
        let basis = make_basis(10, 3, 2).unwrap();
        let theta = Array1::from_shape_fn(basis.dim(), |i| {
            (i as f64 + 1.0) * std::f64::consts::PI / 7.0
        });
        let fit = FitResult {
            method: FitMethod::Flpre,
            theta: theta.clone(),
            lambda: 0.125,
            iterations: 9,
            converged: true,
            final_gradient_norm: 1e-12,
            loss: 3.5,
            loss_trace: vec![],
            n: 100,
            g_hat: None,
            h_hat: None,
            v_full: None,
        };
        save_model(&path, &fit, &basis).unwrap();
        let (loaded, basis2) = load_model(&path).unwrap();
        assert_eq!(basis2.dim(), basis.dim());
        for j in 0..basis.dim() {
            assert_eq!(loaded.theta[j].to_bits(), theta[j].to_bits());
        }
        assert_eq!(loaded.method, FitMethod::Flpre);
        assert_eq!(loaded.n, 100);
    }

    #[test]
    fn results_csv_appends_without_duplicating_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let row = ResultsRow {
            run_id: "a".to_string(),
            method: "FLPRE".to_string(),
            n: 10,
            r0: None,
            r: Some(5),
            k: 4,
            lambda: 0.1,
            imse: Some(0.5),
            rpse: None,
            mape: None,
            mppe: None,
            seconds: 0.01,
        };
        append_results_csv(&path, std::slice::from_ref(&row)).unwrap();
        append_results_csv(&path, &[row]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("run_id,method,n,r0,r,K,lambda"));
        assert!(text.lines().nth(1).unwrap().contains(",,5,"));
    }

    #[test]
    fn full_pipeline_on_csv_files_matches_in_memory_fit() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.csv");
        let yp = dir.path().join("y.csv");
        let cfg = crate::datagen::SimConfig {
            n: 40,
            covariate_law: crate::datagen::CovariateLaw::C1,
            error_law: crate::datagen::ErrorLaw::R1,
            grid_size: 50,
            gen_basis_dim: 10,
            seed: 5,
        };
        let data = crate::datagen::simulate(&cfg).unwrap();
        write_functional_csv(&xp, &data.grid, &data.curves).unwrap();
        write_responses_csv(&yp, &data.responses).unwrap();
        let ds = read_dataset(&xp, &yp).unwrap();
        let basis = make_basis(5, 3, 2).unwrap();
        let from_csv = crate::basis::build_design(&ds.samples, &basis).unwrap();
        let direct =
            crate::basis::build_design_on_grid(&data.grid, data.curves.view(), &basis).unwrap();
        let fit_a = crate::lpre::fit_newton(
            &from_csv,
            ds.responses().view(),
            0.01,
            &NewtonOptions::default(),
        )
        .unwrap();
        let fit_b = crate::lpre::fit_newton(
            &direct,
            data.responses.view(),
            0.01,
            &NewtonOptions::default(),
        )
        .unwrap();
        for j in 0..basis.dim() {
            assert_abs_diff_eq!(fit_a.theta[j], fit_b.theta[j], epsilon = 1e-6);
        }
    }
}
