//! File formats: headerless CSV matrices and the JSON manifest.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{validate_manifest, Manifest, ManifestError, ModelDrawMatrix};

/// On-disk manifest, paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSpec {
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_model_probs: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    /// Observed outcomes, one per data point; needed for stacking of means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub loglik: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_mean: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_marginal: Option<f64>,
}

fn io_err(path: &Path, source: std::io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> ManifestError {
    ManifestError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Parses a headerless numeric CSV from any reader. Every row must have the
/// same number of columns.
pub fn parse_matrix<R: Read>(reader: R, origin: &Path) -> Result<Array2<f64>, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| parse_err(origin, e.to_string()))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    origin,
                    format!("row {row} has {} columns, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(origin, format!("row {row}, column {col}: {field:?} is not a number"))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| parse_err(origin, e.to_string()))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>, ManifestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_matrix(file, path)
}

/// Writes a matrix as headerless CSV using shortest round-trip float formatting.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), ManifestError> {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a headerless single-column or single-row CSV as a vector.
pub fn read_vector(path: &Path) -> Result<Vec<f64>, ManifestError> {
    let m = read_matrix(path)?;
    if m.nrows() != 1 && m.ncols() != 1 {
        return Err(parse_err(path, "expected a single row or column"));
    }
    Ok(m.iter().copied().collect())
}

/// Loads and validates a manifest file along with every matrix it names.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    Ok(load_manifest_with_y(path)?.0)
}

/// Like [`load_manifest`], also reading the optional observed outcomes.
pub fn load_manifest_with_y(path: &Path) -> Result<(Manifest, Option<Vec<f64>>), ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let spec: ManifestSpec =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = manifest_from_spec(&spec, base)?;
    let y = match &spec.y {
        None => None,
        Some(rel) => {
            let y_path = base.join(rel);
            let y = read_vector(&y_path)?;
            if y.len() != manifest.n {
                return Err(ManifestError::DimensionMismatch {
                    model: "y".into(),
                    expected: manifest.n,
                    found: y.len(),
                });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(parse_err(&y_path, format!("non-finite observation at point {i}")));
            }
            Some(y)
        }
    };
    Ok((manifest, y))
}

pub fn manifest_from_spec(spec: &ManifestSpec, base: &Path) -> Result<Manifest, ManifestError> {
    let mut models = Vec::with_capacity(spec.models.len());
    for entry in &spec.models {
        let loglik = read_matrix(&base.join(&entry.loglik))?;
        let mut model = ModelDrawMatrix::new(entry.id.clone(), loglik);
        if let Some(p) = &entry.pred_mean {
            model = model.with_pred_mean(read_matrix(&base.join(p))?);
        }
        model.log_marginal = entry.log_marginal;
        models.push(model);
    }
    validate_manifest(Manifest {
        models,
        n: 0,
        k: 0,
        seed: spec.seed,
        prior_model_probs: spec.prior_model_probs.clone(),
    })
}

/// Writes every matrix next to `path` and the manifest JSON itself.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<ManifestSpec, ManifestError> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::with_capacity(manifest.k);
    for (idx, model) in manifest.models.iter().enumerate() {
        let loglik = PathBuf::from(format!("model{idx}_loglik.csv"));
        write_matrix(&base.join(&loglik), &model.loglik)?;
        let pred_mean = match &model.pred_mean {
            Some(pm) => {
                let p = PathBuf::from(format!("model{idx}_pred_mean.csv"));
                write_matrix(&base.join(&p), pm)?;
                Some(p)
            }
            None => None,
        };
        entries.push(ModelEntry {
            id: model.model_id.clone(),
            loglik,
            pred_mean,
            log_marginal: model.log_marginal,
        });
    }
    let spec = ManifestSpec {
        models: entries,
        prior_model_probs: manifest.prior_model_probs.clone(),
        seed: manifest.seed,
        y: None,
    };
    let json = serde_json::to_string_pretty(&spec).expect("manifest spec serializes");
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(json.as_bytes()).map_err(|e| io_err(path, e))?;
    Ok(spec)
}
