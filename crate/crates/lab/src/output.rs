//! Output files: CSV tables and JSON documents that carry the full run
//! configuration in their header, exact hex-float trace dumps, and atomic
//! writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use catapult_core::trace::{from_hex_float, to_hex_float, TraceMeta, TraceRecord};
use catapult_core::TrainTrace;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const SCHEMA_VERSION: &str = "catapult-lab/1";

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LabError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| LabError::io(path, e))?;
    tmp.persist(path).map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

/// Shortest decimal that round-trips (exponent form for very small or large
/// magnitudes); `NaN`, `inf`, `-inf` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table whose first lines are `#` comments holding the schema version
/// and the run configuration as one-line JSON.
pub fn csv_bytes<C: Serialize>(config: &C, header: &[&str], rows: &[Vec<String>]) -> LabResult<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "# schema: {SCHEMA_VERSION}").expect("write to Vec");
    writeln!(out, "# config: {}", serde_json::to_string(config)?).expect("write to Vec");
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| LabError::io("<csv buffer>", e.into_error()))
}

#[derive(Serialize)]
struct Document<'a, C, T> {
    schema: &'a str,
    config: &'a C,
    result: &'a T,
}

/// Pretty-printed `{schema, config, result}`. Non-finite numbers become `null`.
pub fn json_bytes<C: Serialize, T: Serialize>(config: &C, result: &T) -> LabResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&Document {
        schema: SCHEMA_VERSION,
        config,
        result,
    })?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexRecord {
    pub step: u64,
    pub loss: String,
    pub lambda: Option<String>,
    pub aux: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexMeta {
    pub eta: String,
    pub seed: u64,
    pub model: String,
    pub lambda0: String,
}

/// A trace with every float written as an exact hex-float literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexTrace {
    pub schema: String,
    pub config: serde_json::Value,
    pub meta: HexMeta,
    pub aux_names: Vec<String>,
    pub diverged: bool,
    pub records: Vec<HexRecord>,
}

impl HexTrace {
    pub fn new<C: Serialize>(config: &C, trace: &TrainTrace) -> LabResult<Self> {
        Ok(Self {
            schema: SCHEMA_VERSION.into(),
            config: serde_json::to_value(config)?,
            meta: HexMeta {
                eta: to_hex_float(trace.meta.eta),
                seed: trace.meta.seed,
                model: trace.meta.model.clone(),
                lambda0: to_hex_float(trace.meta.lambda0),
            },
            aux_names: trace.aux_names.clone(),
            diverged: trace.diverged,
            records: trace
                .records
                .iter()
                .map(|r| HexRecord {
                    step: r.step,
                    loss: to_hex_float(r.loss),
                    lambda: r.lambda.map(to_hex_float),
                    aux: r.aux.iter().copied().map(to_hex_float).collect(),
                })
                .collect(),
        })
    }

    pub fn to_trace(&self) -> LabResult<TrainTrace> {
        let f = |s: &str| from_hex_float(s).map_err(LabError::from);
        Ok(TrainTrace {
            meta: TraceMeta {
                eta: f(&self.meta.eta)?,
                seed: self.meta.seed,
                model: self.meta.model.clone(),
                lambda0: f(&self.meta.lambda0)?,
            },
            aux_names: self.aux_names.clone(),
            diverged: self.diverged,
            records: self
                .records
                .iter()
                .map(|r| {
                    Ok(TraceRecord {
                        step: r.step,
                        loss: f(&r.loss)?,
                        lambda: r.lambda.as_deref().map(f).transpose()?,
                        aux: r.aux.iter().map(|a| f(a)).collect::<LabResult<_>>()?,
                    })
                })
                .collect::<LabResult<_>>()?,
        })
    }
}

/// Trace as CSV: `step,loss,lambda,<aux...>`. The eigenvalue column is
/// left empty on steps where it was not measured or not selected by `eig_every`.
pub fn trace_csv<C: Serialize>(config: &C, trace: &TrainTrace, eig_every: u64) -> LabResult<Vec<u8>> {
    let mut header = vec!["step", "loss", "lambda"];
    header.extend(trace.aux_names.iter().map(String::as_str));
    let keep = |step: u64| eig_every > 0 && step % eig_every == 0;
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.step.to_string(),
                fmt_f64(r.loss),
                fmt_opt(r.lambda.filter(|_| keep(r.step))),
            ];
            row.extend(r.aux.iter().map(|a| fmt_f64(*a)));
            row
        })
        .collect();
    csv_bytes(config, &header, &rows)
}

/// Collects written file names for the stdout summary.
#[derive(Debug, Default)]
pub struct Written(pub Vec<PathBuf>);

impl Written {
    pub fn write(&mut self, path: PathBuf, bytes: &[u8]) -> LabResult<()> {
        write_atomic(&path, bytes)?;
        self.0.push(path);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|p| p.display().to_string()).collect()
    }
}
