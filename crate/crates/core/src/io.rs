//! On-disk formats: dataset directories, EM traces, final parameters.
//!
//! Matrices are headerless CSV, one matrix row per line, column `k` = time `k+1`.
//! Floats use Rust's shortest round-trip formatting so reads are exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::{EmTrace, IterRecord, Termination};
use crate::error::{Error, Result};
use crate::model::{Dataset, SimConfig, SystemModel, Theta};

pub const MODEL_FILE: &str = "model.json";
pub const Y_FILE: &str = "Y.csv";
pub const X_FILE: &str = "X.csv";
pub const U_FILE: &str = "U.csv";
pub const ZSTAR_FILE: &str = "zstar.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const THETA_FILE: &str = "theta_final.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

pub const TRACE_HEADER: &str =
    "iter,L,Q_next,Q_self,grad_inf_norm,gamma_change,z_hamming_change,wall_ms";

/// Serde adapter storing a matrix as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, reason: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))
}

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &format_matrix_csv(m))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(file))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in csv_reader(path)?.records() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>().map_err(|e| parse_err(path, e)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn format_z_csv(z: &[u8]) -> String {
    let cells: Vec<String> = z.iter().map(|v| v.to_string()).collect();
    format!("{}\n", cells.join(","))
}

pub fn read_z_csv(path: &Path) -> Result<Vec<u8>> {
    let text = read_text(path)?;
    let line = text.lines().next().unwrap_or("");
    line.split(',')
        .filter(|c| !c.trim().is_empty())
        .map(|c| match c.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(parse_err(path, format!("expected 0 or 1, got {other:?}"))),
        })
        .collect()
}

/// Contents of `model.json` in a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub model: SystemModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    pub seed: u64,
    pub version: String,
}

pub fn save_dataset(
    dir: &Path,
    model: &SystemModel,
    sim: Option<&SimConfig>,
    ds: &Dataset,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = DatasetManifest {
        model: model.clone(),
        sim: sim.cloned(),
        seed: ds.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_json(&dir.join(MODEL_FILE), &manifest)?;
    write_matrix_csv(&dir.join(Y_FILE), &ds.y)?;
    write_matrix_csv(&dir.join(X_FILE), &ds.x)?;
    write_matrix_csv(&dir.join(U_FILE), &ds.u)?;
    write_text(&dir.join(ZSTAR_FILE), &format_z_csv(&ds.zstar))
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest: DatasetManifest = read_json(&dir.join(MODEL_FILE))?;
    manifest.model.validate()?;
    let ds = Dataset {
        y: read_matrix_csv(&dir.join(Y_FILE))?,
        x: read_matrix_csv(&dir.join(X_FILE))?,
        u: read_matrix_csv(&dir.join(U_FILE))?,
        zstar: read_z_csv(&dir.join(ZSTAR_FILE))?,
        seed: manifest.seed,
    };
    let m = &manifest.model;
    let expect = |what: &'static str, mat: &DMatrix<f64>, rows: usize| {
        if mat.shape() != (rows, m.k) {
            Err(Error::mismatch(
                what,
                format!("{rows}x{}", m.k),
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ))
        } else {
            Ok(())
        }
    };
    expect("Y", &ds.y, m.m)?;
    expect("X", &ds.x, m.n)?;
    expect("U", &ds.u, m.n)?;
    if ds.zstar.len() != m.k {
        return Err(Error::mismatch("zstar", m.k, ds.zstar.len()));
    }
    Ok((manifest, ds))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_trace_csv(trace: &EmTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.log_likelihood,
            opt_cell(r.q_next),
            opt_cell(r.q_self),
            r.grad_inf_norm,
            r.gamma_change,
            r.z_hamming_change,
            r.wall_ms
        ));
    }
    out
}

/// `trace.csv` without the wall-time column, for byte-level reproducibility checks.
pub fn format_trace_csv_numeric(trace: &EmTrace) -> String {
    format_trace_csv(trace)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Contents of `theta_final.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFinal {
    pub gamma: Vec<f64>,
    pub z: Vec<u8>,
    pub termination: Termination,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl ThetaFinal {
    pub fn from_trace(trace: &EmTrace) -> Self {
        ThetaFinal {
            gamma: trace.theta_final.gamma.clone(),
            z: trace.theta_final.z.clone(),
            termination: trace.termination,
            log_likelihood: trace.final_log_likelihood,
            iterations: trace.records.len(),
        }
    }

    pub fn theta(&self) -> Theta {
        Theta::new(self.gamma.clone(), self.z.clone())
    }
}

pub fn save_trace(dir: &Path, trace: &EmTrace) -> Result<()> {
    write_text(&dir.join(TRACE_FILE), &format_trace_csv(trace))?;
    write_json(&dir.join(THETA_FILE), &ThetaFinal::from_trace(trace))
}

/// Rebuilds a trace from `trace.csv` and `theta_final.json`; iterates are not stored on disk.
pub fn load_trace(dir: &Path) -> Result<EmTrace> {
    let path: PathBuf = dir.join(TRACE_FILE);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| parse_err(&path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(parse_err(&path, "unexpected trace header"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(&path, e));
    let opt = |s: &str| {
        if s.trim().is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let int = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(&path, e));
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(&path, e))?;
        records.push(IterRecord {
            iter: int(&rec[0])?,
            theta: None,
            log_likelihood: num(&rec[1])?,
            q_next: opt(&rec[2])?,
            q_self: opt(&rec[3])?,
            grad_inf_norm: num(&rec[4])?,
            gamma_change: num(&rec[5])?,
            z_hamming_change: int(&rec[6])?,
            wall_ms: num(&rec[7])?,
        });
    }
    let fin: ThetaFinal = read_json(&dir.join(THETA_FILE))?;
    Ok(EmTrace {
        records,
        termination: fin.termination,
        theta_final: fin.theta(),
        final_log_likelihood: fin.log_likelihood,
    })
}

/// Flushes one CSV line per row; used for oracle tables and sweep summaries.
pub fn write_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    let mut body = String::with_capacity(rows.len() * 32 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(io_err(path))
}
