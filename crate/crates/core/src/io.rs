//! File formats: data CSV, ground-truth JSON and the run record.
//!
//! Data CSV: one observation per line, `d` explicative values followed by
//! `y`, comma separated. Lines starting with `#` are skipped.
//!
//! Indices in JSON files are 1-based; everything in memory is 0-based.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::GroundTruth;
use crate::error::{LtsError, Result};
use crate::regress::Dataset;
use crate::solver::{Mode, SolveReport, SolverConfig, NEVER};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = concat!("lts ", env!("CARGO_PKG_VERSION"));

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LtsError::Parse(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| LtsError::Parse(format!("line {line}: '{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(LtsError::Parse(format!("line {line}: need at least one feature and a response")));
        }
        if let Some(first) = rows.first() {
            if first.len() + 1 != values.len() {
                return Err(LtsError::Parse(format!(
                    "line {line}: expected {} fields, found {}",
                    first.len() + 1,
                    values.len()
                )));
            }
        }
        let (features, resp) = values.split_at(values.len() - 1);
        rows.push(features.to_vec());
        y.push(resp[0]);
    }
    if rows.is_empty() {
        return Err(LtsError::Parse("no observations".into()));
    }
    Dataset::from_rows(&rows, y).map_err(|e| LtsError::Parse(e.to_string()))
}

pub fn read_csv(path: &std::path::Path) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Shortest round-trip representation, with a `#` header.
pub fn write_csv(data: &Dataset) -> String {
    let d = data.d();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())).collect();
    let mut out = format!("# {}\n", header.join(","));
    for i in 0..data.n() {
        for j in 0..d {
            write!(out, "{:?},", data.x()[(i, j)]).unwrap();
        }
        writeln!(out, "{:?}", data.y()[i]).unwrap();
    }
    out
}

/// SHA-256 over `n`, `d` and the row-major little-endian bits of `[X y]`.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.n() as u64).to_le_bytes());
    h.update((data.d() as u64).to_le_bytes());
    let xy = DMatrix::from_fn(data.n(), data.d() + 1, |i, j| if j < data.d() { data.x()[(i, j)] } else { data.y()[i] });
    for i in 0..data.n() {
        for v in xy.row(i).iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    #[serde(with = "sig17::vec")]
    beta_true: Vec<f64>,
    outliers: Vec<usize>,
}

pub fn write_truth(truth: &GroundTruth) -> String {
    let file =
        TruthFile { beta_true: truth.beta_true.clone(), outliers: truth.outliers.iter().map(|i| i + 1).collect() };
    serde_json::to_string_pretty(&file).expect("truth serializes") + "\n"
}

pub fn parse_truth(text: &str) -> Result<GroundTruth> {
    let file: TruthFile = serde_json::from_str(text).map_err(|e| LtsError::Parse(e.to_string()))?;
    let outliers = file
        .outliers
        .iter()
        .map(|&i| i.checked_sub(1).ok_or_else(|| LtsError::Parse("outlier indices are 1-based".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth { beta_true: file.beta_true, outliers })
}

/// Resolved solver settings as run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: Mode,
    pub h: usize,
    #[serde(with = "sig17::scalar")]
    pub q: f64,
    /// `null` when relaxations are disabled.
    pub socp_leaf_threshold: Option<u64>,
    pub socp_max_depth: usize,
    #[serde(with = "sig17::scalar")]
    pub tol_relax: f64,
    #[serde(with = "sig17::scalar")]
    pub tol_pi: f64,
    pub unsafe_inconsistent_prune: bool,
    pub local_search: bool,
    pub max_cstep_iter: usize,
}

impl ConfigEcho {
    pub fn resolve(cfg: &SolverConfig, n: usize, d: usize) -> Self {
        Self {
            mode: cfg.mode,
            h: cfg.coverage(n, d),
            q: cfg.mass(d),
            socp_leaf_threshold: (cfg.socp_leaf_threshold != NEVER).then_some(cfg.socp_leaf_threshold),
            socp_max_depth: cfg.socp_max_depth.unwrap_or(d),
            tol_relax: cfg.tol_relax,
            tol_pi: cfg.tol_pi,
            unsafe_inconsistent_prune: cfg.unsafe_inconsistent_prune,
            local_search: cfg.local_search,
            max_cstep_iter: cfg.max_cstep_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub nodes_visited: u64,
    pub leaves_visited: u64,
    pub monotone_prunes: u64,
    pub socp_calls: u64,
    pub socp_prunes: u64,
    pub inconsistent_relaxations: u64,
    pub unconverged_relaxations: u64,
    pub incumbent_updates: u64,
}

/// Machine-readable outcome of one fit. Floats carry 17 significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub dataset_digest: String,
    pub n: usize,
    pub d: usize,
    pub config: ConfigEcho,
    #[serde(with = "sig17::vec")]
    pub beta: Vec<f64>,
    /// 1-based, ascending.
    pub subset: Vec<usize>,
    #[serde(with = "sig17::scalar")]
    pub objective: f64,
    #[serde(with = "sig17::option")]
    pub pi: Option<f64>,
    pub statistics: Statistics,
    #[serde(with = "sig17::scalar")]
    pub elapsed_secs: f64,
}

impl RunRecord {
    pub fn new(data: &Dataset, cfg: &SolverConfig, report: &SolveReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            dataset_digest: dataset_digest(data),
            n: data.n(),
            d: data.d(),
            config: ConfigEcho::resolve(cfg, data.n(), data.d()),
            beta: report.beta.iter().copied().collect(),
            subset: report.subset.iter().map(|i| i + 1).collect(),
            objective: report.objective,
            pi: report.pi,
            statistics: Statistics {
                nodes_visited: report.nodes_visited,
                leaves_visited: report.leaves_visited,
                monotone_prunes: report.monotone_prunes,
                socp_calls: report.socp_calls,
                socp_prunes: report.socp_prunes,
                inconsistent_relaxations: report.inconsistent_relaxations,
                unconverged_relaxations: report.unconverged_relaxations,
                incumbent_updates: report.incumbent_updates,
            },
            elapsed_secs: report.elapsed.as_secs_f64(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite record serializes")
    }
}

pub fn parse_run_record(text: &str) -> Result<RunRecord> {
    let rec: RunRecord = serde_json::from_str(text).map_err(|e| LtsError::Parse(e.to_string()))?;
    if rec.schema_version != SCHEMA_VERSION {
        return Err(LtsError::Parse(format!("unsupported schema version {}", rec.schema_version)));
    }
    Ok(rec)
}

/// Serde helpers writing floats as `d.dddddddddddddddde±x`.
mod sig17 {
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    fn raw(x: f64) -> Result<Box<RawValue>, String> {
        if !x.is_finite() {
            return Err(format!("non-finite value {x}"));
        }
        RawValue::from_string(format!("{x:.16e}")).map_err(|e| e.to_string())
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
            raw(*x).map_err(S::Error::custom)?.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            f64::deserialize(d)
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let raws = xs.iter().map(|&x| raw(x)).collect::<Result<Vec<_>, _>>().map_err(S::Error::custom)?;
            raws.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<f64>::deserialize(d)
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            x.map(raw).transpose().map_err(S::Error::custom)?.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<f64>::deserialize(d)
        }
    }
}
