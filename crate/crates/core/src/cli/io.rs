//! On-disk formats: dataset CSVs with a JSON metadata file, and metric tables.
//!
//! Reals are written with 17 significant digits so that reading a file back
//! reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::systems::{NoiseSpec, TrajectoryDataset};

pub const META_FILE: &str = "meta.json";

/// Round-trip exact decimal form of a real.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_real(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path, format!("not a number: {s:?}")))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// A CSV file being written. Rows are flushed on [`CsvOut::finish`].
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header).map_err(|e| csv_err(path, e))?;
        Ok(CsvOut {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Header row plus records of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Contents of `meta.json` next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub system: String,
    pub split: String,
    pub n_x: usize,
    pub n_t: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

fn state_header(prefix: &[&str], n_x: usize) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n_x).map(|d| format!("x{d}")))
        .collect()
}

fn write_snapshots(path: &Path, m: &Matrix, n_steps: usize, step_offset: usize) -> Result<()> {
    let header = state_header(&["trajectory", "step"], m.nrows());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for c in 0..m.ncols() {
        let mut row = vec![(c / n_steps).to_string(), (c % n_steps + step_offset).to_string()];
        row.extend(m.column(c).iter().map(|&v| fmt_real(v)));
        out.row(row)?;
    }
    out.finish()
}

/// Writes `X0.csv`, `X.csv`, `XPlus.csv` and `meta.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &TrajectoryDataset, meta: &DatasetMeta) -> Result<()> {
    ensure_dir(dir)?;
    let header = state_header(&["trajectory"], data.n_x);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let path = dir.join("X0.csv");
    let mut out = CsvOut::create(&path, &header)?;
    for j in 0..data.n_t {
        let mut row = vec![j.to_string()];
        row.extend(data.x0.column(j).iter().map(|&v| fmt_real(v)));
        out.row(row)?;
    }
    out.finish()?;
    write_snapshots(&dir.join("X.csv"), &data.x, data.n_steps, 0)?;
    write_snapshots(&dir.join("XPlus.csv"), &data.x_plus, data.n_steps, 1)?;
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_states(path: &Path, n_prefix: usize, n_x: usize, expect_rows: usize) -> Result<Matrix> {
    let (header, rows) = read_csv(path)?;
    if header.len() != n_prefix + n_x {
        return Err(Error::format(path, format!("expected {} columns, found {}", n_prefix + n_x, header.len())));
    }
    if rows.len() != expect_rows {
        return Err(Error::format(path, format!("expected {expect_rows} rows, found {}", rows.len())));
    }
    let mut m = Matrix::zeros(n_x, rows.len());
    for (c, row) in rows.iter().enumerate() {
        for d in 0..n_x {
            m[(d, c)] = parse_real(&row[n_prefix + d], path)?;
        }
    }
    Ok(m)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Reads a dataset written by [`write_dataset`] and checks its invariants.
pub fn read_dataset(dir: &Path) -> Result<(TrajectoryDataset, DatasetMeta)> {
    let meta = read_meta(dir)?;
    let m = meta.n_t * meta.n_steps;
    let x0 = read_states(&dir.join("X0.csv"), 1, meta.n_x, meta.n_t)?;
    let x = read_states(&dir.join("X.csv"), 2, meta.n_x, m)?;
    let x_plus = read_states(&dir.join("XPlus.csv"), 2, meta.n_x, m)?;
    let data = TrajectoryDataset {
        x0,
        x,
        x_plus,
        n_x: meta.n_x,
        n_t: meta.n_t,
        n_steps: meta.n_steps,
    };
    data.validate()
        .map_err(|e| Error::format(dir, format!("dataset invariants violated: {e}")))?;
    Ok((data, meta))
}

/// Per-step mean and standard deviation of one rollout.
pub fn write_rollout_band(
    out: &mut CsvOut,
    prefix: &[String],
    truth: &[Vector],
    means: &[Vector],
    sds: Option<&[Vector]>,
) -> Result<()> {
    for (k, (t, m)) in truth.iter().zip(means).enumerate() {
        for d in 0..t.len() {
            let mut row = prefix.to_vec();
            row.push(k.to_string());
            row.push((d + 1).to_string());
            row.push(fmt_real(t[d]));
            row.push(fmt_real(m[d]));
            row.push(sds.map_or(String::new(), |s| fmt_real(s[k][d])));
            out.row(row)?;
        }
    }
    Ok(())
}
