//! Result files: JSON reports and CSV tables with exactly round-tripping
//! floats.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::experiment::RunResult;
use crate::sparsify::CurvePoint;

pub const METRICS_HEADER: [&str; 5] = ["method", "seed", "n_views", "psnr", "ssim"];
pub const SPARSIFICATION_HEADER: [&str; 3] = ["method", "decile", "cum_psnr"];

/// Scientific notation with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub n_views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn from_run(label: impl Into<String>, r: &RunResult) -> Self {
        MetricsRow {
            method: label.into(),
            seed: r.seed,
            n_views: r.n_views,
            psnr: r.psnr,
            ssim: r.ssim,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("result types serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv(
        path,
        &METRICS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                r.seed.to_string(),
                r.n_views.to_string(),
                format_float(r.psnr),
                format_float(r.ssim),
            ]
        }),
    )
}

pub fn write_sparsification_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_csv(
        path,
        &SPARSIFICATION_HEADER,
        points
            .iter()
            .map(|p| vec![p.method.clone(), p.decile.to_string(), format_float(p.cum_psnr)]),
    )
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field.parse().map_err(|_| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad field {field:?}")),
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(MetricsRow {
                method: rec[0].to_string(),
                seed: parse(path, &rec[1])?,
                n_views: parse(path, &rec[2])?,
                psnr: parse(path, &rec[3])?,
                ssim: parse(path, &rec[4])?,
            })
        })
        .collect()
}

pub fn read_sparsification_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(path))?;
            Ok(CurvePoint {
                method: rec[0].to_string(),
                decile: parse(path, &rec[1])?,
                cum_psnr: parse(path, &rec[2])?,
            })
        })
        .collect()
}
