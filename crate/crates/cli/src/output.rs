//! Files written into a run directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bcgan::data::pixel_byte;
use bcgan::eval::EvalReport;
use bcgan::trainer::EpochSummary;
use bcgan::Matrix;

use crate::error::{CliError, Result};

pub const METRICS_HEADER: &str =
    "epoch,iter,total_d,total_g,mmd,test_error_pct,mean_pred_variance,mode_coverage,eta";

pub const LOCK_FILE: &str = ".bcgan.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: dir.to_path_buf(),
                lock: path,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One row per completed epoch, flushed as it is written so a diverged run
/// keeps everything up to the failure.
pub struct MetricsCsv {
    out: BufWriter<File>,
    last_epoch: usize,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(MetricsCsv { out, last_epoch: 0 })
    }

    pub fn write(&mut self, summary: &EpochSummary, report: &EvalReport) -> std::io::Result<()> {
        assert!(summary.epoch > self.last_epoch, "metrics rows must have increasing epochs");
        self.last_epoch = summary.epoch;
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{}",
            summary.epoch,
            summary.iteration,
            summary.losses.total_d,
            summary.losses.total_g,
            report.mmd_real_fake,
            report.test_error_pct,
            report.mean_pred_variance,
            report.mode_coverage,
            summary.eta
        )?;
        self.out.flush()
    }
}

pub fn eval_line(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.epoch, r.test_error_pct, r.mmd_real_fake, r.mean_pred_variance, r.mode_coverage
    )
}

pub const EVAL_HEADER: &str = "epoch,test_error_pct,mmd_real_fake,mean_pred_variance,mode_coverage";

pub fn write_samples_csv(path: &Path, x: &Matrix, labels: &[usize]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "x0,x1,label")?;
    for (row, label) in x.iter_rows().zip(labels) {
        writeln!(out, "{},{},{}", row[0], row[1], label)?;
    }
    out.flush()
}

/// Square images when the pixel count is a perfect square, otherwise a single row.
pub fn image_shape(dim: usize) -> (usize, usize) {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        (side, side)
    } else {
        (dim, 1)
    }
}

/// Binary greymap (`P5`, maxval 255), pixels `round(255·v)` with halves up.
pub fn pgm_bytes(pixels: &[f64], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count does not match the image shape");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| pixel_byte(v)));
    out
}
