//! CSV and JSON persistence.
//!
//! File conventions: traces as `t_us,re,im,intensity`, histograms as
//! `t_us,counts`, depth profiles as `nu_mhz,depth`, population maps as
//! `detuning_mhz,p_12g,p_32g,p_52g`. All frequencies are ordinary
//! frequencies in MHz and all times in us. Writes go through a temp file
//! and an atomic rename.

use crate::comb::OpticalDepthProfile;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::prep::IonEnsemble;
use crate::propagation::{CountHistogram, FieldTrace};
use num_complex::Complex64;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.to_path_buf();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Validation(format!("not a file path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    tmp.set_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialise any report as pretty JSON (stable field order, no timestamps,
/// so identical runs produce identical bytes).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serialising {}: {e}", path.display())))?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

pub fn write_trace_csv(path: &Path, trace: &FieldTrace) -> Result<()> {
    let mut out = String::from("t_us,re,im,intensity\n");
    for (i, s) in trace.samples.iter().enumerate() {
        let t = trace.grid.time_us(i);
        out.push_str(&format!("{t},{},{},{}\n", s.re, s.im, s.norm_sqr()));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_trace_csv(path: &Path) -> Result<FieldTrace> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse(format!("{}: missing column {i}", path.display())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        times.push(field(0)?);
        samples.push(Complex64::new(field(1)?, field(2)?));
    }
    if samples.len() < 2 || !samples.len().is_power_of_two() {
        return Err(Error::Parse(format!(
            "{}: traces need a power-of-two sample count, got {}",
            path.display(),
            samples.len()
        )));
    }
    let dt = times[1] - times[0];
    let grid = TimeGrid::new(dt * samples.len() as f64, samples.len())?;
    Ok(FieldTrace { grid, samples })
}

pub fn write_histogram_csv(path: &Path, histogram: &CountHistogram) -> Result<()> {
    let mut out = String::from("t_us,counts\n");
    for (t, c) in histogram.t_us.iter().zip(&histogram.counts) {
        out.push_str(&format!("{t},{c}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_profile_csv(path: &Path, profile: &OpticalDepthProfile) -> Result<()> {
    let mut out = String::from("nu_mhz,depth\n");
    for (k, d) in profile.depth.iter().enumerate() {
        out.push_str(&format!("{},{d}\n", profile.grid.frequency_mhz(k)));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_populations_csv(path: &Path, ensemble: &IonEnsemble) -> Result<()> {
    let mut out = String::from("detuning_mhz,p_12g,p_32g,p_52g\n");
    for (k, p) in ensemble.populations.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", ensemble.detuning_mhz(k), p[0], p[1], p[2]));
    }
    write_atomic(path, out.as_bytes())
}

/// Read aligned numeric columns from a headed CSV file.
pub fn read_columns(path: &Path, columns: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();
    let indices: Vec<usize> = columns
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Parse(format!("{}: missing column '{name}'", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); columns.len()];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        for (slot, &idx) in out.iter_mut().zip(&indices) {
            let value = record
                .get(idx)
                .ok_or_else(|| Error::Parse(format!("{}: short row", path.display())))?;
            slot.push(
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{}: '{value}': {e}", path.display())))?,
            );
        }
    }
    Ok(out)
}
