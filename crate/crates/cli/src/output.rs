//! Files written by an experiment: metric tables, PGM snapshots, summaries.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use inferential_control::controller::ClosedLoopTrace;
use inferential_control::dynamics::BurgersField;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub rmse: f64,
    pub control_norm: f64,
    pub wall_ms: f64,
}

/// One row per applied control, numbered from 1. `wall_ms` is zero unless
/// `record_wall_time`.
pub fn metric_rows(trace: &ClosedLoopTrace, record_wall_time: bool) -> Vec<MetricRow> {
    trace
        .steps
        .iter()
        .map(|s| MetricRow {
            step: s.step + 1,
            rmse: s.rmse,
            control_norm: s.control_norm,
            wall_ms: if record_wall_time { s.wall_seconds * 1e3 } else { 0.0 },
        })
        .collect()
}

/// Writes `rows` with a header row, even when there are none.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    write_csv(path, &["step", "rmse", "control_norm", "wall_ms"], rows)
}

/// Value range used to quantise one snapshot image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleRow {
    pub step: usize,
    pub channel: &'static str,
    pub min: f64,
    pub max: f64,
}

/// 8-bit binary PGM, rows top to bottom, values mapped affinely from
/// `[min, max]` onto `[0, 255]`. A constant field maps to 0.
pub fn write_pgm(path: &Path, field: &DMatrix<f64>) -> Result<(f64, f64), CliError> {
    let min = field.min();
    let max = field.max();
    let span = max - min;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", field.ncols(), field.nrows())?;
    let mut bytes = Vec::with_capacity(field.len());
    for r in 0..field.nrows() {
        for c in 0..field.ncols() {
            let v = if span > 0.0 { (field[(r, c)] - min) / span * 255.0 } else { 0.0 };
            bytes.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok((min, max))
}

/// Inverse of [`write_pgm`] given the recorded range.
pub fn read_pgm(path: &Path, min: f64, max: f64) -> Result<DMatrix<f64>, CliError> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    let bad = || CliError::Runtime(format!("{} is not an 8-bit P5 image", path.display()));
    // header: magic, width, height, maxval, each followed by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    if fields[0] != "P5" || fields[3] != "255" || data.len() < pos + width * height {
        return Err(bad());
    }
    let pixels = &data[pos..pos + width * height];
    Ok(DMatrix::from_fn(height, width, |r, c| {
        min + pixels[r * width + c] as f64 / 255.0 * (max - min)
    }))
}

/// `phi_x_<step>.pgm` and `phi_y_<step>.pgm` for every kept snapshot, plus
/// their ranges in `scale.csv`.
pub fn write_snapshots(dir: &Path, trace: &ClosedLoopTrace) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut scales = Vec::new();
    let initial = std::iter::once((0, &trace.initial_state));
    let kept = trace
        .steps
        .iter()
        .filter_map(|s| s.snapshot.as_ref().map(|x| (s.step + 1, x)));
    for (step, packed) in initial.chain(kept) {
        let field = BurgersField::from_packed(packed.clone())?;
        for (channel, data) in [("phi_x", field.phi_x()), ("phi_y", field.phi_y())] {
            let (min, max) = write_pgm(&dir.join(format!("{channel}_{step}.pgm")), &data)?;
            scales.push(ScaleRow { step, channel, min, max });
        }
    }
    write_csv(&dir.join("scale.csv"), &["step", "channel", "min", "max"], &scales)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let field = DMatrix::from_fn(5, 7, |r, c| (r as f64 * 0.3 - c as f64 * 0.11).sin() * 2.5);
        let (min, max) = write_pgm(&path, &field).unwrap();
        let back = read_pgm(&path, min, max).unwrap();
        assert!((back - &field).amax() <= (max - min) / 255.0);
    }

    #[test]
    fn constant_field_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let (min, max) = write_pgm(&path, &DMatrix::from_element(3, 3, 4.0)).unwrap();
        assert_eq!((min, max), (4.0, 4.0));
        assert_eq!(read_pgm(&path, min, max).unwrap(), DMatrix::from_element(3, 3, 4.0));
    }
}
