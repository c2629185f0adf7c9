//! Frame, parameter and feature files.
//!
//! A frame is a CSV file with header `t_ms,amplitude` next to a JSON sidecar
//! of the same stem holding its metadata. Numbers are written in the shortest
//! decimal form that parses back to the identical `f64`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MemgError, Result};
use crate::features::FeatureRecord;
use crate::model::{EchoParams, Frame, ParamSet};
use crate::staged::FitResult;

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub fs_khz: f64,
    pub frame_index: usize,
    #[serde(default)]
    pub blind_zone_samples: usize,
    /// Operating frequency of the transducer, when known.
    #[serde(default)]
    pub f_e_khz: Option<f64>,
}

impl FrameMeta {
    pub fn for_frame(frame: &Frame) -> Self {
        FrameMeta {
            fs_khz: frame.fs_khz(),
            frame_index: frame.frame_index,
            blind_zone_samples: 0,
            f_e_khz: None,
        }
    }
}

/// A frame read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFile {
    pub path: PathBuf,
    pub frame: Frame,
    pub meta: FrameMeta,
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    t_ms: f64,
    amplitude: f64,
}

/// Path of the metadata sidecar for a frame CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| MemgError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| MemgError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| MemgError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> MemgError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MemgError::io(path, io),
        kind => MemgError::format(path, line, format!("{kind:?}")),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| MemgError::io(path, e))?;
    w.flush().map_err(|e| MemgError::io(path, e))
}

/// Writes the `t_ms,amplitude` rows of `frame`.
pub fn write_samples_to<W: Write>(frame: &Frame, out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (i, amplitude) in frame.samples.iter().enumerate() {
        w.serialize(SampleRow {
            t_ms: i as f64 * frame.dt,
            amplitude: *amplitude,
        })?;
    }
    if frame.is_empty() {
        w.write_record(["t_ms", "amplitude"])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `frame` to `csv` and its sidecar.
pub fn write_frame(frame: &Frame, meta: &FrameMeta, csv: &Path) -> Result<()> {
    write_samples_to(frame, create(csv)?).map_err(|e| csv_error(csv, e))?;
    write_json(meta, &sidecar_path(csv))
}

/// Reads one frame CSV and its sidecar. The time column must be strictly
/// increasing; the sampling period comes from the sidecar.
pub fn read_frame(csv: &Path) -> Result<FrameFile> {
    let side = sidecar_path(csv);
    if !side.is_file() {
        return Err(MemgError::format(csv, 0, format!("missing metadata {}", side.display())));
    }
    let meta: FrameMeta = serde_json::from_reader(open(&side)?)
        .map_err(|e| MemgError::format(&side, e.line(), e.to_string()))?;
    if !(meta.fs_khz > 0.0) || !meta.fs_khz.is_finite() {
        return Err(MemgError::format(&side, 0, format!("fs_khz must be > 0, got {}", meta.fs_khz)));
    }

    let mut r = csv::Reader::from_reader(open(csv)?);
    let header = r.headers().map_err(|e| csv_error(csv, e))?;
    if header.iter().collect::<Vec<_>>() != ["t_ms", "amplitude"] {
        return Err(MemgError::format(csv, 1, "expected header t_ms,amplitude"));
    }
    let mut samples = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for row in r.deserialize::<SampleRow>() {
        let row = row.map_err(|e| csv_error(csv, e))?;
        let line = samples.len() + 2;
        if !row.t_ms.is_finite() || !row.amplitude.is_finite() {
            return Err(MemgError::format(csv, line, "non-finite value"));
        }
        if row.t_ms <= last_t {
            return Err(MemgError::format(csv, line, "time axis is not increasing"));
        }
        last_t = row.t_ms;
        samples.push(row.amplitude);
    }
    Ok(FrameFile {
        path: csv.to_path_buf(),
        frame: Frame::from_rate(samples, meta.fs_khz, meta.frame_index),
        meta,
    })
}

/// Reads a frame CSV, or every `*.csv` in a directory, sorted by frame index.
pub fn read_frames(path: &Path) -> Result<Vec<FrameFile>> {
    let mut files = if path.is_dir() {
        let mut csvs: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| MemgError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
            .collect();
        csvs.sort();
        csvs.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?
    } else {
        vec![read_frame(path)?]
    };
    files.sort_by(|a, b| a.meta.frame_index.cmp(&b.meta.frame_index).then(a.path.cmp(&b.path)));
    Ok(files)
}

/// Writes each frame as `frame_NNNN.csv` in `dir`.
pub fn write_frames(frames: &[(Frame, FrameMeta)], dir: &Path) -> Result<Vec<PathBuf>> {
    frames
        .iter()
        .map(|(f, m)| {
            let p = dir.join(format!("frame_{:04}.csv", m.frame_index));
            write_frame(f, m, &p).map(|_| p)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub alpha: f64,
    pub mu: f64,
    pub sigma: f64,
    pub eta: f64,
    pub freq: f64,
    pub phase: f64,
    pub confidence: Option<f64>,
}

impl ComponentParams {
    pub fn params(&self) -> EchoParams {
        EchoParams::new(self.alpha, self.mu, self.sigma, self.eta, self.freq, self.phase)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_index: usize,
    pub oscillating: bool,
    pub degraded: bool,
    pub frame_confidence: Option<f64>,
    /// Best loss of each stage, `None` for a stage that could not run.
    pub stage_losses: Vec<Option<f64>>,
    pub components: Vec<ComponentParams>,
}

impl From<&FitResult> for FrameParams {
    fn from(fit: &FitResult) -> Self {
        FrameParams {
            frame_index: fit.params.frame_index,
            oscillating: fit.oscillating,
            degraded: fit.degraded,
            frame_confidence: fit.frame_confidence,
            stage_losses: fit.stage_losses(),
            components: fit
                .params
                .components
                .iter()
                .zip(&fit.component_confidences)
                .map(|(p, c)| ComponentParams {
                    alpha: p.alpha,
                    mu: p.mu,
                    sigma: p.sigma,
                    eta: p.eta,
                    freq: p.freq,
                    phase: p.phase,
                    confidence: *c,
                })
                .collect(),
        }
    }
}

impl FrameParams {
    pub fn param_set(&self) -> ParamSet {
        ParamSet::new(
            self.components.iter().map(ComponentParams::params).collect(),
            self.frame_index,
        )
    }

    /// A fit result carrying these parameters, enough to reconstruct.
    pub fn to_fit(&self) -> FitResult {
        FitResult {
            params: self.param_set(),
            initial: self.param_set(),
            stages: vec![],
            oscillating: self.oscillating,
            frame_confidence: self.frame_confidence,
            component_confidences: self.components.iter().map(|c| c.confidence).collect(),
            degraded: self.degraded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub schema_version: u32,
    pub frames: Vec<FrameParams>,
}

impl ParamsDocument {
    pub fn new(fits: &[FitResult]) -> Self {
        ParamsDocument {
            schema_version: PARAMS_SCHEMA_VERSION,
            frames: fits.iter().map(FrameParams::from).collect(),
        }
    }
}

pub fn params_to_string(fits: &[FitResult]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ParamsDocument::new(fits))? + "\n")
}

pub fn write_params(fits: &[FitResult], path: &Path) -> Result<()> {
    write_json(&ParamsDocument::new(fits), path)
}

/// Parses a parameter document, requiring `schema_version == expected`.
pub fn parse_params(text: &str, expected: u32) -> Result<ParamsDocument> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| MemgError::InvalidInput("document has no schema_version".into()))?;
    if found != u64::from(expected) {
        return Err(MemgError::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn read_params(path: &Path) -> Result<ParamsDocument> {
    read_params_version(path, PARAMS_SCHEMA_VERSION)
}

pub fn read_params_version(path: &Path, expected: u32) -> Result<ParamsDocument> {
    let text = fs::read_to_string(path).map_err(|e| MemgError::io(path, e))?;
    parse_params(&text, expected).map_err(|e| match e {
        MemgError::Json(j) => MemgError::format(path, j.line(), j.to_string()),
        MemgError::InvalidInput(m) => MemgError::format(path, 0, m),
        e => e,
    })
}

/// Header of feature CSV files.
pub const FEATURE_HEADER: [&str; 10] = [
    "frame", "k", "alpha", "mu", "sigma", "eta", "freq", "phase", "conf", "label",
];

pub fn write_features_to<W: Write>(records: &[FeatureRecord], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(FEATURE_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features(records: &[FeatureRecord], path: &Path) -> Result<()> {
    write_features_to(records, create(path)?).map_err(|e| csv_error(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>() != FEATURE_HEADER {
        return Err(MemgError::format(path, 1, format!("expected header {}", FEATURE_HEADER.join(","))));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}
