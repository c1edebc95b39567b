//! Run directory layout: `config.snapshot`, `steps.csv`, `metrics.csv`,
//! `summary.json`, `final_params.bin`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use fastgan_core::autodiff::Tensor;
use fastgan_core::trainers::{MetricsRow, RunRecord, RunStatus, StepReport};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const PARAMS_MAGIC: [u8; 4] = *b"FGPB";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub discriminator_seconds: f64,
    pub generator_seconds: f64,
    pub metrics_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpaces {
    pub fid: String,
    pub classifier_score: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: RunStatus,
    pub seed: u64,
    pub problem: String,
    pub trainer: String,
    pub loss: String,
    pub iterations_completed: usize,
    pub final_metrics: Option<MetricsRow>,
    pub best_fid: Option<f64>,
    pub feature_space: FeatureSpaces,
    pub failure: Option<StepReport>,
    pub wall_clock: WallClock,
}

/// The config spelling of a unit enum variant.
fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, record: &RunRecord, total_seconds: f64) -> Self {
        Self {
            status: record.status,
            seed: record.seed,
            problem: cfg.problem_key(),
            trainer: label(&cfg.trainer),
            loss: label(&cfg.loss),
            iterations_completed: record.steps.last().map_or(0, |s| s.iter),
            final_metrics: record.metrics.last().cloned(),
            best_fid: record.metrics.iter().map(|m| m.metrics.fid).reduce(f64::min),
            feature_space: FeatureSpaces { fid: "identity".into(), classifier_score: "frozen_classifier".into() },
            failure: record.failure.clone(),
            wall_clock: WallClock {
                discriminator_seconds: record.d_seconds,
                generator_seconds: record.g_seconds,
                metrics_seconds: record.monitor_seconds,
                total_seconds,
            },
        }
    }
}

#[derive(Serialize)]
struct StepRow {
    iter: usize,
    lr: f64,
    loss_d: f64,
    loss_g: f64,
    grad_norm_d: f64,
    grad_norm_g: f64,
    eps_inf_norm: f64,
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_steps<W: Write>(w: W, steps: &[StepReport]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in steps {
        out.serialize(StepRow {
            iter: s.iter,
            lr: s.lr,
            loss_d: s.loss_d,
            loss_g: s.loss_g,
            grad_norm_d: s.grad_norm_d,
            grad_norm_g: s.grad_norm_g,
            eps_inf_norm: s.eps_inf_norm,
        })
        .map_err(csv_err)?;
    }
    if steps.is_empty() {
        out.write_record(["iter", "lr", "loss_d", "loss_g", "grad_norm_d", "grad_norm_g", "eps_inf_norm"])
            .map_err(csv_err)?;
    }
    out.flush()
}

pub const METRICS_HEADER: [&str; 6] =
    ["iter", "fid", "classifier_score", "mode_coverage", "conditional_entropy", "sample_count"];

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        let m = &r.metrics;
        out.write_record([
            r.iter.to_string(),
            m.fid.to_string(),
            m.classifier_score.to_string(),
            m.mode_coverage.to_string(),
            m.conditional_entropy.to_string(),
            m.sample_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()
}

pub fn read_metrics<R: Read>(r: R) -> io::Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().collect::<Result<Vec<MetricsRow>, _>>().map_err(csv_err)
}

/// `magic, version: u32, count: u32`, then per tensor `ndim: u32` and `ndim` u64 dims,
/// then every tensor's data as f64; all little-endian.
pub fn write_params<W: Write>(mut w: W, tensors: &[Tensor<f64>]) -> io::Result<()> {
    w.write_all(&PARAMS_MAGIC)?;
    w.write_all(&PARAMS_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_params<R: Read>(mut r: R) -> io::Result<Vec<Tensor<f64>>> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    if u32buf != PARAMS_MAGIC {
        return Err(bad("not a parameter file"));
    }
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != PARAMS_VERSION {
        return Err(bad("unsupported parameter file version"));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let ndim = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        shapes.push(shape);
    }
    let mut out = Vec::with_capacity(count);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        out.push(Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(out)
}

fn staging_path(dir: &Path) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    dir.with_file_name(format!(".{name}.partial"))
}

/// Writes every artifact into a sibling staging directory, then renames it into place,
/// replacing any previous run at `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, record: &RunRecord, summary: &Summary) -> io::Result<()> {
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let staging = staging_path(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging)?;
    fs::write(staging.join("config.snapshot"), cfg.snapshot())?;
    write_steps(fs::File::create(staging.join("steps.csv"))?, &record.steps)?;
    write_metrics(fs::File::create(staging.join("metrics.csv"))?, &record.metrics)?;
    let json = serde_json::to_string_pretty(summary).map_err(io::Error::other)?;
    fs::write(staging.join("summary.json"), json + "\n")?;
    write_params(io::BufWriter::new(fs::File::create(staging.join("final_params.bin"))?), &record.final_params)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)
}

/// A finished run read back from its directory.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub metrics: Vec<MetricsRow>,
}

pub fn load_run(dir: &Path) -> anyhow::Result<LoadedRun> {
    use anyhow::Context;
    let text = fs::read_to_string(dir.join("config.snapshot")).with_context(|| format!("reading {}", dir.display()))?;
    let config = ExperimentConfig::from_toml(&text, &dir.join("config.snapshot").display().to_string())?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)
        .with_context(|| format!("parsing summary in {}", dir.display()))?;
    let metrics = read_metrics(fs::File::open(dir.join("metrics.csv"))?)?;
    Ok(LoadedRun { dir: dir.into(), config, summary, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let ts = vec![
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]).unwrap(),
            Tensor::vector(vec![0.25]),
        ];
        let mut buf = Vec::new();
        write_params(&mut buf, &ts).unwrap();
        assert_eq!(&buf[..4], b"FGPB");
        assert_eq!(read_params(&buf[..]).unwrap(), ts);
        assert!(read_params(&b"XXXX"[..]).is_err());
    }
}
