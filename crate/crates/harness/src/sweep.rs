//! One run per value of a single scalar config key.

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::thread;

use crate::config::{ConfigError, ExperimentConfig};
use crate::run::{run_experiment, RunOutcome};
use crate::HarnessError;

fn refuse(key: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config(ConfigError::Constraint { key: key.into(), message: message.into() })
}

/// Parses `raw` as a TOML value, falling back to a bare string so enum names need no quotes.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `base` with `key` set to `raw`, writing into `<output_dir>/<key>=<raw>`.
pub fn with_override(base: &ExperimentConfig, key: &str, raw: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut table: toml::Table = toml::from_str(&base.snapshot()).expect("snapshot is valid TOML");
    match table.get(key) {
        None if key == "eta0_d" => {}
        None => return Err(refuse(key, "not a config key")),
        Some(toml::Value::Array(_) | toml::Value::Table(_)) => {
            return Err(refuse(key, "sweeps only address scalar keys"));
        }
        Some(_) => {}
    }
    if key == "output_dir" {
        return Err(refuse(key, "cannot sweep the output directory"));
    }
    let mut value = parse_value(raw);
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(key), &value) {
        value = toml::Value::Float(*i as f64);
    }
    table.insert(key.into(), value);
    let dir = base.output_dir.join(format!("{key}={raw}"));
    table.insert("output_dir".into(), toml::Value::String(dir.display().to_string()));
    let text = toml::to_string(&table).expect("table serialises");
    Ok(ExperimentConfig::from_toml(&text, &format!("{key}={raw}"))?)
}

/// Runs every value with the base seed, in parallel up to the available cores, and writes
/// `summary.csv` into the base output directory.
pub fn sweep(base: &ExperimentConfig, key: &str, values: &[String]) -> Result<Vec<(String, RunOutcome)>, HarnessError> {
    if values.is_empty() {
        return Err(refuse(key, "empty value list"));
    }
    let configs: Vec<ExperimentConfig> =
        values.iter().map(|v| with_override(base, key, v)).collect::<Result<_, _>>()?;
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(configs.len());
    let mut results: Vec<Option<Result<RunOutcome, HarnessError>>> = (0..configs.len()).map(|_| None).collect();
    thread::scope(|s| {
        for (chunk_cfgs, chunk_out) in
            configs.chunks(configs.len().div_ceil(workers)).zip(results.chunks_mut(configs.len().div_ceil(workers)))
        {
            s.spawn(move || {
                for (cfg, slot) in chunk_cfgs.iter().zip(chunk_out) {
                    *slot = Some(run_experiment(cfg));
                }
            });
        }
    });
    let outcomes: Vec<(String, RunOutcome)> = values
        .iter()
        .cloned()
        .zip(results.into_iter().map(|r| r.expect("every slot filled")))
        .map(|(v, r)| r.map(|o| (v, o)))
        .collect::<Result<_, _>>()?;
    fs::create_dir_all(&base.output_dir)?;
    write_summary(fs::File::create(base.output_dir.join("summary.csv"))?, key, &outcomes)?;
    Ok(outcomes)
}

pub fn write_summary<W: Write>(w: W, key: &str, outcomes: &[(String, RunOutcome)]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([key, "status", "final_fid", "best_fid", "classifier_score", "mode_coverage", "conditional_entropy"])
        .map_err(io::Error::other)?;
    for (value, o) in outcomes {
        let m = o.summary.final_metrics.as_ref().map(|r| &r.metrics);
        let f = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
        out.write_record([
            value.clone(),
            format!("{:?}", o.summary.status).to_lowercase(),
            f(m.map(|m| m.fid)),
            f(o.summary.best_fid),
            f(m.map(|m| m.classifier_score)),
            f(m.map(|m| m.mode_coverage)),
            f(m.map(|m| m.conditional_entropy)),
        ])
        .map_err(io::Error::other)?;
    }
    out.flush()
}

/// Reads the `key=value` run directories a sweep left under `dir`.
pub fn sweep_dirs(dir: &Path) -> io::Result<Vec<std::path::PathBuf>> {
    let mut dirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().contains('=')))
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_scalars_and_keeps_types() {
        let base = ExperimentConfig::default();
        let c = with_override(&base, "c_max", "0").unwrap();
        assert_eq!(c.c_max, 0.0);
        assert!(c.output_dir.ends_with("c_max=0"));
        let c = with_override(&base, "loss", "robgan").unwrap();
        assert_eq!(c.loss, fastgan_core::losses::LossKind::Robgan);
        let c = with_override(&base, "eta0_d", "1e-3").unwrap();
        assert_eq!(c.eta0_d, Some(1e-3));
    }

    #[test]
    fn refuses_non_scalar_unknown_and_empty() {
        let base = ExperimentConfig::default();
        assert!(with_override(&base, "matrix_a", "1").is_err());
        assert!(with_override(&base, "nope", "1").is_err());
        assert!(sweep(&base, "c_max", &[]).is_err());
    }
}
