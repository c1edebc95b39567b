//! Side-by-side tables of finished runs.

use std::fmt::Write as _;
use std::io::{self, Write};

use fastgan_core::trainers::MetricsRow;

use crate::artifacts::LoadedRun;
use crate::HarnessError;

/// First iteration whose FID is at or below `threshold`.
pub fn iterations_to_threshold(iters: &[usize], fids: &[f64], threshold: f64) -> Option<usize> {
    iters.iter().zip(fids).find(|(_, &f)| f <= threshold).map(|(&i, _)| i)
}

/// The pieces of a run that a comparison needs.
#[derive(Clone, Debug)]
pub struct RunView {
    pub label: String,
    pub problem: String,
    pub metrics: Vec<MetricsRow>,
}

impl From<&LoadedRun> for RunView {
    fn from(run: &LoadedRun) -> Self {
        Self {
            label: run.dir.display().to_string(),
            problem: run.summary.problem.clone(),
            metrics: run.metrics.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub final_iter: Option<usize>,
    pub final_fid: Option<f64>,
    pub best_fid: Option<f64>,
    pub final_classifier_score: Option<f64>,
    pub final_mode_coverage: Option<f64>,
    pub final_conditional_entropy: Option<f64>,
    pub iters_to_threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub problem: String,
    pub threshold: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Aligns runs on the same problem. Without an explicit threshold, the first run's
/// final FID is used, so the table reads as "how soon did each run match the baseline".
pub fn compare_runs(runs: &[RunView], threshold: Option<f64>) -> Result<Comparison, HarnessError> {
    if runs.len() < 2 {
        return Err(HarnessError::Compare(format!("need at least 2 runs, got {}", runs.len())));
    }
    let problem = &runs[0].problem;
    if let Some(other) = runs.iter().find(|r| &r.problem != problem) {
        return Err(HarnessError::Compare(format!(
            "{} is on {} but {} is on {}",
            other.label, other.problem, runs[0].label, problem
        )));
    }
    let threshold = match threshold {
        Some(t) => t,
        None => runs[0].metrics.last().map(|m| m.metrics.fid).ok_or_else(|| {
            HarnessError::Compare(format!("{} has no metrics to derive a threshold from", runs[0].label))
        })?,
    };
    let rows = runs
        .iter()
        .map(|r| {
            let iters: Vec<usize> = r.metrics.iter().map(|m| m.iter).collect();
            let fids: Vec<f64> = r.metrics.iter().map(|m| m.metrics.fid).collect();
            let last = r.metrics.last().map(|m| &m.metrics);
            ComparisonRow {
                label: r.label.clone(),
                final_iter: iters.last().copied(),
                final_fid: last.map(|m| m.fid),
                best_fid: fids.iter().copied().reduce(f64::min),
                final_classifier_score: last.map(|m| m.classifier_score),
                final_mode_coverage: last.map(|m| m.mode_coverage),
                final_conditional_entropy: last.map(|m| m.conditional_entropy),
                iters_to_threshold: iterations_to_threshold(&iters, &fids, threshold),
            }
        })
        .collect();
    Ok(Comparison { problem: problem.clone(), threshold, rows })
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header = [
            "run",
            "final_iter",
            "final_fid",
            "best_fid",
            "final_classifier_score",
            "final_mode_coverage",
            "final_conditional_entropy",
            "fid_threshold",
            "iters_to_threshold",
        ];
        out.write_record(header).map_err(io::Error::other)?;
        for r in &self.rows {
            out.write_record([
                r.label.clone(),
                cell(r.final_iter),
                cell(r.final_fid),
                cell(r.best_fid),
                cell(r.final_classifier_score),
                cell(r.final_mode_coverage),
                cell(r.final_conditional_entropy),
                self.threshold.to_string(),
                cell(r.iters_to_threshold),
            ])
            .map_err(io::Error::other)?;
        }
        out.flush()
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(3).max(3);
        let mut s = format!("problem: {}\nfid threshold: {:.4}\n", self.problem, self.threshold);
        let _ = writeln!(
            s,
            "{:<width$}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}  {:>12}",
            "run", "final fid", "best fid", "score", "coverage", "cond H", "iters to thr"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}  {:>12}",
                r.label,
                fmt(r.final_fid),
                fmt(r.best_fid),
                fmt(r.final_classifier_score),
                fmt(r.final_mode_coverage),
                fmt(r.final_conditional_entropy),
                r.iters_to_threshold.map_or_else(|| "not reached".to_string(), |i| i.to_string()),
            );
        }
        s
    }
}
