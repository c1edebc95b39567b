use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fastgan_core::autodiff::{gradcheck, Tensor};
use fastgan_core::games::{GamePoint, LabeledDataset};
use fastgan_core::metrics::Evaluator;
use fastgan_core::trainers::{spectral_radius_jacobian, RunStatus, UpdateRule};
use fastgan_harness::{
    compare_runs, load_run, parse_config, run::build_game, run_experiment, sweep, HarnessError, RunView,
    EXIT_DIVERGED, EXIT_FAILURE,
};

/// `println!` that tolerates a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "fastgan-lab", version, about = "Minimax optimisation and free adversarial GAN training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifact directory.
    Train { config: PathBuf },
    /// Tabulate finished runs side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// FID threshold; defaults to the first run's final FID.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// One run per value of a scalar config key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
    },
    /// Check gradients, HVPs and mixed HVPs against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Update-map Jacobian spectra of GDA and simplified FR at the configured start point.
    Spectral { config: PathBuf },
    /// Score labelled samples against a labelled dataset.
    Metrics {
        samples: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        radius_mult: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fail(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn status_code(status: RunStatus) -> ExitCode {
    match status {
        RunStatus::Diverged => ExitCode::from(EXIT_DIVERGED as u8),
        _ => ExitCode::SUCCESS,
    }
}

fn train(config: PathBuf) -> Result<ExitCode, HarnessError> {
    let cfg = parse_config(&config)?;
    let out = run_experiment(&cfg)?;
    out!("{}", serde_json::to_string_pretty(&out.summary).expect("summary serialises"));
    out!("wrote {}", cfg.output_dir.display());
    Ok(status_code(out.record.status))
}

fn do_sweep(config: PathBuf, param: String, values: Vec<String>) -> Result<ExitCode, HarnessError> {
    let cfg = parse_config(&config)?;
    let outcomes = sweep(&cfg, &param, &values)?;
    fastgan_harness::sweep::write_summary(io::stdout().lock(), &param, &outcomes)?;
    let diverged = outcomes.iter().any(|(_, o)| o.record.status == RunStatus::Diverged);
    Ok(status_code(if diverged { RunStatus::Diverged } else { RunStatus::Completed }))
}

fn spectral(config: PathBuf) -> Result<ExitCode, HarnessError> {
    let cfg = parse_config(&config)?;
    let game = build_game(&cfg)?;
    let p = GamePoint::new(cfg.start_x.clone(), cfg.start_y.clone());
    for (name, rule) in [("gda", UpdateRule::Gda), ("simplified_fr", UpdateRule::SimplifiedFr)] {
        let a = spectral_radius_jacobian(&game, &p, cfg.eta_x, cfg.eta_y, rule)?;
        out!("{name}: spectral radius {:.12}", a.spectral_radius);
        for (l, r) in a.eigenvalues.iter().zip(&a.rotation_ratios) {
            out!("  eigenvalue {:+.6} {:+.6}i  |Im/Re| {:.4}", l.re, l.im, r);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_dataset(path: &PathBuf) -> anyhow::Result<LabeledDataset<f64>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    LabeledDataset::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn metrics(samples: PathBuf, dataset: PathBuf, radius_mult: f64, seed: u64) -> anyhow::Result<ExitCode> {
    let data = read_dataset(&dataset)?;
    let gen = read_dataset(&samples)?;
    if gen.dim() != data.dim() {
        anyhow::bail!("samples have dimension {} but the dataset has {}", gen.dim(), data.dim());
    }
    if gen.class_count > data.class_count {
        anyhow::bail!("sample labels reach {} but the dataset has {} classes", gen.class_count - 1, data.class_count);
    }
    let evaluator = Evaluator::new(&data, gen.len(), radius_mult, seed)?;
    let samples: Tensor<f64> = gen.samples.clone();
    let record = evaluator.score_samples(&samples, &gen.labels)?;
    out!("{}", serde_json::to_string_pretty(&record)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config } => train(config),
        Command::Sweep { config, param, values } => do_sweep(config, param, values),
        Command::Spectral { config } => spectral(config),
        Command::Compare { dirs, threshold, csv } => {
            let run = || -> anyhow::Result<ExitCode> {
                let loaded = dirs.iter().map(|d| load_run(d)).collect::<anyhow::Result<Vec<_>>>()?;
                let views: Vec<RunView> = loaded.iter().map(RunView::from).collect();
                let table = compare_runs(&views, threshold)?;
                out!("{}", table.to_text().trim_end());
                if let Some(path) = csv {
                    table.write_csv(fs::File::create(&path)?)?;
                }
                Ok(ExitCode::SUCCESS)
            };
            return run().unwrap_or_else(|e| {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_FAILURE as u8)
            });
        }
        Command::Gradcheck { instances, seed } => match gradcheck::run_suite(instances, seed) {
            Ok(report) => {
                out!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
                return if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE as u8) };
            }
            Err(e) => Err(e.into()),
        },
        Command::Metrics { samples, dataset, radius_mult, seed } => {
            return metrics(samples, dataset, radius_mult, seed).unwrap_or_else(|e| {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_FAILURE as u8)
            });
        }
    };
    result.unwrap_or_else(|e| fail(&e))
}
