//! Executing one configured experiment.

use std::time::Instant;

use fastgan_core::autodiff::{AutodiffError, Tensor};
use fastgan_core::games::{
    build_mlp_gan, make_bilinear_game, GameError, make_dirac_gan, make_quadratic_game, sample_gaussian_mixture, GamePoint,
    GameSpec, GanNetworks, LabeledDataset,
};
use fastgan_core::metrics::{Evaluator, MetricsRecord};
use fastgan_core::trainers::{
    adam_gda_train, fastgan_train, fr_step, gda_step, simplified_fr_step, RunRecord, RunStatus, StepReport,
    TrainerError,
};

use crate::artifacts::{write_run, Summary};
use crate::config::{ExperimentConfig, GameKind, TrainerRule};
use crate::HarnessError;

/// A finished (or diverged) run with its summary.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub summary: Summary,
}

fn matrix(rows: &[Vec<f64>]) -> Tensor<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Tensor::new(vec![rows.len(), cols], rows.concat()).expect("validated matrix shape")
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset<f64>, HarnessError> {
    Ok(sample_gaussian_mixture(cfg.modes, cfg.radius, cfg.mode_std, cfg.dataset_size, cfg.seed)?)
}

pub fn build_game(cfg: &ExperimentConfig) -> Result<GameSpec<f64>, HarnessError> {
    Ok(match cfg.game {
        GameKind::Bilinear => make_bilinear_game(matrix(&cfg.matrix_a))?,
        GameKind::Quadratic => make_quadratic_game(matrix(&cfg.quad_a), matrix(&cfg.matrix_a), matrix(&cfg.quad_c))?,
        GameKind::Dirac => make_dirac_gan(),
        GameKind::Mixture => {
            return Err(HarnessError::Config(crate::config::ConfigError::Constraint {
                key: "game".into(),
                message: "the mixture dataset is not an analytic game".into(),
            }))
        }
    })
}

/// Runs the configured trainer without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let record = match cfg.game {
        GameKind::Mixture => train_gan(cfg)?,
        _ => train_game(cfg)?,
    };
    let summary = Summary::new(cfg, &record, start.elapsed().as_secs_f64());
    Ok(RunOutcome { record, summary })
}

/// Runs the experiment and writes its artifacts to `cfg.output_dir`. A diverged run is
/// still written, with `status: diverged`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let outcome = execute(cfg)?;
    write_run(&cfg.output_dir, cfg, &outcome.record, &outcome.summary)?;
    Ok(outcome)
}

fn train_gan(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let data = build_dataset(cfg)?;
    let evaluator = Evaluator::new(&data, cfg.metric_samples, cfg.radius_mult, cfg.seed)?;
    let nets = build_mlp_gan::<f64>(cfg.noise_dim, cfg.hidden_width, cfg.depth, data.dim(), data.class_count, cfg.seed)?;
    let every = cfg.metric_every;
    let total = cfg.total_iters;
    let mut monitor = |t: usize, n: &GanNetworks<f64>| -> Result<Option<MetricsRecord>, TrainerError> {
        if t % every != 0 && t != total {
            return Ok(None);
        }
        evaluator.evaluate(n).map(Some).map_err(|e| TrainerError::Config(format!("metric evaluation failed: {e}")))
    };
    let tc = cfg.trainer_config();
    let result = match cfg.trainer {
        TrainerRule::Fastgan => fastgan_train(nets, &data, cfg.loss, &tc, Some(&mut monitor)),
        TrainerRule::AdamGda => adam_gda_train(nets, &data, cfg.loss, &tc, Some(&mut monitor)),
        other => unreachable!("{other:?} is rejected for the mixture by validation"),
    };
    match result {
        Ok((_, record)) => Ok(record),
        Err(TrainerError::Diverged { record: Some(record), .. }) => Ok(*record),
        Err(e) => Err(e.into()),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn train_game(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let game = build_game(cfg)?;
    let mut p = GamePoint::new(cfg.start_x.clone(), cfg.start_y.clone());
    let mut steps = Vec::with_capacity(cfg.total_iters);
    let mut status = RunStatus::Completed;
    let mut failure = None;
    let start = Instant::now();
    for t in 0..cfg.total_iters {
        let next = match cfg.trainer {
            TrainerRule::Gda => gda_step(&game, &p, cfg.eta_x, cfg.eta_y, cfg.gda_mode),
            TrainerRule::SimplifiedFr => simplified_fr_step(&game, &p, cfg.eta_x, cfg.eta_y),
            TrainerRule::Fr => fr_step(&game, &p, cfg.eta_x, cfg.eta_y, cfg.solver_tol),
            other => unreachable!("{other:?} is rejected for analytic games by validation"),
        };
        let mut report = StepReport {
            iter: t + 1,
            lr: cfg.eta_x,
            loss_d: f64::NAN,
            loss_g: f64::NAN,
            grad_norm_d: f64::NAN,
            grad_norm_g: f64::NAN,
            eps_inf_norm: 0.0,
            d_update_count: t as u64,
            g_update_count: t as u64,
            generator_forward_count: 0,
        };
        p = match next {
            Ok(q) => q,
            Err(TrainerError::Diverged { .. }) => {
                status = RunStatus::Diverged;
                failure = Some(report);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let evaluated = game.value(&p).and_then(|v| game.gradient(&p).map(|g| (v, g)));
        let (value, (gx, gy)) = match evaluated {
            Ok(e) => e,
            Err(GameError::Autodiff(AutodiffError::NonFinite { .. })) => {
                status = RunStatus::Diverged;
                failure = Some(report);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        report.loss_d = value;
        report.loss_g = value;
        report.grad_norm_d = norm(&gy);
        report.grad_norm_g = norm(&gx);
        report.d_update_count += 1;
        report.g_update_count += 1;
        if !(value.is_finite() && report.grad_norm_d.is_finite() && report.grad_norm_g.is_finite()) {
            status = RunStatus::Diverged;
            failure = Some(report);
            break;
        }
        steps.push(report);
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(RunRecord {
        seed: cfg.seed,
        status,
        steps,
        metrics: Vec::new(),
        final_params: vec![Tensor::vector(p.x), Tensor::vector(p.y)],
        failure,
        d_seconds: seconds,
        g_seconds: 0.0,
        monitor_seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_gda_spirals_outward() {
        let cfg = ExperimentConfig::from_toml(
            "game = \"bilinear\"\ntrainer = \"gda\"\ntotal_iters = 50\n",
            "inline",
        )
        .unwrap();
        let out = execute(&cfg).unwrap();
        assert_eq!(out.record.status, RunStatus::Completed);
        assert_eq!(out.record.steps.len(), 50);
        let r: f64 = out.record.final_params.iter().map(|t| t.dot(t)).sum::<f64>().sqrt();
        assert!((r - 2f64.sqrt() * 1.01f64.powf(25.0)).abs() < 1e-9, "{r}");
    }

    #[test]
    fn fr_on_bilinear_game_is_an_error() {
        let cfg = ExperimentConfig::from_toml("game = \"bilinear\"\ntrainer = \"fr\"\ntotal_iters = 3\n", "inline")
            .unwrap();
        assert!(matches!(execute(&cfg), Err(HarnessError::Trainer(TrainerError::SingularHessian { .. }))));
    }

    #[test]
    fn large_step_gda_is_recorded_as_diverged() {
        let cfg = ExperimentConfig::from_toml(
            "game = \"bilinear\"\ntrainer = \"gda\"\neta_x = 1e10\neta_y = 1e10\ntotal_iters = 200\n",
            "inline",
        )
        .unwrap();
        let out = execute(&cfg).unwrap();
        assert_eq!(out.record.status, RunStatus::Diverged);
        assert!(out.record.failure.is_some());
        assert!(out.record.steps.len() < 200);
    }
}
