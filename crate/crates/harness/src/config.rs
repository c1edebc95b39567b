//! Flat TOML experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use fastgan_core::losses::{ClassificationTerm, LossCoefficients, LossKind};
use fastgan_core::trainers::{AdamConfig, GdaMode, TrainerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{key}`: {message}")]
    Constraint { key: String, message: String },
}

fn constraint(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Constraint { key: key.into(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    /// Labelled ring of Gaussians with an MLP conditional GAN.
    Mixture,
    Bilinear,
    Quadratic,
    Dirac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerRule {
    Gda,
    AdamGda,
    Fr,
    SimplifiedFr,
    Fastgan,
}

impl TrainerRule {
    pub fn is_gan(self) -> bool {
        matches!(self, TrainerRule::AdamGda | TrainerRule::Fastgan)
    }
}

/// Every field has a default, so a config file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameKind,
    pub trainer: TrainerRule,
    pub loss: LossKind,
    pub seed: u64,
    pub output_dir: PathBuf,

    pub modes: usize,
    pub radius: f64,
    pub mode_std: f64,
    pub dataset_size: usize,

    pub noise_dim: usize,
    pub hidden_width: usize,
    pub depth: usize,

    pub eta0: f64,
    pub eta0_d: Option<f64>,
    pub decay_rate: f64,
    /// Defaults to a third of `total_iters`.
    pub decay_scale: Option<f64>,
    pub constant_lr: bool,
    pub max_d_step: usize,
    pub max_adv_step: usize,
    pub c_max: f64,
    pub perturb_fake: bool,
    pub use_adam: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub total_iters: usize,

    pub alpha_c_f: f64,
    pub alpha_c_g: f64,
    pub disable_kl: bool,
    pub classification_term: ClassificationTerm,

    pub metric_every: usize,
    pub metric_samples: usize,
    pub radius_mult: f64,

    /// Row-major coupling matrix of the bilinear game, or the `B` block of the quadratic one.
    pub matrix_a: Vec<Vec<f64>>,
    /// `A` and `C` blocks of the quadratic game.
    pub quad_a: Vec<Vec<f64>>,
    pub quad_c: Vec<Vec<f64>>,
    pub start_x: Vec<f64>,
    pub start_y: Vec<f64>,
    pub eta_x: f64,
    pub eta_y: f64,
    pub gda_mode: GdaMode,
    pub solver_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            game: GameKind::Mixture,
            trainer: TrainerRule::Fastgan,
            loss: LossKind::Fastgan,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            modes: 8,
            radius: 2.0,
            mode_std: 0.05,
            dataset_size: 8000,
            noise_dim: 4,
            hidden_width: 32,
            depth: 2,
            eta0: 2e-4,
            eta0_d: None,
            decay_rate: 0.5,
            decay_scale: None,
            constant_lr: false,
            max_d_step: 1,
            max_adv_step: 2,
            c_max: 0.006,
            perturb_fake: false,
            use_adam: true,
            beta1: 0.0,
            beta2: 0.9,
            adam_epsilon: 1e-8,
            batch_size: 64,
            total_iters: 20_000,
            alpha_c_f: 1.0,
            alpha_c_g: 1.0,
            disable_kl: false,
            classification_term: ClassificationTerm::LogProb,
            metric_every: 500,
            metric_samples: 10_000,
            radius_mult: 3.0,
            matrix_a: vec![vec![1.0]],
            quad_a: vec![vec![1.0]],
            quad_c: vec![vec![1.0]],
            start_x: vec![1.0],
            start_y: vec![1.0],
            eta_x: 0.1,
            eta_y: 0.1,
            gda_mode: GdaMode::Simultaneous,
            solver_tol: 1e-10,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, fills derived defaults and validates.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self) {
        if self.decay_scale.is_none() {
            self.decay_scale = Some(self.total_iters as f64 / 3.0);
        }
    }

    /// Canonical TOML with every field spelled out; parsing it yields `self` again.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config fields are TOML-representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("eta0", self.eta0),
            ("decay_scale", self.decay_scale.unwrap_or(1.0)),
            ("radius", self.radius),
            ("mode_std", self.mode_std),
            ("radius_mult", self.radius_mult),
            ("adam_epsilon", self.adam_epsilon),
            ("eta_x", self.eta_x),
            ("eta_y", self.eta_y),
            ("solver_tol", self.solver_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(constraint(key, format!("must be a positive finite number, got {v}")));
            }
        }
        if let Some(e) = self.eta0_d {
            if !(e > 0.0) {
                return Err(constraint("eta0_d", format!("must be positive, got {e}")));
            }
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(constraint("decay_rate", format!("must lie in (0, 1], got {}", self.decay_rate)));
        }
        if !(self.c_max >= 0.0) {
            return Err(constraint("c_max", format!("must be nonnegative, got {}", self.c_max)));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(constraint(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        let counts = [
            ("max_d_step", self.max_d_step),
            ("max_adv_step", self.max_adv_step),
            ("batch_size", self.batch_size),
            ("total_iters", self.total_iters),
            ("metric_every", self.metric_every),
            ("noise_dim", self.noise_dim),
            ("hidden_width", self.hidden_width),
            ("depth", self.depth),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(constraint(key, "must be at least 1"));
            }
        }
        if self.modes < 2 || self.dataset_size < self.modes {
            return Err(constraint("modes", "need at least 2 modes and one sample per mode"));
        }
        if self.metric_samples < 3 {
            return Err(constraint("metric_samples", "need at least 3 samples for covariance estimates"));
        }
        for (key, a) in [("alpha_c_f", self.alpha_c_f), ("alpha_c_g", self.alpha_c_g)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(constraint(key, format!("must lie in (0, 1], got {a}")));
            }
        }

        let gan_game = self.game == GameKind::Mixture;
        if gan_game != self.trainer.is_gan() {
            return Err(constraint(
                "trainer",
                format!("{:?} does not apply to the {:?} game", self.trainer, self.game),
            ));
        }
        if self.disable_kl && self.loss != LossKind::Fastgan {
            return Err(constraint("disable_kl", "only applies to the fastgan loss"));
        }
        if self.classification_term != ClassificationTerm::LogProb && self.loss != LossKind::Fastgan {
            return Err(constraint("classification_term", "only applies to the fastgan loss"));
        }
        if self.perturb_fake && self.trainer != TrainerRule::Fastgan {
            return Err(constraint("perturb_fake", "only applies to the fastgan trainer"));
        }
        if !gan_game {
            self.validate_game_shapes()?;
        }
        Ok(())
    }

    fn validate_game_shapes(&self) -> Result<(), ConfigError> {
        let square = |key: &str, m: &[Vec<f64>]| -> Result<usize, ConfigError> {
            let n = m.len();
            if n == 0 || m.iter().any(|r| r.len() != n) {
                return Err(constraint(key, "must be a non-empty square matrix"));
            }
            Ok(n)
        };
        let (kx, ky) = match self.game {
            GameKind::Bilinear => {
                let n = square("matrix_a", &self.matrix_a)?;
                (n, n)
            }
            GameKind::Quadratic => {
                let kx = square("quad_a", &self.quad_a)?;
                let ky = square("quad_c", &self.quad_c)?;
                if self.matrix_a.len() != kx || self.matrix_a.iter().any(|r| r.len() != ky) {
                    return Err(constraint("matrix_a", format!("must be {kx} x {ky} for this quadratic game")));
                }
                (kx, ky)
            }
            GameKind::Dirac => (1, 1),
            GameKind::Mixture => unreachable!("mixture has no analytic shapes"),
        };
        if self.start_x.len() != kx {
            return Err(constraint("start_x", format!("must have {kx} entries")));
        }
        if self.start_y.len() != ky {
            return Err(constraint("start_y", format!("must have {ky} entries")));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            alpha_c_f: self.alpha_c_f,
            alpha_c_g: self.alpha_c_g,
            kl_enabled: !self.disable_kl,
            g_class_enabled: true,
            classification_term: self.classification_term,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            eta0: self.eta0,
            eta0_d: self.eta0_d,
            decay_rate: self.decay_rate,
            decay_scale: self.decay_scale.unwrap_or(self.total_iters as f64 / 3.0),
            constant_lr: self.constant_lr,
            max_d_step: self.max_d_step,
            max_adv_step: self.max_adv_step,
            c_max: self.c_max,
            perturb_fake: self.perturb_fake,
            adam: self.use_adam.then_some(AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            }),
            coeffs: self.coefficients(),
            batch_size: self.batch_size,
            total_iters: self.total_iters,
            seed: self.seed,
        }
    }

    /// Identifies the game or dataset, for refusing comparisons across different ones.
    pub fn problem_key(&self) -> String {
        match self.game {
            GameKind::Mixture => format!(
                "mixture(modes={}, radius={}, std={}, n={}, seed={})",
                self.modes, self.radius, self.mode_std, self.dataset_size, self.seed
            ),
            GameKind::Bilinear => format!("bilinear(a={:?})", self.matrix_a),
            GameKind::Quadratic => format!("quadratic(a={:?}, b={:?}, c={:?})", self.quad_a, self.matrix_a, self.quad_c),
            GameKind::Dirac => "dirac".into(),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    ExperimentConfig::from_toml(&text, &path.display().to_string())
}

/// The full method plus one single-change variant per ablation row.
pub fn ablation_suite(base: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let full = ExperimentConfig { trainer: TrainerRule::Fastgan, loss: LossKind::Fastgan, ..base.clone() };
    let row = |name: &'static str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = full.clone();
        f(&mut c);
        c.output_dir = base.output_dir.join(name);
        (name, c)
    };
    vec![
        row("fastgan", &|_| {}),
        row("revert_to_robgan_loss", &|c| c.loss = LossKind::Robgan),
        row("disable_adv_training", &|c| c.c_max = 0.0),
        row("constant_lr", &|c| c.constant_lr = true),
        row("disable_kl", &|c| c.disable_kl = true),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("game = \"mixture\"\nmodes = 8\n", "inline").unwrap();
        assert_eq!((c.max_d_step, c.max_adv_step), (1, 2));
        assert_eq!((c.beta1, c.beta2, c.decay_rate, c.c_max), (0.0, 0.9, 0.5, 0.006));
        assert_eq!(c.decay_scale, Some(20_000.0 / 3.0));
    }

    #[test]
    fn snapshot_round_trips() {
        let c = ExperimentConfig::from_toml("eta0_d = 1e-3\nseed = 7\n", "inline").unwrap();
        let again = ExperimentConfig::from_toml(&c.snapshot(), "snapshot").unwrap();
        assert_eq!(c, again);
        assert_eq!(c.snapshot(), again.snapshot());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("c_maxx = 0.1\n", "inline").unwrap_err();
        assert!(err.to_string().contains("c_maxx"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_toml("seed = 1\neta0 = \n", "inline").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn inconsistent_flags_are_rejected() {
        let err = ExperimentConfig::from_toml("loss = \"acgan\"\ndisable_kl = true\n", "inline").unwrap_err();
        assert!(matches!(&err, ConfigError::Constraint { key, .. } if key == "disable_kl"));
        let err = ExperimentConfig::from_toml("game = \"bilinear\"\n", "inline").unwrap_err();
        assert!(matches!(&err, ConfigError::Constraint { key, .. } if key == "trainer"));
        let err = ExperimentConfig::from_toml("trainer = \"adam_gda\"\nperturb_fake = true\n", "inline").unwrap_err();
        assert!(matches!(&err, ConfigError::Constraint { key, .. } if key == "perturb_fake"));
        let err = ExperimentConfig::from_toml("alpha_c_g = 0.0\n", "inline").unwrap_err();
        assert!(matches!(&err, ConfigError::Constraint { key, .. } if key == "alpha_c_g"));
    }

    #[test]
    fn ablation_rows_are_distinct() {
        let rows = ablation_suite(&ExperimentConfig::default());
        assert_eq!(rows.len(), 5);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i].1.snapshot(), rows[j].1.snapshot());
            }
        }
    }
}
