//! Update rules for two-player games and the free adversarial GAN trainer,
//! plus second-order diagnostics.

mod adam;
mod corrections;
mod fastgan;
mod game_steps;
mod spectral;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::games::GameError;
use crate::losses::LossCoefficients;

pub use adam::{adam_step, AdamState};
pub use corrections::{
    adv_correction_term, fr_correction_expanded, fr_correction_term, unit_input_gradient_at, AdvCorrection,
};
pub use fastgan::{
    adam_gda_train, adv_perturb_step, fastgan_train, Monitor, MetricsRow, PerturbationState, RunRecord, RunStatus,
    StepReport,
};
pub use game_steps::{fr_step, gda_step, simplified_fr_step, GdaMode, CG_MAX_ITERS, FR_DAMPING};
pub use spectral::{spectral_radius_jacobian, verify_local_nash, JacobianAnalysis, NashReport, UpdateRule, JACOBIAN_DIM_LIMIT};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        /// Last finite `(x, y)` for game trainers.
        last_finite: Option<(Vec<f64>, Vec<f64>)>,
        /// The step that failed, for GAN trainers.
        report: Option<Box<StepReport>>,
        /// Everything recorded up to the failure, for GAN trainers.
        record: Option<Box<RunRecord>>,
    },
    #[error("H_yy solve failed: residual {residual:e} after {iterations} iterations")]
    SingularHessian { residual: f64, iterations: usize },
    #[error("input gradient norm {norm:e} is too small to normalise by")]
    DegenerateGradient { norm: f64 },
    #[error("{dim} parameters exceed the dense Jacobian limit of {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.0, beta2: 0.9, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub eta0: f64,
    /// Discriminator base rate when it differs from the generator's.
    pub eta0_d: Option<f64>,
    pub decay_rate: f64,
    pub decay_scale: f64,
    pub constant_lr: bool,
    pub max_d_step: usize,
    pub max_adv_step: usize,
    pub c_max: f64,
    /// Also perturb fake batches, with a separate persistent perturbation.
    pub perturb_fake: bool,
    /// `None` selects plain gradient steps.
    pub adam: Option<AdamConfig>,
    pub coeffs: LossCoefficients,
    pub batch_size: usize,
    pub total_iters: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta0: 2e-4,
            eta0_d: None,
            decay_rate: 0.5,
            decay_scale: 20_000.0 / 3.0,
            constant_lr: false,
            max_d_step: 1,
            max_adv_step: 2,
            c_max: 0.006,
            perturb_fake: false,
            adam: Some(AdamConfig::default()),
            coeffs: LossCoefficients::default(),
            batch_size: 64,
            total_iters: 20_000,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let fail = |msg: String| Err(TrainerError::Config(msg));
        if !(self.eta0 > 0.0) || self.eta0_d.is_some_and(|e| !(e > 0.0)) {
            return fail("learning rates must be positive".into());
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return fail(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate));
        }
        if !(self.decay_scale > 0.0) {
            return fail(format!("decay_scale must be positive, got {}", self.decay_scale));
        }
        if !(self.c_max >= 0.0) {
            return fail(format!("c_max must be nonnegative, got {}", self.c_max));
        }
        if self.max_d_step == 0 || self.max_adv_step == 0 || self.batch_size == 0 || self.total_iters == 0 {
            return fail("loop counts and batch size must be positive".into());
        }
        if let Some(a) = self.adam {
            if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
                return fail(format!("invalid Adam settings {a:?}"));
            }
        }
        self.coeffs.validate().map_err(|e| TrainerError::Config(e.to_string()))
    }
}

/// `eta0 * e^(t / kappa)` with `e` in (0, 1]; constant when `constant_lr`.
pub fn lr_schedule(t: usize, config: &TrainerConfig) -> f64 {
    lr_at(config.eta0, t, config)
}

pub(crate) fn lr_at(base: f64, t: usize, config: &TrainerConfig) -> f64 {
    if config.constant_lr {
        return base;
    }
    base * config.decay_rate.powf(t as f64 / config.decay_scale)
}
