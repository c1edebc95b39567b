//! Minimax optimisation laboratory: a double-backward autodiff engine,
//! differentiable two-player games, conditional GAN losses, first- and
//! second-order game trainers (GDA, Follow-the-Ridge, free adversarial GAN
//! training) and sample-quality metrics.
//!
//! Numeric code is generic over [`Scalar`]; the `*64` aliases below are what
//! experiments use.

pub mod autodiff;
pub mod games;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod linalg;
mod scalar;
pub mod trainers;

pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Graph64 = autodiff::Graph<f64>;
pub type GamePoint64 = games::GamePoint<f64>;
pub type GameSpec64 = games::GameSpec<f64>;
pub type LabeledDataset64 = games::LabeledDataset<f64>;
pub type GanNetworks64 = games::GanNetworks<f64>;
