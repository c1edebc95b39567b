//! Differentiable two-player objectives, synthetic labelled data and the MLP
//! conditional GAN used by the trainers.

mod analytic;
mod data;
mod networks;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytic::{make_bilinear_game, make_dirac_gan, make_quadratic_game};
pub use data::{sample_gaussian_mixture, LabeledDataset};
pub use networks::{
    build_mlp_gan, Activation, BoundDiscriminator, BoundGenerator, BoundMlp, Discriminator, GanNetworks,
    Generator, Linear, Mlp,
};

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("matrix is singular or ill-conditioned (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("matrix {which} is not symmetric")]
    Asymmetric { which: &'static str },
    #[error("matrix {which} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { which: &'static str, min_eigenvalue: f64 },
    #[error("invalid game or dataset parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("csv: {0}")]
    Csv(String),
}

/// `(x, y)`: the descent player's and the ascent player's flat parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamePoint<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> GamePoint<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> T {
        self.x.iter().chain(&self.y).map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Second-derivative blocks; `xy[i][j] = d2f / dx_i dy_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianBlocks<T> {
    pub xx: Tensor<T>,
    pub xy: Tensor<T>,
    pub yx: Tensor<T>,
    pub yy: Tensor<T>,
}

pub type Objective<T> = Arc<dyn Fn(&mut Graph<T>, Var, Var) -> Result<Var, AutodiffError> + Send + Sync>;

/// A two-player differentiable objective `f(x, y)`; `x` minimises, `y` maximises.
#[derive(Clone)]
pub struct GameSpec<T> {
    pub name: String,
    pub min_player_dim: usize,
    pub max_player_dim: usize,
    pub objective: Objective<T>,
    pub analytic_equilibrium: Option<GamePoint<T>>,
    /// Closed-form blocks; constant for the quadratic family.
    pub analytic_hessians: Option<HessianBlocks<T>>,
}

impl<T> fmt::Debug for GameSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("name", &self.name)
            .field("min_player_dim", &self.min_player_dim)
            .field("max_player_dim", &self.max_player_dim)
            .finish_non_exhaustive()
    }
}

/// A game evaluated at a point on a live graph.
pub struct GameGraph<T> {
    pub graph: Graph<T>,
    pub x: Var,
    pub y: Var,
    pub value: Var,
}

impl<T: Scalar> GameSpec<T> {
    pub fn dim(&self) -> usize {
        self.min_player_dim + self.max_player_dim
    }

    fn check_point(&self, p: &GamePoint<T>) -> Result<(), GameError> {
        if p.x.len() != self.min_player_dim || p.y.len() != self.max_player_dim {
            return Err(GameError::Invalid(format!(
                "point has dims ({}, {}), game {} expects ({}, {})",
                p.x.len(),
                p.y.len(),
                self.name,
                self.min_player_dim,
                self.max_player_dim
            )));
        }
        Ok(())
    }

    pub fn graph_at(&self, p: &GamePoint<T>) -> Result<GameGraph<T>, GameError> {
        self.check_point(p)?;
        let mut graph = Graph::new();
        let x = graph.param(Tensor::vector(p.x.clone()));
        let y = graph.param(Tensor::vector(p.y.clone()));
        let value = (self.objective)(&mut graph, x, y)?;
        Ok(GameGraph { graph, x, y, value })
    }

    pub fn value(&self, p: &GamePoint<T>) -> Result<T, GameError> {
        let gg = self.graph_at(p)?;
        Ok(gg.graph.item(gg.value))
    }

    /// `(grad_x f, grad_y f)`.
    pub fn gradient(&self, p: &GamePoint<T>) -> Result<(Vec<T>, Vec<T>), GameError> {
        let mut gg = self.graph_at(p)?;
        let gr = gg.graph.grad_values(gg.value, &[gg.x, gg.y])?;
        Ok((gr.get(gg.x).unwrap().data().to_vec(), gr.get(gg.y).unwrap().data().to_vec()))
    }

    /// All four Hessian blocks, assembled column by column from double-backward products.
    pub fn hessian_blocks(&self, p: &GamePoint<T>) -> Result<HessianBlocks<T>, GameError> {
        let mut gg = self.graph_at(p)?;
        let (k, l) = (self.min_player_dim, self.max_player_dim);
        let (x, y, f) = (gg.x, gg.y, gg.value);
        let g = &mut gg.graph;
        Ok(HessianBlocks {
            xx: dense_block(g, f, x, x, k, k)?,
            xy: dense_block(g, f, x, y, k, l)?,
            yx: dense_block(g, f, y, x, l, k)?,
            yy: dense_block(g, f, y, y, l, l)?,
        })
    }
}

/// `[outer_len, inner_len]` block of second derivatives, one basis direction per column.
pub(crate) fn dense_block<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    outer: Var,
    inner: Var,
    outer_len: usize,
    inner_len: usize,
) -> Result<Tensor<T>, AutodiffError> {
    let mut data = vec![T::zero(); outer_len * inner_len];
    for j in 0..inner_len {
        let mut e = vec![T::zero(); inner_len];
        e[j] = T::one();
        let col = g.mixed_hvp_flat(f, &[outer], &[inner], &e)?;
        for i in 0..outer_len {
            data[i * inner_len + j] = col[i];
        }
    }
    Tensor::new(vec![outer_len, inner_len], data)
}
