use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::games::{GamePoint, GameSpec, HessianBlocks};
use crate::linalg::{self, to_dmatrix};
use crate::Scalar;

pub const JACOBIAN_DIM_LIMIT: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    Gda,
    SimplifiedFr,
}

#[derive(Clone, Debug)]
pub struct JacobianAnalysis {
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    /// `|Im(l) / Re(l)|` per eigenvalue; infinite for purely imaginary ones.
    pub rotation_ratios: Vec<f64>,
}

/// Dense Jacobian of one simultaneous update map at `p`, from the Hessian blocks.
///
/// GDA: `[[I - ex Hxx, -ex Hxy], [ey Hyx, I + ey Hyy]]`. Simplified FR subtracts
/// `ex Hyx` times the first block row from the second.
pub fn spectral_radius_jacobian<T: Scalar>(
    game: &GameSpec<T>,
    p: &GamePoint<T>,
    eta_x: f64,
    eta_y: f64,
    rule: UpdateRule,
) -> Result<JacobianAnalysis, TrainerError> {
    let dim = game.dim();
    if dim > JACOBIAN_DIM_LIMIT {
        return Err(TrainerError::DimensionTooLarge { dim, limit: JACOBIAN_DIM_LIMIT });
    }
    let HessianBlocks { xx, xy, yx, yy } = game.hessian_blocks(p)?;
    let (k, l) = (game.min_player_dim, game.max_player_dim);
    let (hxx, hxy, hyx, hyy) = (to_dmatrix(&xx), to_dmatrix(&xy), to_dmatrix(&yx), to_dmatrix(&yy));

    let top_left = DMatrix::identity(k, k) - &hxx * eta_x;
    let top_right = &hxy * (-eta_x);
    let (bottom_left, bottom_right) = match rule {
        UpdateRule::Gda => (&hyx * eta_y, DMatrix::identity(l, l) + &hyy * eta_y),
        UpdateRule::SimplifiedFr => (
            &hyx * eta_y - &hyx * &hxx * eta_x,
            DMatrix::identity(l, l) + &hyy * eta_y - &hyx * &hxy * eta_x,
        ),
    };
    let mut j = DMatrix::zeros(dim, dim);
    j.view_mut((0, 0), (k, k)).copy_from(&top_left);
    j.view_mut((0, k), (k, l)).copy_from(&top_right);
    j.view_mut((k, 0), (l, k)).copy_from(&bottom_left);
    j.view_mut((k, k), (l, l)).copy_from(&bottom_right);

    let eigenvalues = linalg::eigenvalues(&j);
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rotation_ratios = eigenvalues.iter().map(|z| (z.im / z.re).abs()).collect();
    Ok(JacobianAnalysis { jacobian: j, eigenvalues, spectral_radius, rotation_ratios })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub grad_norm: f64,
    pub hxx_min_eigenvalue: f64,
    pub hxx_max_eigenvalue: f64,
    pub hyy_min_eigenvalue: f64,
    pub hyy_max_eigenvalue: f64,
    pub first_order: bool,
    /// `H_xx >= 0` for the minimising player and `H_yy <= 0` for the maximising one.
    pub second_order: bool,
    pub convention_note: String,
}

const CONVENTION_NOTE: &str = "second-order test uses H_xx >= 0 for the minimising player and H_yy <= 0 \
for the maximising player, the signs under which simultaneous descent/ascent is locally stable";

fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let e = linalg::symmetric_eigen(m).eigenvalues;
    (e.min(), e.max())
}

pub fn verify_local_nash<T: Scalar>(game: &GameSpec<T>, p: &GamePoint<T>, tol: f64) -> Result<NashReport, TrainerError> {
    let (gx, gy) = game.gradient(p)?;
    let grad_norm = gx.iter().chain(&gy).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
    let blocks = game.hessian_blocks(p)?;
    let (xmin, xmax) = extreme_eigenvalues(&to_dmatrix(&blocks.xx));
    let (ymin, ymax) = extreme_eigenvalues(&to_dmatrix(&blocks.yy));
    Ok(NashReport {
        grad_norm,
        hxx_min_eigenvalue: xmin,
        hxx_max_eigenvalue: xmax,
        hyy_min_eigenvalue: ymin,
        hyy_max_eigenvalue: ymax,
        first_order: grad_norm <= tol,
        second_order: xmin >= -tol && ymax <= tol,
        convention_note: CONVENTION_NOTE.into(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::autodiff::Tensor;
    use crate::games::make_bilinear_game;

    fn saddle() -> GameSpec<f64> {
        GameSpec {
            name: "x^2 - y^2".into(),
            min_player_dim: 1,
            max_player_dim: 1,
            objective: Arc::new(|g, x, y| {
                let a = g.squared_norm(x)?;
                let b = g.squared_norm(y)?;
                g.sub(a, b)
            }),
            analytic_equilibrium: Some(GamePoint::new(vec![0.0], vec![0.0])),
            analytic_hessians: None,
        }
    }

    #[test]
    fn xy_jacobians() {
        let game = make_bilinear_game(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let p = GamePoint::new(vec![0.3], vec![-0.2]);
        let gda = spectral_radius_jacobian(&game, &p, 0.1, 0.1, UpdateRule::Gda).unwrap();
        assert_eq!(gda.jacobian, DMatrix::from_row_slice(2, 2, &[1.0, -0.1, 0.1, 1.0]));
        assert!((gda.spectral_radius - 1.01f64.sqrt()).abs() < 1e-12);
        assert!(gda.rotation_ratios.iter().all(|r| (r - 0.1).abs() < 1e-12));
        let fr = spectral_radius_jacobian(&game, &p, 0.1, 0.1, UpdateRule::SimplifiedFr).unwrap();
        assert!((fr.spectral_radius - 0.91f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nash_checks() {
        let r = verify_local_nash(&saddle(), &GamePoint::new(vec![0.0], vec![0.0]), 1e-10).unwrap();
        assert!(r.first_order && r.second_order);
        assert_eq!((r.hxx_min_eigenvalue, r.hyy_max_eigenvalue), (2.0, -2.0));

        let game = make_bilinear_game(Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        let r = verify_local_nash(&game, &GamePoint::new(vec![0.0], vec![0.0]), 1e-10).unwrap();
        assert!(r.first_order && r.second_order);

        let r = verify_local_nash(&saddle(), &GamePoint::new(vec![1.0], vec![0.0]), 1e-10).unwrap();
        assert!(!r.first_order);
        assert_eq!(r.grad_norm, 2.0);
    }
}
