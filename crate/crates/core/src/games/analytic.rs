use std::sync::Arc;

use super::{GameError, GamePoint, GameSpec, HessianBlocks};
use crate::autodiff::{Graph, Tensor, Var};
use crate::linalg::{condition_number, is_symmetric, symmetric_eigen, to_dmatrix};
use crate::Scalar;

/// Condition numbers above this are treated as singular.
const MAX_CONDITION: f64 = 1e12;
const PSD_TOL: f64 = 1e-10;

fn quad_form<T: Scalar>(
    g: &mut Graph<T>,
    u: Var,
    m: &Tensor<T>,
    v: Var,
) -> Result<Var, crate::autodiff::AutodiffError> {
    // u^T M v with u, v vectors
    let (k, l) = (m.rows(), m.cols());
    let ur = g.reshape(u, vec![1, k])?;
    let vr = g.reshape(v, vec![1, l])?;
    let mc = g.constant(m.clone());
    let um = g.matmul(ur, mc)?;
    g.dot(um, vr)
}

/// `f(x, y) = x^T A y` with equilibrium at the origin.
pub fn make_bilinear_game<T: Scalar>(a: Tensor<T>) -> Result<GameSpec<T>, GameError> {
    let k = a.rows();
    if a.ndim() != 2 || a.cols() != k {
        return Err(GameError::Invalid(format!("bilinear matrix must be square, got {:?}", a.shape())));
    }
    let condition = condition_number(&to_dmatrix(&a));
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(GameError::Singular { condition });
    }
    let hess = HessianBlocks {
        xx: Tensor::zeros(vec![k, k]),
        xy: a.clone(),
        yx: a.transpose(),
        yy: Tensor::zeros(vec![k, k]),
    };
    let a_obj = a.clone();
    Ok(GameSpec {
        name: format!("bilinear{k}"),
        min_player_dim: k,
        max_player_dim: k,
        objective: Arc::new(move |g, x, y| quad_form(g, x, &a_obj, y)),
        analytic_equilibrium: Some(GamePoint::new(vec![T::zero(); k], vec![T::zero(); k])),
        analytic_hessians: Some(hess),
    })
}

fn check_psd<T: Scalar>(m: &Tensor<T>, which: &'static str) -> Result<(), GameError> {
    let dm = to_dmatrix(m);
    if !is_symmetric(&dm, 1e-12) {
        return Err(GameError::Asymmetric { which });
    }
    let min = symmetric_eigen(&dm).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -PSD_TOL {
        return Err(GameError::NotPsd { which, min_eigenvalue: min });
    }
    Ok(())
}

/// `f(x, y) = 1/2 x^T A x + x^T B y - 1/2 y^T C y` with `A`, `C` symmetric PSD.
pub fn make_quadratic_game<T: Scalar>(a: Tensor<T>, b: Tensor<T>, c: Tensor<T>) -> Result<GameSpec<T>, GameError> {
    let (k, l) = (a.rows(), c.rows());
    if a.ndim() != 2 || c.ndim() != 2 || b.shape() != [k, l] {
        return Err(GameError::Invalid(format!(
            "quadratic game shapes A {:?}, B {:?}, C {:?} are inconsistent",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    check_psd(&a, "A")?;
    check_psd(&c, "C")?;
    let hess = HessianBlocks { xx: a.clone(), xy: b.clone(), yx: b.transpose(), yy: c.scale(-T::one()) };
    let half = T::lit(0.5);
    let objective = move |g: &mut Graph<T>, x: Var, y: Var| {
        let xax = quad_form(g, x, &a, x)?;
        let xby = quad_form(g, x, &b, y)?;
        let ycy = quad_form(g, y, &c, y)?;
        let t1 = g.scale(xax, half)?;
        let t3 = g.scale(ycy, half)?;
        let s = g.add(t1, xby)?;
        g.sub(s, t3)
    };
    Ok(GameSpec {
        name: format!("quadratic{k}x{l}"),
        min_player_dim: k,
        max_player_dim: l,
        objective: Arc::new(objective),
        analytic_equilibrium: Some(GamePoint::new(vec![T::zero(); k], vec![T::zero(); l])),
        analytic_hessians: Some(hess),
    })
}

/// Dirac GAN: generator `theta` places all mass at `theta`, discriminator
/// `psi` scores `psi * x`, real data sits at 0. The objective is
/// `log sigmoid(psi * 0) + log(1 - sigmoid(psi * theta))`.
pub fn make_dirac_gan<T: Scalar>() -> GameSpec<T> {
    let objective = |g: &mut Graph<T>, theta: Var, psi: Var| {
        let real_score = g.scale(psi, T::zero())?;
        let real = g.log_sigmoid(real_score)?;
        let fake_score = g.mul(psi, theta)?;
        let neg = g.neg(fake_score)?;
        let fake = g.log_sigmoid(neg)?;
        let r = g.sum(real)?;
        let f = g.sum(fake)?;
        g.add(r, f)
    };
    GameSpec {
        name: "dirac_gan".into(),
        min_player_dim: 1,
        max_player_dim: 1,
        objective: Arc::new(objective),
        analytic_equilibrium: Some(GamePoint::new(vec![T::zero()], vec![T::zero()])),
        analytic_hessians: None,
    }
}
