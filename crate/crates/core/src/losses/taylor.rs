use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::games::Discriminator;
use crate::Scalar;

/// A parametric real/fake score `s(w, x)` on a single sample; `D = sigmoid(s)`.
pub trait ScoreModel<T: Scalar> {
    /// Parameter tensors `w`, in a fixed order.
    fn params(&self) -> Vec<Tensor<T>>;
    /// Raw score `[1, 1]` of an input `x: [1, d]`, with `params` bound in [`ScoreModel::params`] order.
    fn score(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var, AutodiffError>;
}

impl<T: Scalar> ScoreModel<T> for Discriminator<T> {
    fn params(&self) -> Vec<Tensor<T>> {
        Discriminator::params(self).into_iter().cloned().collect()
    }

    fn score(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let bound = self.bind_vars(params)?;
        Ok(bound.forward(g, x)?.adv_score)
    }
}

/// Log-probability `log D(x)` of a single sample with the model's weights as constants.
pub(crate) fn log_d<T: Scalar, M: ScoreModel<T> + ?Sized>(model: &M, x: &Tensor<T>) -> Result<(T, Tensor<T>), AutodiffError> {
    let mut g = Graph::new();
    let params: Vec<Var> = model.params().into_iter().map(|p| g.constant(p)).collect();
    let xv = g.param(x.clone());
    let s = model.score(&mut g, &params, xv)?;
    let l = g.log_sigmoid(s)?;
    let l = g.sum(l)?;
    let gx = g.grad_values(l, &[xv])?.into_tensors().remove(0);
    Ok((g.item(l), gx))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorGap<T> {
    /// `log D(x + eps)` with `eps = -c * grad / |grad|`, the minimising single gradient step in the 2-ball.
    pub exact: T,
    /// `log D(x) - c |grad_x log D(x)|`
    pub approx: T,
}

impl<T: Scalar> TaylorGap<T> {
    pub fn gap(&self) -> T {
        (self.exact - self.approx).abs()
    }
}

/// Compares the worst-case log-probability over a one-step perturbation of 2-norm `c`
/// with its first-order expansion. `x` is a single `[1, d]` sample.
pub fn adv_loss_taylor_gap<T: Scalar, M: ScoreModel<T> + ?Sized>(
    model: &M,
    x: &Tensor<T>,
    c: T,
) -> Result<TaylorGap<T>, AutodiffError> {
    if !(c >= T::zero()) {
        return Err(AutodiffError::Contract(format!("perturbation scale must be nonnegative, got {c}")));
    }
    let (ld, gx) = log_d(model, x)?;
    let n = gx.norm();
    let approx = ld - c * n;
    if c == T::zero() || n == T::zero() {
        return Ok(TaylorGap { exact: ld, approx });
    }
    let moved = x.zip_map(&gx, |xi, gi| xi - c * gi / n);
    let (exact, _) = log_d(model, &moved)?;
    Ok(TaylorGap { exact, approx })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct LinearScore {
        u: Vec<f64>,
        b: f64,
    }

    impl ScoreModel<f64> for LinearScore {
        fn params(&self) -> Vec<Tensor<f64>> {
            vec![Tensor::new(vec![self.u.len(), 1], self.u.clone()).unwrap(), Tensor::vector(vec![self.b])]
        }
        fn score(&self, g: &mut Graph<f64>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
            g.linear(x, p[0], p[1])
        }
    }

    fn log_sigmoid(s: f64) -> f64 {
        -(-s).exp().ln_1p()
    }

    #[test]
    fn zero_scale_gives_equal_values() {
        let m = LinearScore { u: vec![0.3, -0.4], b: 0.1 };
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let t = adv_loss_taylor_gap(&m, &x, 0.0).unwrap();
        assert_eq!(t.exact, t.approx);
    }

    #[test]
    fn linear_score_moves_exactly_along_its_gradient() {
        let m = LinearScore { u: vec![0.3, -0.4], b: 0.1 };
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let s = 0.3 - 0.8 + 0.1;
        for c in [0.1, 0.05] {
            let t = adv_loss_taylor_gap(&m, &x, c).unwrap();
            // score drops by exactly c |u|, so only the log-sigmoid curvature remains
            assert!((t.exact - log_sigmoid(s - 0.5 * c)).abs() < 1e-14);
            let slope = 1.0 / (1.0 + s.exp());
            assert!((t.approx - (log_sigmoid(s) - c * 0.5 * slope)).abs() < 1e-14);
        }
    }
}
