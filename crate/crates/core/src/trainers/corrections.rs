use super::TrainerError;
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::games::Discriminator;
use crate::losses::ScoreModel;
use crate::Scalar;

/// Norms below this make `|grad_x D|` unusable as a divisor.
const DEGENERATE_NORM: f64 = 1e-12;

struct Scored<T> {
    g: Graph<T>,
    w: Vec<Var>,
    x: Var,
    /// Scalar raw score.
    s: Var,
}

fn scored<T: Scalar, M: ScoreModel<T> + ?Sized>(model: &M, x: &Tensor<T>) -> Result<Scored<T>, TrainerError> {
    let mut g = Graph::new();
    let w: Vec<Var> = model.params().into_iter().map(|p| g.param(p)).collect();
    let xv = g.param(x.clone());
    let s = model.score(&mut g, &w, xv)?;
    if g.value(s).len() != 1 {
        return Err(AutodiffError::NonScalarOutput { shape: g.shape(s).to_vec() }.into());
    }
    let s = g.sum(s)?;
    let d = g.item(s);
    // D = sigmoid(s) must be representable strictly inside (0, 1)
    let p = T::one() / (T::one() + (-d).exp());
    if !(p > T::zero() && p < T::one()) {
        return Err(AutodiffError::Contract(format!("D(x) = {p} is not strictly inside (0, 1)")).into());
    }
    Ok(Scored { g, w, x: xv, s })
}

fn flat_grad<T: Scalar>(g: &mut Graph<T>, out: Var, wrt: &[Var]) -> Result<Vec<T>, AutodiffError> {
    Ok(g.grad_values(out, wrt)?.flat())
}

/// `H_wx grad_x L` for `L = -log D(x)`, from one gradient and one mixed
/// Hessian-vector product. Flat over the model's parameters.
pub fn fr_correction_term<T: Scalar, M: ScoreModel<T> + ?Sized>(model: &M, x: &Tensor<T>) -> Result<Vec<T>, TrainerError> {
    let Scored { mut g, w, x, s } = scored(model, x)?;
    let ld = g.log_sigmoid(s)?;
    let loss = g.neg(ld)?;
    let gx = flat_grad(&mut g, loss, &[x])?;
    Ok(g.mixed_hvp_flat(loss, &w, &[x], &gx)?)
}

/// `H^D_wx g / D^2 - |g|^2 grad_w D / D^3` with `g = grad_x D`, built on `D` itself.
pub fn fr_correction_expanded<T: Scalar, M: ScoreModel<T> + ?Sized>(model: &M, x: &Tensor<T>) -> Result<Vec<T>, TrainerError> {
    let Scored { mut g, w, x, s } = scored(model, x)?;
    let d = g.sigmoid(s)?;
    let dv = g.item(d);
    let gx = flat_grad(&mut g, d, &[x])?;
    let n2: T = gx.iter().map(|&v| v * v).sum();
    let hg = g.mixed_hvp_flat(d, &w, &[x], &gx)?;
    let gw = flat_grad(&mut g, d, &w)?;
    Ok(hg.iter().zip(&gw).map(|(&h, &gwi)| h / (dv * dv) - n2 * gwi / (dv * dv * dv)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvCorrection<T> {
    /// `grad_w (|grad_x D| / D)` by differentiating through the input gradient.
    pub value: Vec<T>,
    /// `H^D_wx g / (|g| D) - |g| grad_w D / D^2`, computed separately.
    pub expansion: Vec<T>,
}

impl<T: Scalar> AdvCorrection<T> {
    /// Largest componentwise difference relative to the largest component.
    pub fn rel_err(&self) -> f64 {
        let scale = self.value.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
        let diff = self.value.iter().zip(&self.expansion).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max);
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Gradient-correction term `grad_w (|grad_x D(x)| / D(x))` and its two-term expansion.
pub fn adv_correction_term<T: Scalar, M: ScoreModel<T> + ?Sized>(
    model: &M,
    x: &Tensor<T>,
) -> Result<AdvCorrection<T>, TrainerError> {
    let expansion = {
        let Scored { mut g, w, x, s } = scored(model, x)?;
        let d = g.sigmoid(s)?;
        let dv = g.item(d);
        let gx = flat_grad(&mut g, d, &[x])?;
        let n = gx.iter().map(|&v| v * v).sum::<T>().sqrt();
        if n.as_f64() < DEGENERATE_NORM {
            return Err(TrainerError::DegenerateGradient { norm: n.as_f64() });
        }
        let hg = g.mixed_hvp_flat(d, &w, &[x], &gx)?;
        let gw = flat_grad(&mut g, d, &w)?;
        hg.iter().zip(&gw).map(|(&h, &gwi)| h / (n * dv) - n * gwi / (dv * dv)).collect()
    };

    // |grad_x D| / D = |grad_x log D|
    let Scored { mut g, w, x, s } = scored(model, x)?;
    let ld = g.log_sigmoid(s)?;
    let gx = g.grad(ld, &[x])?[0];
    let n2 = g.squared_norm(gx)?;
    let q = g.sqrt(n2)?;
    let value = flat_grad(&mut g, q, &w)?;
    Ok(AdvCorrection { value, expansion })
}

/// A copy of `disc` whose probability output has `|grad_x D(x0)| = 1`, obtained by
/// rescaling the first trunk layer about `x0` so the activations at `x0` are unchanged.
pub fn unit_input_gradient_at<T: Scalar>(disc: &Discriminator<T>, x0: &Tensor<T>) -> Result<Discriminator<T>, TrainerError> {
    let Scored { mut g, x, s, .. } = scored(disc, x0)?;
    let d = g.sigmoid(s)?;
    let gx = flat_grad(&mut g, d, &[x])?;
    let n = gx.iter().map(|&v| v * v).sum::<T>().sqrt();
    if n.as_f64() < DEGENERATE_NORM {
        return Err(TrainerError::DegenerateGradient { norm: n.as_f64() });
    }
    let mut out = disc.clone();
    let first = &mut out.trunk.layers[0];
    let x0w = x0.reshape(vec![1, x0.len()])?.matmul(&first.weight)?;
    let keep = T::one() - n.recip();
    first.bias = first.bias.zip_map(&x0w.reshape(vec![x0w.len()])?, |b, a| b + a * keep);
    first.weight = first.weight.scale(n.recip());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `s(w, x) = w0 x + w1 x^2` on scalar input.
    struct Quadratic(f64, f64);

    impl ScoreModel<f64> for Quadratic {
        fn params(&self) -> Vec<Tensor<f64>> {
            vec![Tensor::vector(vec![self.0]), Tensor::vector(vec![self.1])]
        }
        fn score(&self, g: &mut Graph<f64>, p: &[Var], x: Var) -> Result<Var, AutodiffError> {
            let x = g.reshape(x, vec![1])?;
            let a = g.mul(p[0], x)?;
            let x2 = g.mul(x, x)?;
            let b = g.mul(p[1], x2)?;
            g.add(a, b)
        }
    }

    fn sigmoid(s: f64) -> f64 {
        1.0 / (1.0 + (-s).exp())
    }

    #[test]
    fn one_dimensional_quadratic_matches_closed_form() {
        let (w0, w1, x) = (0.7, -0.3, 0.9);
        let m = Quadratic(w0, w1);
        let xt = Tensor::new(vec![1, 1], vec![x]).unwrap();
        let fr = fr_correction_term(&m, &xt).unwrap();

        // L = -log sigmoid(s); dL/ds = -(1 - D); d2L/ds2 = D(1 - D)
        let s = w0 * x + w1 * x * x;
        let d = sigmoid(s);
        let sx = w0 + 2.0 * w1 * x;
        let lx = -(1.0 - d) * sx;
        let ds_dw = [x, x * x];
        let dsx_dw = [1.0, 2.0 * x];
        for i in 0..2 {
            let lwx = d * (1.0 - d) * ds_dw[i] * sx - (1.0 - d) * dsx_dw[i];
            assert!((fr[i] - lwx * lx).abs() < 1e-13, "{i}: {} vs {}", fr[i], lwx * lx);
        }
        let expanded = fr_correction_expanded(&m, &xt).unwrap();
        for i in 0..2 {
            assert!((fr[i] - expanded[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn critical_point_of_d_gives_zero_correction() {
        // s = w0 x + w1 x^2 with w0 = 0 is critical at x = 0
        let m = Quadratic(0.0, 0.5);
        let x = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        assert!(fr_correction_term(&m, &x).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(adv_correction_term(&m, &x), Err(TrainerError::DegenerateGradient { .. })));
    }

    #[test]
    fn adv_correction_expansion_agrees() {
        let m = Quadratic(0.4, 0.25);
        let x = Tensor::new(vec![1, 1], vec![-1.3]).unwrap();
        let a = adv_correction_term(&m, &x).unwrap();
        assert!(a.rel_err() < 1e-10, "{a:?}");
    }
}
