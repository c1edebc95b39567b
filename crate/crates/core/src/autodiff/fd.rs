use super::Tensor;
use crate::Scalar;

/// Central-difference gradient of a black-box scalar function.
pub fn finite_diff_grad<T: Scalar>(f: impl Fn(&Tensor<T>) -> T, point: &Tensor<T>, h: T) -> Tensor<T> {
    let two_h = h + h;
    let mut probe = point.clone();
    let mut out = Tensor::zeros_like(point);
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / two_h;
    }
    out
}

/// Central-difference Jacobian of a vector function, row `i` = d out / d point_i.
pub fn finite_diff_jacobian<T: Scalar>(
    f: impl Fn(&Tensor<T>) -> Vec<T>,
    point: &Tensor<T>,
    h: T,
) -> Vec<Vec<T>> {
    let two_h = h + h;
    let mut probe = point.clone();
    (0..point.len())
        .map(|i| {
            let orig = point.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            up.iter().zip(&down).map(|(&u, &d)| (u - d) / two_h).collect()
        })
        .collect()
}

/// Relative error `|a - b| / max(|b|, floor)` maximised over elements, with `floor`
/// guarding near-zero references.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}
