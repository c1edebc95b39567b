//! Dense linear algebra at the `f64` boundary, backed by nalgebra.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::Scalar;

pub fn to_dmatrix<T: Scalar>(t: &Tensor<T>) -> DMatrix<f64> {
    let (r, c) = (t.rows(), t.cols());
    DMatrix::from_row_iterator(r, c, t.data().iter().map(|v| v.as_f64()))
}

pub fn from_dmatrix<T: Scalar>(m: &DMatrix<f64>) -> Tensor<T> {
    let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| T::lit(m[(i, j)]))).collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("matrix layout")
}

pub fn to_dvector<T: Scalar>(v: &[T]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|x| x.as_f64()))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Eigen-decomposition of the symmetric part `(m + m^T) / 2`.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    let min = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}
