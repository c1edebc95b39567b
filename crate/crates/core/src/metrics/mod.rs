//! Sample-quality metrics: Fréchet distance between Gaussian fits, a
//! classifier-based score, and mixture diagnostics.

mod classifier;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::games::{GanNetworks, LabeledDataset};
use crate::linalg;
use crate::rng::{self, Stream};
use crate::Scalar;

pub use classifier::FrozenClassifier;

/// Eigenvalues above `-PSD_TOL` count as zero.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("covariance is not symmetric")]
    Asymmetric,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("row {row} is not a probability distribution (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("invalid metric input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
    pub sample_count: usize,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>, sample_count: usize) -> Result<Self, MetricsError> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(MetricsError::DimensionMismatch(d * d, covariance.len()));
        }
        let s = Self { mean, covariance, sample_count };
        let m = s.cov_matrix();
        if !linalg::is_symmetric(&m, 1e-12 * m.amax().max(1.0)) {
            return Err(MetricsError::Asymmetric);
        }
        if d > 0 {
            let min = linalg::symmetric_eigen(&m).eigenvalues.min();
            if min < -PSD_TOL {
                return Err(MetricsError::NotPsd(min));
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }
}

/// PSD square root by eigen-decomposition, clamping tiny negative eigenvalues.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let e = linalg::symmetric_eigen(m);
    let mut vals = e.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -PSD_TOL {
            return Err(MetricsError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch(a.dim(), b.dim()));
    }
    if a.mean == b.mean && a.covariance == b.covariance {
        return Ok(0.0);
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let (s1, s2) = (a.cov_matrix(), b.cov_matrix());
    let r1 = psd_sqrt(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let cross: f64 = linalg::symmetric_eigen(&inner)
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < -PSD_TOL {
                Err(MetricsError::NotPsd(v))
            } else {
                Ok(v.max(0.0).sqrt())
            }
        })
        .sum::<Result<f64, _>>()?;
    Ok((mean_term + s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

fn check_rows(probs: &Tensor<f64>) -> Result<(usize, usize), MetricsError> {
    if probs.ndim() != 2 || probs.rows() == 0 {
        return Err(MetricsError::Invalid(format!("expected a non-empty n x C matrix, got {:?}", probs.shape())));
    }
    let (n, c) = (probs.rows(), probs.cols());
    for i in 0..n {
        let row = &probs.data()[i * c..(i + 1) * c];
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-8 {
            return Err(MetricsError::NotNormalized { row: i, sum });
        }
    }
    Ok((n, c))
}

fn xlogy_ratio(p: f64, q: f64) -> f64 {
    if p > 0.0 {
        p * (p / q).ln()
    } else {
        0.0
    }
}

/// `exp(mean_i KL(p(y|x_i) || p(y)))` with `p(y)` the row mean.
pub fn classifier_score(probs: &Tensor<f64>) -> Result<f64, MetricsError> {
    let (n, c) = check_rows(probs)?;
    let mut marginal = vec![0.0; c];
    for i in 0..n {
        for (m, p) in marginal.iter_mut().zip(&probs.data()[i * c..(i + 1) * c]) {
            *m += p;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= n as f64);
    let mean_kl = (0..n)
        .map(|i| probs.data()[i * c..(i + 1) * c].iter().zip(&marginal).map(|(&p, &q)| xlogy_ratio(p, q)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    // the mean KL is a mutual information, so it lies in [0, ln C]; clamp rounding only
    Ok(mean_kl.clamp(0.0, (c as f64).ln()).exp())
}

/// A fixed map from samples to feature vectors.
pub trait FeatureMap {
    fn name(&self) -> &'static str;
    fn features(&self, samples: &Tensor<f64>) -> Result<Tensor<f64>, MetricsError>;
}

pub struct IdentityFeatures;

impl FeatureMap for IdentityFeatures {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn features(&self, samples: &Tensor<f64>) -> Result<Tensor<f64>, MetricsError> {
        Ok(samples.clone())
    }
}

/// Mean and unbiased covariance of `map(samples)`.
pub fn feature_stats(samples: &Tensor<f64>, map: &dyn FeatureMap) -> Result<GaussianStats, MetricsError> {
    let f = map.features(samples)?;
    if f.ndim() != 2 {
        return Err(MetricsError::Invalid(format!("features must be n x d, got {:?}", f.shape())));
    }
    let (n, d) = (f.rows(), f.cols());
    if n < d + 1 {
        return Err(MetricsError::InsufficientSamples { needed: d + 1, got: n });
    }
    let m = DMatrix::from_row_slice(n, d, f.data());
    let mean: DVector<f64> = m.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;
    let covariance = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
    GaussianStats::new(mean.iter().copied().collect(), covariance, n)
}

/// Fraction of modes with at least `max(1, n / (10 C))` samples within
/// `radius_mult * mode_std` of their centre, and the per-mode counts.
pub fn mode_coverage<T: Scalar>(
    samples: &Tensor<f64>,
    dataset: &LabeledDataset<T>,
    radius_mult: f64,
) -> Result<(f64, Vec<usize>), MetricsError> {
    if !(radius_mult > 0.0) {
        return Err(MetricsError::Invalid(format!("radius_mult must be positive, got {radius_mult}")));
    }
    let d = dataset.dim();
    if samples.ndim() != 2 || samples.cols() != d {
        return Err(MetricsError::DimensionMismatch(d, samples.shape().last().copied().unwrap_or(0)));
    }
    let c = dataset.class_count;
    let r2 = (radius_mult * dataset.mode_std.as_f64()).powi(2);
    let centers = dataset.mode_centers.data();
    let mut counts = vec![0usize; c];
    for row in samples.data().chunks(d) {
        for (k, count) in counts.iter_mut().enumerate() {
            let dist2: f64 = row.iter().zip(&centers[k * d..(k + 1) * d]).map(|(a, b)| (a - b.as_f64()).powi(2)).sum();
            if dist2 <= r2 {
                *count += 1;
            }
        }
    }
    let threshold = (samples.rows() as f64 / (10 * c) as f64).max(1.0);
    let covered = counts.iter().filter(|&&k| k as f64 >= threshold).count();
    Ok((covered as f64 / c as f64, counts))
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Mean over conditioning classes of the entropy of the class-averaged classifier output.
/// Each entry holds the `[n_c, C]` classifier outputs for samples generated with one label.
pub fn conditional_entropy(probs_by_class: &[Tensor<f64>]) -> Result<f64, MetricsError> {
    if probs_by_class.is_empty() {
        return Err(MetricsError::Invalid("no conditioning classes".into()));
    }
    let mut total = 0.0;
    for probs in probs_by_class {
        let (n, c) = check_rows(probs)?;
        let mut mean = vec![0.0; c];
        for row in probs.data().chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, p)| *m += p / n as f64);
        }
        total += entropy(&mean);
    }
    Ok(total / probs_by_class.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub fid: f64,
    pub classifier_score: f64,
    pub mode_coverage: f64,
    pub conditional_entropy: f64,
    pub sample_count: usize,
}

/// Fixed evaluation setup for one dataset: real statistics, frozen classifier, sample budget.
pub struct Evaluator<'a, T> {
    pub dataset: &'a LabeledDataset<T>,
    pub real_stats: GaussianStats,
    pub classifier: FrozenClassifier,
    pub sample_count: usize,
    pub radius_mult: f64,
    pub seed: u64,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(dataset: &'a LabeledDataset<T>, sample_count: usize, radius_mult: f64, seed: u64) -> Result<Self, MetricsError> {
        let real = to_f64(&dataset.samples);
        Ok(Self {
            dataset,
            real_stats: feature_stats(&real, &IdentityFeatures)?,
            classifier: FrozenClassifier::train(dataset, seed)?,
            sample_count,
            radius_mult,
            seed,
        })
    }

    /// Generates `sample_count` labelled samples (labels cycle through the classes)
    /// from the same evaluation noise on every call, and scores them.
    pub fn evaluate(&self, nets: &GanNetworks<T>) -> Result<MetricsRecord, MetricsError> {
        let n = self.sample_count;
        let c = self.dataset.class_count;
        let gen = &nets.generator;
        let mut eval_rng = rng::stream(self.seed, Stream::Eval);
        let z = Tensor::new(vec![n, gen.noise_dim], rng::standard_normal(&mut eval_rng, n * gen.noise_dim))?;
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let samples = to_f64(&gen.generate(&z, &labels)?);
        if !samples.is_finite() {
            return Err(MetricsError::Invalid("generator produced non-finite samples".into()));
        }
        self.score_samples(&samples, &labels)
    }

    pub fn score_samples(&self, samples: &Tensor<f64>, labels: &[usize]) -> Result<MetricsRecord, MetricsError> {
        let c = self.dataset.class_count;
        let fid = frechet_distance(&feature_stats(samples, &IdentityFeatures)?, &self.real_stats)?;
        let probs = self.classifier.probs(samples)?;
        let classifier_score = classifier_score(&probs)?;
        let (mode_coverage, _) = mode_coverage(samples, self.dataset, self.radius_mult)?;
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); c];
        for (row, &l) in probs.data().chunks(c).zip(labels) {
            by_class[l].extend_from_slice(row);
        }
        let groups: Vec<Tensor<f64>> = by_class
            .into_iter()
            .filter(|v| !v.is_empty())
            .map(|v| Tensor::new(vec![v.len() / c, c], v))
            .collect::<Result<_, _>>()?;
        Ok(MetricsRecord {
            fid,
            classifier_score,
            mode_coverage,
            conditional_entropy: conditional_entropy(&groups)?,
            sample_count: samples.rows(),
        })
    }
}

pub fn to_f64<T: Scalar>(t: &Tensor<T>) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.as_f64()).collect()).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::sample_gaussian_mixture;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        GaussianStats::new(mean, cov, 100).unwrap()
    }

    #[test]
    fn frechet_examples() {
        let a = stats(vec![0.3, -1.0], vec![1.0, 0.2, 0.2, 2.0]);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let d = frechet_distance(&stats(vec![0.0], vec![1.0]), &stats(vec![1.0], vec![1.0])).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let d = frechet_distance(&stats(vec![0.0; 2], vec![1.0, 0.0, 0.0, 2.0]), &stats(vec![0.0; 2], vec![2.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((d - 2.0 * (1.0 - 2f64.sqrt()).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        assert!(matches!(GaussianStats::new(vec![0.0; 2], vec![1.0, 0.5, 0.0, 1.0], 3), Err(MetricsError::Asymmetric)));
        assert!(matches!(GaussianStats::new(vec![0.0; 2], vec![1.0, 2.0, 2.0, 1.0], 3), Err(MetricsError::NotPsd(_))));
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(MetricsError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn classifier_score_examples() {
        let uniform = Tensor::filled(vec![5, 4], 0.25);
        assert!((classifier_score(&uniform).unwrap() - 1.0).abs() < 1e-12);
        let balanced = Tensor::one_hot(&(0..10).collect::<Vec<_>>(), 10).unwrap();
        assert!((classifier_score(&balanced).unwrap() - 10.0).abs() < 1e-12);
        let collapsed = Tensor::one_hot(&[3; 10], 10).unwrap();
        assert!((classifier_score(&collapsed).unwrap() - 1.0).abs() < 1e-12);
        assert!(classifier_score(&Tensor::filled(vec![2, 2], 0.6)).is_err());
    }

    #[test]
    fn feature_stats_examples() {
        let constant = Tensor::filled(vec![10, 2], 1.5);
        let s = feature_stats(&constant, &IdentityFeatures).unwrap();
        assert_eq!(s.mean, vec![1.5, 1.5]);
        assert!(s.covariance.iter().all(|&v| v == 0.0));
        assert!(matches!(
            feature_stats(&Tensor::zeros(vec![2, 2]), &IdentityFeatures),
            Err(MetricsError::InsufficientSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn coverage_examples() {
        let ds = sample_gaussian_mixture::<f64>(8, 2.0, 0.02, 800, 0).unwrap();
        let (cov, counts) = mode_coverage(&ds.samples, &ds, 3.0).unwrap();
        assert_eq!(cov, 1.0);
        assert!(counts.iter().all(|&k| k > 90));

        let one = Tensor::new(vec![100, 2], ds.mode_centers.data()[..2].repeat(100)).unwrap();
        assert_eq!(mode_coverage(&one, &ds, 3.0).unwrap().0, 0.125);

        let half: Vec<f64> = (0..ds.len()).filter(|&i| ds.labels[i] < 4).flat_map(|i| ds.row(i).to_vec()).collect();
        let half = Tensor::new(vec![half.len() / 2, 2], half).unwrap();
        assert_eq!(mode_coverage(&half, &ds, 3.0).unwrap().0, 0.5);
    }

    #[test]
    fn conditional_entropy_examples() {
        let peaked: Vec<Tensor<f64>> = (0..3).map(|k| Tensor::one_hot(&[k; 4], 3).unwrap()).collect();
        assert_eq!(conditional_entropy(&peaked).unwrap(), 0.0);
        let uniform = vec![Tensor::filled(vec![4, 8], 0.125)];
        assert!((conditional_entropy(&uniform).unwrap() - 8f64.ln()).abs() < 1e-12);
        let split = vec![Tensor::one_hot(&[0, 1, 0, 1], 4).unwrap()];
        assert!((conditional_entropy(&split).unwrap() - 2f64.ln()).abs() < 1e-12);
    }
}
