use fastgan_core::autodiff::Tensor;
use fastgan_core::games::{build_mlp_gan, sample_gaussian_mixture};
use fastgan_core::metrics::*;
use fastgan_core::rng::{self, Stream};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stats(rng: &mut ChaCha8Rng, d: usize) -> GaussianStats {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let cov = &m * m.transpose() + DMatrix::identity(d, d) * 0.05;
    let flat = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
    GaussianStats::new((0..d).map(|_| rng.random_range(-2.0..2.0)).collect(), flat, 100).unwrap()
}

fn diag_stats(mean: Vec<f64>, var: &[f64]) -> GaussianStats {
    let d = var.len();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        cov[i * d + i] = var[i];
    }
    GaussianStats::new(mean, cov, 100).unwrap()
}

fn probs(rows: usize, c: usize, raw: &[f64]) -> Tensor<f64> {
    let mut data = raw.to_vec();
    for row in data.chunks_mut(c) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(vec![rows, c], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_stats(&mut rng, d), random_stats(&mut rng, d));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
        prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn frechet_matches_codiagonal_closed_form(
        v1 in prop::collection::vec(0.01..5.0f64, 1..6),
        shift in -3.0..3.0f64,
    ) {
        let d = v1.len();
        let v2: Vec<f64> = v1.iter().rev().map(|v| v * 1.7 + 0.1).collect();
        let mut m2 = vec![0.0; d];
        m2[0] = shift;
        let got = frechet_distance(&diag_stats(vec![0.0; d], &v1), &diag_stats(m2, &v2)).unwrap();
        let want = shift * shift + v1.iter().zip(&v2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>();
        prop_assert!((got - want).abs() <= 1e-8 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn classifier_score_bounds_and_permutation(raw in prop::collection::vec(0.001..1.0f64, 40), c in 2usize..6, perm_seed in any::<u64>()) {
        let rows = raw.len() / c;
        let p = probs(rows, c, &raw[..rows * c]);
        let s = classifier_score(&p).unwrap();
        prop_assert!(s >= 1.0 && s <= c as f64 + 1e-12);

        let mut order: Vec<usize> = (0..rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..rows).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<f64> = order.iter().flat_map(|&r| p.data()[r * c..(r + 1) * c].to_vec()).collect();
        let s2 = classifier_score(&Tensor::new(vec![rows, c], shuffled).unwrap()).unwrap();
        prop_assert!((s - s2).abs() < 1e-12);

        let constant: Vec<f64> = (0..rows).flat_map(|_| p.data()[..c].to_vec()).collect();
        let s3 = classifier_score(&Tensor::new(vec![rows, c], constant).unwrap()).unwrap();
        prop_assert!((s3 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feature_covariance_is_psd(data in prop::collection::vec(-3.0..3.0f64, 30)) {
        let s = feature_stats(&Tensor::new(vec![10, 3], data).unwrap(), &IdentityFeatures).unwrap();
        let cov = s.cov_matrix();
        prop_assert_eq!(&cov, &cov.transpose());
        prop_assert!(cov.symmetric_eigenvalues().iter().all(|&l| l > -1e-10));
    }
}

#[test]
fn frechet_examples() {
    let one = |m: f64| diag_stats(vec![m], &[1.0]);
    assert!((frechet_distance(&one(0.0), &one(1.0)).unwrap() - 1.0).abs() < 1e-8);
    let fid = frechet_distance(&diag_stats(vec![0.0; 2], &[1.0, 2.0]), &diag_stats(vec![0.0; 2], &[2.0, 1.0])).unwrap();
    assert!((fid - 2.0 * (1.0 - 2f64.sqrt()).powi(2)).abs() < 1e-12);
    assert!(frechet_distance(&one(0.0), &diag_stats(vec![0.0; 2], &[1.0, 1.0])).is_err());
    assert!(GaussianStats::new(vec![0.0; 2], vec![1.0, 2.0, 2.0, 1.0], 10).is_err());
}

#[test]
fn classifier_score_examples() {
    let uniform = Tensor::new(vec![5, 4], vec![0.25; 20]).unwrap();
    assert!((classifier_score(&uniform).unwrap() - 1.0).abs() < 1e-10);
    let mut balanced = vec![0.0; 100];
    for i in 0..10 {
        balanced[i * 10 + i] = 1.0;
    }
    assert!((classifier_score(&Tensor::new(vec![10, 10], balanced).unwrap()).unwrap() - 10.0).abs() < 1e-10);
    let mut collapsed = vec![0.0; 100];
    for i in 0..10 {
        collapsed[i * 10] = 1.0;
    }
    assert!((classifier_score(&Tensor::new(vec![10, 10], collapsed).unwrap()).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn feature_stats_examples() {
    let constant = Tensor::new(vec![4, 2], vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap();
    assert!(feature_stats(&constant, &IdentityFeatures).unwrap().covariance.iter().all(|&v| v == 0.0));
    assert!(feature_stats(&Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap(), &IdentityFeatures).is_err());

    let n = 100_000;
    let mut r = rng::stream(4, Stream::Eval);
    let z = Tensor::new(vec![n, 2], rng::standard_normal::<f64>(&mut r, 2 * n)).unwrap();
    let s = feature_stats(&z, &IdentityFeatures).unwrap();
    let again = feature_stats(&z, &IdentityFeatures).unwrap();
    assert_eq!(s, again);
    let eye = [1.0, 0.0, 0.0, 1.0];
    assert!(s.covariance.iter().zip(eye).all(|(a, b)| (a - b).abs() < 0.05));
}

#[test]
fn mode_coverage_examples() {
    let d = sample_gaussian_mixture::<f64>(8, 2.0, 0.05, 800, 0).unwrap();
    assert_eq!(mode_coverage(&d.samples, &d, 3.0).unwrap().0, 1.0);

    let c = d.mode_centers.data();
    let one_mode: Vec<f64> = (0..200).flat_map(|_| [c[0], c[1]]).collect();
    let (cov, counts) = mode_coverage(&Tensor::new(vec![200, 2], one_mode).unwrap(), &d, 3.0).unwrap();
    assert_eq!(cov, 1.0 / 8.0);
    assert_eq!(counts[0], 200);

    let half: Vec<f64> = (0..d.len()).filter(|&i| d.labels[i] < 4).flat_map(|i| d.row(i).to_vec()).collect();
    let rows = half.len() / 2;
    assert_eq!(mode_coverage(&Tensor::new(vec![rows, 2], half).unwrap(), &d, 3.0).unwrap().0, 0.5);
}

#[test]
fn conditional_entropy_examples() {
    let onehot = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(conditional_entropy(&[onehot]).unwrap(), 0.0);
    let uniform = Tensor::new(vec![3, 8], vec![0.125; 24]).unwrap();
    assert!((conditional_entropy(&[uniform]).unwrap() - 8f64.ln()).abs() < 1e-12);
    let split = Tensor::new(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert!((conditional_entropy(&[split]).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn evaluation_is_deterministic() {
    let d = sample_gaussian_mixture::<f64>(4, 2.0, 0.05, 400, 1).unwrap();
    let nets = build_mlp_gan::<f64>(2, 8, 1, 2, 4, 1).unwrap();
    let a = Evaluator::new(&d, 500, 3.0, 1).unwrap().evaluate(&nets).unwrap();
    let b = Evaluator::new(&d, 500, 3.0, 1).unwrap().evaluate(&nets).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sample_count, 500);
    assert!((0.0..=1.0).contains(&a.mode_coverage));
    assert!(a.classifier_score >= 1.0 && a.classifier_score <= 4.0);
}
