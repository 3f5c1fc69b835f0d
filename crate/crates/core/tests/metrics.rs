use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simda_core::evalbench::{cosine, frechet_distance, mean_pairwise_cosine, FeatureSet, VideoFeatureExtractor};
use simda_core::Tensor;

fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureSet {
    FeatureSet::from_moments(DVector::from_vec(mean), cov).unwrap()
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    use rand::Rng;
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

#[test]
fn identical_sets_are_at_distance_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cov = random_spd(6, &mut rng);
    let a = gaussian(vec![0.3; 6], cov.clone());
    let b = gaussian(vec![0.3; 6], cov);
    assert_abs_diff_eq!(frechet_distance(&a, &b).unwrap(), 0.0, epsilon = 1e-6);
}

#[test]
fn mean_shift_gives_squared_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cov = random_spd(5, &mut rng);
    let delta = [0.5, -1.0, 2.0, 0.0, 0.25];
    let a = gaussian(vec![0.0; 5], cov.clone());
    let b = gaussian(delta.to_vec(), cov);
    let norm2: f64 = delta.iter().map(|d| d * d).sum();
    assert_abs_diff_eq!(frechet_distance(&a, &b).unwrap(), norm2, epsilon = 1e-6);
}

#[test]
fn one_dimensional_closed_form() {
    // W2^2 between N(m1, s1^2) and N(m2, s2^2) is (m1-m2)^2 + (s1-s2)^2.
    let a = gaussian(vec![1.0], DMatrix::from_element(1, 1, 4.0));
    let b = gaussian(vec![-0.5], DMatrix::from_element(1, 1, 0.25));
    assert_abs_diff_eq!(frechet_distance(&a, &b).unwrap(), 1.5f64.powi(2) + 1.5f64.powi(2), epsilon = 1e-12);
}

proptest! {
    #[test]
    fn commuting_covariances(seed in any::<u64>(), n in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_spd(n, &mut rng).symmetric_eigen().eigenvectors;
        let da: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..3.0)).collect();
        let db: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..3.0)).collect();
        let ca = &q * DMatrix::from_diagonal(&DVector::from_vec(da.clone())) * q.transpose();
        let cb = &q * DMatrix::from_diagonal(&DVector::from_vec(db.clone())) * q.transpose();
        let oracle: f64 = da.iter().zip(&db).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
        let got = frechet_distance(&gaussian(vec![0.0; n], ca), &gaussian(vec![0.0; n], cb)).unwrap();
        prop_assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn symmetric_and_nonnegative(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(vec![0.1; n], random_spd(n, &mut rng));
        let b = gaussian(vec![-0.2; n], random_spd(n, &mut rng));
        let (ab, ba) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
    }
}

#[test]
fn sample_covariance_is_unbiased() {
    let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
    let fs = FeatureSet::from_rows(&rows).unwrap();
    // Hand-computed: means (3, 3); cov = [[4, -1], [-1, 7]].
    assert_abs_diff_eq!(fs.mean[0], 3.0);
    assert_abs_diff_eq!(fs.cov[(0, 0)], 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(fs.cov[(0, 1)], -1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(fs.cov[(1, 1)], 7.0, epsilon = 1e-12);
    assert!(FeatureSet::from_rows(&rows[..1]).is_err());
}

#[test]
fn pairwise_cosine() {
    assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert_abs_diff_eq!(cosine(&[1.0, 1.0], &[2.0, 2.0]), 1.0, epsilon = 1e-12);
    let same = vec![vec![0.3, -0.1, 2.0]; 5];
    assert_abs_diff_eq!(mean_pairwise_cosine(&same).unwrap(), 1.0, epsilon = 1e-12);
    let mixed = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let oracle = (0.0 + 2f64.sqrt() / 2.0 + 2f64.sqrt() / 2.0) / 3.0;
    assert_abs_diff_eq!(mean_pairwise_cosine(&mixed).unwrap(), oracle, epsilon = 1e-12);
    assert!(mean_pairwise_cosine(&same[..1]).is_err());
}

#[test]
fn video_features_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clip = Tensor::<f32>::rand_uniform(&[8, 3, 8, 8], 0.0, 1.0, &mut rng);
    let a = VideoFeatureExtractor::new(8, 8, 12, 5).features(&clip).unwrap();
    let b = VideoFeatureExtractor::new(8, 8, 12, 5).features(&clip).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 12);
    assert!(VideoFeatureExtractor::new(8, 8, 12, 5).features(&clip.narrow(0, 0, 3).unwrap()).is_err());
}
