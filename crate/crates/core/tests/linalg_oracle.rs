use d2lora::autodiff::Tensor;
use d2lora::linalg::{qr, svd};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng) -> Tensor {
    let (r, c) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
    Tensor::randn(&[r, c], 1.0, rng)
}

/// Singular values as square roots of the eigenvalues of the smaller Gram
/// matrix, descending.
fn eigenroot_singular_values(m: &Tensor) -> Vec<f64> {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let gram = if m.rows() >= m.cols() { a.transpose() * &a } else { &a * a.transpose() };
    let mut s: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn orthonormality_error(q: &Tensor) -> f64 {
    q.transpose().matmul(q).unwrap().max_abs_diff(&Tensor::eye(q.cols()))
}

#[test]
fn svd_matches_eigenroot_oracle_on_50_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let m = random_matrix(&mut rng);
        let f = svd(&m).unwrap();
        let rel = f.reconstruct().sub(&m).unwrap().frobenius() / m.frobenius();
        assert!(rel < 1e-10, "{:?}: reconstruction error {rel:.2e}", m.shape());
        let oracle = eigenroot_singular_values(&m);
        assert_eq!(f.s.len(), oracle.len());
        for (a, b) in f.s.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{:?}: singular value {a} vs oracle {b}", m.shape());
        }
        assert!(orthonormality_error(&f.u) < 1e-10);
        assert!(orthonormality_error(&f.v) < 1e-10);
    }
}

#[test]
fn qr_is_orthonormal_and_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let m = random_matrix(&mut rng);
        let (q, r) = qr(&m).unwrap();
        assert!(orthonormality_error(&q) < 1e-12, "{:?}", m.shape());
        assert!(q.matmul(&r).unwrap().max_abs_diff(&m) < 1e-12 * (1.0 + m.max_abs()));
        for i in 0..r.rows() {
            assert!(r.at(i, i) >= 0.0);
            for j in 0..i.min(r.cols()) {
                assert_eq!(r.at(i, j), 0.0);
            }
        }
    }
}

#[test]
fn qr_6x6_against_nalgebra() {
    let m = Tensor::randn(&[6, 6], 1.0, &mut ChaCha8Rng::seed_from_u64(66));
    let (q, r) = qr(&m).unwrap();
    let oracle = DMatrix::from_row_slice(6, 6, m.data()).qr();
    let (oq, or) = (oracle.q(), oracle.r());
    // Factors agree up to the sign of each column of Q / row of R.
    for j in 0..6 {
        let sign = if or[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..6 {
            assert!((q.at(i, j) - sign * oq[(i, j)]).abs() < 1e-10);
            assert!((r.at(j, i) - sign * or[(j, i)]).abs() < 1e-10);
        }
    }
}

#[test]
fn rank_deficient_svd_has_zero_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = Tensor::randn(&[10, 3], 1.0, &mut rng);
    let b = Tensor::randn(&[3, 12], 1.0, &mut rng);
    let f = svd(&a.matmul(&b).unwrap()).unwrap();
    assert!(f.s[3..].iter().all(|&s| s < 1e-10 * f.s[0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn singular_values_sorted_and_frobenius_preserved(seed in any::<u64>()) {
        let m = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = svd(&m).unwrap();
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        let energy: f64 = f.s.iter().map(|s| s * s).sum();
        prop_assert!((energy.sqrt() - m.frobenius()).abs() < 1e-10 * (1.0 + m.frobenius()));
    }
}
