mod common;

use common::{gaussian, rng};
use fcro::linalg::svd_thin;
use fcro::Matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn orthonormality_error(q: &Matrix) -> f64 {
    q.t_matmul(q)
        .unwrap()
        .max_abs_diff(&Matrix::identity(q.cols()))
}

fn rel_reconstruction_error(m: &Matrix) -> f64 {
    let svd = svd_thin(m).unwrap();
    let diff = svd.reconstruct().sub(m).unwrap().frobenius_norm();
    diff / m.frobenius_norm().max(f64::MIN_POSITIVE)
}

#[test]
fn reconstruction_and_orthonormality_up_to_64_by_256() {
    let mut r = rng(1);
    for (rows, cols) in [
        (5, 4),
        (4, 5),
        (16, 16),
        (64, 256),
        (256, 64),
        (1, 7),
        (7, 1),
    ] {
        let m = gaussian(rows, cols, &mut r);
        let svd = svd_thin(&m).unwrap();
        let k = rows.min(cols);
        assert_eq!(svd.u.shape(), (rows, k));
        assert_eq!(svd.v.shape(), (cols, k));
        assert!(rel_reconstruction_error(&m) < 1e-10, "{rows}x{cols}");
        assert!(orthonormality_error(&svd.u) < 1e-10, "{rows}x{cols} u");
        assert!(orthonormality_error(&svd.v) < 1e-10, "{rows}x{cols} v");
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(svd.singular_values.iter().all(|s| *s >= 0.0));
    }
}

#[test]
fn singular_values_agree_with_nalgebra() {
    let mut r = rng(2);
    for (rows, cols) in [(5, 4), (8, 3), (3, 9), (32, 48)] {
        let m = gaussian(rows, cols, &mut r);
        let ours = svd_thin(&m).unwrap().singular_values;
        let mut theirs: Vec<f64> = to_na(&m).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() <= 1e-10 * theirs[0], "{a} vs {b}");
        }
    }
}

#[test]
fn left_vectors_are_gram_eigenvectors() {
    let mut r = rng(3);
    for size in 2..=8 {
        let m = gaussian(size, size + 3, &mut r);
        let svd = svd_thin(&m).unwrap();
        let eig = to_na(&m.gram()).symmetric_eigen();
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (j, &e) in order.iter().enumerate() {
            let u = svd.u.column(j);
            let w = eig.eigenvectors.column(e);
            let dot: f64 = u.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-8,
                "size {size} vector {j}: |dot| = {}",
                dot.abs()
            );
            let lambda = eig.eigenvalues[e];
            assert!((svd.singular_values[j].powi(2) - lambda).abs() < 1e-9 * lambda.abs().max(1.0));
        }
    }
}

#[test]
fn sign_convention_and_determinism() {
    let m = gaussian(12, 20, &mut rng(4));
    let a = svd_thin(&m).unwrap();
    let b = svd_thin(&m).unwrap();
    assert_eq!(a, b);
    for j in 0..a.u.cols() {
        let col = a.u.column(j);
        let big = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        assert!(big > 0.0);
    }
}

#[test]
fn rank_deficient_input_keeps_orthonormal_factors() {
    let mut r = rng(5);
    let left = gaussian(20, 3, &mut r);
    let right = gaussian(3, 30, &mut r);
    let m = left.matmul(&right).unwrap();
    let svd = svd_thin(&m).unwrap();
    assert!(rel_reconstruction_error(&m) < 1e-10);
    assert!(orthonormality_error(&svd.u) < 1e-10);
    assert!(orthonormality_error(&svd.v) < 1e-10);
    assert!(svd.singular_values[3..]
        .iter()
        .all(|s| *s < 1e-10 * svd.singular_values[0]));
    assert_eq!(svd.numerical_rank(1e-10), 3);
}

#[test]
fn gram_examples() {
    assert_eq!(Matrix::identity(2).gram(), Matrix::identity(2));
    let v = Matrix::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
    assert_eq!(
        v.gram(),
        Matrix::from_rows(&[vec![9.0, 12.0], vec![12.0, 16.0]]).unwrap()
    );
    assert_eq!(v.col_norms(), vec![5.0]);
    assert_eq!(Matrix::zeros(3, 2).frobenius_norm(), 0.0);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let err = Matrix::zeros(2, 3)
        .matmul(&Matrix::zeros(2, 3))
        .unwrap_err()
        .to_string();
    assert!(err.contains("(2, 3)"), "{err}");
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |data| Matrix::new(r, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn svd_reconstructs(m in matrix_strategy()) {
        let svd = svd_thin(&m).unwrap();
        let scale = m.frobenius_norm().max(1e-300);
        prop_assert!(svd.reconstruct().sub(&m).unwrap().frobenius_norm() <= 1e-10 * scale.max(1.0));
        prop_assert!(orthonormality_error(&svd.u) < 1e-10);
        prop_assert!(orthonormality_error(&svd.v) < 1e-10);
    }

    #[test]
    fn squared_singular_values_sum_to_frobenius(m in matrix_strategy()) {
        let s = svd_thin(&m).unwrap().singular_values;
        let total: f64 = s.iter().map(|x| x * x).sum();
        let f = m.frobenius_norm_sq();
        prop_assert!((total - f).abs() <= 1e-9 * f.max(1e-300));
    }

    #[test]
    fn gram_is_symmetric_psd(m in matrix_strategy()) {
        let g = m.gram();
        prop_assert!(g.max_abs_diff(&g.transpose()) <= 1e-12 * g.frobenius_norm().max(1.0));
        let eig = to_na(&g).symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10 * g.frobenius_norm().max(1.0));
    }

    #[test]
    fn csv_round_trip(m in matrix_strategy()) {
        prop_assert_eq!(Matrix::from_csv_str(&m.to_csv_string()).unwrap(), m);
    }
}
