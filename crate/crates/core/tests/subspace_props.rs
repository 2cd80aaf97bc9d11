mod common;

use common::{accumulate_stream, gaussian, low_rank_stream, rng};
use fcro::linalg::svd_thin;
use fcro::losses::{
    corth_loss, corth_loss_with_eps, rorth_loss, target_objective, LossWeights, DEFAULT_EPS_NORM,
};
use fcro::subspace::{
    accumulate_finalize, accumulate_init, accumulate_step, build_space, captured_variance,
    largest_principal_angle_deg, SubspaceBasis,
};
use fcro::Matrix;
use proptest::prelude::*;

fn orthonormality_error(q: &Matrix) -> f64 {
    q.t_matmul(q)
        .unwrap()
        .max_abs_diff(&Matrix::identity(q.cols()))
}

#[test]
fn build_space_examples() {
    let e1 = Matrix::from_fn(4, 8, |r, _| if r == 0 { 1.0 } else { 0.0 });
    let s = build_space(&e1, 1).unwrap();
    assert!(
        s.basis()
            .max_abs_diff(&Matrix::from_fn(4, 1, |r, _| if r == 0 {
                1.0
            } else {
                0.0
            }))
            < 1e-14
    );
    assert!((s.importance()[0] - 8.0).abs() < 1e-12);

    let two = Matrix::diag(&[3.0, 1.0]);
    let s = build_space(&two, 1).unwrap();
    assert!((s.importance()[0] - 9.0).abs() < 1e-12);
    assert!((captured_variance(&two, &s).unwrap() - 0.9).abs() < 1e-12);

    assert!(build_space(&two, 3).is_err());
    assert!(build_space(&two, 0).is_err());
}

#[test]
fn captured_variance_matches_svd_oracle_and_is_monotone() {
    let z = gaussian(10, 40, &mut rng(11));
    let s = svd_thin(&z).unwrap().singular_values;
    let total: f64 = s.iter().map(|x| x * x).sum();
    let mut last = 0.0;
    for k in 1..=10 {
        let v = captured_variance(&z, &build_space(&z, k).unwrap()).unwrap();
        let oracle: f64 = s[..k].iter().map(|x| x * x).sum::<f64>() / total;
        assert!((v - oracle).abs() < 1e-9, "k={k}: {v} vs {oracle}");
        assert!(v >= last - 1e-15);
        last = v;
    }
    assert!((last - 1.0).abs() < 1e-9);
}

#[test]
fn full_rank_is_reached_at_matrix_rank() {
    let z = low_rank_stream(12, 50, 4, 0.0, 12);
    let v = captured_variance(&z, &build_space(&z, 4).unwrap()).unwrap();
    assert!((v - 1.0).abs() < 1e-9);
}

#[test]
fn rank_shortfall_is_warned() {
    let z = low_rank_stream(8, 30, 2, 0.0, 13);
    let s = build_space(&z, 4).unwrap();
    assert_eq!(s.len(), 4);
    assert!(!s.warnings().is_empty());
    assert!(orthonormality_error(s.basis()) < 1e-10);
}

#[test]
fn build_space_ignores_column_order() {
    let z = gaussian(6, 25, &mut rng(14));
    let mut idx: Vec<usize> = (0..25).collect();
    idx.reverse();
    idx.swap(3, 17);
    let a = build_space(&z, 3).unwrap();
    let b = build_space(&z.select_columns(&idx), 3).unwrap();
    assert!(largest_principal_angle_deg(a.basis(), b.basis()).unwrap() < 1e-6);
    for (x, y) in a.importance().iter().zip(b.importance()) {
        assert!((x - y).abs() < 1e-9 * x);
    }
}

#[test]
fn principal_angles_known_values() {
    for theta in [1e-9f64, 1e-4, 0.3, 1.2, std::f64::consts::FRAC_PI_2] {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, theta.cos()],
            vec![0.0, theta.sin()],
        ])
        .unwrap();
        let angles = fcro::subspace::principal_angles(&a, &b).unwrap();
        assert!(angles[0].abs() < 1e-15);
        assert!(
            (angles[1] - theta).abs() <= 1e-12 * theta.max(1e-3),
            "{theta}: {}",
            angles[1]
        );
    }
}

#[test]
fn init_equals_batch_build() {
    let z = gaussian(8, 30, &mut rng(15));
    let state = accumulate_init(&z, 4).unwrap();
    let direct = build_space(&z, 4).unwrap();
    assert_eq!(state.current().basis(), direct.basis());
    assert_eq!(state.current().importance(), direct.importance());
}

#[test]
fn batch_inside_span_keeps_old_bases() {
    let z = low_rank_stream(10, 40, 3, 0.0, 16);
    let state = accumulate_init(&z, 3).unwrap();
    let old = state.current().basis().clone();
    let inside = low_rank_stream(10, 40, 3, 0.0, 16).scale(0.5);
    let next = accumulate_step(state, &inside).unwrap();
    let kept = next.current().basis();
    // every kept direction lies in the old span
    let proj = old.matmul(&old.t_matmul(kept).unwrap()).unwrap();
    assert!(proj.max_abs_diff(kept) < 1e-8);
    assert!(orthonormality_error(kept) < 1e-8);
}

#[test]
fn stronger_orthogonal_batch_takes_over() {
    let d = 8;
    let first = Matrix::from_fn(
        d,
        20,
        |r, c| if r < 2 { ((c + r) as f64).sin() } else { 0.0 },
    );
    let state = accumulate_init(&first, 2).unwrap();
    let second = Matrix::from_fn(d, 20, |r, c| {
        if (4..6).contains(&r) {
            10.0 * ((c * 3 + r) as f64).cos()
        } else {
            0.0
        }
    });
    let next = accumulate_step(state, &second).unwrap();
    let top = next.current().basis().leading_columns(1);
    let energy_in_new: f64 = (4..6).map(|r| top[(r, 0)].powi(2)).sum();
    assert!(energy_in_new > 1.0 - 1e-10);
}

#[test]
fn single_full_batch_matches_batch_space() {
    let z = low_rank_stream(10, 60, 4, 0.05, 17);
    let state = accumulate_init(&z, 6).unwrap();
    let fin = accumulate_finalize(&state, 3).unwrap();
    let batch = build_space(&z, 3).unwrap();
    assert!(largest_principal_angle_deg(fin.basis(), batch.basis()).unwrap() < 1e-6);
}

#[test]
fn stationary_stream_accumulation_tracks_batch_space() {
    let (d, k) = (16, 3);
    let z = low_rank_stream(d, 2048, k, 0.01, 18);
    let batch = build_space(&z, k).unwrap();
    let batch_var = captured_variance(&z, &batch).unwrap();
    let fin = accumulate_stream(&z, k, 3, 128);
    let var = captured_variance(&z, &fin).unwrap();
    assert!(var >= 0.99 * batch_var, "{var} vs {batch_var}");
    assert!(largest_principal_angle_deg(fin.basis(), batch.basis()).unwrap() <= 15.0);
}

#[test]
fn finalize_picks_top_importance() {
    let z = gaussian(8, 40, &mut rng(19));
    let state = accumulate_init(&z, 6).unwrap();
    let fin = accumulate_finalize(&state, 3).unwrap();
    assert_eq!(fin.importance(), &state.current().importance()[..3]);
    let same = accumulate_finalize(&state, 6).unwrap();
    assert_eq!(same.basis(), state.current().basis());
    assert!(accumulate_finalize(&state, 7).is_err());
}

#[test]
fn corth_is_invariant_to_basis_rotation() {
    let mut g = rng(20);
    let s = build_space(&gaussian(9, 30, &mut g), 3).unwrap();
    let q = svd_thin(&gaussian(3, 3, &mut g)).unwrap().u;
    let rotated = SubspaceBasis::new(s.basis().matmul(&q).unwrap(), vec![1.0; 3], 3).unwrap();
    for _ in 0..10 {
        let z = gaussian(9, 12, &mut g);
        let a = corth_loss(&z, &s).unwrap();
        let b = corth_loss(&z, &rotated).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
        assert!(a.grad_z.max_abs_diff(&b.grad_z) < 1e-10);
    }
}

fn small(d: usize, b: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0f64..5.0, d * b).prop_map(move |v| Matrix::new(d, b, v).unwrap())
}

proptest! {
    #[test]
    fn accumulation_stays_orthonormal(seed in 0u64..1000, steps in 1usize..6) {
        let mut g = rng(seed);
        let mut state = accumulate_init(&gaussian(8, 10, &mut g), 4).unwrap();
        for _ in 0..steps {
            state = accumulate_step(state, &gaussian(8, 10, &mut g)).unwrap();
            prop_assert!(orthonormality_error(state.current().basis()) < 1e-8);
            let imp = state.current().importance();
            prop_assert!(imp.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn corth_columns_are_bounded(z in small(5, 6), seed in 0u64..100) {
        let s = build_space(&gaussian(5, 9, &mut rng(seed)), 2).unwrap();
        let total = corth_loss(&z, &s).unwrap().value;
        prop_assert!((0.0..=6.0 + 1e-12).contains(&total));
        for j in 0..6 {
            let col = z.select_columns(&[j]);
            let v = corth_loss_with_eps(&col, s.basis(), DEFAULT_EPS_NORM).unwrap().value;
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn rorth_ignores_per_sample_offsets(z_t in small(4, 5), z_a in small(4, 5), v in prop::collection::vec(-3.0f64..3.0, 5)) {
        let shifted = Matrix::from_fn(4, 5, |r, c| z_a[(r, c)] + v[c]);
        let a = rorth_loss(&z_t, &z_a).unwrap().value;
        let b = rorth_loss(&z_t, &shifted).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn rorth_is_symmetric(z_t in small(4, 5), z_a in small(4, 5)) {
        let a = rorth_loss(&z_t, &z_a).unwrap().value;
        let b = rorth_loss(&z_a, &z_t).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn objective_is_linear_in_weights(z in small(4, 6), z_a in small(4, 6), lc in 0.0f64..100.0, lr in 0.0f64..600.0) {
        let s = build_space(&gaussian(4, 8, &mut rng(1)), 2).unwrap();
        let c = corth_loss(&z, &s).unwrap();
        let r = rorth_loss(&z, &z_a).unwrap();
        let t = fcro::losses::LossResult { value: 0.3, grad_z: Matrix::zeros(4, 6), degenerate_columns: vec![] };
        let one = target_objective(&t, &c, &r, LossWeights::new(lc, lr).unwrap()).unwrap();
        let two = target_objective(&t, &c, &r, LossWeights::new(2.0 * lc, 2.0 * lr).unwrap()).unwrap();
        let extra_one = one.value - 0.3;
        prop_assert!(((two.value - 0.3) - 2.0 * extra_one).abs() <= 1e-12 * extra_one.abs().max(1.0));
        prop_assert!(two.grad_z.max_abs_diff(&one.grad_z.scale(2.0)) <= 1e-12 * one.grad_z.frobenius_norm().max(1.0));
    }
}
