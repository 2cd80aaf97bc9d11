#![allow(dead_code)]

pub mod erm;
pub mod grad;
pub mod oracles;

use fcro::linalg::svd_thin;
use fcro::subspace::{
    accumulate_finalize, accumulate_init, accumulate_step, AccumulationState, SubspaceBasis,
};
use fcro::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn bits(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// Max over entries of |analytic − numeric| / max(|analytic|, |numeric|, floor).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`, entry by entry.
pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// d×n samples from a fixed random rank-`r` subspace plus isotropic noise.
pub fn low_rank_stream(d: usize, n: usize, r: usize, noise: f64, seed: u64) -> Matrix {
    let mut g = rng(seed);
    let basis = svd_thin(&gaussian(d, r, &mut g)).unwrap().u;
    let scales: Vec<f64> = (0..r).map(|i| 3.0 - i as f64 * 0.7).collect();
    let mut coeff = gaussian(r, n, &mut g);
    for (i, s) in scales.iter().enumerate() {
        coeff.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    basis
        .matmul(&coeff)
        .unwrap()
        .add(&gaussian(d, n, &mut g).scale(noise))
        .unwrap()
}

/// Streams `z` in fixed-size batches for `epochs` passes with working rank
/// 2k and returns the final top-k space.
pub fn accumulate_stream(z: &Matrix, k: usize, epochs: usize, batch: usize) -> SubspaceBasis {
    let mut state: Option<AccumulationState> = None;
    for epoch in 0..epochs {
        for chunk in (0..z.cols()).collect::<Vec<_>>().chunks(batch) {
            let idx: Vec<usize> = chunk
                .iter()
                .map(|i| (i * 7 + epoch * 13) % z.cols())
                .collect();
            let b = z.select_columns(&idx);
            state = Some(match state {
                None => accumulate_init(&b, 2 * k).unwrap().with_max_epochs(epochs),
                Some(s) => accumulate_step(s, &b).unwrap(),
            });
        }
        state.as_mut().unwrap().end_epoch().unwrap();
    }
    accumulate_finalize(state.as_ref().unwrap(), k).unwrap()
}
