//! Finite-difference cases; each returns the max relative error of one random instance.

use fcro::losses::{corth_loss, cross_entropy, rorth_loss, sens_loss};
use fcro::nets::{backward, forward, init, Activation, Layer, MlpParams, MlpSpec, ParamGrads};
use fcro::pipeline::RepNorm;
use fcro::subspace::{build_space, SubspaceBasis};
use fcro::Matrix;

use super::{bits, gaussian, max_rel_err, numeric_grad, rng};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

// entries far below the largest component are compared on that component's scale
fn err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let floor = 1e-7
        * analytic
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
    max_rel_err(analytic, numeric, floor)
}

fn with_data(m: &Matrix, data: &[f64]) -> Matrix {
    Matrix::new(m.rows(), m.cols(), data.to_vec()).unwrap()
}

pub fn corth_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (d, b, k) = (6, 5, 1 + (seed as usize % 3));
    let basis = build_space(&gaussian(d, 12, &mut r), k).unwrap();
    let z = gaussian(d, b, &mut r);
    let analytic = corth_loss(&z, &basis).unwrap().grad_z;
    let numeric = numeric_grad(z.as_slice(), EPS, |x| {
        corth_loss(&with_data(&z, x), &basis).unwrap().value
    });
    err(analytic.as_slice(), &numeric)
}

pub fn rorth_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let z_t = gaussian(5, 7, &mut r);
    let z_a = gaussian(5, 7, &mut r);
    let analytic = rorth_loss(&z_t, &z_a).unwrap().grad_z;
    let numeric = numeric_grad(z_t.as_slice(), EPS, |x| {
        rorth_loss(&with_data(&z_t, x), &z_a).unwrap().value
    });
    err(analytic.as_slice(), &numeric)
}

pub fn cross_entropy_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let logits = gaussian(1, 6, &mut r).scale(3.0);
    let labels = bits(6, &mut r);
    let analytic = cross_entropy(logits.as_slice(), &labels).unwrap().grad_z;
    let numeric = numeric_grad(logits.as_slice(), EPS, |x| {
        cross_entropy(x, &labels).unwrap().value
    });
    err(analytic.as_slice(), &numeric)
}

pub fn sens_loss_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (m, b) = (3, 8);
    let logits = gaussian(m, b, &mut r).scale(2.0);
    let attrs: Vec<Vec<u8>> = (0..b).map(|_| bits(m, &mut r)).collect();
    let analytic = sens_loss(&logits, &attrs).unwrap().grad_z;
    let numeric = numeric_grad(logits.as_slice(), EPS, |x| {
        sens_loss(&with_data(&logits, x), &attrs).unwrap().value
    });
    err(analytic.as_slice(), &numeric)
}

/// Scalar probe `<w, norm(z)>`.
pub fn rep_norm_case(norm: RepNorm, seed: u64) -> f64 {
    let mut r = rng(seed);
    let z = gaussian(6, 4, &mut r);
    let w = gaussian(6, 4, &mut r);
    let probe = |z: &Matrix| -> f64 {
        let (n, _) = norm.apply(z);
        n.as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    };
    let (out, norms) = norm.apply(&z);
    let analytic = norm.backward(&out, &norms, &w);
    let numeric = numeric_grad(z.as_slice(), EPS, |x| probe(&with_data(&z, x)));
    err(analytic.as_slice(), &numeric)
}

fn flatten(params: &MlpParams) -> Vec<f64> {
    params
        .layers()
        .iter()
        .flat_map(|l| {
            l.weights
                .as_slice()
                .iter()
                .chain(&l.bias)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

fn flatten_grads(grads: &ParamGrads) -> Vec<f64> {
    grads
        .layers
        .iter()
        .flat_map(|l| {
            l.weights
                .as_slice()
                .iter()
                .chain(&l.bias)
                .copied()
                .collect::<Vec<_>>()
        })
        .collect()
}

fn unflatten(template: &MlpParams, flat: &[f64]) -> MlpParams {
    let mut at = 0;
    let layers = template
        .layers()
        .iter()
        .map(|l| {
            let nw = l.weights.as_slice().len();
            let weights = with_data(&l.weights, &flat[at..at + nw]);
            at += nw;
            let bias = flat[at..at + l.bias.len()].to_vec();
            at += l.bias.len();
            Layer { weights, bias }
        })
        .collect();
    MlpParams::from_layers(template.spec().clone(), layers).unwrap()
}

struct Problem {
    x: Matrix,
    labels: Vec<u8>,
    z_a: Matrix,
    basis: SubspaceBasis,
    norm: RepNorm,
    lambda_c: f64,
    lambda_r: f64,
}

impl Problem {
    fn objective(&self, enc: &MlpParams, head: &MlpParams) -> f64 {
        let (raw, _) = forward(enc, &self.x).unwrap();
        let (z, _) = self.norm.apply(&raw);
        let (logits, _) = forward(head, &z).unwrap();
        cross_entropy(logits.row(0), &self.labels).unwrap().value
            + self.lambda_c * corth_loss(&z, &self.basis).unwrap().value
            + self.lambda_r * rorth_loss(&z, &self.z_a).unwrap().value
    }

    fn gradients(&self, enc: &MlpParams, head: &MlpParams) -> (ParamGrads, ParamGrads) {
        let (raw, enc_cache) = forward(enc, &self.x).unwrap();
        let (z, norms) = self.norm.apply(&raw);
        let (logits, head_cache) = forward(head, &z).unwrap();
        let ce = cross_entropy(logits.row(0), &self.labels).unwrap();
        let (head_grads, mut gz) = backward(head, &head_cache, &ce.grad_z).unwrap();
        gz.axpy(self.lambda_c, &corth_loss(&z, &self.basis).unwrap().grad_z)
            .unwrap();
        gz.axpy(self.lambda_r, &rorth_loss(&z, &self.z_a).unwrap().grad_z)
            .unwrap();
        let g_raw = self.norm.backward(&z, &norms, &gz);
        let (enc_grads, _) = backward(enc, &enc_cache, &g_raw).unwrap();
        (enc_grads, head_grads)
    }
}

/// Encoder → representation → linear head under the full weighted objective;
/// checks encoder and head parameters.
pub fn composed_case(seed: u64, activation: Activation, norm: RepNorm) -> f64 {
    let mut r = rng(seed);
    let (p, h, d, b) = (4, 5, 6, 7);
    let enc = init(&MlpSpec {
        input_dim: p,
        hidden_dims: vec![h],
        output_dim: d,
        activation,
        seed,
    })
    .unwrap();
    let head = init(&MlpSpec::linear(d, 1, seed + 1)).unwrap();
    let problem = Problem {
        x: gaussian(p, b, &mut r),
        labels: bits(b, &mut r),
        z_a: gaussian(d, b, &mut r),
        basis: build_space(&gaussian(d, 20, &mut r), 2).unwrap(),
        norm,
        lambda_c: 80.0,
        lambda_r: 500.0,
    };
    let (enc_g, head_g) = problem.gradients(&enc, &head);
    let numeric = numeric_grad(&flatten(&enc), EPS, |w| {
        problem.objective(&unflatten(&enc, w), &head)
    });
    let e1 = err(&flatten_grads(&enc_g), &numeric);
    let numeric = numeric_grad(&flatten(&head), EPS, |w| {
        problem.objective(&enc, &unflatten(&head, w))
    });
    e1.max(err(&flatten_grads(&head_g), &numeric))
}
