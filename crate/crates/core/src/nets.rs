//! Small fully-connected networks with exact reverse-mode gradients and an
//! Adam optimizer with decoupled weight decay.
//!
//! Batches are column-major in the mathematical sense: an input batch is a
//! p×B matrix whose columns are samples, and every layer maps it to out×B.
//! Hidden layers apply the spec's activation; the final layer is affine.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    /// Standard deviation of the initial weights for a layer with `fan_in` inputs.
    pub fn init_scale(self, fan_in: usize) -> f64 {
        match self {
            Activation::Relu => (2.0 / fan_in as f64).sqrt(),
            Activation::Tanh => (1.0 / fan_in as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    /// Single affine layer (a linear head).
    pub fn linear(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
            activation: Activation::Tanh,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::invalid(format!(
                "all layer widths must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer: `out = weights · in + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// out×in
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn affine(&self, input: &Matrix) -> Result<Matrix> {
        let mut out = self.weights.matmul(input)?;
        for (r, b) in self.bias.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v += b);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    layers: Vec<Layer>,
    version: u64,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.frobenius_norm_sq() + l.bias.iter().map(|b| b * b).sum::<f64>())
            .sum()
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
}

/// Deterministic initialization: normal weights at the activation's scale, zero biases.
pub fn init(spec: &MlpSpec) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let normal = Normal::new(0.0, spec.activation.init_scale(fan_in))
                .expect("positive finite scale");
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng))
                .collect();
            Layer {
                weights: Matrix::new(fan_out, fan_in, data).expect("finite weights"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpParams {
        spec: spec.clone(),
        layers,
        version: 0,
    })
}

impl MlpParams {
    /// Builds parameters from explicit layers (validated against `spec`).
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::invalid(format!(
                "spec needs {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (i, ((fan_in, fan_out), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weights.shape() != (*fan_out, *fan_in) || layer.bias.len() != *fan_out {
                return Err(Error::invalid(format!("layer {i} has the wrong shape")));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        Ok(Self {
            spec,
            layers,
            version: 0,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Incremented by every optimizer step; forward caches from older versions are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Writes `manifest.json` plus per-layer weight and bias CSVs into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, step: u64) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = format!("layer_{i}_weights.csv");
            let b = format!("layer_{i}_bias.csv");
            layer.weights.write_csv(dir.join(&w))?;
            Matrix::new(1, layer.bias.len(), layer.bias.clone())?.write_csv(dir.join(&b))?;
            files.push(LayerFiles {
                weights: w,
                bias: b,
            });
        }
        let manifest = CheckpointManifest {
            seed: self.spec.seed,
            spec: self.spec.clone(),
            step,
            layers: files,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint written by [`MlpParams::save`]; returns the params and step.
    pub fn load(dir: impl AsRef<Path>) -> Result<(MlpParams, u64)> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for files in &manifest.layers {
            let weights = Matrix::read_csv(dir.join(&files.weights))?;
            let bias = Matrix::read_csv(dir.join(&files.bias))?.into_vec();
            layers.push(Layer { weights, bias });
        }
        Ok((
            MlpParams::from_layers(manifest.spec, layers)?,
            manifest.step,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFiles {
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    spec: MlpSpec,
    seed: u64,
    step: u64,
    layers: Vec<LayerFiles>,
}

/// Forward pass over a p×B batch.
pub fn forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if x.rows() != params.spec.input_dim {
        return Err(Error::Shape {
            op: "forward",
            left: params.layers[0].weights.shape(),
            right: x.shape(),
        });
    }
    let act = params.spec.activation;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut h = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let a = layer.affine(&h)?;
        inputs.push(h);
        if i == last {
            h = a;
        } else {
            h = a.map(|v| act.apply(v));
            pre.push(a);
        }
    }
    Ok((
        h,
        ForwardCache {
            version: params.version,
            inputs,
            pre,
        },
    ))
}

/// Forward pass without keeping a cache.
pub fn predict(params: &MlpParams, x: &Matrix) -> Result<Matrix> {
    forward(params, x).map(|(z, _)| z)
}

/// Reverse-mode pass: parameter gradients and the gradient with respect to the input.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_z: &Matrix,
) -> Result<(ParamGrads, Matrix)> {
    if cache.version != params.version || cache.inputs.len() != params.layers.len() {
        return Err(Error::StaleCache {
            cache: cache.version,
            params: params.version,
        });
    }
    let batch = cache.inputs[0].cols();
    if grad_z.shape() != (params.spec.output_dim, batch) {
        return Err(Error::Shape {
            op: "backward",
            left: (params.spec.output_dim, batch),
            right: grad_z.shape(),
        });
    }
    let act = params.spec.activation;
    let last = params.layers.len() - 1;
    let mut grads: Vec<Layer> = Vec::with_capacity(params.layers.len());
    let mut g = grad_z.clone();
    for i in (0..params.layers.len()).rev() {
        if i != last {
            let pre = &cache.pre[i];
            for (gv, pv) in g.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                *gv *= act.derivative(*pv);
            }
        }
        let weights = g.matmul_t(&cache.inputs[i])?;
        let bias = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
        let layer = &params.layers[i];
        g = layer.weights.t_matmul(&g)?;
        grads.push(Layer { weights, bias });
    }
    grads.reverse();
    Ok((ParamGrads { layers: grads }, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &MlpParams) -> Self {
        let shapes: Vec<usize> = params
            .layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
            .collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            second: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction; weight decay is applied
/// multiplicatively to the parameters before the moment update.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &ParamGrads) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|(g, p)| g.weights.shape() != p.weights.shape() || g.bias.len() != p.bias.len())
    {
        return Err(Error::invalid("gradient layout does not match parameters"));
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - c.lr * c.weight_decay;
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * decay - c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    params.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>, act: Activation) -> MlpSpec {
        MlpSpec {
            input_dim: 3,
            hidden_dims: hidden,
            output_dim: 2,
            activation: act,
            seed: 7,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(vec![5, 4], Activation::Relu);
        let a = init(&s).unwrap();
        let b = init(&s).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
        assert_eq!(a.num_params(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn invalid_spec() {
        assert!(init(&spec(vec![0], Activation::Tanh)).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(vec![4], Activation::Tanh);
        let p = init(&s).unwrap();
        let layers = p
            .layers()
            .iter()
            .map(|l| Layer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();
        let zero = MlpParams::from_layers(s, layers).unwrap();
        let x = Matrix::from_fn(3, 5, |r, c| (r + c) as f64);
        let z = predict(&zero, &x).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_linear_network() {
        let s = MlpSpec::linear(3, 3, 0);
        let p = MlpParams::from_layers(
            s,
            vec![Layer {
                weights: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
        )
        .unwrap();
        let x = Matrix::from_fn(3, 4, |r, c| r as f64 - c as f64 * 0.5);
        assert_eq!(predict(&p, &x).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = init(&spec(vec![4], Activation::Relu)).unwrap();
        let x = Matrix::from_fn(3, 6, |r, c| (r as f64 - c as f64).sin());
        let (_, cache) = forward(&p, &x).unwrap();
        let (g, gx) = backward(&p, &cache, &Matrix::zeros(2, 6)).unwrap();
        assert_eq!(g.squared_norm(), 0.0);
        assert!(gx.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = init(&spec(vec![4], Activation::Tanh)).unwrap();
        let x = Matrix::from_fn(3, 2, |r, c| (r * c) as f64);
        let (_, cache) = forward(&p, &x).unwrap();
        let grads = p.zero_grads();
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut adam, &mut p, &grads).unwrap();
        assert!(matches!(
            backward(&p, &cache, &Matrix::zeros(2, 2)),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn scalar_chain_rule() {
        // 1-1-1 tanh net: z = w2·tanh(w1·x + b1) + b2
        let s = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            output_dim: 1,
            activation: Activation::Tanh,
            seed: 0,
        };
        let (w1, b1, w2, b2, x) = (0.7, -0.2, 1.3, 0.1, 0.9);
        let p = MlpParams::from_layers(
            s,
            vec![
                Layer {
                    weights: Matrix::new(1, 1, vec![w1]).unwrap(),
                    bias: vec![b1],
                },
                Layer {
                    weights: Matrix::new(1, 1, vec![w2]).unwrap(),
                    bias: vec![b2],
                },
            ],
        )
        .unwrap();
        let xm = Matrix::new(1, 1, vec![x]).unwrap();
        let (z, cache) = forward(&p, &xm).unwrap();
        let h = (w1 * x + b1).tanh();
        assert!((z[(0, 0)] - (w2 * h + b2)).abs() < 1e-15);
        let (g, gx) = backward(&p, &cache, &Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        let dh = 1.0 - h * h;
        assert!((g.layers[1].weights[(0, 0)] - h).abs() < 1e-15);
        assert!((g.layers[1].bias[0] - 1.0).abs() < 1e-15);
        assert!((g.layers[0].weights[(0, 0)] - w2 * dh * x).abs() < 1e-15);
        assert!((g.layers[0].bias[0] - w2 * dh).abs() < 1e-15);
        assert!((gx[(0, 0)] - w2 * dh * w1).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_no_decay_is_noop() {
        let mut p = init(&spec(vec![4], Activation::Relu)).unwrap();
        let before = p.layers().to_vec();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &p);
        let grads = p.zero_grads();
        adam_step(&mut state, &mut p, &grads).unwrap();
        assert_eq!(p.layers(), &before[..]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = init(&spec(vec![], Activation::Tanh)).unwrap();
        let before = p.layers()[0].weights.clone();
        let mut grads = p.zero_grads();
        let gvals = [0.5, -2.0, 1e-3, -1e-6, 3.0, 0.0];
        grads.layers[0]
            .weights
            .as_mut_slice()
            .copy_from_slice(&gvals);
        let cfg = AdamConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &p);
        adam_step(&mut state, &mut p, &grads).unwrap();
        for (i, g) in gvals.iter().enumerate() {
            let expected = before.as_slice()[i] - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p.layers()[0].weights.as_slice()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = init(&spec(vec![4], Activation::Relu)).unwrap();
        p.save(dir.path(), 12).unwrap();
        let (back, step) = MlpParams::load(dir.path()).unwrap();
        assert_eq!(step, 12);
        assert_eq!(back.layers(), p.layers());
        assert_eq!(back.spec(), p.spec());
    }
}
