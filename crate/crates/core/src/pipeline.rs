//! Two-branch training: pretrain the sensitive encoder and heads, build the
//! sensitive space once, then train the target encoder and head under the
//! orthogonality-regularized objective. Also k-fold experiments, model
//! selection and hyperparameter sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::{bias_amplify, generate, split, GenSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::fairmetrics::{
    auc, calibration_curve, evaluate, FairnessReport, GroupCalibration, Grouping, MetricOptions,
    PredictionTable,
};
use crate::linalg::Matrix;
use crate::losses::{
    center_rows, corth_loss, cross_entropy, normalize_columns, normalize_columns_backward,
    rorth_loss, sens_loss,
};
use crate::nets::{
    adam_step, backward, forward, init, predict, Activation, AdamConfig, AdamState, MlpParams,
    MlpSpec,
};
use crate::subspace::{
    accumulate_finalize, accumulate_init, accumulate_step, build_space, captured_variance,
    SubspaceBasis,
};

/// Per-attribute validation AUC below this triggers a warning.
pub const WEAK_SENSITIVE_AUC: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceMode {
    #[default]
    Batch,
    Accumulative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub k: usize,
    pub epochs: usize,
    pub sensitive_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight decay while pretraining the sensitive branch.
    pub sensitive_weight_decay: f64,
    pub rep_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub space_mode: SpaceMode,
    pub accumulation_epochs: usize,
    pub seed: u64,
    pub enable_corth: bool,
    pub enable_rorth: bool,
    /// Normalization applied to encoder outputs before heads and losses.
    pub rep_norm: RepNorm,
    pub metrics: MetricOptions,
    /// Size of the AUC shortlist in model selection.
    pub top_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_c: 80.0,
            lambda_r: 500.0,
            k: 3,
            epochs: 40,
            sensitive_epochs: 100,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 4e-4,
            sensitive_weight_decay: 5.0,
            rep_dim: 16,
            hidden_dims: vec![64],
            activation: Activation::Relu,
            space_mode: SpaceMode::Batch,
            accumulation_epochs: 3,
            seed: 0,
            enable_corth: true,
            enable_rorth: true,
            rep_norm: RepNorm::None,
            metrics: MetricOptions::default(),
            top_n: 5,
        }
    }
}

impl TrainConfig {
    /// Same configuration with both orthogonality weights at zero.
    pub fn erm(&self) -> Self {
        Self {
            lambda_c: 0.0,
            lambda_r: 0.0,
            ..self.clone()
        }
    }

    /// All violations, one per entry.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("lambda_c", self.lambda_c),
            ("lambda_r", self.lambda_r),
            ("weight_decay", self.weight_decay),
            ("sensitive_weight_decay", self.sensitive_weight_decay),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be finite and >= 0 (got {x})"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            v.push(format!("lr must be > 0 (got {})", self.lr));
        }
        if self.rep_dim == 0 {
            v.push("rep_dim must be >= 1".into());
        }
        if self.k == 0 || self.k > self.rep_dim {
            v.push(format!(
                "k must be in 1..=rep_dim (got k={}, rep_dim={})",
                self.k, self.rep_dim
            ));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".into());
        }
        if self.hidden_dims.contains(&0) {
            v.push("hidden_dims entries must be >= 1".into());
        }
        if self.accumulation_epochs == 0 {
            v.push("accumulation_epochs must be >= 1".into());
        }
        if self.top_n == 0 {
            v.push("top_n must be >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }

    /// Optimizer settings of the target branch.
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Encoder architecture for `input_dim` features.
    pub fn encoder_spec(&self, input_dim: usize, seed: u64) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: self.rep_dim,
            activation: self.activation,
            seed,
        }
    }
}

/// How an encoder's raw output becomes the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepNorm {
    /// Raw encoder output.
    #[default]
    None,
    /// Every column scaled to unit norm.
    Unit,
    /// Every column centered over its entries, then scaled to unit norm.
    Centered,
}

impl RepNorm {
    /// Normalized columns and the norms needed by [`RepNorm::backward`].
    pub fn apply(self, z: &Matrix) -> (Matrix, Vec<f64>) {
        match self {
            RepNorm::None => (z.clone(), Vec::new()),
            RepNorm::Unit => normalize_columns(z),
            RepNorm::Centered => normalize_columns(&center_rows(z)),
        }
    }

    pub fn backward(self, out: &Matrix, norms: &[f64], grad: &Matrix) -> Matrix {
        match self {
            RepNorm::None => grad.clone(),
            RepNorm::Unit => normalize_columns_backward(out, norms, grad),
            RepNorm::Centered => center_rows(&normalize_columns_backward(out, norms, grad)),
        }
    }
}

/// Independent seed streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SensitiveEncoder = 1,
    SensitiveHeads = 2,
    TargetEncoder = 3,
    TargetHead = 4,
    SensitiveOrder = 5,
    TargetOrder = 6,
    AccumulationOrder = 7,
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample order for one epoch (epochs count from 1).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Frozen sensitive encoder plus one logit head per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveModel {
    pub encoder: MlpParams,
    pub rep_norm: RepNorm,
    /// rep_dim → m, one row per attribute.
    pub heads: MlpParams,
    pub validation_auc: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SensitiveModel {
    pub fn encode(&self, data: &LabeledDataset) -> Result<Matrix> {
        self.encode_batch(&data.all_columns())
    }

    /// Representation of a p×B batch.
    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.rep_norm.apply(&predict(&self.encoder, x)?).0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub encoder: MlpParams,
    pub rep_norm: RepNorm,
    /// rep_dim → 1
    pub head: MlpParams,
}

impl TargetModel {
    /// Positive-class probabilities.
    pub fn scores(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        let z = self
            .rep_norm
            .apply(&predict(&self.encoder, &data.all_columns())?)
            .0;
        let logits = predict(&self.head, &z)?;
        Ok(logits.row(0).iter().map(|&x| sigmoid(x)).collect())
    }

    pub fn prediction_table(&self, data: &LabeledDataset) -> Result<PredictionTable> {
        PredictionTable::new(
            self.scores(data)?,
            data.labels.clone(),
            data.attributes.clone(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct SensitiveMeta {
    rep_norm: RepNorm,
    validation_auc: Vec<f64>,
    warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TargetMeta {
    rep_norm: RepNorm,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl SensitiveModel {
    /// `dir/encoder/`, `dir/heads/` and `dir/model.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.encoder.save(dir.join("encoder"), 0)?;
        self.heads.save(dir.join("heads"), 0)?;
        let meta = SensitiveMeta {
            rep_norm: self.rep_norm,
            validation_auc: self.validation_auc.clone(),
            warnings: self.warnings.clone(),
        };
        write_json(&dir.join("model.json"), &meta)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SensitiveMeta = read_json(&dir.join("model.json"))?;
        Ok(Self {
            encoder: MlpParams::load(dir.join("encoder"))?.0,
            heads: MlpParams::load(dir.join("heads"))?.0,
            rep_norm: meta.rep_norm,
            validation_auc: meta.validation_auc,
            warnings: meta.warnings,
        })
    }
}

impl TargetModel {
    /// `dir/encoder/`, `dir/head/` and `dir/model.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.encoder.save(dir.join("encoder"), 0)?;
        self.head.save(dir.join("head"), 0)?;
        write_json(
            &dir.join("model.json"),
            &TargetMeta {
                rep_norm: self.rep_norm,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: TargetMeta = read_json(&dir.join("model.json"))?;
        Ok(Self {
            encoder: MlpParams::load(dir.join("encoder"))?.0,
            head: MlpParams::load(dir.join("head"))?.0,
            rep_norm: meta.rep_norm,
        })
    }
}

/// Pretrains the sensitive encoder and heads on the mean attribute
/// cross-entropy. With `validation`, reports per-attribute AUC.
pub fn pretrain_sensitive(
    train: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<SensitiveModel> {
    config.validate()?;
    let m = train.num_attributes();
    if m == 0 {
        return Err(Error::invalid("dataset has no sensitive attributes"));
    }
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut encoder = init(&config.encoder_spec(
        train.num_features(),
        derive_seed(config.seed, Stream::SensitiveEncoder as u64),
    ))?;
    let mut heads = init(&MlpSpec::linear(
        config.rep_dim,
        m,
        derive_seed(config.seed, Stream::SensitiveHeads as u64),
    ))?;
    let adam = AdamConfig {
        weight_decay: config.sensitive_weight_decay,
        ..config.adam()
    };
    let mut enc_opt = AdamState::new(adam, &encoder);
    let mut head_opt = AdamState::new(adam, &heads);
    let order_seed = derive_seed(config.seed, Stream::SensitiveOrder as u64);

    for epoch in 1..=config.sensitive_epochs {
        let order = epoch_order(train.len(), order_seed, epoch);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train.batch(chunk);
            let attrs: Vec<Vec<u8>> = chunk.iter().map(|&i| train.attributes[i].clone()).collect();
            let (raw, enc_cache) = forward(&encoder, &x)?;
            let (z, norms) = config.rep_norm.apply(&raw);
            let (logits, head_cache) = forward(&heads, &z)?;
            let loss = sens_loss(&logits, &attrs)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let (head_grads, grad_z) = backward(&heads, &head_cache, &loss.grad_z)?;
            let grad_raw = config.rep_norm.backward(&z, &norms, &grad_z);
            let (enc_grads, _) = backward(&encoder, &enc_cache, &grad_raw)?;
            adam_step(&mut head_opt, &mut heads, &head_grads)?;
            adam_step(&mut enc_opt, &mut encoder, &enc_grads)?;
        }
    }

    let mut model = SensitiveModel {
        encoder,
        rep_norm: config.rep_norm,
        heads,
        validation_auc: Vec::new(),
        warnings: Vec::new(),
    };
    if let Some(val) = validation {
        let logits = predict(&model.heads, &model.encode(val)?)?;
        for i in 0..m {
            let labels: Vec<u8> = val.attributes.iter().map(|a| a[i]).collect();
            let a = auc(logits.row(i), &labels)?;
            if a < WEAK_SENSITIVE_AUC {
                let msg = format!(
                    "attribute a_{} validation AUC {a:.3}: sensitive branch weak; orthogonality may be vacuous",
                    i + 1
                );
                log::warn!("{msg}");
                model.warnings.push(msg);
            }
            model.validation_auc.push(a);
        }
    }
    Ok(model)
}

/// The sensitive space and the fraction of the training representations it captures.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltSpace {
    pub basis: SubspaceBasis,
    pub captured_variance: f64,
}

/// Encodes the training data with the frozen sensitive encoder and builds
/// the rank-k space, either from one SVD or by streaming accumulation.
pub fn build_sensitive_space(
    sensitive: &SensitiveModel,
    train: &LabeledDataset,
    config: &TrainConfig,
) -> Result<BuiltSpace> {
    config.validate()?;
    let z_a = sensitive.encode(train)?;
    let basis = match config.space_mode {
        SpaceMode::Batch => build_space(&z_a, config.k)?,
        SpaceMode::Accumulative => {
            let working = (2 * config.k).min(config.rep_dim);
            let seed = derive_seed(config.seed, Stream::AccumulationOrder as u64);
            let mut state = None;
            for epoch in 1..=config.accumulation_epochs {
                let order = epoch_order(train.len(), seed, epoch);
                for chunk in order.chunks(config.batch_size) {
                    let batch = z_a.select_columns(chunk);
                    state = Some(match state {
                        None => accumulate_init(&batch, working.min(batch.cols()))?
                            .with_max_epochs(config.accumulation_epochs),
                        Some(s) => accumulate_step(s, &batch)?,
                    });
                }
                if let Some(s) = state.as_mut() {
                    s.end_epoch()?;
                }
            }
            let state = state.ok_or_else(|| Error::invalid("no training data to accumulate"))?;
            accumulate_finalize(&state, config.k.min(state.current().len()))?
        }
    };
    let captured = captured_variance(&z_a, &basis)?;
    Ok(BuiltSpace {
        basis,
        captured_variance: captured,
    })
}

/// Mean per-batch losses of one target-training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_t: f64,
    pub l_corth: f64,
    pub l_rorth: f64,
    pub l_targ: f64,
}

/// Observed after every target-training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEvent {
    pub epoch: usize,
    pub batch: usize,
    pub l_t: f64,
    pub l_corth: f64,
    pub l_rorth: f64,
    pub l_targ: f64,
    /// Squared norm of the gradient delivered to the sensitive encoder and heads.
    pub sensitive_grad_sq_norm: f64,
    pub target_grad_sq_norm: f64,
}

/// Validation state after one epoch; the id is the epoch number.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub epoch: usize,
    pub report: FairnessReport,
    pub model: TargetModel,
}

#[derive(Debug, Clone)]
pub struct TargetRun {
    pub losses: Vec<EpochLosses>,
    pub checkpoints: Vec<Checkpoint>,
    pub final_model: TargetModel,
}

/// Trains the target encoder and head. The sensitive encoder is evaluated
/// fresh on every batch and treated as a constant; `observer` sees every batch.
pub fn train_target(
    train: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    sensitive: &SensitiveModel,
    basis: &SubspaceBasis,
    config: &TrainConfig,
    mut observer: impl FnMut(&BatchEvent),
) -> Result<TargetRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if basis.dim() != config.rep_dim {
        return Err(Error::invalid(format!(
            "basis dimension {} does not match rep_dim {}",
            basis.dim(),
            config.rep_dim
        )));
    }
    let mut encoder = init(&config.encoder_spec(
        train.num_features(),
        derive_seed(config.seed, Stream::TargetEncoder as u64),
    ))?;
    let mut head = init(&MlpSpec::linear(
        config.rep_dim,
        1,
        derive_seed(config.seed, Stream::TargetHead as u64),
    ))?;
    let use_corth = config.enable_corth && config.lambda_c != 0.0;
    let use_rorth = config.enable_rorth && config.lambda_r != 0.0;
    let mut enc_opt = AdamState::new(config.adam(), &encoder);
    let mut head_opt = AdamState::new(config.adam(), &head);
    let order_seed = derive_seed(config.seed, Stream::TargetOrder as u64);
    // Nothing flows back into the sensitive branch; this is what it receives.
    let sensitive_grads = (sensitive.encoder.zero_grads(), sensitive.heads.zero_grads());

    let mut losses = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = epoch_order(train.len(), order_seed, epoch);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train.batch(chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (raw, enc_cache) = forward(&encoder, &x)?;
            let (z_t, norms) = config.rep_norm.apply(&raw);
            let z_a = sensitive.encode_batch(&x)?;
            let (logits, head_cache) = forward(&head, &z_t)?;
            let ce = cross_entropy(logits.row(0), &labels)?;
            let (head_grads, mut grad_z) = backward(&head, &head_cache, &ce.grad_z)?;

            let corth = corth_loss(&z_t, basis)?;
            let rorth = rorth_loss(&z_t, &z_a)?;
            let mut value = ce.value;
            if use_corth {
                value += config.lambda_c * corth.value;
                grad_z.axpy(config.lambda_c, &corth.grad_z)?;
            }
            if use_rorth {
                value += config.lambda_r * rorth.value;
                grad_z.axpy(config.lambda_r, &rorth.grad_z)?;
            }
            if !(value.is_finite() && corth.value.is_finite() && rorth.value.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grad_z = config.rep_norm.backward(&z_t, &norms, &grad_z);
            let (enc_grads, _) = backward(&encoder, &enc_cache, &grad_z)?;
            observer(&BatchEvent {
                epoch,
                batch: b,
                l_t: ce.value,
                l_corth: corth.value,
                l_rorth: rorth.value,
                l_targ: value,
                sensitive_grad_sq_norm: sensitive_grads.0.squared_norm()
                    + sensitive_grads.1.squared_norm(),
                target_grad_sq_norm: enc_grads.squared_norm() + head_grads.squared_norm(),
            });
            adam_step(&mut head_opt, &mut head, &head_grads)?;
            adam_step(&mut enc_opt, &mut encoder, &enc_grads)?;
            for (s, v) in sums
                .iter_mut()
                .zip([ce.value, corth.value, rorth.value, value])
            {
                *s += v;
            }
            batches += 1;
        }
        let nb = batches as f64;
        losses.push(EpochLosses {
            epoch,
            l_t: sums[0] / nb,
            l_corth: sums[1] / nb,
            l_rorth: sums[2] / nb,
            l_targ: sums[3] / nb,
        });
        if let Some(val) = validation {
            let model = TargetModel {
                encoder: encoder.clone(),
                rep_norm: config.rep_norm,
                head: head.clone(),
            };
            let report = evaluate(&model.prediction_table(val)?, &config.metrics)?;
            checkpoints.push(Checkpoint {
                epoch,
                report,
                model,
            });
        }
    }
    Ok(TargetRun {
        losses,
        checkpoints,
        final_model: TargetModel {
            encoder,
            rep_norm: config.rep_norm,
            head,
        },
    })
}

/// What model selection looks at for one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub auc: f64,
    pub mean_ed: f64,
}

impl From<&Checkpoint> for CheckpointScore {
    fn from(c: &Checkpoint) -> Self {
        Self {
            epoch: c.epoch,
            auc: c.report.auc,
            mean_ed: c.report.mean_individual_ed(),
        }
    }
}

/// Index of the checkpoint with the lowest mean per-attribute ED among the
/// `top_n` by validation AUC. Ties go to higher AUC, then the earlier epoch.
pub fn select_model(scores: &[CheckpointScore], top_n: usize) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid(
            "model selection needs at least one checkpoint",
        ));
    }
    let mut by_auc: Vec<usize> = (0..scores.len()).collect();
    by_auc.sort_by(|&a, &b| {
        scores[b]
            .auc
            .total_cmp(&scores[a].auc)
            .then(scores[a].epoch.cmp(&scores[b].epoch))
    });
    by_auc.truncate(top_n.max(1));
    let best = by_auc
        .into_iter()
        .min_by(|&a, &b| {
            scores[a]
                .mean_ed
                .total_cmp(&scores[b].mean_ed)
                .then(scores[b].auc.total_cmp(&scores[a].auc))
                .then(scores[a].epoch.cmp(&scores[b].epoch))
        })
        .expect("non-empty shortlist");
    Ok(best)
}

/// Full k-fold experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub data: GenSpec,
    pub target_gap: f64,
    pub folds: usize,
    pub test_fraction: f64,
    /// Folds run concurrently; results do not depend on this.
    pub parallel_folds: usize,
    pub calibration_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: GenSpec::default(),
            target_gap: 0.12,
            folds: 5,
            test_fraction: 0.15,
            parallel_folds: 1,
            calibration_bins: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .train
            .violations()
            .into_iter()
            .map(|s| format!("train.{s}"))
            .collect();
        v.extend(
            self.data
                .violations()
                .into_iter()
                .map(|s| format!("data.{s}")),
        );
        if !(0.0..1.0).contains(&self.target_gap) {
            v.push(format!(
                "target_gap must be in [0, 1) (got {})",
                self.target_gap
            ));
        }
        if self.folds == 0 {
            v.push("folds must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            v.push(format!(
                "test_fraction must be in (0, 1) (got {})",
                self.test_fraction
            ));
        }
        if self.parallel_folds == 0 {
            v.push("parallel_folds must be >= 1".into());
        }
        if self.calibration_bins < 2 {
            v.push("calibration_bins must be >= 2".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }
}

/// Summary of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: usize,
    pub seed: u64,
    pub losses: Vec<EpochLosses>,
    pub checkpoints: Vec<CheckpointScore>,
    pub validation: Vec<FairnessReport>,
    pub selected_epoch: usize,
    pub captured_variance: f64,
    pub sensitive_auc: Vec<f64>,
    pub test: FairnessReport,
    pub calibration: Vec<GroupCalibration>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAggregate {
    pub attribute: usize,
    pub ed_mean: f64,
    pub ed_std: f64,
    pub auc_gap_mean: f64,
    pub auc_gap_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub auc_mean: f64,
    pub auc_std: f64,
    pub joint_ed_mean: f64,
    pub joint_ed_std: f64,
    pub joint_auc_gap_mean: f64,
    pub joint_auc_gap_std: f64,
    pub mean_individual_ed_mean: f64,
    pub captured_variance_mean: f64,
    pub per_attribute: Vec<AttributeAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset_size: usize,
    pub amplified_gaps: Vec<f64>,
    pub split_warnings: Vec<String>,
    pub per_fold: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(records: &[RunRecord]) -> Aggregate {
    let pick = |f: &dyn Fn(&RunRecord) -> f64| mean_std(&records.iter().map(f).collect::<Vec<_>>());
    let (auc_mean, auc_std) = pick(&|r| r.test.auc);
    let (joint_ed_mean, joint_ed_std) = pick(&|r| r.test.joint_ed);
    let (joint_auc_gap_mean, joint_auc_gap_std) = pick(&|r| r.test.joint_auc_gap);
    let (mean_individual_ed_mean, _) = pick(&|r| r.test.mean_individual_ed());
    let (captured_variance_mean, _) = pick(&|r| r.captured_variance);
    let m = records.first().map_or(0, |r| r.test.per_attribute.len());
    let per_attribute = (0..m)
        .map(|i| {
            let (ed_mean, ed_std) = pick(&|r| r.test.per_attribute[i].ed);
            let (auc_gap_mean, auc_gap_std) = pick(&|r| r.test.per_attribute[i].auc_gap);
            AttributeAggregate {
                attribute: i,
                ed_mean,
                ed_std,
                auc_gap_mean,
                auc_gap_std,
            }
        })
        .collect();
    Aggregate {
        auc_mean,
        auc_std,
        joint_ed_mean,
        joint_ed_std,
        joint_auc_gap_mean,
        joint_auc_gap_std,
        mean_individual_ed_mean,
        captured_variance_mean,
        per_attribute,
    }
}

/// Everything one fold needs: pretraining, space, target training,
/// selection and held-out evaluation.
pub fn run_fold(
    fold: usize,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    test: &LabeledDataset,
    config: &ExperimentConfig,
) -> Result<RunRecord> {
    let mut cfg = config.train.clone();
    cfg.seed = config.train.seed.wrapping_add(fold as u64);
    let sensitive = pretrain_sensitive(train, Some(validation), &cfg)
        .map_err(|e| e.in_stage(fold, "pretrain"))?;
    let space = build_sensitive_space(&sensitive, train, &cfg)
        .map_err(|e| e.in_stage(fold, "build_space"))?;
    let run = train_target(
        train,
        Some(validation),
        &sensitive,
        &space.basis,
        &cfg,
        |_| {},
    )
    .map_err(|e| e.in_stage(fold, "train"))?;
    let scores: Vec<CheckpointScore> = run.checkpoints.iter().map(CheckpointScore::from).collect();
    let selected = if scores.is_empty() {
        None
    } else {
        Some(select_model(&scores, cfg.top_n).map_err(|e| e.in_stage(fold, "select"))?)
    };
    let model = selected.map_or(&run.final_model, |i| &run.checkpoints[i].model);
    let evaluate_test = || -> Result<(FairnessReport, Vec<GroupCalibration>)> {
        let table = model.prediction_table(test)?;
        let report = evaluate(&table, &cfg.metrics)?;
        let calibration = calibration_curve(&table, Grouping::Joint, config.calibration_bins)?;
        Ok((report, calibration))
    };
    let (test_report, calibration) = evaluate_test().map_err(|e| e.in_stage(fold, "evaluate"))?;
    let mut warnings = sensitive.warnings.clone();
    warnings.extend(space.basis.warnings().iter().cloned());
    Ok(RunRecord {
        fold,
        seed: cfg.seed,
        losses: run.losses,
        validation: run.checkpoints.iter().map(|c| c.report.clone()).collect(),
        selected_epoch: selected.map_or(cfg.epochs, |i| scores[i].epoch),
        checkpoints: scores,
        captured_variance: space.captured_variance,
        sensitive_auc: sensitive.validation_auc,
        test: test_report,
        calibration,
        warnings,
    })
}

/// generate → amplify → split → per-fold training → test evaluation.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let raw = generate(&config.data).map_err(|e| e.in_stage(0, "datagen"))?;
    let amplified = bias_amplify(&raw, config.target_gap, config.data.seed)
        .map_err(|e| e.in_stage(0, "amplify"))?;
    run_experiment_on(config, &amplified.data, amplified.gaps)
}

/// Runs the fold loop on an already prepared dataset.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    data: &LabeledDataset,
    gaps: Vec<f64>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let folds = config.folds.max(2);
    let plan = split(data, config.test_fraction, folds, config.train.seed)
        .map_err(|e| e.in_stage(0, "split"))?;
    let test = data.subset(&plan.test);
    let run = |f: usize| -> Result<RunRecord> {
        let fold = &plan.folds[f];
        run_fold(
            f,
            &data.subset(&fold.train),
            &data.subset(&fold.validation),
            &test,
            config,
        )
    };
    let results: Vec<Result<RunRecord>> = if config.parallel_folds > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallel_folds)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.folds).into_par_iter().map(run).collect())
    } else {
        (0..config.folds).map(run).collect()
    };
    let per_fold = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        dataset_size: data.len(),
        amplified_gaps: gaps,
        split_warnings: plan.warnings,
        aggregate: aggregate(&per_fold),
        per_fold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LambdaC,
    LambdaR,
    K,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::LambdaC => "lambda_c",
            SweepParam::LambdaR => "lambda_r",
            SweepParam::K => "k",
        }
    }

    pub fn apply(self, config: &mut TrainConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::LambdaC => config.lambda_c = value,
            SweepParam::LambdaR => config.lambda_r = value,
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::invalid(format!(
                        "k must be a positive integer, got {value}"
                    )));
                }
                config.k = value as usize;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_c" => Ok(SweepParam::LambdaC),
            "lambda_r" => Ok(SweepParam::LambdaR),
            "k" => Ok(SweepParam::K),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter `{other}` (expected lambda_c, lambda_r or k)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub value: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub ed_mean: f64,
    pub ed_std: f64,
    pub variance_captured: f64,
}

pub const ABLATION_HEADER: &str = "setting,value,auc_mean,auc_std,ed_mean,ed_std,variance_captured";

/// One experiment per sweep value with everything else (seeds included) shared.
pub fn ablate(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<(Vec<AblationRow>, Vec<ExperimentReport>)> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let raw = generate(&config.data).map_err(|e| e.in_stage(0, "datagen"))?;
    let amplified = bias_amplify(&raw, config.target_gap, config.data.seed)
        .map_err(|e| e.in_stage(0, "amplify"))?;
    let mut rows = Vec::with_capacity(values.len());
    let mut reports = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = config.clone();
        param.apply(&mut cfg.train, value)?;
        let report = run_experiment_on(&cfg, &amplified.data, amplified.gaps.clone())?;
        rows.push(ablation_row(param, value, &report));
        reports.push(report);
    }
    Ok((rows, reports))
}

/// One sweep point; ED is the joint disparity.
pub fn ablation_row(param: SweepParam, value: f64, report: &ExperimentReport) -> AblationRow {
    let a = &report.aggregate;
    AblationRow {
        setting: param.name().to_string(),
        value,
        auc_mean: a.auc_mean,
        auc_std: a.auc_std,
        ed_mean: a.joint_ed_mean,
        ed_std: a.joint_ed_std,
        variance_captured: a.captured_variance_mean,
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.setting, r.value, r.auc_mean, r.auc_std, r.ed_mean, r.ed_std, r.variance_captured
        ));
    }
    out
}

/// `auc,ed,setting` rows for a Pareto plot.
pub fn tradeoff_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("auc,ed,setting\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}={}\n",
            r.auc_mean, r.ed_mean, r.setting, r.value
        ));
    }
    out
}

/// `fold,epoch,l_t,l_corth,l_rorth,l_targ`
pub fn losses_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("fold,epoch,l_t,l_corth,l_rorth,l_targ\n");
    for r in records {
        for l in &r.losses {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.fold, l.epoch, l.l_t, l.l_corth, l.l_rorth, l.l_targ
            ));
        }
    }
    out
}

/// `fold,group,bin_center,fraction,count`; empty bins have an empty fraction.
pub fn calibration_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("fold,group,bin_center,fraction,count\n");
    for r in records {
        for g in &r.calibration {
            for b in &g.bins {
                let fraction = b.fraction.map(|f| f.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.fold, g.group, b.center, fraction, b.count
                ));
            }
        }
    }
    out
}
