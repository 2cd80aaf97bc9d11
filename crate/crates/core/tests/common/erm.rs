//! Plain cross-entropy training written without the pipeline.

use fcro::datagen::LabeledDataset;
use fcro::losses::cross_entropy;
use fcro::nets::{adam_step, backward, forward, init, AdamConfig, AdamState, MlpParams, MlpSpec};
use fcro::pipeline::{derive_seed, epoch_order, Stream, TrainConfig};

pub struct ErmTrajectory {
    /// Mean batch cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    pub encoder: MlpParams,
    pub head: MlpParams,
}

/// Same seed streams as the pipeline, no representation normalization.
pub fn plain_erm(train: &LabeledDataset, config: &TrainConfig) -> ErmTrajectory {
    let mut encoder = init(&MlpSpec {
        input_dim: train.num_features(),
        hidden_dims: config.hidden_dims.clone(),
        output_dim: config.rep_dim,
        activation: config.activation,
        seed: derive_seed(config.seed, Stream::TargetEncoder as u64),
    })
    .unwrap();
    let mut head = init(&MlpSpec::linear(
        config.rep_dim,
        1,
        derive_seed(config.seed, Stream::TargetHead as u64),
    ))
    .unwrap();
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut enc_opt = AdamState::new(adam, &encoder);
    let mut head_opt = AdamState::new(adam, &head);
    let order_seed = derive_seed(config.seed, Stream::TargetOrder as u64);
    let mut epoch_loss = Vec::new();
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in epoch_order(train.len(), order_seed, epoch).chunks(config.batch_size) {
            let x = train.batch(chunk);
            let labels: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (z, enc_cache) = forward(&encoder, &x).unwrap();
            let (logits, head_cache) = forward(&head, &z).unwrap();
            let ce = cross_entropy(logits.row(0), &labels).unwrap();
            let (head_grads, gz) = backward(&head, &head_cache, &ce.grad_z).unwrap();
            let (enc_grads, _) = backward(&encoder, &enc_cache, &gz).unwrap();
            adam_step(&mut head_opt, &mut head, &head_grads).unwrap();
            adam_step(&mut enc_opt, &mut encoder, &enc_grads).unwrap();
            total += ce.value;
            count += 1;
        }
        epoch_loss.push(total / count as f64);
    }
    ErmTrajectory {
        epoch_loss,
        encoder,
        head,
    }
}
