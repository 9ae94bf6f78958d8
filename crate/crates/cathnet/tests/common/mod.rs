#![allow(dead_code)]

use std::path::Path;

use cathnet::config::RunConfig;
use cathnet::trainer::{batch_indices, DataSplits};
use cathnet_core::losses::{bce_iou_seg_loss, focal_center_loss, size_l1_loss};
use cathnet_core::model::{Network, NetworkConfig};
use cathnet_core::optim::AdamW;
use cathnet_core::pipeline::Batch;
use cathnet_core::rng::{derive_seed, Stream};
use cathnet_core::synth::{augment, GeneratorConfig, SampleRecord};
use cathnet_core::{Tape, Tensor, Var};
use sha2::{Digest, Sha256};

/// A 32×32 run small enough to train for a few dozen iterations per test.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut c = RunConfig { output_dir: out.to_path_buf(), ..RunConfig::default() };
    c.data.train = 12;
    c.data.val = 4;
    c.data.test = 4;
    c.data.generator = GeneratorConfig { size: 32, electrodes_max: 3, ..GeneratorConfig::default() };
    c.model = NetworkConfig {
        input_size: [32, 32],
        base_channels: 4,
        latent_dim: 16,
        blocks_per_stage: 1,
        decoder_channels: 8,
        head_channels: 8,
        ..NetworkConfig::default()
    };
    c.optim.batch_size = 4;
    c.optim.iterations = 12;
    c.eval.validate_every = 6;
    c.eval.checkpoint_every = 6;
    c.curves.every = 3;
    c.curves.tracked = 4;
    c.ablation.seeds = vec![0];
    c
}

pub fn sha(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-sample task losses of one forward pass, as the trainer defines them.
pub struct Forward {
    pub tape: Tape,
    pub vars: Vec<Var>,
    pub ids: Vec<usize>,
    pub detection: Var,
    pub segmentation: Var,
}

/// A training loop written out by hand against the core crate: same batch
/// order, augmentation and initialization as the trainer, with the batch
/// loss supplied by `reduce`. Returns the total loss of every iteration.
pub fn hand_loop(
    cfg: &RunConfig,
    data: &DataSplits,
    iterations: u64,
    mut reduce: impl FnMut(&mut Forward) -> Var,
) -> Vec<f64> {
    let (network, mut params) = Network::new(cfg.model.clone(), derive_seed(cfg.seed, Stream::Init, 0)).unwrap();
    let mut opt = AdamW::new(cfg.optim.adamw(), &params.tensors());
    let b = cfg.optim.batch_size;
    let mut totals = Vec::new();
    for it in 0..iterations {
        let ids = batch_indices(cfg.seed, it, data.train.len(), b);
        let records: Vec<SampleRecord> = ids
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                augment(
                    &data.train[i],
                    derive_seed(cfg.seed, Stream::Augment, it * b as u64 + j as u64),
                    &cfg.data.augment,
                )
            })
            .collect();
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let batch = Batch::new(&refs, &ids).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, |_| true);
        let image = tape.constant(batch.images.clone());
        let out = network.forward(&mut tape, &vars, image).unwrap();
        let focal =
            focal_center_loss(&mut tape, out.center_logits, &batch.heatmap, &batch.center_mask, &cfg.losses).unwrap();
        let (size, _) = size_l1_loss(&mut tape, out.size_pred, &batch.size, &batch.center_mask).unwrap();
        let size = tape.scale(size, cfg.losses.lambda_size);
        let detection = tape.add(focal, size).unwrap();
        let segmentation = bce_iou_seg_loss(&mut tape, out.seg_logits, &batch.masks).unwrap();
        let mut fwd = Forward { tape, vars, ids, detection, segmentation };
        let total = reduce(&mut fwd);
        let Forward { mut tape, vars, .. } = fwd;
        totals.push(tape.value(total).item());
        tape.backward(total).unwrap();
        let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad_tensor(v)).collect();
        let mut tensors = params.tensors();
        opt.step(&mut tensors, &grads, &vec![true; grads.len()]);
        params.set_tensors(tensors);
    }
    totals
}

/// The plain multi-task objective: mean detection loss plus mean
/// segmentation loss.
pub fn unweighted(f: &mut Forward) -> Var {
    let d = f.tape.mean_all(f.detection);
    let s = f.tape.mean_all(f.segmentation);
    f.tape.add(d, s).unwrap()
}
