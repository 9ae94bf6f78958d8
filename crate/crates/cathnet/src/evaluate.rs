//! Scoring a model, or the ground truth itself, on a set of records.

use cathnet_core::metrics::{EvalReport, ImageEval};
use cathnet_core::model::{ModelError, Network, ParamStore, OUTPUT_STRIDE};
use cathnet_core::pipeline::{Batch, BatchError, DecodeConfig, Predictions};
use cathnet_core::tensor::ShapeError;
use cathnet_core::{Tape, Tensor};

/// Logit magnitude used when injecting ground truth as predictions.
const ORACLE_LOGIT: f64 = 30.0;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty dataset")]
    Empty,
    #[error("model expects {model_h}×{model_w} images but sample {id} is {data_h}×{data_w}")]
    SizeMismatch { id: String, model_h: usize, model_w: usize, data_h: usize, data_w: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

fn check_sizes(records: &[cathnet_core::synth::SampleRecord], size: [usize; 2]) -> Result<(), EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    for r in records {
        if [r.height, r.width] != size {
            return Err(EvalError::SizeMismatch {
                id: r.id.clone(),
                model_h: size[0],
                model_w: size[1],
                data_h: r.height,
                data_w: r.width,
            });
        }
    }
    Ok(())
}

fn score(
    records: &[cathnet_core::synth::SampleRecord],
    preds: Vec<Predictions>,
    decode: &DecodeConfig,
) -> Result<EvalReport, EvalError> {
    let mut dets = Vec::with_capacity(records.len());
    let mut masks = Vec::with_capacity(records.len());
    for p in &preds {
        dets.extend(p.detections(decode)?);
        masks.extend(p.masks());
    }
    let images: Vec<ImageEval<'_>> = records
        .iter()
        .zip(dets.into_iter().zip(masks))
        .map(|(r, (d, m))| ImageEval {
            id: &r.id,
            dets: d,
            gts: &r.electrodes,
            pred_mask: m,
            gt_mask: &r.mask,
            diagonal: (r.height as f64).hypot(r.width as f64),
        })
        .collect();
    Ok(EvalReport::from_images(&images))
}

/// Deterministic forward pass over `records` in chunks of `batch_size`.
pub fn evaluate_model(
    network: &Network,
    params: &ParamStore,
    records: &[cathnet_core::synth::SampleRecord],
    decode: &DecodeConfig,
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    check_sizes(records, network.config().input_size)?;
    let mut preds = Vec::new();
    for (c, chunk) in records.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<_> = chunk.iter().collect();
        let ids: Vec<usize> = (0..chunk.len()).map(|i| c * batch_size + i).collect();
        let batch = Batch::new(&refs, &ids)?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, |_| false);
        let image = tape.constant(batch.images.clone());
        let out = network.forward(&mut tape, &vars, image)?;
        preds.push(Predictions::from_output(&tape, &out));
    }
    score(records, preds, decode)
}

/// Scores the ground truth turned into network-shaped predictions: peak
/// cells get a large logit, sizes are copied, masks become ±logits.
pub fn evaluate_oracle(
    records: &[cathnet_core::synth::SampleRecord],
    decode: &DecodeConfig,
) -> Result<EvalReport, EvalError> {
    let first = records.first().ok_or(EvalError::Empty)?;
    check_sizes(records, [first.height, first.width])?;
    let mut preds = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let batch = Batch::new(&[r], &[i])?;
        let to_logit = |h: f64| {
            if h >= 1.0 {
                ORACLE_LOGIT
            } else {
                let p = h.clamp(1e-6, 0.5);
                (p / (1.0 - p)).ln()
            }
        };
        let (gh, gw) = (r.height / OUTPUT_STRIDE, r.width / OUTPUT_STRIDE);
        preds.push(Predictions {
            center_logits: Tensor::from_vec(
                &[1, 1, gh, gw],
                batch.heatmap.data().iter().map(|&h| to_logit(h)).collect(),
            ),
            size: batch.size.clone(),
            seg_logits: Tensor::from_vec(
                &[1, 1, r.height, r.width],
                r.mask.iter().map(|&m| if m { ORACLE_LOGIT } else { -ORACLE_LOGIT }).collect(),
            ),
        });
    }
    score(records, preds, decode)
}
