//! Glue between records, network outputs, metrics and KPI measures.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::mean_bce;
use crate::metrics::{
    binarize_logits, decode_detections, dice, localization_errors, region_similarity, BBox, Detection,
};
use crate::model::{NetworkOutput, OUTPUT_STRIDE};
use crate::prioritizer::SampleMeasures;
use crate::synth::{make_targets, SampleRecord, SynthError};
use crate::tensor::{ShapeError, Tape, Tensor};

/// Peak decoding parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_detections: usize,
    pub min_score: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { max_detections: 20, min_score: 0.05 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("empty batch")]
    Empty,
    #[error("sample {id} is {got_h}×{got_w}, batch expects {h}×{w}")]
    Size { id: usize, h: usize, w: usize, got_h: usize, got_w: usize },
    #[error(transparent)]
    Targets(#[from] SynthError),
}

/// Stacked network inputs and targets for a set of records.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub height: usize,
    pub width: usize,
    /// [B,1,H,W], intensities shifted to [−½, ½].
    pub images: Tensor,
    /// [B,1,H,W] in {0, 1}.
    pub masks: Tensor,
    /// [B,1,h,w] at output stride.
    pub heatmap: Tensor,
    pub center_mask: Tensor,
    /// [B,2,h,w]
    pub size: Tensor,
    pub boxes: Vec<Vec<BBox>>,
    pub gt_masks: Vec<Vec<bool>>,
}

impl Batch {
    pub fn new(records: &[&SampleRecord], ids: &[usize]) -> Result<Self, BatchError> {
        assert_eq!(records.len(), ids.len());
        let first = records.first().ok_or(BatchError::Empty)?;
        let (h, w) = (first.height, first.width);
        let b = records.len();
        let (gh, gw) = (h / OUTPUT_STRIDE, w / OUTPUT_STRIDE);
        let mut images = Vec::with_capacity(b * h * w);
        let mut masks = Vec::with_capacity(b * h * w);
        let mut heat = Vec::with_capacity(b * gh * gw);
        let mut centers = Vec::with_capacity(b * gh * gw);
        let mut size = Vec::with_capacity(2 * b * gh * gw);
        for (r, &id) in records.iter().zip(ids) {
            if (r.height, r.width) != (h, w) || r.image.len() != h * w || r.mask.len() != h * w {
                return Err(BatchError::Size { id, h, w, got_h: r.height, got_w: r.width });
            }
            let t = make_targets(r, OUTPUT_STRIDE)?;
            images.extend(r.image.iter().map(|v| v - 0.5));
            masks.extend(r.mask.iter().map(|&m| m as u8 as f64));
            heat.extend_from_slice(&t.heatmap);
            centers.extend(t.center_mask.iter().map(|&m| m as u8 as f64));
            size.extend_from_slice(&t.size_map);
        }
        Ok(Self {
            ids: ids.to_vec(),
            height: h,
            width: w,
            images: Tensor::from_vec(&[b, 1, h, w], images),
            masks: Tensor::from_vec(&[b, 1, h, w], masks),
            heatmap: Tensor::from_vec(&[b, 1, gh, gw], heat),
            center_mask: Tensor::from_vec(&[b, 1, gh, gw], centers),
            size: Tensor::from_vec(&[b, 2, gh, gw], size),
            boxes: records.iter().map(|r| r.electrodes.clone()).collect(),
            gt_masks: records.iter().map(|r| r.mask.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn diagonal(&self) -> f64 {
        libm::hypot(self.height as f64, self.width as f64)
    }
}

/// Output values detached from the tape.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub center_logits: Tensor,
    pub size: Tensor,
    pub seg_logits: Tensor,
}

impl Predictions {
    pub fn from_output(t: &Tape, out: &NetworkOutput) -> Self {
        Self {
            center_logits: t.value(out.center_logits).clone(),
            size: t.value(out.size_pred).clone(),
            seg_logits: t.value(out.seg_logits).clone(),
        }
    }

    pub fn detections(&self, decode: &DecodeConfig) -> Result<Vec<Vec<Detection>>, ShapeError> {
        decode_detections(&self.center_logits, &self.size, decode.max_detections, OUTPUT_STRIDE, decode.min_score)
    }

    /// Binary masks (logit > 0), one per sample.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        let b = self.seg_logits.shape()[0];
        let n = self.seg_logits.len() / b.max(1);
        (0..b).map(|i| binarize_logits(&self.seg_logits.data()[i * n..(i + 1) * n])).collect()
    }
}

/// Raw quality measures per sample. `focal` holds the per-sample focal
/// loss values when detection was evaluated.
pub fn sample_measures(
    batch: &Batch,
    pred: &Predictions,
    focal: Option<&[f64]>,
    decode: &DecodeConfig,
) -> Result<Vec<SampleMeasures>, ShapeError> {
    let dets = pred.detections(decode)?;
    let masks = pred.masks();
    let n = batch.height * batch.width;
    let diag = batch.diagonal();
    (0..batch.len())
        .map(|i| {
            let detection = focal.and_then(|f| {
                localization_errors(&dets[i], &batch.boxes[i], diag).map(|(mae, rmse)| (mae, rmse, f[i]))
            });
            let gt = &batch.gt_masks[i];
            let bce = mean_bce(&pred.seg_logits.data()[i * n..(i + 1) * n], &batch.masks.data()[i * n..(i + 1) * n]);
            let segmentation = Some((region_similarity(&masks[i], gt)?, dice(&masks[i], gt)?, bce));
            Ok(SampleMeasures { detection, segmentation })
        })
        .collect()
}
