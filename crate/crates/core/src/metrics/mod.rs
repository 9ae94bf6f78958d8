//! Decoding network outputs and scoring them.

mod detection;
mod region;
mod skeleton;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use detection::{
    average_precision, average_precision_at, center_distances, coco_thresholds, decode_detections, greedy_match,
    interpolated_ap, localization_errors, mae_rmse, BBox, Detection,
};
pub use region::{binarize_logits, dice, region_similarity};
pub use skeleton::{components8, skeletonize};

/// Per-image row of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    /// AP at IoU 0.5 on this image alone, in [0, 1].
    pub ap50: f64,
    pub j: f64,
    /// `None` for images without electrodes.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
}

/// Split-level scores. AP, 𝒥 and mean KPI are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub mean_j: f64,
    pub mae_px: f64,
    pub rmse_px: f64,
    pub mean_kpi: f64,
    pub per_sample: Vec<SampleScore>,
}

/// Everything needed to score one image.
#[derive(Debug, Clone)]
pub struct ImageEval<'a> {
    pub id: &'a str,
    pub dets: Vec<Detection>,
    pub gts: &'a [BBox],
    pub pred_mask: Vec<bool>,
    pub gt_mask: &'a [bool],
    /// Image diagonal, used as the miss penalty.
    pub diagonal: f64,
}

impl EvalReport {
    /// Aggregate per-image results: AP over the pooled ranking, 𝒥 averaged
    /// per image, MAE/RMSE over all ground-truth electrodes.
    pub fn from_images(images: &[ImageEval<'_>]) -> Self {
        let thresholds = coco_thresholds();
        let dets: Vec<Vec<Detection>> = images.iter().map(|i| i.dets.clone()).collect();
        let gts: Vec<Vec<BBox>> = images.iter().map(|i| i.gts.to_vec()).collect();
        let ap = average_precision(&dets, &gts, &thresholds);
        let mut all_dist = Vec::new();
        let per_sample: Vec<SampleScore> = images
            .iter()
            .map(|img| {
                let dist = center_distances(&img.dets, img.gts, img.diagonal);
                all_dist.extend_from_slice(&dist);
                let err = mae_rmse(&dist);
                SampleScore {
                    id: img.id.into(),
                    ap50: average_precision_at(core::slice::from_ref(&img.dets), &[img.gts.to_vec()], 0.5),
                    j: region_similarity(&img.pred_mask, img.gt_mask).expect("mask sizes agree"),
                    mae: err.map(|e| e.0),
                    rmse: err.map(|e| e.1),
                }
            })
            .collect();
        let mean_j = if per_sample.is_empty() {
            0.0
        } else {
            per_sample.iter().map(|s| s.j).sum::<f64>() / per_sample.len() as f64
        };
        let (mae_px, rmse_px) = mae_rmse(&all_dist).unwrap_or((0.0, 0.0));
        Self { ap, mean_j, mae_px, rmse_px, mean_kpi: (ap + mean_j) / 2.0, per_sample }
    }
}
