use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::{sigmoid, ShapeError, Tensor};

/// Axis-aligned box given by center and extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let ix = overlap(self.cx, self.w, o.cx, o.w);
        let iy = overlap(self.cy, self.h, o.cy, o.h);
        let inter = ix * iy;
        let union = self.w * self.h + o.w * o.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn center_distance(&self, o: &BBox) -> f64 {
        libm::hypot(self.cx - o.cx, self.cy - o.cy)
    }
}

fn overlap(c1: f64, e1: f64, c2: f64, e2: f64) -> f64 {
    let lo = (c1 - e1 / 2.0).max(c2 - e2 / 2.0);
    let hi = (c1 + e1 / 2.0).min(c2 + e2 / 2.0);
    (hi - lo).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Peak decoding of one batch of center logits [B,1,h,w] and sizes [B,2,h,w].
///
/// A cell survives iff it equals the maximum of its 3×3 window (clipped at
/// the border), so plateaus keep every tied cell. Survivors are stably
/// sorted by descending score, which leaves ties in row-major scan order,
/// and the first `max_det` are kept. Cell (gx, gy) maps to the pixel center
/// ((gx + ½)·stride, (gy + ½)·stride). Peaks scoring below `min_score`
/// are dropped before ranking.
pub fn decode_detections(
    center_logits: &Tensor,
    size_pred: &Tensor,
    max_det: usize,
    stride: usize,
    min_score: f64,
) -> Result<Vec<Vec<Detection>>, ShapeError> {
    let s = center_logits.shape();
    let (b, h, w) = match *s {
        [b, 1, h, w] => (b, h, w),
        _ => {
            return Err(ShapeError::Mismatch {
                op: "decode_detections",
                detail: alloc::format!("center logits {s:?} are not B×1×h×w"),
            })
        }
    };
    if size_pred.shape() != [b, 2, h, w] {
        return Err(ShapeError::Mismatch {
            op: "decode_detections",
            detail: alloc::format!("size {:?} vs center {s:?}", size_pred.shape()),
        });
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let heat: Vec<f64> = center_logits.data()[bi * plane..(bi + 1) * plane].iter().map(|&z| sigmoid(z)).collect();
        let sizes = &size_pred.data()[bi * 2 * plane..(bi + 1) * 2 * plane];
        let mut dets = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = heat[y * w + x];
                let mut m = v;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xx in x.saturating_sub(1)..(x + 2).min(w) {
                        m = m.max(heat[yy * w + xx]);
                    }
                }
                if v == m && v >= min_score {
                    let st = stride as f64;
                    dets.push(Detection {
                        bbox: BBox::new(
                            (x as f64 + 0.5) * st,
                            (y as f64 + 0.5) * st,
                            sizes[y * w + x],
                            sizes[plane + y * w + x],
                        ),
                        score: v,
                    });
                }
            }
        }
        dets.sort_by(|a, b| b.score.total_cmp(&a.score));
        dets.truncate(max_det.max(1));
        out.push(dets);
    }
    Ok(out)
}

/// For each detection (in the given order) the index of the ground-truth box
/// it claims: the unmatched box with the highest IoU ≥ `threshold`, lowest
/// index on ties.
pub fn greedy_match(dets: &[Detection], gts: &[BBox], threshold: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = d.bbox.iou(g);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            best.map(|(gi, _)| {
                taken[gi] = true;
                gi
            })
        })
        .collect()
}

/// 0.50, 0.55, …, 0.95
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// 101-point interpolated area under a precision/recall sequence ordered by rank.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut env = precision.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        while k < recall.len() && recall[k] < target {
            k += 1;
        }
        if k < recall.len() {
            sum += env[k];
        }
    }
    sum / 101.0
}

/// Average precision over images at one IoU threshold.
pub fn average_precision_at(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let n_det: usize = dets.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return if n_det == 0 { 1.0 } else { 0.0 };
    }
    // per-image matching in emission order, then a global ranking
    let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::with_capacity(n_det);
    for (img, (d, g)) in dets.iter().zip(gts).enumerate() {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[b].score.total_cmp(&d[a].score));
        let sorted: Vec<Detection> = order.iter().map(|&i| d[i]).collect();
        for (k, m) in greedy_match(&sorted, g, threshold).into_iter().enumerate() {
            ranked.push((sorted[k].score, img, k, m.is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (i, r) in ranked.iter().enumerate() {
        tp += r.3 as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    interpolated_ap(&precision, &recall)
}

/// Mean of [`average_precision_at`] over `thresholds`.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<BBox>], thresholds: &[f64]) -> f64 {
    assert_eq!(dets.len(), gts.len(), "one detection list per image");
    thresholds.iter().map(|&t| average_precision_at(dets, gts, t)).sum::<f64>() / thresholds.len() as f64
}

/// Center distances of every ground-truth box for one image: the matched
/// detection's distance at IoU 0.5, or `miss_penalty` when unmatched.
pub fn center_distances(dets: &[Detection], gts: &[BBox], miss_penalty: f64) -> Vec<f64> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut dist = vec![miss_penalty; gts.len()];
    for (d, m) in sorted.iter().zip(greedy_match(&sorted, gts, 0.5)) {
        if let Some(g) = m {
            dist[g] = d.bbox.center_distance(&gts[g]);
        }
    }
    dist
}

/// (MAE, RMSE) of a set of distances; `None` when empty.
pub fn mae_rmse(dist: &[f64]) -> Option<(f64, f64)> {
    if dist.is_empty() {
        return None;
    }
    let n = dist.len() as f64;
    let mae = dist.iter().sum::<f64>() / n;
    let rmse = libm::sqrt(dist.iter().map(|d| d * d).sum::<f64>() / n);
    Some((mae, rmse.max(mae)))
}

/// Localization errors for one image; `None` without ground truth.
pub fn localization_errors(dets: &[Detection], gts: &[BBox], miss_penalty: f64) -> Option<(f64, f64)> {
    mae_rmse(&center_distances(dets, gts, miss_penalty))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        let a = BBox::new(5.0, 5.0, 4.0, 4.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BBox::new(50.0, 5.0, 4.0, 4.0)), 0.0);
        // shifted by half a width: 8 / (16 + 16 − 8)
        assert!((a.iou(&BBox::new(7.0, 5.0, 4.0, 4.0)) - 8.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_of_perfect_ranking() {
        assert!((interpolated_ap(&[1.0, 1.0], &[0.5, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(interpolated_ap(&[0.0], &[0.0]), 0.0);
    }
}
