//! Detection and segmentation losses with per-sample outputs.
//!
//! Each loss is a fused tape op producing a `[B]` vector of per-sample
//! values; the batch loss is its mean, or its δ-masked mean upstream.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::{CustomOp, ShapeError, Tape, Tensor, Var, LOG_EPS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{loss}: target value {value} outside [0, 1]")]
    TargetRange { loss: &'static str, value: f64 },
    #[error("{loss}: mask value {value} is not binary")]
    NotBinary { loss: &'static str, value: f64 },
    #[error("non-finite {0} loss")]
    NonFinite(&'static str),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Exponent on the probability gap.
    pub focal_alpha: f64,
    /// Exponent on (1 − target) for negatives.
    pub focal_beta: f64,
    /// Weight of the size term inside the detection loss.
    pub lambda_size: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { focal_alpha: 2.0, focal_beta: 4.0, lambda_size: 1.0 }
    }
}

/// ln σ(z), finite for every finite z.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -libm::log1p(libm::exp(-z))
    } else {
        z - libm::log1p(libm::exp(z))
    }
}

fn softplus(z: f64) -> f64 {
    -log_sigmoid(-z)
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), ShapeError> {
    if a != b {
        return Err(ShapeError::Mismatch { op, detail: alloc::format!("prediction {a:?} vs target {b:?}") });
    }
    Ok(())
}

fn check_binary(loss: &'static str, m: &Tensor) -> Result<(), LossError> {
    match m.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(&value) => Err(LossError::NotBinary { loss, value }),
        None => Ok(()),
    }
}

fn rank4(op: &'static str, s: &[usize]) -> Result<(usize, usize), ShapeError> {
    match *s {
        [b, _, h, w] => Ok((b, h * w)),
        _ => Err(ShapeError::Rank { op, expected: 4, got: s.to_vec() }),
    }
}

struct Focal {
    target: Tensor,
    peaks: Tensor,
    alpha: f64,
    beta: f64,
    norm: Vec<f64>,
}

impl Focal {
    /// Loss and d/dz for one logit.
    fn pixel(&self, z: f64, y: f64, peak: bool) -> (f64, f64) {
        let a = self.alpha;
        let lp = log_sigmoid(z);
        let lq = log_sigmoid(-z);
        let p = libm::exp(lp);
        let q = libm::exp(lq);
        if peak {
            let l = -libm::pow(q, a) * lp;
            let d = a * p * libm::pow(q, a) * lp - libm::pow(q, a + 1.0);
            (l, d)
        } else {
            let w = libm::pow(1.0 - y, self.beta);
            let l = -w * libm::pow(p, a) * lq;
            let d = -w * (a * libm::pow(p, a) * q * lq - libm::pow(p, a + 1.0));
            (l, d)
        }
    }
}

impl CustomOp for Focal {
    fn name(&self) -> &'static str {
        "focal_center_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let z = inputs[0].data();
        let n = z.len() / grad.len();
        let gz = (0..z.len())
            .map(|i| {
                let (_, d) = self.pixel(z[i], self.target.data()[i], self.peaks.data()[i] == 1.0);
                d * grad[i / n] / self.norm[i / n]
            })
            .collect();
        vec![gz]
    }
}

/// Penalty-reduced pixelwise focal loss on σ(logits), per sample, normalized
/// by that sample's peak count (at least 1).
pub fn focal_center_loss(
    t: &mut Tape,
    logits: Var,
    heatmap: &Tensor,
    center_mask: &Tensor,
    cfg: &LossConfig,
) -> Result<Var, LossError> {
    let (b, _) = rank4("focal_center_loss", t.shape(logits))?;
    check_same("focal_center_loss", t.shape(logits), heatmap.shape())?;
    check_same("focal_center_loss", t.shape(logits), center_mask.shape())?;
    if let Some(&value) = heatmap.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(LossError::TargetRange { loss: "focal_center_loss", value });
    }
    check_binary("focal_center_loss", center_mask)?;
    let n = heatmap.len() / b;
    let norm: Vec<f64> = center_mask.data().chunks(n).map(|c| c.iter().sum::<f64>().max(1.0)).collect();
    let op = Focal {
        target: heatmap.clone(),
        peaks: center_mask.clone(),
        alpha: cfg.focal_alpha,
        beta: cfg.focal_beta,
        norm,
    };
    let z = t.value(logits).data();
    let mut out = vec![0.0; b];
    for (i, &zi) in z.iter().enumerate() {
        out[i / n] += op.pixel(zi, heatmap.data()[i], center_mask.data()[i] == 1.0).0;
    }
    for (o, k) in out.iter_mut().zip(&op.norm) {
        *o /= k;
    }
    Ok(t.custom(&[logits], Tensor::from_vec(&[b], out), Box::new(op)))
}

struct SizeL1 {
    target: Tensor,
    mask: Vec<bool>,
    count: Vec<f64>,
}

impl CustomOp for SizeL1 {
    fn name(&self) -> &'static str {
        "size_l1_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let x = inputs[0].data();
        let per = x.len() / grad.len();
        let plane = self.mask.len() / grad.len();
        let gx = (0..x.len())
            .map(|i| {
                let bi = i / per;
                let pix = bi * plane + i % plane;
                let diff = x[i] - self.target.data()[i];
                if !self.mask[pix] || diff == 0.0 {
                    0.0
                } else {
                    diff.signum() * grad[bi] / (self.count[bi] * 2.0)
                }
            })
            .collect();
        vec![gx]
    }
}

/// Per-sample L1 size error over center positions, plus a flag per sample
/// that had no centers (those contribute 0).
pub fn size_l1_loss(
    t: &mut Tape,
    size_pred: Var,
    size_target: &Tensor,
    center_mask: &Tensor,
) -> Result<(Var, Vec<bool>), LossError> {
    let s = t.shape(size_pred).to_vec();
    let (b, plane) = rank4("size_l1_loss", &s)?;
    check_same("size_l1_loss", &s, size_target.shape())?;
    if s[1] != 2 || center_mask.shape() != [b, 1, s[2], s[3]] {
        return Err(ShapeError::Mismatch {
            op: "size_l1_loss",
            detail: alloc::format!("size {s:?} vs center mask {:?}", center_mask.shape()),
        }
        .into());
    }
    check_binary("size_l1_loss", center_mask)?;
    let mask: Vec<bool> = center_mask.data().iter().map(|&v| v == 1.0).collect();
    let count: Vec<f64> = mask.chunks(plane).map(|c| c.iter().filter(|&&m| m).count() as f64).collect();
    let x = t.value(size_pred).data();
    let mut out = vec![0.0; b];
    for (i, (&xi, &yi)) in x.iter().zip(size_target.data()).enumerate() {
        let bi = i / (2 * plane);
        if mask[bi * plane + i % plane] {
            out[bi] += (xi - yi).abs();
        }
    }
    let empty: Vec<bool> = count.iter().map(|&c| c == 0.0).collect();
    for (o, &c) in out.iter_mut().zip(&count) {
        if c > 0.0 {
            *o /= c * 2.0;
        }
    }
    let op = SizeL1 { target: size_target.clone(), mask, count };
    Ok((t.custom(&[size_pred], Tensor::from_vec(&[b], out), Box::new(op)), empty))
}

struct BceIou {
    mask: Tensor,
    inter: Vec<f64>,
    union: Vec<f64>,
}

impl CustomOp for BceIou {
    fn name(&self) -> &'static str {
        "bce_iou_seg_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Vec<f64>> {
        let z = inputs[0].data();
        let n = z.len() / grad.len();
        let gz = (0..z.len())
            .map(|i| {
                let bi = i / n;
                let m = self.mask.data()[i];
                let p = crate::tensor::sigmoid(z[i]);
                let bce = (p - m) / n as f64;
                let u = self.union[bi] + LOG_EPS;
                let dr = (m * u - (self.inter[bi] + LOG_EPS) * (1.0 - m)) / (u * u);
                grad[bi] * (bce - dr * p * (1.0 - p))
            })
            .collect();
        vec![gz]
    }
}

/// Per-sample mean pixel BCE plus soft-IoU loss 1 − (I+ε)/(U+ε).
pub fn bce_iou_seg_loss(t: &mut Tape, logits: Var, mask: &Tensor) -> Result<Var, LossError> {
    let (b, _) = rank4("bce_iou_seg_loss", t.shape(logits))?;
    check_same("bce_iou_seg_loss", t.shape(logits), mask.shape())?;
    check_binary("bce_iou_seg_loss", mask)?;
    let z = t.value(logits).data();
    let n = z.len() / b;
    let mut out = vec![0.0; b];
    let mut inter = vec![0.0; b];
    let mut union = vec![0.0; b];
    for bi in 0..b {
        let (mut bce, mut sp, mut sm) = (0.0, 0.0, 0.0);
        for i in bi * n..(bi + 1) * n {
            let m = mask.data()[i];
            bce += softplus(z[i]) - m * z[i];
            let p = crate::tensor::sigmoid(z[i]);
            inter[bi] += p * m;
            sp += p;
            sm += m;
        }
        union[bi] = sp + sm - inter[bi];
        out[bi] = bce / n as f64 + 1.0 - (inter[bi] + LOG_EPS) / (union[bi] + LOG_EPS);
    }
    let op = BceIou { mask: mask.clone(), inter, union };
    Ok(t.custom(&[logits], Tensor::from_vec(&[b], out), Box::new(op)))
}

/// Mean pixel binary cross-entropy of logits against a {0, 1} mask.
pub fn mean_bce(logits: &[f64], mask: &[f64]) -> f64 {
    assert_eq!(logits.len(), mask.len());
    let sum: f64 = logits.iter().zip(mask).map(|(&z, &m)| softplus(z) - m * z).sum();
    sum / logits.len().max(1) as f64
}

/// Reciprocal task weight 1 / max(κ̄, floor).
pub fn inverse_kpi_weight(kpi_bar: f64, floor: f64) -> f64 {
    1.0 / kpi_bar.max(floor)
}

/// w_d·L_d + w_s·L_s over the tasks that are present.
///
/// Rejects a non-finite component before anything is combined.
pub fn combine_losses(
    t: &mut Tape,
    detection: Option<(Var, f64)>,
    segmentation: Option<(Var, f64)>,
) -> Result<Var, LossError> {
    let mut terms = Vec::new();
    for (name, part) in [("detection", detection), ("segmentation", segmentation)] {
        if let Some((l, w)) = part {
            if !t.value(l).all_finite() || !w.is_finite() {
                return Err(LossError::NonFinite(name));
            }
            terms.push(t.scale(l, w));
        }
    }
    match terms.as_slice() {
        [] => Err(ShapeError::Mismatch { op: "combine_losses", detail: "no task losses".into() }.into()),
        [one] => Ok(*one),
        [a, b] => Ok(t.add(*a, *b)?),
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + core::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_sigmoid(-800.0).is_finite());
        assert_eq!(log_sigmoid(800.0), 0.0);
    }

    #[test]
    fn weight_floor() {
        assert_eq!(inverse_kpi_weight(0.01, 0.05), 20.0);
        assert_eq!(inverse_kpi_weight(0.5, 0.05), 2.0);
    }
}
