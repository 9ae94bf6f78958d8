//! KPI tracking, sample selection and task weighting.
//!
//! Every iteration the trainer turns the batch predictions into per-sample
//! KPIs κ ∈ [0, 1] (one per task, absent when a sample has no ground truth
//! for that task), and [`Prioritizer::step`] smooths them into the task
//! KPIs κ̄, updates the per-sample difficulty registry D = 1/κ, and returns
//! the sample mask δ for each task together with the task weights 1/κ̄.

mod curves;
mod select;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::losses::inverse_kpi_weight;
use crate::tensor::{ShapeError, Tape, Tensor, Var};

pub use curves::{record_difficulty_curves, CurveRow, CurveSink};
pub use select::{difficulty_order, select_samples, topk_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "d")]
    Detection,
    #[serde(rename = "s")]
    Segmentation,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Detection, Task::Segmentation];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Task::Detection => "d",
            Task::Segmentation => "s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Soft,
    HardThreshold,
    FixedFraction,
    TopkSoft,
    TopkHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionKpi {
    Mae,
    Rmse,
    FocalLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationKpi {
    Iou,
    Dice,
    CrossEntropy,
}

/// How task weights are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TaskWeighting {
    /// w_t = 1 / max(κ̄_t, floor)
    Dynamic,
    /// κ̄ pinned to constants, w_t = 1/κ_t.
    Fixed { kpi_d: f64, kpi_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrioritizationPolicy {
    pub strategy: Strategy,
    pub retention_rho: f64,
    pub threshold_eta: f64,
    pub alpha: f64,
    pub kpi_metric_d: DetectionKpi,
    pub kpi_metric_s: SegmentationKpi,
    pub eps_floor: f64,
    /// MAE scale as a fraction of the image diagonal in κ_d = 1/(1 + MAE/scale).
    pub mae_scale: f64,
    /// EMA-smooth per-sample difficulty with the same α.
    pub difficulty_momentum: bool,
    /// When false every available sample gets δ = 1.
    pub sample_selection: bool,
    pub task_weighting: TaskWeighting,
}

impl Default for PrioritizationPolicy {
    fn default() -> Self {
        Self {
            strategy: Strategy::TopkHard,
            retention_rho: 0.7,
            threshold_eta: 0.5,
            alpha: 0.5,
            kpi_metric_d: DetectionKpi::Mae,
            kpi_metric_s: SegmentationKpi::Iou,
            eps_floor: 0.05,
            mae_scale: 0.05,
            difficulty_momentum: true,
            sample_selection: true,
            task_weighting: TaskWeighting::Dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid prioritization policy: {0}")]
pub struct PolicyError(pub &'static str);

impl PrioritizationPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.retention_rho > 0.0 && self.retention_rho <= 1.0) {
            return Err(PolicyError("retention_rho must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PolicyError("alpha must be in [0, 1]"));
        }
        if !(self.eps_floor > 0.0 && self.eps_floor <= 1.0) {
            return Err(PolicyError("eps_floor must be in (0, 1]"));
        }
        if !(self.mae_scale > 0.0) || !self.threshold_eta.is_finite() {
            return Err(PolicyError("mae_scale must be positive and threshold_eta finite"));
        }
        if let TaskWeighting::Fixed { kpi_d, kpi_s } = self.task_weighting {
            if !(kpi_d > 0.0 && kpi_s > 0.0 && kpi_d.is_finite() && kpi_s.is_finite()) {
                return Err(PolicyError("fixed task KPIs must be positive"));
            }
        }
        Ok(())
    }
}

/// Raw per-sample quality measures from which KPIs are derived.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleMeasures {
    /// (MAE, RMSE, focal loss); `None` without electrodes.
    pub detection: Option<(f64, f64, f64)>,
    /// (IoU, Dice, mean BCE)
    pub segmentation: Option<(f64, f64, f64)>,
}

/// Bounded detection KPI: 1 at zero error, decreasing in the error.
pub fn kpi_from_error(err_px: f64, diagonal: f64, scale: f64) -> f64 {
    1.0 / (1.0 + err_px / (scale * diagonal))
}

/// Per-sample κ per task under the policy's metric choice.
pub fn compute_sample_kpis(m: &SampleMeasures, policy: &PrioritizationPolicy, diagonal: f64) -> [Option<f64>; 2] {
    let d = m.detection.map(|(mae, rmse, focal)| match policy.kpi_metric_d {
        DetectionKpi::Mae => kpi_from_error(mae, diagonal, policy.mae_scale),
        DetectionKpi::Rmse => kpi_from_error(rmse, diagonal, policy.mae_scale),
        DetectionKpi::FocalLoss => libm::exp(-focal),
    });
    let s = m.segmentation.map(|(iou, dice, bce)| match policy.kpi_metric_s {
        SegmentationKpi::Iou => iou,
        SegmentationKpi::Dice => dice,
        SegmentationKpi::CrossEntropy => libm::exp(-bce),
    });
    [d, s].map(|k| k.map(|v| v.clamp(0.0, 1.0)))
}

/// κ̄ ← ακ + (1−α)κ̄, initialized by the first observation, floored last.
pub fn ema_update(prev: Option<f64>, kpi: f64, alpha: f64, floor: f64) -> f64 {
    let raw = match prev {
        None => kpi,
        Some(p) => alpha * kpi + (1.0 - alpha) * p,
    };
    raw.max(floor)
}

/// ℒ_t = (1/N) Σ δ_i L_i over the full batch size N.
pub fn masked_task_loss(t: &mut Tape, per_sample: Var, delta: &[f64]) -> Result<Var, ShapeError> {
    let n = delta.len();
    if t.shape(per_sample) != [n] {
        return Err(ShapeError::Mismatch {
            op: "masked_task_loss",
            detail: alloc::format!("losses {:?} vs {n} weights", t.shape(per_sample)),
        });
    }
    let d = t.constant(Tensor::from_vec(&[n], delta.to_vec()));
    let weighted = t.mul(per_sample, d)?;
    let s = t.sum_all(weighted);
    Ok(t.div_scalar(s, n as f64))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Selection {
    id: usize,
    selected: [bool; 2],
}

/// Smoothed task KPIs, the per-sample difficulty registry and the step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiState {
    pub kpi_bar: [Option<f64>; 2],
    pub alpha: f64,
    pub tau: u64,
    difficulty: BTreeMap<usize, [Option<f64>; 2]>,
    last_batch: Vec<Selection>,
    /// Fixed-fraction (selected, ranked) id sets per task.
    fixed: [Option<(BTreeSet<usize>, BTreeSet<usize>)>; 2],
}

impl KpiState {
    pub fn new(alpha: f64) -> Self {
        Self {
            kpi_bar: [None, None],
            alpha,
            tau: 0,
            difficulty: BTreeMap::new(),
            last_batch: Vec::new(),
            fixed: [None, None],
        }
    }

    pub fn difficulty(&self, id: usize, task: Task) -> Option<f64> {
        self.difficulty.get(&id).and_then(|d| d[task.index()])
    }

    pub fn registered_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.difficulty.keys().copied()
    }

    /// Whether `id` was in the last batch with δ = 1 for `task`.
    pub fn was_selected(&self, id: usize, task: Task) -> bool {
        self.last_batch.iter().any(|s| s.id == id && s.selected[task.index()])
    }

    /// Freeze the fixed-fraction selection for the coming epoch: the top
    /// ⌈ρ·n⌉ registered samples by difficulty. Samples not yet seen are
    /// always selected.
    pub fn rank_epoch(&mut self, rho: f64) {
        for task in Task::ALL {
            let entries: Vec<(usize, f64)> =
                self.difficulty.iter().filter_map(|(&id, d)| d[task.index()].map(|v| (id, v))).collect();
            let ids: Vec<usize> = entries.iter().map(|e| e.0).collect();
            let ds: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let all: Vec<usize> = (0..entries.len()).collect();
            let order = difficulty_order(&ids, &ds, &all);
            let keep = topk_count(rho, entries.len());
            let selected = order[..keep].iter().map(|&i| ids[i]).collect();
            self.fixed[task.index()] = Some((selected, ids.into_iter().collect()));
        }
    }

    fn fixed_selected(&self, task: Task, id: usize) -> bool {
        match &self.fixed[task.index()] {
            None => true,
            Some((selected, ranked)) => selected.contains(&id) || !ranked.contains(&id),
        }
    }
}

/// Outcome of one prioritization step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// δ per task, aligned with the batch.
    pub delta: [Vec<f64>; 2],
    /// Task weights (w_d, w_s).
    pub weights: [f64; 2],
    /// Batch KPI per task (mean over available samples).
    pub batch_kpi: [Option<f64>; 2],
}

pub fn task_weights(state: &KpiState, policy: &PrioritizationPolicy) -> [f64; 2] {
    match policy.task_weighting {
        TaskWeighting::Dynamic => state.kpi_bar.map(|k| inverse_kpi_weight(k.unwrap_or(1.0), policy.eps_floor)),
        TaskWeighting::Fixed { kpi_d, kpi_s } => [1.0 / kpi_d, 1.0 / kpi_s],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prioritizer {
    pub policy: PrioritizationPolicy,
    pub state: KpiState,
}

impl Prioritizer {
    pub fn new(policy: PrioritizationPolicy) -> Self {
        Self { state: KpiState::new(policy.alpha), policy }
    }

    /// Advance τ and process one batch. `kpis[i]` holds the per-task κ of
    /// sample `ids[i]`; tasks not in `active` receive δ = 0.
    pub fn step(&mut self, ids: &[usize], kpis: &[[Option<f64>; 2]], active: &[Task]) -> Decision {
        assert_eq!(ids.len(), kpis.len());
        let p = self.policy;
        let st = &mut self.state;
        st.tau += 1;
        let n = ids.len();
        let mut delta = [vec![0.0; n], vec![0.0; n]];
        let mut batch_kpi = [None, None];
        for &task in active {
            let ti = task.index();
            let avail: Vec<bool> = kpis.iter().map(|k| k[ti].is_some()).collect();
            let vals: Vec<f64> = kpis.iter().filter_map(|k| k[ti]).collect();
            if !vals.is_empty() {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                batch_kpi[ti] = Some(mean);
                st.kpi_bar[ti] = Some(ema_update(st.kpi_bar[ti], mean, p.alpha, p.eps_floor));
            }
            let mut d = vec![0.0; n];
            for i in 0..n {
                let Some(k) = kpis[i][ti] else { continue };
                let raw = 1.0 / k.max(p.eps_floor);
                let entry = st.difficulty.entry(ids[i]).or_insert([None, None]);
                let smoothed = match (p.difficulty_momentum, entry[ti]) {
                    (true, Some(prev)) => p.alpha * raw + (1.0 - p.alpha) * prev,
                    _ => raw,
                };
                entry[ti] = Some(smoothed);
                d[i] = smoothed;
            }
            delta[ti] = if p.sample_selection {
                let frozen = &*st;
                select_samples(p.strategy, p.retention_rho, p.threshold_eta, ids, &d, &avail, |id| {
                    frozen.fixed_selected(task, id)
                })
            } else {
                avail.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
            };
        }
        st.last_batch = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| Selection { id, selected: [delta[0][i] == 1.0, delta[1][i] == 1.0] })
            .collect();
        Decision { delta, weights: task_weights(st, &p), batch_kpi }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_arithmetic() {
        assert!((ema_update(Some(0.8), 0.4, 0.5, 0.05) - 0.6).abs() < 1e-15);
        assert_eq!(ema_update(Some(0.8), 0.4, 1.0, 0.05), 0.4);
        assert_eq!(ema_update(None, 0.3, 0.5, 0.05), 0.3);
        assert_eq!(ema_update(Some(0.01), 0.0, 0.5, 0.05), 0.05);
    }

    #[test]
    fn kpi_mapping_is_one_at_zero_error() {
        assert_eq!(kpi_from_error(0.0, 90.0, 0.05), 1.0);
        assert!(kpi_from_error(4.5, 90.0, 0.05) == 0.5);
    }

    #[test]
    fn weights_are_reciprocal() {
        let mut s = KpiState::new(0.5);
        let p = PrioritizationPolicy::default();
        s.kpi_bar = [Some(0.5), Some(0.25)];
        assert_eq!(task_weights(&s, &p), [2.0, 4.0]);
        s.kpi_bar = [Some(1.0), Some(1.0)];
        assert_eq!(task_weights(&s, &p), [1.0, 1.0]);
    }
}
