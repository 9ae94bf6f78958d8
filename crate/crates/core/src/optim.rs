//! AdamW with decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub moments: Vec<Moments>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub updated: usize,
    /// Indices of tensors skipped because their gradient was not finite.
    pub skipped_non_finite: Vec<usize>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let moments =
            params.iter().map(|p| Moments { step: 0, m: vec![0.0; p.len()], v: vec![0.0; p.len()] }).collect();
        Self { config, moments }
    }

    /// One update of every parameter whose `active` flag is set.
    ///
    /// `p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], active: &[bool]) -> StepReport {
        assert_eq!(params.len(), self.moments.len());
        assert_eq!(grads.len(), params.len());
        let c = self.config;
        let mut report = StepReport::default();
        for (i, ((p, g), st)) in params.iter_mut().zip(grads).zip(&mut self.moments).enumerate() {
            if !active.get(i).copied().unwrap_or(true) {
                continue;
            }
            if !g.all_finite() {
                log::warn!("adamw: non-finite gradient in parameter {i}, update skipped");
                report.skipped_non_finite.push(i);
                continue;
            }
            st.step += 1;
            let bc1 = 1.0 - libm::pow(c.beta1, st.step as f64);
            let bc2 = 1.0 - libm::pow(c.beta2, st.step as f64);
            for (((w, &gr), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut st.m).zip(&mut st.v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * gr;
                *v = c.beta2 * *v + (1.0 - c.beta2) * gr * gr;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= c.lr * c.weight_decay * *w;
                *w -= c.lr * m_hat / (libm::sqrt(v_hat) + c.eps);
            }
            report.updated += 1;
        }
        report
    }
}
