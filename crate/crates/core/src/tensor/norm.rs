use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::{ShapeError, Tensor};

const NORM_EPS: f64 = 1e-5;

pub(crate) struct GroupNormRecord {
    x: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    normalized: Vec<f64>,
    rstd: Vec<f64>,
}

impl GroupNormRecord {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    pub(crate) fn backward<'a>(
        &self,
        val: impl Fn(Var) -> &'a Tensor,
        wants: impl Fn(Var) -> bool,
        g: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        let s = val(self.x).shape();
        let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
        let gamma = val(self.gamma).data();
        let cg = c / self.groups;
        let n = (cg * plane) as f64;
        let mut dx = vec![0.0; g.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for gi in 0..self.groups {
                let start = (bi * c + gi * cg) * plane;
                let end = start + cg * plane;
                let (mut mean_d, mut mean_dx) = (0.0, 0.0);
                for i in start..end {
                    let ch = (i / plane) % c;
                    let d = g[i] * gamma[ch];
                    mean_d += d;
                    mean_dx += d * self.normalized[i];
                    dgamma[ch] += g[i] * self.normalized[i];
                    dbeta[ch] += g[i];
                }
                mean_d /= n;
                mean_dx /= n;
                let r = self.rstd[bi * self.groups + gi];
                for i in start..end {
                    let ch = (i / plane) % c;
                    let d = g[i] * gamma[ch];
                    dx[i] = r * (d - mean_d - self.normalized[i] * mean_dx);
                }
            }
        }
        let mut out = Vec::new();
        if wants(self.x) {
            out.push((self.x, dx));
        }
        if wants(self.gamma) {
            out.push((self.gamma, dgamma));
        }
        if wants(self.beta) {
            out.push((self.beta, dbeta));
        }
        out
    }
}

impl Tape {
    /// Per-sample group normalization of [B,C,H,W] with affine `gamma`/`beta` [C].
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var, ShapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(ShapeError::Rank { op: "group_norm", expected: 4, got: s });
        }
        let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
        if groups == 0 || c % groups != 0 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(ShapeError::Mismatch {
                op: "group_norm",
                detail: alloc::format!("{c} channels, {groups} groups"),
            });
        }
        let cg = c / groups;
        let src = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut normalized = vec![0.0; src.len()];
        let mut rstd = vec![0.0; b * groups];
        let mut out = vec![0.0; src.len()];
        let n = (cg * plane) as f64;
        for bi in 0..b {
            for gi in 0..groups {
                let start = (bi * c + gi * cg) * plane;
                let chunk = &src[start..start + cg * plane];
                let mean = chunk.iter().sum::<f64>() / n;
                let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let r = 1.0 / libm::sqrt(var + NORM_EPS);
                rstd[bi * groups + gi] = r;
                for (k, &v) in chunk.iter().enumerate() {
                    let i = start + k;
                    let ch = (i / plane) % c;
                    normalized[i] = (v - mean) * r;
                    out[i] = normalized[i] * gd[ch] + bd[ch];
                }
            }
        }
        let v = Tensor::from_vec(&s, out);
        Ok(self.push(v, Op::GroupNorm(GroupNormRecord { x, gamma, beta, groups, normalized, rstd })))
    }
}
