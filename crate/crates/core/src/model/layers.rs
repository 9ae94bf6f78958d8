use alloc::format;

use serde::{Deserialize, Serialize};

use super::params::Builder;
use crate::tensor::{ShapeError, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    None,
    Group { groups: usize },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    padding: usize,
}

impl Conv {
    /// `gain` scales the He-uniform bound; `bias` is the constant bias init.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        bias: Option<f64>,
    ) -> Self {
        let weight = b.uniform(format!("{name}.weight"), &[cout, cin, k, k], cin * k * k, gain);
        let bias = bias.map(|v| b.constant(format!("{name}.bias"), &[cout], v));
        Self { weight, bias, stride, padding: k / 2 }
    }

    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, ShapeError> {
        t.conv2d(x, p[self.weight], self.bias.map(|i| p[i]), self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    gamma: usize,
    beta: usize,
    groups: usize,
}

impl Norm {
    pub fn new(b: &mut Builder, name: &str, channels: usize, kind: Normalization) -> Option<Self> {
        match kind {
            Normalization::None => None,
            Normalization::Group { groups } => Some(Self {
                gamma: b.constant(format!("{name}.gamma"), &[channels], 1.0),
                beta: b.constant(format!("{name}.beta"), &[channels], 0.0),
                groups,
            }),
        }
    }

    pub fn apply(norm: &Option<Self>, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, ShapeError> {
        match norm {
            None => Ok(x),
            Some(n) => t.group_norm(x, p[n.gamma], p[n.beta], n.groups),
        }
    }
}

/// conv → [norm] → relu
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvRelu {
    conv: Conv,
    norm: Option<Norm>,
}

impl ConvRelu {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, stride: usize, norm: Normalization) -> Self {
        Self {
            conv: Conv::new(b, name, cin, cout, 3, stride, 1.0, Some(0.0)),
            norm: Norm::new(b, &format!("{name}.norm"), cout, norm),
        }
    }

    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, ShapeError> {
        let y = self.conv.apply(t, p, x)?;
        let y = Norm::apply(&self.norm, t, p, y)?;
        Ok(t.relu(y))
    }
}

/// Two 3×3 convs with an identity or 1×1-projected shortcut.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ResidualBlock {
    conv1: Conv,
    norm1: Option<Norm>,
    conv2: Conv,
    norm2: Option<Norm>,
    shortcut: Option<Conv>,
}

/// Down-weights the second conv of each residual branch so the un-normalized
/// stack starts close to its shortcut path.
const RESIDUAL_GAIN: f64 = 0.25;

impl ResidualBlock {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, stride: usize, norm: Normalization) -> Self {
        let conv1 = Conv::new(b, &format!("{name}.conv1"), cin, cout, 3, stride, 1.0, Some(0.0));
        let norm1 = Norm::new(b, &format!("{name}.norm1"), cout, norm);
        let conv2 = Conv::new(b, &format!("{name}.conv2"), cout, cout, 3, 1, RESIDUAL_GAIN, Some(0.0));
        let norm2 = Norm::new(b, &format!("{name}.norm2"), cout, norm);
        let shortcut = (stride != 1 || cin != cout)
            .then(|| Conv::new(b, &format!("{name}.shortcut"), cin, cout, 1, stride, 1.0 / libm::sqrt(2.0), None));
        Self { conv1, norm1, conv2, norm2, shortcut }
    }

    pub fn apply(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, ShapeError> {
        let h = self.conv1.apply(t, p, x)?;
        let h = Norm::apply(&self.norm1, t, p, h)?;
        let h = t.relu(h);
        let h = self.conv2.apply(t, p, h)?;
        let h = Norm::apply(&self.norm2, t, p, h)?;
        let s = match &self.shortcut {
            Some(c) => c.apply(t, p, x)?,
            None => x,
        };
        let y = t.add(h, s)?;
        Ok(t.relu(y))
    }
}
