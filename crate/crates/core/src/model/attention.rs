//! Channel-then-spatial gating of the latent feature map.

use super::layers::Conv;
use super::params::Builder;
use crate::tensor::{ShapeError, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    mlp_in: Conv,
    mlp_out: Conv,
    spatial: Conv,
}

/// Intermediate values exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionTrace {
    pub channel_gate: Var,
    pub spatial_gate: Var,
    pub output: Var,
}

impl Attention {
    /// The final layer of each branch starts at zero weight, so the gates
    /// open at `sigmoid(gate_bias)` regardless of the input.
    pub fn new(b: &mut Builder, channels: usize, reduction: usize, gate_bias: f64) -> Self {
        let hidden = (channels / reduction).max(1);
        // The channel MLP runs on the avg and max descriptors and the two
        // results are summed, so each path carries half the bias.
        Self {
            mlp_in: Conv::new(b, "attention.channel.fc1", channels, hidden, 1, 1, 1.0, Some(0.0)),
            mlp_out: Conv::new(b, "attention.channel.fc2", hidden, channels, 1, 1, 0.0, Some(gate_bias / 2.0)),
            spatial: Conv::new(b, "attention.spatial", 2, 1, 3, 1, 0.0, Some(gate_bias)),
        }
    }

    fn mlp(&self, t: &mut Tape, p: &[Var], x: Var) -> Result<Var, ShapeError> {
        let h = self.mlp_in.apply(t, p, x)?;
        let h = t.relu(h);
        self.mlp_out.apply(t, p, h)
    }

    pub fn trace(&self, t: &mut Tape, p: &[Var], f: Var) -> Result<AttentionTrace, ShapeError> {
        let avg = t.mean_axes(f, &[2, 3])?;
        let max = t.max_axes(f, &[2, 3])?;
        let a = self.mlp(t, p, avg)?;
        let m = self.mlp(t, p, max)?;
        let logits = t.add(a, m)?;
        let channel_gate = t.sigmoid(logits);
        let f1 = t.mul(f, channel_gate)?;

        let mean_c = t.mean_axes(f1, &[1])?;
        let max_c = t.max_axes(f1, &[1])?;
        let desc = t.concat(&[mean_c, max_c], 1)?;
        let s = self.spatial.apply(t, p, desc)?;
        let spatial_gate = t.sigmoid(s);
        let output = t.mul(f1, spatial_gate)?;
        Ok(AttentionTrace { channel_gate, spatial_gate, output })
    }
}
