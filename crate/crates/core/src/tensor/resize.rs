use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::{ShapeError, Tensor};

pub(crate) fn upsample_backward(shape: &[usize], f: usize, g: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h * f, w * f);
    let mut gx = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        for y in 0..oh {
            for x in 0..ow {
                gx[(p * h + y / f) * w + x / f] += g[(p * oh + y) * ow + x];
            }
        }
    }
    gx
}

/// Source taps and weights for one output coordinate (half-pixel centers,
/// clamped at the borders).
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub(crate) fn bilinear_backward(in_shape: &[usize], out_shape: &[usize], g: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut gx = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        let base = p * h * w;
        for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (x, &(x0, x1, lx)) in tx.iter().enumerate() {
                let gv = g[(p * oh + y) * ow + x];
                gx[base + y0 * w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                gx[base + y0 * w + x1] += gv * (1.0 - ly) * lx;
                gx[base + y1 * w + x0] += gv * ly * (1.0 - lx);
                gx[base + y1 * w + x1] += gv * ly * lx;
            }
        }
    }
    gx
}

fn nchw(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize), ShapeError> {
    match *s {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(ShapeError::Rank { op, expected: 4, got: s.to_vec() }),
    }
}

impl Tape {
    /// Replicate each pixel into a `factor`×`factor` block.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, ShapeError> {
        let (b, c, h, w) = nchw("upsample_nearest", self.shape(x))?;
        if factor < 2 {
            return Err(ShapeError::Mismatch {
                op: "upsample_nearest",
                detail: alloc::format!("factor {factor} must be >= 2"),
            });
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for p in 0..b * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(p * oh + y) * ow + xx] = src[(p * h + y / factor) * w + xx / factor];
                }
            }
        }
        let v = Tensor::from_vec(&[b, c, oh, ow], out);
        Ok(self.push(v, Op::UpsampleNearest { x, factor }))
    }

    /// Fixed (non-learned) bilinear resize with half-pixel sampling.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var, ShapeError> {
        let (b, c, h, w) = nchw("resize_bilinear", self.shape(x))?;
        if out_h == 0 || out_w == 0 {
            return Err(ShapeError::ZeroExtent(alloc::vec![b, c, out_h, out_w]));
        }
        let ty = taps(out_h, h);
        let tx = taps(out_w, w);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * c * out_h * out_w];
        for p in 0..b * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            for (y, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = s[y0 * w + x0] * (1.0 - lx) + s[y0 * w + x1] * lx;
                    let bot = s[y1 * w + x0] * (1.0 - lx) + s[y1 * w + x1] * lx;
                    out[(p * out_h + y) * out_w + xx] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let v = Tensor::from_vec(&[b, c, out_h, out_w], out);
        Ok(self.push(v, Op::ResizeBilinear { x }))
    }
}
