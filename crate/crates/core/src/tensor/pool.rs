use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::{ShapeError, Tensor};

fn nchw(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize), ShapeError> {
    match *s {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(ShapeError::Rank { op, expected: 4, got: s.to_vec() }),
    }
}

pub(crate) fn avg_pool_backward(shape: &[usize], k: usize, g: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut gx = vec![0.0; b * c * h * w];
    for p in 0..b * c {
        for y in 0..h {
            for x in 0..w {
                gx[(p * h + y) * w + x] = g[(p * oh + y / k) * ow + x / k] * inv;
            }
        }
    }
    gx
}

impl Tape {
    /// Max over `k`×`k` windows. Padding cells never win; ties go to the first
    /// element in row-major window order.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var, ShapeError> {
        let (b, c, h, w) = nchw("max_pool2d", self.shape(x))?;
        if k == 0 || stride == 0 {
            return Err(ShapeError::Mismatch {
                op: "max_pool2d",
                detail: alloc::format!("window {k} and stride {stride} must be >= 1"),
            });
        }
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(ShapeError::Mismatch {
                op: "max_pool2d",
                detail: alloc::format!("window {k} larger than padded input {h}x{w} (padding {padding})"),
            });
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; b * c * oh * ow];
        let mut argmax = vec![usize::MAX; out.len()];
        for p in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (p * oh + oy) * ow + ox;
                    for i in 0..k {
                        let iy = (oy * stride + i) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for j in 0..k {
                            let ix = (ox * stride + j) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let idx = (p * h + iy as usize) * w + ix as usize;
                            if argmax[o] == usize::MAX || src[idx] > out[o] {
                                out[o] = src[idx];
                                argmax[o] = idx;
                            }
                        }
                    }
                }
            }
        }
        if argmax.contains(&usize::MAX) {
            return Err(ShapeError::Mismatch { op: "max_pool2d", detail: "a window covers only padding".into() });
        }
        let v = Tensor::from_vec(&[b, c, oh, ow], out);
        Ok(self.push(v, Op::MaxPool2d { x, argmax }))
    }

    /// Mean over non-overlapping `k`×`k` windows; extents must be divisible by `k`.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var, ShapeError> {
        let (b, c, h, w) = nchw("avg_pool2d", self.shape(x))?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(ShapeError::Mismatch {
                op: "avg_pool2d",
                detail: alloc::format!("{h}x{w} not divisible by window {k}"),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * c * oh * ow];
        for p in 0..b * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * oh + y / k) * ow + xx / k] += src[(p * h + y) * w + xx];
                }
            }
        }
        let inv = 1.0 / (k * k) as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let v = Tensor::from_vec(&[b, c, oh, ow], out);
        Ok(self.push(v, Op::AvgPool2d { x, k }))
    }
}
