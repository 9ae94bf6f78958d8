//! 2-D convolution via im2col and a blocked GEMM.

use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Op, Tape, Var};
use super::{ShapeError, Tensor};

pub(crate) struct ConvRecord {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: Geometry,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// C = A·B (+ C when `accumulate`), with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &Geometry, cols: &mut [f64]) {
    let plane = g.out_plane();
    let (h, w) = (g.h as isize, g.w as isize);
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride) as isize - pad + ki as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride) as isize - pad + kj as isize;
                        *d = if ix < 0 || ix >= w { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, dx: &mut [f64]) {
    let plane = g.out_plane();
    let (h, w) = (g.h as isize, g.w as isize);
    let pad = g.pad as isize;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride) as isize - pad + ki as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride) as isize - pad + kj as isize;
                        if ix >= 0 && ix < w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl ConvRecord {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.input, self.kernel];
        v.extend(self.bias);
        v
    }

    pub(crate) fn backward<'a>(
        &self,
        val: impl Fn(Var) -> &'a Tensor,
        wants: impl Fn(Var) -> bool,
        grad: &[f64],
    ) -> Vec<(Var, Vec<f64>)> {
        let g = &self.geom;
        let x = val(self.input).data();
        let wt = val(self.kernel).data();
        let (patch, plane) = (g.patch(), g.out_plane());
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * plane;
        let want_x = wants(self.input);
        let want_w = wants(self.kernel);
        let mut dx = if want_x { vec![0.0; x.len()] } else { Vec::new() };
        let mut dw = if want_w { vec![0.0; wt.len()] } else { Vec::new() };
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * plane] };
        let mut dcols = vec![0.0; patch * plane];
        for b in 0..g.batch {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let gb = &grad[b * out_len..(b + 1) * out_len];
            if want_w {
                let colsb: &[f64] = if g.is_pointwise() {
                    xb
                } else {
                    im2col(xb, g, &mut cols);
                    &cols
                };
                // dW += dY · colsᵀ
                gemm(g.cout, plane, patch, gb, (plane, 1), colsb, (1, plane), &mut dw, true);
            }
            if want_x {
                // dcols = Wᵀ · dY
                gemm(patch, g.cout, plane, wt, (1, patch), gb, (plane, 1), &mut dcols, false);
                let dxb = &mut dx[b * in_len..(b + 1) * in_len];
                if g.is_pointwise() {
                    dxb.iter_mut().zip(&dcols).for_each(|(d, s)| *d += s);
                } else {
                    col2im(&dcols, g, dxb);
                }
            }
        }
        let mut r = Vec::new();
        if want_x {
            r.push((self.input, dx));
        }
        if want_w {
            r.push((self.kernel, dw));
        }
        if let Some(bias) = self.bias.filter(|&b| wants(b)) {
            let mut db = vec![0.0; g.cout];
            for b in 0..g.batch {
                for (o, acc) in db.iter_mut().enumerate() {
                    let start = b * out_len + o * plane;
                    *acc += grad[start..start + plane].iter().sum::<f64>();
                }
            }
            r.push((bias, db));
        }
        r
    }
}

impl Tape {
    /// Cross-correlation of `input` [B,C,H,W] with `kernel` [O,C,kh,kw],
    /// optional per-output-channel `bias` [O]; zero padding on all sides.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, ShapeError> {
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        if xs.len() != 4 {
            return Err(ShapeError::Rank { op: "conv2d", expected: 4, got: xs.to_vec() });
        }
        if ks.len() != 4 {
            return Err(ShapeError::Rank { op: "conv2d kernel", expected: 4, got: ks.to_vec() });
        }
        if xs[1] != ks[1] {
            return Err(ShapeError::Mismatch {
                op: "conv2d",
                detail: alloc::format!(
                    "input has {} channels (shape {:?}) but kernel expects {} (shape {:?})",
                    xs[1],
                    xs,
                    ks[1],
                    ks
                ),
            });
        }
        if ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) || stride == 0 {
            return Err(ShapeError::Mismatch {
                op: "conv2d",
                detail: alloc::format!("kernel {:?} must be odd-sized, stride {stride} >= 1", ks),
            });
        }
        if xs[2] + 2 * padding < ks[2] || xs[3] + 2 * padding < ks[3] {
            return Err(ShapeError::Mismatch {
                op: "conv2d",
                detail: alloc::format!("kernel {:?} larger than padded input {:?}", ks, xs),
            });
        }
        if let Some(b) = bias {
            if self.shape(b) != [ks[0]] {
                return Err(ShapeError::Mismatch {
                    op: "conv2d bias",
                    detail: alloc::format!("bias {:?} for {} outputs", self.shape(b), ks[0]),
                });
            }
        }
        let g = Geometry {
            batch: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad: padding,
            oh: (xs[2] + 2 * padding - ks[2]) / stride + 1,
            ow: (xs[3] + 2 * padding - ks[3]) / stride + 1,
        };
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let (patch, plane) = (g.patch(), g.out_plane());
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * plane;
        let mut out = vec![0.0; g.batch * out_len];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * plane] };
        for b in 0..g.batch {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let colsb: &[f64] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, &g, &mut cols);
                &cols
            };
            let ob = &mut out[b * out_len..(b + 1) * out_len];
            gemm(g.cout, patch, plane, wt, (patch, 1), colsb, (plane, 1), ob, false);
            if let Some(bv) = bias {
                let bd = self.value(bv).data();
                for (o, chunk) in ob.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bd[o]);
                }
            }
        }
        let value = Tensor::from_vec(&[g.batch, g.cout, g.oh, g.ow], out);
        Ok(self.push(value, Op::Conv2d(ConvRecord { input, kernel, bias, geom: g })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; b * o * oh * ow];
        for bi in 0..b {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((bi * c + ci) * h + iy as usize) * w + ix as usize]
                                            * k.data()[((oc * c + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out[((bi * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn sum_of_ones() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = t.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = t.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 1, 1]);
        assert_eq!(t.value(y).item(), 9.0);
    }

    #[test]
    fn identity_kernel() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..25).map(|i| i as f64 * 0.3 - 2.0).collect();
        let x = t.constant(Tensor::from_vec(&[1, 1, 5, 5], data.clone()));
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = t.constant(Tensor::from_vec(&[1, 1, 3, 3], kd));
        let y = t.conv2d(x, k, None, 1, 1).unwrap();
        assert_eq!(t.value(y).data(), &data[..]);
    }

    #[test]
    fn matches_direct_loops() {
        let x = Tensor::from_vec(&[2, 3, 7, 6], (0..252).map(|i| ((i * 37) % 11) as f64 - 5.0).collect());
        let k = Tensor::from_vec(&[4, 3, 3, 3], (0..108).map(|i| ((i * 13) % 7) as f64 - 3.0).collect());
        for &(s, p) in &[(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let kv = t.constant(k.clone());
            let y = t.conv2d(xv, kv, None, s, p).unwrap();
            assert_eq!(t.value(y).data(), &naive(&x, &k, s, p)[..], "stride {s} pad {p}");
        }
    }

    #[test]
    fn channel_mismatch_reports_dimensions() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[1, 2, 4, 4]));
        let k = t.constant(Tensor::ones(&[1, 3, 3, 3]));
        let err = t.conv2d(x, k, None, 1, 1).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("2 channels") && msg.contains("expects 3"), "{msg}");
    }
}
