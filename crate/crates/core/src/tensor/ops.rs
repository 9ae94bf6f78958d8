//! Elementwise maps, broadcast arithmetic, axis reductions and concatenation.

use alloc::vec;
use alloc::vec::Vec;

use super::broadcast::{broadcast_shapes, for_each_pair, reduce_to};
use super::tape::{Op, Tape, Var};
use super::{ShapeError, Tensor, LOG_EPS};

fn binary(tape: &Tape, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, ShapeError> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() == tb.shape() {
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_vec(ta.shape(), data));
    }
    let shape = broadcast_shapes(ta.shape(), tb.shape())?;
    let mut data = vec![0.0; shape.iter().product()];
    let (da, db) = (ta.data(), tb.data());
    for_each_pair(&shape, ta.shape(), tb.shape(), |o, ia, ib| {
        data[o] = f(da[ia], db[ib]);
    });
    Ok(Tensor::from_vec(&shape, data))
}

pub(crate) fn mul_backward(
    a: Var,
    b: Var,
    ta: &Tensor,
    tb: &Tensor,
    out: &[usize],
    g: &[f64],
    wants: impl Fn(Var) -> bool,
) -> Vec<(Var, Vec<f64>)> {
    let mut ga = vec![0.0; g.len()];
    let mut gb = vec![0.0; g.len()];
    let (da, db) = (ta.data(), tb.data());
    for_each_pair(out, ta.shape(), tb.shape(), |o, ia, ib| {
        ga[o] = g[o] * db[ib];
        gb[o] = g[o] * da[ia];
    });
    let mut r = Vec::new();
    if wants(a) {
        r.push((a, reduce_to(&ga, out, ta.shape())));
    }
    if wants(b) {
        r.push((b, reduce_to(&gb, out, tb.shape())));
    }
    r
}

pub(crate) fn concat_backward<'a>(
    parts: &[Var],
    axis: usize,
    val: impl Fn(Var) -> &'a Tensor,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let shapes: Vec<&[usize]> = parts.iter().map(|&p| val(p).shape()).collect();
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let total_axis: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut offset = 0;
    let mut r = Vec::with_capacity(parts.len());
    for (&p, s) in parts.iter().zip(&shapes) {
        let n = s[axis] * inner;
        let mut gp = Vec::with_capacity(outer * n);
        for o in 0..outer {
            let start = o * total_axis * inner + offset * inner;
            gp.extend_from_slice(&g[start..start + n]);
        }
        offset += s[axis];
        r.push((p, gp));
    }
    r
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<(), ShapeError> {
    if axes.iter().any(|&a| a >= shape.len()) {
        return Err(ShapeError::Mismatch { op, detail: alloc::format!("axes {axes:?} out of range for {shape:?}") });
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect()
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let v = binary(self, a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let v = binary(self, a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let v = binary(self, a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|e| e * s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|e| e + s);
        self.push(v, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| if e > 0.0 { e } else { 0.0 });
        self.push(v, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(super::sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    /// Natural log with the input clamped at [`LOG_EPS`]; zero gradient below the clamp.
    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| libm::log(e.max(LOG_EPS)));
        self.push(v, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(libm::exp);
        self.push(v, Op::Exp(x))
    }

    /// `x^p`; the input must be positive unless `p` is an integer.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        let v = self.value(x).map(|e| libm::pow(e, p));
        self.push(v, Op::Powf(x, p))
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var, ShapeError> {
        let t = self.value(x);
        check_axes("sum_axes", t.shape(), axes)?;
        let shape = reduced_shape(t.shape(), axes);
        let mut data = vec![0.0; shape.iter().product()];
        let src = t.data();
        for_each_pair(t.shape(), &shape, &shape, |i, o, _| data[o] += src[i]);
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::SumAxes { x }))
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var, ShapeError> {
        let count: usize = axes.iter().map(|&a| self.shape(x).get(a).copied().unwrap_or(1)).product();
        let s = self.sum_axes(x, axes)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    /// Max over `axes` (keep-dim); gradient goes to the first maximal element in row-major order.
    pub fn max_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var, ShapeError> {
        let t = self.value(x);
        check_axes("max_axes", t.shape(), axes)?;
        let shape = reduced_shape(t.shape(), axes);
        let n = shape.iter().product();
        let mut data = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![usize::MAX; n];
        let src = t.data();
        for_each_pair(t.shape(), &shape, &shape, |i, o, _| {
            if argmax[o] == usize::MAX || src[i] > data[o] {
                data[o] = src[i];
                argmax[o] = i;
            }
        });
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::MaxAxes { x, argmax }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        let rank = self.shape(x).len();
        let v = v.reshape(&vec![1; rank]).expect("scalar reshape");
        self.push(v, Op::SumAxes { x })
    }

    /// Sum divided by the element count.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.div_scalar(s, n)
    }

    /// Division by a constant, recorded as a scale so the backward pass is `g / d`.
    pub fn div_scalar(&mut self, x: Var, d: f64) -> Var {
        let v = self.value(x).map(|e| e / d);
        self.push(v, Op::Scale(x, 1.0 / d))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, ShapeError> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(ShapeError::Rank { op: "concat", expected: axis + 1, got: first });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(ShapeError::Mismatch {
                    op: "concat",
                    detail: alloc::format!("{s:?} vs {first:?} on axis {axis}"),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let n = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let v = Tensor::from_vec(&shape, data);
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }))
    }
}
