//! Central finite-difference gradient checking against the tape.

use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::rng::rng_from;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |numeric|) over checked coordinates.
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
}

/// Compare reverse-mode gradients of the scalar `f(inputs)` with central
/// differences at up to `per_input` randomly chosen coordinates of each input.
pub fn check<F>(inputs: &[Tensor], f: F, per_input: usize, step: f64, seed: u64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).expect("scalar output");
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_tensor(v)).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs);
        t.value(o).item()
    };

    let mut rng = rng_from(seed);
    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, worst: (0, 0) };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> =
            if n <= per_input { (0..n).collect() } else { sample(&mut rng, n, per_input).into_vec() };
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + step;
            let plus = eval(&work);
            work[i].data_mut()[c] = orig - step;
            let minus = eval(&work);
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[i].data()[c] - numeric).abs() / numeric.abs().max(1.0);
            if err > report.max_rel_err || report.checked == 0 {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = (i, c);
            }
            report.checked += 1;
        }
    }
    report
}
