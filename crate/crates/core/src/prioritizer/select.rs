use alloc::vec;
use alloc::vec::Vec;

use super::Strategy;

/// Number kept by top-K: ⌈ρ·n⌉ clipped to n. The small offset keeps
/// products such as 0.7·10 from rounding up past an integer.
pub fn topk_count(rho: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    (libm::ceil(rho * n as f64 - 1e-9).max(0.0) as usize).min(n)
}

/// Indices of `d` ordered by descending difficulty, ties by smaller id.
pub fn difficulty_order(ids: &[usize], d: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(ids[a].cmp(&ids[b])));
    order
}

/// Per-sample δ for one task.
///
/// `ids` are sample ids (tie-break key), `d` difficulties, `available` the
/// δ-availability flags. `fixed` is the epoch-level selection consulted by
/// [`Strategy::FixedFraction`]: `fixed(id)` says whether `id` is selected.
pub fn select_samples(
    strategy: Strategy,
    rho: f64,
    eta: f64,
    ids: &[usize],
    d: &[f64],
    available: &[bool],
    fixed: impl Fn(usize) -> bool,
) -> Vec<f64> {
    let n = ids.len();
    assert!(d.len() == n && available.len() == n);
    let cand: Vec<usize> = (0..n).filter(|&i| available[i]).collect();
    let mut delta = vec![0.0; n];
    if cand.is_empty() {
        log::debug!("sample selection: no available samples, task skipped");
        return delta;
    }
    let dmax = cand.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
    let soft = |i: usize| if dmax > 0.0 { d[i] / dmax } else { 1.0 };
    match strategy {
        Strategy::Soft => cand.iter().for_each(|&i| delta[i] = soft(i)),
        Strategy::HardThreshold => cand.iter().for_each(|&i| delta[i] = if soft(i) > eta { 1.0 } else { 0.0 }),
        Strategy::TopkHard | Strategy::TopkSoft => {
            let order = difficulty_order(ids, d, &cand);
            for &i in &order[..topk_count(rho, cand.len())] {
                delta[i] = if strategy == Strategy::TopkHard { 1.0 } else { soft(i) };
            }
        }
        Strategy::FixedFraction => cand.iter().for_each(|&i| delta[i] = if fixed(ids[i]) { 1.0 } else { 0.0 }),
    }
    delta
}
