use cathnet_core::prioritizer::Strategy;
use cathnet_core::prioritizer::*;
use cathnet_core::rng::rng_from;
use cathnet_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const TRIALS: u64 = 1000;

fn all() -> impl Fn(usize) -> bool {
    |_| true
}

#[test]
fn retains_seventy_percent_of_ten() {
    let ids: Vec<usize> = (0..10).collect();
    let d = [0.3, 5.0, 1.2, 9.0, 0.1, 4.4, 2.0, 7.5, 3.3, 0.2];
    let delta = select_samples(Strategy::TopkHard, 0.7, 0.5, &ids, &d, &[true; 10], all());
    assert_eq!(delta.iter().filter(|&&x| x == 1.0).count(), 7);
    let mut sorted = d.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (i, &x) in delta.iter().enumerate() {
        assert_eq!(x == 1.0, d[i] >= sorted[6], "index {i}");
    }
}

#[test]
fn equal_difficulties_pick_smallest_ids() {
    let ids = [14, 3, 9, 1, 22, 7, 30, 5, 2, 11];
    let delta = select_samples(Strategy::TopkHard, 0.7, 0.5, &ids, &[2.0; 10], &[true; 10], all());
    let mut picked: Vec<usize> = ids.iter().zip(&delta).filter(|(_, &x)| x == 1.0).map(|(&i, _)| i).collect();
    picked.sort();
    assert_eq!(picked, vec![1, 2, 3, 5, 7, 9, 11]);
}

#[test]
fn empty_available_set_gives_zero_mask() {
    let delta = select_samples(Strategy::Soft, 0.7, 0.5, &[0, 1], &[1.0, 2.0], &[false, false], all());
    assert_eq!(delta, vec![0.0, 0.0]);
}

#[test]
fn topk_support_matches_brute_force() {
    let mut rng = rng_from(1);
    let strategies = [Strategy::TopkHard, Strategy::TopkSoft];
    for trial in 0..TRIALS {
        let n = rng.random_range(1..16);
        let mut ids: Vec<usize> = (0..40).collect();
        ids.shuffle(&mut rng);
        ids.truncate(n);
        // coarse values so ties are common
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1..6) as f64 * 0.5).collect();
        let avail: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let rho = rng.random_range(0.05..=1.0);
        let strategy = strategies[trial as usize % 2];
        let delta = select_samples(strategy, rho, 0.5, &ids, &d, &avail, all());

        let cand: Vec<usize> = (0..n).filter(|&i| avail[i]).collect();
        let k = ((rho * cand.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let k = k.min(cand.len());
        // i is kept iff fewer than k candidates beat it (harder, or equal with smaller id)
        for &i in &cand {
            let beaten_by = cand.iter().filter(|&&j| d[j] > d[i] || (d[j] == d[i] && ids[j] < ids[i])).count();
            assert_eq!(delta[i] > 0.0, beaten_by < k, "trial {trial}");
        }
        assert!((0..n).filter(|&i| !avail[i]).all(|i| delta[i] == 0.0));
        assert_eq!(delta.iter().filter(|&&x| x > 0.0).count(), k.min(cand.len()));
        if strategy == Strategy::TopkSoft {
            let dmax = cand.iter().map(|&i| d[i]).fold(0.0, f64::max);
            for &i in &cand {
                if delta[i] > 0.0 {
                    assert!((delta[i] - d[i] / dmax).abs() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn soft_assignment_follows_difficulty_order() {
    let mut rng = rng_from(2);
    for _ in 0..TRIALS {
        let n = rng.random_range(1..12);
        let ids: Vec<usize> = (0..n).collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
        let delta = select_samples(Strategy::Soft, 1.0, 0.5, &ids, &d, &vec![true; n], all());
        let max = delta.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        for i in 0..n {
            for j in 0..n {
                if d[i] < d[j] {
                    assert!(delta[i] <= delta[j]);
                }
            }
        }
        let ts = select_samples(Strategy::TopkSoft, 1.0, 0.5, &ids, &d, &vec![true; n], all());
        assert_eq!(delta, ts);
        let hard = select_samples(Strategy::HardThreshold, 1.0, 0.5, &ids, &d, &vec![true; n], all());
        for i in 0..n {
            assert_eq!(hard[i], if delta[i] > 0.5 { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn masked_mean_matches_direct_sum() {
    let mut rng = rng_from(3);
    for _ in 0..TRIALS {
        let n = rng.random_range(1..17);
        let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let delta: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
        let mut t = Tape::new();
        let lv = t.constant(Tensor::from_vec(&[n], l.clone()));
        let m = masked_task_loss(&mut t, lv, &delta).unwrap();
        let direct = l.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!((t.value(m).item() - direct).abs() <= 1e-12);
    }
    let mut t = Tape::new();
    let lv = t.constant(Tensor::from_vec(&[2], vec![2.0, 8.0]));
    let m = masked_task_loss(&mut t, lv, &[1.0, 0.0]).unwrap();
    assert_eq!(t.value(m).item(), 1.0);
    let m = masked_task_loss(&mut t, lv, &[1.0, 1.0]).unwrap();
    let plain = t.mean_all(lv);
    assert_eq!(t.value(m).item(), t.value(plain).item());
}

#[test]
fn task_weights_match_reciprocal_with_floor() {
    let mut rng = rng_from(4);
    let p = PrioritizationPolicy::default();
    for _ in 0..TRIALS {
        let kd = rng.random_range(0.0..=1.0);
        let ks = rng.random_range(0.0..=1.0);
        let mut s = KpiState::new(0.5);
        s.kpi_bar = [Some(kd), Some(ks)];
        let w = task_weights(&s, &p);
        assert!((w[0] - 1.0 / f64::max(kd, 0.05)).abs() <= 1e-12);
        assert!((w[1] - 1.0 / f64::max(ks, 0.05)).abs() <= 1e-12);
        if kd < ks {
            assert!(w[0] >= w[1]);
        }
        if kd >= 0.05 {
            assert!((w[0] * kd - 1.0).abs() <= 1e-12);
        }
    }
    let mut s = KpiState::new(0.5);
    s.kpi_bar = [Some(0.01), Some(1.0)];
    assert_eq!(task_weights(&s, &p)[0], 20.0);
}

#[test]
fn ema_matches_closed_form() {
    let mut rng = rng_from(5);
    for _ in 0..TRIALS {
        let alpha = rng.random_range(0.0..=1.0);
        let k0 = rng.random_range(0.0..=1.0);
        let k = rng.random_range(0.0..=1.0);
        let steps = rng.random_range(1..60);
        let mut bar = k0;
        for _ in 0..steps {
            bar = ema_update(Some(bar), k, alpha, 0.0);
        }
        let closed = k + (1.0 - alpha).powi(steps) * (k0 - k);
        assert!((bar - closed).abs() <= 1e-12, "{bar} vs {closed}");
        let one = ema_update(Some(k0), k, alpha, 0.0);
        assert!(((one - k).abs() - (1.0 - alpha) * (k0 - k).abs()).abs() <= 1e-12);
    }
}

#[test]
fn kpis_follow_metric_choice() {
    let m = SampleMeasures { detection: Some((0.0, 0.0, 0.0)), segmentation: Some((1.0, 1.0, 0.0)) };
    let p = PrioritizationPolicy::default();
    assert_eq!(compute_sample_kpis(&m, &p, 90.5), [Some(1.0), Some(1.0)]);
    let m = SampleMeasures { detection: None, segmentation: Some((0.25, 0.4, 1.0)) };
    assert_eq!(compute_sample_kpis(&m, &p, 90.5), [None, Some(0.25)]);
    let dice = PrioritizationPolicy { kpi_metric_s: SegmentationKpi::Dice, ..p };
    assert_eq!(compute_sample_kpis(&m, &dice, 90.5)[1], Some(0.4));
    let ce = PrioritizationPolicy { kpi_metric_s: SegmentationKpi::CrossEntropy, ..p };
    assert_eq!(compute_sample_kpis(&m, &ce, 90.5)[1], Some((-1.0f64).exp()));
}

#[test]
fn step_updates_state_and_registry() {
    let mut pr = Prioritizer::new(PrioritizationPolicy::default());
    let ids = [4, 7, 9];
    let kpis = [[Some(0.5), Some(0.2)], [None, Some(0.4)], [Some(1.0), Some(0.9)]];
    let d = pr.step(&ids, &kpis, &Task::ALL);
    assert_eq!(pr.state.tau, 1);
    assert_eq!(pr.state.kpi_bar, [Some(0.75), Some(0.5)]);
    assert_eq!(d.weights, [1.0 / 0.75, 2.0]);
    assert_eq!(d.delta[0][1], 0.0);
    assert_eq!(pr.state.difficulty(7, Task::Detection), None);
    assert_eq!(pr.state.difficulty(4, Task::Segmentation), Some(5.0));
    assert_eq!(pr.state.registered_ids().collect::<Vec<_>>(), vec![4, 7, 9]);
    // ⌈0.7·2⌉ = 2 available for detection, ⌈0.7·3⌉ = 3 for segmentation
    assert_eq!(d.delta[0], vec![1.0, 0.0, 1.0]);
    assert_eq!(d.delta[1], vec![1.0, 1.0, 1.0]);
    pr.step(&ids, &kpis, &[Task::Segmentation]);
    assert_eq!(pr.state.tau, 2);
    assert_eq!(pr.state.kpi_bar[0], Some(0.75));
}

#[test]
fn fixed_fraction_uses_epoch_ranking() {
    let policy = PrioritizationPolicy {
        strategy: Strategy::FixedFraction,
        retention_rho: 0.5,
        difficulty_momentum: false,
        ..PrioritizationPolicy::default()
    };
    let mut pr = Prioritizer::new(policy);
    let ids = [0, 1, 2, 3];
    let kpis = [0.9, 0.2, 0.5, 0.1].map(|k| [Some(k), Some(k)]);
    let d = pr.step(&ids, &kpis, &Task::ALL);
    assert_eq!(d.delta[0], vec![1.0; 4]);
    pr.state.rank_epoch(0.5);
    let flipped = [0.1, 0.9, 0.9, 0.9].map(|k| [Some(k), Some(k)]);
    let d = pr.step(&ids, &flipped, &Task::ALL);
    // ranking frozen from the epoch start: samples 3 and 1 were hardest
    assert_eq!(d.delta[0], vec![0.0, 1.0, 0.0, 1.0]);
    let d = pr.step(&[5], &[[Some(0.9), Some(0.9)]], &Task::ALL);
    assert_eq!(d.delta[0], vec![1.0]);
}

#[test]
fn curve_rows_count_and_selection_flag() {
    let mut pr = Prioritizer::new(PrioritizationPolicy::default());
    let mut rows: Vec<CurveRow> = Vec::new();
    let ids = [0, 1, 2];
    let mut rng = rng_from(6);
    for _ in 0..10 {
        let kpis: Vec<[Option<f64>; 2]> =
            (0..3).map(|_| [Some(rng.random_range(0.0..1.0)), Some(rng.random_range(0.0..1.0))]).collect();
        let d = pr.step(&ids, &kpis, &Task::ALL);
        let before = rows.len();
        record_difficulty_curves(&pr.state, &ids, &Task::ALL, &mut rows);
        for r in &rows[before..] {
            assert_eq!(r.selected, d.delta[r.task.index()][r.sample_id] == 1.0);
            assert_eq!(r.tau, pr.state.tau);
        }
    }
    assert_eq!(rows.len(), 30 * 2);
}

struct Failing;
impl CurveSink for Failing {
    type Error = &'static str;
    fn append(&mut self, _: &CurveRow) -> Result<(), Self::Error> {
        Err("disk full")
    }
}

#[test]
fn failing_sink_is_not_fatal() {
    let mut pr = Prioritizer::new(PrioritizationPolicy::default());
    pr.step(&[0], &[[Some(0.5), Some(0.5)]], &Task::ALL);
    assert_eq!(record_difficulty_curves(&pr.state, &[0], &Task::ALL, &mut Failing), 0);
}

fn total_variation(momentum: bool, stream: &[f64]) -> f64 {
    let mut pr =
        Prioritizer::new(PrioritizationPolicy { difficulty_momentum: momentum, ..PrioritizationPolicy::default() });
    let mut rows: Vec<CurveRow> = Vec::new();
    for &k in stream {
        pr.step(&[0], &[[None, Some(k)]], &[Task::Segmentation]);
        record_difficulty_curves(&pr.state, &[0], &[Task::Segmentation], &mut rows);
    }
    rows.windows(2).map(|w| (w[1].difficulty - w[0].difficulty).abs()).sum()
}

proptest! {
    #[test]
    fn momentum_reduces_curve_variation(stream in prop::collection::vec(0.05f64..1.0, 2..50)) {
        prop_assert!(total_variation(true, &stream) <= total_variation(false, &stream) + 1e-12);
    }

    #[test]
    fn kpi_bar_stays_in_range(stream in prop::collection::vec(0.0f64..=1.0, 1..40), alpha in 0.0f64..=1.0) {
        let mut pr = Prioritizer::new(PrioritizationPolicy { alpha, ..PrioritizationPolicy::default() });
        for (i, &k) in stream.iter().enumerate() {
            pr.step(&[i % 3], &[[Some(k), Some(1.0 - k)]], &Task::ALL);
            for kb in pr.state.kpi_bar {
                let kb = kb.unwrap();
                prop_assert!((0.05..=1.0).contains(&kb));
            }
            prop_assert_eq!(pr.state.tau, i as u64 + 1);
        }
    }
}
