use cathnet_core::gradcheck::check;
use cathnet_core::losses::*;
use cathnet_core::rng::rng_from;
use cathnet_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

fn binary(shape: &[usize], seed: u64, p: f64) -> Tensor {
    let mut rng = rng_from(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect())
}

fn eval<F: FnOnce(&mut Tape, cathnet_core::Var) -> cathnet_core::Var>(x: &Tensor, f: F) -> Vec<f64> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let out = f(&mut t, v);
    t.value(out).data().to_vec()
}

/// Heatmap target with peaks at the given flat positions and a soft ring around them.
fn heatmap_fixture(b: usize) -> (Tensor, Tensor) {
    let mut hm = random(&[b, 1, 4, 4], 3, 0.0, 0.6);
    let mut cm = Tensor::zeros(&[b, 1, 4, 4]);
    for bi in 0..b {
        for &pos in &[5usize, 10][..1 + bi % 2] {
            hm.data_mut()[bi * 16 + pos] = 1.0;
            cm.data_mut()[bi * 16 + pos] = 1.0;
        }
    }
    (hm, cm)
}

#[test]
fn focal_single_peak_at_half_probability() {
    let hm = Tensor::full(&[1, 1, 1, 1], 1.0);
    let v =
        eval(&Tensor::zeros(&[1, 1, 1, 1]), |t, z| focal_center_loss(t, z, &hm, &hm, &LossConfig::default()).unwrap());
    assert!((v[0] - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((v[0] - 0.173286).abs() < 1e-6);
}

#[test]
fn focal_perfect_prediction_is_near_zero() {
    let (hm, cm) = heatmap_fixture(2);
    let z = Tensor::from_vec(hm.shape(), cm.data().iter().map(|&m| if m == 1.0 { 20.0 } else { -20.0 }).collect());
    let v = eval(&z, |t, z| focal_center_loss(t, z, &hm, &cm, &LossConfig::default()).unwrap());
    assert!(v.iter().all(|&l| (0.0..=1e-6).contains(&l)), "{v:?}");
}

#[test]
fn focal_rejects_out_of_range_target() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let bad = Tensor::full(&[1, 1, 2, 2], 1.5);
    let err = focal_center_loss(&mut t, z, &bad, &Tensor::zeros(&[1, 1, 2, 2]), &LossConfig::default());
    assert!(matches!(err, Err(LossError::TargetRange { .. })));
}

#[test]
fn focal_gradient_matches_finite_differences() {
    let (hm, cm) = heatmap_fixture(1);
    let z = random(&[1, 1, 4, 4], 4, -3.0, 3.0);
    let r = check(
        &[z],
        |t, v| {
            let l = focal_center_loss(t, v[0], &hm, &cm, &LossConfig::default()).unwrap();
            t.sum_all(l)
        },
        24,
        1e-6,
        1,
    );
    assert!(r.checked >= 16 && r.max_rel_err <= 1e-6, "{r:?}");
    let (hm, cm) = heatmap_fixture(2);
    let z = random(&[2, 1, 4, 4], 5, -3.0, 3.0);
    let w = Tensor::from_vec(&[2], vec![0.7, -1.3]);
    let r = check(
        &[z],
        |t, v| {
            let l = focal_center_loss(t, v[0], &hm, &cm, &LossConfig::default()).unwrap();
            let wv = t.constant(w.clone());
            let m = t.mul(l, wv).unwrap();
            t.sum_all(m)
        },
        24,
        1e-6,
        2,
    );
    assert!(r.checked >= 20 && r.max_rel_err <= 1e-6, "{r:?}");
}

#[test]
fn size_l1_fixture_and_gradient() {
    let mut cm = Tensor::zeros(&[1, 1, 2, 2]);
    cm.data_mut()[3] = 1.0;
    let mut target = Tensor::zeros(&[1, 2, 2, 2]);
    target.data_mut()[3] = 2.0;
    target.data_mut()[7] = 2.0;
    let mut pred = Tensor::full(&[1, 2, 2, 2], 9.0);
    pred.data_mut()[3] = 4.0;
    pred.data_mut()[7] = 6.0;

    let mut t = Tape::new();
    let p = t.param(pred.clone());
    let (l, empty) = size_l1_loss(&mut t, p, &target, &cm).unwrap();
    assert_eq!(t.value(l).data(), &[3.0]);
    assert_eq!(empty, vec![false]);
    let s = t.sum_all(l);
    t.backward(s).unwrap();
    let g = t.grad(p).unwrap();
    let expect = [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5];
    assert_eq!(g, &expect);

    let exact = eval(&target, |t, p| size_l1_loss(t, p, &target, &cm).unwrap().0);
    assert_eq!(exact, vec![0.0]);
}

#[test]
fn size_l1_empty_mask_contributes_zero_with_flag() {
    let mut t = Tape::new();
    let p = t.param(random(&[2, 2, 2, 2], 1, 0.0, 5.0));
    let mut cm = Tensor::zeros(&[2, 1, 2, 2]);
    cm.data_mut()[4] = 1.0;
    let (l, empty) = size_l1_loss(&mut t, p, &Tensor::zeros(&[2, 2, 2, 2]), &cm).unwrap();
    assert_eq!(empty, vec![true, false]);
    assert_eq!(t.value(l).data()[0], 0.0);
    assert!(t.value(l).data()[1] > 0.0);
}

#[test]
fn size_l1_gradient_matches_finite_differences() {
    let cm = binary(&[2, 1, 4, 4], 6, 0.4);
    let target = random(&[2, 2, 4, 4], 7, 0.0, 6.0);
    let pred = random(&[2, 2, 4, 4], 8, 0.0, 6.0);
    let r = check(
        &[pred],
        |t, v| {
            let (l, _) = size_l1_loss(t, v[0], &target, &cm).unwrap();
            t.sum_all(l)
        },
        32,
        1e-6,
        3,
    );
    assert!(r.checked >= 20 && r.max_rel_err <= 1e-6, "{r:?}");
}

#[test]
fn bce_iou_fixture() {
    let m = Tensor::ones(&[1, 1, 2, 2]);
    let v = eval(&Tensor::zeros(&[1, 1, 2, 2]), |t, z| bce_iou_seg_loss(t, z, &m).unwrap());
    let expect = std::f64::consts::LN_2 + 0.5;
    assert!((v[0] - expect).abs() < 1e-12);
    assert!((v[0] - 1.193147).abs() < 1e-6);
}

#[test]
fn bce_iou_saturated_prediction_is_near_zero() {
    let m = binary(&[2, 1, 4, 4], 9, 0.5);
    let z = m.map(|v| if v == 1.0 { 20.0 } else { -20.0 });
    let v = eval(&z, |t, z| bce_iou_seg_loss(t, z, &m).unwrap());
    assert!(v.iter().all(|&l| (0.0..=1e-6).contains(&l)), "{v:?}");
}

#[test]
fn bce_iou_gradient_matches_finite_differences() {
    let m = binary(&[2, 1, 4, 4], 10, 0.4);
    let z = random(&[2, 1, 4, 4], 11, -3.0, 3.0);
    let r = check(
        &[z],
        |t, v| {
            let l = bce_iou_seg_loss(t, v[0], &m).unwrap();
            let w = t.constant(Tensor::from_vec(&[2], vec![1.0, 2.5]));
            let p = t.mul(l, w).unwrap();
            t.sum_all(p)
        },
        32,
        1e-6,
        4,
    );
    assert!(r.checked >= 20 && r.max_rel_err <= 1e-6, "{r:?}");
}

#[test]
fn bce_iou_rejects_non_binary_mask() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let m = Tensor::full(&[1, 1, 2, 2], 0.5);
    assert!(matches!(bce_iou_seg_loss(&mut t, z, &m), Err(LossError::NotBinary { .. })));
}

#[test]
fn combine_losses_weights() {
    let mut t = Tape::new();
    let ld = t.constant(Tensor::scalar(1.0));
    let ls = t.constant(Tensor::scalar(1.0));
    let w = |k: f64| inverse_kpi_weight(k, 0.05);
    let total = combine_losses(&mut t, Some((ld, w(1.0))), Some((ls, w(1.0)))).unwrap();
    assert_eq!(t.value(total).item(), 2.0);
    let total = combine_losses(&mut t, Some((ld, w(0.5))), Some((ls, w(1.0)))).unwrap();
    assert_eq!(t.value(total).item(), 3.0);
    assert_eq!(w(0.01), 20.0);
    let nan = t.constant(Tensor::scalar(f64::NAN));
    assert_eq!(
        combine_losses(&mut t, Some((nan, 1.0)), Some((ls, 1.0))).unwrap_err(),
        LossError::NonFinite("detection")
    );
    let only = combine_losses(&mut t, None, Some((ls, 1.0))).unwrap();
    assert_eq!(t.value(only).item(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_nonnegative_and_average_to_batch(seed in 0u64..10_000, b in 1usize..4) {
        let z = random(&[b, 1, 4, 4], seed, -6.0, 6.0);
        let m = binary(&[b, 1, 4, 4], seed + 1, 0.3);
        let mut hm = random(&[b, 1, 4, 4], seed + 2, 0.0, 0.9);
        let cm = binary(&[b, 1, 4, 4], seed + 3, 0.15);
        for (h, &c) in hm.data_mut().iter_mut().zip(cm.data()) {
            if c == 1.0 { *h = 1.0; }
        }
        let sp = random(&[b, 2, 4, 4], seed + 4, 0.0, 6.0);
        let st = random(&[b, 2, 4, 4], seed + 5, 0.0, 6.0);

        let mut t = Tape::new();
        let zv = t.constant(z);
        let spv = t.constant(sp);
        let cfg = LossConfig::default();
        let per = [
            focal_center_loss(&mut t, zv, &hm, &cm, &cfg).unwrap(),
            bce_iou_seg_loss(&mut t, zv, &m).unwrap(),
            size_l1_loss(&mut t, spv, &st, &cm).unwrap().0,
        ];
        for l in per {
            let vals = t.value(l).data().to_vec();
            prop_assert!(vals.iter().all(|&v| v >= 0.0 && v.is_finite()));
            let batch = t.mean_all(l);
            let direct = vals.iter().sum::<f64>() / b as f64;
            prop_assert!((t.value(batch).item() - direct).abs() <= 1e-12);
        }
    }
}
