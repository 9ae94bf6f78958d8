use cathnet_core::metrics::BBox;
use cathnet_core::rng::{derive_seed, Stream};
use cathnet_core::synth::{
    augment, crop_resize, generate_sample, hflip, make_targets, rot90, splat_radius, splat_sigma, vflip, AugmentConfig,
    GeneratorConfig, SampleRecord, SynthError,
};
use proptest::prelude::*;

fn sample(i: u64) -> SampleRecord {
    generate_sample(derive_seed(11, Stream::Data, i), &GeneratorConfig::default()).unwrap()
}

fn record_with(electrodes: Vec<BBox>) -> SampleRecord {
    SampleRecord {
        id: "fixture".into(),
        height: 64,
        width: 64,
        image: vec![0.5; 64 * 64],
        mask: vec![false; 64 * 64],
        electrodes,
        centerline: vec![],
        seed: 0,
        distractors: 0,
    }
}

fn assert_geometry_close(a: &SampleRecord, b: &SampleRecord) {
    assert_eq!(a.electrodes.len(), b.electrodes.len());
    for (x, y) in a.electrodes.iter().zip(&b.electrodes) {
        for (u, v) in [(x.cx, y.cx), (x.cy, y.cy), (x.w, y.w), (x.h, y.h)] {
            assert!((u - v).abs() < 1e-12, "{x:?} vs {y:?}");
        }
    }
    assert_eq!(a.centerline.len(), b.centerline.len());
    for (p, q) in a.centerline.iter().zip(&b.centerline) {
        assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_record() {
    let cfg = GeneratorConfig::default();
    for i in 0..5 {
        let s = derive_seed(3, Stream::Data, i);
        assert_eq!(generate_sample(s, &cfg).unwrap(), generate_sample(s, &cfg).unwrap());
    }
    assert_ne!(sample(0).image, sample(1).image);
}

#[test]
fn two_hundred_samples_respect_invariants() {
    let cfg = GeneratorConfig::default();
    let mut fractions = Vec::new();
    for i in 0..200 {
        let rec = sample(i);
        rec.check_invariants().unwrap_or_else(|e| panic!("sample {i}: {e}"));
        let f = rec.foreground_fraction();
        assert!((0.005..=0.20).contains(&f), "sample {i}: foreground {f}");
        fractions.push(f);
        let n = rec.electrodes.len();
        assert!((cfg.electrodes_min..=cfg.electrodes_max).contains(&n));
        assert!(rec.image.iter().all(|v| (v * 255.0).round() == v * 255.0));
        assert!(rec.distractors <= 3);

        let t = make_targets(&rec, 4).unwrap();
        for (c, b) in rec.electrodes.iter().enumerate() {
            let g = (b.cy / 4.0).floor() as usize * t.grid_w + (b.cx / 4.0).floor() as usize;
            assert_eq!(t.heatmap[g], 1.0, "sample {i} electrode {c}");
        }
        for k in 0..t.heatmap.len() {
            let support = t.size_map[k] != 0.0 || t.size_map[t.heatmap.len() + k] != 0.0;
            assert_eq!(support, t.center_mask[k]);
            assert!((0.0..=1.0).contains(&t.heatmap[k]));
        }
        assert_eq!(t.center_mask.iter().filter(|&&m| m).count(), n, "electrodes share a cell");
    }
    let lo = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fractions.iter().cloned().fold(0.0, f64::max);
    assert!(lo >= 0.005 && hi <= 0.20, "range [{lo}, {hi}]");
}

#[test]
fn clean_render_mask_is_dark_pixels() {
    let cfg = GeneratorConfig { noise: 0.0, distractors_max: 0, collimation: 0.0, ..Default::default() };
    for i in 0..30 {
        let rec = generate_sample(i, &cfg).unwrap();
        let bg = rec.image.iter().cloned().fold(0.0, f64::max);
        let dark: Vec<bool> = rec.image.iter().map(|&v| v < bg - 0.1).collect();
        assert_eq!(dark, rec.mask, "seed {i}");
        assert_eq!(rec.distractors, 0);
    }
}

#[test]
fn config_bounds_are_enforced() {
    let bad = [
        GeneratorConfig { size: 16, ..Default::default() },
        GeneratorConfig { electrodes_min: 1, ..Default::default() },
        GeneratorConfig { electrodes_max: 11, ..Default::default() },
        GeneratorConfig { thickness_max: 4.0, ..Default::default() },
        GeneratorConfig { distractors_max: 4, ..Default::default() },
        GeneratorConfig { size: 66, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(generate_sample(1, &cfg), Err(SynthError::Config(_))), "{cfg:?}");
    }
    let big = GeneratorConfig { size: 128, electrodes_min: 6, electrodes_max: 10, ..Default::default() };
    for i in 0..5 {
        generate_sample(i, &big).unwrap().check_invariants().unwrap();
    }
}

#[test]
fn single_center_electrode_peaks_at_grid_center() {
    let t = make_targets(&record_with(vec![BBox::new(34.0, 34.0, 6.0, 6.0)]), 4).unwrap();
    let max = t.heatmap.iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    assert_eq!(t.heatmap[8 * 16 + 8], 1.0);
    assert_eq!(t.size_map[8 * 16 + 8], 6.0);
    assert_eq!(t.size_map[256 + 8 * 16 + 8], 6.0);
}

#[test]
fn distant_electrodes_give_two_unit_maxima() {
    let t =
        make_targets(&record_with(vec![BBox::new(10.0, 10.0, 5.0, 5.0), BBox::new(50.0, 42.0, 5.0, 5.0)]), 4).unwrap();
    let peaks: Vec<usize> = (0..t.heatmap.len()).filter(|&k| t.heatmap[k] == 1.0).collect();
    assert_eq!(peaks, vec![2 * 16 + 2, 10 * 16 + 12]);
}

#[test]
fn overlapping_splats_match_per_pixel_oracle() {
    let boxes =
        vec![BBox::new(30.0, 30.0, 26.0, 26.0), BBox::new(38.0, 34.0, 14.0, 20.0), BBox::new(22.0, 26.0, 5.0, 5.0)];
    let t = make_targets(&record_with(boxes.clone()), 4).unwrap();
    for gy in 0..16 {
        for gx in 0..16 {
            let mut expect: f64 = 0.0;
            for b in &boxes {
                let (cx, cy) = ((b.cx / 4.0).floor(), (b.cy / 4.0).floor());
                let r = splat_radius(b.w, b.h, 4) as f64;
                let (dx, dy) = (gx as f64 - cx, gy as f64 - cy);
                if dx.abs() <= r && dy.abs() <= r {
                    let s = splat_sigma(r as usize);
                    expect = expect.max((-(dx * dx + dy * dy) / (2.0 * s * s)).exp());
                }
            }
            // std and libm exp may differ in the last bit
            assert!((t.heatmap[gy * 16 + gx] - expect).abs() <= 1e-15, "cell ({gx},{gy})");
        }
    }
    // the large box spreads wider than the small one
    assert_eq!(splat_radius(26.0, 26.0, 4), 2);
    assert_eq!(splat_radius(5.0, 5.0, 4), 1);
}

#[test]
fn targets_reject_bad_stride_and_outside_boxes() {
    assert!(matches!(make_targets(&record_with(vec![]), 5), Err(SynthError::Stride { .. })));
    let out = record_with(vec![BBox::new(70.0, 10.0, 4.0, 4.0)]);
    assert!(matches!(make_targets(&out, 4), Err(SynthError::ElectrodeOutside { index: 0, .. })));
}

#[test]
fn flips_and_rotations_compose_to_identity() {
    for i in 0..10 {
        let rec = sample(i);
        let hh = hflip(&hflip(&rec));
        assert_eq!((hh.image.clone(), hh.mask.clone()), (rec.image.clone(), rec.mask.clone()));
        assert_geometry_close(&hh, &rec);
        let vv = vflip(&vflip(&rec));
        assert_eq!(vv.mask, rec.mask);
        assert_geometry_close(&vv, &rec);
        let r4 = rot90(&rot90(&rot90(&rot90(&rec))));
        assert_eq!((r4.image.clone(), r4.mask.clone()), (rec.image.clone(), rec.mask.clone()));
        assert_geometry_close(&r4, &rec);
        // two quarter turns equal both flips
        let r2 = rot90(&rot90(&rec));
        assert_eq!(r2.image, vflip(&hflip(&rec)).image);
    }
}

#[test]
fn rotation_moves_pixels_and_boxes_together() {
    let mut rec = record_with(vec![BBox::new(10.5, 3.5, 3.0, 5.0)]);
    rec.mask[3 * 64 + 10] = true;
    let r = rot90(&rec);
    let b = r.electrodes[0];
    let (x, y) = (b.cx.floor() as usize, b.cy.floor() as usize);
    assert!(r.mask[y * 64 + x]);
    assert_eq!((b.w, b.h), (5.0, 3.0));
}

#[test]
fn identity_crop_is_a_no_op() {
    let rec = sample(4);
    let same = crop_resize(&rec, 0, 0, 64, 64);
    assert_eq!(same.image, rec.image);
    assert_geometry_close(&same, &rec);
}

#[test]
fn augmentation_is_seeded() {
    let rec = sample(2);
    let cfg = AugmentConfig::default();
    assert_eq!(augment(&rec, 9, &cfg), augment(&rec, 9, &cfg));
    assert_eq!(augment(&rec, 9, &AugmentConfig::none()), rec);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_preserves_invariants(i in 0u64..500, aseed in any::<u64>()) {
        let rec = sample(i);
        let cfg = AugmentConfig { scale_prob: 1.0, ..Default::default() };
        let aug = augment(&rec, aseed, &cfg);
        prop_assert!(aug.check_invariants().is_ok(), "{:?}", aug.check_invariants());
        prop_assert_eq!(aug.electrodes.len(), rec.electrodes.len());
        let t = make_targets(&aug, 4).unwrap();
        for b in &aug.electrodes {
            let g = (b.cy / 4.0).floor() as usize * t.grid_w + (b.cx / 4.0).floor() as usize;
            prop_assert_eq!(t.heatmap[g], 1.0);
        }
    }

    #[test]
    fn flips_keep_electrodes_on_centerline(i in 0u64..500, turns in 0usize..4, h in any::<bool>(), v in any::<bool>()) {
        let mut rec = sample(i);
        if h { rec = hflip(&rec); }
        if v { rec = vflip(&rec); }
        for _ in 0..turns { rec = rot90(&rec); }
        prop_assert!(rec.check_invariants().is_ok());
        // grid-snapped centers stay on cell centers
        for b in &rec.electrodes {
            prop_assert_eq!((b.cx - 2.0).rem_euclid(4.0), 0.0);
            prop_assert_eq!((b.cy - 2.0).rem_euclid(4.0), 0.0);
        }
    }
}
