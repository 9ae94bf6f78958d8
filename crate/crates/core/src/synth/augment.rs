use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{render, SampleRecord};
use crate::metrics::BBox;
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    /// Probability of a crop-then-resize zoom.
    pub scale_prob: f64,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, rotate: true, scale_prob: 0.3, min_crop: 0.8 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { flip: false, rotate: false, scale_prob: 0.0, min_crop: 1.0 }
    }
}

/// Random flips, quarter turns and zoom, drawn from `seed`. A zoom that
/// would break a record invariant is skipped.
pub fn augment(rec: &SampleRecord, seed: u64, cfg: &AugmentConfig) -> SampleRecord {
    let mut rng = rng_from(seed);
    let mut out = rec.clone();
    if cfg.flip && rng.random_bool(0.5) {
        out = hflip(&out);
    }
    if cfg.flip && rng.random_bool(0.5) {
        out = vflip(&out);
    }
    if cfg.rotate {
        let turns = rng.random_range(0..4);
        // odd turns would change the shape of non-square inputs
        if out.height == out.width || turns % 2 == 0 {
            for _ in 0..turns {
                out = rot90(&out);
            }
        }
    }
    if cfg.scale_prob > 0.0 && rng.random_bool(cfg.scale_prob.min(1.0)) {
        let s = rng.random_range(cfg.min_crop.clamp(0.1, 1.0)..=1.0);
        let ch = (libm::round(out.height as f64 * s) as usize).clamp(1, out.height);
        let cw = (libm::round(out.width as f64 * s) as usize).clamp(1, out.width);
        let y0 = rng.random_range(0..=out.height - ch);
        let x0 = rng.random_range(0..=out.width - cw);
        let zoomed = crop_resize(&out, y0, x0, ch, cw);
        if zoomed.check_invariants().is_ok() && zoomed.electrodes.len() == out.electrodes.len() {
            out = zoomed;
        }
    }
    out
}

fn remap<T: Copy>(src: &[T], h2: usize, w2: usize, at: impl Fn(usize, usize) -> usize) -> Vec<T> {
    (0..h2 * w2).map(|i| src[at(i / w2, i % w2)]).collect()
}

fn map_geometry(rec: &SampleRecord, f: impl Fn([f64; 2]) -> [f64; 2], swap: bool) -> (Vec<BBox>, Vec<[f64; 2]>) {
    let boxes = rec
        .electrodes
        .iter()
        .map(|b| {
            let [cx, cy] = f([b.cx, b.cy]);
            let (w, h) = if swap { (b.h, b.w) } else { (b.w, b.h) };
            BBox::new(cx, cy, w, h)
        })
        .collect();
    (boxes, rec.centerline.iter().map(|&p| f(p)).collect())
}

pub fn hflip(rec: &SampleRecord) -> SampleRecord {
    let (h, w) = (rec.height, rec.width);
    let at = |y: usize, x: usize| y * w + (w - 1 - x);
    let (electrodes, centerline) = map_geometry(rec, |[x, y]| [w as f64 - x, y], false);
    SampleRecord {
        image: remap(&rec.image, h, w, at),
        mask: remap(&rec.mask, h, w, at),
        electrodes,
        centerline,
        ..rec.clone()
    }
}

pub fn vflip(rec: &SampleRecord) -> SampleRecord {
    let (h, w) = (rec.height, rec.width);
    let at = |y: usize, x: usize| (h - 1 - y) * w + x;
    let (electrodes, centerline) = map_geometry(rec, |[x, y]| [x, h as f64 - y], false);
    SampleRecord {
        image: remap(&rec.image, h, w, at),
        mask: remap(&rec.mask, h, w, at),
        electrodes,
        centerline,
        ..rec.clone()
    }
}

/// Quarter turn clockwise.
pub fn rot90(rec: &SampleRecord) -> SampleRecord {
    let (h, w) = (rec.height, rec.width);
    let at = |y2: usize, x2: usize| (h - 1 - x2) * w + y2;
    let (electrodes, centerline) = map_geometry(rec, |[x, y]| [h as f64 - y, x], true);
    SampleRecord {
        height: w,
        width: h,
        image: remap(&rec.image, w, h, at),
        mask: remap(&rec.mask, w, h, at),
        electrodes,
        centerline,
        ..rec.clone()
    }
}

/// Crop the `ch`×`cw` window at (`y0`, `x0`) and resize it back to full
/// size by nearest-neighbour sampling.
pub fn crop_resize(rec: &SampleRecord, y0: usize, x0: usize, ch: usize, cw: usize) -> SampleRecord {
    let (h, w) = (rec.height, rec.width);
    let src_y = |y: usize| y0 + ((2 * y + 1) * ch / (2 * h)).min(ch - 1);
    let src_x = |x: usize| x0 + ((2 * x + 1) * cw / (2 * w)).min(cw - 1);
    let at = |y: usize, x: usize| src_y(y) * w + src_x(x);
    let (sy, sx) = (h as f64 / ch as f64, w as f64 / cw as f64);
    let f = |[x, y]: [f64; 2]| [(x - x0 as f64) * sx, (y - y0 as f64) * sy];
    let electrodes = rec
        .electrodes
        .iter()
        .map(|b| {
            let [cx, cy] = f([b.cx, b.cy]);
            BBox::new(cx, cy, b.w * sx, b.h * sy)
        })
        .collect();
    let line: Vec<[f64; 2]> = rec.centerline.iter().map(|&p| f(p)).collect();
    SampleRecord {
        image: remap(&rec.image, h, w, at),
        mask: remap(&rec.mask, h, w, at),
        electrodes,
        centerline: render::clip_inside(&line, h, w),
        ..rec.clone()
    }
}
