use alloc::vec;
use alloc::vec::Vec;

use super::{SampleRecord, SynthError};

/// Dense supervision at output stride.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBundle {
    pub grid_h: usize,
    pub grid_w: usize,
    /// [grid_h·grid_w], values in [0, 1].
    pub heatmap: Vec<f64>,
    /// [2·grid_h·grid_w]: width plane then height plane.
    pub size_map: Vec<f64>,
    pub center_mask: Vec<bool>,
}

/// Splat radius in grid cells: ⌊min(w, h) / stride / 3⌋, at least 1.
pub fn splat_radius(w: f64, h: f64, stride: usize) -> usize {
    (libm::floor(w.min(h) / stride as f64 / 3.0) as usize).max(1)
}

pub fn splat_sigma(radius: usize) -> f64 {
    (2 * radius + 1) as f64 / 6.0
}

/// Heatmap, size and center-mask targets for one record.
pub fn make_targets(rec: &SampleRecord, stride: usize) -> Result<TargetBundle, SynthError> {
    let (h, w) = (rec.height, rec.width);
    if stride == 0 || h % stride != 0 || w % stride != 0 {
        return Err(SynthError::Stride { stride, h, w });
    }
    let (gh, gw) = (h / stride, w / stride);
    let plane = gh * gw;
    let mut t = TargetBundle {
        grid_h: gh,
        grid_w: gw,
        heatmap: vec![0.0; plane],
        size_map: vec![0.0; 2 * plane],
        center_mask: vec![false; plane],
    };
    for (index, b) in rec.electrodes.iter().enumerate() {
        let outside = || SynthError::ElectrodeOutside { index, cx: b.cx, cy: b.cy, h, w };
        if !(b.cx >= 0.0 && b.cy >= 0.0) {
            return Err(outside());
        }
        let gx = libm::floor(b.cx / stride as f64) as usize;
        let gy = libm::floor(b.cy / stride as f64) as usize;
        if gx >= gw || gy >= gh {
            return Err(outside());
        }
        let r = splat_radius(b.w, b.h, stride);
        let two_s2 = 2.0 * splat_sigma(r) * splat_sigma(r);
        for y in gy.saturating_sub(r)..(gy + r + 1).min(gh) {
            for x in gx.saturating_sub(r)..(gx + r + 1).min(gw) {
                let (dx, dy) = (x as f64 - gx as f64, y as f64 - gy as f64);
                let v = libm::exp(-(dx * dx + dy * dy) / two_s2);
                let cell = &mut t.heatmap[y * gw + x];
                *cell = cell.max(v);
            }
        }
        let c = gy * gw + gx;
        t.center_mask[c] = true;
        t.size_map[c] = b.w;
        t.size_map[plane + c] = b.h;
    }
    Ok(t)
}
