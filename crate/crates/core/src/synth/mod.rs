//! Procedural fluoroscopy-like samples: a dark catheter tube with electrode
//! discs on a noisy background, plus unlabeled distractor wires.

mod augment;
mod render;
mod targets;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::metrics::BBox;
use crate::rng::{rng_from, Rng};

pub use augment::{augment, crop_resize, hflip, rot90, vflip, AugmentConfig};
pub use targets::{make_targets, splat_radius, splat_sigma, TargetBundle};

const MAX_RETRIES: usize = 200;
const MIN_FOREGROUND: f64 = 0.005;
const MAX_FOREGROUND: f64 = 0.20;
/// Electrode centers sit within this distance of the centerline.
pub const CENTERLINE_SNAP: f64 = 1.5;
/// Invariant tolerance for electrode-to-centerline distance.
pub const CENTERLINE_TOLERANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no valid sample after {0} attempts")]
    RetriesExhausted(usize),
    #[error("electrode {index} at ({cx}, {cy}) falls outside the {h}×{w} image")]
    ElectrodeOutside { index: usize, cx: f64, cy: f64, h: usize, w: usize },
    #[error("stride {stride} does not divide image size {h}×{w}")]
    Stride { stride: usize, h: usize, w: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Square image side in pixels.
    pub size: usize,
    pub electrodes_min: usize,
    pub electrodes_max: usize,
    pub thickness_min: f64,
    pub thickness_max: f64,
    pub electrode_radius_min: f64,
    pub electrode_radius_max: f64,
    /// Electrode centers are placed on cell centers of this grid; 0 places
    /// them anywhere along the curve.
    pub electrode_grid: usize,
    pub distractors_max: usize,
    /// Amplitude of the band-limited background noise.
    pub noise: f64,
    /// Probability of a dark collimation border.
    pub collimation: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 64,
            electrodes_min: 2,
            electrodes_max: 5,
            thickness_min: 1.0,
            thickness_max: 3.0,
            electrode_radius_min: 2.0,
            electrode_radius_max: 3.0,
            electrode_grid: 4,
            distractors_max: 3,
            noise: 0.06,
            collimation: 0.3,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if !(32..=256).contains(&self.size) {
            return bad("size must lie in 32..=256");
        }
        if self.electrodes_min < 2 || self.electrodes_max > 10 || self.electrodes_min > self.electrodes_max {
            return bad("electrode count range must satisfy 2 <= min <= max <= 10");
        }
        if !(1.0 <= self.thickness_min && self.thickness_min <= self.thickness_max && self.thickness_max <= 3.0) {
            return bad("thickness range must lie within [1, 3]");
        }
        if !(0.5 <= self.electrode_radius_min && self.electrode_radius_min <= self.electrode_radius_max) {
            return bad("electrode radius range must satisfy 0.5 <= min <= max");
        }
        if self.distractors_max > 3 {
            return bad("at most 3 distractors");
        }
        if !(self.noise >= 0.0 && self.noise <= 0.5) {
            return bad("noise must lie in [0, 0.5]");
        }
        if !(0.0..=1.0).contains(&self.collimation) {
            return bad("collimation probability must lie in [0, 1]");
        }
        if self.electrode_grid > 1 && !self.size.is_multiple_of(self.electrode_grid) {
            return bad("electrode grid must divide the image size");
        }
        Ok(())
    }
}

/// One generated or loaded sample. Images are row-major with values that
/// are exact multiples of 1/255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f64>,
    pub mask: Vec<bool>,
    pub electrodes: Vec<BBox>,
    pub centerline: Vec<[f64; 2]>,
    pub seed: u64,
    pub distractors: usize,
}

impl SampleRecord {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let (h, w) = (self.height, self.width);
        if self.image.len() != h * w || self.mask.len() != h * w {
            return Err(alloc::format!("buffers do not match {h}×{w}"));
        }
        if self.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("image value outside [0, 1]".into());
        }
        let f = self.foreground_fraction();
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&f) {
            return Err(alloc::format!("foreground fraction {f:.4} out of bounds"));
        }
        for (i, b) in self.electrodes.iter().enumerate() {
            if b.cx - b.w / 2.0 < 0.0
                || b.cy - b.h / 2.0 < 0.0
                || b.cx + b.w / 2.0 > w as f64
                || b.cy + b.h / 2.0 > h as f64
            {
                return Err(alloc::format!("electrode {i} box leaves the image"));
            }
            let d = render::polyline_dist([b.cx, b.cy], &self.centerline);
            if d > CENTERLINE_TOLERANCE {
                return Err(alloc::format!("electrode {i} lies {d:.3} px from the centerline"));
            }
        }
        Ok(())
    }
}

/// Renders one sample; a pure function of `(seed, cfg)`.
pub fn generate_sample(seed: u64, cfg: &GeneratorConfig) -> Result<SampleRecord, SynthError> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    for _ in 0..MAX_RETRIES {
        if let Some(rec) = attempt(&mut rng, seed, cfg) {
            return Ok(rec);
        }
    }
    Err(SynthError::RetriesExhausted(MAX_RETRIES))
}

fn attempt(rng: &mut Rng, seed: u64, cfg: &GeneratorConfig) -> Option<SampleRecord> {
    let n = cfg.size;
    let thickness = rng.random_range(cfg.thickness_min..=cfg.thickness_max);
    let line = render::clip_inside(&render::random_curve(rng, n, n), n, n);
    if line.len() < n / 2 {
        return None;
    }
    let arc_skip = libm::ceil(3.0 * (thickness + 2.0 * cfg.electrode_radius_max)) as usize;
    if render::self_close(&line, 2.0 * thickness + 2.0, arc_skip) {
        return None;
    }

    let count = rng.random_range(cfg.electrodes_min..=cfg.electrodes_max);
    let radius = rng.random_range(cfg.electrode_radius_min..=cfg.electrode_radius_max);
    let centers = place_electrodes(rng, &line, n, radius, count, cfg.electrode_grid)?;

    let mut mask = vec![false; n * n];
    render::stroke(&mut mask, n, n, &line, thickness / 2.0);
    let mut discs = vec![false; n * n];
    for c in &centers {
        render::stroke(&mut discs, n, n, &[*c], radius);
    }
    for (m, d) in mask.iter_mut().zip(&discs) {
        *m |= *d;
    }
    let fg = mask.iter().filter(|&&m| m).count() as f64 / (n * n) as f64;
    if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fg) {
        return None;
    }

    // background
    let base = rng.random_range(0.55..0.8);
    let mut image = vec![base; n * n];
    if cfg.noise > 0.0 {
        let coarse = render::smooth_field(rng, n, n, (n / 4).max(4));
        let fine = render::smooth_field(rng, n, n, 2);
        for ((v, c), f) in image.iter_mut().zip(&coarse).zip(&fine) {
            *v += cfg.noise * (1.5 * c + 0.5 * f);
        }
    }

    // distractors: thin, fainter wires that stay out of the mask
    let distractors = rng.random_range(0..=cfg.distractors_max);
    for _ in 0..distractors {
        let wire = render::clip_inside(&render::random_curve(rng, n, n), n, n);
        let contrast = rng.random_range(0.08..0.2);
        let mut px = vec![false; n * n];
        render::stroke(&mut px, n, n, &wire, rng.random_range(0.5..0.9));
        for (v, p) in image.iter_mut().zip(&px) {
            if *p {
                *v -= contrast;
            }
        }
    }

    let tube = rng.random_range(0.25..0.4);
    let metal = rng.random_range(0.15..0.25);
    for i in 0..n * n {
        if mask[i] {
            image[i] -= tube;
        }
        if discs[i] {
            image[i] -= metal;
        }
    }

    if rng.random_bool(cfg.collimation) {
        let edge = rng.random_range(0..4usize);
        let depth = rng.random_range(n / 16..=n / 8).max(1);
        let dim = rng.random_range(0.45..0.7);
        for y in 0..n {
            for x in 0..n {
                let inside = match edge {
                    0 => y < depth,
                    1 => y >= n - depth,
                    2 => x < depth,
                    _ => x >= n - depth,
                };
                if inside {
                    image[y * n + x] *= dim;
                }
            }
        }
    }

    for v in &mut image {
        *v = quantize(*v);
    }
    let electrodes = centers.iter().map(|c| BBox::new(c[0], c[1], 2.0 * radius, 2.0 * radius)).collect();
    Some(SampleRecord {
        id: alloc::format!("{seed:016x}"),
        height: n,
        width: n,
        image,
        mask,
        electrodes,
        centerline: line,
        seed,
        distractors,
    })
}

/// Nearest multiple of 1/255 inside [0, 1].
pub fn quantize(v: f64) -> f64 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

fn place_electrodes(
    rng: &mut Rng,
    line: &[[f64; 2]],
    n: usize,
    radius: f64,
    count: usize,
    grid: usize,
) -> Option<Vec<[f64; 2]>> {
    let fits = |c: &[f64; 2]| {
        c[0] - radius >= 0.0 && c[1] - radius >= 0.0 && c[0] + radius <= n as f64 && c[1] + radius <= n as f64
    };
    let mut candidates: Vec<[f64; 2]> = if grid > 1 {
        let g = grid as f64;
        (0..n / grid)
            .flat_map(|gy| (0..n / grid).map(move |gx| [(gx as f64 + 0.5) * g, (gy as f64 + 0.5) * g]))
            .filter(|c| fits(c) && render::polyline_dist(*c, line) <= CENTERLINE_SNAP)
            .collect()
    } else {
        line.iter().copied().filter(fits).collect()
    };
    candidates.shuffle(rng);
    // two cells apart keeps neighbouring peaks distinct under 3×3 suppression
    let spacing = 2.0 * grid.max(4) as f64;
    let mut chosen: Vec<[f64; 2]> = Vec::with_capacity(count);
    for c in candidates {
        if chosen.iter().all(|o| (o[0] - c[0]).abs().max((o[1] - c[1]).abs()) >= spacing) {
            chosen.push(c);
            if chosen.len() == count {
                chosen.sort_by(|a, b| a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0])));
                return Some(chosen);
            }
        }
    }
    None
}
