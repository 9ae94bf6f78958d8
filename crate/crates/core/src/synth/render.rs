//! Curve construction and rasterization helpers.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;

pub(crate) type Point = [f64; 2];

fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

/// Dense samples of the Catmull-Rom spline through `ctrl` (end points repeated).
pub(crate) fn spline(ctrl: &[Point], per_segment: usize) -> Vec<Point> {
    let n = ctrl.len();
    let at = |i: isize| ctrl[i.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity((n - 1) * per_segment + 1);
    for s in 0..n - 1 {
        let s = s as isize;
        for k in 0..per_segment {
            out.push(catmull_rom(at(s - 1), at(s), at(s + 1), at(s + 2), k as f64 / per_segment as f64));
        }
    }
    out.push(ctrl[n - 1]);
    out
}

/// Resample a polyline at (about) unit arc-length spacing.
pub(crate) fn resample(poly: &[Point], step: f64) -> Vec<Point> {
    let mut out = Vec::new();
    if poly.is_empty() {
        return out;
    }
    out.push(poly[0]);
    let mut carry = 0.0;
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = dist(a, b);
        let mut s = step - carry;
        while s <= len {
            let t = s / len;
            out.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]);
            s += step;
        }
        carry = len - (s - step);
    }
    out
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

pub(crate) fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

pub(crate) fn polyline_dist(p: Point, poly: &[Point]) -> f64 {
    match poly {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => poly.windows(2).map(|w| seg_dist(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Longest run of consecutive points inside [0, w]×[0, h].
pub(crate) fn clip_inside(poly: &[Point], h: usize, w: usize) -> Vec<Point> {
    let inside = |p: &Point| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= w as f64 && p[1] <= h as f64;
    let mut best: &[Point] = &[];
    let mut start = None;
    for i in 0..=poly.len() {
        let ok = i < poly.len() && inside(&poly[i]);
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s > best.len() {
                    best = &poly[s..i];
                }
                start = None;
            }
            _ => {}
        }
    }
    best.to_vec()
}

/// Set every pixel whose center lies within `radius` of the polyline.
pub(crate) fn stroke(buf: &mut [bool], h: usize, w: usize, poly: &[Point], radius: f64) {
    let pad = radius + 1.0;
    let segments: Vec<(Point, Point)> =
        if poly.len() == 1 { alloc::vec![(poly[0], poly[0])] } else { poly.windows(2).map(|s| (s[0], s[1])).collect() };
    for (a, b) in segments {
        let x0 = libm::floor(a[0].min(b[0]) - pad).max(0.0) as usize;
        let x1 = (libm::ceil(a[0].max(b[0]) + pad).max(0.0) as usize).min(w);
        let y0 = libm::floor(a[1].min(b[1]) - pad).max(0.0) as usize;
        let y1 = (libm::ceil(a[1].max(b[1]) + pad).max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if seg_dist([x as f64 + 0.5, y as f64 + 0.5], a, b) <= radius {
                    buf[y * w + x] = true;
                }
            }
        }
    }
}

/// True when two points far apart along the curve come closer than `gap`.
pub(crate) fn self_close(poly: &[Point], gap: f64, arc_skip: usize) -> bool {
    (0..poly.len()).any(|i| (i + arc_skip..poly.len()).any(|j| dist(poly[i], poly[j]) < gap))
}

/// Random smooth curve roughly crossing an `h`×`w` frame.
pub(crate) fn random_curve(rng: &mut Rng, h: usize, w: usize) -> Vec<Point> {
    let (fh, fw) = (h as f64, w as f64);
    let theta = rng.random_range(0.0..core::f64::consts::TAU);
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    let reach = 0.65;
    let start = [fw * (0.5 + reach * c), fh * (0.5 + reach * s)];
    let end = [
        fw * (0.5 - reach * c) + rng.random_range(-0.15..0.15) * fw,
        fh * (0.5 - reach * s) + rng.random_range(-0.15..0.15) * fh,
    ];
    let mids = rng.random_range(1..=3);
    let mut ctrl = alloc::vec![start];
    for k in 1..=mids {
        let t = k as f64 / (mids + 1) as f64;
        let base = [start[0] + (end[0] - start[0]) * t, start[1] + (end[1] - start[1]) * t];
        ctrl.push([
            (base[0] + rng.random_range(-0.25..0.25) * fw).clamp(0.1 * fw, 0.9 * fw),
            (base[1] + rng.random_range(-0.25..0.25) * fh).clamp(0.1 * fh, 0.9 * fh),
        ]);
    }
    ctrl.push(end);
    resample(&spline(&ctrl, 32), 1.0)
}

/// Smooth random field in roughly [−1, 1]: bilinear interpolation of a
/// coarse uniform grid with `cell`-pixel spacing.
pub(crate) fn smooth_field(rng: &mut Rng, h: usize, w: usize, cell: usize) -> Vec<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = alloc::vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let y0 = fy as usize;
        let ly = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let x0 = fx as usize;
            let lx = fx - x0 as f64;
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            out[y * w + x] = (g(y0, x0) * (1.0 - lx) + g(y0, x0 + 1) * lx) * (1.0 - ly)
                + (g(y0 + 1, x0) * (1.0 - lx) + g(y0 + 1, x0 + 1) * lx) * ly;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_passes_through_controls() {
        let ctrl = [[0.0, 0.0], [10.0, 5.0], [20.0, 0.0]];
        let s = spline(&ctrl, 8);
        assert_eq!(s[0], ctrl[0]);
        assert_eq!(s[8], ctrl[1]);
        assert_eq!(*s.last().unwrap(), ctrl[2]);
    }

    #[test]
    fn resample_has_unit_spacing() {
        let r = resample(&[[0.0, 0.0], [3.5, 0.0], [3.5, 2.0]], 1.0);
        assert_eq!(r.len(), 6);
        for w in r.windows(2) {
            assert!(dist(w[0], w[1]) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn stroke_marks_pixel_centers_within_radius() {
        let mut b = alloc::vec![false; 25];
        stroke(&mut b, 5, 5, &[[0.0, 2.5], [5.0, 2.5]], 0.5);
        let rows: Vec<usize> = (0..25).filter(|&i| b[i]).map(|i| i / 5).collect();
        assert!(rows.iter().all(|&r| r == 2));
        assert_eq!(rows.len(), 5);
    }
}
