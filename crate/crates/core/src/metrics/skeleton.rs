//! Topology-preserving thinning to a one-pixel-wide skeleton.

use alloc::vec::Vec;

/// Neighbour offsets starting east, counter-clockwise (E, NE, N, NW, W, SW, S, SE).
const RING: [(isize, isize); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

struct Grid<'a> {
    px: &'a mut [bool],
    h: usize,
    w: usize,
}

impl Grid<'_> {
    fn at(&self, x: usize, y: usize, d: (isize, isize)) -> bool {
        let (xx, yy) = (x as isize + d.0, y as isize + d.1);
        xx >= 0
            && yy >= 0
            && (xx as usize) < self.w
            && (yy as usize) < self.h
            && self.px[yy as usize * self.w + xx as usize]
    }

    fn ring(&self, x: usize, y: usize) -> [bool; 8] {
        RING.map(|d| self.at(x, y, d))
    }

    fn neighbours(&self, x: usize, y: usize) -> usize {
        self.ring(x, y).iter().filter(|&&b| b).count()
    }

    /// Yokoi connectivity number for 8-connected foreground.
    fn yokoi8(&self, x: usize, y: usize) -> i32 {
        let n = self.ring(x, y).map(|b| !b as i32);
        [0, 2, 4, 6].iter().map(|&k| n[k] - n[k] * n[(k + 1) % 8] * n[(k + 2) % 8]).sum()
    }

    /// Deletable without changing topology or shortening a branch.
    fn removable(&self, x: usize, y: usize) -> bool {
        self.px[y * self.w + x] && self.neighbours(x, y) >= 2 && self.yokoi8(x, y) == 1
    }

    fn simple(&self, x: usize, y: usize) -> bool {
        self.px[y * self.w + x] && self.yokoi8(x, y) == 1
    }
}

/// Thin `mask` (row-major, `h`×`w`) by sequential deletion of simple border
/// points from the north, south, east and west in turn, keeping end points.
/// A final pass clears any remaining fully-set 2×2 block.
pub fn skeletonize(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    assert_eq!(mask.len(), h * w, "mask size");
    let mut px = mask.to_vec();
    let g = Grid { px: &mut px, h, w };
    loop {
        let mut changed = false;
        for dir in [(0, -1), (0, 1), (1, 0), (-1, 0)] {
            let candidates: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| g.px[y * w + x] && !g.at(x, y, dir) && g.removable(x, y))
                .collect();
            for (x, y) in candidates {
                if g.removable(x, y) {
                    g.px[y * w + x] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)];
                if block.iter().all(|&(a, b)| g.px[b * w + a]) {
                    if let Some(&(a, b)) = block.iter().find(|&&(a, b)| g.simple(a, b)) {
                        g.px[b * w + a] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    px
}

/// Number of 8-connected foreground components.
pub fn components8(mask: &[bool], h: usize, w: usize) -> usize {
    let mut seen = alloc::vec![false; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (xx, yy) = (x + dx, y + dy);
                if xx < 0 || yy < 0 || xx as usize >= w || yy as usize >= h {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}
