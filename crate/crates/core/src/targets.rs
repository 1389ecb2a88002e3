//! Instance centroids and HoVer regression targets.

use serde::{Deserialize, Serialize};

use crate::raster::{Grid, HoverField, LabelImage, Mask};

/// Centre of mass of one instance, in fractional pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub instance_id: u32,
    pub row: f64,
    pub col: f64,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is unused so provisional labels start at 1
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Label the 8-connected foreground components of `mask` as `1..=K`, ordered
/// by each component's first pixel in a row-major scan.
pub fn connected_components(mask: &Mask) -> LabelImage {
    let (h, w) = mask.dims();
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet::new();

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut label = 0u32;
            let mut neighbours = [0u32; 4];
            if c > 0 {
                neighbours[0] = provisional[r * w + c - 1];
            }
            if r > 0 {
                let up = (r - 1) * w;
                if c > 0 {
                    neighbours[1] = provisional[up + c - 1];
                }
                neighbours[2] = provisional[up + c];
                if c + 1 < w {
                    neighbours[3] = provisional[up + c + 1];
                }
            }
            for &n in neighbours.iter().filter(|&&n| n != 0) {
                if label == 0 {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            if label == 0 {
                label = sets.make();
            }
            provisional[r * w + c] = label;
        }
    }

    let mut final_ids = vec![0u32; sets.parent.len()];
    let mut next = 1u32;
    for p in provisional.iter_mut() {
        if *p == 0 {
            continue;
        }
        let root = sets.find(*p) as usize;
        if final_ids[root] == 0 {
            final_ids[root] = next;
            next += 1;
        }
        *p = final_ids[root];
    }
    LabelImage::from(Grid::new(h, w, provisional).expect("dims preserved"))
}

/// Integer moment sums per instance: (pixel count, Σrow, Σcol).
fn moments(m: &LabelImage) -> std::collections::BTreeMap<u32, (i64, i64, i64)> {
    let mut sums = std::collections::BTreeMap::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            let id = m.get(r, c);
            if id != 0 {
                let e = sums.entry(id).or_insert((0i64, 0i64, 0i64));
                e.0 += 1;
                e.1 += r as i64;
                e.2 += c as i64;
            }
        }
    }
    sums
}

/// Unweighted centre of mass of every instance, sorted by id.
pub fn centroids(m: &LabelImage) -> Vec<Centroid> {
    moments(m)
        .into_iter()
        .map(|(instance_id, (n, sr, sc))| Centroid {
            instance_id,
            row: sr as f64 / n as f64,
            col: sc as f64 / n as f64,
        })
        .collect()
}

/// Horizontal/vertical offsets of each nuclear pixel from its instance's
/// centre of mass, each channel scaled per instance by its largest absolute
/// offset so the range is `[-1, 1]`.
///
/// Offsets are carried as exact integers `n * coord - Σcoord` (the true
/// offset times the pixel count `n`). The scaled value is then a ratio of
/// two integers, which makes the output exactly antisymmetric under mirroring.
pub fn hover_targets(m: &LabelImage) -> HoverField {
    let (h, w) = m.dims();
    let sums = moments(m);

    // per-instance max |numerator| for each channel
    let mut max_abs = std::collections::BTreeMap::<u32, (i64, i64)>::new();
    for r in 0..h {
        for c in 0..w {
            let id = m.get(r, c);
            if id == 0 {
                continue;
            }
            let (n, sr, sc) = sums[&id];
            let dh = (n * c as i64 - sc).abs();
            let dv = (n * r as i64 - sr).abs();
            let e = max_abs.entry(id).or_insert((0, 0));
            e.0 = e.0.max(dh);
            e.1 = e.1.max(dv);
        }
    }

    let mut hmap = Grid::filled(h, w, 0.0);
    let mut vmap = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let id = m.get(r, c);
            if id == 0 {
                continue;
            }
            let (n, sr, sc) = sums[&id];
            let (mh, mv) = max_abs[&id];
            if mh > 0 {
                hmap.set(r, c, (n * c as i64 - sc) as f64 / mh as f64);
            }
            if mv > 0 {
                vmap.set(r, c, (n * r as i64 - sr) as f64 / mv as f64);
            }
        }
    }
    HoverField::new(hmap, vmap).expect("targets are bounded by construction")
}
