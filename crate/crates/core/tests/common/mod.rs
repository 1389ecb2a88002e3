//! Fixture generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet, VecDeque};

use nhk_core::blocks::{Affine, CoordAttentionWeights, FeatureMap, SeWeights};
use nhk_core::raster::{ClassImage, Grid, LabelImage, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Grid::from_fn(h, w, |_, _| rng.random_bool(density))
}

/// Breadth-first 8-connected flood fill, labels in first-pixel scan order.
pub fn flood_fill_components(mask: &Mask) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p / w) as i64, (p % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask.data()[q] && labels[q] == 0 {
                        labels[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    labels
}

/// Random label map of painted rectangles and blobs; later shapes overwrite
/// earlier ones. Returns the map and a class per surviving instance.
pub fn random_instances(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    max_instances: u32,
) -> (LabelImage, BTreeMap<u32, u8>) {
    let mut grid = Grid::filled(h, w, 0u32);
    let n = rng.random_range(0..=max_instances);
    for id in 1..=n {
        let rh = rng.random_range(2..=8);
        let rw = rng.random_range(2..=8);
        let top = rng.random_range(0..h - rh + 1);
        let left = rng.random_range(0..w - rw + 1);
        let round = rng.random_bool(0.5);
        for r in top..top + rh {
            for c in left..left + rw {
                let dy = (r - top) as f64 - (rh as f64 - 1.0) / 2.0;
                let dx = (c - left) as f64 - (rw as f64 - 1.0) / 2.0;
                let inside = !round || (dy / (rh as f64 / 2.0)).powi(2) + (dx / (rw as f64 / 2.0)).powi(2) <= 1.0;
                if inside {
                    grid.set(r, c, id);
                }
            }
        }
    }
    let labels = LabelImage::from(grid);
    let classes = labels
        .instance_ids()
        .into_iter()
        .map(|id| (id, rng.random_range(1..=6u8)))
        .collect();
    (labels, classes)
}

/// Prediction derived from a ground truth: instances are shifted, eroded,
/// dropped or re-classed, and spurious ones are added.
pub fn perturb_instances(
    rng: &mut ChaCha8Rng,
    gt: &LabelImage,
    gt_classes: &BTreeMap<u32, u8>,
) -> (LabelImage, BTreeMap<u32, u8>) {
    let (h, w) = gt.dims();
    let mut grid = Grid::filled(h, w, 0u32);
    let mut classes = BTreeMap::new();
    let mut next = 1u32;
    for (&id, &class) in gt_classes {
        if rng.random_bool(0.15) {
            continue;
        }
        let dr = rng.random_range(-2i64..=2);
        let dc = rng.random_range(-2i64..=2);
        let new_id = next;
        next += 1;
        for r in 0..h {
            for c in 0..w {
                if gt.get(r, c) != id {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
                    grid.set(nr as usize, nc as usize, new_id);
                }
            }
        }
        let class = if rng.random_bool(0.2) {
            rng.random_range(1..=6u8)
        } else {
            class
        };
        classes.insert(new_id, class);
    }
    for _ in 0..rng.random_range(0..3) {
        let (r0, c0) = (rng.random_range(0..h - 3), rng.random_range(0..w - 3));
        for r in r0..r0 + 3 {
            for c in c0..c0 + 3 {
                grid.set(r, c, next);
            }
        }
        classes.insert(next, rng.random_range(1..=6u8));
        next += 1;
    }
    let labels = LabelImage::from(grid);
    let present: HashSet<u32> = labels.instance_ids().into_iter().collect();
    classes.retain(|id, _| present.contains(id));
    (labels, classes)
}

/// Paint each instance's class into a class image.
pub fn paint_classes(labels: &LabelImage, classes: &BTreeMap<u32, u8>) -> ClassImage {
    ClassImage::from_grid(labels.map(|id| if id == 0 { 0 } else { classes[&id] })).unwrap()
}

/// Synthetic nuclei: disks and ellipses, some in touching pairs, every other
/// pair of instances at least two pixels apart.
pub fn nuclei_image(rng: &mut ChaCha8Rng, size: usize) -> LabelImage {
    loop {
        let mut grid = Grid::filled(size, size, 0u32);
        let mut next = 1u32;
        let shapes = rng.random_range(2..=4);
        let mut ok = true;
        for _ in 0..shapes {
            let touching_pair = rng.random_bool(0.5);
            let ry = rng.random_range(5.0..8.0f64);
            let rx = if rng.random_bool(0.5) {
                ry
            } else {
                rng.random_range(5.0..8.0f64)
            };
            let cy = rng.random_range(ry + 1.0..size as f64 - ry - 1.0);
            let cx = rng.random_range(rx + 1.0..size as f64 - rx - 1.0);
            let mut pieces = vec![(cy, cx, ry, rx)];
            if touching_pair {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let r2 = rng.random_range(5.0..7.5f64);
                let d = ry.max(rx) + r2 - 1.0;
                pieces.push((cy + d * theta.sin(), cx + d * theta.cos(), r2, r2));
            }
            let mut candidate = grid.clone();
            let first_new = next;
            for &(py, px, qy, qx) in &pieces {
                for r in 0..size {
                    for c in 0..size {
                        let dy = (r as f64 - py) / qy;
                        let dx = (c as f64 - px) / qx;
                        if dy * dy + dx * dx <= 1.0 && candidate.get(r, c) == 0 {
                            candidate.set(r, c, next);
                        }
                    }
                }
                next += 1;
            }
            // new shapes may only touch each other, never earlier instances
            let clear = (0..size * size).all(|p| {
                let id = candidate.data()[p];
                if id < first_new {
                    return true;
                }
                let (r, c) = ((p / size) as i64, (p % size) as i64);
                (-2..=2).all(|dr| {
                    (-2..=2).all(|dc| {
                        let (nr, nc) = (r + dr, c + dc);
                        if nr < 0 || nc < 0 || nr >= size as i64 || nc >= size as i64 {
                            return true;
                        }
                        let other = candidate.get(nr as usize, nc as usize);
                        other == 0 || other >= first_new
                    })
                })
            });
            if clear {
                grid = candidate;
            } else {
                next = first_new;
            }
        }
        let labels = LabelImage::from(grid).relabel_sequential().0;
        // every instance must be one connected piece of reasonable size
        for (id, count) in labels.pixel_counts() {
            let mask = labels.map(|v| v == id);
            let cc = flood_fill_components(&mask);
            if cc.iter().copied().max().unwrap_or(0) != 1 || count < 40 {
                ok = false;
            }
        }
        if ok && labels.instance_ids().len() >= 2 {
            return labels;
        }
    }
}

/// True if any two distinct instances are 8-adjacent.
pub fn has_touching_pair(labels: &LabelImage) -> bool {
    let (h, w) = labels.dims();
    for r in 0..h {
        for c in 0..w {
            let a = labels.get(r, c);
            if a == 0 {
                continue;
            }
            for (dr, dc) in [(0i64, 1i64), (1, 0), (1, 1), (1, -1)] {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < h as i64 && nc >= 0 && nc < w as i64 {
                    let b = labels.get(nr as usize, nc as usize);
                    if b != 0 && b != a {
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Pixel sets of each instance.
pub fn pixel_sets(labels: &LabelImage) -> BTreeMap<u32, HashSet<usize>> {
    let mut sets: BTreeMap<u32, HashSet<usize>> = BTreeMap::new();
    for (i, &id) in labels.data().iter().enumerate() {
        if id != 0 {
            sets.entry(id).or_default().insert(i);
        }
    }
    sets
}

pub fn set_iou(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

/// Best IoU of every truth instance against any predicted instance.
pub fn best_ious(truth: &LabelImage, pred: &LabelImage) -> Vec<f64> {
    let t = pixel_sets(truth);
    let p = pixel_sets(pred);
    t.values()
        .map(|ts| p.values().map(|ps| set_iou(ts, ps)).fold(0.0, f64::max))
        .collect()
}

/// Brute-force per-class (tp, fp, fn, iou_sum) by exhaustive pairing.
pub fn brute_force_stats(
    gt: &LabelImage,
    gt_classes: &BTreeMap<u32, u8>,
    pred: &LabelImage,
    pred_classes: &BTreeMap<u32, u8>,
) -> [(u64, u64, u64, f64); 6] {
    let gsets = pixel_sets(gt);
    let psets = pixel_sets(pred);
    let mut out = [(0, 0, 0, 0.0); 6];
    for class in 1..=6u8 {
        let g: Vec<_> = gsets.iter().filter(|(id, _)| gt_classes[id] == class).collect();
        let p: Vec<_> = psets.iter().filter(|(id, _)| pred_classes[id] == class).collect();
        let mut g_matched = vec![false; g.len()];
        let mut p_matched = vec![false; p.len()];
        let mut tp = 0;
        let mut iou_sum = 0.0;
        for (i, (_, gs)) in g.iter().enumerate() {
            for (j, (_, ps)) in p.iter().enumerate() {
                let iou = set_iou(gs, ps);
                if iou > 0.5 {
                    assert!(!g_matched[i] && !p_matched[j], "matching not unique");
                    g_matched[i] = true;
                    p_matched[j] = true;
                    tp += 1;
                    iou_sum += iou;
                }
            }
        }
        let fn_ = g_matched.iter().filter(|m| !**m).count() as u64;
        let fp = p_matched.iter().filter(|m| !**m).count() as u64;
        out[class as usize - 1] = (tp, fp, fn_, iou_sum);
    }
    out
}

pub fn brute_pq(s: (u64, u64, u64, f64)) -> f64 {
    let (tp, fp, fn_, iou) = s;
    let d = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    if d == 0.0 {
        0.0
    } else {
        iou / d
    }
}

/// Direct R² per class from per-image count vectors.
pub fn brute_r2(gt: &[[u64; 6]], pred: &[[u64; 6]]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for k in 0..6 {
        let g: Vec<f64> = gt.iter().map(|c| c[k] as f64).collect();
        let p: Vec<f64> = pred.iter().map(|c| c[k] as f64).collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let tot: f64 = g.iter().map(|x| (x - mean).powi(2)).sum();
        let res: f64 = g.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum();
        out[k] = if tot == 0.0 {
            if res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - res / tot
        };
    }
    out
}

pub fn counts_of(classes: &BTreeMap<u32, u8>) -> [u64; 6] {
    let mut c = [0u64; 6];
    for &k in classes.values() {
        c[k as usize - 1] += 1;
    }
    c
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

/// Mirror-padded copy of a 2D array (`dcb|abcd|cba`).
pub fn pad_reflect(src: &[Vec<f64>], pad: usize) -> Vec<Vec<f64>> {
    let h = src.len() as i64;
    let w = src[0].len() as i64;
    let reflect = |i: i64, n: i64| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    let p = pad as i64;
    (-p..h + p)
        .map(|r| (-p..w + p).map(|c| src[reflect(r, h)][reflect(c, w)]).collect())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn hard_swish(x: f64) -> f64 {
    x * (x + 3.0).clamp(0.0, 6.0) / 6.0
}

/// `W[o][i] x[i] + b[o]` written out element by element.
pub fn dense(a: &Affine, x: &[f64], o: usize) -> f64 {
    let mut acc = a.bias[o];
    for (i, xi) in x.iter().enumerate() {
        acc += a.weight[o * a.inputs + i] * xi;
    }
    acc
}

pub fn random_affine(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Affine {
    let weight = (0..inputs * outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias = (0..outputs).map(|_| rng.random_range(-0.5..0.5)).collect();
    Affine::new(inputs, outputs, weight, bias).unwrap()
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Squeeze-and-excitation output at every `(c, i, j)`, evaluated from scratch.
pub fn se_oracle(x: &FeatureMap, weights: &SeWeights, reduction: usize) -> Vec<f64> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let mut pooled = vec![0.0; c];
    for (k, p) in pooled.iter_mut().enumerate() {
        for i in 0..h {
            for j in 0..w {
                *p += x.get(k, i, j);
            }
        }
        *p /= (h * w) as f64;
    }
    let hidden: Vec<f64> = (0..c / reduction)
        .map(|o| dense(&weights.squeeze, &pooled, o).max(0.0))
        .collect();
    let mut out = Vec::with_capacity(c * h * w);
    for k in 0..c {
        let gate = sigmoid(dense(&weights.excite, &hidden, k));
        for i in 0..h {
            for j in 0..w {
                out.push(x.get(k, i, j) * gate);
            }
        }
    }
    out
}

/// Coordinate-attention output at every `(c, i, j)`, with both poolings
/// recomputed for each element.
pub fn ca_oracle(x: &FeatureMap, weights: &CoordAttentionWeights, reduction: usize) -> Vec<f64> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let encode = |pooled: &[f64], head: &Affine, k: usize| -> f64 {
        let z: Vec<f64> = (0..c / reduction)
            .map(|o| hard_swish(dense(&weights.shared, pooled, o)))
            .collect();
        sigmoid(dense(head, &z, k))
    };
    let mut out = Vec::with_capacity(c * h * w);
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let row: Vec<f64> = (0..c)
                    .map(|q| (0..w).map(|jj| x.get(q, i, jj)).sum::<f64>() / w as f64)
                    .collect();
                let col: Vec<f64> = (0..c)
                    .map(|q| (0..h).map(|ii| x.get(q, ii, j)).sum::<f64>() / h as f64)
                    .collect();
                out.push(x.get(k, i, j) * encode(&row, &weights.to_h, k) * encode(&col, &weights.to_w, k));
            }
        }
    }
    out
}

/// Largest 2x2 minor of the per-channel attention matrix `a_h[i] a_w[j]`.
pub fn max_rank_one_defect(a_h: &[f64], a_w: &[f64], channels: usize) -> f64 {
    let (h, w) = (a_h.len() / channels, a_w.len() / channels);
    let mut worst: f64 = 0.0;
    for k in 0..channels {
        let a = |i: usize, j: usize| a_h[k * h + i] * a_w[k * w + j];
        for i in 0..h {
            for j in 0..w {
                worst = worst.max((a(0, 0) * a(i, j) - a(0, j) * a(i, 0)).abs());
            }
        }
    }
    worst
}
