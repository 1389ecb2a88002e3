//! Deterministic fixtures for the benchmarks.

use std::collections::BTreeMap;

use nhk_core::raster::{ClassImage, Grid, LabelImage, ProbabilityStack};

/// Square tile of disks on a regular lattice. Every other row of disks is
/// shifted so neighbouring nuclei touch.
pub fn disk_tile(size: usize, radius: f64) -> LabelImage {
    let pitch = (2.0 * radius).ceil() as usize + 2;
    let per_row = size / pitch;
    let grid = Grid::from_fn(size, size, |r, c| {
        let (br, bc) = (r / pitch, c / pitch);
        if br >= per_row || bc >= per_row {
            return 0;
        }
        let cy = (br * pitch + pitch / 2) as f64;
        let shift = if br % 2 == 1 { 1.0 } else { 0.0 };
        let cx = (bc * pitch + pitch / 2) as f64 + shift;
        let (dy, dx) = (r as f64 - cy, c as f64 - cx);
        if dy * dy + dx * dx <= radius * radius {
            (br * per_row + bc + 1) as u32
        } else {
            0
        }
    });
    LabelImage::from(grid)
}

/// Classes cycling through 1..=6 by instance id.
pub fn cyclic_classes(m: &LabelImage) -> BTreeMap<u32, u8> {
    m.instance_ids()
        .into_iter()
        .map(|id| (id, (id % 6 + 1) as u8))
        .collect()
}

/// Copy of `m` moved one pixel right, used as an imperfect prediction.
pub fn shifted(m: &LabelImage) -> LabelImage {
    let (h, w) = m.dims();
    LabelImage::from(Grid::from_fn(h, w, |r, c| if c == 0 { 0 } else { m.get(r, c - 1) }))
}

/// Per-pixel class ids in `0..channels` and a smooth probability stack.
pub fn class_fixture(side: usize, channels: usize) -> (ClassImage, ProbabilityStack) {
    let ids = (0..side * side)
        .map(|i| ((i * 7 + i / side) % channels) as u8)
        .collect();
    let mut data = Vec::with_capacity(channels * side * side);
    for k in 0..channels {
        for i in 0..side * side {
            data.push(0.1 + 0.8 * (((i + 3 * k) % 11) as f64 / 10.0));
        }
    }
    (
        ClassImage::new(side, side, ids).expect("valid ids"),
        ProbabilityStack::new(side, side, channels, data).expect("valid probabilities"),
    )
}
