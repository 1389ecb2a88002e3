//! Instance extraction from head outputs.
//!
//! The foreground probability is thresholded into a mask, Sobel derivatives
//! of the HoVer maps mark the ridges between touching nuclei, ridge-free
//! cores become markers and a marker-controlled watershed grows them back
//! over the whole mask. Each instance then takes the majority class of its
//! pixels.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::raster::{reflect_index, ClassImage, Grid, HoverField, LabelImage, Mask, RgbImage, NUM_CHANNELS};
use crate::targets::connected_components;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessParams {
    pub fg_threshold: f64,
    pub marker_threshold: f64,
    pub sobel_ksize: usize,
    pub min_instance_size: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            fg_threshold: 0.5,
            marker_threshold: 0.4,
            sobel_ksize: 5,
            min_instance_size: 10,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fg_threshold > 0.0 && self.fg_threshold < 1.0) {
            return Err(Error::Range(format!(
                "fg_threshold {} must lie in (0, 1)",
                self.fg_threshold
            )));
        }
        if !(self.marker_threshold > 0.0 && self.marker_threshold < 1.0) {
            return Err(Error::Range(format!(
                "marker_threshold {} must lie in (0, 1)",
                self.marker_threshold
            )));
        }
        check_ksize(self.sobel_ksize)
    }
}

fn check_ksize(ksize: usize) -> Result<()> {
    if ksize < 3 || ksize.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "sobel ksize must be odd and >= 3, got {ksize}"
        )));
    }
    Ok(())
}

/// Direction of differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// d/dcol
    Horizontal,
    /// d/drow
    Vertical,
}

fn binomial_row(order: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 0..order {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

/// Separable Sobel kernels of size `ksize`: (smoothing, derivative).
///
/// Smoothing is the binomial row of order `ksize - 1`; the derivative is
/// `[-1, 0, 1]` convolved with the binomial row of order `ksize - 3`.
pub fn sobel_kernels(ksize: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_ksize(ksize)?;
    let smooth = binomial_row(ksize - 1);
    let base = binomial_row(ksize - 3);
    let mut deriv = vec![0.0; ksize];
    for (i, b) in base.iter().enumerate() {
        deriv[i] -= b;
        deriv[i + 2] += b;
    }
    Ok((smooth, deriv))
}

fn correlate_rows(src: &Grid<f64>, kernel: &[f64]) -> Grid<f64> {
    let half = (kernel.len() / 2) as isize;
    let w = src.width();
    Grid::from_fn(src.height(), w, |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, k)| k * src.get(r, reflect_index(c as isize + t as isize - half, w)))
            .sum()
    })
}

fn correlate_cols(src: &Grid<f64>, kernel: &[f64]) -> Grid<f64> {
    let half = (kernel.len() / 2) as isize;
    let h = src.height();
    Grid::from_fn(h, src.width(), |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(t, k)| k * src.get(reflect_index(r as isize + t as isize - half, h), c))
            .sum()
    })
}

/// Raw Sobel derivative along `axis` with mirrored borders (no border repeat).
pub fn sobel_response(field: &Grid<f64>, ksize: usize, axis: Axis) -> Result<Grid<f64>> {
    let (smooth, deriv) = sobel_kernels(ksize)?;
    if field.is_empty() {
        return Ok(field.clone());
    }
    if let Some(i) = field.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(match axis {
        Axis::Horizontal => correlate_cols(&correlate_rows(field, &deriv), &smooth),
        Axis::Vertical => correlate_rows(&correlate_cols(field, &deriv), &smooth),
    })
}

/// Rescale to `[0, 1]` by the image's min and max; constant input maps to zeros.
pub fn min_max_normalize(field: &Grid<f64>) -> Grid<f64> {
    let lo = field.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return field.map(|_| 0.0);
    }
    let span = hi - lo;
    field.map(|x| (x - lo) / span)
}

/// Sobel derivative along `axis`, min-max normalized per image.
pub fn sobel_gradient(field: &Grid<f64>, ksize: usize, axis: Axis) -> Result<Grid<f64>> {
    Ok(min_max_normalize(&sobel_response(field, ksize, axis)?))
}

/// Boundary evidence from one HoVer channel: `1 - normalized derivative`.
///
/// Inside a nucleus the normalized map increases along its axis, so the
/// derivative is positive there. Between touching nuclei it drops sharply,
/// which puts the most negative derivatives (energy near 1) on the boundary.
/// A constant derivative carries no boundary information and yields zeros.
fn edge_energy(channel: &Grid<f64>, ksize: usize, axis: Axis) -> Result<Grid<f64>> {
    let response = sobel_response(&min_max_normalize(channel), ksize, axis)?;
    let normalized = min_max_normalize(&response);
    let lo = response.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = response.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Ok(normalized);
    }
    Ok(normalized.map(|g| 1.0 - g))
}

/// Edge energy used as the watershed elevation: the larger of the two
/// channel energies inside `mask`, zero outside.
pub fn edge_map(mask: &Mask, hv: &HoverField, ksize: usize) -> Result<Grid<f64>> {
    let eh = edge_energy(hv.h(), ksize, Axis::Horizontal)?;
    let ev = edge_energy(hv.v(), ksize, Axis::Vertical)?;
    Ok(Grid::from_fn(mask.height(), mask.width(), |r, c| {
        if mask.get(r, c) {
            eh.get(r, c).max(ev.get(r, c))
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy)]
struct Front {
    elevation: f64,
    seq: u64,
    index: usize,
}

impl PartialEq for Front {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Front {}

impl PartialOrd for Front {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Front {
    // reversed: BinaryHeap pops the lowest elevation, then the earliest push
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .elevation
            .total_cmp(&self.elevation)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Priority-flood watershed from `markers` over `elevation`, restricted to
/// `mask`, 8-connected. Marker pixels are queued in row-major order; ties in
/// elevation are served first-in first-out. Mask pixels unreachable from any
/// marker stay 0.
pub fn watershed(elevation: &Grid<f64>, markers: &LabelImage, mask: &Mask) -> Result<LabelImage> {
    if !elevation.same_dims(markers) || !elevation.same_dims(mask) {
        return Err(shape_mismatch(
            "watershed",
            format!("{:?}", elevation.dims()),
            format!("{:?} / {:?}", markers.dims(), mask.dims()),
        ));
    }
    let (h, w) = elevation.dims();
    let mut labels: Vec<u32> = markers
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&m, &inside)| if inside { m } else { 0 })
        .collect();

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (index, &label) in labels.iter().enumerate() {
        if label != 0 {
            heap.push(Front {
                elevation: elevation.data()[index],
                seq,
                index,
            });
            seq += 1;
        }
    }

    while let Some(Front { index, .. }) = heap.pop() {
        let label = labels[index];
        let (r, c) = ((index / w) as isize, (index % w) as isize);
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let n = nr as usize * w + nc as usize;
            if labels[n] == 0 && mask.data()[n] {
                labels[n] = label;
                heap.push(Front {
                    elevation: elevation.data()[n],
                    seq,
                    index: n,
                });
                seq += 1;
            }
        }
    }
    LabelImage::new(h, w, labels)
}

/// Drop instances with fewer than `min_size` pixels, then relabel `1..=K`.
pub fn remove_small(m: &LabelImage, min_size: usize) -> LabelImage {
    let counts = m.pixel_counts();
    let kept = m.map(|id| if id != 0 && counts[&id] >= min_size { id } else { 0 });
    LabelImage::from(kept).relabel_sequential().0
}

/// Turn a foreground probability map and a HoVer field into instances.
pub fn extract_instances(fg: &Grid<f64>, hv: &HoverField, params: &PostprocessParams) -> Result<LabelImage> {
    params.validate()?;
    if fg.dims() != hv.dims() {
        return Err(shape_mismatch(
            "extract_instances",
            format!("{:?}", fg.dims()),
            format!("{:?}", hv.dims()),
        ));
    }
    let mask: Mask = fg.map(|p| p >= params.fg_threshold);
    if !mask.data().iter().any(|&b| b) {
        return Ok(LabelImage::zeros(fg.height(), fg.width()));
    }

    let energy = edge_map(&mask, hv, params.sobel_ksize)?;
    let cores: Mask = Grid::from_fn(mask.height(), mask.width(), |r, c| {
        mask.get(r, c) && energy.get(r, c) < params.marker_threshold
    });
    let mut markers = connected_components(&cores).into_grid();

    // a mask component with no core at all becomes its own instance
    let components = connected_components(&mask);
    let mut seeded = vec![false; components.max_id() as usize + 1];
    for (&comp, &marker) in components.data().iter().zip(markers.data()) {
        if marker != 0 {
            seeded[comp as usize] = true;
        }
    }
    let mut next = markers.data().iter().copied().max().unwrap_or(0);
    let mut extra = BTreeMap::new();
    for (i, &comp) in components.data().iter().enumerate() {
        if comp != 0 && !seeded[comp as usize] {
            let id = *extra.entry(comp).or_insert_with(|| {
                next += 1;
                next
            });
            markers.data_mut()[i] = id;
        }
    }

    let grown = watershed(&energy, &LabelImage::from(markers), &mask)?;
    Ok(remove_small(&grown, params.min_instance_size))
}

/// Class vote of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceClass {
    /// Assigned class id in `1..=6`.
    pub class: u8,
    /// Pixel votes per class id `0..=6`; sums to the instance's pixel count.
    pub histogram: [u64; NUM_CHANNELS],
}

/// Class assignment for every instance of a label image.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceClassification {
    pub instances: BTreeMap<u32, InstanceClass>,
}

impl InstanceClassification {
    /// Instance id → class id.
    pub fn classes(&self) -> BTreeMap<u32, u8> {
        self.instances.iter().map(|(&id, ic)| (id, ic.class)).collect()
    }
}

fn argmax_nonzero(histogram: &[u64; NUM_CHANNELS]) -> Option<u8> {
    let mut best: Option<usize> = None;
    for k in 1..NUM_CHANNELS {
        if histogram[k] > 0 && best.is_none_or(|b| histogram[k] > histogram[b]) {
            best = Some(k);
        }
    }
    best.map(|k| k as u8)
}

/// Majority vote of nonzero pixel classes inside each instance. Ties go to
/// the lowest class id. An instance whose pixels all vote background takes
/// the most frequent nonzero class of the whole image, or class 1.
pub fn classify_instances(m: &LabelImage, classes: &ClassImage) -> Result<InstanceClassification> {
    if !m.same_dims(classes) {
        return Err(shape_mismatch(
            "classify_instances",
            format!("{:?}", m.dims()),
            format!("{:?}", classes.dims()),
        ));
    }
    let mut global = [0u64; NUM_CHANNELS];
    let mut per_instance: BTreeMap<u32, [u64; NUM_CHANNELS]> = BTreeMap::new();
    for (&id, &class) in m.data().iter().zip(classes.data()) {
        global[class as usize] += 1;
        if id != 0 {
            per_instance.entry(id).or_insert([0; NUM_CHANNELS])[class as usize] += 1;
        }
    }
    let fallback = argmax_nonzero(&global).unwrap_or(1);
    let instances = per_instance
        .into_iter()
        .map(|(id, histogram)| {
            let class = argmax_nonzero(&histogram).unwrap_or(fallback);
            (id, InstanceClass { class, histogram })
        })
        .collect();
    Ok(InstanceClassification { instances })
}

/// Display colour per class id (index 0 unused).
pub const CLASS_PALETTE: [[u8; 3]; NUM_CHANNELS] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
];

/// Paint instance boundaries onto `base`, coloured by instance class.
/// A boundary pixel is an instance pixel with a 4-neighbour outside the instance.
pub fn render_overlay(base: &RgbImage, m: &LabelImage, classification: &InstanceClassification) -> Result<RgbImage> {
    if !base.same_dims(m) {
        return Err(shape_mismatch(
            "render_overlay",
            format!("{:?}", base.dims()),
            format!("{:?}", m.dims()),
        ));
    }
    let (h, w) = m.dims();
    let mut out = base.clone();
    for r in 0..h {
        for c in 0..w {
            let id = m.get(r, c);
            if id == 0 {
                continue;
            }
            let differs = |rr: isize, cc: isize| {
                rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize || m.get(rr as usize, cc as usize) != id
            };
            let (ri, ci) = (r as isize, c as isize);
            if differs(ri - 1, ci) || differs(ri + 1, ci) || differs(ri, ci - 1) || differs(ri, ci + 1) {
                let class = classification.instances.get(&id).map_or(1, |ic| ic.class);
                out.set(r, c, CLASS_PALETTE[class as usize]);
            }
        }
    }
    Ok(out)
}
