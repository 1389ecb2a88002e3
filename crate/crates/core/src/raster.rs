//! Raster containers shared by every stage of the pipeline.
//!
//! All rasters are row-major with the origin at the top-left corner. Rows run
//! along the vertical axis (the `v` channel of a HoVer field) and columns
//! along the horizontal axis (the `h` channel).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};

/// Number of nucleus classes (excluding background).
pub const NUM_NUCLEUS_CLASSES: usize = 6;
/// Number of class channels including background.
pub const NUM_CHANNELS: usize = NUM_NUCLEUS_CLASSES + 1;

/// Nucleus types in their fixed label order. Background is id 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum NucleusClass {
    Epithelial = 1,
    Lymphocyte = 2,
    Plasma = 3,
    Eosinophil = 4,
    Neutrophil = 5,
    Connective = 6,
}

impl NucleusClass {
    pub const ALL: [NucleusClass; NUM_NUCLEUS_CLASSES] = [
        NucleusClass::Epithelial,
        NucleusClass::Lymphocyte,
        NucleusClass::Plasma,
        NucleusClass::Eosinophil,
        NucleusClass::Neutrophil,
        NucleusClass::Connective,
    ];

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1..=6 => Some(Self::ALL[id as usize - 1]),
            _ => None,
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Zero-based position among the six nucleus classes.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            NucleusClass::Epithelial => "epithelial",
            NucleusClass::Lymphocyte => "lymphocyte",
            NucleusClass::Plasma => "plasma",
            NucleusClass::Eosinophil => "eosinophil",
            NucleusClass::Neutrophil => "neutrophil",
            NucleusClass::Connective => "connective",
        }
    }
}

impl fmt::Display for NucleusClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense row-major 2D grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_mismatch("grid data", height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let w = self.width;
        self.data[row * w + col] = value;
    }

    pub fn same_dims<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Mirror left-right.
    pub fn hflip(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Mirror top-bottom.
    pub fn vflip(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(self.height - 1 - r, c))
    }

    /// Rotate a quarter turn clockwise; output is `width x height`.
    pub fn rot90(&self) -> Self {
        let (h, w) = self.dims();
        Self::from_fn(w, h, |r, c| self.get(h - 1 - c, r))
    }

    /// Rotate `quarter_turns` quarter turns clockwise.
    pub fn rot90_n(&self, quarter_turns: u8) -> Self {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            out = out.rot90();
        }
        out
    }
}

/// Reflect an out-of-range coordinate back into `0..len` without repeating
/// the border sample (`dcb|abcd|cba`).
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len > 0);
    if len == 1 {
        return 0;
    }
    let n = len as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Binary foreground raster.
pub type Mask = Grid<bool>;

/// Per-pixel nucleus instance ids; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelImage(Grid<u32>);

impl Deref for LabelImage {
    type Target = Grid<u32>;

    fn deref(&self) -> &Grid<u32> {
        &self.0
    }
}

impl From<Grid<u32>> for LabelImage {
    fn from(grid: Grid<u32>) -> Self {
        Self(grid)
    }
}

impl LabelImage {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        Grid::new(height, width, data).map(Self)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 0))
    }

    pub fn grid(&self) -> &Grid<u32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<u32> {
        self.0
    }

    /// Distinct nonzero ids in ascending order.
    pub fn instance_ids(&self) -> Vec<u32> {
        self.pixel_counts().into_keys().collect()
    }

    /// Pixel count of every nonzero id.
    pub fn pixel_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for &id in self.data() {
            if id != 0 {
                *counts.entry(id).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn max_id(&self) -> u32 {
        self.data().iter().copied().max().unwrap_or(0)
    }

    pub fn foreground(&self) -> Mask {
        self.map(|id| id != 0)
    }

    /// Renumber nonzero ids to `1..=K` in order of first appearance in a
    /// row-major scan. Returns the relabeled image and the old-to-new map.
    pub fn relabel_sequential(&self) -> (LabelImage, BTreeMap<u32, u32>) {
        let mut mapping = BTreeMap::new();
        let mut next = 1u32;
        let data = self
            .data()
            .iter()
            .map(|&id| {
                if id == 0 {
                    0
                } else {
                    *mapping.entry(id).or_insert_with(|| {
                        let assigned = next;
                        next += 1;
                        assigned
                    })
                }
            })
            .collect();
        let grid = Grid {
            height: self.height(),
            width: self.width(),
            data,
        };
        (LabelImage(grid), mapping)
    }

    pub fn hflip(&self) -> Self {
        Self(self.0.hflip())
    }

    pub fn vflip(&self) -> Self {
        Self(self.0.vflip())
    }

    pub fn rot90_n(&self, quarter_turns: u8) -> Self {
        Self(self.0.rot90_n(quarter_turns))
    }
}

/// Per-pixel class ids in `0..=6`; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassImage(Grid<u8>);

impl Deref for ClassImage {
    type Target = Grid<u8>;

    fn deref(&self) -> &Grid<u8> {
        &self.0
    }
}

impl ClassImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, data)?)
    }

    pub fn from_grid(grid: Grid<u8>) -> Result<Self> {
        if let Some(bad) = grid.data().iter().find(|&&c| c as usize > NUM_NUCLEUS_CLASSES) {
            return Err(Error::Range(format!("class id {bad} exceeds {NUM_NUCLEUS_CLASSES}")));
        }
        Ok(Self(grid))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 0))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn hflip(&self) -> Self {
        Self(self.0.hflip())
    }

    pub fn vflip(&self) -> Self {
        Self(self.0.vflip())
    }

    pub fn rot90_n(&self, quarter_turns: u8) -> Self {
        Self(self.0.rot90_n(quarter_turns))
    }

    /// One-hot encode into `channels` channels.
    pub fn one_hot(&self, channels: usize) -> Result<OneHotStack> {
        let max = self.data().iter().copied().max().unwrap_or(0) as usize;
        if channels <= max {
            return Err(Error::Range(format!(
                "{channels} channels cannot encode class id {max}"
            )));
        }
        let plane = self.len();
        let mut data = vec![0.0; channels * plane];
        for (i, &c) in self.data().iter().enumerate() {
            data[c as usize * plane + i] = 1.0;
        }
        Ok(OneHotStack(ProbabilityStack {
            height: self.height(),
            width: self.width(),
            channels,
            data,
        }))
    }
}

/// Per-pixel class probability vectors, stored channel-major
/// (`data[k * H * W + row * W + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ProbabilityStack {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_mismatch(
                "probability stack",
                channels * height * width,
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range(format!(
                "probability {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`ProbabilityStack::new`] but also requires every pixel's
    /// channels to sum to 1 within 1e-6.
    pub fn new_normalized(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let stack = Self::new(height, width, channels, data)?;
        if !stack.is_normalized() {
            return Err(Error::Range("channel sums differ from 1".into()));
        }
        Ok(stack)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, pixel: usize) -> f64 {
        self.data[channel * self.pixels() + pixel]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let plane = self.pixels();
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn channel_grid(&self, channel: usize) -> Grid<f64> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.channel(channel).to_vec(),
        }
    }

    pub fn is_normalized(&self) -> bool {
        (0..self.pixels()).all(|i| {
            let sum: f64 = (0..self.channels).map(|k| self.get(k, i)).sum();
            (sum - 1.0).abs() <= 1e-6
        })
    }

    pub fn same_shape(&self, other: &ProbabilityStack) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    /// Per pixel, the index of the largest channel; ties go to the lowest index.
    pub fn argmax_channels(&self) -> Result<ClassImage> {
        if self.channels == 0 || self.channels > NUM_CHANNELS {
            return Err(Error::Range(format!(
                "argmax needs 1..={NUM_CHANNELS} channels, got {}",
                self.channels
            )));
        }
        let data = (0..self.pixels())
            .map(|i| {
                let mut best = 0;
                for k in 1..self.channels {
                    if self.get(k, i) > self.get(best, i) {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        ClassImage::new(self.height, self.width, data)
    }
}

/// Ground-truth one-hot stack: exactly one channel is 1 at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotStack(ProbabilityStack);

impl Deref for OneHotStack {
    type Target = ProbabilityStack;

    fn deref(&self) -> &ProbabilityStack {
        &self.0
    }
}

impl OneHotStack {
    pub fn new(stack: ProbabilityStack) -> Result<Self> {
        for i in 0..stack.pixels() {
            let mut ones = 0;
            for k in 0..stack.channels {
                match stack.get(k, i) {
                    1.0 => ones += 1,
                    0.0 => {}
                    v => return Err(Error::Range(format!("one-hot value {v} at pixel {i}"))),
                }
            }
            if ones != 1 {
                return Err(Error::Range(format!("pixel {i} has {ones} hot channels")));
            }
        }
        Ok(Self(stack))
    }

    pub fn as_stack(&self) -> &ProbabilityStack {
        &self.0
    }
}

/// Horizontal and vertical distance maps, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoverField {
    h: Grid<f64>,
    v: Grid<f64>,
}

impl HoverField {
    pub fn new(h: Grid<f64>, v: Grid<f64>) -> Result<Self> {
        if !h.same_dims(&v) {
            return Err(shape_mismatch(
                "hover field",
                format!("{:?}", h.dims()),
                format!("{:?}", v.dims()),
            ));
        }
        for (i, x) in h.data().iter().chain(v.data()).enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if x.abs() > 1.0 {
                return Err(Error::Range(format!("hover value {x} outside [-1, 1]")));
            }
        }
        Ok(Self { h, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            h: Grid::filled(height, width, 0.0),
            v: Grid::filled(height, width, 0.0),
        }
    }

    pub fn h(&self) -> &Grid<f64> {
        &self.h
    }

    pub fn v(&self) -> &Grid<f64> {
        &self.v
    }

    pub fn dims(&self) -> (usize, usize) {
        self.h.dims()
    }

    /// `h` then `v`, concatenated; the layout the MSE loss works on.
    pub fn to_vec(&self) -> Vec<f64> {
        self.h.data().iter().chain(self.v.data()).copied().collect()
    }

    /// True when both channels vanish on every background pixel of `labels`.
    pub fn is_zero_on_background(&self, labels: &LabelImage) -> bool {
        labels
            .data()
            .iter()
            .zip(self.h.data().iter().zip(self.v.data()))
            .all(|(&id, (&h, &v))| id != 0 || (h == 0.0 && v == 0.0))
    }
}

/// 8-bit RGB image.
pub type RgbImage = Grid<[u8; 3]>;
