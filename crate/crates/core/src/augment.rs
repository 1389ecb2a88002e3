//! Seeded augmentations applied jointly to an image and its label rasters.
//!
//! Parameters are drawn up front into a [`GeometricDraw`] / [`HsvDraw`] from
//! a [`CounterRng`] stream keyed by `(seed, item index)`, then applied as
//! pure functions. HoVer targets are never warped; they are regenerated from
//! the transformed label image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClassImage, Grid, HoverField, LabelImage, RgbImage};
use crate::rng::CounterRng;
use crate::targets::hover_targets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub seed: u64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Probability of a random non-zero number of quarter turns.
    pub rot90_prob: f64,
    pub scale_range: (f64, f64),
    pub rotation_deg: (f64, f64),
    /// Output `(height, width)` of the random crop; `None` keeps the full frame.
    pub crop_size: Option<(usize, usize)>,
    pub hue_shift_deg: (f64, f64),
    pub saturation_scale: (f64, f64),
    pub value_scale: (f64, f64),
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            rot90_prob: 0.0,
            scale_range: (0.75, 1.25),
            rotation_deg: (-90.0, 90.0),
            crop_size: None,
            hue_shift_deg: (-8.0, 8.0),
            saturation_scale: (0.8, 1.2),
            value_scale: (0.8, 1.2),
        }
    }
}

impl AugmentSpec {
    /// A spec that leaves every input unchanged.
    pub fn identity(seed: u64) -> Self {
        Self {
            seed,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            rot90_prob: 0.0,
            scale_range: (1.0, 1.0),
            rotation_deg: (0.0, 0.0),
            crop_size: None,
            hue_shift_deg: (0.0, 0.0),
            saturation_scale: (1.0, 1.0),
            value_scale: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("rot90_prob", self.rot90_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Range(format!("{name} {p} outside [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("scale_range", self.scale_range),
            ("rotation_deg", self.rotation_deg),
            ("hue_shift_deg", self.hue_shift_deg),
            ("saturation_scale", self.saturation_scale),
            ("value_scale", self.value_scale),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Range(format!("{name} ({lo}, {hi}) is not a valid range")));
            }
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::Range("scale_range must be positive".into()));
        }
        if self.saturation_scale.0 < 0.0 || self.value_scale.0 < 0.0 {
            return Err(Error::Range("HSV scales must be non-negative".into()));
        }
        if let Some((h, w)) = self.crop_size {
            if h == 0 || w == 0 {
                return Err(Error::Range("crop size must be non-zero".into()));
            }
        }
        Ok(())
    }

    /// Draw geometric parameters for item `index` of an input of `dims`.
    pub fn draw_geometric(&self, dims: (usize, usize), index: u64) -> Result<GeometricDraw> {
        self.validate()?;
        let mut rng = CounterRng::for_item(self.seed, index);
        let hflip = rng.bernoulli(self.hflip_prob);
        let vflip = rng.bernoulli(self.vflip_prob);
        let quarter_turns = if rng.bernoulli(self.rot90_prob) {
            1 + rng.below(3) as u8
        } else {
            0
        };
        let scale = rng.uniform(self.scale_range.0, self.scale_range.1);
        let angle_deg = rng.uniform(self.rotation_deg.0, self.rotation_deg.1);

        let (h, w) = if quarter_turns % 2 == 1 { (dims.1, dims.0) } else { dims };
        let (sh, sw) = scaled_dims((h, w), scale);
        let crop = match self.crop_size {
            None => None,
            Some((ch, cw)) => {
                if ch > sh || cw > sw {
                    return Err(Error::Contract(format!(
                        "crop {ch}x{cw} larger than rescaled image {sh}x{sw}"
                    )));
                }
                let top = rng.below((sh - ch + 1) as u64) as usize;
                let left = rng.below((sw - cw + 1) as u64) as usize;
                Some(CropWindow {
                    top,
                    left,
                    height: ch,
                    width: cw,
                })
            }
        };
        Ok(GeometricDraw {
            hflip,
            vflip,
            quarter_turns,
            scale,
            angle_deg,
            crop,
        })
    }

    pub fn draw_hsv(&self, index: u64) -> Result<HsvDraw> {
        self.validate()?;
        // separate stream from the geometric draw of the same item
        let mut rng = CounterRng::for_item(self.seed ^ 0x4853_5600, index);
        Ok(HsvDraw {
            hue_shift_deg: rng.uniform(self.hue_shift_deg.0, self.hue_shift_deg.1),
            saturation_scale: rng.uniform(self.saturation_scale.0, self.saturation_scale.1),
            value_scale: rng.uniform(self.value_scale.0, self.value_scale.1),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Concrete geometric parameters, applied in order: flips, quarter turns,
/// rescale, rotation about the centre, crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
    pub scale: f64,
    pub angle_deg: f64,
    pub crop: Option<CropWindow>,
}

impl GeometricDraw {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            quarter_turns: 0,
            scale: 1.0,
            angle_deg: 0.0,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvDraw {
    pub hue_shift_deg: f64,
    pub saturation_scale: f64,
    pub value_scale: f64,
}

fn scaled_dims((h, w): (usize, usize), scale: f64) -> (usize, usize) {
    let f = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    (f(h), f(w))
}

/// Sample a grid at fractional source coordinates; `None` marks samples
/// outside the source footprint.
fn resample<T: Copy>(
    dims: (usize, usize),
    src: &Grid<T>,
    fill: T,
    mut locate: impl FnMut(usize, usize) -> (f64, f64),
    mut sample: impl FnMut(&Grid<T>, f64, f64) -> Option<T>,
) -> Grid<T> {
    Grid::from_fn(dims.0, dims.1, |r, c| {
        let (sr, sc) = locate(r, c);
        sample(src, sr, sc).unwrap_or(fill)
    })
}

fn nearest<T: Copy>(src: &Grid<T>, r: f64, c: f64) -> Option<T> {
    let (ri, ci) = (r.round(), c.round());
    if ri < 0.0 || ci < 0.0 || ri >= src.height() as f64 || ci >= src.width() as f64 {
        return None;
    }
    Some(src.get(ri as usize, ci as usize))
}

fn bilinear(src: &RgbImage, r: f64, c: f64) -> Option<[u8; 3]> {
    let (h, w) = (src.height() as f64, src.width() as f64);
    // within half a pixel of the outer samples counts as inside
    if r < -0.5 || c < -0.5 || r > h - 0.5 || c > w - 0.5 {
        return None;
    }
    let r = r.clamp(0.0, h - 1.0);
    let c = c.clamp(0.0, w - 1.0);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(src.height() - 1), (c0 + 1).min(src.width() - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let top = src.get(r0, c0)[k] as f64 * (1.0 - fc) + src.get(r0, c1)[k] as f64 * fc;
        let bottom = src.get(r1, c0)[k] as f64 * (1.0 - fc) + src.get(r1, c1)[k] as f64 * fc;
        *o = (top * (1.0 - fr) + bottom * fr).round().clamp(0.0, 255.0) as u8;
    }
    Some(out)
}

/// Image, instance labels and class labels after the same geometric transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: RgbImage,
    pub labels: LabelImage,
    pub classes: ClassImage,
    pub draw: GeometricDraw,
}

/// Apply one geometric draw to a co-registered triple. Labels use nearest
/// neighbour sampling, the image bilinear; pixels that map outside the
/// source become background (and black in the image).
pub fn apply_geometric(
    image: &RgbImage,
    labels: &LabelImage,
    classes: &ClassImage,
    draw: &GeometricDraw,
) -> Result<Augmented> {
    if !image.same_dims(labels) || !image.same_dims(classes) {
        return Err(crate::error::shape_mismatch(
            "apply_geometric",
            format!("{:?}", image.dims()),
            format!("{:?} / {:?}", labels.dims(), classes.dims()),
        ));
    }
    let mut img = image.clone();
    let mut lab = labels.grid().clone();
    let mut cls = classes.grid().clone();

    if draw.hflip {
        img = img.hflip();
        lab = lab.hflip();
        cls = cls.hflip();
    }
    if draw.vflip {
        img = img.vflip();
        lab = lab.vflip();
        cls = cls.vflip();
    }
    if !draw.quarter_turns.is_multiple_of(4) {
        img = img.rot90_n(draw.quarter_turns);
        lab = lab.rot90_n(draw.quarter_turns);
        cls = cls.rot90_n(draw.quarter_turns);
    }

    if draw.scale != 1.0 {
        let (h, w) = img.dims();
        let dims = scaled_dims((h, w), draw.scale);
        let sy = h as f64 / dims.0 as f64;
        let sx = w as f64 / dims.1 as f64;
        let locate = |r: usize, c: usize| ((r as f64 + 0.5) * sy - 0.5, (c as f64 + 0.5) * sx - 0.5);
        img = resample(dims, &img, [0; 3], locate, bilinear);
        lab = resample(dims, &lab, 0, locate, nearest);
        cls = resample(dims, &cls, 0, locate, nearest);
    }

    if draw.angle_deg != 0.0 {
        let dims = img.dims();
        let (cy, cx) = ((dims.0 as f64 - 1.0) / 2.0, (dims.1 as f64 - 1.0) / 2.0);
        let (sin, cos) = draw.angle_deg.to_radians().sin_cos();
        // inverse map: rotate each output pixel back onto the source
        let locate = |r: usize, c: usize| {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            (cy + cos * dy - sin * dx, cx + sin * dy + cos * dx)
        };
        img = resample(dims, &img, [0; 3], locate, bilinear);
        lab = resample(dims, &lab, 0, locate, nearest);
        cls = resample(dims, &cls, 0, locate, nearest);
    }

    if let Some(crop) = draw.crop {
        let (h, w) = img.dims();
        if crop.top + crop.height > h || crop.left + crop.width > w {
            return Err(Error::Contract(format!(
                "crop {}x{} at ({}, {}) exceeds image {h}x{w}",
                crop.height, crop.width, crop.top, crop.left
            )));
        }
        let cut = |r: usize, c: usize| (r + crop.top, c + crop.left);
        img = Grid::from_fn(crop.height, crop.width, |r, c| {
            let (sr, sc) = cut(r, c);
            img.get(sr, sc)
        });
        lab = Grid::from_fn(crop.height, crop.width, |r, c| {
            let (sr, sc) = cut(r, c);
            lab.get(sr, sc)
        });
        cls = Grid::from_fn(crop.height, crop.width, |r, c| {
            let (sr, sc) = cut(r, c);
            cls.get(sr, sc)
        });
    }

    Ok(Augmented {
        image: img,
        labels: LabelImage::from(lab),
        classes: ClassImage::from_grid(cls)?,
        draw: *draw,
    })
}

/// RGB (0..=255) to HSV with `H` in `[0, 360)`, `S` and `V` in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|x| x as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let chroma = val * sat;
    let x = chroma * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = val - chroma;
    [r, g, b].map(|v| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Shift hue and scale saturation/value of every pixel.
pub fn hsv_jitter(image: &RgbImage, draw: &HsvDraw) -> RgbImage {
    image.map(|px| {
        let (h, s, v) = rgb_to_hsv(px);
        hsv_to_rgb(
            (h + draw.hue_shift_deg).rem_euclid(360.0),
            (s * draw.saturation_scale).clamp(0.0, 1.0),
            (v * draw.value_scale).clamp(0.0, 1.0),
        )
    })
}

/// HoVer targets for an augmented label image.
pub fn regenerate_hover(labels: &LabelImage) -> HoverField {
    hover_targets(labels)
}
