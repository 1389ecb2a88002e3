//! File formats.
//!
//! * Label images: 16-bit grayscale PNG, id stored as the pixel value.
//! * Class images: 8-bit grayscale PNG. RGB images: 8-bit RGB PNG.
//! * Float maps (`F32M`): `b"F32M"`, version byte, then channels, height
//!   and width as little-endian `u32`, then `C*H*W` little-endian `f32`
//!   values, channel-major and row-major within a channel.
//! * Count tables: CSV with header
//!   `image,epithelial,lymphocyte,plasma,eosinophil,neutrophil,connective`.
//! * Instance class tables: CSV with header `instance,class,pixels`.
//! * Metric reports: pretty JSON, plus a one-row CSV `method,mPQ_plus,R2`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{CountTable, InstanceClasses, MetricsReport};
use crate::postprocess::InstanceClassification;
use crate::raster::{
    ClassImage, Grid, HoverField, LabelImage, NucleusClass, ProbabilityStack, RgbImage, NUM_NUCLEUS_CLASSES,
};

pub const FLOAT_MAP_MAGIC: &[u8; 4] = b"F32M";
pub const FLOAT_MAP_VERSION: u8 = 1;
pub const FLOAT_MAP_HEADER_LEN: usize = 4 + 1 + 12;

pub const COUNT_CSV_HEADER: [&str; 7] = [
    "image",
    "epithelial",
    "lymphocyte",
    "plasma",
    "eosinophil",
    "neutrophil",
    "connective",
];

pub const REPORT_CSV_HEADER: &str = "method,mPQ_plus,R2";

// ---------------------------------------------------------------------------
// PNG

fn encode_png(
    writer: impl Write,
    dims: (usize, usize),
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let (h, w) = dims;
    let mut encoder = png::Encoder::new(writer, w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}

struct DecodedPng {
    height: usize,
    width: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn decode_png(mut reader: impl Read) -> Result<DecodedPng> {
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw)?;
    let decoder = png::Decoder::new(std::io::Cursor::new(raw));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok(DecodedPng {
        height: info.height as usize,
        width: info.width as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes: buf,
    })
}

pub fn write_label_png(writer: impl Write, labels: &LabelImage) -> Result<()> {
    if let Some(&id) = labels.data().iter().find(|&&id| id > u16::MAX as u32) {
        return Err(Error::IdOverflow {
            id: labels.max_id().max(id),
        });
    }
    let bytes: Vec<u8> = labels.data().iter().flat_map(|&id| (id as u16).to_be_bytes()).collect();
    encode_png(
        writer,
        labels.dims(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

/// Reads 16-bit grayscale (and, for small label sets, 8-bit grayscale) PNGs.
pub fn read_label_png(reader: impl Read) -> Result<LabelImage> {
    let png = decode_png(reader)?;
    let data: Vec<u32> = match (png.color, png.depth) {
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => png
            .bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => png.bytes.iter().map(|&b| b as u32).collect(),
        (color, depth) => {
            return Err(Error::Format(format!(
                "label png must be grayscale 8/16-bit, got {color:?} {depth:?}"
            )))
        }
    };
    LabelImage::new(png.height, png.width, data)
}

pub fn write_class_png(writer: impl Write, classes: &ClassImage) -> Result<()> {
    encode_png(
        writer,
        classes.dims(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        classes.data(),
    )
}

pub fn read_class_png(reader: impl Read) -> Result<ClassImage> {
    let png = decode_png(reader)?;
    if (png.color, png.depth) != (png::ColorType::Grayscale, png::BitDepth::Eight) {
        return Err(Error::Format(format!(
            "class png must be 8-bit grayscale, got {:?} {:?}",
            png.color, png.depth
        )));
    }
    ClassImage::new(png.height, png.width, png.bytes)
}

pub fn write_rgb_png(writer: impl Write, image: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().flatten().copied().collect();
    encode_png(writer, image.dims(), png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

pub fn read_rgb_png(reader: impl Read) -> Result<RgbImage> {
    let png = decode_png(reader)?;
    let data = match (png.color, png.depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => png.bytes.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
        (png::ColorType::Rgba, png::BitDepth::Eight) => png.bytes.chunks_exact(4).map(|p| [p[0], p[1], p[2]]).collect(),
        (png::ColorType::Grayscale, png::BitDepth::Eight) => png.bytes.iter().map(|&g| [g; 3]).collect(),
        (color, depth) => return Err(Error::Format(format!("unsupported rgb png {color:?} {depth:?}"))),
    };
    Grid::new(png.height, png.width, data)
}

// ---------------------------------------------------------------------------
// F32M float maps

/// Raw contents of an `F32M` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(crate::error::shape_mismatch(
                "float map",
                channels * height * width,
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Single channel widened to `f64`.
    pub fn channel_grid(&self, channel: usize) -> Result<Grid<f64>> {
        if channel >= self.channels {
            return Err(Error::Range(format!(
                "channel {channel} of a {}-channel map",
                self.channels
            )));
        }
        Grid::new(
            self.height,
            self.width,
            self.plane(channel).iter().map(|&v| v as f64).collect(),
        )
    }

    /// Values are narrowed to `f32`.
    pub fn from_hover(field: &HoverField) -> Self {
        let (height, width) = field.dims();
        let data = field.to_vec().into_iter().map(|v| v as f32).collect();
        Self {
            channels: 2,
            height,
            width,
            data,
        }
    }

    pub fn to_hover(&self) -> Result<HoverField> {
        if self.channels != 2 {
            return Err(Error::Format(format!(
                "hover map needs 2 channels, file has {}",
                self.channels
            )));
        }
        HoverField::new(self.channel_grid(0)?, self.channel_grid(1)?)
    }

    /// Values are narrowed to `f32`.
    pub fn from_probabilities(stack: &ProbabilityStack) -> Self {
        Self {
            channels: stack.channels(),
            height: stack.height(),
            width: stack.width(),
            data: stack.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_probabilities(&self) -> Result<ProbabilityStack> {
        ProbabilityStack::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn encoded_len(&self) -> usize {
        FLOAT_MAP_HEADER_LEN + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(FLOAT_MAP_MAGIC);
        out.push(FLOAT_MAP_VERSION);
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FLOAT_MAP_HEADER_LEN {
            return Err(Error::Format(format!(
                "truncated header: {} of {FLOAT_MAP_HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[..4] != FLOAT_MAP_MAGIC {
            return Err(Error::Format("magic mismatch: not an F32M file".into()));
        }
        if bytes[4] != FLOAT_MAP_VERSION {
            return Err(Error::Format(format!("unsupported F32M version {}", bytes[4])));
        }
        let dim = |i: usize| {
            let at = 5 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        };
        let (channels, height, width) = (dim(0), dim(1), dim(2));
        let count = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
        let expected = FLOAT_MAP_HEADER_LEN + 4 * count;
        let payload = &bytes[FLOAT_MAP_HEADER_LEN..];
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected: 4 * count,
                found: payload.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(channels, height, width, data)
    }

    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(mut reader: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// CSV tables

pub fn write_count_csv(writer: impl Write, table: &CountTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COUNT_CSV_HEADER)?;
    for (image, counts) in &table.rows {
        let mut record = vec![image.clone()];
        record.extend(counts.iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_count_csv(reader: impl Read) -> Result<CountTable> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(COUNT_CSV_HEADER) {
        return Err(Error::Format(format!("unexpected count csv header: {header:?}")));
    }
    let mut table = CountTable::default();
    for record in r.records() {
        let record = record?;
        let mut counts = [0u64; NUM_NUCLEUS_CLASSES];
        for (k, slot) in counts.iter_mut().enumerate() {
            *slot = record[k + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Format(format!("count '{}': {e}", &record[k + 1])))?;
        }
        table.push(&record[0], counts);
    }
    Ok(table)
}

pub fn write_instance_csv(writer: impl Write, classification: &InstanceClassification) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance", "class", "pixels"])?;
    for (id, ic) in &classification.instances {
        let pixels: u64 = ic.histogram.iter().sum();
        w.write_record([id.to_string(), ic.class.to_string(), pixels.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an instance class table, returning instance id → class id.
pub fn read_instance_csv(reader: impl Read) -> Result<InstanceClasses> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.get(0) != Some("instance") || header.get(1) != Some("class") {
        return Err(Error::Format(format!("unexpected instance csv header: {header:?}")));
    }
    let mut out = BTreeMap::new();
    for record in r.records() {
        let record = record?;
        let id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("instance id '{}': {e}", &record[0])))?;
        let class: u8 = record[1]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("class '{}': {e}", &record[1])))?;
        if NucleusClass::from_id(class).is_none() {
            return Err(Error::Range(format!("instance {id} has class {class}")));
        }
        if out.insert(id, class).is_some() {
            return Err(Error::Format(format!("instance {id} listed twice")));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports

pub fn write_report_json(writer: impl Write, report: &MetricsReport) -> Result<()> {
    let mut writer = writer;
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_report_json(reader: impl Read) -> Result<MetricsReport> {
    Ok(serde_json::from_reader(reader)?)
}

/// One header line and one row; floats with five decimals, `NA` for a missing R².
pub fn report_csv(report: &MetricsReport) -> String {
    let r2 = report.mean_r2.map_or_else(|| "NA".to_string(), |v| format!("{v:.5}"));
    format!("{REPORT_CSV_HEADER}\n{},{:.5},{r2}\n", report.method, report.mpq_plus)
}

pub fn write_report_csv(mut writer: impl Write, report: &MetricsReport) -> Result<()> {
    writer.write_all(report_csv(report).as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Path helpers

pub fn read_label_file(path: &Path) -> Result<LabelImage> {
    read_label_png(std::fs::File::open(path)?)
}

pub fn write_label_file(path: &Path, labels: &LabelImage) -> Result<()> {
    let mut buf = Vec::new();
    write_label_png(&mut buf, labels)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_float_map_file(path: &Path) -> Result<FloatMap> {
    FloatMap::from_bytes(&std::fs::read(path)?)
}

pub fn write_float_map_file(path: &Path, map: &FloatMap) -> Result<()> {
    std::fs::write(path, map.to_bytes())?;
    Ok(())
}
