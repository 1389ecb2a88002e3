//! Forward-pass reference math for the network's building blocks:
//! squeeze-and-excitation gating, coordinate attention and the prediction
//! heads, plus a shape tracer for the three-branch encoder-decoder.

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::raster::reflect_index;

/// Channel-major activation tensor (`data[c * H * W + i * W + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(shape_mismatch("feature map", channels * height * width, data.len()));
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

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Dense layer `y = W x + b` with `W` stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs {
            return Err(shape_mismatch("affine weight", inputs * outputs, weight.len()));
        }
        if bias.len() != outputs {
            return Err(shape_mismatch("affine bias", outputs, bias.len()));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    fn expect(&self, inputs: usize, outputs: usize, name: &'static str) -> Result<()> {
        if self.inputs != inputs || self.outputs != outputs {
            return Err(shape_mismatch(
                name,
                format!("{inputs} -> {outputs}"),
                format!("{} -> {}", self.inputs, self.outputs),
            ));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `x * relu6(x + 3) / 6`.
#[inline]
pub fn hard_swish(x: f64) -> f64 {
    x * (x + 3.0).clamp(0.0, 6.0) / 6.0
}

fn check_reduction(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || !channels.is_multiple_of(reduction) || channels / reduction == 0 {
        return Err(Error::Contract(format!(
            "reduction ratio {reduction} does not divide {channels} channels"
        )));
    }
    Ok(channels / reduction)
}

/// Squeeze-and-excitation weights: `C -> C/r` (ReLU), then `C/r -> C` (sigmoid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeWeights {
    pub squeeze: Affine,
    pub excite: Affine,
}

/// Channel gates `s = sigmoid(W2 relu(W1 avgpool(x)))`.
pub fn se_gates(x: &FeatureMap, weights: &SeWeights, reduction: usize) -> Result<Vec<f64>> {
    let mid = check_reduction(x.channels, reduction)?;
    weights.squeeze.expect(x.channels, mid, "se squeeze")?;
    weights.excite.expect(mid, x.channels, "se excite")?;
    let n = (x.height * x.width) as f64;
    let pooled: Vec<f64> = (0..x.channels).map(|c| x.plane(c).iter().sum::<f64>() / n).collect();
    let hidden: Vec<f64> = weights.squeeze.apply(&pooled).into_iter().map(relu).collect();
    Ok(weights.excite.apply(&hidden).into_iter().map(sigmoid).collect())
}

/// Rescale every channel of `x` by its squeeze-and-excitation gate.
pub fn se_gate(x: &FeatureMap, weights: &SeWeights, reduction: usize) -> Result<FeatureMap> {
    let gates = se_gates(x, weights, reduction)?;
    let plane = x.height * x.width;
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(idx, v)| v * gates[idx / plane])
        .collect();
    Ok(FeatureMap { data, ..x.clone() })
}

/// Coordinate-attention weights. `shared` maps the pooled `C` vector at each
/// row or column position to `C/r` (followed by hard-swish); `to_h` and `to_w`
/// map back to `C` (followed by sigmoid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordAttentionWeights {
    pub shared: Affine,
    pub to_h: Affine,
    pub to_w: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordAttention {
    pub output: FeatureMap,
    /// `C x H`, row-major by channel.
    pub a_h: Vec<f64>,
    /// `C x W`, row-major by channel.
    pub a_w: Vec<f64>,
}

/// Direction-aware attention: `out(c,i,j) = x(c,i,j) * a_h(c,i) * a_w(c,j)`.
pub fn coordinate_attention(
    x: &FeatureMap,
    weights: &CoordAttentionWeights,
    reduction: usize,
) -> Result<CoordAttention> {
    let (ch, h, w) = (x.channels, x.height, x.width);
    let mid = check_reduction(ch, reduction)?;
    weights.shared.expect(ch, mid, "ca shared")?;
    weights.to_h.expect(mid, ch, "ca to_h")?;
    weights.to_w.expect(mid, ch, "ca to_w")?;

    // pool along W for every row, along H for every column
    let row_pool = |i: usize| -> Vec<f64> {
        (0..ch)
            .map(|c| (0..w).map(|j| x.get(c, i, j)).sum::<f64>() / w as f64)
            .collect()
    };
    let col_pool = |j: usize| -> Vec<f64> {
        (0..ch)
            .map(|c| (0..h).map(|i| x.get(c, i, j)).sum::<f64>() / h as f64)
            .collect()
    };
    let encode = |pooled: Vec<f64>, head: &Affine| -> Vec<f64> {
        let z: Vec<f64> = weights.shared.apply(&pooled).into_iter().map(hard_swish).collect();
        head.apply(&z).into_iter().map(sigmoid).collect()
    };

    let mut a_h = vec![0.0; ch * h];
    for i in 0..h {
        for (c, a) in encode(row_pool(i), &weights.to_h).into_iter().enumerate() {
            a_h[c * h + i] = a;
        }
    }
    let mut a_w = vec![0.0; ch * w];
    for j in 0..w {
        for (c, a) in encode(col_pool(j), &weights.to_w).into_iter().enumerate() {
            a_w[c * w + j] = a;
        }
    }
    let output = FeatureMap::from_fn(ch, h, w, |c, i, j| x.get(c, i, j) * a_h[c * h + i] * a_w[c * w + j]);
    Ok(CoordAttention { output, a_h, a_w })
}

/// 3x3 convolution weights, `out x in x 3 x 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != outputs * inputs * 9 {
            return Err(shape_mismatch("conv weight", outputs * inputs * 9, weight.len()));
        }
        if bias.len() != outputs {
            return Err(shape_mismatch("conv bias", outputs, bias.len()));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    /// Convolution that copies each input channel to the same output channel.
    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels * 9];
        for c in 0..channels {
            weight[(c * channels + c) * 9 + 4] = 1.0;
        }
        Self {
            inputs: channels,
            outputs: channels,
            weight,
            bias: vec![0.0; channels],
        }
    }

    #[inline]
    fn tap(&self, o: usize, i: usize, di: usize, dj: usize) -> f64 {
        self.weight[((o * self.inputs + i) * 3 + di) * 3 + dj]
    }
}

/// Inference-form batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn neutral(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 0.0,
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("bn gamma", &self.gamma),
            ("bn beta", &self.beta),
            ("bn mean", &self.mean),
            ("bn var", &self.var),
        ] {
            if v.len() != channels {
                return Err(shape_mismatch(name, channels, v.len()));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, c: usize, x: f64) -> f64 {
        (x - self.mean[c]) / (self.var[c] + self.eps).sqrt() * self.gamma[c] + self.beta[c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Foreground/background, sigmoid output.
    Segmentation,
    /// Horizontal/vertical maps, unbounded output.
    Hover,
    /// Seven-way softmax.
    Class,
}

impl HeadKind {
    pub fn channels(self) -> usize {
        match self {
            HeadKind::Segmentation | HeadKind::Hover => 2,
            HeadKind::Class => 7,
        }
    }
}

/// Conv 3x3 → BN → ReLU → 1x1 projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub conv: Conv3x3,
    pub bn: BatchNorm,
    pub projection: Affine,
}

/// Run a prediction head. Spatial size is preserved (mirrored padding).
pub fn head_forward(x: &FeatureMap, weights: &HeadWeights, kind: HeadKind) -> Result<FeatureMap> {
    let (cin, h, w) = (x.channels, x.height, x.width);
    let conv = &weights.conv;
    if conv.inputs != cin {
        return Err(shape_mismatch("head conv inputs", cin, conv.inputs));
    }
    let mid = conv.outputs;
    weights.bn.check(mid)?;
    weights.projection.expect(mid, kind.channels(), "head projection")?;
    if h == 0 || w == 0 {
        return Err(Error::Contract("empty feature map".into()));
    }

    let mut hidden = vec![0.0; mid * h * w];
    for o in 0..mid {
        for i in 0..h {
            for j in 0..w {
                let mut acc = conv.bias[o];
                for ci in 0..cin {
                    for di in 0..3 {
                        let si = reflect_index(i as isize + di as isize - 1, h);
                        for dj in 0..3 {
                            let sj = reflect_index(j as isize + dj as isize - 1, w);
                            acc += conv.tap(o, ci, di, dj) * x.get(ci, si, sj);
                        }
                    }
                }
                hidden[(o * h + i) * w + j] = relu(weights.bn.apply(o, acc));
            }
        }
    }

    let cout = kind.channels();
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    let mut features = vec![0.0; mid];
    for p in 0..plane {
        for (o, f) in features.iter_mut().enumerate() {
            *f = hidden[o * plane + p];
        }
        let mut logits = weights.projection.apply(&features);
        match kind {
            HeadKind::Hover => {}
            HeadKind::Segmentation => logits.iter_mut().for_each(|v| *v = sigmoid(*v)),
            HeadKind::Class => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in logits.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                logits.iter_mut().for_each(|v| *v /= total);
            }
        }
        for (k, v) in logits.into_iter().enumerate() {
            out[k * plane + p] = v;
        }
    }
    FeatureMap::new(cout, h, w, out)
}

/// Encoder-decoder layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Channel width of every encoder stage, shallowest first.
    pub stage_channels: Vec<usize>,
    pub se_reduction: usize,
    pub ca_reduction: usize,
    /// Segmentation, HoVer and class head widths.
    pub head_channels: [usize; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_height: 256,
            input_width: 256,
            input_channels: 3,
            stage_channels: vec![64, 128, 256, 512, 1024],
            se_reduction: 16,
            ca_reduction: 16,
            head_channels: [2, 2, 7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    Encoder,
    Decoder,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageShape {
    pub name: String,
    pub kind: StageKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channels concatenated from the encoder skip (decoder stages only).
    pub skip_channels: Option<usize>,
}

impl std::fmt::Display for StageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:<12} {}x{}x{}", self.name, self.height, self.width, self.channels)?;
        if let Some(skip) = self.skip_channels {
            write!(f, "  (skip +{skip})")?;
        }
        Ok(())
    }
}

fn stage_error(stage: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Stage {
        stage: stage.into(),
        detail: detail.into(),
    }
}

/// Trace every stage's output shape through the encoder (SE-Res blocks,
/// halving resolution per stage), the decoder (upsampling, skip
/// concatenation, coordinate attention) and the three heads.
pub fn check_shapes(cfg: &NetworkConfig) -> Result<Vec<StageShape>> {
    let stages = cfg.stage_channels.len();
    if stages == 0 {
        return Err(stage_error("config", "no encoder stages"));
    }
    if cfg.head_channels != [2, 2, 7] {
        return Err(stage_error(
            "heads",
            format!("head channels must be [2, 2, 7], got {:?}", cfg.head_channels),
        ));
    }
    if cfg.input_height == 0 || cfg.input_width == 0 {
        return Err(stage_error("input", "empty input"));
    }

    let mut trace = Vec::new();
    let (mut h, mut w) = (cfg.input_height, cfg.input_width);
    for (s, &ch) in cfg.stage_channels.iter().enumerate() {
        let name = format!("encoder{s}");
        if s > 0 {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(stage_error(
                    name,
                    format!("cannot halve {h}x{w}; input must be divisible by 2^{}", stages - 1),
                ));
            }
            h /= 2;
            w /= 2;
        }
        check_reduction(ch, cfg.se_reduction).map_err(|e| stage_error(name.clone(), e.to_string()))?;
        trace.push(StageShape {
            name,
            kind: StageKind::Encoder,
            channels: ch,
            height: h,
            width: w,
            skip_channels: None,
        });
    }

    let mut channels = cfg.stage_channels[stages - 1];
    for s in (0..stages - 1).rev() {
        let name = format!("decoder{s}");
        let skip = &trace[s];
        let (uh, uw) = (h * 2, w * 2);
        if (uh, uw) != (skip.height, skip.width) {
            return Err(stage_error(
                name,
                format!("upsampled {uh}x{uw} does not match skip {}x{}", skip.height, skip.width),
            ));
        }
        let out_channels = cfg.stage_channels[s];
        check_reduction(out_channels, cfg.ca_reduction).map_err(|e| stage_error(name.clone(), e.to_string()))?;
        let skip_channels = skip.channels;
        h = uh;
        w = uw;
        trace.push(StageShape {
            name,
            kind: StageKind::Decoder,
            channels: out_channels,
            height: h,
            width: w,
            skip_channels: Some(skip_channels),
        });
        channels = out_channels;
    }
    debug_assert!(channels > 0);

    if (h, w) != (cfg.input_height, cfg.input_width) {
        return Err(stage_error(
            "heads",
            format!(
                "decoder ends at {h}x{w}, input is {}x{}",
                cfg.input_height, cfg.input_width
            ),
        ));
    }
    for (name, c) in ["seg_head", "hover_head", "class_head"].iter().zip(cfg.head_channels) {
        trace.push(StageShape {
            name: name.to_string(),
            kind: StageKind::Head,
            channels: c,
            height: h,
            width: w,
            skip_channels: None,
        });
    }
    Ok(trace)
}
