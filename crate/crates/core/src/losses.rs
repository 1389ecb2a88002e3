//! Training losses for the three heads, with hand-derived gradients.
//!
//! * HoVer head: mean squared error.
//! * Segmentation head: cross-entropy + Dice over background/foreground.
//! * Classification head: class-weighted cross-entropy + Dice over all seven channels.
//!
//! Every function returns the scalar loss together with its gradient with
//! respect to the prediction, laid out like the prediction's data. Sums run
//! pixel-major in row-major order with `f64` accumulators, so results are
//! reproducible bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::raster::{OneHotStack, ProbabilityStack, NUM_CHANNELS};

pub mod gradcheck;

/// Per-class weights for the weighted cross-entropy, listed as epithelial,
/// lymphocyte, plasma, eosinophil, neutrophil, connective, background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights([f64; NUM_CHANNELS]);

impl Default for ClassWeights {
    fn default() -> Self {
        Self([2.0, 2.0, 3.0, 4.0, 4.0, 2.0, 1.0])
    }
}

impl ClassWeights {
    pub fn new(weights: [f64; NUM_CHANNELS]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Range(format!(
                "class weights must be finite and non-negative: {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn ones() -> Self {
        Self([1.0; NUM_CHANNELS])
    }

    pub fn as_array(&self) -> &[f64; NUM_CHANNELS] {
        &self.0
    }

    /// Weights reordered to stack channel order (channel 0 = background).
    pub fn channel_weights(&self) -> [f64; NUM_CHANNELS] {
        let mut out = [0.0; NUM_CHANNELS];
        out[0] = self.0[NUM_CHANNELS - 1];
        out[1..].copy_from_slice(&self.0[..NUM_CHANNELS - 1]);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Dice smoothing constant.
    pub epsilon: f64,
    /// Lower clamp applied to probabilities before taking logarithms.
    pub clip_floor: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            clip_floor: 1e-7,
        }
    }
}

impl LossParams {
    pub fn new(epsilon: f64, clip_floor: f64) -> Result<Self> {
        let params = Self { epsilon, clip_floor };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Range(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if !(self.clip_floor > 0.0 && self.clip_floor < 1.0) {
            return Err(Error::Range(format!(
                "clip_floor {} must lie in (0, 1)",
                self.clip_floor
            )));
        }
        Ok(())
    }
}

/// Reduction applied by [`mse_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MseReduction {
    /// Mean over all elements.
    #[default]
    Mean,
    /// Plain squared L2 norm of the residual.
    Sum,
}

/// A loss value and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl std::ops::Add for LossOutput {
    type Output = LossOutput;

    fn add(self, rhs: LossOutput) -> LossOutput {
        LossOutput {
            value: self.value + rhs.value,
            grad: self.grad.iter().zip(&rhs.grad).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Squared error between `target` and `pred` (e.g. [`crate::HoverField::to_vec`]).
pub fn mse_loss(target: &[f64], pred: &[f64], reduction: MseReduction) -> Result<LossOutput> {
    if target.len() != pred.len() {
        return Err(shape_mismatch("mse_loss", target.len(), pred.len()));
    }
    let scale = match reduction {
        MseReduction::Mean if !pred.is_empty() => 1.0 / pred.len() as f64,
        MseReduction::Mean => 0.0,
        MseReduction::Sum => 1.0,
    };
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&y, &p) in target.iter().zip(pred) {
        let d = p - y;
        sum += d * d;
        grad.push(2.0 * d * scale);
    }
    Ok(LossOutput {
        value: sum * scale,
        grad,
    })
}

fn check_pair(context: &'static str, y: &ProbabilityStack, p: &ProbabilityStack) -> Result<()> {
    if !y.same_shape(p) {
        return Err(shape_mismatch(context, y.shape_string(), p.shape_string()));
    }
    Ok(())
}

fn weighted_ce_kernel(y: &ProbabilityStack, p: &ProbabilityStack, weights: &[f64], params: &LossParams) -> LossOutput {
    let n = y.pixels();
    let channels = y.channels();
    let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut sum = 0.0;
    let mut grad = vec![0.0; p.data().len()];
    for i in 0..n {
        for (k, &w) in weights.iter().enumerate().take(channels) {
            let idx = k * n + i;
            let yk = y.data()[idx];
            let raw = p.data()[idx];
            let clamped = raw.clamp(params.clip_floor, 1.0);
            sum += w * yk * clamped.ln();
            if raw > params.clip_floor {
                grad[idx] = -w * yk / clamped * inv_n;
            }
        }
    }
    LossOutput {
        value: -sum * inv_n,
        grad,
    }
}

/// Mean per-pixel cross-entropy `-(1/N) Σ_i Σ_k y log ŷ`.
pub fn cross_entropy(y: &OneHotStack, p: &ProbabilityStack, params: &LossParams) -> Result<LossOutput> {
    check_pair("cross_entropy", y, p)?;
    params.validate()?;
    let ones = vec![1.0; y.channels()];
    Ok(weighted_ce_kernel(y, p, &ones, params))
}

/// Class-weighted cross-entropy; `weights` are in channel order.
pub fn weighted_cross_entropy(
    y: &OneHotStack,
    p: &ProbabilityStack,
    weights: &[f64],
    params: &LossParams,
) -> Result<LossOutput> {
    check_pair("weighted_cross_entropy", y, p)?;
    params.validate()?;
    if weights.len() != y.channels() {
        return Err(shape_mismatch("class weights", y.channels(), weights.len()));
    }
    Ok(weighted_ce_kernel(y, p, weights, params))
}

/// Negative soft Dice averaged over every channel (background included):
/// `-(2/C) Σ_k (Σ_i y ŷ + ε) / (Σ_i y + Σ_i ŷ + ε)`.
pub fn dice_loss(y: &OneHotStack, p: &ProbabilityStack, params: &LossParams) -> Result<LossOutput> {
    check_pair("dice_loss", y, p)?;
    params.validate()?;
    let n = y.pixels();
    let channels = y.channels();
    let eps = params.epsilon;
    let scale = if channels == 0 { 0.0 } else { 2.0 / channels as f64 };

    let mut value = 0.0;
    let mut grad = vec![0.0; p.data().len()];
    for k in 0..channels {
        let yk = y.channel(k);
        let pk = p.channel(k);
        let mut inter = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            inter += yk[i] * pk[i];
            total += yk[i] + pk[i];
        }
        let num = inter + eps;
        let den = total + eps;
        value += num / den;
        let den2 = den * den;
        for i in 0..n {
            grad[k * n + i] = -scale * (yk[i] * den - num) / den2;
        }
    }
    Ok(LossOutput {
        value: -scale * value,
        grad,
    })
}

/// Segmentation-branch loss: cross-entropy + Dice on a two-channel stack.
pub fn seg_loss(y: &OneHotStack, p: &ProbabilityStack, params: &LossParams) -> Result<LossOutput> {
    if y.channels() != 2 {
        return Err(shape_mismatch("seg_loss channels", 2, y.channels()));
    }
    Ok(cross_entropy(y, p, params)? + dice_loss(y, p, params)?)
}

/// Classification-branch loss: weighted cross-entropy + Dice on seven channels.
pub fn cls_loss(
    y: &OneHotStack,
    p: &ProbabilityStack,
    weights: &ClassWeights,
    params: &LossParams,
) -> Result<LossOutput> {
    if y.channels() != NUM_CHANNELS {
        return Err(shape_mismatch("cls_loss channels", NUM_CHANNELS, y.channels()));
    }
    Ok(weighted_cross_entropy(y, p, &weights.channel_weights(), params)? + dice_loss(y, p, params)?)
}
