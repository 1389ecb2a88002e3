//! Central finite-difference checks for the loss gradients.
//!
//! Used by the `loss-check` command. Inputs are generated from the
//! crate's counter-based RNG, so a given seed always checks the same cases.

use serde::Serialize;

use super::{
    cls_loss, cross_entropy, dice_loss, mse_loss, seg_loss, weighted_cross_entropy, ClassWeights, LossOutput,
    LossParams, MseReduction,
};
use crate::error::Result;
use crate::raster::{ClassImage, OneHotStack, ProbabilityStack, NUM_CHANNELS};
use crate::rng::CounterRng;

/// Denominator floor for the relative error of near-zero gradient entries.
pub const REL_ERR_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Largest element-wise relative error between `analytic` and the central
/// difference of `f` around `x`.
pub fn max_relative_error(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], analytic: &[f64], step: f64) -> Result<f64> {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub loss: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub seed: u64,
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_side: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            step: 1e-4,
            tolerance: 1e-4,
            max_side: 8,
        }
    }
}

fn random_case(rng: &mut CounterRng, channels: usize, max_side: usize) -> (OneHotStack, ProbabilityStack) {
    let h = 1 + rng.below(max_side as u64) as usize;
    let w = 1 + rng.below(max_side as u64) as usize;
    let classes = (0..h * w).map(|_| rng.below(channels as u64) as u8).collect();
    let y = ClassImage::new(h, w, classes)
        .and_then(|c| c.one_hot(channels))
        .expect("classes below channel count");
    // keep probabilities away from the clamp so the loss is smooth at every probe
    let p = (0..channels * h * w).map(|_| rng.uniform(0.1, 0.9)).collect();
    let p = ProbabilityStack::new(h, w, channels, p).expect("values in range");
    (y, p)
}

fn perturbed(p: &ProbabilityStack, data: &[f64]) -> Result<ProbabilityStack> {
    ProbabilityStack::new(p.height(), p.width(), p.channels(), data.to_vec())
}

type StackLoss<'a> = dyn Fn(&OneHotStack, &ProbabilityStack) -> Result<LossOutput> + 'a;

fn check_stack_loss(
    name: &'static str,
    channels: usize,
    loss: &StackLoss<'_>,
    cfg: &SuiteConfig,
    stream: u64,
) -> Result<CheckRow> {
    let mut rng = CounterRng::for_item(cfg.seed, stream);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.cases {
        let (y, p) = random_case(&mut rng, channels, cfg.max_side);
        let analytic = loss(&y, &p)?.grad;
        let err = max_relative_error(
            |x| Ok(loss(&y, &perturbed(&p, x)?)?.value),
            p.data(),
            &analytic,
            cfg.step,
        )?;
        worst = worst.max(err);
    }
    Ok(CheckRow {
        loss: name,
        cases: cfg.cases,
        max_rel_err: worst,
        tolerance: cfg.tolerance,
        passed: worst < cfg.tolerance,
    })
}

fn check_mse(cfg: &SuiteConfig) -> Result<CheckRow> {
    let mut rng = CounterRng::for_item(cfg.seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.cases {
        let n = 2 * (1 + rng.below((cfg.max_side * cfg.max_side) as u64) as usize);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let analytic = mse_loss(&y, &p, MseReduction::Mean)?.grad;
        let err = max_relative_error(
            |x| Ok(mse_loss(&y, x, MseReduction::Mean)?.value),
            &p,
            &analytic,
            cfg.step,
        )?;
        worst = worst.max(err);
    }
    Ok(CheckRow {
        loss: "mse (hover)",
        cases: cfg.cases,
        max_rel_err: worst,
        tolerance: cfg.tolerance,
        passed: worst < cfg.tolerance,
    })
}

/// Gradient checks for every loss, one row each.
pub fn run_suite(cfg: &SuiteConfig, params: &LossParams, weights: &ClassWeights) -> Result<Vec<CheckRow>> {
    let params = *params;
    let weights = *weights;
    let channel_weights = weights.channel_weights();
    let rows = vec![
        check_mse(cfg)?,
        check_stack_loss("cross_entropy", 2, &|y, p| cross_entropy(y, p, &params), cfg, 1)?,
        check_stack_loss(
            "weighted_cross_entropy",
            NUM_CHANNELS,
            &|y, p| weighted_cross_entropy(y, p, &channel_weights, &params),
            cfg,
            2,
        )?,
        check_stack_loss("dice", NUM_CHANNELS, &|y, p| dice_loss(y, p, &params), cfg, 3)?,
        check_stack_loss("seg (ce + dice)", 2, &|y, p| seg_loss(y, p, &params), cfg, 4)?,
        check_stack_loss(
            "cls (wce + dice)",
            NUM_CHANNELS,
            &|y, p| cls_loss(y, p, &weights, &params),
            cfg,
            5,
        )?,
    ];
    Ok(rows)
}
