use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use nhk_core::blocks::{check_shapes, NetworkConfig};
use nhk_core::losses::gradcheck::{run_suite, SuiteConfig};
use nhk_core::losses::{cross_entropy, dice_loss, weighted_cross_entropy, ClassWeights, LossParams};
use nhk_core::raster::ClassImage;
use nhk_core::rng::CounterRng;

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random cases per loss.
    #[arg(long, default_value_t = 100)]
    pub cases: usize,
    /// Largest image side of a random case.
    #[arg(long, default_value_t = 8)]
    pub max_side: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Dice smoothing term.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
}

/// Exact-value checks that sit beside the gradient suite.
fn identity_checks(params: &LossParams, seed: u64) -> Result<Vec<(String, bool)>> {
    let mut rng = CounterRng::for_item(seed, 100);
    let (h, w) = (6, 5);
    let ids = (0..h * w).map(|_| rng.below(2) as u8).collect();
    let y = ClassImage::new(h, w, ids)?.one_hot(2)?;
    let p = (0..2 * h * w).map(|_| rng.uniform(0.05, 0.95)).collect();
    let p = nhk_core::ProbabilityStack::new(h, w, 2, p)?;
    let ce = cross_entropy(&y, &p, params)?;
    let wce = weighted_cross_entropy(&y, &p, &[1.0, 1.0], params)?;
    let same = ce.value.to_bits() == wce.value.to_bits()
        && ce.grad.iter().zip(&wce.grad).all(|(a, b)| a.to_bits() == b.to_bits());

    // the -1 limit assumes every class is present
    let ids = (0..h * w).map(|i| (i % 7) as u8).collect();
    let y = ClassImage::new(h, w, ids)?.one_hot(7)?;
    let dice = dice_loss(&y, y.as_stack(), params)?.value;
    Ok(vec![
        ("wce(unit weights) == ce, bitwise".into(), same),
        (
            format!("dice(perfect) = {dice:.6} within 1e-3 of -1"),
            (dice + 1.0).abs() < 1e-3,
        ),
    ])
}

/// `loss-check`: prints a pass/fail table; succeeds iff every row passes.
pub fn loss_check(args: &LossCheckArgs) -> Result<bool> {
    let params = LossParams::new(args.epsilon, LossParams::default().clip_floor)?;
    let cfg = SuiteConfig {
        seed: args.seed,
        cases: args.cases,
        step: args.step,
        tolerance: args.tolerance,
        max_side: args.max_side.max(1),
    };
    let rows = run_suite(&cfg, &params, &ClassWeights::default())?;
    println!(
        "{:<26} {:>6} {:>12} {:>10}  result",
        "loss", "cases", "max_rel_err", "tolerance"
    );
    let mut ok = true;
    for row in &rows {
        println!(
            "{:<26} {:>6} {:>12.3e} {:>10.1e}  {}",
            row.loss,
            row.cases,
            row.max_rel_err,
            row.tolerance,
            if row.passed { "PASS" } else { "FAIL" }
        );
        ok &= row.passed;
    }
    for (name, passed) in identity_checks(&params, args.seed)? {
        println!("{name:<62}  {}", if passed { "PASS" } else { "FAIL" });
        ok &= passed;
    }
    Ok(ok)
}

/// `shapes`: stage-by-stage shape trace.
pub fn shapes(config: Option<&Path>) -> Result<bool> {
    let cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => NetworkConfig::default(),
    };
    let trace = check_shapes(&cfg)?;
    for stage in &trace {
        println!("{stage}");
    }
    Ok(true)
}
