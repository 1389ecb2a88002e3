use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nhk_core::io::{read_instance_csv, read_label_png, report_csv, write_report_json};
use nhk_core::metrics::{
    count_instances, image_stats, r2_counts, CountTable, ImageDiagnostics, MatchStats, MetricsReport,
};
use serde_json::json;

use crate::common::{pair, read_input, run_parallel, scan, FileError, VERSION};

struct ImageResult {
    stats: MatchStats,
    gt_counts: [u64; 6],
    pred_counts: [u64; 6],
    diagnostics: ImageDiagnostics,
    hashes: BTreeMap<&'static str, String>,
}

fn score(stem: &str, paths: &[PathBuf]) -> Result<ImageResult> {
    let mut hashes = BTreeMap::new();
    let mut load = |i: usize, role: &'static str| -> Result<Vec<u8>> {
        let (bytes, hashed) = read_input(&paths[i])?;
        hashes.insert(role, hashed.sha256);
        Ok(bytes)
    };
    let gt = read_label_png(load(0, "gt_labels")?.as_slice()).context("ground-truth labels")?;
    let gt_classes = read_instance_csv(load(1, "gt_classes")?.as_slice()).context("ground-truth classes")?;
    let pred = read_label_png(load(2, "pred_labels")?.as_slice()).context("predicted labels")?;
    let pred_classes = read_instance_csv(load(3, "pred_classes")?.as_slice()).context("predicted classes")?;
    let stats = image_stats(&gt, &gt_classes, &pred, &pred_classes)?;
    Ok(ImageResult {
        diagnostics: ImageDiagnostics::from_stats(stem, &stats, &gt_classes, &pred_classes),
        stats,
        gt_counts: count_instances(&gt_classes),
        pred_counts: count_instances(&pred_classes),
        hashes,
    })
}

/// `evaluate`: dataset-level PQ per class, mPQ+ and count R². Any missing
/// or unreadable pair aborts the run without writing a partial report.
pub fn run(gt: &Path, pred: &Path, out: &Path, method: &str, threads: Option<usize>) -> Result<bool> {
    let (gt_png, mut errors) = scan(gt, &["png"])?;
    let (gt_csv, e) = scan(gt, &["csv"])?;
    errors.extend(e);
    let (pred_png, e) = scan(pred, &["png"])?;
    errors.extend(e);
    let (pred_csv, e) = scan(pred, &["csv"])?;
    errors.extend(e);
    let (paired, unpaired) = pair(&[
        ("ground-truth png", &gt_png),
        ("ground-truth csv", &gt_csv),
        ("predicted png", &pred_png),
        ("predicted csv", &pred_csv),
    ]);
    errors.extend(unpaired);

    let results = run_parallel(threads, &paired, |_, (stem, paths)| score(stem, paths))?;
    let mut stats = MatchStats::default();
    let mut gt_table = CountTable::default();
    let mut pred_table = CountTable::default();
    let mut images = Vec::new();
    let mut inputs = BTreeMap::new();
    for ((stem, _), result) in paired.iter().zip(results) {
        match result {
            Ok(r) => {
                stats.merge(&r.stats);
                gt_table.push(stem.as_str(), r.gt_counts);
                pred_table.push(stem.as_str(), r.pred_counts);
                images.push(r.diagnostics);
                inputs.insert(stem.clone(), r.hashes);
            }
            Err(e) => errors.push(FileError::new(stem, format!("{e:#}"))),
        }
    }
    if !errors.is_empty() {
        errors.sort_by(|a, b| a.stem.cmp(&b.stem));
        let stems: Vec<&str> = errors.iter().map(|e| e.stem.as_str()).collect();
        for e in &errors {
            eprintln!("error: {}: {}", e.stem, e.error);
        }
        eprintln!("evaluate: no report written; failing stems: {}", stems.join(", "));
        return Ok(false);
    }

    let r2 = if gt_table.len() >= 2 {
        Some(r2_counts(&gt_table, &pred_table)?)
    } else {
        None
    };
    let parameters = json!({
        "tool_version": VERSION,
        "match_iou_threshold": 0.5,
        "images": gt_table.len(),
        "inputs": inputs,
    });
    let report = MetricsReport::new(method, &stats, r2.as_ref(), images, parameters);

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut json_bytes = Vec::new();
    write_report_json(&mut json_bytes, &report)?;
    std::fs::write(out, &json_bytes).with_context(|| format!("writing {}", out.display()))?;
    let csv_path = out.with_extension("csv");
    let csv = report_csv(&report);
    std::fs::write(&csv_path, &csv).with_context(|| format!("writing {}", csv_path.display()))?;
    print!("{csv}");
    Ok(true)
}
