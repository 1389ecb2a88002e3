use std::path::Path;

use anyhow::Result;
use nhk_core::io::{read_label_png, FloatMap};
use nhk_core::targets::hover_targets;
use serde_json::json;

use crate::common::{ensure_dir, read_input, run_parallel, scan, write_json, write_output, Entry, Manifest};

/// `gen-targets`: one `<stem>.f32m` HoVer map per label PNG.
pub fn run(labels: &Path, out: &Path, threads: Option<usize>) -> Result<bool> {
    let (inputs, dup_errors) = scan(labels, &["png"])?;
    ensure_dir(out)?;
    let items: Vec<_> = inputs.into_iter().collect();
    let results = run_parallel(threads, &items, |_, (stem, path)| {
        let result = (|| -> Result<Entry> {
            let (bytes, input) = read_input(path)?;
            let m = read_label_png(bytes.as_slice())?;
            let map = FloatMap::from_hover(&hover_targets(&m));
            let output = write_output(&out.join(format!("{stem}.f32m")), &map.to_bytes())?;
            Ok(Entry {
                stem: stem.clone(),
                inputs: vec![input],
                outputs: vec![output],
                details: Some(json!({ "height": m.height(), "width": m.width(), "instances": m.instance_ids().len() })),
            })
        })();
        (stem.clone(), result)
    })?;

    let mut manifest = Manifest::new("gen-targets", json!({}));
    manifest.errors = dup_errors;
    manifest.absorb(results);
    write_json(&out.join("manifest.json"), &manifest)?;
    manifest.report_errors();
    println!(
        "gen-targets: {} written, {} failed",
        manifest.entries.len(),
        manifest.errors.len()
    );
    Ok(manifest.errors.is_empty())
}
