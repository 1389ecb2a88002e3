use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use nhk_core::io::{read_class_png, write_instance_csv, write_label_png, write_rgb_png, FloatMap};
use nhk_core::postprocess::{classify_instances, extract_instances, render_overlay, PostprocessParams};
use nhk_core::raster::{ClassImage, Grid};
use serde_json::json;

use crate::common::{
    ensure_dir, pair, read_input, run_parallel, scan, write_json, write_output, Entry, Hashed, Manifest,
};

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Foreground maps: 1-channel probability or 2-channel (background, foreground) `.f32m`.
    #[arg(long)]
    pub fg: PathBuf,
    /// 2-channel HoVer `.f32m` maps.
    #[arg(long)]
    pub hover: PathBuf,
    /// 7-channel class probability `.f32m` maps or class-id PNGs.
    #[arg(long)]
    pub classes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub fg_threshold: f64,
    #[arg(long, default_value_t = 0.4)]
    pub marker_threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub sobel_ksize: usize,
    #[arg(long, default_value_t = 10)]
    pub min_size: usize,
    /// Also write boundary overlays to `<out>/overlay/`.
    #[arg(long)]
    pub overlay: bool,
}

fn foreground(map: &FloatMap) -> Result<Grid<f64>> {
    match map.channels {
        1 => Ok(map.channel_grid(0)?),
        2 => Ok(map.channel_grid(1)?),
        c => bail!("foreground map has {c} channels, expected 1 or 2"),
    }
}

fn class_map(path: &Path, bytes: &[u8]) -> Result<ClassImage> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        return Ok(read_class_png(bytes)?);
    }
    let map = FloatMap::from_bytes(bytes)?;
    if map.channels != 7 {
        bail!("class map has {} channels, expected 7", map.channels);
    }
    Ok(map.to_probabilities()?.argmax_channels()?)
}

fn process(stem: &str, paths: &[PathBuf], params: &PostprocessParams, args: &PostprocessArgs) -> Result<Entry> {
    let (fg_bytes, fg_hash) = read_input(&paths[0])?;
    let (hv_bytes, hv_hash) = read_input(&paths[1])?;
    let (cls_bytes, cls_hash) = read_input(&paths[2])?;
    let fg = foreground(&FloatMap::from_bytes(&fg_bytes)?)?;
    let hv = FloatMap::from_bytes(&hv_bytes)?.to_hover()?;
    let classes = class_map(&paths[2], &cls_bytes)?;

    let instances = extract_instances(&fg, &hv, params)?;
    let classification = classify_instances(&instances, &classes)?;

    let mut outputs: Vec<Hashed> = Vec::new();
    let mut png = Vec::new();
    write_label_png(&mut png, &instances)?;
    outputs.push(write_output(&args.out.join(format!("{stem}.png")), &png)?);
    let mut csv = Vec::new();
    write_instance_csv(&mut csv, &classification)?;
    outputs.push(write_output(&args.out.join(format!("{stem}.csv")), &csv)?);
    if args.overlay {
        let base = fg.map(|p| {
            let v = (p.clamp(0.0, 1.0) * 255.0).round() as u8;
            [v, v, v]
        });
        let overlay = render_overlay(&base, &instances, &classification)?;
        let mut bytes = Vec::new();
        write_rgb_png(&mut bytes, &overlay)?;
        outputs.push(write_output(
            &args.out.join("overlay").join(format!("{stem}.png")),
            &bytes,
        )?);
    }
    Ok(Entry {
        stem: stem.to_owned(),
        inputs: vec![fg_hash, hv_hash, cls_hash],
        outputs,
        details: Some(json!({ "instances": classification.instances.len() })),
    })
}

/// `postprocess`: instance PNG and class CSV per aligned stem.
pub fn run(args: &PostprocessArgs, threads: Option<usize>) -> Result<bool> {
    let params = PostprocessParams {
        fg_threshold: args.fg_threshold,
        marker_threshold: args.marker_threshold,
        sobel_ksize: args.sobel_ksize,
        min_instance_size: args.min_size,
    };
    params.validate()?;
    let (fg, mut errors) = scan(&args.fg, &["f32m"])?;
    let (hover, e2) = scan(&args.hover, &["f32m"])?;
    let (classes, e3) = scan(&args.classes, &["f32m", "png"])?;
    errors.extend(e2);
    errors.extend(e3);
    let (paired, unpaired) = pair(&[("fg", &fg), ("hover", &hover), ("classes", &classes)]);
    errors.extend(unpaired);

    ensure_dir(&args.out)?;
    if args.overlay {
        ensure_dir(&args.out.join("overlay"))?;
    }
    let results = run_parallel(threads, &paired, |_, (stem, paths)| {
        (stem.clone(), process(stem, paths, &params, args))
    })?;

    let mut manifest = Manifest::new("postprocess", json!({ "postprocess": params, "overlay": args.overlay }));
    manifest.errors = errors;
    manifest.absorb(results);
    write_json(&args.out.join("manifest.json"), &manifest)?;
    manifest.report_errors();
    println!(
        "postprocess: {} images, {} failed",
        manifest.entries.len(),
        manifest.errors.len()
    );
    Ok(manifest.errors.is_empty())
}
