use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nhk_core::augment::{apply_geometric, hsv_jitter, regenerate_hover, AugmentSpec};
use nhk_core::io::{
    read_class_png, read_label_png, read_rgb_png, write_class_png, write_label_png, write_rgb_png, FloatMap,
};
use serde_json::{json, Value};

use crate::common::{ensure_dir, pair, read_input, run_parallel, scan, write_json, write_output, Entry, Manifest};

/// Overlay a partial JSON spec onto the defaults.
fn load_spec(path: Option<&Path>, seed: u64) -> Result<AugmentSpec> {
    let mut base = serde_json::to_value(AugmentSpec::default())?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overrides: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(fields) = overrides else {
            anyhow::bail!("augment spec must be a JSON object");
        };
        for (k, v) in fields {
            if base.get(&k).is_none() {
                anyhow::bail!("unknown augment spec field '{k}'");
            }
            base[k] = v;
        }
    }
    let mut spec: AugmentSpec = serde_json::from_value(base).context("augment spec")?;
    spec.seed = seed;
    spec.validate()?;
    Ok(spec)
}

fn process(stem: &str, index: u64, paths: &[PathBuf], spec: &AugmentSpec, out: &Path) -> Result<Entry> {
    let (img_bytes, img_hash) = read_input(&paths[0])?;
    let (lab_bytes, lab_hash) = read_input(&paths[1])?;
    let (cls_bytes, cls_hash) = read_input(&paths[2])?;
    let image = read_rgb_png(img_bytes.as_slice())?;
    let labels = read_label_png(lab_bytes.as_slice())?;
    let classes = read_class_png(cls_bytes.as_slice())?;

    let geometric = spec.draw_geometric(image.dims(), index)?;
    let hsv = spec.draw_hsv(index)?;
    let aug = apply_geometric(&image, &labels, &classes, &geometric)?;
    let image = hsv_jitter(&aug.image, &hsv);
    let hover = FloatMap::from_hover(&regenerate_hover(&aug.labels));

    let file = format!("{stem}.png");
    let mut bytes = Vec::new();
    write_rgb_png(&mut bytes, &image)?;
    let mut outputs = vec![write_output(&out.join("images").join(&file), &bytes)?];
    bytes.clear();
    write_label_png(&mut bytes, &aug.labels)?;
    outputs.push(write_output(&out.join("labels").join(&file), &bytes)?);
    bytes.clear();
    write_class_png(&mut bytes, &aug.classes)?;
    outputs.push(write_output(&out.join("classes").join(&file), &bytes)?);
    outputs.push(write_output(
        &out.join("hover").join(format!("{stem}.f32m")),
        &hover.to_bytes(),
    )?);
    Ok(Entry {
        stem: stem.to_owned(),
        inputs: vec![img_hash, lab_hash, cls_hash],
        outputs,
        details: Some(json!({ "index": index, "geometric": geometric, "hsv": hsv })),
    })
}

/// `augment`: every stem's draw depends only on the seed and the stem's
/// position among all input stems, never on thread scheduling.
pub fn run(
    images: &Path,
    labels: &Path,
    classes: &Path,
    out: &Path,
    seed: u64,
    spec: Option<&Path>,
    threads: Option<usize>,
) -> Result<bool> {
    let spec = load_spec(spec, seed)?;
    let (img, mut errors) = scan(images, &["png"])?;
    let (lab, e) = scan(labels, &["png"])?;
    errors.extend(e);
    let (cls, e) = scan(classes, &["png"])?;
    errors.extend(e);
    let mut all: Vec<&String> = img.keys().chain(lab.keys()).chain(cls.keys()).collect();
    all.sort();
    all.dedup();
    let index_of = |stem: &str| all.iter().position(|s| s.as_str() == stem).unwrap_or(0) as u64;
    let (paired, unpaired) = pair(&[("image", &img), ("labels", &lab), ("classes", &cls)]);
    errors.extend(unpaired);

    for sub in ["images", "labels", "classes", "hover"] {
        ensure_dir(&out.join(sub))?;
    }
    let results = run_parallel(threads, &paired, |_, (stem, paths)| {
        (stem.clone(), process(stem, index_of(stem), paths, &spec, out))
    })?;

    let mut manifest = Manifest::new("augment", json!({ "spec": spec }));
    manifest.errors = errors;
    manifest.absorb(results);
    write_json(&out.join("augment.json"), &manifest)?;
    manifest.report_errors();
    println!(
        "augment: {} triples, {} failed",
        manifest.entries.len(),
        manifest.errors.len()
    );
    Ok(manifest.errors.is_empty())
}
