//! Fixture writers and process helpers for driving the `nhk` binary.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use nhk_core::io::{write_class_png, write_label_png, write_rgb_png, FloatMap};
use nhk_core::raster::{ClassImage, Grid, LabelImage, ProbabilityStack};
use nhk_core::targets::hover_targets;

pub fn nhk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhk"))
        .args(args)
        .env_remove("NHK_THREADS")
        .output()
        .expect("spawn nhk")
}

pub fn nhk_ok(args: &[&str]) -> Output {
    let out = nhk(args);
    assert!(
        out.status.success(),
        "nhk {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn write_labels(dir: &Path, stem: &str, m: &LabelImage) {
    std::fs::create_dir_all(dir).unwrap();
    let mut buf = Vec::new();
    write_label_png(&mut buf, m).unwrap();
    std::fs::write(dir.join(format!("{stem}.png")), buf).unwrap();
}

pub fn write_classes(dir: &Path, stem: &str, c: &ClassImage) {
    std::fs::create_dir_all(dir).unwrap();
    let mut buf = Vec::new();
    write_class_png(&mut buf, c).unwrap();
    std::fs::write(dir.join(format!("{stem}.png")), buf).unwrap();
}

pub fn write_rgb(dir: &Path, stem: &str, img: &Grid<[u8; 3]>) {
    std::fs::create_dir_all(dir).unwrap();
    let mut buf = Vec::new();
    write_rgb_png(&mut buf, img).unwrap();
    std::fs::write(dir.join(format!("{stem}.png")), buf).unwrap();
}

pub fn write_map(dir: &Path, stem: &str, map: &FloatMap) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join(format!("{stem}.f32m")), map.to_bytes()).unwrap();
}

pub fn write_csv(dir: &Path, stem: &str, classes: &BTreeMap<u32, u8>) {
    std::fs::create_dir_all(dir).unwrap();
    let mut text = String::from("instance,class,pixels\n");
    for (id, c) in classes {
        text.push_str(&format!("{id},{c},0\n"));
    }
    std::fs::write(dir.join(format!("{stem}.csv")), text).unwrap();
}

/// Two touching disks, the left one class 1 and the right one class 3.
pub fn two_disks() -> (LabelImage, ClassImage) {
    let labels = LabelImage::from(Grid::from_fn(40, 60, |r, c| {
        let d1 = (r as f64 - 20.0).powi(2) + (c as f64 - 20.0).powi(2);
        let d2 = (r as f64 - 20.0).powi(2) + (c as f64 - 39.0).powi(2);
        if d1 <= 100.0 && c < 30 {
            1
        } else if d2 <= 100.0 {
            2
        } else {
            0
        }
    }));
    let classes = ClassImage::from_grid(labels.map(|id| [0, 1, 3][id as usize])).unwrap();
    (labels, classes)
}

/// Network-style inputs for `postprocess` built from exact labels: a
/// 1-channel foreground map, the HoVer targets and a one-hot class map.
pub fn write_prediction_inputs(root: &Path, stem: &str, labels: &LabelImage, classes: &ClassImage) {
    let (h, w) = labels.dims();
    let fg = labels.data().iter().map(|&id| if id > 0 { 1.0 } else { 0.0 }).collect();
    write_map(&root.join("fg"), stem, &FloatMap::new(1, h, w, fg).unwrap());
    write_map(&root.join("hover"), stem, &FloatMap::from_hover(&hover_targets(labels)));
    let one_hot: &ProbabilityStack = &classes.one_hot(7).unwrap();
    write_map(&root.join("classes"), stem, &FloatMap::from_probabilities(one_hot));
}
