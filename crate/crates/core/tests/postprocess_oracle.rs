mod common;

use std::collections::BTreeMap;

use nhk_core::postprocess::{
    classify_instances, edge_map, extract_instances, remove_small, sobel_gradient, sobel_response, watershed, Axis,
    PostprocessParams,
};
use nhk_core::raster::{ClassImage, Grid, HoverField, LabelImage};
use nhk_core::targets::{connected_components, hover_targets};
use proptest::prelude::*;
use rand::Rng;

/// Textbook 5x5 Sobel applied as a direct 2D correlation over a mirrored copy.
fn direct_sobel5(field: &[Vec<f64>], horizontal: bool) -> Vec<Vec<f64>> {
    let smooth = [1.0, 4.0, 6.0, 4.0, 1.0];
    let deriv = [-1.0, -2.0, 0.0, 2.0, 1.0];
    let padded = common::pad_reflect(field, 2);
    let (h, w) = (field.len(), field[0].len());
    (0..h)
        .map(|r| {
            (0..w)
                .map(|c| {
                    let mut acc = 0.0;
                    for a in 0..5 {
                        for b in 0..5 {
                            let k = if horizontal {
                                smooth[a] * deriv[b]
                            } else {
                                deriv[a] * smooth[b]
                            };
                            acc += k * padded[r + a][c + b];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

#[test]
fn sobel_matches_direct_convolution() {
    let mut rng = common::rng(21);
    for case in 0..40 {
        let (h, w) = (3 + case % 9, 3 + (case * 5) % 11);
        let rows: Vec<Vec<f64>> = (0..h)
            .map(|_| (0..w).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let grid = Grid::new(h, w, rows.concat()).unwrap();
        for (axis, horizontal) in [(Axis::Horizontal, true), (Axis::Vertical, false)] {
            let ours = sobel_response(&grid, 5, axis).unwrap();
            let expect = direct_sobel5(&rows, horizontal).concat();
            for (a, b) in ours.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-9, "case {case}: {a} vs {b}");
            }
            // normalized form
            let lo = expect.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = expect.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let norm = sobel_gradient(&grid, 5, axis).unwrap();
            for (a, b) in norm.data().iter().zip(&expect) {
                assert!((a - (b - lo) / (hi - lo)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn sobel_of_constant_is_zero() {
    let g = Grid::filled(6, 7, 0.3);
    assert!(sobel_gradient(&g, 5, Axis::Horizontal)
        .unwrap()
        .data()
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn classify_matches_histogram_oracle() {
    let mut rng = common::rng(22);
    for _ in 0..50 {
        let (m, _) = common::random_instances(&mut rng, 20, 20, 8);
        let classes = ClassImage::from_grid(Grid::from_fn(20, 20, |_, _| rng.random_range(0..=6u8))).unwrap();
        let got = classify_instances(&m, &classes).unwrap();

        let mut global = [0u64; 7];
        for &c in classes.grid().data() {
            global[c as usize] += 1;
        }
        let fallback = (1..=6)
            .max_by_key(|&k| (global[k], std::cmp::Reverse(k)))
            .filter(|&k| global[k] > 0)
            .unwrap_or(1) as u8;
        for (id, pixels) in common::pixel_sets(&m) {
            let mut hist = [0u64; 7];
            for p in pixels {
                hist[classes.grid().data()[p] as usize] += 1;
            }
            let best = (1..=6).max_by_key(|&k| (hist[k], std::cmp::Reverse(k))).unwrap();
            let expect = if hist[best] > 0 { best as u8 } else { fallback };
            let ic = &got.instances[&id];
            assert_eq!(ic.class, expect, "instance {id} histogram {hist:?}");
            assert_eq!(ic.histogram, hist);
        }
    }
}

#[test]
fn size_filter_matches_brute_force() {
    let mut rng = common::rng(23);
    for _ in 0..40 {
        let (m, _) = common::random_instances(&mut rng, 18, 18, 9);
        let min = rng.random_range(0..30);
        let filtered = remove_small(&m, min);
        let kept: Vec<_> = common::pixel_sets(&m)
            .into_iter()
            .filter(|(_, s)| s.len() >= min)
            .map(|(_, s)| s)
            .collect();
        let out_sets: Vec<_> = common::pixel_sets(&filtered).into_values().collect();
        assert_eq!(out_sets.len(), kept.len());
        for s in &kept {
            assert!(out_sets.contains(s));
        }
        assert_eq!(filtered.instance_ids(), (1..=kept.len() as u32).collect::<Vec<_>>());
    }
}

#[test]
fn two_touching_disks_are_separated() {
    let mut grid = Grid::filled(40, 60, 0u32);
    for r in 0..40 {
        for c in 0..60 {
            let d1 = (r as f64 - 20.0).powi(2) + (c as f64 - 20.0).powi(2);
            let d2 = (r as f64 - 20.0).powi(2) + (c as f64 - 39.0).powi(2);
            if d1 <= 100.0 && c < 30 {
                grid.set(r, c, 1);
            } else if d2 <= 100.0 {
                grid.set(r, c, 2);
            }
        }
    }
    let truth = LabelImage::from(grid);
    assert!(common::has_touching_pair(&truth));
    let fg = truth.map(|id| if id > 0 { 1.0 } else { 0.0 });
    let got = extract_instances(&fg, &hover_targets(&truth), &PostprocessParams::default()).unwrap();
    assert_eq!(got.instance_ids().len(), 2);
    assert!(common::best_ious(&truth, &got).iter().all(|&iou| iou > 0.9));
}

#[test]
fn corpus_round_trip() {
    let mut rng = common::rng(24);
    for i in 0..8 {
        let truth = common::nuclei_image(&mut rng, 64);
        let fg = truth.map(|id| if id > 0 { 1.0 } else { 0.0 });
        let got = extract_instances(&fg, &hover_targets(&truth), &PostprocessParams::default()).unwrap();
        assert_eq!(got.instance_ids().len(), truth.instance_ids().len(), "image {i}");
        for iou in common::best_ious(&truth, &got) {
            assert!(iou > 0.9, "image {i}: {iou}");
        }
    }
}

#[test]
fn background_only_gives_no_instances() {
    let fg = Grid::filled(12, 12, 0.1);
    let got = extract_instances(&fg, &HoverField::zeros(12, 12), &PostprocessParams::default()).unwrap();
    assert!(got.instance_ids().is_empty());
}

proptest! {
    #[test]
    fn watershed_fills_reachable_mask(
        (h, w, bits, elev) in (2usize..12, 2usize..12).prop_flat_map(|(h, w)| {
            (
                Just(h),
                Just(w),
                proptest::collection::vec(prop::bool::weighted(0.7), h * w),
                proptest::collection::vec(0.0f64..1.0, h * w),
            )
        })
    ) {
        let mask = Grid::new(h, w, bits).unwrap();
        let elevation = Grid::new(h, w, elev).unwrap();
        // seed every component at its first pixel
        let cc = connected_components(&mask);
        let mut seen = BTreeMap::new();
        let markers = LabelImage::from(Grid::from_fn(h, w, |r, c| {
            let id = cc.get(r, c);
            if id != 0 && !seen.contains_key(&id) {
                seen.insert(id, ());
                id
            } else {
                0
            }
        }));
        let out = watershed(&elevation, &markers, &mask).unwrap();
        for i in 0..h * w {
            prop_assert_eq!(out.data()[i] != 0, mask.data()[i]);
            // one marker per component, so the flood reproduces the components
            prop_assert_eq!(out.data()[i], cc.data()[i]);
        }
    }

    #[test]
    fn edge_map_is_zero_outside_mask(
        (h, w, bits) in (3usize..10, 3usize..10).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), proptest::collection::vec(any::<bool>(), h * w))
        })
    ) {
        let mask = Grid::new(h, w, bits).unwrap();
        let m = connected_components(&mask);
        let e = edge_map(&mask, &hover_targets(&m), 5).unwrap();
        for (v, inside) in e.data().iter().zip(mask.data()) {
            prop_assert!(*v >= 0.0 && *v <= 1.0);
            if !inside {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn extraction_covers_large_components(
        (h, w, bits) in (4usize..16, 4usize..16).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), proptest::collection::vec(prop::bool::weighted(0.6), h * w))
        })
    ) {
        let mask = Grid::new(h, w, bits).unwrap();
        let m = connected_components(&mask);
        let fg = mask.map(|b| if b { 1.0 } else { 0.0 });
        let params = PostprocessParams { min_instance_size: 0, ..PostprocessParams::default() };
        let out = extract_instances(&fg, &hover_targets(&m), &params).unwrap();
        // every masked pixel is assigned; instances never straddle components
        let mut owner = BTreeMap::new();
        for i in 0..h * w {
            prop_assert_eq!(out.data()[i] != 0, mask.data()[i]);
            if out.data()[i] != 0 {
                let prev = owner.insert(out.data()[i], m.data()[i]);
                prop_assert!(prev.is_none() || prev == Some(m.data()[i]));
            }
        }
    }
}
