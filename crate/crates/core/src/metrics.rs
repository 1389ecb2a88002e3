//! Challenge metrics: multi-class panoptic quality aggregated over a whole
//! dataset (mPQ+) and per-class coefficient of determination of nucleus counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::raster::{LabelImage, NucleusClass, NUM_NUCLEUS_CLASSES};

/// Instance id → class id (`1..=6`).
pub type InstanceClasses = BTreeMap<u32, u8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt_id: u32,
    pub pred_id: u32,
    pub iou: f64,
}

/// Result of matching two label images at IoU > 0.5.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Sorted by ground-truth id.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<u32>,
    pub unmatched_pred: Vec<u32>,
}

/// Pairwise overlap table between two label images.
struct Overlaps {
    gt_area: BTreeMap<u32, u64>,
    pred_area: BTreeMap<u32, u64>,
    intersections: BTreeMap<(u32, u32), u64>,
}

impl Overlaps {
    fn new(gt: &LabelImage, pred: &LabelImage) -> Self {
        let mut gt_area = BTreeMap::new();
        let mut pred_area = BTreeMap::new();
        let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g != 0 {
                *gt_area.entry(g).or_insert(0) += 1;
            }
            if p != 0 {
                *pred_area.entry(p).or_insert(0) += 1;
            }
            if g != 0 && p != 0 {
                *inter.entry((g, p)).or_insert(0) += 1;
            }
        }
        Self {
            gt_area,
            pred_area,
            intersections: inter.into_iter().collect(),
        }
    }

    /// Pairs with IoU > 0.5, optionally restricted by an id filter.
    fn matching(&self, keep_gt: impl Fn(u32) -> bool, keep_pred: impl Fn(u32) -> bool) -> Matching {
        let mut pairs = Vec::new();
        for (&(g, p), &i) in &self.intersections {
            if !keep_gt(g) || !keep_pred(p) {
                continue;
            }
            let union = self.gt_area[&g] + self.pred_area[&p] - i;
            // IoU > 1/2  <=>  2 * intersection > union, decided in integers
            if 2 * i > union {
                pairs.push(MatchedPair {
                    gt_id: g,
                    pred_id: p,
                    iou: i as f64 / union as f64,
                });
            }
        }
        let matched_gt: BTreeSet<u32> = pairs.iter().map(|m| m.gt_id).collect();
        let matched_pred: BTreeSet<u32> = pairs.iter().map(|m| m.pred_id).collect();
        Matching {
            pairs,
            unmatched_gt: self
                .gt_area
                .keys()
                .copied()
                .filter(|&g| keep_gt(g) && !matched_gt.contains(&g))
                .collect(),
            unmatched_pred: self
                .pred_area
                .keys()
                .copied()
                .filter(|&p| keep_pred(p) && !matched_pred.contains(&p))
                .collect(),
        }
    }
}

/// Match instances of `gt` and `pred` whose IoU exceeds 0.5. Such matches
/// are necessarily one-to-one.
pub fn match_instances(gt: &LabelImage, pred: &LabelImage) -> Result<Matching> {
    if !gt.same_dims(pred) {
        return Err(shape_mismatch(
            "match_instances",
            format!("{:?}", gt.dims()),
            format!("{:?}", pred.dims()),
        ));
    }
    Ok(Overlaps::new(gt, pred).matching(|_| true, |_| true))
}

/// Detection and segmentation tallies for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl ClassStats {
    /// `iou_sum / (tp + fp/2 + fn/2)`, or 0 when nothing was counted.
    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.iou_sum / denom
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    pub fn merge(&mut self, other: &ClassStats) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }
}

/// Per-class statistics, indexed by [`NucleusClass::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub classes: [ClassStats; NUM_NUCLEUS_CLASSES],
}

impl MatchStats {
    pub fn class(&self, class: NucleusClass) -> &ClassStats {
        &self.classes[class.index()]
    }

    pub fn merge(&mut self, other: &MatchStats) {
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            a.merge(b);
        }
    }

    pub fn per_class_pq(&self) -> [f64; NUM_NUCLEUS_CLASSES] {
        self.classes.map(|s| s.pq())
    }

    /// Classes with no instance on either side.
    pub fn absent_classes(&self) -> Vec<NucleusClass> {
        NucleusClass::ALL
            .into_iter()
            .filter(|c| self.class(*c).is_empty())
            .collect()
    }
}

/// Panoptic quality of one class.
pub fn pq(stats: &ClassStats) -> f64 {
    stats.pq()
}

/// Unweighted mean of the six per-class PQ values.
pub fn mpq_plus(stats: &MatchStats) -> f64 {
    stats.per_class_pq().iter().sum::<f64>() / NUM_NUCLEUS_CLASSES as f64
}

/// Statistics of a single image pair. Only instances of the same class are
/// matched against each other.
pub fn image_stats(
    gt: &LabelImage,
    gt_classes: &InstanceClasses,
    pred: &LabelImage,
    pred_classes: &InstanceClasses,
) -> Result<MatchStats> {
    if !gt.same_dims(pred) {
        return Err(shape_mismatch(
            "accumulate",
            format!("{:?}", gt.dims()),
            format!("{:?}", pred.dims()),
        ));
    }
    let class_of = |classes: &InstanceClasses, id: u32, side: &str| -> Result<u8> {
        match classes.get(&id) {
            Some(&c) if NucleusClass::from_id(c).is_some() => Ok(c),
            Some(&c) => Err(Error::Range(format!("{side} instance {id} has class {c}"))),
            None => Err(Error::Contract(format!("{side} instance {id} has no class"))),
        }
    };
    let overlaps = Overlaps::new(gt, pred);
    for &id in overlaps.gt_area.keys() {
        class_of(gt_classes, id, "ground-truth")?;
    }
    for &id in overlaps.pred_area.keys() {
        class_of(pred_classes, id, "predicted")?;
    }

    let mut stats = MatchStats::default();
    for class in NucleusClass::ALL {
        let k = class.id();
        let m = overlaps.matching(|g| gt_classes[&g] == k, |p| pred_classes[&p] == k);
        let s = &mut stats.classes[class.index()];
        s.tp = m.pairs.len() as u64;
        s.iou_sum = m.pairs.iter().map(|p| p.iou).sum();
        s.fn_ = m.unmatched_gt.len() as u64;
        s.fp = m.unmatched_pred.len() as u64;
    }
    Ok(stats)
}

/// Add one image pair's statistics to the dataset totals.
pub fn accumulate(
    stats: &mut MatchStats,
    gt: &LabelImage,
    gt_classes: &InstanceClasses,
    pred: &LabelImage,
    pred_classes: &InstanceClasses,
) -> Result<()> {
    let image = image_stats(gt, gt_classes, pred, pred_classes)?;
    stats.merge(&image);
    Ok(())
}

/// Per-image nucleus counts for each class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub rows: Vec<(String, [u64; NUM_NUCLEUS_CLASSES])>,
}

impl CountTable {
    pub fn push(&mut self, image: impl Into<String>, counts: [u64; NUM_NUCLEUS_CLASSES]) {
        self.rows.push((image.into(), counts));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Count distinct instances per class.
pub fn count_instances(classes: &InstanceClasses) -> [u64; NUM_NUCLEUS_CLASSES] {
    let mut counts = [0; NUM_NUCLEUS_CLASSES];
    for &c in classes.values() {
        if let Some(class) = NucleusClass::from_id(c) {
            counts[class.index()] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub per_class: [f64; NUM_NUCLEUS_CLASSES],
    pub mean: f64,
    /// Classes whose ground-truth counts do not vary across images.
    pub zero_variance_classes: Vec<NucleusClass>,
}

/// Coefficient of determination of predicted counts, per class and averaged.
///
/// A class whose ground-truth counts are constant scores 1 when every
/// prediction is exact and 0 otherwise.
pub fn r2_counts(gt: &CountTable, pred: &CountTable) -> Result<R2Report> {
    if gt.len() < 2 {
        return Err(Error::Contract(format!("R² needs at least 2 images, got {}", gt.len())));
    }
    if gt.len() != pred.len() {
        return Err(shape_mismatch("r2_counts images", gt.len(), pred.len()));
    }
    for ((g, _), (p, _)) in gt.rows.iter().zip(&pred.rows) {
        if g != p {
            return Err(Error::Contract(format!("image order differs: {g} vs {p}")));
        }
    }
    let n = gt.len() as f64;
    let mut per_class = [0.0; NUM_NUCLEUS_CLASSES];
    let mut zero_variance_classes = Vec::new();
    for class in NucleusClass::ALL {
        let k = class.index();
        let mean = gt.rows.iter().map(|(_, c)| c[k] as f64).sum::<f64>() / n;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for ((_, g), (_, p)) in gt.rows.iter().zip(&pred.rows) {
            let (g, p) = (g[k] as f64, p[k] as f64);
            ss_res += (p - g) * (p - g);
            ss_tot += (g - mean) * (g - mean);
        }
        per_class[k] = if ss_tot == 0.0 {
            zero_variance_classes.push(class);
            if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - ss_res / ss_tot
        };
    }
    Ok(R2Report {
        mean: per_class.iter().sum::<f64>() / NUM_NUCLEUS_CLASSES as f64,
        per_class,
        zero_variance_classes,
    })
}

/// Per-image diagnostics carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDiagnostics {
    pub image: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub gt_instances: u64,
    pub pred_instances: u64,
}

impl ImageDiagnostics {
    pub fn from_stats(
        image: impl Into<String>,
        stats: &MatchStats,
        gt: &InstanceClasses,
        pred: &InstanceClasses,
    ) -> Self {
        let sum = |f: fn(&ClassStats) -> u64| stats.classes.iter().map(f).sum();
        Self {
            image: image.into(),
            tp: sum(|s| s.tp),
            fp: sum(|s| s.fp),
            fn_: sum(|s| s.fn_),
            gt_instances: gt.len() as u64,
            pred_instances: pred.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: NucleusClass,
    pub pq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
    pub r2: Option<f64>,
}

/// Everything the `evaluate` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub per_class: Vec<ClassScore>,
    pub mpq_plus: f64,
    /// `None` when fewer than two images were evaluated.
    pub mean_r2: Option<f64>,
    pub absent_classes: Vec<NucleusClass>,
    pub zero_variance_classes: Vec<NucleusClass>,
    pub images: Vec<ImageDiagnostics>,
    pub parameters: serde_json::Value,
}

impl MetricsReport {
    pub fn new(
        method: impl Into<String>,
        stats: &MatchStats,
        r2: Option<&R2Report>,
        images: Vec<ImageDiagnostics>,
        parameters: serde_json::Value,
    ) -> Self {
        let per_class = NucleusClass::ALL
            .into_iter()
            .map(|class| {
                let s = stats.class(class);
                ClassScore {
                    class,
                    pq: s.pq(),
                    tp: s.tp,
                    fp: s.fp,
                    fn_: s.fn_,
                    iou_sum: s.iou_sum,
                    r2: r2.map(|r| r.per_class[class.index()]),
                }
            })
            .collect();
        Self {
            method: method.into(),
            per_class,
            mpq_plus: mpq_plus(stats),
            mean_r2: r2.map(|r| r.mean),
            absent_classes: stats.absent_classes(),
            zero_variance_classes: r2.map(|r| r.zero_variance_classes.clone()).unwrap_or_default(),
            images,
            parameters,
        }
    }
}
