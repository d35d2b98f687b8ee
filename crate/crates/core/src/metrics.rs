//! Segmentation and instance-detection metrics.
//!
//! Pixel accuracy, mean class accuracy, and mean IoU come from a confusion
//! matrix that skips ignore-labeled (255) ground-truth pixels; classes
//! absent from the ground truth are excluded from the means. Instance
//! detection scores with interpolated average precision over a set of mask
//! IoU thresholds (COCO convention: 0.50:0.05:0.95, 101-point
//! interpolation).

use std::collections::HashMap;

use crate::map::{ClassRegistry, IGNORE_ID};
use crate::render::LabelMap;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("raster dimensions mismatch: {0}")]
    DimensionMismatch(String),
    #[error("class id {0} not present in the confusion matrix")]
    UnknownClass(u16),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// K×K confusion counts indexed by (ground-truth class, predicted class).
///
/// The ignore ID is always present as a prediction bucket so maps with
/// unlabeled pixels can be scored; ignore-labeled ground truth is skipped.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    ids: Vec<u16>,
    index: HashMap<u16, usize>,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn new(mut class_ids: Vec<u16>) -> Self {
        if !class_ids.contains(&(IGNORE_ID as u16)) {
            class_ids.push(IGNORE_ID as u16);
        }
        class_ids.sort_unstable();
        class_ids.dedup();
        let index = class_ids
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        let k = class_ids.len();
        Self {
            ids: class_ids,
            index,
            counts: vec![0; k * k],
            total: 0,
        }
    }

    pub fn from_registry(registry: &ClassRegistry) -> Self {
        Self::new(registry.ids().collect())
    }

    /// Adds per-pixel counts for one frame pair.
    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<(), MetricsError> {
        if !gt.same_dims(pred) {
            return Err(MetricsError::DimensionMismatch(format!(
                "gt {}x{} vs pred {}x{}",
                gt.width(),
                gt.height(),
                pred.width(),
                pred.height()
            )));
        }
        let k = self.ids.len();
        for (&g, &p) in gt.data().iter().zip(pred.data().iter()) {
            if g == IGNORE_ID as u16 {
                continue;
            }
            let gi = *self
                .index
                .get(&g)
                .ok_or(MetricsError::UnknownClass(g))?;
            let pi = *self
                .index
                .get(&p)
                .ok_or(MetricsError::UnknownClass(p))?;
            self.counts[gi * k + pi] += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Merges another matrix built over the same class set.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.ids != other.ids {
            return Err(MetricsError::InvalidParameter(
                "cannot merge matrices over different class sets".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    pub fn count(&self, gt: u16, pred: u16) -> u64 {
        let k = self.ids.len();
        match (self.index.get(&gt), self.index.get(&pred)) {
            (Some(&gi), Some(&pi)) => self.counts[gi * k + pi],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Per-class segmentation score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub class_id: u16,
    pub accuracy: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSummary {
    pub pixel_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub mean_iou: f64,
    /// Scores for classes present in the ground truth, ascending class id.
    pub per_class: Vec<ClassScore>,
}

/// Summarizes a confusion matrix into (Pix. Acc., mAcc., mIoU).
pub fn summarize(conf: &ConfusionMatrix) -> Result<SegmentationSummary, MetricsError> {
    if conf.total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let k = conf.ids.len();
    let mut trace = 0u64;
    let mut per_class = Vec::new();
    for (gi, &class_id) in conf.ids.iter().enumerate() {
        if class_id == IGNORE_ID as u16 {
            continue;
        }
        let diag = conf.counts[gi * k + gi];
        trace += diag;
        let row: u64 = (0..k).map(|pi| conf.counts[gi * k + pi]).sum();
        if row == 0 {
            continue; // class absent from ground truth
        }
        let col: u64 = (0..k).map(|oi| conf.counts[oi * k + gi]).sum();
        let union = row + col - diag;
        per_class.push(ClassScore {
            class_id,
            accuracy: diag as f64 / row as f64,
            iou: if union > 0 {
                diag as f64 / union as f64
            } else {
                0.0
            },
        });
    }
    if per_class.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    let n = per_class.len() as f64;
    Ok(SegmentationSummary {
        pixel_accuracy: trace as f64 / conf.total as f64,
        mean_class_accuracy: per_class.iter().map(|c| c.accuracy).sum::<f64>() / n,
        mean_iou: per_class.iter().map(|c| c.iou).sum::<f64>() / n,
        per_class,
    })
}

/// A predicted instance: binary mask, class, and score.
#[derive(Debug, Clone)]
pub struct InstancePrediction {
    pub class_id: u16,
    pub score: f64,
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
}

/// A ground-truth instance mask.
#[derive(Debug, Clone)]
pub struct InstanceGroundTruth {
    pub class_id: u16,
    pub width: u32,
    pub height: u32,
    pub mask: Vec<bool>,
}

/// Intersection-over-union of two binary masks of equal dimensions.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "mask length mismatch");
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// The COCO threshold ladder 0.50:0.05:0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApSummary {
    pub mean_ap: f64,
    /// AP per class present in the ground truth, ascending class id.
    pub per_class: Vec<(u16, f64)>,
}

/// Interpolated average precision over mask-IoU thresholds.
///
/// Per class and threshold: predictions sorted by descending score (index
/// breaks ties) greedily match the unmatched ground-truth instance of the
/// same class with the highest IoU at or above the threshold; the
/// precision-recall curve integrates with 101-point interpolation. Class
/// APs average over thresholds, then over classes present in the ground
/// truth.
pub fn instance_ap(
    preds: &[InstancePrediction],
    gts: &[InstanceGroundTruth],
    thresholds: &[f64],
) -> ApSummary {
    let mut classes: Vec<u16> = gts.iter().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut per_class = Vec::new();
    for &class in &classes {
        let gt_set: Vec<&InstanceGroundTruth> =
            gts.iter().filter(|g| g.class_id == class).collect();
        let mut pred_idx: Vec<usize> = (0..preds.len())
            .filter(|&i| preds[i].class_id == class)
            .collect();
        pred_idx.sort_by(|&a, &b| {
            preds[b]
                .score
                .partial_cmp(&preds[a].score)
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let mut ap_sum = 0.0;
        for &tau in thresholds {
            ap_sum += ap_at_threshold(&pred_idx, preds, &gt_set, tau);
        }
        per_class.push((class, ap_sum / thresholds.len().max(1) as f64));
    }
    let mean_ap = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|&(_, ap)| ap).sum::<f64>() / per_class.len() as f64
    };
    ApSummary { mean_ap, per_class }
}

fn ap_at_threshold(
    pred_order: &[usize],
    preds: &[InstancePrediction],
    gts: &[&InstanceGroundTruth],
    tau: f64,
) -> f64 {
    let n_gt = gts.len();
    if n_gt == 0 {
        return 0.0;
    }
    let mut matched = vec![false; n_gt];
    let mut tp_flags = Vec::with_capacity(pred_order.len());
    for &pi in pred_order {
        let pred = &preds[pi];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if matched[gi] || gt.width != pred.width || gt.height != pred.height {
                continue;
            }
            let iou = mask_iou(&pred.mask, &gt.mask);
            if iou >= tau && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                matched[gi] = true;
                tp_flags.push(true);
            }
            None => tp_flags.push(false),
        }
    }
    // precision/recall at each rank
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut recalls = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (rank, &is_tp) in tp_flags.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // 101-point interpolation: max precision at recall >= r
    let mut ap = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let p = precisions
            .iter()
            .zip(recalls.iter())
            .filter(|&(_, &rec)| rec >= r - 1e-12)
            .map(|(&p, _)| p)
            .fold(0.0f64, f64::max);
        ap += p;
    }
    ap / 101.0
}

/// Scene-complexity bucket by movable-object count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneComplexity {
    Easy,
    Moderate,
    Hard,
}

/// Buckets a frame by its movable-object count. The thresholds are
/// mandatory: `easy_max` and `moderate_max` are the largest counts still
/// classed easy / moderate.
pub fn complexity_split(
    movable_count: usize,
    easy_max: usize,
    moderate_max: usize,
) -> Result<SceneComplexity, MetricsError> {
    if easy_max > moderate_max {
        return Err(MetricsError::InvalidParameter(format!(
            "easy_max {easy_max} exceeds moderate_max {moderate_max}"
        )));
    }
    Ok(if movable_count <= easy_max {
        SceneComplexity::Easy
    } else if movable_count <= moderate_max {
        SceneComplexity::Moderate
    } else {
        SceneComplexity::Hard
    })
}

/// Number of pixels carrying a movable class in a label map.
pub fn movable_pixel_count(label: &LabelMap, registry: &ClassRegistry) -> usize {
    label
        .data()
        .iter()
        .filter(|&&v| registry.is_movable(v))
        .count()
}
