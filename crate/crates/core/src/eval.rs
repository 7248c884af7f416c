//! Overlap metrics, greedy detection matching, average precision and mAP.
//!
//! Matching is greedy in descending score: each detection claims the
//! still-unmatched ground truth it overlaps most, provided the overlap reaches
//! the IoU threshold. AP is the all-point interpolated area under the
//! precision-recall curve, i.e. the precision envelope (max precision at any
//! recall at least as large) summed over the recall step of every true
//! positive. mAP is the unweighted mean of AP over classes that have ground
//! truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::annotate::{AnnotateError, AnnotationDoc};
use crate::tensor_io::BinaryMask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimsMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("cannot compare a mask with a box")]
    RegionMismatch,
    #[error("average precision needs at least one ground truth")]
    NoGroundTruth,
    #[error("no class has ground truth; mAP is undefined")]
    NoClasses,
    #[error("IoU threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("prediction {0} has no score")]
    MissingScore(u64),
    #[error("annotation {0} has no segmentation (required in segm mode)")]
    MissingSegmentation(u64),
    #[error("prediction {id} refers to image {image_id}, which the ground truth does not contain")]
    UnknownImage { id: u64, image_id: u64 },
    #[error("detections and ground truth must share one image and class")]
    MixedGroups,
    #[error(transparent)]
    Annotation(#[from] AnnotateError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// `[x, y, w, h]`
pub type BoxXywh = [f64; 4];

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(EvalError::DimsMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn bbox_iou(a: &BoxXywh, b: &BoxXywh) -> f64 {
    let iw = ((a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0])).max(0.0);
    let ih = ((a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Geometry compared by IoU.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Mask(BinaryMask),
    Box(BoxXywh),
}

impl Region {
    pub fn iou(&self, other: &Region) -> Result<f64> {
        match (self, other) {
            (Region::Mask(a), Region::Mask(b)) => mask_iou(a, b),
            (Region::Box(a), Region::Box(b)) => Ok(bbox_iou(a, b)),
            _ => Err(EvalError::RegionMismatch),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub category_id: u64,
    pub score: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u64,
    pub region: Region,
}

/// Ranked detections of one class with their match flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    /// `(score, is_tp)`, score descending; equal scores keep input order.
    pub ranked: Vec<(f64, bool)>,
    pub num_gt: usize,
}

impl MatchOutcome {
    /// Builds an outcome from unsorted `(score, is_tp)` pairs, ranking them by
    /// score with input order breaking ties.
    pub fn from_unsorted(mut pairs: Vec<(f64, bool)>, num_gt: usize) -> Self {
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        Self {
            ranked: pairs,
            num_gt,
        }
    }

    pub fn true_positives(&self) -> usize {
        self.ranked.iter().filter(|(_, tp)| *tp).count()
    }
}

// Per-detection TP flags in input order.
fn greedy_flags(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Result<Vec<bool>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = dets[i].region.iou(&gt.region)?;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou >= iou_threshold {
                taken[g] = true;
                flags[i] = true;
            }
        }
    }
    Ok(flags)
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(EvalError::InvalidThreshold(t));
    }
    Ok(())
}

/// Greedy matching of one image's detections of one class against its
/// ground truth. Equal IoUs go to the earlier ground truth.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
) -> Result<MatchOutcome> {
    check_threshold(iou_threshold)?;
    let key = dets
        .first()
        .map(|d| (d.image_id, d.category_id))
        .or_else(|| gts.first().map(|g| (g.image_id, g.category_id)));
    if let Some(key) = key {
        let mixed = dets.iter().any(|d| (d.image_id, d.category_id) != key)
            || gts.iter().any(|g| (g.image_id, g.category_id) != key);
        if mixed {
            return Err(EvalError::MixedGroups);
        }
    }
    let flags = greedy_flags(dets, gts, iou_threshold)?;
    Ok(MatchOutcome::from_unsorted(
        dets.iter().map(|d| d.score).zip(flags).collect(),
        gts.len(),
    ))
}

/// All-point interpolated average precision.
pub fn average_precision(outcome: &MatchOutcome) -> Result<f64> {
    if outcome.num_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let n = outcome.ranked.len();
    let mut precision = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (k, &(_, is_tp)) in outcome.ranked.iter().enumerate() {
        tp += usize::from(is_tp);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // envelope, right to left
    for k in (0..n.saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / outcome.num_gt as f64;
    Ok(outcome
        .ranked
        .iter()
        .zip(&precision)
        .filter(|((_, is_tp), _)| *is_tp)
        .map(|(_, &p)| p * step)
        .sum())
}

/// Mean over the classes that have ground truth (`Some(ap)`); classes given
/// as `None` have none and are skipped.
pub fn mean_ap<I: IntoIterator<Item = Option<f64>>>(per_class: I) -> Result<f64> {
    let (sum, count) = per_class
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), ap| (s + ap, c + 1));
    if count == 0 {
        return Err(EvalError::NoClasses);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Segm,
    Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    /// AP of each class with at least one ground truth.
    pub per_class_ap: BTreeMap<u64, f64>,
    #[serde(rename = "mAP")]
    pub map_value: f64,
    #[serde(skip)]
    pub iou_threshold: f64,
    #[serde(skip)]
    pub mode: EvalMode,
}

impl EvalResult {
    /// `{"per_class_ap": {"<id>": ap, ...}, "mAP": v}`
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

fn region_of(
    doc_ann: &crate::annotate::Annotation,
    height: usize,
    width: usize,
    mode: EvalMode,
) -> Result<Region> {
    match mode {
        EvalMode::Bbox => Ok(Region::Box(doc_ann.bbox)),
        EvalMode::Segm => {
            let seg = doc_ann
                .segmentation
                .as_ref()
                .ok_or(EvalError::MissingSegmentation(doc_ann.id))?;
            Ok(Region::Mask(seg.decode(height, width)?))
        }
    }
}

/// Scores a prediction document against ground truth.
///
/// Each `(image, class)` group is matched independently; the per-class
/// rankings then merge across images by score, equal scores ordered by
/// position in the prediction document.
pub fn evaluate(
    preds: &AnnotationDoc,
    gt: &AnnotationDoc,
    iou_threshold: f64,
    mode: EvalMode,
) -> Result<EvalResult> {
    check_threshold(iou_threshold)?;
    gt.validate()?;
    preds.validate()?;
    let images: HashMap<u64, (usize, usize)> = gt
        .images
        .iter()
        .map(|i| (i.id, (i.height, i.width)))
        .collect();

    let mut gt_groups: BTreeMap<(u64, u64), Vec<GroundTruth>> = BTreeMap::new();
    let mut gt_classes: BTreeMap<u64, usize> = BTreeMap::new();
    for ann in &gt.annotations {
        let (h, w) = images[&ann.image_id];
        gt_groups
            .entry((ann.image_id, ann.category_id))
            .or_default()
            .push(GroundTruth {
                image_id: ann.image_id,
                category_id: ann.category_id,
                region: region_of(ann, h, w, mode)?,
            });
        *gt_classes.entry(ann.category_id).or_default() += 1;
    }

    // (index in prediction doc, detection)
    let mut det_groups: BTreeMap<(u64, u64), Vec<(usize, Detection)>> = BTreeMap::new();
    for (idx, ann) in preds.annotations.iter().enumerate() {
        let score = ann.score.ok_or(EvalError::MissingScore(ann.id))?;
        let &(h, w) = images.get(&ann.image_id).ok_or(EvalError::UnknownImage {
            id: ann.id,
            image_id: ann.image_id,
        })?;
        if !gt_classes.contains_key(&ann.category_id) {
            continue;
        }
        det_groups
            .entry((ann.image_id, ann.category_id))
            .or_default()
            .push((
                idx,
                Detection {
                    image_id: ann.image_id,
                    category_id: ann.category_id,
                    score,
                    region: region_of(ann, h, w, mode)?,
                },
            ));
    }

    let mut ranked: BTreeMap<u64, Vec<(f64, usize, bool)>> = BTreeMap::new();
    let keys: BTreeSet<(u64, u64)> = det_groups.keys().copied().collect();
    for key in keys {
        let group = &det_groups[&key];
        let dets: Vec<Detection> = group.iter().map(|(_, d)| d.clone()).collect();
        let gts = gt_groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        let flags = greedy_flags(&dets, gts, iou_threshold)?;
        let entry = ranked.entry(key.1).or_default();
        for ((idx, d), tp) in group.iter().zip(flags) {
            entry.push((d.score, *idx, tp));
        }
    }

    let mut per_class_ap = BTreeMap::new();
    for (&class, &num_gt) in &gt_classes {
        let mut rows = ranked.remove(&class).unwrap_or_default();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let outcome = MatchOutcome {
            ranked: rows.into_iter().map(|(s, _, tp)| (s, tp)).collect(),
            num_gt,
        };
        per_class_ap.insert(class, average_precision(&outcome)?);
    }
    let map_value = mean_ap(per_class_ap.values().map(|&ap| Some(ap)))?;
    Ok(EvalResult {
        per_class_ap,
        map_value,
        iou_threshold,
        mode,
    })
}
