//! Multi-mask panoptic quality.
//!
//! Predictions are matched to ground truth per class on their visible
//! masks (IoU strictly above 0.5). Detection quality is
//! `|TP| / (|TP| + |FP|/2 + |FN|/2)`; segmentation quality averages the
//! visible-mask IoU over TP pairs, and its multi-mask variant averages the
//! mean IoU over the background, visible and occluded mask classes.
//! PQ is `DQ · SQ` and PQ_multi is `DQ · SQ_multi`. TP/FP/FN are pooled over
//! all scenes per class before the ratios are taken.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositor::{InstanceAnnotation, SceneAnnotation};
use crate::mask::{ratio_or_one, BitMask, BoundingBox, MaskError};

/// Visible-mask IoU must exceed this for a match.
pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("scene ids differ: missing from predictions {missing_in_pred:?}, missing from ground truth {missing_in_gt:?}")]
    SceneMismatch {
        missing_in_pred: Vec<u64>,
        missing_in_gt: Vec<u64>,
    },
    #[error("scene {scene_id}: prediction is {pred:?} but ground truth is {gt:?}")]
    SceneDimensions {
        scene_id: u64,
        pred: (u32, u32),
        gt: (u32, u32),
    },
}

/// The per-instance mask classes averaged by mIoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskClass {
    Background,
    Visible,
    Occluded,
}

impl MaskClass {
    pub const ALL: [MaskClass; 3] = [MaskClass::Background, MaskClass::Visible, MaskClass::Occluded];
}

/// Spatial support for the background class in [`instance_miou`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionPolicy {
    /// Union of both instances' boxes grown by `margin`, clipped to the
    /// canvas.
    BBox { margin: u32 },
    FullImage,
}

impl Default for RegionPolicy {
    fn default() -> Self {
        RegionPolicy::BBox { margin: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair {
    /// Index into the prediction slice.
    pub pred: usize,
    /// Index into the ground-truth slice.
    pub gt: usize,
    /// Visible-mask IoU.
    pub iou: f64,
}

/// TP/FP/FN partition, as indices into the slices given to
/// [`match_instances`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<MatchPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }
}

/// Greedy one-to-one matching on visible-mask IoU > 0.5.
///
/// Without scores, candidate pairs are taken in descending IoU, ties broken
/// by lower prediction then ground-truth instance id. If any prediction
/// carries a score, predictions are visited in descending score instead and
/// each takes its best unmatched ground truth.
pub fn match_instances(
    pred: &[&InstanceAnnotation],
    gt: &[&InstanceAnnotation],
) -> Result<MatchResult, MetricsError> {
    let mut candidates = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let inter = p.visible.intersection_count(&g.visible)?;
            if inter == 0 {
                continue;
            }
            let iou = inter as f64 / p.visible.union_count(&g.visible)? as f64;
            if iou > MATCH_IOU_THRESHOLD {
                candidates.push(MatchPair { pred: pi, gt: gi, iou });
            }
        }
    }

    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut tps = Vec::new();
    let scored = pred.iter().any(|p| p.score.is_some());
    if scored {
        let mut order: Vec<usize> = (0..pred.len()).collect();
        order.sort_by(|&a, &b| {
            let sa = pred[a].score.unwrap_or(f64::NEG_INFINITY);
            let sb = pred[b].score.unwrap_or(f64::NEG_INFINITY);
            sb.total_cmp(&sa).then(pred[a].instance_id.cmp(&pred[b].instance_id))
        });
        for pi in order {
            let best = candidates
                .iter()
                .filter(|c| c.pred == pi && !gt_used[c.gt])
                .max_by(|a, b| a.iou.total_cmp(&b.iou).then(gt[b.gt].instance_id.cmp(&gt[a.gt].instance_id)));
            if let Some(&c) = best {
                pred_used[pi] = true;
                gt_used[c.gt] = true;
                tps.push(c);
            }
        }
    } else {
        candidates.sort_by(|a, b| {
            b.iou
                .total_cmp(&a.iou)
                .then(pred[a.pred].instance_id.cmp(&pred[b.pred].instance_id))
                .then(gt[a.gt].instance_id.cmp(&gt[b.gt].instance_id))
        });
        for c in candidates {
            if !pred_used[c.pred] && !gt_used[c.gt] {
                pred_used[c.pred] = true;
                gt_used[c.gt] = true;
                tps.push(c);
            }
        }
    }
    Ok(MatchResult {
        true_positives: tps,
        false_positives: (0..pred.len()).filter(|&i| !pred_used[i]).collect(),
        false_negatives: (0..gt.len()).filter(|&i| !gt_used[i]).collect(),
    })
}

/// `|TP| / (|TP| + |FP|/2 + |FN|/2)`; 1.0 when all three are empty.
pub fn detection_quality(tp: usize, fp: usize, fn_count: usize) -> f64 {
    if tp + fp + fn_count == 0 {
        return 1.0;
    }
    tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_count as f64)
}

/// The rectangle over which the three mask classes are compared.
pub fn eval_region(
    p: &InstanceAnnotation,
    g: &InstanceAnnotation,
    policy: RegionPolicy,
) -> Result<BoundingBox, MetricsError> {
    let (w, h) = g.visible.dims();
    let region = match policy {
        RegionPolicy::FullImage => BoundingBox::new(0, 0, w, h),
        RegionPolicy::BBox { margin } => {
            let pb = p.visible.or(&p.occluded)?.tight_bbox();
            let gb = g.visible.or(&g.occluded)?.tight_bbox();
            pb.union(&gb).dilate(margin, w, h)
        }
    };
    if region.is_empty() {
        return Err(MetricsError::EmptyRegion);
    }
    Ok(region)
}

/// IoU of one mask class between two instances, inside `region`.
pub fn class_iou(
    p: &InstanceAnnotation,
    g: &InstanceAnnotation,
    class: MaskClass,
    region: BoundingBox,
) -> Result<f64, MetricsError> {
    let (inter, union) = match class {
        MaskClass::Visible => (
            p.visible.count_combined_in(&g.visible, region, |a, b| a & b)?,
            p.visible.count_combined_in(&g.visible, region, |a, b| a | b)?,
        ),
        MaskClass::Occluded => (
            p.occluded.count_combined_in(&g.occluded, region, |a, b| a & b)?,
            p.occluded.count_combined_in(&g.occluded, region, |a, b| a | b)?,
        ),
        MaskClass::Background => {
            let pf: BitMask = p.visible.or(&p.occluded)?;
            let gf: BitMask = g.visible.or(&g.occluded)?;
            (
                pf.count_combined_in(&gf, region, |a, b| !(a | b))?,
                pf.count_combined_in(&gf, region, |a, b| !(a & b))?,
            )
        }
    };
    Ok(ratio_or_one(inter, union))
}

/// Mean IoU over background, visible and occluded.
pub fn instance_miou(
    p: &InstanceAnnotation,
    g: &InstanceAnnotation,
    policy: RegionPolicy,
) -> Result<f64, MetricsError> {
    let region = eval_region(p, g, policy)?;
    let mut sum = 0.0;
    for class in MaskClass::ALL {
        sum += class_iou(p, g, class, region)?;
    }
    Ok(sum / MaskClass::ALL.len() as f64)
}

/// Mean over TP pairs of the visible IoU (`Single`) or mIoU (`Multi`);
/// 0.0 without TPs.
pub fn segmentation_quality(
    m: &MatchResult,
    pred: &[&InstanceAnnotation],
    gt: &[&InstanceAnnotation],
    mode: SqMode,
    policy: RegionPolicy,
) -> Result<f64, MetricsError> {
    if m.true_positives.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for pair in &m.true_positives {
        sum += match mode {
            SqMode::Single => pair.iou,
            SqMode::Multi => instance_miou(pred[pair.pred], gt[pair.gt], policy)?,
        };
    }
    Ok(sum / m.true_positives.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub region: RegionPolicy,
}

/// Scores for one object class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dq: f64,
    pub sq: f64,
    pub sq_multi: f64,
    pub pq: f64,
    pub pq_multi: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_count: u64,
}

/// Class means. `m_pq_multi` is the headline mPQ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    #[serde(rename = "mDQ")]
    pub m_dq: f64,
    #[serde(rename = "mSQ")]
    pub m_sq: f64,
    #[serde(rename = "mSQ_multi")]
    pub m_sq_multi: f64,
    #[serde(rename = "mPQ")]
    pub m_pq: f64,
    #[serde(rename = "mPQ_multi")]
    pub m_pq_multi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub means: MeanMetrics,
    pub n_scenes: usize,
}

/// Per-class running sums for one or more scenes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    tp: u64,
    fp: u64,
    fn_count: u64,
    iou_sum: f64,
    miou_sum: f64,
}

impl Tally {
    fn add(&mut self, other: &Tally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_count += other.fn_count;
        self.iou_sum += other.iou_sum;
        self.miou_sum += other.miou_sum;
    }

    fn finish(&self) -> ClassMetrics {
        let dq = detection_quality(self.tp as usize, self.fp as usize, self.fn_count as usize);
        let (sq, sq_multi) = if self.tp == 0 {
            (0.0, 0.0)
        } else {
            (self.iou_sum / self.tp as f64, self.miou_sum / self.tp as f64)
        };
        ClassMetrics {
            dq,
            sq,
            sq_multi,
            pq: dq * sq,
            pq_multi: dq * sq_multi,
            tp: self.tp,
            fp: self.fp,
            fn_count: self.fn_count,
        }
    }
}

fn by_class(instances: &[InstanceAnnotation]) -> BTreeMap<&str, Vec<&InstanceAnnotation>> {
    let mut out: BTreeMap<&str, Vec<&InstanceAnnotation>> = BTreeMap::new();
    for inst in instances {
        out.entry(inst.object_class.as_str()).or_default().push(inst);
    }
    out
}

fn evaluate_scene(
    pred: &SceneAnnotation,
    gt: &SceneAnnotation,
    cfg: &EvalConfig,
) -> Result<BTreeMap<String, Tally>, MetricsError> {
    let pred_classes = by_class(&pred.instances);
    let gt_classes = by_class(&gt.instances);
    let names: BTreeSet<&str> = pred_classes.keys().chain(gt_classes.keys()).copied().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let p = pred_classes.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let g = gt_classes.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_instances(p, g)?;
        let mut tally = Tally {
            tp: m.tp() as u64,
            fp: m.fp() as u64,
            fn_count: m.fn_count() as u64,
            ..Default::default()
        };
        for pair in &m.true_positives {
            tally.iou_sum += pair.iou;
            tally.miou_sum += instance_miou(p[pair.pred], g[pair.gt], cfg.region)?;
        }
        out.insert(name.to_string(), tally);
    }
    Ok(out)
}

/// Evaluates predictions against ground truth, pairing scenes by id.
///
/// Class means run over every class seen in either dataset; a class only
/// predicted scores DQ = 0 and pulls the means down.
pub fn evaluate(
    pred: &[SceneAnnotation],
    gt: &[SceneAnnotation],
    cfg: &EvalConfig,
) -> Result<MetricReport, MetricsError> {
    let pred_by_id: BTreeMap<u64, &SceneAnnotation> = pred.iter().map(|s| (s.scene_id, s)).collect();
    let gt_by_id: BTreeMap<u64, &SceneAnnotation> = gt.iter().map(|s| (s.scene_id, s)).collect();
    let missing_in_pred: Vec<u64> = gt_by_id.keys().filter(|k| !pred_by_id.contains_key(k)).copied().collect();
    let missing_in_gt: Vec<u64> = pred_by_id.keys().filter(|k| !gt_by_id.contains_key(k)).copied().collect();
    if !missing_in_pred.is_empty() || !missing_in_gt.is_empty() {
        return Err(MetricsError::SceneMismatch {
            missing_in_pred,
            missing_in_gt,
        });
    }
    let pairs: Vec<(&SceneAnnotation, &SceneAnnotation)> =
        gt_by_id.iter().map(|(id, g)| (pred_by_id[id], *g)).collect();
    for (p, g) in &pairs {
        if p.dims() != g.dims() {
            return Err(MetricsError::SceneDimensions {
                scene_id: g.scene_id,
                pred: p.dims(),
                gt: g.dims(),
            });
        }
    }

    // Scene results come back in scene-id order, so the float sums below
    // do not depend on scheduling.
    let per_scene = pairs
        .par_iter()
        .map(|(p, g)| evaluate_scene(p, g, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut totals: BTreeMap<String, Tally> = BTreeMap::new();
    for scene in &per_scene {
        for (name, tally) in scene {
            totals.entry(name.clone()).or_default().add(tally);
        }
    }

    let per_class: BTreeMap<String, ClassMetrics> =
        totals.iter().map(|(k, t)| (k.clone(), t.finish())).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if per_class.is_empty() {
            1.0
        } else {
            per_class.values().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    let means = MeanMetrics {
        m_dq: mean(|c| c.dq),
        m_sq: mean(|c| c.sq),
        m_sq_multi: mean(|c| c.sq_multi),
        m_pq: mean(|c| c.pq),
        m_pq_multi: mean(|c| c.pq_multi),
    };
    Ok(MetricReport {
        per_class,
        means,
        n_scenes: pairs.len(),
    })
}

impl MetricReport {
    /// Plain-text table: one row per class plus the mean row.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>8} {:>8} {:>10} {:>8} {:>8} {:>6} {:>6} {:>6}\n",
            "class", "PQ", "SQ", "SQ_multi", "DQ", "PQ_multi", "TP", "FP", "FN"
        );
        for (name, c) in &self.per_class {
            out.push_str(&format!(
                "{:<24} {:>8.4} {:>8.4} {:>10.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6}\n",
                name, c.pq, c.sq, c.sq_multi, c.dq, c.pq_multi, c.tp, c.fp, c.fn_count
            ));
        }
        let m = &self.means;
        out.push_str(&format!(
            "\n{:>10} {:>10} {:>10} {:>10} {:>10}\n{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            "mPQ_multi", "mPQ", "mSQ_multi", "mSQ", "mDQ", m.m_pq_multi, m.m_pq, m.m_sq_multi, m.m_sq, m.m_dq
        ));
        out
    }
}
