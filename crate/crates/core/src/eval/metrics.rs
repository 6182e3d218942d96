use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::supervision::interpupillary_distance;

/// Success threshold on the normalized error.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.1;

/// Error grid of the cumulative error distribution: 0 to 0.3 in steps of
/// 0.005.
pub fn ced_thresholds() -> Vec<f64> {
    (0..=60).map(|i| i as f64 / 200.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Per-image mean landmark error over the interpupillary distance.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub threshold: f64,
    /// Fraction of images with error `<= threshold`.
    pub success_rate: f64,
    /// `(threshold, fraction of images with error <= threshold)`.
    pub ced: Vec<(f64, f64)>,
}

/// Mean point distance over the ground-truth interpupillary distance.
pub fn normalized_error(pred: &[[f64; 2]], gt: &[[f64; 2]], eyes: &[Vec<usize>; 2]) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::Data(format!(
            "prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let ipd = interpupillary_distance(gt, eyes);
    if !(ipd > 0.0) {
        return Err(Error::Data("ground truth has zero interpupillary distance".into()));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])).sum();
    Ok(sum / gt.len() as f64 / ipd)
}

pub fn localization_metrics(
    preds: &[Vec<[f64; 2]>],
    gts: &[Vec<[f64; 2]>],
    eyes: &[Vec<usize>; 2],
    threshold: f64,
) -> Result<LocalizationReport> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground-truth faces",
            preds.len(),
            gts.len()
        )));
    }
    let errors = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| normalized_error(p, g, eyes))
        .collect::<Result<Vec<f64>>>()?;
    Ok(report_from_errors(errors, threshold, 0))
}

/// Report over `errors` plus `failures` images without a prediction, which
/// count against the success rate and the CED but not the mean error.
pub(crate) fn report_from_errors(errors: Vec<f64>, threshold: f64, failures: usize) -> LocalizationReport {
    let total = (errors.len() + failures).max(1) as f64;
    let frac = |t: f64| errors.iter().filter(|&&e| e <= t).count() as f64 / total;
    let mean_error = if errors.is_empty() { f64::NAN } else { errors.iter().sum::<f64>() / errors.len() as f64 };
    LocalizationReport {
        mean_error,
        threshold,
        success_rate: frac(threshold),
        ced: ced_thresholds().into_iter().map(|t| (t, frac(t))).collect(),
        errors,
    }
}

/// Precision and recall of occlusion flags (occluded is the positive
/// class). With no predicted occlusion precision is 1; with no occluded
/// ground truth recall is 1.
pub fn occlusion_pr(pred: &[bool], gt: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!("{} predicted flags for {} ground-truth flags", pred.len(), gt.len())));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    Ok((precision, recall))
}

/// One operating point of a precision/recall sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Score threshold or sweep parameter.
    pub parameter: f64,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionPr {
    pub all: Vec<PrPoint>,
    /// Occluded subset: `tp_o / (tp_o + fp)` and `tp_o / (tp_o + fn_o)`,
    /// where `fp` counts every false positive.
    pub occluded: Vec<PrPoint>,
    pub ap: f64,
    pub ap_occluded: f64,
}

/// Area under the precision envelope (all-point interpolation).
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, p) in points.iter().enumerate() {
        let envelope = points[i..].iter().map(|q| q.precision).fold(0.0, f64::max);
        ap += (p.recall - prev_recall).max(0.0) * envelope;
        prev_recall = prev_recall.max(p.recall);
    }
    ap
}

/// Score-ordered greedy matching: each detection takes the unmatched
/// ground truth box of its image with the highest IoU, if that IoU reaches
/// `min_iou`. Ties in score go to the lower (image, index).
pub fn detection_pr(
    detections: &[Vec<(f64, BBox)>],
    truths: &[Vec<(BBox, bool)>],
    min_iou: f64,
) -> Result<DetectionPr> {
    if detections.len() != truths.len() {
        return Err(Error::Data(format!(
            "detections for {} images, ground truth for {}",
            detections.len(),
            truths.len()
        )));
    }
    let mut order: Vec<(usize, usize)> = detections
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j)))
        .collect();
    order.sort_by(|a, b| {
        detections[b.0][b.1]
            .0
            .total_cmp(&detections[a.0][a.1].0)
            .then(a.cmp(b))
    });
    let positives: usize = truths.iter().map(Vec::len).sum();
    let occluded_total: usize = truths.iter().map(|t| t.iter().filter(|g| g.1).count()).sum();
    let mut taken: Vec<Vec<bool>> = truths.iter().map(|t| vec![false; t.len()]).collect();
    let (mut tp, mut fp, mut tp_o) = (0usize, 0usize, 0usize);
    let mut all = Vec::new();
    let mut occ = Vec::new();
    for (i, j) in order {
        let (score, bbox) = detections[i][j];
        let mut best: Option<(f64, usize)> = None;
        for (g, (gb, _)) in truths[i].iter().enumerate() {
            if taken[i][g] {
                continue;
            }
            let iou = bbox.iou(gb);
            if iou >= min_iou && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        match best {
            Some((_, g)) => {
                taken[i][g] = true;
                tp += 1;
                if truths[i][g].1 {
                    tp_o += 1;
                }
            }
            None => fp += 1,
        }
        let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
        all.push(PrPoint {
            parameter: score,
            tp,
            fp,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, positives),
        });
        occ.push(PrPoint {
            parameter: score,
            tp: tp_o,
            fp,
            precision: ratio(tp_o, tp_o + fp),
            recall: ratio(tp_o, occluded_total),
        });
    }
    Ok(DetectionPr {
        ap: if positives == 0 { 0.0 } else { average_precision(&all) },
        ap_occluded: if occluded_total == 0 { 0.0 } else { average_precision(&occ) },
        all,
        occluded: occ,
    })
}
