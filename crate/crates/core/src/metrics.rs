//! Moment-retrieval and highlight-detection metrics.
//!
//! Average precision everywhere is all-point interpolated: the sum, over the
//! ranks of true positives, of the best precision achieved at that rank or
//! any later one, divided by the number of relevant items. Moment matching
//! is greedy in confidence order and consumes each ground truth at most once.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::decoding::{MomentPrediction, PredictionRecord};
use crate::error::{Result, UmtError};
use crate::features_io::VideoSample;

/// Which task heads, losses and metrics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tasks {
    /// Moment retrieval only.
    Mr,
    /// Highlight detection only.
    Hd,
    #[default]
    Both,
}

impl Tasks {
    pub fn moment_retrieval(self) -> bool {
        matches!(self, Tasks::Mr | Tasks::Both)
    }

    pub fn highlight(self) -> bool {
        matches!(self, Tasks::Hd | Tasks::Both)
    }
}

impl std::str::FromStr for Tasks {
    type Err = UmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mr" => Ok(Tasks::Mr),
            "hd" => Ok(Tasks::Hd),
            "both" => Ok(Tasks::Both),
            other => Err(UmtError::InvalidArgument(format!("unknown task set {other:?}"))),
        }
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

/// Intersection over union of two `[start, end]` intervals; 0 when either
/// is degenerate or they are disjoint.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    if a.1 <= a.0 || b.1 <= b.0 {
        return 0.0;
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn span(m: &MomentPrediction) -> (f64, f64) {
    (m.start, m.end)
}

/// Prediction indices by descending confidence, then earlier start, then
/// lower original index.
pub fn rank_predictions(preds: &[MomentPrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(preds[a].start.total_cmp(&preds[b].start))
            .then(a.cmp(&b))
    });
    order
}

/// AP of a ranked relevance list against `n_relevant` relevant items.
pub fn ranked_ap(relevant: &[bool], n_relevant: usize) -> f64 {
    if n_relevant == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(relevant.len());
    let mut hits = 0usize;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
        }
        precision.push(hits as f64 / (i + 1) as f64);
    }
    // envelope: best precision at this rank or later
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = relevant
        .iter()
        .zip(&precision)
        .filter(|(r, _)| **r)
        .map(|(_, p)| *p)
        .sum();
    sum / n_relevant as f64
}

/// True-positive flags for predictions in ranked order.
pub fn match_predictions(preds: &[MomentPrediction], gts: &[(f64, f64)], thresh: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    rank_predictions(preds)
        .into_iter()
        .map(|p| {
            let mut cands: Vec<(usize, f64)> = gts.iter().enumerate().map(|(g, gt)| (g, temporal_iou(span(&preds[p]), *gt))).collect();
            cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for (g, iou) in cands {
                if iou < thresh {
                    break;
                }
                if !used[g] {
                    used[g] = true;
                    return true;
                }
            }
            false
        })
        .collect()
}

pub fn average_precision(preds: &[MomentPrediction], gts: &[(f64, f64)], thresh: f64) -> f64 {
    ranked_ap(&match_predictions(preds, gts, thresh), gts.len())
}

/// Fraction of queries (with at least one ground truth) whose top-`k`
/// predictions hit any ground truth at IoU ≥ `thresh`.
pub fn recall_at_k(preds: &[Vec<MomentPrediction>], gts: &[Vec<(f64, f64)>], k: usize, thresh: f64) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        total += 1;
        let hit = rank_predictions(p)
            .into_iter()
            .take(k)
            .any(|i| g.iter().any(|gt| temporal_iou(span(&p[i]), *gt) >= thresh));
        if hit {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Mean over queries of the AP at each threshold.
pub fn mean_ap(preds: &[Vec<MomentPrediction>], gts: &[Vec<(f64, f64)>], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (p, g) in preds.iter().zip(gts) {
                if g.is_empty() {
                    continue;
                }
                sum += average_precision(p, g, t);
                n += 1;
            }
            (t, if n == 0 { 0.0 } else { sum / n as f64 })
        })
        .collect()
}

/// Clip indices by descending score, lower index first on ties.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    order
}

/// `(hd_map, hit_at_1)` averaged over videos that have a positive clip.
pub fn highlight_metrics(saliency: &[Vec<f64>], labels: &[Vec<bool>]) -> (f64, f64) {
    let mut ap_sum = 0.0;
    let mut hits = 0usize;
    let mut n = 0usize;
    for (s, l) in saliency.iter().zip(labels) {
        let n_pos = l.iter().filter(|b| **b).count();
        if n_pos == 0 {
            continue;
        }
        n += 1;
        let ranked: Vec<bool> = rank_scores(s).into_iter().map(|i| l[i]).collect();
        if ranked.first().copied().unwrap_or(false) {
            hits += 1;
        }
        ap_sum += ranked_ap(&ranked, n_pos);
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (ap_sum / n as f64, hits as f64 / n as f64)
    }
}

/// AP over each video's five highest-scored clips, relative to the positives
/// found among them; averaged over videos that have a positive clip.
pub fn top5_map(saliency: &[Vec<f64>], labels: &[Vec<bool>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (s, l) in saliency.iter().zip(labels) {
        if !l.iter().any(|b| *b) {
            continue;
        }
        n += 1;
        let top: Vec<bool> = rank_scores(s).into_iter().take(5).map(|i| l[i]).collect();
        let n_pos = top.iter().filter(|b| **b).count();
        sum += ranked_ap(&top, n_pos);
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r1_at: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r5_at: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_at: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_avg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hd_map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_at_1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top5_map: Option<f64>,
}

impl EvalReport {
    pub fn r1(&self, t: f64) -> Option<f64> {
        self.r1_at.as_ref()?.get(&threshold_key(t)).copied()
    }

    pub fn values(&self) -> Vec<f64> {
        let maps = [&self.r1_at, &self.r5_at, &self.map_at];
        let mut v: Vec<f64> = maps.iter().filter_map(|m| m.as_ref()).flat_map(|m| m.values().copied()).collect();
        v.extend([self.map_avg, self.hd_map, self.hit_at_1, self.top5_map].into_iter().flatten());
        v
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>10}", "metric", "value");
        let mut row = |name: String, v: f64| {
            let _ = writeln!(out, "{name:<16}{:>10.4}", v);
        };
        for (label, map) in [("R1", &self.r1_at), ("R5", &self.r5_at)] {
            if let Some(m) = map {
                for (k, v) in m {
                    row(format!("{label}@{k}"), *v);
                }
            }
        }
        if let Some(m) = &self.map_at {
            for key in ["0.50", "0.75"] {
                if let Some(v) = m.get(key) {
                    row(format!("mAP@{key}"), *v);
                }
            }
        }
        for (name, v) in [
            ("mAP avg", self.map_avg),
            ("HD mAP", self.hd_map),
            ("HIT@1", self.hit_at_1),
            ("Top-5 mAP", self.top5_map),
        ] {
            if let Some(v) = v {
                row(name.to_string(), v);
            }
        }
        out
    }
}

/// Scores per-sample predictions against their ground truth.
pub fn evaluate_moments_and_saliency(
    moments: &[Vec<MomentPrediction>],
    saliency: &[Vec<f64>],
    samples: &[VideoSample],
    tasks: Tasks,
) -> Result<EvalReport> {
    if moments.len() != samples.len() || saliency.len() != samples.len() {
        return Err(UmtError::InvalidArgument("prediction count does not match sample count".into()));
    }
    let mut report = EvalReport::default();
    if tasks.moment_retrieval() {
        if samples.iter().all(|s| s.moments.is_empty()) {
            return Err(UmtError::InvalidArgument("moment retrieval requested but no sample has moments".into()));
        }
        let gts: Vec<Vec<(f64, f64)>> = samples.iter().map(VideoSample::gt_spans).collect();
        let recall = |k| -> BTreeMap<String, f64> {
            [0.5, 0.7]
                .into_iter()
                .map(|t| (threshold_key(t), recall_at_k(moments, &gts, k, t)))
                .collect()
        };
        report.r1_at = Some(recall(1));
        report.r5_at = Some(recall(5));
        let grid = mean_ap(moments, &gts, &iou_grid());
        report.map_avg = Some(grid.iter().map(|(_, v)| v).sum::<f64>() / grid.len() as f64);
        report.map_at = Some(grid.into_iter().map(|(t, v)| (threshold_key(t), v)).collect());
    }
    if tasks.highlight() {
        if samples.iter().all(|s| !s.positives.iter().any(|p| *p)) {
            return Err(UmtError::InvalidArgument("highlight detection requested but no sample has positive clips".into()));
        }
        for (s, p) in samples.iter().zip(saliency) {
            if p.len() != s.n_clips() {
                return Err(UmtError::Alignment {
                    id: s.id.clone(),
                    detail: format!("{} saliency scores for {} clips", p.len(), s.n_clips()),
                });
            }
        }
        let labels: Vec<Vec<bool>> = samples.iter().map(|s| s.positives.clone()).collect();
        let (hd, hit) = highlight_metrics(saliency, &labels);
        report.hd_map = Some(hd);
        report.hit_at_1 = Some(hit);
        report.top5_map = Some(top5_map(saliency, &labels));
    }
    Ok(report)
}

/// Scores a prediction dump (matched to samples by id).
pub fn evaluate_records(records: &[PredictionRecord], samples: &[VideoSample], tasks: Tasks) -> Result<EvalReport> {
    let by_id: HashMap<&str, &PredictionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut moments = Vec::with_capacity(samples.len());
    let mut saliency = Vec::with_capacity(samples.len());
    for s in samples {
        let r = by_id
            .get(s.id.as_str())
            .ok_or_else(|| UmtError::InvalidArgument(format!("no prediction for sample {}", s.id)))?;
        moments.push(r.moments());
        saliency.push(r.pred_saliency_scores.clone());
    }
    evaluate_moments_and_saliency(&moments, &saliency, samples, tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(start: f64, end: f64, confidence: f64) -> MomentPrediction {
        MomentPrediction { start, end, confidence }
    }

    #[test]
    fn iou_cases() {
        assert!((temporal_iou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(temporal_iou((2.0, 4.0), (2.0, 4.0)), 1.0);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert_eq!(temporal_iou((1.0, 1.0), (0.0, 3.0)), 0.0);
    }

    #[test]
    fn recall_rank_one_and_five() {
        let gt = vec![vec![(0.0, 10.0)]];
        let exact = vec![vec![m(0.0, 10.0, 0.9)]];
        assert_eq!(recall_at_k(&exact, &gt, 1, 0.5), 1.0);

        // top-1 IoU 0.4, third prediction exact
        let preds = vec![vec![m(0.0, 4.0, 0.9), m(20.0, 30.0, 0.8), m(0.0, 10.0, 0.7)]];
        assert!((temporal_iou((0.0, 4.0), (0.0, 10.0)) - 0.4).abs() < 1e-15);
        assert_eq!(recall_at_k(&preds, &gt, 1, 0.5), 0.0);
        assert_eq!(recall_at_k(&preds, &gt, 5, 0.5), 1.0);
    }

    #[test]
    fn ap_false_then_true() {
        let gt = vec![(0.0, 10.0)];
        // IoU 0.2 then exact
        let preds = vec![m(0.0, 2.0, 0.9), m(0.0, 10.0, 0.5)];
        assert_eq!(average_precision(&preds, &gt, 0.5), 0.5);
        let perfect = vec![m(0.0, 10.0, 0.9)];
        for (_, v) in mean_ap(&[perfect], &[gt], &iou_grid()) {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn highlight_basic() {
        let labels = vec![vec![false, true, false, true]];
        let (ap, hit) = highlight_metrics(&[vec![0.0, 1.0, 0.0, 1.0]], &labels);
        assert_eq!((ap, hit), (1.0, 1.0));
        let (_, hit) = highlight_metrics(&[vec![0.9, 0.1, 0.0, 0.0]], &labels);
        assert_eq!(hit, 0.0);
        // no-positive videos are skipped
        let (ap, hit) = highlight_metrics(&[vec![0.1, 0.2]], &[vec![false, false]]);
        assert_eq!((ap, hit), (0.0, 0.0));
    }

    #[test]
    fn top5_extremes() {
        let scores = vec![vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.1, 0.0]];
        let all = vec![vec![true, true, true, true, true, false, false]];
        assert_eq!(top5_map(&scores, &all), 1.0);
        let none = vec![vec![false, false, false, false, false, true, true]];
        assert_eq!(top5_map(&scores, &none), 0.0);
        // fewer than five clips
        assert_eq!(top5_map(&[vec![0.2, 0.1]], &[vec![true, false]]), 1.0);
    }
}
