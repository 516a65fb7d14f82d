//! Turns per-clip predictions into ranked moments.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UmtError};
use crate::losses::TargetSet;

/// Default number of moments kept per (video, query).
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// Clips whose score is at least that of each neighbor.
    LocalMaxima,
    /// Every clip is a candidate center.
    AllClips,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPrediction {
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

impl MomentPrediction {
    pub fn center(&self) -> f64 {
        (self.start + self.end) / 2.0
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Descending score; equal scores keep the lower index first.
fn by_score(heatmap: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| heatmap[*b].total_cmp(&heatmap[*a]).then(a.cmp(b))
}

pub fn extract_centers(heatmap: &[f64], mode: CenterMode, top_k: usize) -> Result<Vec<usize>> {
    if top_k == 0 {
        return Err(UmtError::InvalidArgument("top_k must be at least 1".into()));
    }
    let n = heatmap.len();
    let mut idx: Vec<usize> = match mode {
        CenterMode::AllClips => (0..n).collect(),
        CenterMode::LocalMaxima => (0..n)
            .filter(|&i| {
                let left = i == 0 || heatmap[i] >= heatmap[i - 1];
                let right = i + 1 == n || heatmap[i] >= heatmap[i + 1];
                left && right
            })
            .collect(),
    };
    idx.sort_by(by_score(heatmap));
    idx.truncate(top_k);
    Ok(idx)
}

/// Builds one moment per center: the refined center `c + offset[c]` with a
/// symmetric span of `window[c]` clips, converted to seconds and clipped to
/// the video. Zero-length spans are dropped; output is sorted by confidence.
pub fn compose_moments(centers: &[usize], heatmap: &[f64], window: &[f64], offset: &[f64], clip_seconds: f64) -> Result<Vec<MomentPrediction>> {
    let n = heatmap.len();
    if window.len() != n || offset.len() != n {
        return Err(UmtError::ShapeMismatch {
            op: "compose_moments",
            left: vec![n],
            right: vec![window.len(), offset.len()],
        });
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= n) {
        return Err(UmtError::InvalidArgument(format!("center index {bad} out of range for {n} clips")));
    }
    let extent = n as f64 * clip_seconds;
    let mut ordered = centers.to_vec();
    ordered.sort_by(by_score(heatmap));
    let out = ordered
        .into_iter()
        .filter_map(|c| {
            let mid = c as f64 + offset[c];
            let half = window[c] / 2.0;
            let start = ((mid - half) * clip_seconds).clamp(0.0, extent);
            let end = ((mid + half) * clip_seconds).clamp(0.0, extent);
            (end > start).then_some(MomentPrediction {
                start,
                end,
                confidence: heatmap[c],
            })
        })
        .collect();
    Ok(out)
}

/// Feeds ground-truth targets through local-maximum extraction and moment
/// composition, in clip units. Used to check that decoding inverts
/// target construction.
pub fn roundtrip(targets: &TargetSet) -> Result<Vec<MomentPrediction>> {
    let k = targets.n_moments();
    if k == 0 {
        return Ok(Vec::new());
    }
    let centers = extract_centers(&targets.heatmap, CenterMode::LocalMaxima, k)?;
    compose_moments(
        &centers,
        &targets.heatmap,
        &targets.dense_windows(),
        &targets.dense_offsets(),
        1.0,
    )
}

/// One line of the prediction dump: ranked `[start, end, confidence]`
/// windows in seconds and per-clip saliency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default)]
    pub pred_relevant_windows: Vec<[f64; 3]>,
    #[serde(default)]
    pub pred_saliency_scores: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(id: &str, moments: &[MomentPrediction], saliency: &[f64]) -> Self {
        Self {
            id: id.to_string(),
            pred_relevant_windows: moments.iter().map(|m| [m.start, m.end, m.confidence]).collect(),
            pred_saliency_scores: saliency.to_vec(),
        }
    }

    pub fn moments(&self) -> Vec<MomentPrediction> {
        self.pred_relevant_windows
            .iter()
            .map(|w| MomentPrediction {
                start: w[0],
                end: w[1],
                confidence: w[2],
            })
            .collect()
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| UmtError::io(path, e))?;
    f.write_all(&out).map_err(|e| UmtError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = fs::File::open(path).map_err(|e| UmtError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| UmtError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| UmtError::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}
