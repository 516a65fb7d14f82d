//! On-disk feature/annotation formats and synthetic datasets.
//!
//! A dataset is a JSON manifest whose entries reference raw matrix files:
//! an 8-byte header (`length`, `dim` as little-endian `u32`) followed by
//! `length × dim` little-endian IEEE-754 `f32` values in row-major order.
//! Values are upcast to `f64` on load.
//!
//! All clip coordinates are 0-based and continuous: clip `i` covers
//! `[i, i + 1)`, and a video of `N_v` clips spans `[0, N_v)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UmtError};
use crate::losses::quantize_center;
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

/// Clip- (or token-) aligned feature matrix for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    values: Tensor,
}

impl FeatureSequence {
    pub fn new(modality: Modality, values: Tensor) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() == 0 {
            return Err(UmtError::InvalidArgument(format!(
                "{} features must be a non-empty matrix, got shape {:?}",
                modality.as_str(),
                values.shape()
            )));
        }
        Ok(Self { modality, values })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }
}

/// A ground-truth moment as a continuous center and a duration, in clips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentAnnotation {
    pub center: f64,
    pub window: f64,
}

impl MomentAnnotation {
    pub fn start(&self) -> f64 {
        self.center - self.window / 2.0
    }

    pub fn end(&self) -> f64 {
        self.center + self.window / 2.0
    }

    /// Span in seconds, clipped to the video extent.
    pub fn span_seconds(&self, n_clips: usize, clip_seconds: f64) -> (f64, f64) {
        let extent = n_clips as f64;
        (
            self.start().clamp(0.0, extent) * clip_seconds,
            self.end().clamp(0.0, extent) * clip_seconds,
        )
    }

    pub fn validate(&self, n_clips: usize) -> std::result::Result<(), String> {
        let extent = n_clips as f64;
        if !self.center.is_finite() || !self.window.is_finite() {
            return Err("non-finite moment".into());
        }
        if !(self.center >= 0.0 && self.center < extent) {
            return Err(format!("center {} outside [0, {n_clips})", self.center));
        }
        if self.window <= 0.0 {
            return Err(format!("window {} must be positive", self.window));
        }
        if self.end().min(extent) <= self.start().max(0.0) {
            return Err("moment does not intersect the video".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub visual: Option<FeatureSequence>,
    pub audio: Option<FeatureSequence>,
    pub text: Option<FeatureSequence>,
    pub moments: Vec<MomentAnnotation>,
    /// Per-clip saliency target in [0, 1].
    pub saliency: Vec<f64>,
    /// Per-clip highlight positives used by the highlight metrics.
    pub positives: Vec<bool>,
    pub clip_seconds: f64,
}

impl VideoSample {
    /// Number of clips, taken from whichever clip-aligned modality exists.
    pub fn n_clips(&self) -> usize {
        self.visual
            .as_ref()
            .or(self.audio.as_ref())
            .map_or(0, FeatureSequence::len)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_clips() as f64 * self.clip_seconds
    }

    /// Ground-truth spans in seconds.
    pub fn gt_spans(&self) -> Vec<(f64, f64)> {
        let n = self.n_clips();
        self.moments
            .iter()
            .map(|m| m.span_seconds(n, self.clip_seconds))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let id = || self.id.clone();
        let n = match (&self.visual, &self.audio) {
            (None, None) => {
                return Err(UmtError::Alignment {
                    id: id(),
                    detail: "neither visual nor audio features present".into(),
                })
            }
            (Some(v), Some(a)) if v.len() != a.len() => {
                return Err(UmtError::Alignment {
                    id: id(),
                    detail: format!("visual length {} != audio length {}", v.len(), a.len()),
                })
            }
            _ => self.n_clips(),
        };
        for seq in [&self.visual, &self.audio, &self.text].into_iter().flatten() {
            if !seq.values().is_finite() {
                return Err(UmtError::NonFinite {
                    id: id(),
                    what: format!("{} features", seq.modality.as_str()),
                });
            }
        }
        if self.saliency.len() != n {
            return Err(UmtError::Alignment {
                id: id(),
                detail: format!("saliency length {} != clip count {n}", self.saliency.len()),
            });
        }
        if self.positives.len() != n {
            return Err(UmtError::Alignment {
                id: id(),
                detail: format!("positives length {} != clip count {n}", self.positives.len()),
            });
        }
        if self.saliency.iter().any(|s| !s.is_finite()) {
            return Err(UmtError::NonFinite {
                id: id(),
                what: "saliency".into(),
            });
        }
        if self.saliency.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(UmtError::Annotation {
                id: id(),
                detail: "saliency outside [0, 1]".into(),
            });
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return Err(UmtError::Annotation {
                id: id(),
                detail: format!("clip_seconds {} must be positive", self.clip_seconds),
            });
        }
        for m in &self.moments {
            m.validate(n).map_err(|detail| UmtError::Annotation { id: id(), detail })?;
        }
        Ok(())
    }
}

// ── Binary matrices ─────────────────────────────────────────────────────

pub fn write_matrix(path: &Path, values: &Tensor) -> Result<()> {
    let (rows, cols) = (values.rows(), values.cols());
    let mut buf = Vec::with_capacity(8 + 4 * values.numel());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| UmtError::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| UmtError::io(path, e))?;
    let bad = |detail: String| UmtError::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(bad("shorter than the 8-byte header".into()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(bad(format!(
            "header says {rows}x{cols} ({expected} bytes), file has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::matrix(rows, cols, data)
}

// ── Manifest ────────────────────────────────────────────────────────────

fn default_threshold() -> f64 {
    0.5
}

fn default_version() -> u32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_path: Option<String>,
    #[serde(default)]
    pub moments: Vec<MomentAnnotation>,
    pub saliency: Vec<f64>,
    /// Explicit highlight positives; derived from `saliency` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positives: Option<Vec<bool>>,
    pub clip_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub version: u32,
    /// 0 for 0-based clip coordinates, 1 for 1-based ones (converted on load).
    #[serde(default)]
    pub coordinate_base: u8,
    /// Clips with saliency at or above this value count as highlight
    /// positives when an entry has no explicit `positives`.
    #[serde(default = "default_threshold")]
    pub positive_threshold: f64,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Full(Manifest),
    Bare(Vec<ManifestEntry>),
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| UmtError::io(path, e))?;
    let parsed: ManifestFile = serde_json::from_str(&text).map_err(|e| UmtError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(match parsed {
        ManifestFile::Full(m) => m,
        ManifestFile::Bare(samples) => Manifest {
            version: 1,
            coordinate_base: 0,
            positive_threshold: default_threshold(),
            samples,
        },
    })
}

fn load_sequence(base: &Path, id: &str, rel: Option<&str>, modality: Modality) -> Result<Option<FeatureSequence>> {
    let Some(rel) = rel else { return Ok(None) };
    let path = base.join(rel);
    if !path.exists() {
        return Err(UmtError::MissingFile {
            id: id.to_string(),
            path,
        });
    }
    let values = read_matrix(&path)?;
    if values.rows() == 0 {
        return Err(UmtError::Alignment {
            id: id.to_string(),
            detail: format!("{} features are empty", modality.as_str()),
        });
    }
    FeatureSequence::new(modality, values).map(Some)
}

/// Loads every manifest entry, validating each sample. Relative feature
/// paths resolve against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<VideoSample>> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let shift = match manifest.coordinate_base {
        0 => 0.0,
        1 => 1.0,
        b => {
            return Err(UmtError::Format {
                path: manifest_path.to_path_buf(),
                detail: format!("coordinate_base must be 0 or 1, got {b}"),
            })
        }
    };
    manifest
        .samples
        .iter()
        .map(|e| {
            let sample = VideoSample {
                id: e.id.clone(),
                visual: load_sequence(base, &e.id, e.visual_path.as_deref(), Modality::Visual)?,
                audio: load_sequence(base, &e.id, e.audio_path.as_deref(), Modality::Audio)?,
                text: load_sequence(base, &e.id, e.text_path.as_deref(), Modality::Text)?,
                moments: e
                    .moments
                    .iter()
                    .map(|m| MomentAnnotation {
                        center: m.center - shift,
                        window: m.window,
                    })
                    .collect(),
                saliency: e.saliency.clone(),
                positives: e
                    .positives
                    .clone()
                    .unwrap_or_else(|| e.saliency.iter().map(|s| *s >= manifest.positive_threshold).collect()),
                clip_seconds: e.clip_seconds,
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}

fn file_stem(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{index:05}_{clean}")
}

/// Writes `samples` as `manifest.json` plus one matrix file per modality into
/// `dir`, returning the manifest path.
pub fn write_dataset(dir: &Path, samples: &[VideoSample], positive_threshold: f64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| UmtError::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let stem = file_stem(i, &s.id);
        let write = |seq: &Option<FeatureSequence>| -> Result<Option<String>> {
            match seq {
                Some(seq) => {
                    let name = format!("{stem}.{}.bin", seq.modality.as_str());
                    write_matrix(&dir.join(&name), seq.values())?;
                    Ok(Some(name))
                }
                None => Ok(None),
            }
        };
        entries.push(ManifestEntry {
            id: s.id.clone(),
            visual_path: write(&s.visual)?,
            audio_path: write(&s.audio)?,
            text_path: write(&s.text)?,
            moments: s.moments.clone(),
            saliency: s.saliency.clone(),
            positives: Some(s.positives.clone()),
            clip_seconds: s.clip_seconds,
        });
    }
    let manifest = Manifest {
        version: 1,
        coordinate_base: 0,
        positive_threshold,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| UmtError::io(&path, e))?;
    Ok(path)
}

// ── Synthetic data ──────────────────────────────────────────────────────

/// Parameters of the synthetic dataset generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub videos: usize,
    pub clips: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub text_tokens: usize,
    pub min_moments: usize,
    pub max_moments: usize,
    pub min_window: f64,
    pub max_window: f64,
    /// Minimum distance between quantized moment centers, in clips.
    pub separation: usize,
    /// Amplitude of the planted offset relative to unit-variance noise.
    pub snr: f64,
    pub clip_seconds: f64,
    pub with_visual: bool,
    pub with_audio: bool,
    pub with_text: bool,
    /// Dimensionality of the latent concept shared by text and moments.
    pub concepts: usize,
    /// In-moment clips get saliency (and signal strength) in [this, 1].
    pub min_attenuation: f64,
    pub allow_empty: bool,
    pub positive_threshold: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            videos: 8,
            clips: 16,
            visual_dim: 16,
            audio_dim: 8,
            text_dim: 12,
            text_tokens: 4,
            min_moments: 1,
            max_moments: 2,
            min_window: 2.0,
            max_window: 5.0,
            separation: 2,
            snr: 2.0,
            clip_seconds: 2.0,
            with_visual: true,
            with_audio: true,
            with_text: true,
            concepts: 4,
            min_attenuation: 0.6,
            allow_empty: false,
            positive_threshold: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(UmtError::InvalidArgument(format!("synth spec: {m}")));
        if self.clips < 2 {
            return bad("clips must be at least 2");
        }
        if self.videos == 0 {
            return bad("videos must be positive");
        }
        if !self.with_visual && !self.with_audio {
            return bad("at least one of visual/audio is required");
        }
        if self.min_moments > self.max_moments {
            return bad("min_moments exceeds max_moments");
        }
        if self.min_moments == 0 && !self.allow_empty {
            return bad("zero moments requested but allow_empty is false");
        }
        if !(self.min_window >= 1.0 && self.max_window >= self.min_window && self.max_window <= self.clips as f64) {
            return bad("windows must satisfy 1 <= min_window <= max_window <= clips");
        }
        if self.visual_dim == 0 || self.audio_dim == 0 || self.text_dim == 0 || self.concepts == 0 {
            return bad("dimensions must be positive");
        }
        if self.with_text && self.text_tokens == 0 {
            return bad("text_tokens must be positive when text is enabled");
        }
        if !(0.0..=1.0).contains(&self.min_attenuation) || self.snr < 0.0 {
            return bad("min_attenuation must lie in [0, 1] and snr must be nonnegative");
        }
        Ok(())
    }
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

fn place_moments(spec: &SynthSpec, rng: &mut RngState, count: usize) -> Option<Vec<MomentAnnotation>> {
    let extent = spec.clips as f64;
    let mut placed: Vec<MomentAnnotation> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return None;
        }
        let window = rng.uniform_range(spec.min_window, spec.max_window);
        let center = rng.uniform_range(window / 2.0, extent - window / 2.0);
        let cand = MomentAnnotation { center, window };
        let qc = quantize_center(center, spec.clips);
        let clash = placed.iter().any(|m| {
            let overlap = cand.start() < m.end() && m.start() < cand.end();
            overlap || quantize_center(m.center, spec.clips).abs_diff(qc) < spec.separation
        });
        if !clash {
            placed.push(cand);
        }
    }
    placed.sort_by(|a, b| a.center.total_cmp(&b.center));
    Some(placed)
}

/// Generates `spec.videos` samples with planted moments.
///
/// Each video draws a latent concept `u`. Clips inside a moment receive a
/// per-modality offset `snr · a_i · (u · M_m)` on top of unit Gaussian noise,
/// where `a_i` is the clip's attenuation (also its saliency target) and `M_m`
/// is a dataset-wide random projection. Text tokens are noisy projections of
/// the same concept.
pub fn synthesize_dataset(spec: &SynthSpec, rng: &mut RngState) -> Result<Vec<VideoSample>> {
    spec.validate()?;
    let k = spec.concepts;
    let basis_v = Tensor::normal(&[k, spec.visual_dim], 1.0, rng);
    let basis_a = Tensor::normal(&[k, spec.audio_dim], 1.0, rng);
    let basis_t = Tensor::normal(&[k, spec.text_dim], 1.0, rng);
    let project = |u: &[f64], basis: &Tensor| -> Vec<f64> {
        (0..basis.cols())
            .map(|j| (0..k).map(|c| u[c] * basis.get2(c, j)).sum())
            .collect()
    };

    let mut out = Vec::with_capacity(spec.videos);
    for vid in 0..spec.videos {
        let mut u: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|x| *x /= norm);

        let count = rng.int_inclusive(spec.min_moments, spec.max_moments);
        let moments = place_moments(spec, rng, count).ok_or_else(|| {
            UmtError::InvalidArgument(format!(
                "synth spec: cannot place {count} moments in {} clips with separation {}",
                spec.clips, spec.separation
            ))
        })?;

        let mut saliency = vec![0.0; spec.clips];
        for (i, s) in saliency.iter_mut().enumerate() {
            let mid = i as f64 + 0.5;
            if moments.iter().any(|m| mid >= m.start() && mid <= m.end()) {
                *s = rng.uniform_range(spec.min_attenuation, 1.0);
            }
        }

        let mut clip_features = |dim: usize, basis: &Tensor, modality: Modality| -> Result<FeatureSequence> {
            let signal = project(&u, basis);
            let mut data = Vec::with_capacity(spec.clips * dim);
            for &att in &saliency {
                for s in &signal {
                    data.push(f32_round(rng.normal() + spec.snr * att * s));
                }
            }
            FeatureSequence::new(modality, Tensor::matrix(spec.clips, dim, data)?)
        };
        let visual = if spec.with_visual {
            Some(clip_features(spec.visual_dim, &basis_v, Modality::Visual)?)
        } else {
            None
        };
        let audio = if spec.with_audio {
            Some(clip_features(spec.audio_dim, &basis_a, Modality::Audio)?)
        } else {
            None
        };
        let text = if spec.with_text {
            let signal = project(&u, &basis_t);
            let mut data = Vec::with_capacity(spec.text_tokens * spec.text_dim);
            for _ in 0..spec.text_tokens {
                for s in &signal {
                    data.push(f32_round(s + 0.3 * rng.normal()));
                }
            }
            Some(FeatureSequence::new(
                Modality::Text,
                Tensor::matrix(spec.text_tokens, spec.text_dim, data)?,
            )?)
        } else {
            None
        };

        let positives = saliency.iter().map(|s| *s >= spec.positive_threshold && *s > 0.0).collect();
        let sample = VideoSample {
            id: format!("synth_{vid:04}"),
            visual,
            audio,
            text,
            moments,
            saliency,
            positives,
            clip_seconds: spec.clip_seconds,
        };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}
