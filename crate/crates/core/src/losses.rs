//! Supervision targets and the four training objectives.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Result, UmtError};
use crate::features_io::MomentAnnotation;
use crate::tensor::Tensor;

/// Probabilities entering a logarithm are clamped to `[EPS, 1 - EPS]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub saliency: f64,
    pub center: f64,
    pub window: f64,
    pub offset: f64,
    /// Focal weighting exponent on the prediction.
    pub alpha: f64,
    /// Focal exponent on the soft negative target.
    pub gamma: f64,
    /// Kernel radius factor: `r = mu · window`.
    pub mu: f64,
    /// Kernel spread factor: `sigma = rho · (r + 1)`.
    pub rho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            saliency: 3.0,
            center: 1.0,
            window: 0.1,
            offset: 1.0,
            alpha: 2.0,
            gamma: 4.0,
            mu: 0.2,
            rho: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.saliency,
            self.center,
            self.window,
            self.offset,
            self.alpha,
            self.gamma,
            self.mu,
            self.rho,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(UmtError::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.rho == 0.0 {
            return Err(UmtError::Config("rho must be positive".into()));
        }
        Ok(())
    }
}

/// Quantized heatmap position of a continuous center: nearest clip index,
/// with exact halves rounding down, clamped into `[0, n_clips)`.
pub fn quantize_center(center: f64, n_clips: usize) -> usize {
    let q = (center - 0.5).ceil().max(0.0) as usize;
    q.min(n_clips.saturating_sub(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    /// Gaussian center heatmap, exactly 1 at every quantized center.
    pub heatmap: Vec<f64>,
    pub center_indices: Vec<usize>,
    pub window_targets: Vec<f64>,
    /// Continuous center minus its quantized index.
    pub offset_targets: Vec<f64>,
    pub saliency_targets: Vec<f64>,
}

impl TargetSet {
    pub fn n_clips(&self) -> usize {
        self.heatmap.len()
    }

    pub fn n_moments(&self) -> usize {
        self.center_indices.len()
    }

    /// Dense per-clip window array holding each target at its center.
    pub fn dense_windows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_clips()];
        for (&c, &w) in self.center_indices.iter().zip(&self.window_targets) {
            out[c] = w;
        }
        out
    }

    pub fn dense_offsets(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_clips()];
        for (&c, &o) in self.center_indices.iter().zip(&self.offset_targets) {
            out[c] = o;
        }
        out
    }
}

/// Kernel spread for a moment of `window` clips.
pub fn kernel_sigma(window: f64, params: &LossWeights) -> f64 {
    let radius = params.mu * window;
    params.rho * (radius + 1.0)
}

pub fn build_targets(moments: &[MomentAnnotation], saliency: &[f64], n_clips: usize, params: &LossWeights) -> Result<TargetSet> {
    if saliency.len() != n_clips {
        return Err(UmtError::ShapeMismatch {
            op: "build_targets",
            left: vec![saliency.len()],
            right: vec![n_clips],
        });
    }
    let mut heatmap = vec![0.0f64; n_clips];
    let mut center_indices = Vec::with_capacity(moments.len());
    let mut window_targets = Vec::with_capacity(moments.len());
    let mut offset_targets = Vec::with_capacity(moments.len());
    for m in moments {
        if !(m.center >= 0.0 && m.center < n_clips as f64) {
            return Err(UmtError::InvalidArgument(format!(
                "moment center {} outside [0, {n_clips})",
                m.center
            )));
        }
        if !(m.window > 0.0) {
            return Err(UmtError::InvalidArgument(format!("moment window {} must be positive", m.window)));
        }
        let q = quantize_center(m.center, n_clips);
        let sigma = kernel_sigma(m.window, params);
        for (x, h) in heatmap.iter_mut().enumerate() {
            let d = x as f64 - q as f64;
            *h = f64::max(*h, (-(d * d) / (2.0 * sigma * sigma)).exp());
        }
        center_indices.push(q);
        window_targets.push(m.window);
        offset_targets.push(m.center - q as f64);
    }
    Ok(TargetSet {
        heatmap,
        center_indices,
        window_targets,
        offset_targets,
        saliency_targets: saliency.to_vec(),
    })
}

fn check_len(op: &'static str, tape: &Tape, pred: Var, n: usize) -> Result<()> {
    if tape.value(pred).numel() != n {
        return Err(UmtError::ShapeMismatch {
            op,
            left: tape.shape(pred).to_vec(),
            right: vec![n],
        });
    }
    Ok(())
}

/// Mean binary cross-entropy over clips; soft targets allowed.
pub fn saliency_loss(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    check_len("saliency_loss", tape, pred, target.len())?;
    let shape = tape.shape(pred).to_vec();
    let p = tape.clamp(pred, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = tape.log(p)?;
    let q = tape.affine(p, -1.0, 1.0);
    let log_q = tape.log(q)?;
    let t = tape.constant(Tensor::new(shape.clone(), target.to_vec())?);
    let t_neg = tape.constant(Tensor::new(shape, target.iter().map(|v| 1.0 - v).collect())?);
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(t_neg, log_q)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll);
    Ok(tape.scale(m, -1.0))
}

/// Gaussian focal loss on the center heatmap, normalized by the number of
/// moments. Coordinates with target exactly 1 are positives.
pub fn focal_center_loss(tape: &mut Tape, pred: Var, target: &[f64], n_moments: usize, params: &LossWeights) -> Result<Var> {
    check_len("focal_center_loss", tape, pred, target.len())?;
    if n_moments == 0 {
        log::warn!("focal_center_loss called with no moments; returning 0");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let shape = tape.shape(pred).to_vec();
    let pos_mask: Vec<f64> = target.iter().map(|h| if *h == 1.0 { 1.0 } else { 0.0 }).collect();
    let neg_weight: Vec<f64> = target
        .iter()
        .map(|h| if *h == 1.0 { 0.0 } else { (1.0 - h).powf(params.gamma) })
        .collect();

    let p = tape.clamp(pred, PROB_EPS, 1.0 - PROB_EPS);
    let q = tape.affine(p, -1.0, 1.0);
    let log_p = tape.log(p)?;
    let log_q = tape.log(q)?;

    let q_alpha = tape.powf(q, params.alpha)?;
    let pos = tape.mul(q_alpha, log_p)?;
    let mask = tape.constant(Tensor::new(shape.clone(), pos_mask)?);
    let pos = tape.mul(pos, mask)?;

    let p_alpha = tape.powf(p, params.alpha)?;
    let neg = tape.mul(p_alpha, log_q)?;
    let w = tape.constant(Tensor::new(shape, neg_weight)?);
    let neg = tape.mul(neg, w)?;

    let both = tape.add(pos, neg)?;
    let s = tape.sum(both);
    Ok(tape.scale(s, -1.0 / n_moments as f64))
}

/// L1 window and offset losses, read only at the ground-truth centers.
pub fn regression_losses(tape: &mut Tape, pred_window: Var, pred_offset: Var, targets: &TargetSet) -> Result<(Var, Var)> {
    let n = targets.n_clips();
    check_len("regression_losses", tape, pred_window, n)?;
    check_len("regression_losses", tape, pred_offset, n)?;
    let count = targets.n_moments();
    if count == 0 {
        let z = tape.constant(Tensor::scalar(0.0));
        return Ok((z, z));
    }
    let mut l1 = |pred: Var, goal: &[f64]| -> Result<Var> {
        let picked = tape.gather(pred, &targets.center_indices)?;
        let goal = tape.constant(Tensor::vector(goal.to_vec()));
        let diff = tape.sub(goal, picked)?;
        let a = tape.abs(diff);
        Ok(tape.mean(a))
    };
    let lw = l1(pred_window, &targets.window_targets)?;
    let lo = l1(pred_offset, &targets.offset_targets)?;
    Ok((lw, lo))
}

/// Unweighted loss components of one sample (or a batch average).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub saliency: f64,
    pub center: f64,
    pub window: f64,
    pub offset: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        let mut t = 0.0;
        for (weight, value) in [
            (w.saliency, self.saliency),
            (w.center, self.center),
            (w.window, self.window),
            (w.offset, self.offset),
        ] {
            if weight != 0.0 {
                t += weight * value;
            }
        }
        t
    }
}

/// Loss components as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub saliency: Var,
    pub center: Var,
    pub window: Var,
    pub offset: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossComponents {
        LossComponents {
            saliency: tape.value(self.saliency).item(),
            center: tape.value(self.center).item(),
            window: tape.value(self.window).item(),
            offset: tape.value(self.offset).item(),
        }
    }
}

/// Weighted sum of the components. Zero-weighted terms are left out of the
/// graph entirely.
pub fn total_loss(tape: &mut Tape, parts: &LossVars, w: &LossWeights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (weight, v) in [
        (w.saliency, parts.saliency),
        (w.center, parts.center),
        (w.window, parts.window),
        (w.offset, parts.offset),
    ] {
        if weight == 0.0 {
            continue;
        }
        let term = tape.scale(v, weight);
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).item()
    }

    #[test]
    fn quantization_rounds_half_down_and_clamps() {
        assert_eq!(quantize_center(5.0, 16), 5);
        assert_eq!(quantize_center(5.3, 16), 5);
        assert_eq!(quantize_center(5.5, 16), 5);
        assert_eq!(quantize_center(5.51, 16), 6);
        assert_eq!(quantize_center(0.2, 16), 0);
        assert_eq!(quantize_center(15.5, 16), 15);
        assert_eq!(quantize_center(15.9, 16), 15);
    }

    #[test]
    fn heatmap_example() {
        let w = LossWeights::default();
        let m = MomentAnnotation { center: 5.0, window: 10.0 };
        let t = build_targets(&[m], &[0.0; 12], 12, &w).unwrap();
        assert_eq!(kernel_sigma(10.0, &w), 0.2 * (2.0 + 1.0));
        assert!((kernel_sigma(10.0, &w) - 0.6).abs() < 1e-15);
        assert_eq!(t.heatmap[5], 1.0);
        assert!((t.heatmap[6] - 0.249_352_208_777_296_4).abs() < 1e-12);
        assert_eq!(t.offset_targets, vec![0.0]);
        assert_eq!(t.center_indices, vec![5]);
    }

    #[test]
    fn center_outside_is_rejected() {
        let m = MomentAnnotation { center: 12.0, window: 2.0 };
        assert!(build_targets(&[m], &[0.0; 12], 12, &LossWeights::default()).is_err());
    }

    #[test]
    fn bce_half_is_ln2() {
        let v = scalar(|t| {
            let p = t.constant(Tensor::vector(vec![0.5; 4]));
            saliency_loss(t, p, &[0.5; 4])
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_near_perfect() {
        let v = scalar(|t| {
            let p = t.constant(Tensor::vector(vec![1.0, 0.0, 1.0]));
            saliency_loss(t, p, &[1.0, 0.0, 1.0])
        });
        assert!(v >= 0.0 && v < 1e-5, "{v}");
    }

    #[test]
    fn focal_single_positive_hand_value() {
        let w = LossWeights::default();
        let v = scalar(|t| {
            let p = t.constant(Tensor::vector(vec![0.5]));
            focal_center_loss(t, p, &[1.0], 1, &w)
        });
        // (1 - 0.5)^2 * -ln 0.5
        assert!((v - 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn focal_no_moments_is_zero() {
        let v = scalar(|t| {
            let p = t.constant(Tensor::vector(vec![0.3, 0.2]));
            focal_center_loss(t, p, &[0.0, 0.0], 0, &LossWeights::default())
        });
        assert_eq!(v, 0.0);
    }

    #[test]
    fn regression_hand_value() {
        let targets = TargetSet {
            heatmap: vec![0.0, 1.0, 0.0],
            center_indices: vec![1],
            window_targets: vec![4.0],
            offset_targets: vec![0.25],
            saliency_targets: vec![0.0; 3],
        };
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::vector(vec![9.0, 3.5, -2.0]));
        let o = tape.constant(Tensor::vector(vec![5.0, 0.0, 7.0]));
        let (lw, lo) = regression_losses(&mut tape, w, o, &targets).unwrap();
        assert_eq!(tape.value(lw).item(), 0.5);
        assert_eq!(tape.value(lo).item(), 0.25);
    }

    #[test]
    fn total_with_defaults() {
        let ones = LossComponents {
            saliency: 1.0,
            center: 1.0,
            window: 1.0,
            offset: 1.0,
        };
        assert!((ones.total(&LossWeights::default()) - 5.1).abs() < 1e-12);
        assert_eq!(LossComponents::default().total(&LossWeights::default()), 0.0);

        let mut tape = Tape::new();
        let vars = LossVars {
            saliency: tape.constant(Tensor::scalar(f64::NAN)),
            center: tape.constant(Tensor::scalar(1.0)),
            window: tape.constant(Tensor::scalar(1.0)),
            offset: tape.constant(Tensor::scalar(1.0)),
        };
        let w = LossWeights {
            saliency: 0.0,
            ..LossWeights::default()
        };
        let t = total_loss(&mut tape, &vars, &w).unwrap();
        assert!((tape.value(t).item() - 2.1).abs() < 1e-12);
    }
}
