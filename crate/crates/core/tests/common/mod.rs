//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use umt_core::decoding::MomentPrediction;
use umt_core::Tensor;

/// Row `i` of a 2-D tensor as a slice.
pub fn row(t: &Tensor, i: usize) -> &[f64] {
    let c = t.shape()[1];
    &t.data()[i * c..(i + 1) * c]
}

fn vec_mat(v: &[f64], m: &Tensor) -> Vec<f64> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    assert_eq!(v.len(), r);
    let mut out = vec![0.0; c];
    for k in 0..r {
        for j in 0..c {
            out[j] += v[k] * m.data()[k * c + j];
        }
    }
    out
}

/// Residual multi-head attention evaluated one (query, key) pair at a time:
/// `x_i + W_z · concat_h Σ_j softmax_j(q_i^h · k_j^h / s) v_j^h` with
/// `q = (x + p_q) W_q`, `k = (y + p_k) W_k`, `v = y W_v`.
#[allow(clippy::too_many_arguments)]
pub fn naive_attention(
    queries: &Tensor,
    keys: &Tensor,
    q_pos: Option<&Tensor>,
    k_pos: Option<&Tensor>,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    wz: &Tensor,
    heads: usize,
    scaled: bool,
) -> Vec<Vec<f64>> {
    let nq = queries.shape()[0];
    let nk = keys.shape()[0];
    let d = queries.shape()[1];
    let hd = d / heads;
    let with = |x: &Tensor, p: Option<&Tensor>, i: usize| -> Vec<f64> {
        let mut r = row(x, i).to_vec();
        if let Some(p) = p {
            for (a, b) in r.iter_mut().zip(row(p, i)) {
                *a += b;
            }
        }
        r
    };
    let q: Vec<Vec<f64>> = (0..nq).map(|i| vec_mat(&with(queries, q_pos, i), wq)).collect();
    let k: Vec<Vec<f64>> = (0..nk).map(|j| vec_mat(&with(keys, k_pos, j), wk)).collect();
    let v: Vec<Vec<f64>> = (0..nk).map(|j| vec_mat(row(keys, j), wv)).collect();
    let scale = if scaled { (hd as f64).sqrt() } else { 1.0 };
    let mut out = Vec::with_capacity(nq);
    for i in 0..nq {
        let mut merged = vec![0.0; d];
        for h in 0..heads {
            let cols = h * hd..(h + 1) * hd;
            let scores: Vec<f64> = (0..nk)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / scale)
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..nk {
                for c in cols.clone() {
                    merged[c] += e[j] / z * v[j][c];
                }
            }
        }
        let upd = vec_mat(&merged, wz);
        out.push(row(queries, i).iter().zip(&upd).map(|(a, b)| a + b).collect());
    }
    out
}

pub fn max_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    let mut m: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        for (x, y) in r.iter().zip(row(b, i)) {
            m = m.max((x - y).abs());
        }
    }
    m
}

// ----- metric oracles -----

pub fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let inter = if hi > lo { hi - lo } else { 0.0 };
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if a.1 <= a.0 || b.1 <= b.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Ranked order by selection: repeatedly take the best remaining prediction.
pub fn oracle_rank(preds: &[MomentPrediction]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..preds.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for pos in 1..left.len() {
            let (a, b) = (&preds[left[pos]], &preds[left[best]]);
            let better = a.confidence > b.confidence || (a.confidence == b.confidence && a.start < b.start);
            if better {
                best = pos;
            }
        }
        out.push(left.remove(best));
    }
    out
}

/// Per ranked prediction: does it claim an unclaimed ground truth, choosing
/// the highest-IoU unclaimed one (lowest index on ties)?
pub fn oracle_match(preds: &[MomentPrediction], gts: &[(f64, f64)], t: f64) -> Vec<bool> {
    let mut claimed = vec![false; gts.len()];
    oracle_rank(preds)
        .into_iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] {
                    continue;
                }
                let v = iou((preds[p].start, preds[p].end), *gt);
                if v >= t && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    claimed[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Interpolated AP: each relevant rank contributes the best precision at any
/// rank reaching at least its recall.
pub fn oracle_ap(relevant: &[bool], n_relevant: usize) -> f64 {
    if n_relevant == 0 {
        return 0.0;
    }
    let prec: Vec<f64> = (0..relevant.len())
        .map(|i| relevant[..=i].iter().filter(|r| **r).count() as f64 / (i + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for i in 0..relevant.len() {
        if relevant[i] {
            let best = prec[i..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            sum += best;
        }
    }
    sum / n_relevant as f64
}

pub fn oracle_recall(preds: &[Vec<MomentPrediction>], gts: &[Vec<(f64, f64)>], k: usize, t: f64) -> f64 {
    let mut hit = 0;
    let mut n = 0;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        n += 1;
        let top = oracle_rank(p);
        if top.iter().take(k).any(|&i| g.iter().any(|gt| iou((p[i].start, p[i].end), *gt) >= t)) {
            hit += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Clips ranked by selection on (score desc, index asc).
pub fn oracle_rank_scores(s: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..s.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for pos in 1..left.len() {
            if s[left[pos]] > s[left[best]] {
                best = pos;
            }
        }
        out.push(left.remove(best));
    }
    out
}
