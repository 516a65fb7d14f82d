//! Transformer building blocks: multi-head attention in its three roles
//! (clip self-attention, bottleneck compression, bottleneck expansion),
//! position-wise feed-forward networks and learnable positional tables.
//!
//! All attention blocks are residual: the output is the query-side input plus
//! the projected attention update. When a block carries pre-norm layers they
//! normalize the attention inputs only; the residual path stays unnormalized.

use crate::autograd::Var;
use crate::error::{Result, UmtError};
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::session::Session;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut RngState) -> Self {
        let weight = store.add_weight(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self { weight, bias }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.param(self.gain);
        let b = s.param(self.bias);
        s.tape.layer_norm(x, g, b)
    }
}

/// Projection weights of one multi-head attention.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_z: ParamId,
    pub heads: usize,
    pub model_dim: usize,
    /// Scale scores by 1/√head_dim. Off reproduces the bare exp(q·k) form.
    pub scaled: bool,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, name: &str, model_dim: usize, heads: usize, rng: &mut RngState) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(UmtError::InvalidArgument(format!(
                "model_dim {model_dim} not divisible by {heads} heads"
            )));
        }
        let mut w = |suffix: &str| store.add_weight(format!("{name}.w_{suffix}"), model_dim, model_dim, rng);
        Ok(Self {
            w_q: w("q"),
            w_k: w("k"),
            w_v: w("v"),
            w_z: w("z"),
            heads,
            model_dim,
            scaled: true,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Non-residual attention update for every query row:
    /// `w_z · Σ_j softmax_j((q_i + q_pos_i) w_q · (k_j + k_pos_j) w_k) · k_j w_v`.
    /// Positional terms never enter the values.
    pub fn attend(&self, s: &mut Session, queries: Var, keys: Var, q_pos: Option<Var>, k_pos: Option<Var>) -> Result<Var> {
        let q_in = match q_pos {
            Some(p) => s.tape.add(queries, p)?,
            None => queries,
        };
        let k_in = match k_pos {
            Some(p) => s.tape.add(keys, p)?,
            None => keys,
        };
        let (wq, wk, wv, wz) = (s.param(self.w_q), s.param(self.w_k), s.param(self.w_v), s.param(self.w_z));
        let q = s.tape.matmul(q_in, wq)?;
        let k = s.tape.matmul(k_in, wk)?;
        let v = s.tape.matmul(keys, wv)?;
        let hd = self.head_dim();
        let scale = if self.scaled { 1.0 / (hd as f64).sqrt() } else { 1.0 };
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    s.tape.slice_cols(q, h * hd, hd)?,
                    s.tape.slice_cols(k, h * hd, hd)?,
                    s.tape.slice_cols(v, h * hd, hd)?,
                )
            };
            let kt = s.tape.transpose(kh)?;
            let mut scores = s.tape.matmul(qh, kt)?;
            if scale != 1.0 {
                scores = s.tape.scale(scores, scale);
            }
            let weights = s.tape.softmax(scores, 1)?;
            outs.push(s.tape.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { s.tape.concat_cols(&outs)? };
        s.tape.matmul(merged, wz)
    }
}

/// Learnable per-position table, with dropout applied on lookup.
#[derive(Clone, Debug)]
pub struct PositionalEncoding {
    pub table: ParamId,
    pub max_len: usize,
    pub dropout: f64,
}

impl PositionalEncoding {
    pub fn new(store: &mut ParamStore, name: &str, max_len: usize, model_dim: usize, dropout: f64, rng: &mut RngState) -> Self {
        let bound = 1.0 / (model_dim as f64).sqrt();
        let table = store.add(name, Tensor::uniform(&[max_len, model_dim], -bound, bound, rng));
        Self { table, max_len, dropout }
    }

    /// First `len` rows of the table.
    pub fn lookup(&self, s: &mut Session, len: usize) -> Result<Var> {
        if len > self.max_len {
            return Err(UmtError::SequenceTooLong { len, max: self.max_len });
        }
        let t = s.param(self.table);
        let rows = s.tape.slice_rows(t, 0, len)?;
        s.dropout(rows, self.dropout)
    }
}

/// Learnable bottleneck tokens shared by all videos.
#[derive(Clone, Debug)]
pub struct BottleneckTokens {
    pub tokens: ParamId,
    pub count: usize,
}

impl BottleneckTokens {
    pub fn new(store: &mut ParamStore, name: &str, count: usize, model_dim: usize, rng: &mut RngState) -> Result<Self> {
        if count == 0 {
            return Err(UmtError::InvalidArgument("at least one bottleneck token is required".into()));
        }
        let bound = 1.0 / (model_dim as f64).sqrt();
        let tokens = store.add(name, Tensor::uniform(&[count, model_dim], -bound, bound, rng));
        Ok(Self { tokens, count })
    }

    pub fn var(&self, s: &mut Session) -> Var {
        s.param(self.tokens)
    }
}

/// Residual attention with optional pre-norms on its query and key inputs.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: AttentionParams,
    pub norm_q: Option<LayerNorm>,
    /// Norm for the key/value side of cross attention. Self attention reuses
    /// the normalized queries.
    pub norm_kv: Option<LayerNorm>,
    pub dropout: f64,
}

impl AttentionBlock {
    /// A bare block: no norms, no dropout.
    pub fn plain(attn: AttentionParams) -> Self {
        Self {
            attn,
            norm_q: None,
            norm_kv: None,
            dropout: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new_prenorm(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        heads: usize,
        cross: bool,
        dropout: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        let attn = AttentionParams::new(store, &format!("{name}.attn"), model_dim, heads, rng)?;
        let norm_q = Some(LayerNorm::new(store, &format!("{name}.norm_q"), model_dim));
        let norm_kv = cross.then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), model_dim));
        Ok(Self {
            attn,
            norm_q,
            norm_kv,
            dropout,
        })
    }

    /// `queries + dropout(attend(norm(queries), norm(keys)))`; `keys = None`
    /// is self attention.
    pub fn forward(&self, s: &mut Session, queries: Var, keys: Option<Var>, q_pos: Option<Var>, k_pos: Option<Var>) -> Result<Var> {
        let q_in = match &self.norm_q {
            Some(n) => n.forward(s, queries)?,
            None => queries,
        };
        let k_in = match (keys, &self.norm_kv) {
            (None, _) => q_in,
            (Some(k), Some(n)) => n.forward(s, k)?,
            (Some(k), None) => k,
        };
        let update = self.attn.attend(s, q_in, k_in, q_pos, k_pos)?;
        let update = s.dropout(update, self.dropout)?;
        s.tape.add(queries, update)
    }
}

/// Residual `Linear → ReLU → Dropout → Linear` applied at every position.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub norm: Option<LayerNorm>,
    pub expand: Linear,
    pub contract: Linear,
    pub dropout: f64,
}

impl FeedForward {
    /// Hidden width is four times `model_dim`.
    pub fn new(store: &mut ParamStore, name: &str, model_dim: usize, dropout: f64, prenorm: bool, rng: &mut RngState) -> Self {
        let norm = prenorm.then(|| LayerNorm::new(store, &format!("{name}.norm"), model_dim));
        let expand = Linear::new(store, &format!("{name}.fc1"), model_dim, 4 * model_dim, true, rng);
        let contract = Linear::new(store, &format!("{name}.fc2"), 4 * model_dim, model_dim, true, rng);
        Self {
            norm,
            expand,
            contract,
            dropout,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = match &self.norm {
            Some(n) => n.forward(s, x)?,
            None => x,
        };
        let h = self.expand.forward(s, h)?;
        let h = s.tape.relu(h);
        let h = s.dropout(h, self.dropout)?;
        let h = self.contract.forward(s, h)?;
        let h = s.dropout(h, self.dropout)?;
        s.tape.add(x, h)
    }
}

fn lookup(s: &mut Session, pos: Option<&PositionalEncoding>, len: usize) -> Result<Option<Var>> {
    pos.map(|p| p.lookup(s, len)).transpose()
}

/// Clip self-attention; positions are added to queries and keys.
pub fn self_attention(s: &mut Session, x: Var, block: &AttentionBlock, pos: Option<&PositionalEncoding>) -> Result<Var> {
    let n = s.tape.shape(x)[0];
    let p = lookup(s, pos, n)?;
    block.forward(s, x, None, p, p)
}

/// Aggregates a clip sequence into bottleneck tokens; positions are added to
/// the clip keys only.
pub fn compress(s: &mut Session, x: Var, z: Var, block: &AttentionBlock, pos: Option<&PositionalEncoding>) -> Result<Var> {
    let n = s.tape.shape(x)[0];
    if n == 0 {
        return Err(UmtError::InvalidArgument("compress over an empty sequence".into()));
    }
    let p = lookup(s, pos, n)?;
    block.forward(s, z, Some(x), None, p)
}

/// Propagates bottleneck tokens back into every clip; positions are added to
/// the clip queries only.
pub fn expand(s: &mut Session, x: Var, z: Var, block: &AttentionBlock, pos: Option<&PositionalEncoding>) -> Result<Var> {
    let n = s.tape.shape(x)[0];
    let p = lookup(s, pos, n)?;
    block.forward(s, x, Some(z), p, None)
}

/// Reference full cross-attention between two clip sequences (each attends
/// to the other), used as the quadratic-cost baseline for the bottleneck.
pub fn full_cross_attention(s: &mut Session, a: Var, b: Var, a_from_b: &AttentionBlock, b_from_a: &AttentionBlock) -> Result<(Var, Var)> {
    let a2 = a_from_b.forward(s, a, Some(b), None, None)?;
    let b2 = b_from_a.forward(s, b, Some(a), None, None)?;
    Ok((a2, b2))
}
