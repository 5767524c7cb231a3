use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor, Var};

use super::layers::{dropout, leaky_relu, LayerNorm, Linear, LEAKY_SLOPE};
use super::{Ctx, ParamId, ParamStore};
use super::params::xavier_uniform;

/// Tolerance on attention row sums when debug checks are on.
pub const ATTENTION_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub n_heads: usize,
    /// Projection width `k` of each head.
    pub head_dim: usize,
    pub model_dim: usize,
    /// Applied to the attention probability matrix.
    pub attention_dropout: f64,
    /// Applied to the feed-forward hidden activations.
    pub ffn_dropout: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            n_heads: 3,
            head_dim: 48,
            model_dim: 48,
            attention_dropout: 0.2,
            ffn_dropout: 0.1,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_heads == 0 || self.head_dim == 0 || self.model_dim == 0 {
            return Err(format!("attention sizes must be >= 1: {self:?}"));
        }
        for (name, p) in [("attention_dropout", self.attention_dropout), ("ffn_dropout", self.ffn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Softmax along the trailing axis, with the row maximum subtracted first.
pub fn softmax_last(ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
    let value = ctx.tape.value(x);
    let cols = value.last_dim();
    let maxes: Vec<f64> = value
        .data()
        .chunks(cols)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut max_shape = value.shape().to_vec();
    if let Some(last) = max_shape.last_mut() {
        *last = 1;
    } else {
        max_shape.push(1);
    }
    let maxes = ctx.tape.constant(Tensor::new(max_shape, maxes)?);
    let t = &mut *ctx.tape;
    let shifted = t.sub(x, maxes)?;
    let e = t.exp(shifted)?;
    let z = t.sum_last(e)?;
    t.div(e, z)
}

/// `softmax(Q Kᵀ / sqrt(k)) V` for `[batch, seq, k]` operands, with dropout
/// on the probability matrix.
pub fn attention(ctx: &mut Ctx, q: Var, k: Var, v: Var, dropout_p: f64) -> Result<Var, AutodiffError> {
    let (qs, ks, vs) = (ctx.tape.shape(q).to_vec(), ctx.tape.shape(k).to_vec(), ctx.tape.shape(v).to_vec());
    if qs.len() != 3 || qs != ks || ks[..2] != vs[..2] {
        return Err(AutodiffError::Shape {
            op: "attention",
            detail: format!("Q {qs:?}, K {ks:?}, V {vs:?}"),
        });
    }
    let width = qs[2] as f64;
    let kt = ctx.tape.transpose(k)?;
    let scores = ctx.tape.matmul(q, kt)?;
    let scaled = ctx.tape.scale(scores, 1.0 / width.sqrt())?;
    let probs = softmax_last(ctx, scaled)?;
    if ctx.debug_checks() {
        let pv = ctx.tape.value(probs);
        let cols = pv.last_dim();
        let worst = pv
            .data()
            .chunks(cols)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        ctx.note_attention_row_error(worst);
        if worst > ATTENTION_ROW_TOL {
            return Err(AutodiffError::Invariant(format!(
                "attention row sums deviate from 1 by {worst:e}"
            )));
        }
    }
    let probs = dropout(ctx, probs, dropout_p)?;
    ctx.tape.matmul(probs, v)
}

#[derive(Debug, Clone)]
pub struct HeadProjections {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Post-norm Transformer encoder layer: multi-head self-attention and a
/// position-wise feed-forward network, each wrapped as
/// `LayerNorm(x + sublayer(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub config: AttentionConfig,
    pub heads: Vec<HeadProjections>,
    /// `n_heads * head_dim -> model_dim`.
    pub output: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_attention: LayerNorm,
    pub norm_ffn: LayerNorm,
    pub ffn_hidden: usize,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, config: AttentionConfig, rng: &mut impl Rng) -> Self {
        let AttentionConfig { n_heads, head_dim, model_dim, .. } = config;
        let heads = (0..n_heads)
            .map(|h| HeadProjections {
                query: store.add(format!("{prefix}.head{h}.query"), xavier_uniform(rng, model_dim, head_dim)),
                key: store.add(format!("{prefix}.head{h}.key"), xavier_uniform(rng, model_dim, head_dim)),
                value: store.add(format!("{prefix}.head{h}.value"), xavier_uniform(rng, model_dim, head_dim)),
            })
            .collect();
        let output = Linear::new(store, &format!("{prefix}.attn_out"), n_heads * head_dim, model_dim, true, rng);
        let ffn_hidden = 4 * model_dim;
        let ffn_in = Linear::new(store, &format!("{prefix}.ffn_in"), model_dim, ffn_hidden, true, rng);
        let ffn_out = Linear::new(store, &format!("{prefix}.ffn_out"), ffn_hidden, model_dim, true, rng);
        assert_eq!(ffn_in.out_dim, 4 * model_dim, "feed-forward width must be 4 x model_dim");
        Self {
            config,
            heads,
            output,
            ffn_in,
            ffn_out,
            norm_attention: LayerNorm::new(store, &format!("{prefix}.norm_attn"), model_dim),
            norm_ffn: LayerNorm::new(store, &format!("{prefix}.norm_ffn"), model_dim),
            ffn_hidden,
        }
    }

    /// Concatenated head outputs, `[batch, seq, n_heads * head_dim]`.
    pub fn heads_forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (wq, wk, wv) = (ctx.param(head.query), ctx.param(head.key), ctx.param(head.value));
            let q = ctx.tape.matmul(x, wq)?;
            let k = ctx.tape.matmul(x, wk)?;
            let v = ctx.tape.matmul(x, wv)?;
            outs.push(attention(ctx, q, k, v, self.config.attention_dropout)?);
        }
        ctx.tape.concat(&outs, 2)
    }

    /// `LayerNorm(x + W_o concat(heads))`.
    pub fn attention_sublayer(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        self.check_input(ctx, x)?;
        let heads = self.heads_forward(ctx, x)?;
        let projected = self.output.forward(ctx, heads)?;
        let residual = ctx.tape.add(x, projected)?;
        self.norm_attention.forward(ctx, residual)
    }

    /// `LayerNorm(x + W_2 dropout(act(W_1 x)))`.
    pub fn ffn_sublayer(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        let hidden = self.ffn_in.forward(ctx, x)?;
        let hidden = leaky_relu(ctx, hidden, LEAKY_SLOPE)?;
        let hidden = dropout(ctx, hidden, self.config.ffn_dropout)?;
        let out = self.ffn_out.forward(ctx, hidden)?;
        let residual = ctx.tape.add(x, out)?;
        self.norm_ffn.forward(ctx, residual)
    }

    /// `[batch, seq, model_dim] -> [batch, seq, model_dim]`.
    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        let h = self.attention_sublayer(ctx, x)?;
        self.ffn_sublayer(ctx, h)
    }

    fn check_input(&self, ctx: &Ctx, x: Var) -> Result<(), AutodiffError> {
        let sh = ctx.tape.shape(x);
        if sh.len() != 3 || sh[2] != self.config.model_dim {
            return Err(AutodiffError::Shape {
                op: "transformer_block",
                detail: format!("expected [batch, seq, {}], got {:?}", self.config.model_dim, sh),
            });
        }
        Ok(())
    }
}
