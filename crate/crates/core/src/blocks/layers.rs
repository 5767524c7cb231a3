use rand::Rng;

use crate::autodiff::{AutodiffError, Tensor, Var};

use super::params::{embedding_normal, xavier_uniform};
use super::{Ctx, Mode, ParamId, ParamStore};

/// Negative-side slope of the Leaky ReLU used throughout the model.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn leaky_relu(ctx: &mut Ctx, x: Var, slope: f64) -> Result<Var, AutodiffError> {
    ctx.tape.leaky_relu(x, slope)
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`. Identity in eval mode.
pub fn dropout(ctx: &mut Ctx, x: Var, p: f64) -> Result<Var, AutodiffError> {
    if !(0.0..1.0).contains(&p) {
        return Err(AutodiffError::Invariant(format!("dropout probability {p} outside [0, 1)")));
    }
    if ctx.mode() == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let shape = ctx.tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let rng = ctx.rng()?;
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let mask = ctx.tape.constant(Tensor::new(shape, mask)?);
    ctx.tape.mul(x, mask)
}

/// Normalizes along the trailing axis to zero mean and unit variance,
/// then applies the elementwise affine `gain`, `bias`.
pub fn layer_norm(ctx: &mut Ctx, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
    let t = &mut *ctx.tape;
    let mean = t.mean_last(x)?;
    let centered = t.sub(x, mean)?;
    let sq = t.mul(centered, centered)?;
    let var = t.mean_last(sq)?;
    let shifted = t.add_scalar(var, eps)?;
    let std = t.powf(shifted, 0.5)?;
    let normed = t.div(centered, std)?;
    let scaled = t.mul(normed, gain)?;
    t.add(scaled, bias)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
            dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        let (g, b) = (ctx.param(self.gain), ctx.param(self.bias));
        layer_norm(ctx, x, g, b, LAYER_NORM_EPS)
    }
}

/// `x W + b` over the trailing axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{prefix}.weight"), xavier_uniform(rng, in_dim, out_dim));
        let bias = bias.then(|| store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var, AutodiffError> {
        let w = ctx.param(self.weight);
        let y = ctx.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = ctx.param(b);
                ctx.tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// Stack of linear layers with Leaky ReLU between them and an optional
/// activation after the last one.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_slope: f64,
    /// Leaky ReLU slope applied to the final layer, if any.
    pub output_slope: Option<f64>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden_slope: f64,
        output_slope: Option<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self {
            layers,
            hidden_slope,
            output_slope,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, ctx: &mut Ctx, mut x: Var) -> Result<Var, AutodiffError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            let slope = if i < last { Some(self.hidden_slope) } else { self.output_slope };
            if let Some(s) = slope {
                x = leaky_relu(ctx, x, s)?;
            }
        }
        Ok(x)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

/// One embedding table per categorical column; id 0 is the unknown token.
#[derive(Debug, Clone)]
pub struct ColumnEmbedding {
    pub tables: Vec<ParamId>,
    pub vocab_sizes: Vec<usize>,
    pub dim: usize,
}

impl ColumnEmbedding {
    pub fn new(store: &mut ParamStore, prefix: &str, vocab_sizes: &[usize], dim: usize, rng: &mut impl Rng) -> Self {
        let tables = vocab_sizes
            .iter()
            .enumerate()
            .map(|(c, &v)| store.add(format!("{prefix}.{c}"), embedding_normal(rng, v, dim)))
            .collect();
        Self {
            tables,
            vocab_sizes: vocab_sizes.to_vec(),
            dim,
        }
    }

    pub fn n_columns(&self) -> usize {
        self.tables.len()
    }

    /// `ids[r][c]` is the token id of column `c` in record `r`; returns
    /// `[records, columns, dim]`.
    pub fn forward(&self, ctx: &mut Ctx, ids: &[Vec<usize>]) -> Result<Var, AutodiffError> {
        let n = ids.len();
        let mut columns = Vec::with_capacity(self.tables.len());
        for (c, &table) in self.tables.iter().enumerate() {
            let col_ids = ids
                .iter()
                .map(|row| {
                    row.get(c).copied().ok_or_else(|| AutodiffError::Shape {
                        op: "column_embedding",
                        detail: format!("record has {} categorical ids, expected {}", row.len(), self.tables.len()),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let t = ctx.param(table);
            let rows = ctx.tape.gather_rows(t, &col_ids)?;
            columns.push(ctx.tape.reshape(rows, &[n, 1, self.dim])?);
        }
        ctx.tape.concat(&columns, 1)
    }
}
