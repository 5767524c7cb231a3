//! The operator network: a Transformer branch over material features, an
//! MLP trunk over stress features, combined as `Σ bᵢ tᵢ + b₀`.

mod checkpoint;
mod predictor;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use predictor::{Embeddings, TrainedModel};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor, Var};
use crate::blocks::{AttentionConfig, ColumnEmbedding, Ctx, LayerNorm, Linear, Mlp, ParamId, ParamStore, TransformerBlock};
use crate::features::{FeatureError, StandardizedInput, BRANCH_CONTINUOUS, TRUNK_FEATURES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("model config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// The deep-learning rows of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Transformer branch, all five trunk features, ML2RE loss.
    Full,
    /// Same network trained with MSE.
    MseLoss,
    /// Trunk sees only `[σ_a, σ_a³]`.
    NoDomainFeatures,
    /// Plain DeepONet: MLP branch over one-hot temper and continuous features.
    MlpBranch,
    /// Transformer encoder over all features with a linear regression head.
    DirectRegressor,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::MseLoss,
        Variant::NoDomainFeatures,
        Variant::MlpBranch,
        Variant::DirectRegressor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MseLoss => "mse_loss",
            Variant::NoDomainFeatures => "no_domain_features",
            Variant::MlpBranch => "mlp_branch",
            Variant::DirectRegressor => "direct_regressor",
        }
    }

    /// Row label for comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "DeepOFormer",
            Variant::MseLoss => "DeepOFormer w/o ML2RE",
            Variant::NoDomainFeatures => "DeepOFormer w/o domain features",
            Variant::MlpBranch => "DeepONet (MLP branch)",
            Variant::DirectRegressor => "TabTransformer (direct)",
        }
    }

    pub fn uses_mse(self) -> bool {
        self == Variant::MseLoss
    }

    /// Trunk input width.
    pub fn trunk_inputs(self) -> usize {
        match self {
            Variant::NoDomainFeatures => 2,
            _ => TRUNK_FEATURES,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                ModelError::Config(format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(Variant::as_str).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub attention: AttentionConfig,
    /// Number of stacked Transformer blocks.
    pub n_blocks: usize,
    /// Width of the branch and trunk embeddings.
    pub p: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub leaky_slope: f64,
    /// Slope of the activation on the trunk's output layer.
    pub trunk_output_slope: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            attention: AttentionConfig::default(),
            n_blocks: 2,
            p: 16,
            hidden_width: 64,
            hidden_layers: 2,
            leaky_slope: crate::blocks::LEAKY_SLOPE,
            trunk_output_slope: crate::blocks::LEAKY_SLOPE,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.attention.validate().map_err(ModelError::Config)?;
        if self.p == 0 || self.hidden_width == 0 {
            return Err(ModelError::Config("p and hidden_width must be >= 1".into()));
        }
        Ok(())
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(output);
        dims
    }
}

/// Column embeddings, Transformer blocks over them, layer norm on the
/// continuous features, and an MLP head producing the `p`-wide embedding.
#[derive(Debug, Clone)]
pub struct BranchEncoder {
    pub embedding: ColumnEmbedding,
    pub blocks: Vec<TransformerBlock>,
    pub continuous_norm: LayerNorm,
    pub head: Mlp,
    pub n_continuous: usize,
}

impl BranchEncoder {
    fn new(store: &mut ParamStore, prefix: &str, dims: &ModelDims, vocab_sizes: &[usize], n_continuous: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = dims.attention.model_dim;
        let embedding = ColumnEmbedding::new(store, &format!("{prefix}.embedding"), vocab_sizes, d, rng);
        let blocks = (0..dims.n_blocks)
            .map(|i| TransformerBlock::new(store, &format!("{prefix}.block{i}"), dims.attention, rng))
            .collect();
        let continuous_norm = LayerNorm::new(store, &format!("{prefix}.continuous_norm"), n_continuous);
        let head = Mlp::new(
            store,
            &format!("{prefix}.head"),
            &dims.mlp_dims(vocab_sizes.len() * d + n_continuous, dims.p),
            dims.leaky_slope,
            None,
            rng,
        );
        Self {
            embedding,
            blocks,
            continuous_norm,
            head,
            n_continuous,
        }
    }

    /// `categorical[r]` holds one id per categorical column; `continuous`
    /// is `[records, n_continuous]`. Returns `[records, p]`.
    pub fn forward(&self, ctx: &mut Ctx, categorical: &[Vec<usize>], continuous: Var) -> Result<Var, AutodiffError> {
        let n = categorical.len();
        let mut x = self.embedding.forward(ctx, categorical)?;
        for block in &self.blocks {
            x = block.forward(ctx, x)?;
        }
        let flat = ctx.tape.reshape(x, &[n, self.embedding.n_columns() * self.embedding.dim])?;
        let normed = self.continuous_norm.forward(ctx, continuous)?;
        let joined = ctx.tape.concat(&[flat, normed], 1)?;
        self.head.forward(ctx, joined)
    }
}

#[derive(Debug, Clone)]
pub struct TrunkNetwork {
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub enum Branch {
    Transformer(BranchEncoder),
    /// MLP over `[one-hot temper ‖ continuous]`.
    Mlp { mlp: Mlp, vocab_size: usize },
}

/// Values substituted for the branch or trunk embedding in a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Injection {
    /// `[records, p]`
    pub branch: Option<Tensor>,
    /// `[records, p]`
    pub trunk: Option<Tensor>,
}

pub struct ForwardOutput {
    /// Predicted log₁₀(N), shape `[records]`.
    pub prediction: Var,
    pub branch: Option<Var>,
    pub trunk: Option<Var>,
}

/// Standardized inputs for a batch of records.
#[derive(Debug, Clone)]
pub struct ModelBatch {
    pub categorical: Vec<Vec<usize>>,
    /// `[records, 4]`
    pub branch: Tensor,
    /// `[records, 5]`
    pub trunk: Tensor,
}

impl ModelBatch {
    pub fn from_inputs<'a, I>(inputs: I) -> Self
    where
        I: IntoIterator<Item = &'a StandardizedInput>,
    {
        let mut categorical = Vec::new();
        let mut branch = Vec::new();
        let mut trunk = Vec::new();
        for inp in inputs {
            categorical.push(vec![inp.temper_id]);
            branch.extend_from_slice(&inp.branch);
            trunk.extend_from_slice(&inp.trunk);
        }
        let n = categorical.len();
        Self {
            categorical,
            branch: Tensor::new(vec![n, BRANCH_CONTINUOUS], branch).expect("branch batch shape"),
            trunk: Tensor::new(vec![n, TRUNK_FEATURES], trunk).expect("trunk batch shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.categorical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categorical.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DeepOFormer {
    pub variant: Variant,
    pub dims: ModelDims,
    /// Embedding table sizes per categorical column (unknown slot included).
    pub vocab_sizes: Vec<usize>,
    pub params: ParamStore,
    pub branch: Branch,
    pub trunk: Option<TrunkNetwork>,
    /// Scalar bias `b₀` of the combine head.
    pub bias: Option<ParamId>,
    /// Regression head of the direct variant.
    pub head: Option<Linear>,
}

impl DeepOFormer {
    /// Builds and initializes a model. Identical arguments give identical
    /// parameters.
    pub fn build(variant: Variant, dims: &ModelDims, vocab_sizes: &[usize], seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        if vocab_sizes.is_empty() || vocab_sizes.contains(&0) {
            return Err(ModelError::Config("need at least one categorical column with a non-empty table".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let p = dims.p;

        let (branch, trunk, bias, head) = match variant {
            Variant::DirectRegressor => {
                let enc = BranchEncoder::new(&mut params, "encoder", dims, vocab_sizes, BRANCH_CONTINUOUS + TRUNK_FEATURES, &mut rng);
                let head = Linear::new(&mut params, "regressor", p, 1, true, &mut rng);
                (Branch::Transformer(enc), None, None, Some(head))
            }
            _ => {
                let branch = if variant == Variant::MlpBranch {
                    if vocab_sizes.len() != 1 {
                        return Err(ModelError::Config("mlp_branch supports exactly one categorical column".into()));
                    }
                    let vocab_size = vocab_sizes[0];
                    let mlp = Mlp::new(
                        &mut params,
                        "branch",
                        &dims.mlp_dims(vocab_size + BRANCH_CONTINUOUS, p),
                        dims.leaky_slope,
                        None,
                        &mut rng,
                    );
                    Branch::Mlp { mlp, vocab_size }
                } else {
                    Branch::Transformer(BranchEncoder::new(&mut params, "branch", dims, vocab_sizes, BRANCH_CONTINUOUS, &mut rng))
                };
                let mlp = Mlp::new(
                    &mut params,
                    "trunk",
                    &dims.mlp_dims(variant.trunk_inputs(), p),
                    dims.leaky_slope,
                    Some(dims.trunk_output_slope),
                    &mut rng,
                );
                let bias = params.add("bias", Tensor::zeros(&[1]));
                (branch, Some(TrunkNetwork { mlp }), Some(bias), None)
            }
        };
        let model = Self {
            variant,
            dims: dims.clone(),
            vocab_sizes: vocab_sizes.to_vec(),
            params,
            branch,
            trunk,
            bias,
            head,
        };
        if let Some(t) = &model.trunk {
            let branch_out = match &model.branch {
                Branch::Transformer(e) => e.head.out_dim(),
                Branch::Mlp { mlp, .. } => mlp.out_dim(),
            };
            assert_eq!(branch_out, t.mlp.out_dim(), "branch and trunk embedding widths differ");
        }
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn has_trunk(&self) -> bool {
        self.trunk.is_some()
    }

    fn check_batch(&self, batch: &ModelBatch) -> Result<(), ModelError> {
        let n = batch.len();
        if batch.branch.shape() != [n, BRANCH_CONTINUOUS] || batch.trunk.shape() != [n, TRUNK_FEATURES] {
            return Err(ModelError::Config(format!(
                "batch of {n} records has branch {:?} and trunk {:?}",
                batch.branch.shape(),
                batch.trunk.shape()
            )));
        }
        for (name, t) in [("branch", &batch.branch), ("trunk", &batch.trunk)] {
            if let Some(i) = t.data().iter().position(|v| !v.is_finite()) {
                return Err(ModelError::Numeric(format!("non-finite {name} input at record {}", i / t.last_dim())));
            }
        }
        for row in &batch.categorical {
            if row.len() != self.vocab_sizes.len() {
                return Err(ModelError::Config(format!(
                    "expected {} categorical ids per record, got {}",
                    self.vocab_sizes.len(),
                    row.len()
                )));
            }
        }
        Ok(())
    }

    /// One forward pass on the tape held by `ctx`, whose bound parameters
    /// must come from `self.params` (or tensors of the same layout).
    pub fn forward(&self, ctx: &mut Ctx, batch: &ModelBatch, injection: &Injection) -> Result<ForwardOutput, ModelError> {
        self.check_batch(batch)?;
        let n = batch.len();
        let branch_in = ctx.tape.constant(batch.branch.clone());
        let trunk_in = ctx.tape.constant(batch.trunk.clone());

        if let (Some(head), Branch::Transformer(enc)) = (&self.head, &self.branch) {
            let all = ctx.tape.concat(&[branch_in, trunk_in], 1)?;
            let b = enc.forward(ctx, &batch.categorical, all)?;
            let y = head.forward(ctx, b)?;
            let prediction = ctx.tape.reshape(y, &[n])?;
            return Ok(ForwardOutput {
                prediction,
                branch: Some(b),
                trunk: None,
            });
        }

        let b = match &injection.branch {
            Some(t) => ctx.tape.constant(t.clone()),
            None => match &self.branch {
                Branch::Transformer(enc) => enc.forward(ctx, &batch.categorical, branch_in)?,
                Branch::Mlp { mlp, vocab_size } => {
                    let mut onehot = vec![0.0; n * vocab_size];
                    for (r, ids) in batch.categorical.iter().enumerate() {
                        let id = ids[0];
                        if id >= *vocab_size {
                            return Err(AutodiffError::IndexOutOfRange {
                                op: "one_hot",
                                index: id,
                                len: *vocab_size,
                            }
                            .into());
                        }
                        onehot[r * vocab_size + id] = 1.0;
                    }
                    let onehot = ctx.tape.constant(Tensor::new(vec![n, *vocab_size], onehot)?);
                    let joined = ctx.tape.concat(&[onehot, branch_in], 1)?;
                    mlp.forward(ctx, joined)?
                }
            },
        };
        let trunk_net = self.trunk.as_ref().expect("operator variants carry a trunk");
        let t = match &injection.trunk {
            Some(t) => ctx.tape.constant(t.clone()),
            None => {
                let width = self.variant.trunk_inputs();
                let input = if width == TRUNK_FEATURES {
                    trunk_in
                } else {
                    ctx.tape.slice(trunk_in, 1, 0, width)?
                };
                trunk_net.mlp.forward(ctx, input)?
            }
        };
        let bias = ctx.param(self.bias.expect("operator variants carry b0"));
        let prediction = combine(ctx, b, t, bias)?;
        Ok(ForwardOutput {
            prediction,
            branch: Some(b),
            trunk: Some(t),
        })
    }
}

/// `Σᵢ bᵢ tᵢ + b₀` per record: `[n, p] x [n, p] -> [n]`.
pub fn combine(ctx: &mut Ctx, branch: Var, trunk: Var, bias: Var) -> Result<Var, AutodiffError> {
    let n = ctx.tape.shape(branch)[0];
    let prod = ctx.tape.mul(branch, trunk)?;
    let dot = ctx.tape.sum_last(prod)?;
    let shifted = ctx.tape.add(dot, bias)?;
    ctx.tape.reshape(shifted, &[n])
}
