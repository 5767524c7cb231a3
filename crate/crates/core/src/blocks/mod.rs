//! Neural building blocks recorded on the autodiff tape.

mod attention;
mod ctx;
mod layers;
mod params;

pub use attention::{attention, softmax_last, AttentionConfig, HeadProjections, TransformerBlock, ATTENTION_ROW_TOL};
pub use ctx::{Ctx, Mode};
pub use layers::{dropout, layer_norm, leaky_relu, ColumnEmbedding, LayerNorm, Linear, Mlp, LAYER_NORM_EPS, LEAKY_SLOPE};
pub use params::{embedding_normal, xavier_uniform, ParamId, ParamStore};
