//! Encoder-decoder transformer that forecasts one decomposed subseries.
//!
//! The network embeds a scalar window into `embed_dim` features per position
//! (column-token convention), runs stacked self-attention encoder layers and
//! masked/cross-attention decoder layers, and reads out one scalar per
//! decoder position. Training uses hand-derived exact gradients of the MSE
//! loss, global-norm clipping, and Adam.

mod backward;
mod forward;
mod model;
mod ops;
mod train;

pub use backward::loss_and_gradients;
pub use forward::{embed, forward, multi_head, AttentionTrace, NormRecord, Window};
pub use model::{
    AttentionWeights, DecoderLayer, EncoderLayer, FeedForwardWeights, LayerNormParams,
    TransformerConfig, TransformerModel,
};
pub use ops::{gelu, layer_norm, positional_encoding, scaled_attention, LayerNormMode};
pub use train::{forecast_subseries, predict_next, train, training_windows};
