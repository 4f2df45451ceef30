//! Gated graph neural network over DESGs.
//!
//! Node states start from attribute embeddings and are updated for a fixed
//! number of rounds: each node sums messages from its incoming and outgoing
//! edges (separate two-layer perceptrons, edge embeddings keyed by kind and
//! operand position) and feeds the sum to a shared GRU cell. Several heads
//! then project the final states, and a learned-temperature softmax pools
//! each head over the nodes. A linear layer maps the concatenated heads to
//! the graph embedding.

mod checkpoint;
mod forward;
mod model;
mod tape;
mod tensor;
mod vocab;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{
    embed_graph, embed_graphs, loss_and_grads, pooling_weights, Embedding, LossGrads,
    NegativeChooser,
};
pub use model::{GnnConfig, GnnModel, GruIds, HeadIds, Layout, MlpIds, Param};
pub use tape::{cosine, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Mat;
pub use vocab::{edge_key, Vocab, EDGE_KEYS, UNK};
