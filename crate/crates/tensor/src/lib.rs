//! A small dense-tensor library with tape-based reverse-mode autodiff.
//!
//! Everything is `f64` and CPU-only. The op set is deliberately narrow: it
//! covers exactly the layers a convolutional dual encoder and a residual
//! crossing network need, including ragged word sequences with sparse
//! letter-trigram inputs. Parameters live in a [`ParamStore`]; a [`Graph`]
//! borrows the store, records a forward pass and accumulates parameter
//! gradients into it on [`Graph::backward`].

pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod sparse;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Result, TensorError};
pub use graph::{Graph, Mode, Var};
pub use layers::{BatchNorm, Conv1dWords, Dense, EmbeddingSum, LayerKind, LayerSpec, ResidualUnit};
pub use optim::Sgd;
pub use params::{ParamId, ParamStore};
pub use sparse::{SeqBatch, SparseBatch, SparseVec};
pub use tensor::Tensor;
