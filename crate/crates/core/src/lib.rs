//! Zero-shot concept bottleneck inference.
//!
//! Given an image embedding, the engine retrieves the closest concepts from a
//! large concept bank, explains the embedding as a sparse linear combination
//! of those concept embeddings, and classifies the reconstruction against
//! class-prompt embeddings. Nothing is trained: every input is a precomputed
//! embedding.

pub mod bank;
pub mod metrics;
pub mod pipeline;
pub mod regress;
pub mod retrieval;
pub mod vecstore;

pub use pipeline::{ClassSet, Engine, Prediction};
pub use retrieval::{RetrievalSet, Retriever};
pub use vecstore::{EmbeddingMatrix, EmbeddingVector};
