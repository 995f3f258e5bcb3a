//! Lexical and vector retrieval primitives.

pub mod bm25;
pub mod vector;

pub use bm25::{tokenize, Bm25Index, Bm25Params, IndexError};
pub use vector::{cosine_similarity, VectorError};
