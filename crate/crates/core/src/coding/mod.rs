//! Feature stacks, codebook construction, and the neighbourhood Laplacian
//! that regularizes the codes.

mod codebook;
mod dictionary;
mod kmeans;
mod laplacian;
mod stack;

pub use codebook::Codebook;
pub use dictionary::{coding_objective, learn_codebook, DictionaryFit, DictionaryParams};
pub use kmeans::kmeans_codebook;
pub use laplacian::{build_laplacian, LaplacianGraph};
pub use stack::FeatureStack;

/// Default neighbour count for the coding graph.
pub const DEFAULT_NEIGHBORS: usize = 4;
