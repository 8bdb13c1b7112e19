//! Sparse-gated sequence encoders for protein–protein interaction prediction.
//!
//! Protein sequences are encoded by a bidirectional GRU, pooled through a
//! gate vector on the probability simplex (softmax, sparsemax or fusedmax),
//! and mapped to a diagonal Gaussian. Pairs are ranked by the closed-form
//! 2-Wasserstein distance between their Gaussians, trained with a
//! square-exponential contrastive loss, and optionally classified by a random
//! forest over symmetric pair features.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod objective;
pub mod pipeline;
pub mod projections;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use autodiff::{grad_check, GradCheck, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gates.md")]
    mod gates {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/classifier.md")]
    mod classifier {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
