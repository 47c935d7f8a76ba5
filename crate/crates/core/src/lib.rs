//! Sentence meta-embeddings.
//!
//! Several pre-trained sentence encoders embed the same sentence list; this
//! crate fuses their output matrices into a single meta-embedding and scores
//! the result on semantic textual similarity (STS) data.
//!
//! Five combiners are provided:
//!
//! - [`naive::fuse_conc`] and [`naive::fuse_avg`]: concatenation / averaging of
//!   length-normalized views,
//! - [`svd::fit_svd`]: a truncated SVD of the centered concatenation,
//! - [`gcca::fit_gcca`]: generalized CCA solved as a block generalized
//!   eigenproblem,
//! - [`autoenc::fit_ae`]: a cross-view autoencoder trained with Adam.
//!
//! [`eval::evaluate`] computes per-subset and aggregated Pearson / Spearman
//! correlations between cosine predictions and gold scores, and
//! [`baseline::up_project`] provides the random up-projection control.
//! File formats live in [`io`].

pub mod autoenc;
pub mod baseline;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gcca;
pub mod io;
pub mod naive;
pub mod svd;

pub use embedding::{column_means, length_normalize, EmbeddingView, EnsembleBatch};
pub use error::{MetaError, Result};
pub use fusion::{FusionModel, Method};
