//! Random up-projection control.
//!
//! Raising a single view's dimensionality with a fixed random linear map adds
//! no information, so any gain a meta-embedding shows over such a projection
//! is not a dimensionality artifact.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingView;
use crate::error::{MetaError, Result};

/// A fixed `target_dim × source_dim` map with entries drawn from
/// `U(−1/√source_dim, 1/√source_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpProjection {
    pub matrix: DMatrix<f64>,
    pub seed: u64,
}

impl UpProjection {
    pub fn new(source_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        if source_dim == 0 || target_dim == 0 {
            return Err(MetaError::invalid(format!(
                "up-projection dims must be positive, got {source_dim} -> {target_dim}"
            )));
        }
        let bound = 1.0 / (source_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| MetaError::invalid(format!("bad sampling range: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // row-major fill so the matrix does not depend on storage order
        let mut matrix = DMatrix::zeros(target_dim, source_dim);
        for r in 0..target_dim {
            for c in 0..source_dim {
                matrix[(r, c)] = dist.sample(&mut rng);
            }
        }
        Ok(Self { matrix, seed })
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bound(&self) -> f64 {
        1.0 / (self.source_dim() as f64).sqrt()
    }

    /// Maps each row `x` to `Mx`.
    pub fn apply(&self, view: &EmbeddingView) -> Result<EmbeddingView> {
        if view.dim() != self.source_dim() {
            return Err(MetaError::invalid(format!(
                "view dim {} does not match projection source dim {}",
                view.dim(),
                self.source_dim()
            )));
        }
        EmbeddingView::new(
            format!("{}+up{}.seed{}", view.encoder_id(), self.target_dim(), self.seed),
            view.matrix() * self.matrix.transpose(),
        )
    }
}

pub fn up_project(view: &EmbeddingView, d: usize, seed: u64) -> Result<EmbeddingView> {
    UpProjection::new(view.dim(), d, seed)?.apply(view)
}
