//! Concatenation and averaging of length-normalized views.

use nalgebra::DMatrix;

use crate::embedding::{hstack, length_normalize, EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveKind {
    Conc,
    Avg,
}

/// Stateless combiner; only remembers the view dimensions it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveModel {
    kind: NaiveKind,
    expected_dims: Vec<usize>,
}

impl NaiveModel {
    pub fn new(kind: NaiveKind, expected_dims: Vec<usize>) -> Result<Self> {
        if expected_dims.is_empty() || expected_dims.contains(&0) {
            return Err(MetaError::invalid(format!(
                "naive model needs at least one positive view dimension, got {expected_dims:?}"
            )));
        }
        Ok(Self {
            kind,
            expected_dims,
        })
    }

    pub fn for_batch(kind: NaiveKind, batch: &EnsembleBatch) -> Self {
        Self {
            kind,
            expected_dims: batch.dims(),
        }
    }

    pub fn kind(&self) -> NaiveKind {
        self.kind
    }

    pub fn expected_dims(&self) -> &[usize] {
        &self.expected_dims
    }

    pub fn output_dim(&self) -> usize {
        match self.kind {
            NaiveKind::Conc => self.expected_dims.iter().sum(),
            NaiveKind::Avg => self.expected_dims.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn apply(&self, batch: &EnsembleBatch) -> Result<EmbeddingView> {
        batch.check_dims(&self.expected_dims)?;
        match self.kind {
            NaiveKind::Conc => fuse_conc(batch),
            NaiveKind::Avg => fuse_avg(batch),
        }
    }
}

fn normalized_views(batch: &EnsembleBatch) -> Result<Vec<DMatrix<f64>>> {
    batch
        .views()
        .iter()
        .map(|v| length_normalize(v).map(EmbeddingView::into_matrix))
        .collect()
}

/// Row-wise concatenation of the normalized views, in ensemble order.
pub fn fuse_conc(batch: &EnsembleBatch) -> Result<EmbeddingView> {
    let normed = normalized_views(batch)?;
    let refs: Vec<&DMatrix<f64>> = normed.iter().collect();
    EmbeddingView::new("meta:conc", hstack(&refs))
}

/// Mean of the normalized views, each right-padded with zeros to the
/// largest view dimension. Divides by `J` regardless of zero rows.
pub fn fuse_avg(batch: &EnsembleBatch) -> Result<EmbeddingView> {
    let normed = normalized_views(batch)?;
    let width = batch.dims().into_iter().max().unwrap_or(0);
    let mut sum = DMatrix::zeros(batch.n_sentences(), width);
    for m in &normed {
        let mut block = sum.view_mut((0, 0), (m.nrows(), m.ncols()));
        block += m;
    }
    sum /= batch.n_views() as f64;
    EmbeddingView::new("meta:avg", sum)
}
