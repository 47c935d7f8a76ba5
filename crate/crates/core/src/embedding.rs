//! Embedding matrices and the aligned multi-view container.

use nalgebra::{DMatrix, DVector};

use crate::error::{MetaError, Result};

/// Rows with a Euclidean norm below this are left untouched by
/// [`length_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// One encoder's output for a list of sentences: `n_sentences × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingView {
    encoder_id: String,
    matrix: DMatrix<f64>,
}

impl EmbeddingView {
    /// Validates shape (at least one row and one column) and finiteness.
    pub fn new(encoder_id: impl Into<String>, matrix: DMatrix<f64>) -> Result<Self> {
        let encoder_id = encoder_id.into();
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(MetaError::invalid(format!(
                "view '{encoder_id}' must have at least one row and one column, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_finite(&encoder_id, &matrix)?;
        Ok(Self { encoder_id, matrix })
    }

    /// Builds a view from row slices. All rows must have the same length.
    pub fn from_rows(encoder_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let encoder_id = encoder_id.into();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(MetaError::invalid(format!(
                "view '{encoder_id}': row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
        let matrix = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
        Self::new(encoder_id, matrix)
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().copied().collect()
    }

    /// Same matrix under a different label.
    pub fn relabel(self, encoder_id: impl Into<String>) -> Self {
        Self {
            encoder_id: encoder_id.into(),
            matrix: self.matrix,
        }
    }
}

fn check_finite(encoder_id: &str, matrix: &DMatrix<f64>) -> Result<()> {
    if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
        // column-major storage
        let (r, c) = (pos % matrix.nrows(), pos / matrix.nrows());
        return Err(MetaError::invalid(format!(
            "view '{encoder_id}' has a non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

/// `J ≥ 1` views over the same sentences, in ensemble order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBatch {
    views: Vec<EmbeddingView>,
    n_sentences: usize,
}

impl EnsembleBatch {
    pub fn new(views: Vec<EmbeddingView>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(MetaError::invalid("an ensemble needs at least one view"));
        };
        let n_sentences = first.n_rows();
        for v in &views {
            if v.n_rows() != n_sentences {
                return Err(MetaError::invalid(format!(
                    "row count mismatch: view '{}' has {} rows, view '{}' has {}",
                    first.encoder_id(),
                    n_sentences,
                    v.encoder_id(),
                    v.n_rows()
                )));
            }
        }
        for (i, a) in views.iter().enumerate() {
            if views[..i].iter().any(|b| b.encoder_id() == a.encoder_id()) {
                return Err(MetaError::invalid(format!(
                    "duplicate encoder id '{}' in ensemble",
                    a.encoder_id()
                )));
            }
        }
        Ok(Self { views, n_sentences })
    }

    pub fn views(&self) -> &[EmbeddingView] {
        &self.views
    }

    pub fn view(&self, j: usize) -> &EmbeddingView {
        &self.views[j]
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(EmbeddingView::dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.views.iter().map(EmbeddingView::dim).sum()
    }

    /// The ensemble with view `j` removed. Fails if that would leave it empty.
    pub fn without(&self, j: usize) -> Result<Self> {
        if j >= self.views.len() {
            return Err(MetaError::invalid(format!(
                "view index {j} out of range for an ensemble of {}",
                self.views.len()
            )));
        }
        let mut views = self.views.clone();
        views.remove(j);
        Self::new(views)
    }

    /// Errors unless the view dimensions equal `expected`, in order.
    pub(crate) fn check_dims(&self, expected: &[usize]) -> Result<()> {
        let dims = self.dims();
        if dims != expected {
            return Err(MetaError::invalid(format!(
                "view dimensions {dims:?} do not match the fitted model's {expected:?}"
            )));
        }
        Ok(())
    }
}

/// Scales every row to unit Euclidean norm; rows with norm below
/// [`NORM_EPS`] are returned unchanged.
pub fn length_normalize(view: &EmbeddingView) -> Result<EmbeddingView> {
    check_finite(view.encoder_id(), view.matrix())?;
    let mut m = view.matrix().clone();
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm >= NORM_EPS {
            row /= norm;
        }
    }
    Ok(EmbeddingView {
        encoder_id: view.encoder_id.clone(),
        matrix: m,
    })
}

/// Arithmetic mean of each column.
pub fn column_means(view: &EmbeddingView) -> Result<DVector<f64>> {
    matrix_column_means(view.matrix())
}

pub(crate) fn matrix_column_means(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() == 0 {
        return Err(MetaError::invalid("column means of an empty matrix"));
    }
    let n = m.nrows() as f64;
    Ok(DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| c.sum() / n),
    ))
}

/// Subtracts `mean` from every row.
pub(crate) fn center_rows(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    out
}

/// Horizontal concatenation of equally tall matrices.
pub(crate) fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let nrows = blocks.first().map_or(0, |b| b.nrows());
    let ncols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((0, offset), (nrows, b.ncols())).copy_from(*b);
        offset += b.ncols();
    }
    out
}
