//! Truncated SVD of the centered concatenation of normalized views.
//!
//! The right singular vectors are obtained from an eigendecomposition of the
//! smaller of the two Gram matrices (`XᵀX` when `n > D`, `XXᵀ` otherwise), so
//! memory stays bounded by `min(n, D)²` plus the data itself.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::embedding::{center_rows, matrix_column_means, EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};
use crate::naive::fuse_conc;

pub const DEFAULT_DIM: usize = 1024;

/// Singular values below this fraction of the largest one are treated as zero
/// on the `XXᵀ` path; their right singular vectors are completed
/// orthogonally instead of being divided out.
const RELATIVE_RANK_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdModel {
    /// `D × d`, orthonormal columns, descending singular values.
    pub projection: DMatrix<f64>,
    /// Training mean of the concatenated normalized views.
    pub mean: DVector<f64>,
    pub singular_values: DVector<f64>,
    pub view_dims: Vec<usize>,
}

impl SvdModel {
    pub fn d(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply(&self, batch: &EnsembleBatch) -> Result<EmbeddingView> {
        apply_svd(self, batch)
    }
}

pub fn fit_svd(batch: &EnsembleBatch, d: usize) -> Result<SvdModel> {
    let conc = fuse_conc(batch)?;
    let (n, total) = (conc.n_rows(), conc.dim());
    if d == 0 || d > n.min(total) {
        return Err(MetaError::invalid(format!(
            "svd target dimension {d} must be in 1..={} (n = {n}, concatenated dim = {total})",
            n.min(total)
        )));
    }
    let mean = matrix_column_means(conc.matrix())?;
    let centered = center_rows(conc.matrix(), &mean);
    let (singular_values, projection) = right_singular_subspace(&centered, d)?;
    if projection.iter().any(|v| !v.is_finite()) || singular_values.iter().any(|v| !v.is_finite())
    {
        return Err(MetaError::Numerical(
            "svd produced non-finite factors".into(),
        ));
    }
    Ok(SvdModel {
        projection,
        mean,
        singular_values,
        view_dims: batch.dims(),
    })
}

/// Each output row is `Vᵀ(conc_row − mean)`.
pub fn apply_svd(model: &SvdModel, batch: &EnsembleBatch) -> Result<EmbeddingView> {
    batch.check_dims(&model.view_dims)?;
    let conc = fuse_conc(batch)?;
    if conc.dim() != model.mean.len() {
        return Err(MetaError::invalid(format!(
            "concatenated dim {} does not match model mean length {}",
            conc.dim(),
            model.mean.len()
        )));
    }
    let centered = center_rows(conc.matrix(), &model.mean);
    EmbeddingView::new("meta:svd", centered * &model.projection)
}

/// Top-`d` singular values and right singular vectors of `x`.
fn right_singular_subspace(x: &DMatrix<f64>, d: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, total) = x.shape();
    let (values, mut v) = if n > total {
        let gram = x.transpose() * x;
        let (evals, evecs) = sorted_eigen(gram);
        let s = DVector::from_iterator(d, evals.iter().take(d).map(|l| l.max(0.0).sqrt()));
        (s, evecs.columns(0, d).into_owned())
    } else {
        let gram = x * x.transpose();
        let (evals, evecs) = sorted_eigen(gram);
        let s = DVector::from_iterator(d, evals.iter().take(d).map(|l| l.max(0.0).sqrt()));
        let cutoff = s[0] * RELATIVE_RANK_TOL;
        let mut v = DMatrix::zeros(total, d);
        let xt = x.transpose();
        for k in 0..d {
            if s[k] > cutoff && s[k] > 0.0 {
                let col = &xt * evecs.column(k) / s[k];
                v.set_column(k, &col);
            }
        }
        (s, v)
    };
    orthonormalize(&mut v, &values, RELATIVE_RANK_TOL);
    fix_signs(&mut v);
    Ok((values, v))
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Modified Gram-Schmidt over the columns. Columns belonging to negligible
/// singular values (or collapsing during the sweep) are replaced by the first
/// standard basis vector that is independent of the columns before them.
fn orthonormalize(v: &mut DMatrix<f64>, values: &DVector<f64>, tol: f64) {
    let (rows, cols) = v.shape();
    let cutoff = values[0] * tol;
    let mut basis = 0;
    for k in 0..cols {
        let mut col = v.column(k).into_owned();
        let mut ok = values[k] > cutoff && values[k] > 0.0;
        if ok {
            for p in 0..k {
                let proj = v.column(p).dot(&col);
                col -= v.column(p) * proj;
            }
            let norm = col.norm();
            ok = norm > 0.5;
            if ok {
                col /= norm;
            }
        }
        while !ok && basis < rows {
            col = DVector::zeros(rows);
            col[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for p in 0..k {
                    let proj = v.column(p).dot(&col);
                    col -= v.column(p) * proj;
                }
            }
            let norm = col.norm();
            if norm > 1e-6 {
                col /= norm;
                ok = true;
            }
        }
        v.set_column(k, &col);
    }
}

/// Makes the largest-magnitude entry of each column positive.
pub(crate) fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}
