//! Generalized CCA as a block generalized eigenproblem.
//!
//! With centered views `X_j` and covariance blocks `Σ_{j,j'}`, the
//! projections solve `B θ = ρ A θ` where `A` is block-diagonal in the
//! (regularized) auto-covariances and `B` holds the cross-covariances off
//! the diagonal. The problem is reduced to a standard symmetric one through
//! the Cholesky factor of `A`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::embedding::{center_rows, matrix_column_means, EmbeddingView, EnsembleBatch};
use crate::error::{MetaError, Result};

pub const DEFAULT_DIM: usize = 1024;
pub const DEFAULT_TAU: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GccaModel {
    /// One `d × d_j` projection per view.
    pub thetas: Vec<DMatrix<f64>>,
    /// Training mean of each raw view.
    pub means: Vec<DVector<f64>>,
    pub tau: f64,
    /// Retained generalized eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
}

impl GccaModel {
    pub fn d(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.thetas.iter().map(|t| t.ncols()).collect()
    }

    /// The generalized eigenvector for component `k`, concatenated across
    /// views.
    pub fn eigenvector(&self, k: usize) -> DVector<f64> {
        let total: usize = self.view_dims().iter().sum();
        let mut out = DVector::zeros(total);
        let mut offset = 0;
        for t in &self.thetas {
            for c in 0..t.ncols() {
                out[offset + c] = t[(k, c)];
            }
            offset += t.ncols();
        }
        out
    }

    pub fn apply(&self, batch: &EnsembleBatch) -> Result<EmbeddingView> {
        apply_gcca(self, batch)
    }
}

/// Empirical cross-covariance of views `j` and `j2` with `1/n` normalization.
pub fn cross_covariance(batch: &EnsembleBatch, j: usize, j2: usize) -> Result<DMatrix<f64>> {
    let n_views = batch.n_views();
    if j >= n_views || j2 >= n_views {
        return Err(MetaError::invalid(format!(
            "view indices ({j}, {j2}) out of range for an ensemble of {n_views}"
        )));
    }
    let a = centered(batch.view(j))?;
    let b = if j == j2 { a.clone() } else { centered(batch.view(j2))? };
    Ok(covariance(&a, &b))
}

fn centered(view: &EmbeddingView) -> Result<DMatrix<f64>> {
    let mean = matrix_column_means(view.matrix())?;
    Ok(center_rows(view.matrix(), &mean))
}

fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.tr_mul(b) / a.nrows() as f64
}

/// The `(A, B)` pair of the generalized eigenproblem, with `τ`-regularized
/// diagonal blocks in `A`.
pub fn block_matrices(batch: &EnsembleBatch, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let centered: Vec<DMatrix<f64>> = batch
        .views()
        .iter()
        .map(centered)
        .collect::<Result<_>>()?;
    Ok(assemble(&centered, tau))
}

fn assemble(centered: &[DMatrix<f64>], tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let dims: Vec<usize> = centered.iter().map(|c| c.ncols()).collect();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let total: usize = dims.iter().sum();
    let mut a = DMatrix::zeros(total, total);
    let mut b = DMatrix::zeros(total, total);
    for (j, xj) in centered.iter().enumerate() {
        for (k, xk) in centered.iter().enumerate().skip(j) {
            let cov = covariance(xj, xk);
            if j == k {
                let shift = tau * cov.diagonal().mean();
                let mut reg = cov;
                for i in 0..dims[j] {
                    reg[(i, i)] += shift;
                }
                a.view_mut((offsets[j], offsets[j]), (dims[j], dims[j]))
                    .copy_from(&reg);
            } else {
                b.view_mut((offsets[j], offsets[k]), (dims[j], dims[k]))
                    .copy_from(&cov);
                b.view_mut((offsets[k], offsets[j]), (dims[k], dims[j]))
                    .copy_from(&cov.transpose());
            }
        }
    }
    (a, b)
}

/// Fits `d` GCCA components on the raw (unnormalized) views.
pub fn fit_gcca(batch: &EnsembleBatch, d: usize, tau: f64) -> Result<GccaModel> {
    if batch.n_views() < 2 {
        return Err(MetaError::invalid(format!(
            "gcca needs at least two views, got {}",
            batch.n_views()
        )));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(MetaError::invalid(format!(
            "tau must be a finite non-negative number, got {tau}"
        )));
    }
    let total = batch.total_dim();
    if d == 0 || d > total {
        return Err(MetaError::invalid(format!(
            "gcca target dimension {d} must be in 1..={total}"
        )));
    }

    let means: Vec<DVector<f64>> = batch
        .views()
        .iter()
        .map(|v| matrix_column_means(v.matrix()))
        .collect::<Result<_>>()?;
    let centered: Vec<DMatrix<f64>> = batch
        .views()
        .iter()
        .zip(&means)
        .map(|(v, m)| center_rows(v.matrix(), m))
        .collect();
    let (a, b) = assemble(&centered, tau);
    let (eigenvalues, vectors) = solve_generalized(a, b, d)?;

    let mut thetas = Vec::with_capacity(batch.n_views());
    let mut offset = 0;
    for dj in batch.dims() {
        thetas.push(vectors.rows(offset, dj).transpose());
        offset += dj;
    }
    Ok(GccaModel {
        thetas,
        means,
        tau,
        eigenvalues,
    })
}

/// Top-`d` solutions of `B θ = ρ A θ`, normalized to `θᵀAθ = 1`. Returns the
/// eigenvalues (descending) and the eigenvectors as columns.
pub fn solve_generalized(
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = Cholesky::new(a).ok_or_else(|| {
        MetaError::Numerical(
            "regularized auto-covariance is not positive definite; increase tau".into(),
        )
    })?;
    let l = chol.l();
    let b_sym = (&b + b.transpose()) * 0.5;
    let y = l
        .solve_lower_triangular(&b_sym)
        .ok_or_else(|| MetaError::Numerical("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| MetaError::Numerical("singular Cholesky factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(MetaError::Numerical(
            "whitened cross-covariance is not finite".into(),
        ));
    }

    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&i, &k| eig.eigenvalues[k].total_cmp(&eig.eigenvalues[i]));
    order.truncate(d);

    let lt = l.transpose();
    let mut vectors = DMatrix::zeros(n, d);
    for (col, &i) in order.iter().enumerate() {
        let w = eig.eigenvectors.column(i).into_owned();
        let mut theta = lt
            .solve_upper_triangular(&w)
            .ok_or_else(|| MetaError::Numerical("singular Cholesky factor".into()))?;
        orient(&mut theta);
        vectors.set_column(col, &theta);
    }
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    Ok((values, vectors))
}

/// Flips `v` so its first non-negligible entry is positive.
fn orient(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Each output row is `Σ_j Θ_j (x_j − μ_j)`.
pub fn apply_gcca(model: &GccaModel, batch: &EnsembleBatch) -> Result<EmbeddingView> {
    batch.check_dims(&model.view_dims())?;
    let mut out = DMatrix::zeros(batch.n_sentences(), model.d());
    for ((view, theta), mean) in batch.views().iter().zip(&model.thetas).zip(&model.means) {
        let c = center_rows(view.matrix(), mean);
        out += c * theta.transpose();
    }
    EmbeddingView::new("meta:gcca", out)
}
