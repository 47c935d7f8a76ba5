//! Test-only reference implementations and data generators.
//!
//! Everything here works on plain `Vec<Vec<f64>>` with hand-written loops so
//! that it shares no code path with the library's nalgebra-based solvers.

#![allow(dead_code, clippy::needless_range_loop)]

use metaemb::autoenc::{init_model, AeConfig, LossKind};
use metaemb::{EmbeddingView, EnsembleBatch};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_mat(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub fn from_mat(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m[0].len(), |r, c| m[r][c])
}

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn transpose(a: &Mat) -> Mat {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for p in 0..k {
            let aip = a[i][p];
            for j in 0..m {
                out[i][j] += aip * b[p][j];
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn batch_of(ms: Vec<DMatrix<f64>>) -> EnsembleBatch {
    EnsembleBatch::new(
        ms.into_iter()
            .enumerate()
            .map(|(j, m)| EmbeddingView::new(format!("view{j}"), m).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Random orthogonal matrix (Gram-Schmidt of a Gaussian matrix).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = to_mat(&gaussian(rng, n, n));
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| g[i][j]).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(c, &v);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nv = norm(&v);
        cols.push(v.into_iter().map(|x| x / nv).collect());
    }
    DMatrix::from_fn(n, n, |r, c| cols[c][r])
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and eigenvectors as columns (`vecs[i][k]` is entry `i` of
/// eigenvector `k`).
pub fn jacobi_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut m = a.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].partial_cmp(&m[x][x]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vecs = (0..n).map(|r| order.iter().map(|&k| v[r][k]).collect()).collect();
    (values, vecs)
}

/// Lower Cholesky factor.
pub fn cholesky(a: &Mat) -> Mat {
    let n = a.len();
    let mut l = zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                assert!(d > 0.0, "oracle cholesky: matrix not positive definite");
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn forward_sub(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

fn backward_sub_lt(l: &Mat, b: &[f64]) -> Vec<f64> {
    // solves Lᵀ x = b
    let n = l.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Dense generalized symmetric-definite eigensolver `Bθ = ρAθ` via
/// Cholesky whitening and Jacobi. Eigenvectors normalized to `θᵀAθ = 1`,
/// returned as a list of vectors, eigenvalues descending.
pub fn generalized_eigen(a: &Mat, b: &Mat) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let l = cholesky(a);
    // Y = L⁻¹ B (column by column), C = L⁻¹ Yᵀ
    let bt = transpose(b);
    let y_cols: Vec<Vec<f64>> = bt.iter().map(|col| forward_sub(&l, col)).collect();
    // y_cols[j] is column j of L⁻¹B; Yᵀ row j = y_cols[j]
    let c_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| y_cols[i][j]).collect();
            forward_sub(&l, &col)
        })
        .collect();
    let mut c = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            c[i][j] = 0.5 * (c_cols[j][i] + c_cols[i][j]);
        }
    }
    let (values, w) = jacobi_eigen(&c);
    let vectors = (0..n)
        .map(|k| {
            let wk: Vec<f64> = (0..n).map(|i| w[i][k]).collect();
            backward_sub_lt(&l, &wk)
        })
        .collect();
    (values, vectors)
}

/// Assembles the GCCA `(A, B)` pair directly from raw view rows.
pub fn gcca_blocks(views: &[Mat], tau: f64) -> (Mat, Mat) {
    let n = views[0].len() as f64;
    let centered: Vec<Mat> = views
        .iter()
        .map(|v| {
            let d = v[0].len();
            let mean: Vec<f64> = (0..d).map(|c| v.iter().map(|r| r[c]).sum::<f64>() / n).collect();
            v.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect()
        })
        .collect();
    let dims: Vec<usize> = views.iter().map(|v| v[0].len()).collect();
    let total: usize = dims.iter().sum();
    let mut a = zeros(total, total);
    let mut b = zeros(total, total);
    let mut oj = 0;
    for (j, xj) in centered.iter().enumerate() {
        let mut ok = 0;
        for (k, xk) in centered.iter().enumerate() {
            for p in 0..dims[j] {
                for q in 0..dims[k] {
                    let cov: f64 = xj.iter().zip(xk).map(|(rj, rk)| rj[p] * rk[q]).sum::<f64>() / n;
                    if j == k {
                        a[oj + p][ok + q] = cov;
                    } else {
                        b[oj + p][ok + q] = cov;
                    }
                }
            }
            ok += dims[k];
        }
        let mean_diag: f64 = (0..dims[j]).map(|p| a[oj + p][oj + p]).sum::<f64>() / dims[j] as f64;
        for p in 0..dims[j] {
            a[oj + p][oj + p] += tau * mean_diag;
        }
        oj += dims[j];
    }
    (a, b)
}

/// One-sided Jacobi SVD. Returns singular values (descending) and right
/// singular vectors as columns of an `n × n` matrix.
pub fn jacobi_svd(a: &Mat) -> (Vec<f64>, Mat) {
    let m = a.len();
    let n = a[0].len();
    let mut u = a.clone();
    let mut v = zeros(n, n);
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for row in u.iter().take(m) {
                    alpha += row[p] * row[p];
                    beta += row[q] * row[q];
                    gamma += row[p] * row[q];
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in u.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s * y;
                    row[q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sv: Vec<f64> = (0..n)
        .map(|j| u.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sv[y].partial_cmp(&sv[x]).unwrap());
    let values = order.iter().map(|&i| sv[i]).collect();
    let vecs = (0..n).map(|r| order.iter().map(|&k| v[r][k]).collect()).collect();
    (values, vecs)
}

/// Builds the normalized, concatenated, centered matrix by hand.
pub fn centered_concatenation(views: &[Mat]) -> Mat {
    let n = views[0].len();
    let mut rows: Mat = (0..n)
        .map(|i| {
            views
                .iter()
                .flat_map(|v| {
                    let r = &v[i];
                    let nr = norm(r);
                    r.iter().map(move |x| if nr < 1e-12 { *x } else { x / nr })
                })
                .collect()
        })
        .collect();
    let d = rows[0].len();
    for c in 0..d {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
        for r in rows.iter_mut() {
            r[c] -= mean;
        }
    }
    rows
}

/// Textbook Pearson: covariance over product of standard deviations.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// O(n²) average ranks: 1 + #smaller + (#equal − 1)/2.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Cosine similarities of all unordered row pairs.
pub fn pairwise_cosines(m: &DMatrix<f64>) -> Vec<f64> {
    let rows: Mat = to_mat(m);
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d = norm(&rows[i]) * norm(&rows[j]);
            out.push(if d == 0.0 { 0.0 } else { dot(&rows[i], &rows[j]) / d });
        }
    }
    out
}

/// Largest absolute entry difference after aligning `b`'s sign to `a`.
pub fn signed_distance(a: &[f64], b: &[f64]) -> f64 {
    let s = if dot(a, b) < 0.0 { -1.0 } else { 1.0 };
    a.iter().zip(b).map(|(x, y)| (x - s * y).abs()).fold(0.0, f64::max)
}

/// Largest violation of `|analytic − numeric| ≤ 1e-4·max(|a|, |n|) + 1e-8`,
/// expressed as a ratio (≤ 1 passes).
pub fn gradient_check(loss: LossKind, hidden: usize, dims: &[usize], d: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let views: Vec<DMatrix<f64>> = dims.iter().map(|&dj| gaussian(&mut r, 6, dj)).collect();
    let batch = batch_of(views.clone());
    let config = AeConfig {
        d,
        loss,
        hidden_count: hidden,
        seed,
        ..AeConfig::default()
    };
    let mut model = init_model(&batch, &config).unwrap();
    // move biases off zero so every parameter class is exercised
    let p0: Vec<f64> = model
        .flat_params()
        .iter()
        .enumerate()
        .map(|(i, p)| p + 0.05 * ((i as f64) * 0.7).sin())
        .collect();
    model.set_flat_params(&p0).unwrap();
    let (_, grad) = model.loss_and_gradient(&views).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        p[i] = p0[i] + h;
        model.set_flat_params(&p).unwrap();
        let up = model.loss_and_gradient(&views).unwrap().0;
        p[i] = p0[i] - h;
        model.set_flat_params(&p).unwrap();
        let down = model.loss_and_gradient(&views).unwrap().0;
        let numeric = (up - down) / (2.0 * h);
        let tol = 1e-4 * grad[i].abs().max(numeric.abs()) + 1e-8;
        worst = worst.max((grad[i] - numeric).abs() / tol);
    }
    model.set_flat_params(&p0).unwrap();
    worst
}

/// Cheap settings so every method can be fitted on a few dozen rows.
pub fn small_options(d: usize) -> metaemb::fusion::FitOptions {
    metaemb::fusion::FitOptions {
        d,
        tau: 1.0,
        ae: AeConfig {
            d,
            epochs: 5,
            batch_size: 8,
            lr: 0.01,
            ..AeConfig::default()
        },
    }
}

pub fn fit_all(batch: &EnsembleBatch, d: usize) -> Vec<metaemb::FusionModel> {
    metaemb::Method::ALL
        .iter()
        .map(|&m| metaemb::FusionModel::fit(m, batch, &small_options(d)).unwrap())
        .collect()
}
