mod common;

use common::*;
use metaemb::eval::{average_ranks, pearson, spearman};
use metaemb::gcca::{block_matrices, fit_gcca};
use metaemb::svd::fit_svd;
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn oracle_self_check_jacobi_eigen() {
    let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 2.0]];
    let (vals, vecs) = jacobi_eigen(&a);
    for k in 0..3 {
        let v: Vec<f64> = (0..3).map(|i| vecs[i][k]).collect();
        let av: Vec<f64> = a.iter().map(|row| dot(row, &v)).collect();
        for i in 0..3 {
            assert!((av[i] - vals[k] * v[i]).abs() < 1e-12);
        }
    }
    assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    assert!((vals.iter().sum::<f64>() - 9.0).abs() < 1e-12);
}

#[test]
fn oracle_self_check_jacobi_svd() {
    let mut r = rng(5);
    let a = to_mat(&gaussian(&mut r, 7, 4));
    let (s, v) = jacobi_svd(&a);
    // singular values squared are eigenvalues of AᵀA
    let ata = matmul(&transpose(&a), &a);
    let (ev, _) = jacobi_eigen(&ata);
    for k in 0..4 {
        assert!((s[k] * s[k] - ev[k]).abs() < 1e-10 * ev[0]);
    }
    let vtv = matmul(&transpose(&v), &v);
    for (i, row) in vtv.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((x - e).abs() < 1e-12);
        }
    }
}

#[test]
fn svd_matches_jacobi_oracle_on_small_two_view_batch() {
    let mut r = rng(11);
    let views = vec![gaussian(&mut r, 10, 3), gaussian(&mut r, 10, 3)];
    let batch = batch_of(views.clone());
    let model = fit_svd(&batch, 3).unwrap();

    let x = centered_concatenation(&views.iter().map(to_mat).collect::<Vec<_>>());
    let (s, v) = jacobi_svd(&x);
    for k in 0..3 {
        assert!((model.singular_values[k] - s[k]).abs() < 1e-8, "sigma {k}");
        let ours: Vec<f64> = model.projection.column(k).iter().copied().collect();
        let theirs: Vec<f64> = (0..6).map(|i| v[i][k]).collect();
        assert!(signed_distance(&theirs, &ours) < 1e-8, "vector {k}");
    }

    // training rows map to U·S (the projection of the centered matrix)
    let out = model.apply(&batch).unwrap();
    let xv = matmul(&x, &(0..6).map(|i| v[i][..3].to_vec()).collect::<Vec<_>>());
    for k in 0..3 {
        let ours: Vec<f64> = out.matrix().column(k).iter().copied().collect();
        let theirs: Vec<f64> = xv.iter().map(|row| row[k]).collect();
        assert!(signed_distance(&theirs, &ours) < 1e-8);
        let col_norm = norm(&ours);
        assert!((col_norm - s[k]).abs() < 1e-8);
    }
}

#[test]
fn svd_matches_oracle_when_wider_than_tall() {
    let mut r = rng(12);
    let views = vec![gaussian(&mut r, 5, 6), gaussian(&mut r, 5, 4)];
    let batch = batch_of(views.clone());
    let model = fit_svd(&batch, 4).unwrap();
    let x = centered_concatenation(&views.iter().map(to_mat).collect::<Vec<_>>());
    let (s, v) = jacobi_svd(&x);
    for k in 0..4 {
        assert!((model.singular_values[k] - s[k]).abs() < 1e-8);
        let ours: Vec<f64> = model.projection.column(k).iter().copied().collect();
        let theirs: Vec<f64> = (0..10).map(|i| v[i][k]).collect();
        assert!(signed_distance(&theirs, &ours) < 1e-8);
    }
}

#[test]
fn gcca_blocks_match_hand_assembly() {
    let mut r = rng(21);
    let views = vec![gaussian(&mut r, 30, 2), gaussian(&mut r, 30, 3), gaussian(&mut r, 30, 4)];
    let batch = batch_of(views.clone());
    let (a, b) = block_matrices(&batch, 0.5).unwrap();
    let (a2, b2) = gcca_blocks(&views.iter().map(to_mat).collect::<Vec<_>>(), 0.5);
    assert!((a - from_mat(&a2)).amax() < 1e-12);
    assert!((b - from_mat(&b2)).amax() < 1e-12);
}

#[test]
fn gcca_matches_generalized_oracle_three_views() {
    let mut r = rng(22);
    let latent = gaussian(&mut r, 40, 2);
    let views: Vec<DMatrix<f64>> = (0..3)
        .map(|_| &latent * gaussian(&mut r, 2, 4) + gaussian(&mut r, 40, 4) * 0.5)
        .collect();
    let batch = batch_of(views.clone());
    let model = fit_gcca(&batch, 4, 1.0).unwrap();
    let (a, b) = gcca_blocks(&views.iter().map(to_mat).collect::<Vec<_>>(), 1.0);
    let (vals, vecs) = generalized_eigen(&a, &b);
    for k in 0..4 {
        assert!((model.eigenvalues[k] - vals[k]).abs() < 1e-8, "rho {k}");
        let ours: Vec<f64> = model.eigenvector(k).iter().copied().collect();
        assert!(signed_distance(&vecs[k], &ours) < 1e-6, "theta {k}");
        // θᵀAθ = 1
        let at: Vec<f64> = a.iter().map(|row| dot(row, &ours)).collect();
        assert!((dot(&ours, &at) - 1.0).abs() < 1e-9);
    }
}

fn tied_vector(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    let levels = r.random_range(2..8);
    (0..n)
        .map(|_| {
            if r.random_bool(0.5) {
                r.random_range(0..levels) as f64 / 2.0
            } else {
                r.random_range(-3.0..3.0)
            }
        })
        .collect()
}

#[test]
fn metrics_match_brute_force_with_ties() {
    let mut r = rng(31);
    for _ in 0..300 {
        let n = r.random_range(3..40);
        let x = tied_vector(&mut r, n);
        let y = tied_vector(&mut r, n);
        let bp = brute_pearson(&x, &y);
        if !bp.is_finite() {
            assert!(pearson(&x, &y).is_err());
            continue;
        }
        assert!((pearson(&x, &y).unwrap() - bp).abs() < 1e-12);
        assert_eq!(average_ranks(&x), brute_ranks(&x));
        assert!((spearman(&x, &y).unwrap() - brute_spearman(&x, &y)).abs() < 1e-12);
    }
}
