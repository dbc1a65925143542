mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{correlated_pair, two_pass_pearson};
use vhb_core::numerics::{fit_pca, multicollinearity_filter, pearson_matrix};
use vhb_core::Matrix;

#[test]
fn pca_orthonormal_and_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<f64> = (0..100 * 10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let x = Matrix::from_vec(100, 10, data);
    let m = fit_pca(&x, 1.0).unwrap();
    assert_eq!(m.n_components(), 10);
    let c = &m.components;
    let g = c.transpose().matmul(c);
    for i in 0..10 {
        for j in 0..10 {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((g[(i, j)] - e).abs() < 1e-9);
        }
    }
    let scores = m.transform(&x).unwrap();
    let back = m.inverse_transform_standardized(&scores);
    for i in 0..100 {
        for j in 0..10 {
            let z = (x[(i, j)] - m.mean[j]) / m.scale[j];
            assert!((back[(i, j)] - z).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_two_fields_rho_point_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b) = correlated_pair(&mut rng, 50, 0.8);
    let rows: Vec<[f64; 2]> = a.iter().zip(&b).map(|(p, q)| [*p, *q]).collect();
    let m = fit_pca(&Matrix::from_rows(&rows), 0.5).unwrap();
    assert!((m.explained_variance_ratio[0] - 0.9).abs() < 1e-9);
    assert!((m.explained_variance_ratio[1] - 0.1).abs() < 1e-9);
}

#[test]
fn pearson_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.random_range(3..200);
        let d = rng.random_range(2..8);
        let scale: Vec<f64> = (0..d).map(|_| 10f64.powi(rng.random_range(-3..4))).collect();
        let data: Vec<f64> = (0..n * d)
            .map(|i| scale[i % d] * rng.random_range(-1.0..1.0) + 1e3)
            .collect();
        let x = Matrix::from_vec(n, d, data);
        let names: Vec<String> = (0..d).map(|i| format!("v{i}")).collect();
        let c = pearson_matrix(&x, &names).unwrap();
        for i in 0..d {
            for j in 0..d {
                let o = two_pass_pearson(&x.column(i), &x.column(j));
                assert!((c.r[(i, j)] - o).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn filter_on_engineered_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (hs, college) = correlated_pair(&mut rng, 400, -0.783);
    let (u, income) = correlated_pair(&mut rng, 400, 0.676);
    let rows: Vec<[f64; 4]> = (0..400).map(|i| [hs[i], college[i], u[i], income[i]]).collect();
    let names: Vec<String> = ["high_school", "college", "college_b", "income"]
        .map(String::from)
        .to_vec();
    let c = pearson_matrix(&Matrix::from_rows(&rows), &names).unwrap();
    assert!((c.r[(0, 1)] + 0.783).abs() < 0.005);
    assert!((c.r[(2, 3)] - 0.676).abs() < 0.005);
    let f = multicollinearity_filter(&c, 0.7);
    assert!(f.kept.contains(&"college_b".to_string()) && f.kept.contains(&"income".to_string()));
    assert_eq!(f.dropped.len(), 1);
    assert!(["high_school", "college"].contains(&f.dropped[0].name.as_str()));
}
