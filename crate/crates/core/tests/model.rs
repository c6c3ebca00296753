use bayescomp::model::{
    conjugate_posterior, conjugate_posterior_weighted, partition, BayesModel, Dataset, GaussianLocation,
    LogisticRegression, Target, WeightedPotential,
};
use bayescomp::rng;

fn location(rows: Vec<Vec<f64>>) -> GaussianLocation {
    let d = rows[0].len();
    GaussianLocation::new(d, Dataset::new(rows).unwrap()).unwrap()
}

// N(0, I) prior with unit-variance likelihood: precision 1 + Σw, mean Σ w x / (1 + Σw).
fn oracle(rows: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, f64) {
    let prec = 1.0 + w.iter().sum::<f64>();
    let d = rows[0].len();
    let mean = (0..d).map(|j| rows.iter().zip(w).map(|(r, wi)| wi * r[j]).sum::<f64>() / prec).collect();
    (mean, 1.0 / prec)
}

fn assert_posterior(model: &GaussianLocation, w: &[f64], mean: &[f64], var: f64) {
    let rows: Vec<Vec<f64>> = model.dataset().rows().map(|r| r.to_vec()).collect();
    let (om, ov) = oracle(&rows, w);
    let post = conjugate_posterior_weighted(model, w, 1.0).unwrap();
    for j in 0..mean.len() {
        assert!((post.mean()[j] - mean[j]).abs() < 1e-12);
        assert!((om[j] - mean[j]).abs() < 1e-12);
        for k in 0..mean.len() {
            let expect = if j == k { var } else { 0.0 };
            assert!((post.cov()[(j, k)] - expect).abs() < 1e-12);
        }
    }
    assert!((ov - var).abs() < 1e-12);
}

#[test]
fn single_observation_halves_the_prior() {
    let m = location(vec![vec![2.0]]);
    assert_posterior(&m, &[1.0], &[1.0], 0.5);
}

#[test]
fn two_dimensional_pair() {
    let m = location(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
    assert_posterior(&m, &[1.0, 1.0], &[2.0 / 3.0, 0.0], 1.0 / 3.0);
}

#[test]
fn two_scalar_observations() {
    let m = location(vec![vec![2.0], vec![4.0]]);
    assert_posterior(&m, &[1.0, 1.0], &[2.0], 1.0 / 3.0);
    let p = conjugate_posterior(&m).unwrap();
    assert!((p.mean()[0] - 2.0).abs() < 1e-12);
}

#[test]
fn weight_three_counts_as_three_copies() {
    let m = location(vec![vec![2.0]]);
    assert_posterior(&m, &[3.0], &[1.5], 0.25);
    let copies = location(vec![vec![2.0]; 3]);
    let a = conjugate_posterior_weighted(&m, &[3.0], 1.0).unwrap();
    let b = conjugate_posterior(&copies).unwrap();
    assert!(a.kl_to(&b).abs() < 1e-12);
}

#[test]
fn logistic_gradient_at_origin() {
    let data = Dataset::with_labels(vec![vec![1.0]], vec![1.0]).unwrap();
    let m = LogisticRegression::new(data, 1.0).unwrap();
    let mut g = vec![0.0];
    m.add_datum_grad(&[0.0], 0, 1.0, &mut g);
    assert!((g[0] - 0.5).abs() < 1e-15);
    assert!((m.datum_loglik(&[0.0], 0) + 2f64.ln()).abs() < 1e-15);
}

#[test]
fn logistic_potential_gradient_matches_finite_differences() {
    let mut r = rng::seeded(5);
    let n = 40;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| rng::normal_vec(&mut r, 5)).collect();
    let labels: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let m = LogisticRegression::new(Dataset::with_labels(rows, labels).unwrap(), 2.0).unwrap();
    let target = WeightedPotential::posterior(&m);
    let h = 1e-6;
    for _ in 0..10 {
        let theta = rng::normal_vec(&mut r, 5);
        let g = target.grad_potential(&theta);
        for j in 0..5 {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (target.potential(&up) - target.potential(&dn)) / (2.0 * h);
            assert!((g[j] - fd).abs() / fd.abs().max(1.0) <= 1e-5, "coordinate {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn partition_is_a_seeded_disjoint_cover() {
    let values: Vec<f64> = (0..60).map(|i| i as f64).collect();
    let data = Dataset::scalar(&values).unwrap();
    let a = partition(&data, 6, 11).unwrap();
    let b = partition(&data, 6, 11).unwrap();
    let c = partition(&data, 6, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut seen: Vec<usize> = a.iter().flat_map(|s| s.origin().to_vec()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..60).collect::<Vec<_>>());
    for (j, s) in a.iter().enumerate() {
        assert_eq!(s.n_obs(), 10);
        assert_eq!(s.shard(), Some(j));
    }
    assert!(partition(&data, 7, 1).is_err());
}
