use bayescomp::flow::ComposedFlow;
use bayescomp::mcmc::{
    acceptance_rate, esjd_loss, forward_kl_loss, leapfrog, positions, run_chain, Adam, AugmentedHmcKernel, ChainState,
    HmcKernel, IndependentKernel,
};
use bayescomp::model::GaussianMixture;
use bayescomp::rng;
use nalgebra::DMatrix;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn leapfrog_is_reversible() {
    let target = GaussianMixture::symmetric_bimodal(3, 1.5, 1.0);
    let mut r = rng::seeded(8);
    for _ in 0..20 {
        let x = rng::normal_vec(&mut r, 3);
        let v = rng::normal_vec(&mut r, 3);
        let (x1, v1, _) = leapfrog(&target, &x, &v, 0.1, 25);
        let back: Vec<f64> = v1.iter().map(|a| -a).collect();
        let (x2, v2, _) = leapfrog(&target, &x1, &back, 0.1, 25);
        assert!(max_abs_diff(&x, &x2) <= 1e-10);
        assert!(max_abs_diff(&v, &v2.iter().map(|a| -a).collect::<Vec<_>>()) <= 1e-10);
    }
}

fn augmented(seed: u64) -> AugmentedHmcKernel {
    let base = HmcKernel::new(0.2, 3).unwrap();
    AugmentedHmcKernel::random(base, 2, 0.3, &mut rng::seeded(seed))
}

#[test]
fn augmented_log_jacobian_matches_finite_differences() {
    let target = GaussianMixture::symmetric_bimodal(2, 1.0, 1.0);
    let h = 1e-6;
    for seed in 0..5 {
        let k = augmented(seed);
        let mut r = rng::seeded(100 + seed);
        let z0: Vec<f64> = rng::normal_vec(&mut r, 4);
        let map = |z: &[f64]| {
            let (x, v, _) = k.integrate(&target, &z[..2], &z[2..], true);
            [x, v].concat()
        };
        let mut jac = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut up = z0.clone();
            let mut dn = z0.clone();
            up[j] += h;
            dn[j] -= h;
            let (fu, fd) = (map(&up), map(&dn));
            for i in 0..4 {
                jac[(i, j)] = (fu[i] - fd[i]) / (2.0 * h);
            }
        }
        let fd_logdet = jac.determinant().abs().ln();
        let (_, _, log_jac) = k.integrate(&target, &z0[..2], &z0[2..], true);
        assert!((fd_logdet - log_jac).abs() <= 1e-4, "seed {seed}: {fd_logdet} vs {log_jac}");
    }
}

#[test]
fn augmented_inverse_undoes_forward() {
    let target = GaussianMixture::standard_normal(2);
    let k = augmented(3);
    let mut r = rng::seeded(4);
    let x = rng::normal_vec(&mut r, 2);
    let v = rng::normal_vec(&mut r, 2);
    let (x1, v1, lj) = k.integrate(&target, &x, &v, true);
    let (x2, v2, lj_inv) = k.integrate(&target, &x1, &v1, false);
    assert!(max_abs_diff(&x, &x2) <= 1e-10);
    assert!(max_abs_diff(&v, &v2) <= 1e-10);
    assert!((lj + lj_inv).abs() <= 1e-10);
}

#[test]
fn identity_independent_proposal_always_accepts() {
    let target = GaussianMixture::standard_normal(1);
    let kernel = IndependentKernel::new(ComposedFlow::identity(1, 2));
    let mut state = ChainState::new(&target, vec![0.0], 21, 0).unwrap();
    let t = 100_000;
    let rec = run_chain(&kernel, &target, &mut state, t).unwrap();
    assert_eq!(acceptance_rate(&rec), 1.0);
    let m = positions(&rec).iter().map(|x| x[0]).sum::<f64>() / t as f64;
    assert!(m.abs() <= 4.0 / (t as f64).sqrt(), "mean {m}");
}

#[test]
fn esjd_lag_matches_brute_force() {
    let target = GaussianMixture::standard_normal(1);
    let flow = ComposedFlow::random(1, 3, 0.6, &mut rng::seeded(2));
    let kernel = IndependentKernel::new(flow.clone());

    let mut r = rng::seeded(9);
    let buffer: Vec<Vec<f64>> = (0..100_000).map(|_| rng::normal_vec(&mut r, 1)).collect();
    let est = esjd_loss(&kernel, &target, &buffer, 1.0, 17).unwrap();

    let n = 1_000_000;
    let (props, _) = flow.sample(n, 31).unwrap();
    let mut total = 0.0;
    for y in &props {
        let x = rng::normal(&mut r);
        let log_pi = |v: f64| -0.5 * v * v;
        let log_alpha = log_pi(y[0]) + flow.log_density(&[x]).unwrap() - log_pi(x) - flow.log_density(y).unwrap();
        total += (x - y[0]).powi(2) * log_alpha.min(0.0).exp();
    }
    let brute = total / n as f64;
    assert!((est.lag / brute - 1.0).abs() <= 0.02, "{} vs {brute}", est.lag);
    assert!((est.value - (1.0 / est.lag - est.lag)).abs() < 1e-12);
}

#[test]
fn forward_kl_decreases_on_a_fixed_buffer() {
    let mut r = rng::seeded(6);
    let buffer: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let z = rng::normal_vec(&mut r, 2);
            vec![1.0 + 0.5 * z[0], -1.0 + 2.0 * z[1]]
        })
        .collect();
    let mut flow = ComposedFlow::random(2, 4, 0.1, &mut rng::seeded(1));
    let mut params = flow.params();
    let mut adam = Adam::new(params.len(), 0.01);
    let mut prev = forward_kl_loss(&flow, &buffer).unwrap().0;
    let first = prev;
    let mut decreases = 0;
    for _ in 0..100 {
        let (_, g) = forward_kl_loss(&flow, &buffer).unwrap();
        adam.step(&mut params, &g);
        flow.set_params(&params).unwrap();
        params = flow.params();
        let now = forward_kl_loss(&flow, &buffer).unwrap().0;
        if now < prev {
            decreases += 1;
        }
        prev = now;
    }
    assert!(decreases >= 95, "{decreases} decreasing steps");
    assert!(prev < first);
}

#[test]
fn identity_flow_is_stationary_for_its_own_samples() {
    let flow = ComposedFlow::identity(2, 2);
    let (buffer, _) = flow.sample(4000, 12).unwrap();
    let (_, g) = forward_kl_loss(&flow, &buffer).unwrap();
    let p = g.len();
    let mut var = vec![0.0; p];
    for x in &buffer {
        let (_, gi) = flow.param_grad_neg_logdensity(std::slice::from_ref(x)).unwrap();
        for j in 0..p {
            var[j] += (gi[j] - g[j]).powi(2);
        }
    }
    let s = buffer.len() as f64;
    let se = (var.iter().sum::<f64>() / (s - 1.0) / s).sqrt();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 3.0 * se, "gradient norm {norm}, s.e. {se}");
}
