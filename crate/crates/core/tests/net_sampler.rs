use nngp_gauge::kernel_engine::limit_kernel;
use nngp_gauge::net_sampler::{conditional_covariance, draw_cond_covs, draw_cond_covs_with, forward, resample_output, CondCovSampler, SamplerKind};
use nngp_gauge::quadrature::QuadratureRule;
use nngp_gauge::rng::split;
use nngp_gauge::stats::{anderson_darling, mean_var};
use nngp_gauge::{InputSet, NetworkConfig, Nonlinearity};
use rayon::prelude::*;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    (m, (v / xs.len() as f64).sqrt())
}

// Variance estimate with a standard error from the fourth central moment.
fn var_se(xs: &[f64]) -> (f64, f64) {
    let (m, v) = mean_var(xs);
    let n = xs.len() as f64;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v) / n).sqrt())
}

#[test]
fn layer_one_is_exactly_gaussian_with_base_variance() {
    let cfg = NetworkConfig::uniform(1, 3, 4, 2, 0.3, 1.7, Nonlinearity::Tanh);
    let x = vec![0.5, -1.25, 2.0];
    let inp = InputSet::single(x.clone());
    let z: Vec<f64> = (0..100_000u64).into_par_iter().map(|k| forward(&cfg, &inp, split(7, k)).unwrap().pre[0][(1, 0)]).collect();
    let expect = 0.3 + 1.7 * x.iter().map(|v| v * v).sum::<f64>() / 3.0;
    let (v, se) = var_se(&z);
    assert!((v - expect).abs() < 4.0 * se, "{v} +- {se} vs {expect}");
    let (m, mse) = mean_se(&z);
    assert!(m.abs() < 4.0 * mse);
}

#[test]
fn mean_sigma_matches_limit_kernel() {
    // ReLU with C_b = 0 keeps E[Sigma_aa] = K_aa at every width
    let cfg = NetworkConfig::uniform(2, 2, 64, 1, 0.0, 2.0, Nonlinearity::Relu);
    let inp = InputSet::single(vec![0.7, -1.1]);
    let k = limit_kernel(&cfg, &inp, &QuadratureRule::default()).unwrap().output()[(0, 0)];
    let a: Vec<f64> = (0..100_000u64)
        .into_par_iter()
        .map(|s| {
            let st = forward(&cfg, &inp, split(3, s)).unwrap();
            conditional_covariance(&st, &cfg, &inp).sigma[(0, 0)]
        })
        .collect();
    let (m, se) = mean_se(&a);
    assert!((m - k).abs() < 3.0 * se, "relu: {m} +- {se} vs {k}");

    // tanh: E[Sigma] - K = O(1/n), below 3 SE at this width
    let cfg = NetworkConfig::uniform(2, 1, 1024, 1, 0.0, 1.0, Nonlinearity::Tanh);
    let inp = InputSet::single(vec![1.0]);
    let k = limit_kernel(&cfg, &inp, &QuadratureRule::default()).unwrap().output()[(0, 0)];
    let sampler = CondCovSampler::new(SamplerKind::Conditional, &cfg, &inp).unwrap();
    let a = sampler.map(0..100_000, 5, |_, s| s[(0, 0)]);
    let (m, se) = mean_se(&a);
    assert!((m - k).abs() < 3.0 * se, "tanh: {m} +- {se} vs {k}");
}

#[test]
fn outputs_given_hidden_layers_are_iid_gaussian() {
    let cfg = NetworkConfig::uniform(2, 2, 16, 3, 0.1, 1.0, Nonlinearity::Tanh);
    let inp = InputSet::values(vec![vec![1.0, 0.5], vec![-0.3, 0.8]]);
    let st = forward(&cfg, &inp, 99).unwrap();
    let sigma = conditional_covariance(&st, &cfg, &inp).sigma;
    let outs: Vec<_> = (0..10_000u64).into_par_iter().map(|k| resample_output(&st, &cfg, &inp, split(1234, k))).collect();
    for i in 0..3 {
        for a in 0..2 {
            let z: Vec<f64> = outs.iter().map(|o| o[(i, a)]).collect();
            let (_, p) = anderson_darling(&z, 0.0, sigma[(a, a)]);
            assert!(p > 1e-3, "coordinate {i} input {a}: p = {p}");
        }
    }
    // distinct coordinates uncorrelated, same coordinate across inputs
    // correlated as Sigma says
    let n = outs.len() as f64;
    let c01: f64 = outs.iter().map(|o| o[(0, 0)] * o[(1, 0)]).sum::<f64>() / n;
    let s = sigma[(0, 0)];
    assert!(c01.abs() < 4.0 * s / n.sqrt(), "{c01}");
    let cross: Vec<f64> = outs.iter().map(|o| o[(2, 0)] * o[(2, 1)]).collect();
    let (m, se) = mean_se(&cross);
    assert!((m - sigma[(0, 1)]).abs() < 4.0 * se, "{m} vs {}", sigma[(0, 1)]);
}

#[test]
fn variance_ratio_tracks_width() {
    let base = NetworkConfig::uniform(3, 1, 64, 1, 0.0, 1.0, Nonlinearity::Tanh);
    let inp = InputSet::single(vec![1.0]);
    let var_at = |n: usize| {
        let cfg = base.with_hidden_width(n);
        let s = CondCovSampler::new(SamplerKind::Conditional, &cfg, &inp).unwrap();
        mean_var(&s.map(0..20_000, 17, |_, m| m[(0, 0)])).1
    };
    let ratio = var_at(64) / var_at(256);
    assert!((3.0..=5.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn samplers_agree_in_law() {
    let cfg = NetworkConfig::uniform(2, 2, 32, 1, 0.2, 1.5, Nonlinearity::Gelu);
    let inp = InputSet::with_derivatives(vec![vec![1.0, -0.5], vec![0.2, 0.9]], vec![vec![0.6, 0.8]]);
    let mat = draw_cond_covs_with(SamplerKind::Materialized, &cfg, &inp, 20_000, 1).unwrap();
    let cond = draw_cond_covs_with(SamplerKind::Conditional, &cfg, &inp, 20_000, 2).unwrap();
    let m = inp.index.len();
    for r in 0..m {
        for c in r..m {
            let a: Vec<f64> = mat.iter().map(|d| d.sigma[(r, c)]).collect();
            let b: Vec<f64> = cond.iter().map(|d| d.sigma[(r, c)]).collect();
            let ((ma, sa), (mb, sb)) = (mean_se(&a), mean_se(&b));
            assert!((ma - mb).abs() < 4.5 * (sa * sa + sb * sb).sqrt(), "mean ({r},{c}): {ma} vs {mb}");
            let ((va, vsa), (vb, vsb)) = (var_se(&a), var_se(&b));
            assert!((va - vb).abs() < 4.5 * (vsa * vsa + vsb * vsb).sqrt(), "var ({r},{c}): {va} vs {vb}");
        }
    }
}

#[test]
fn replica_batches_ignore_thread_count() {
    let cfg = NetworkConfig::uniform(2, 2, 12, 2, 0.1, 1.0, Nonlinearity::Tanh);
    let inp = InputSet::with_derivatives(vec![vec![1.0, 0.0], vec![0.4, -0.6]], vec![vec![0.0, 1.0]]);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| draw_cond_covs(&cfg, &inp, 257, 42).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
    for (k, d) in one.iter().enumerate() {
        assert_eq!(d.seed, split(42, k as u64));
        assert_eq!(d.sigma, d.sigma.transpose());
    }
}

#[test]
fn relu_values_only_sigma_is_psd() {
    let cfg = NetworkConfig::uniform(2, 3, 10, 1, 0.0, 2.0, Nonlinearity::Relu);
    let inp = InputSet::values(vec![vec![1.0, 0.0, 0.5], vec![-0.2, 1.0, 0.3], vec![0.4, 0.4, -1.0], vec![2.0, 1.0, 0.0]]);
    for d in draw_cond_covs(&cfg, &inp, 200, 8).unwrap() {
        assert!(d.sigma.iter().all(|v| *v >= 0.0));
        let min = nngp_gauge::linalg::min_eigenvalue(&d.sigma);
        assert!(min >= -1e-12 * d.sigma.trace(), "{min}");
    }
}
