use nalgebra::DMatrix;
use nngp_gauge::kernel_engine::limit_kernel;
use nngp_gauge::net_sampler::{CondCovSampler, SamplerKind};
use nngp_gauge::operator_lab::{
    couple_fields, d2_bound, discretize, eigen_summability, functional_w2_bound, gelbrich_w2, powers_stormer, write_spectrum_csv, DiscreteOperator,
    FunctionalAccumulator, Grid,
};
use nngp_gauge::quadrature::QuadratureRule;
use nngp_gauge::stein_gauge::bures_w2;
use nngp_gauge::{InputSet, NetworkConfig, Nonlinearity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn min_kernel_op(nodes: usize) -> DiscreteOperator {
    let g = Grid::ball(vec![0.5], 0.5, nodes, 0, 1).unwrap();
    let x: Vec<f64> = g.nodes.iter().map(|p| p[0]).collect();
    let k = DMatrix::from_fn(x.len(), x.len(), |i, j| x[i].min(x[j]));
    discretize(&k, &g).unwrap()
}

#[test]
fn min_kernel_spectrum_refines() {
    // the kink on the diagonal limits Nystrom accuracy to O(G^-2): the top
    // ten are within 0.1% of the 4x grid from about 350 nodes on
    let coarse = min_kernel_op(384).spectral().block_eigenvalues;
    let fine = min_kernel_op(1536).spectral().block_eigenvalues;
    for k in 0..10 {
        let rel = (coarse[k] - fine[k]).abs() / fine[k];
        assert!(rel < 1e-3, "eigenvalue {}: {} vs {} ({rel:e})", k + 1, coarse[k], fine[k]);
        // and the continuum values 1 / ((k - 1/2)^2 pi^2)
        let exact = 1.0 / ((k as f64 + 0.5).powi(2) * std::f64::consts::PI.powi(2));
        assert!((fine[k] - exact).abs() < 1e-3 * exact);
    }
}

#[test]
fn min_kernel_square_root_sums_diverge_but_refine() {
    let coarse = eigen_summability(&min_kernel_op(64), 0.5);
    let fine_vals = min_kernel_op(256).spectral().block_eigenvalues;
    // lambda_k ~ k^-2 makes sum sqrt(lambda_k) harmonic
    assert!(coarse.non_summable, "{coarse:?}");
    assert!((coarse.decay.unwrap() - 2.0).abs() < 0.1);
    for (t, s) in &coarse.partial_sums {
        let reference: f64 = fine_vals.iter().take(*t).map(|v| v.max(0.0).sqrt()).sum();
        assert!((s - reference).abs() < 0.02 * reference, "truncation {t}: {s} vs {reference}");
    }
    // partial sums keep growing like log G
    let p = &coarse.partial_sums;
    assert!(p[2].1 - p[1].1 > 0.15 && p[1].1 - p[0].1 > 0.15);
}

#[test]
fn smooth_kernel_is_summable() {
    let cfg = NetworkConfig::uniform(2, 1, 8, 1, 0.0, 1.0, Nonlinearity::Tanh);
    let g = Grid::ball(vec![1.5], 1.0, 48, 0, 1).unwrap();
    let k = limit_kernel(&cfg, &g.input_set(), &QuadratureRule::default()).unwrap().output();
    let op = discretize(&k, &g).unwrap();
    let r = eigen_summability(&op, 0.5);
    assert!(!r.non_summable, "{r:?}");
    let sp = op.spectral();
    assert!(sp.reconstruction_error < 1e-8);
    // orthonormal in the weighted inner product
    let u = &sp.eigenvectors;
    for a in 0..5 {
        for b in 0..5 {
            let ip: f64 = (0..u.nrows()).map(|i| g.weights[i] * u[(i, a)] * u[(i, b)]).sum();
            assert!((ip - f64::from(u8::from(a == b))).abs() < 1e-9, "({a},{b}) {ip}");
        }
    }
    let mut csv = vec![];
    write_spectrum_csv(&mut csv, &sp.eigenvalues).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("index,eigenvalue\n1,"));
    assert_eq!(text.lines().count(), 1 + sp.eigenvalues.len());
}

#[test]
fn rank_one_and_constant_kernels() {
    let g = Grid::ball(vec![2.0, 0.0], 0.5, 12, 0, 3).unwrap();
    let n = g.nodes.len();
    let k = DMatrix::from_element(n, n, 1.7);
    let op = discretize(&k, &g).unwrap();
    let r = eigen_summability(&op, 0.5);
    let top = 1.7 * g.volume();
    // three output copies of one eigenvalue
    let total = r.partial_sums.last().unwrap().1;
    assert!((total - 3.0 * top.sqrt()).abs() < 1e-6 * total, "{r:?}");
    assert!((op.trace() - 3.0 * top).abs() < 1e-10 * top);
}

#[test]
fn relu_arc_trace_three_ways() {
    let cfg = NetworkConfig::uniform(2, 2, 8, 1, 0.0, 2.0, Nonlinearity::Relu);
    // arc parameter theta in (0.2, 1.2), inputs 1.3 (cos theta, sin theta)
    let g = Grid::ball(vec![0.7], 0.5, 40, 0, 1).unwrap();
    let pts: Vec<Vec<f64>> = g.nodes.iter().map(|t| vec![1.3 * t[0].cos(), 1.3 * t[0].sin()]).collect();
    let k = limit_kernel(&cfg, &InputSet::values(pts), &QuadratureRule::default()).unwrap().output();
    let op = discretize(&k, &g).unwrap();
    let direct: f64 = (0..g.nodes.len()).map(|i| g.weights[i] * k[(i, i)]).sum();
    assert!((op.trace() - direct).abs() < 1e-10 * direct);
    let eig: f64 = op.spectral().eigenvalues.iter().sum();
    assert!((eig - direct).abs() < 1e-8 * direct);
    // K_aa = 2 |x|^2 / n0 along the arc, so the trace is 1.69 * length
    assert!((direct - 1.69).abs() < 1e-10);
    let hs_direct: f64 = (0..g.nodes.len()).flat_map(|i| (0..g.nodes.len()).map(move |j| (i, j))).map(|(i, j)| g.weights[i] * g.weights[j] * k[(i, j)].powi(2)).sum();
    assert!((op.hs_norm() - hs_direct.sqrt()).abs() < 1e-12 * op.hs_norm());
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let rank = rng.random_range(1..=n);
    let g = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale: f64 = rng.random_range(0.01..10.0);
    scale * &g * g.transpose() / rank as f64
}

fn random_pair(rng: &mut ChaCha8Rng, max_dim: usize) -> (DiscreteOperator, DiscreteOperator) {
    let n = rng.random_range(1..=max_dim);
    let a = random_psd(rng, n);
    // half of the pairs are close to each other
    let b = if rng.random_bool(0.5) { &a + 1e-3 * random_psd(rng, n) } else { random_psd(rng, n) };
    let m = rng.random_range(1..=3);
    (DiscreteOperator::from_weighted(a, m).unwrap(), DiscreteOperator::from_weighted(b, m).unwrap())
}

#[test]
fn powers_stormer_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..200 {
        let (a, b) = random_pair(&mut rng, 50);
        let ps = powers_stormer(&a, &b).unwrap_or_else(|e| panic!("pair {i}: {e}"));
        assert!(ps.lhs <= ps.rhs + 1e-8);
    }
}

#[test]
fn gelbrich_dominates_bures() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..200 {
        let (a, b) = random_pair(&mut rng, 30);
        let g = gelbrich_w2(&a, &b).unwrap();
        let m = a.multiplicity as f64;
        let w = m.sqrt() * bures_w2(&a.matrix, &b.matrix).unwrap().w2;
        assert!(g >= w - 1e-8, "pair {i}: {g} < {w}");
    }
}

#[test]
fn gelbrich_and_d2_closed_forms() {
    let lam = [4.0, 1.0, 0.25, 0.0];
    let mu = [1.0, 1.0, 1.0, 2.0];
    let a = DiscreteOperator::from_weighted(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&lam)), 1).unwrap();
    let b = DiscreteOperator::from_weighted(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&mu)), 1).unwrap();
    let expect: f64 = lam.iter().zip(&mu).map(|(l, m)| (l.sqrt() - m.sqrt()).powi(2)).sum::<f64>().sqrt();
    assert!((gelbrich_w2(&a, &b).unwrap() - expect).abs() < 1e-14);
    assert_eq!(gelbrich_w2(&a, &a).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (p, q) = random_pair(&mut rng, 20);
    let mut s = 0.0;
    for r in 0..p.dim() {
        for c in 0..p.dim() {
            s += (p.matrix[(r, c)] - q.matrix[(r, c)]).powi(2);
        }
    }
    let oracle = 0.5 * (p.multiplicity as f64 * s).sqrt();
    assert!((d2_bound(&p, &q).unwrap() - oracle).abs() < 1e-12 * oracle.max(1.0));
}

#[test]
fn coupling_matches_hs_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = DiscreteOperator::from_weighted(random_psd(&mut rng, 30), 1).unwrap();
    let b = DiscreteOperator::from_weighted(random_psd(&mut rng, 30), 1).unwrap();
    let r = couple_fields(&a, &b, 100_000, 3).unwrap();
    assert!(r.z_score.abs() < 4.0, "{r:?}");
    let same = couple_fields(&a, &a, 100, 3).unwrap();
    assert_eq!((same.empirical, same.predicted, same.sup_norm_sq), (0.0, 0.0, 0.0));
}

#[test]
fn functional_bound_is_stable_under_grid_refinement() {
    let cfg = NetworkConfig::uniform(2, 1, 64, 1, 0.0, 1.0, Nonlinearity::Tanh);
    let run = |nodes: usize| {
        let g = Grid::ball(vec![1.5], 1.0, nodes, 0, 1).unwrap();
        let inp = g.input_set();
        let k = discretize(&limit_kernel(&cfg, &inp, &QuadratureRule::default()).unwrap().output(), &g).unwrap();
        // materialized draws: the same seeds give the same networks on both grids
        let s = CondCovSampler::new(SamplerKind::Materialized, &cfg, &inp).unwrap();
        let terms = s.map(0..2000, 21, |_, sig| FunctionalAccumulator::new(&k).terms(&sig).unwrap());
        let mut acc = FunctionalAccumulator::new(&k);
        for (b, c) in terms {
            acc.push_terms(b, c);
        }
        acc.finish().unwrap()
    };
    let (a, b) = (run(32), run(64));
    assert!((a.d2_rhs - b.d2_rhs).abs() < 0.05 * b.d2_rhs, "{a:?} {b:?}");
    assert!((a.w2_rhs - b.w2_rhs).abs() < 0.05 * b.w2_rhs, "{a:?} {b:?}");
}

#[test]
fn functional_bound_vanishes_at_the_limit() {
    let g = Grid::ball(vec![-1.0, 1.0], 0.5, 6, 0, 2).unwrap();
    let cfg = NetworkConfig::uniform(2, 2, 8, 2, 0.1, 1.0, Nonlinearity::Tanh);
    let k = discretize(&limit_kernel(&cfg, &g.input_set(), &QuadratureRule::default()).unwrap().output(), &g).unwrap();
    let f = functional_w2_bound(&[k.clone(), k.clone(), k.clone()], &k).unwrap();
    assert_eq!((f.d2_rhs, f.w2_rhs), (0.0, 0.0));
    let other = Grid::ball(vec![-1.0, 1.0], 0.5, 5, 0, 2).unwrap();
    let k2 = discretize(&limit_kernel(&cfg, &other.input_set(), &QuadratureRule::default()).unwrap().output(), &other).unwrap();
    assert!(functional_w2_bound(&[k2], &k).is_err());
}

#[test]
fn operator_json_keeps_grid_metadata() {
    let g = Grid::ball(vec![1.0], 0.5, 5, 1, 2).unwrap();
    let cfg = NetworkConfig::uniform(1, 1, 8, 2, 0.1, 1.0, Nonlinearity::Tanh);
    let k = limit_kernel(&cfg, &g.input_set(), &QuadratureRule::default()).unwrap().output();
    let op = discretize(&k, &g).unwrap();
    assert_eq!(op.dim(), 2 * g.nodes.len());
    let v: serde_json::Value = serde_json::from_str(&op.to_json().unwrap()).unwrap();
    assert_eq!(v["grid_hash"], g.hash());
    assert_eq!(v["matrix"].as_array().unwrap().len(), op.dim());
    let back: DiscreteOperator = serde_json::from_value(v).unwrap();
    assert_eq!(back, op);
}
