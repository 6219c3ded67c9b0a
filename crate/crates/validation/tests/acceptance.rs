// End-to-end acceptance runs. Prints one PASS/FAIL line per criterion,
// then fails if any criterion failed. Takes a quarter of an hour on one
// core.

use nngp_gauge::nalgebra::DMatrix;
use nngp_gauge::experiment_harness::{
    one_d_row, run_sweep, to_json, Domain, FitStatus, GridSpec, Metric, OneDRow, ScalingReport, SweepConfig,
};
use nngp_gauge::kernel_engine::{limit_kernel, nondegeneracy_check};
use nngp_gauge::net_sampler::SamplerKind;
use nngp_gauge::operator_lab::{couple_fields, gelbrich_w2, powers_stormer, DiscreteOperator};
use nngp_gauge::quadrature::{QuadratureRule, QuadratureSpec};
use nngp_gauge::stein_gauge::{bures_w2, cum4_identity_check, gaussian_pair_bounds, mixture_distances, Estimate, MixtureVarianceSample};
use nngp_gauge::{Idx, InputSet, NetworkConfig, Nonlinearity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

const WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

struct Outcome {
    pass: bool,
    lines: Vec<String>,
    /// Serialized results, for the reproducibility comparison.
    artifacts: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, lines: vec![], artifacts: vec![] }
    }
    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

// Written straight to stderr so the lines show up without --nocapture.
fn say(s: &str) {
    let mut e = std::io::stderr();
    let _ = writeln!(e, "{s}");
}

fn one_input_sweep(sigma: Nonlinearity, c_w: f64, depth: usize, widths: &[usize], replicas: usize, metrics: Vec<Metric>, seed: u64) -> SweepConfig {
    SweepConfig {
        network: NetworkConfig::uniform(depth, 1, widths[0], 1, 0.0, c_w, sigma),
        widths: widths.to_vec(),
        replicas,
        domain: Domain::Inputs(InputSet::single(vec![1.0])),
        metrics,
        seed,
        targets: BTreeMap::new(),
        sampler: SamplerKind::Conditional,
        quadrature: QuadratureSpec::default(),
        nondegeneracy_order: None,
    }
}

fn nets() -> [(Nonlinearity, f64); 2] {
    [(Nonlinearity::Relu, 2.0), (Nonlinearity::Tanh, 1.0)]
}

fn fit_line(r: &ScalingReport, m: Metric) -> (bool, String) {
    let f = r.fit(m).unwrap();
    let line = format!(
        "{}: slope {} +- {} (target {:?}), rel err at n_max {:?}, excluded {:?}",
        m.name(),
        f.fit.slope.map_or("none".into(), |s| format!("{s:.4}")),
        f.fit.slope_se.map_or("none".into(), |s| format!("{s:.4}")),
        f.target.map(|t| (t.exponent, t.tolerance)),
        f.largest_width_rel_error.map(|x| (x * 1e4).round() / 1e4),
        f.fit.excluded.iter().map(|e| e.width).collect::<Vec<_>>()
    );
    (f.pass == Some(true), line)
}

fn estimate(r: &ScalingReport, m: Metric, width: usize) -> Estimate {
    let p = r.points.iter().find(|p| p.metric == m && p.width == width).unwrap();
    Estimate { estimate: p.estimate, std_error: p.std_error, method: String::new(), clipped: false }
}

// Rebuilds the per-width 1-D row from a sweep report.
fn row_from_report(r: &ScalingReport, width: usize) -> OneDRow {
    let d = r.diagnostics.iter().find(|d| d.width == width).unwrap();
    OneDRow {
        width,
        draws: d.draws,
        limit: d.limit,
        mean_sigma: d.mean_sigma,
        var_sigma: d.var_sigma,
        tv: Some(estimate(r, Metric::Tv, width)),
        w1: Some(estimate(r, Metric::W1, width)),
        lower: Some(estimate(r, Metric::Lower, width)),
        tv_error_bound: d.tv_error_bound,
        w1_error_bound: d.w1_error_bound,
        stein: d.stein,
        w1_variance_bound: d.var_sigma.sqrt(),
        notes: vec![],
    }
}

fn criterion_1(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    for (k, (sigma, cw)) in nets().into_iter().enumerate() {
        let name = sigma.name();
        let r = run_sweep(&one_input_sweep(sigma, cw, 2, &WIDTHS, 200_000, vec![Metric::Tv, Metric::W1, Metric::Lower], seed + k as u64)).unwrap();
        for m in [Metric::Tv, Metric::W1, Metric::Lower] {
            let (ok, line) = fit_line(&r, m);
            out.check(ok, format!("{name} {line}"));
        }
        for &n in &WIDTHS {
            let v = row_from_report(&r, n).sandwich_violations(3.0);
            out.check(v.is_empty(), format!("{name} n = {n}: lower <= min(2TV, W1), TV/W1 <= Stein bounds {v:?}"));
        }
        out.artifacts.push(to_json(&r).unwrap());
    }
    out
}

fn criterion_2(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    for (k, (sigma, cw)) in nets().into_iter().enumerate() {
        let name = sigma.name();
        let r = run_sweep(&one_input_sweep(sigma, cw, 2, &WIDTHS, 20_000, vec![Metric::VarSigma, Metric::MeanGap], seed + k as u64)).unwrap();
        for m in [Metric::VarSigma, Metric::MeanGap] {
            let (ok, line) = fit_line(&r, m);
            out.check(ok, format!("{name} {line}"));
        }
        let gaps: Vec<String> = r.points_for(Metric::MeanGap).iter().map(|p| format!("{:.2e}+-{:.1e}", p.estimate, p.std_error)).collect();
        out.lines.push(format!("     {name} mean gap points {gaps:?}"));
        out.artifacts.push(to_json(&r).unwrap());
    }
    // identity, one hidden layer: Var = 2 C_W^2 K^2 / n with K = C_b + C_W x^2
    let (cb, cw) = (0.0, 1.0);
    let r = run_sweep(&one_input_sweep(Nonlinearity::Identity, cw, 1, &WIDTHS, 20_000, vec![Metric::VarSigma], seed + 2)).unwrap();
    let k = cb + cw;
    for p in r.points_for(Metric::VarSigma) {
        let exact = 2.0 * cw * cw * k * k / p.width as f64;
        let z = (p.estimate - exact) / p.std_error;
        out.check(z.abs() < 4.0, format!("identity n = {}: var {:.5e} vs {:.5e}, z = {z:.2}", p.width, p.estimate, exact));
    }
    out.artifacts.push(to_json(&r).unwrap());
    out
}

fn criterion_3(seed: u64, replicas: usize) -> Outcome {
    let mut out = Outcome::new();
    for (k, (sigma, cw)) in nets().into_iter().enumerate() {
        let name = sigma.name();
        let cfg = one_input_sweep(sigma, cw, 2, &[8, 16, 32, 64], replicas, vec![Metric::Kappa3, Metric::Kappa4], seed + k as u64);
        let r = run_sweep(&cfg).unwrap();
        let (ok, line) = fit_line(&r, Metric::Kappa3);
        out.check(ok, format!("{name} {line}"));
        // the fourth cumulant only needs a slope consistent with -3
        let f = r.fit(Metric::Kappa4).unwrap();
        let t = f.target.unwrap();
        let ok = f.fit.status == FitStatus::Ok && (f.fit.slope.unwrap() - t.exponent).abs() <= t.tolerance;
        let (_, line) = fit_line(&r, Metric::Kappa4);
        out.check(ok, format!("{name} {line}"));
        let c = cum4_identity_check(&cfg.network.with_hidden_width(8), &[1.0], 8, replicas, seed + 10 + k as u64, SamplerKind::Conditional).unwrap();
        out.check(c.z_score.abs() < 4.0, format!("{name} n = 8: 3 Var(Sigma) = {:.5e}, kappa4(z) = {:.5e}, z = {:.2}", c.lhs, c.rhs, c.z_score));
        out.artifacts.push(to_json(&r).unwrap());
        out.artifacts.push(serde_json::to_string(&c).unwrap());
    }
    out
}

fn criterion_4(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    let inputs = vec![vec![1.0, 0.5, -0.3], vec![-0.4, 1.2, 0.7], vec![0.9, -0.8, 1.1]];
    let cfg = SweepConfig {
        network: NetworkConfig::uniform(2, 3, 16, 1, 0.0, 1.0, Nonlinearity::Tanh),
        widths: WIDTHS.to_vec(),
        replicas: 200_000,
        domain: Domain::Inputs(InputSet::values(inputs)),
        metrics: vec![Metric::ConvexBoundRhs, Metric::BuresW2],
        seed,
        targets: BTreeMap::new(),
        sampler: SamplerKind::Conditional,
        quadrature: QuadratureSpec::default(),
        nondegeneracy_order: Some(0),
    };
    let r = run_sweep(&cfg).unwrap();
    let (ok, line) = fit_line(&r, Metric::ConvexBoundRhs);
    out.check(ok, line);
    let b = r.points_for(Metric::BuresW2);
    for w in b.windows(2) {
        out.check(
            w[1].estimate < w[0].estimate,
            format!("bures n = {} -> {}: {:.4e} -> {:.4e}", w[0].width, w[1].width, w[0].estimate, w[1].estimate),
        );
    }
    out.artifacts.push(to_json(&r).unwrap());
    out
}

fn criterion_5_config(seed: u64, replicas: usize) -> SweepConfig {
    SweepConfig {
        network: NetworkConfig::uniform(2, 1, 32, 1, 0.0, 1.0, Nonlinearity::Tanh),
        widths: vec![32, 64, 128, 256, 512],
        replicas,
        domain: Domain::Grid(GridSpec { center: vec![1.5], radius: 1.0, nodes_per_axis: 64, order: 0, exclude_origin: true }),
        metrics: vec![Metric::D2Rhs, Metric::W2Rhs],
        seed,
        targets: BTreeMap::new(),
        sampler: SamplerKind::Conditional,
        quadrature: QuadratureSpec::default(),
        nondegeneracy_order: None,
    }
}

fn criterion_5(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    let r = run_sweep(&criterion_5_config(seed, 20_000)).unwrap();
    for m in [Metric::D2Rhs, Metric::W2Rhs] {
        let (ok, line) = fit_line(&r, m);
        out.check(ok, line);
    }
    out.artifacts.push(to_json(&r).unwrap());
    out
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
    let b = if rng.random_bool(0.5) { &a + 1e-3 * random_psd(rng, n) } else { random_psd(rng, n) };
    let m = rng.random_range(1..=3);
    (DiscreteOperator::from_weighted(a, m).unwrap(), DiscreteOperator::from_weighted(b, m).unwrap())
}

fn criterion_6(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = vec![];
    let mut worst = f64::INFINITY;
    for i in 0..200 {
        let (a, b) = random_pair(&mut rng, 50);
        let ps = powers_stormer(&a, &b).unwrap();
        worst = worst.min(ps.rhs - ps.lhs);
        if ps.lhs > ps.rhs + 1e-8 {
            bad.push(i);
        }
    }
    out.check(bad.is_empty(), format!("Powers-Stormer on 200 pairs: violations {bad:?}, min slack {worst:.3e}"));

    let mut bad = vec![];
    for i in 0..200 {
        let (a, b) = random_pair(&mut rng, 30);
        let g = gelbrich_w2(&a, &b).unwrap();
        let w = (a.multiplicity as f64).sqrt() * bures_w2(&a.matrix, &b.matrix).unwrap().w2;
        if g < w - 1e-8 {
            bad.push(i);
        }
    }
    out.check(bad.is_empty(), format!("Gelbrich >= Bures on 200 pairs: violations {bad:?}"));

    let mut zs = vec![];
    for i in 0..50u64 {
        let (a, b) = random_pair(&mut rng, 30);
        zs.push(couple_fields(&a, &b, 100_000, seed + i).unwrap().z_score);
    }
    let zmax = zs.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    out.check(zmax < 4.0, format!("coupling on 50 pairs x 1e5: max |z| = {zmax:.2}"));
    out.artifacts.push(format!("{zs:?}"));

    let mut bad = vec![];
    let mut max_err = 0.0f64;
    for i in 0..100 {
        let v2 = rng.random_range(-3.0f64..3.0).exp();
        let v1 = v2 * rng.random_range(-3.0f64..3.0).exp();
        let g = gaussian_pair_bounds(v1, v2).unwrap();
        let d = mixture_distances(&MixtureVarianceSample::with_target(vec![v1, v1], v2, None).unwrap());
        let (tv, w1) = (d.tv.estimate, d.w1.estimate);
        let err = (tv - g.tv_exact).abs().max((w1 - g.w1_exact).abs());
        max_err = max_err.max(err);
        let within = err < 1e-6 + d.tv_error_bound.max(d.w1_error_bound);
        let bounded = tv <= g.tv_bound + d.tv_error_bound && w1 <= g.w1_bound + d.w1_error_bound;
        if !(within && bounded) {
            bad.push(i);
        }
    }
    out.check(bad.is_empty(), format!("Gaussian pairs on 100 variance pairs: failures {bad:?}, max |quadrature - closed form| {max_err:.2e}"));
    out
}

fn criterion_7(seed: u64) -> Outcome {
    let mut out = Outcome::new();
    for (k, (sigma, cw)) in nets().into_iter().enumerate() {
        for kind in [SamplerKind::Conditional, SamplerKind::Materialized] {
            let cfg = NetworkConfig::uniform(0, 2, 4, 1, 0.1, cw, sigma.clone());
            let row = one_d_row(&cfg, &[0.5, 1.5], 4, 20_000, seed + k as u64, kind, QuadratureSpec::default()).unwrap();
            let (tv, w1) = (row.tv.as_ref().unwrap().estimate, row.w1.as_ref().unwrap().estimate);
            let (tb, wb) = (row.tv_error_bound.unwrap(), row.w1_error_bound.unwrap());
            out.check(
                tv < 3.0 * tb && w1 < 3.0 * wb,
                format!("{} {kind:?} layer-1 output: TV {tv:.2e} (bound {tb:.2e}), W1 {w1:.2e} (bound {wb:.2e})", sigma.name()),
            );
            out.artifacts.push(serde_json::to_string(&row).unwrap());
        }
    }
    // ReLU, C_b = 0, C_W = 2, unit input: value plus all coordinate
    // derivatives is degenerate, a basis of the complement is not
    let cfg = NetworkConfig::uniform(2, 3, 8, 1, 0.0, 2.0, Nonlinearity::Relu);
    let x = vec![2.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
    let axes = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let comp = vec![vec![1.0, 2.0, 0.0], vec![-4.0, 2.0, 5.0]];
    let rule = QuadratureRule::default();
    for (dirs, expect) in [(axes, false), (comp, true)] {
        let t = limit_kernel(&cfg, &InputSet::with_derivatives(vec![x.clone()], dirs.clone()), &rule).unwrap();
        let rep = nondegeneracy_check(&t, 1, None).unwrap();
        out.check(
            rep.pass == expect,
            format!("relu order-1 check with {} directions: pass = {} (expected {expect}), min eigenvalues {:?}", dirs.len(), rep.pass, rep.min_eigenvalues),
        );
        // every layer carries (2 / n0) Gram(x, v_1, ...)
        let mut vecs = vec![x.clone()];
        vecs.extend(dirs.iter().cloned());
        let idx: Vec<Idx> = std::iter::once(Idx::value(0)).chain((1..=dirs.len()).map(|j| Idx::deriv(j, 0))).collect();
        let mut gram_err = 0.0f64;
        for l in 1..=3 {
            let k = t.layer(l);
            for (a, ia) in idx.iter().enumerate() {
                for (b, ib) in idx.iter().enumerate() {
                    let dot: f64 = vecs[a].iter().zip(&vecs[b]).map(|(p, q)| p * q).sum();
                    let got = k[(t.position(*ia).unwrap(), t.position(*ib).unwrap())];
                    gram_err = gram_err.max((got - 2.0 / 3.0 * dot).abs());
                }
            }
        }
        out.check(gram_err < 1e-9, format!("relu derivative block equals (2/n0) Gram: max error {gram_err:.1e}"));
    }
    out
}

type Runner = fn(u64) -> Outcome;

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, u64, Runner); 7] = [
        ("one-dimensional rate", 11, criterion_1),
        ("variance scaling", 21, criterion_2),
        ("cumulant decay", 31, |s| criterion_3(s, 1_000_000)),
        ("finite-dimensional bound rate", 41, criterion_4),
        ("functional bound rates", 51, criterion_5),
        ("inequality suites", 61, criterion_6),
        ("exactness floors", 71, criterion_7),
    ];
    say("");
    let mut verdicts = vec![];
    let mut outcomes = vec![];
    for (i, (name, seed, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run(*seed);
        say(&format!("criterion {}: {} ({name}, seed {seed}, {:.0} s)", i + 1, if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64()));
        for l in &o.lines {
            say(&format!("    {l}"));
        }
        verdicts.push(o.pass);
        outcomes.push(o);
    }

    // 8: same seed twice is byte-identical; another seed gives the same
    // verdicts. Criteria 3 and 5 are repeated at reduced draw counts for
    // the byte comparison only.
    let t = Instant::now();
    let mut c8 = Outcome::new();
    for (i, (name, seed, run)) in criteria.iter().enumerate() {
        let same = match i {
            2 => {
                let a = criterion_3(*seed, 100_000).artifacts;
                (a == criterion_3(*seed, 100_000).artifacts, "reduced draws")
            }
            4 => {
                let a = to_json(&run_sweep(&criterion_5_config(*seed, 2000)).unwrap()).unwrap();
                (a == to_json(&run_sweep(&criterion_5_config(*seed, 2000)).unwrap()).unwrap(), "reduced draws")
            }
            _ => (run(*seed).artifacts == outcomes[i].artifacts, "full scale"),
        };
        c8.check(same.0, format!("criterion {} ({name}) same seed {seed}: byte-identical ({})", i + 1, same.1));
        let other = seed + 1000;
        let o = run(other);
        c8.check(
            o.pass == verdicts[i],
            format!("criterion {} seed {other}: {} (seed {seed}: {})", i + 1, verdict(o.pass), verdict(verdicts[i])),
        );
        if !o.pass {
            for l in o.lines.iter().filter(|l| l.starts_with("FAIL")) {
                c8.lines.push(format!("      {l}"));
            }
        }
    }
    say(&format!("criterion 8: {} (reproducibility, {:.0} s)", verdict(c8.pass), t.elapsed().as_secs_f64()));
    for l in &c8.lines {
        say(&format!("    {l}"));
    }
    verdicts.push(c8.pass);

    let failed: Vec<usize> = verdicts.iter().enumerate().filter(|(_, p)| !**p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn verdict(p: bool) -> &'static str {
    if p {
        "PASS"
    } else {
        "FAIL"
    }
}
