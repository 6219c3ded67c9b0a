//! nngp-gauge command line.
//!
//! Exit codes: 0 success, 1 bad input or configuration, 2 degenerate limit
//! covariance or forbidden grid, 3 failed pass flags or self-tests.

use clap::{Args, Parser, Subcommand};
use nngp_gauge::config::{InputSet, NetworkConfig};
use nngp_gauge::experiment_harness::{self as harness, Domain, Metric, SweepConfig};
use nngp_gauge::kernel_engine::{limit_kernel_with, nondegeneracy_check, KernelOptions};
use nngp_gauge::net_sampler::{CondCovSampler, SamplerKind};
use nngp_gauge::nonlinearity::Nonlinearity;
use nngp_gauge::operator_lab::{self as ops, FunctionalAccumulator};
use nngp_gauge::quadrature::{QuadratureRule, QuadratureSpec};
use nngp_gauge::rng::split;
use nngp_gauge::stein_gauge;
use nngp_gauge::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nngp-gauge", version, about = "Finite-width distance gauges for wide random networks")]
struct Cli {
    /// Worker threads (NNGP_GAUGE_WORKERS takes precedence).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// JSON file with defaults for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Limit kernel table and non-degeneracy report.
    Kernel(KernelArgs),
    /// One-dimensional TV, W1, lower bound and Stein bounds per width.
    Dist1d(Dist1dArgs),
    /// Convex-distance bound and Bures W2 over an input set, per width.
    Distnd(DistndArgs),
    /// Functional bounds on a ball grid, per width.
    Functional(FunctionalArgs),
    /// Width sweep with slope fits.
    Sweep(SweepArgs),
    /// Quick built-in checks.
    Selftest,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct NetArgs {
    /// relu, leaky_relu:<slope>, tanh, gelu, identity or poly:<c0>,<c1>,...
    #[arg(long)]
    sigma: Option<String>,
    /// Hidden layers L.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    cb: Option<f64>,
    /// Defaults to 2 for relu, 2/(1+s^2) for leaky_relu, 1 otherwise.
    #[arg(long)]
    cw: Option<f64>,
    /// Output width n_{L+1}.
    #[arg(long)]
    n_out: Option<usize>,
    /// Use Gauss-Hermite with this many nodes.
    #[arg(long)]
    gh_nodes: Option<usize>,
    /// Composite Gauss-Legendre base panel count.
    #[arg(long)]
    panels: Option<usize>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct InputArgs {
    /// JSON file: [[x..], ..] or {"inputs": .., "directions": .., "index": ..}.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// A single input, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct DrawArgs {
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// conditional or materialized.
    #[arg(long)]
    sampler: Option<String>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct KernelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    /// Add first derivatives along the coordinate axes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    derivatives: Option<bool>,
    /// Exit 2 unless non-degenerate to this order.
    #[arg(long)]
    require_order: Option<usize>,
    /// Also write the table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct Dist1dArgs {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    draws: DrawArgs,
    /// Run the two-atom lower-bound example instead.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    selftest: Option<bool>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct DistndArgs {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    draws: DrawArgs,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct FunctionalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    draws: DrawArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    center: Option<Vec<f64>>,
    #[arg(long)]
    radius: Option<f64>,
    /// Gauss-Legendre nodes per axis.
    #[arg(long)]
    nodes: Option<usize>,
    /// Derivative order of the index set (0 or 1).
    #[arg(long)]
    order: Option<usize>,
    /// Allow balls whose closure contains the origin.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    allow_origin: Option<bool>,
    /// Replace every Sigma draw by K (all bounds vanish).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    synthetic: Option<bool>,
    /// Replicas of the coupled-field check.
    #[arg(long)]
    coupling_replicas: Option<usize>,
    /// Spectrum CSV of the limit operator.
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args, Clone, Default, Serialize, Deserialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    net: NetArgs,
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    draws: DrawArgs,
    /// Comma separated metric names.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Full sweep configuration (JSON); flags override its fields.
    #[arg(long)]
    sweep: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    plot: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Degenerate { .. } => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn fail(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type Res<T> = std::result::Result<T, Failure>;

fn emit(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

fn read_json(path: &Path) -> Res<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| fail(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

/// Flags over config file over defaults; unknown config keys are errors.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, config: Option<&Path>) -> Res<T> {
    let mut merged = match config {
        Some(p) => read_json(p)?,
        None => json!({}),
    };
    let obj = merged.as_object_mut().ok_or_else(|| fail("config file must hold a JSON object"))?;
    let known = serde_json::to_value(flags).expect("serializable");
    let known = known.as_object().expect("flags are an object");
    if let Some(bad) = obj.keys().find(|k| !known.contains_key(*k)) {
        return Err(fail(format!("unknown config key '{bad}'")));
    }
    for (k, v) in known {
        if !v.is_null() {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| fail(format!("config: {e}")))
}

fn parse_sigma(s: &str) -> Res<Nonlinearity> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let nums = || -> Res<Vec<f64>> { arg.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| fail(format!("bad number '{t}' in --sigma")))).collect() };
    Ok(match name {
        "relu" => Nonlinearity::Relu,
        "leaky_relu" => Nonlinearity::LeakyRelu(*nums()?.first().ok_or_else(|| fail("leaky_relu needs a slope"))?),
        "tanh" => Nonlinearity::Tanh,
        "gelu" => Nonlinearity::Gelu,
        "identity" => Nonlinearity::Identity,
        "poly" => Nonlinearity::Polynomial(nums()?),
        _ => return Err(fail(format!("unknown nonlinearity '{s}'"))),
    })
}

impl NetArgs {
    fn fill(&mut self) {
        let sigma = self.sigma.get_or_insert_with(|| "relu".into()).clone();
        self.depth.get_or_insert(2);
        self.cb.get_or_insert(0.0);
        self.n_out.get_or_insert(1);
        if self.cw.is_none() {
            let cw = match parse_sigma(&sigma) {
                Ok(Nonlinearity::Relu) => 2.0,
                Ok(Nonlinearity::LeakyRelu(s)) => 2.0 / (1.0 + s * s),
                _ => 1.0,
            };
            self.cw = Some(cw);
        }
    }

    fn network(&self, n0: usize, width: usize) -> Res<NetworkConfig> {
        let cfg = NetworkConfig::uniform(
            self.depth.unwrap_or(2),
            n0,
            width,
            self.n_out.unwrap_or(1),
            self.cb.unwrap_or(0.0),
            self.cw.unwrap_or(1.0),
            parse_sigma(self.sigma.as_deref().unwrap_or("relu"))?,
        );
        cfg.validate()?;
        Ok(cfg)
    }

    fn quadrature(&self) -> QuadratureSpec {
        match (self.gh_nodes, self.panels) {
            (Some(nodes), _) => QuadratureSpec::Hermite { nodes },
            (None, Some(panels)) => QuadratureSpec::Composite { panels },
            _ => QuadratureSpec::default(),
        }
    }
}

impl DrawArgs {
    fn fill(&mut self, widths: &[usize], replicas: usize) {
        self.widths.get_or_insert_with(|| widths.to_vec());
        self.replicas.get_or_insert(replicas);
        self.seed.get_or_insert(0);
        self.sampler.get_or_insert_with(|| "conditional".into());
    }

    fn kind(&self) -> Res<SamplerKind> {
        match self.sampler.as_deref().unwrap_or("conditional") {
            "conditional" => Ok(SamplerKind::Conditional),
            "materialized" => Ok(SamplerKind::Materialized),
            s => Err(fail(format!("unknown sampler '{s}'"))),
        }
    }
}

fn load_inputs(args: &InputArgs, derivatives: bool) -> Res<InputSet> {
    let mut set = match (&args.inputs, &args.x) {
        (Some(p), _) => {
            let v = read_json(p)?;
            if v.is_array() {
                let xs: Vec<Vec<f64>> = serde_json::from_value(v).map_err(|e| fail(format!("{}: {e}", p.display())))?;
                InputSet::values(xs)
            } else {
                serde_json::from_value::<InputSet>(v).map_err(|e| fail(format!("{}: {e}", p.display())))?
            }
        }
        (None, Some(x)) => InputSet::single(x.clone()),
        (None, None) => return Err(fail("need --inputs <file> or --x <values>")),
    };
    if set.inputs.is_empty() {
        return Err(fail("input set is empty"));
    }
    if derivatives && set.directions.is_empty() {
        let d = set.dim();
        set.directions = (0..d).map(|k| (0..d).map(|i| f64::from(u8::from(i == k))).collect()).collect();
        set.index.clear();
    }
    if set.index.is_empty() {
        set = InputSet::with_derivatives(set.inputs, set.directions);
    }
    Ok(set)
}

fn cmd_kernel(flags: KernelArgs, config: Option<&Path>) -> Res<()> {
    let mut a = resolve(&flags, config)?;
    a.net.fill();
    a.derivatives.get_or_insert(false);
    let inputs = load_inputs(&a.input, a.derivatives == Some(true))?;
    emit(&json!({"kind": "config", "resolved": a}));
    let cfg = a.net.network(inputs.dim(), 1)?;
    inputs.validate(&cfg)?;
    let spec = a.net.quadrature();
    let table = limit_kernel_with(&cfg, &inputs, &QuadratureRule::new(spec), &KernelOptions { quadrature: spec, ..KernelOptions::default() })?;
    let q = a.require_order.unwrap_or(inputs.order());
    let report = nondegeneracy_check(&table, q, None)?;
    emit(&json!({"kind": "kernel", "table": table, "nondegeneracy": report}));
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&table).expect("serializable")).map_err(|e| fail(e.to_string()))?;
    }
    if a.require_order.is_some() {
        report.into_result()?;
    }
    Ok(())
}

fn cmd_dist1d(flags: Dist1dArgs, config: Option<&Path>) -> Res<()> {
    let mut a = resolve(&flags, config)?;
    a.net.fill();
    a.draws.fill(&[16, 32, 64, 128, 256], 20_000);
    if a.selftest == Some(true) {
        let mix = stein_gauge::MixtureVarianceSample::new(vec![0.0, 2.0], None)?;
        let v = stein_gauge::cosine_lower_bound(&mix).estimate;
        let expect = (0.5 * (1.0 + (-1.0f64).exp()) - (-0.5f64).exp()).abs();
        let pass = (v - expect).abs() < 1e-12;
        emit(&json!({"kind": "selftest", "check": "two-atom lower bound", "value": v, "expected": expect, "pass": pass}));
        return if pass { Ok(()) } else { Err(Failure { code: 3, msg: "self-test failed".into() }) };
    }
    let inputs = load_inputs(&a.input, false)?;
    if inputs.inputs.len() != 1 {
        return Err(fail("dist1d takes exactly one input"));
    }
    emit(&json!({"kind": "config", "resolved": a}));
    let x = inputs.inputs[0].clone();
    let mut widths = a.draws.widths.clone().unwrap_or_default();
    widths.sort_unstable();
    for w in widths {
        let cfg = a.net.network(x.len(), w)?;
        let row = harness::one_d_row(&cfg, &x, w, a.draws.replicas.unwrap_or(1000), a.draws.seed.unwrap_or(0), a.draws.kind()?, a.net.quadrature())?;
        let warnings = row.sandwich_violations(3.0);
        for v in &warnings {
            eprintln!("warning: width {w}: {v}");
        }
        for n in &row.notes {
            eprintln!("note: width {w}: {n}");
        }
        let est = |e: &Option<stein_gauge::Estimate>| e.as_ref().map(|e| e.estimate);
        let se = |e: &Option<stein_gauge::Estimate>| e.as_ref().map(|e| e.std_error);
        emit(&json!({
            "kind": "dist1d",
            "width": w,
            "tv": est(&row.tv), "tv_se": se(&row.tv), "tv_error_bound": row.tv_error_bound,
            "w1": est(&row.w1), "w1_se": se(&row.w1), "w1_error_bound": row.w1_error_bound,
            "lower": est(&row.lower), "lower_se": se(&row.lower),
            "tv_bound": row.stein.map(|s| s.tv_bound), "w1_bound": row.stein.map(|s| s.w1_bound),
            "w1_variance_bound": row.w1_variance_bound,
            "mean_sigma": row.mean_sigma, "var_sigma": row.var_sigma, "limit": row.limit,
            "warnings": warnings, "notes": row.notes,
        }));
    }
    Ok(())
}

fn cmd_distnd(flags: DistndArgs, config: Option<&Path>) -> Res<()> {
    let mut a = resolve(&flags, config)?;
    a.net.fill();
    a.draws.fill(&[16, 32, 64, 128], 20_000);
    let inputs = load_inputs(&a.input, false)?;
    emit(&json!({"kind": "config", "resolved": a}));
    let spec = a.net.quadrature();
    let cfg0 = a.net.network(inputs.dim(), 1)?;
    inputs.validate(&cfg0)?;
    let k = limit_kernel_with(&cfg0, &inputs, &QuadratureRule::new(spec), &KernelOptions { quadrature: spec, ..KernelOptions::default() })?.output();
    let mut widths = a.draws.widths.clone().unwrap_or_default();
    widths.sort_unstable();
    for w in widths {
        let cfg = a.net.network(inputs.dim(), w)?;
        let sampler = CondCovSampler::new(a.draws.kind()?, &cfg, &inputs)?;
        let draws = sampler.map(0..a.draws.replicas.unwrap_or(1000) as u64, split(a.draws.seed.unwrap_or(0), w as u64), |_, s| s);
        let convex = stein_gauge::convex_bound_from_draws(&draws, cfg.output_dim())?;
        let mut mean = nngp_gauge::nalgebra::DMatrix::zeros(k.nrows(), k.ncols());
        for d in &draws {
            mean += d;
        }
        mean /= draws.len() as f64;
        let bures = stein_gauge::bures_w2(&mean, &k)?;
        emit(&json!({"kind": "distnd", "width": w, "convex": convex, "bures_w2": bures.w2, "hs_bound": bures.hs_bound}));
    }
    Ok(())
}

fn cmd_functional(flags: FunctionalArgs, config: Option<&Path>) -> Res<()> {
    let mut a = resolve(&flags, config)?;
    a.net.fill();
    a.draws.fill(&[32, 64, 128, 256, 512], 20_000);
    a.center.get_or_insert_with(|| vec![1.5]);
    a.radius.get_or_insert(1.0);
    a.nodes.get_or_insert(64);
    a.order.get_or_insert(0);
    a.allow_origin.get_or_insert(false);
    a.synthetic.get_or_insert(false);
    a.coupling_replicas.get_or_insert(2000);
    emit(&json!({"kind": "config", "resolved": a}));
    let center = a.center.clone().unwrap_or_default();
    let cfg0 = a.net.network(center.len(), 1)?;
    let grid = ops::Grid::ball(center.clone(), a.radius.unwrap_or(1.0), a.nodes.unwrap_or(64), a.order.unwrap_or(0), cfg0.output_dim())?;
    if a.allow_origin != Some(true) && grid.contains_origin() {
        return Err(Failure { code: 2, msg: format!("grid ball around {center:?} must not contain the origin (pass --allow-origin to override)") });
    }
    let inputs = grid.input_set();
    let spec = a.net.quadrature();
    let table = limit_kernel_with(&cfg0, &inputs, &QuadratureRule::new(spec), &KernelOptions { quadrature: spec, ..KernelOptions::default() })?;
    if grid.order > 0 {
        nondegeneracy_check(&table, grid.order, None)?.into_result()?;
    }
    let k = ops::discretize(&table.output(), &grid)?;
    let summ = ops::eigen_summability(&k, 0.5);
    let spectrum = k.spectral();
    emit(&json!({
        "kind": "spectrum",
        "grid_hash": grid.hash(),
        "trace": k.trace(),
        "hs_norm": k.hs_norm(),
        "reconstruction_error": spectrum.reconstruction_error,
        "summability": summ,
        "top_eigenvalues": spectrum.eigenvalues.iter().take(10).collect::<Vec<_>>(),
    }));
    if let Some(p) = &a.spectrum {
        let f = std::fs::File::create(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
        ops::write_spectrum_csv(f, &spectrum.eigenvalues)?;
    }
    let seed = a.draws.seed.unwrap_or(0);
    let mut widths = a.draws.widths.clone().unwrap_or_default();
    widths.sort_unstable();
    for w in widths {
        let cfg = a.net.network(center.len(), w)?;
        let sampler = CondCovSampler::new(a.draws.kind()?, &cfg, &inputs)?;
        let mut acc = FunctionalAccumulator::new(&k);
        let kraw = k.kernel();
        let n = kraw.nrows();
        let replicas = a.draws.replicas.unwrap_or(1000) as u64;
        let base = split(seed, w as u64);
        let mut mean = nngp_gauge::nalgebra::DMatrix::zeros(n, n);
        let mut start = 0;
        while start < replicas {
            let end = (start + 4096).min(replicas);
            let synthetic = a.synthetic == Some(true);
            let chunk = sampler.map(start..end, base, |_, s| {
                let s = if synthetic { kraw.clone() } else { s };
                let t = acc.terms(&s);
                (s, t)
            });
            for (s, t) in chunk {
                let (b, c) = t?;
                acc.push_terms(b, c);
                mean += s;
            }
            start = end;
        }
        mean /= replicas as f64;
        let bound = acc.finish()?;
        let mean_op = ops::discretize(&nngp_gauge::linalg::symmetrize(&mean), &grid)?;
        let ps = ops::powers_stormer(&mean_op, &k)?;
        let coupling = ops::couple_fields(&k, &mean_op, a.coupling_replicas.unwrap_or(2000), split(seed, 1_000_000 + w as u64))?;
        emit(&json!({"kind": "functional", "width": w, "bound": bound, "powers_stormer": ps, "coupling": coupling}));
    }
    Ok(())
}

fn cmd_sweep(flags: SweepArgs, config: Option<&Path>) -> Res<()> {
    let a = resolve(&flags, config)?;
    let mut sc: SweepConfig = match &a.sweep {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| fail(format!("{}: {e}", p.display())))?,
        None => {
            let mut net = a.net.clone();
            net.fill();
            let inputs = load_inputs(&a.input, false)?;
            SweepConfig {
                network: net.network(inputs.dim(), 16)?,
                widths: vec![16, 32, 64, 128, 256],
                replicas: 20_000,
                domain: Domain::Inputs(inputs),
                metrics: vec![Metric::VarSigma],
                seed: 0,
                targets: Default::default(),
                sampler: SamplerKind::Conditional,
                quadrature: net.quadrature(),
                nondegeneracy_order: None,
            }
        }
    };
    if a.sweep.is_some() {
        // network flags override the file's network
        let n = &a.net;
        if let Some(s) = &n.sigma {
            sc.network.nonlinearity = parse_sigma(s)?;
        }
        if let Some(d) = n.depth {
            let n0 = sc.network.input_dim();
            let out = sc.network.output_dim();
            sc.network = NetworkConfig::uniform(d, n0, 16, out, sc.network.c_b, sc.network.c_w, sc.network.nonlinearity.clone());
        }
        if let Some(v) = n.cb {
            sc.network.c_b = v;
        }
        if let Some(v) = n.cw {
            sc.network.c_w = v;
        }
        if let Some(v) = n.n_out {
            let d = sc.network.depth;
            sc.network.widths[d + 1] = v;
        }
        if n.gh_nodes.is_some() || n.panels.is_some() {
            sc.quadrature = n.quadrature();
        }
        if a.input.inputs.is_some() || a.input.x.is_some() {
            sc.domain = Domain::Inputs(load_inputs(&a.input, false)?);
        }
    }
    if let Some(w) = &a.draws.widths {
        sc.widths = w.clone();
    }
    if let Some(r) = a.draws.replicas {
        sc.replicas = r;
    }
    if let Some(s) = a.draws.seed {
        sc.seed = s;
    }
    if a.draws.sampler.is_some() {
        sc.sampler = a.draws.kind()?;
    }
    if let Some(ms) = &a.metrics {
        sc.metrics = ms.iter().map(|m| Metric::parse(m)).collect::<nngp_gauge::Result<_>>()?;
    }
    emit(&json!({"kind": "config", "resolved": sc}));
    let report = harness::run_sweep(&sc)?;
    emit(&json!({"kind": "report", "report": report}));
    if let Some(p) = &a.report {
        harness::persist(&report, p)?;
    }
    if let Some(p) = &a.csv {
        let f = std::fs::File::create(p).map_err(|e| fail(format!("{}: {e}", p.display())))?;
        harness::write_csv(&report, f)?;
    }
    if let Some(p) = &a.plot {
        std::fs::write(p, nngp_gauge::plot::report_svg(&report)).map_err(|e| fail(format!("{}: {e}", p.display())))?;
    }
    for f in &report.fits {
        eprintln!(
            "{}: slope {} target {} pass {}",
            f.metric.name(),
            f.fit.slope.map_or("n/a".into(), |s| format!("{s:.4}")),
            f.target.map_or("none".into(), |t| format!("{} +- {}", t.exponent, t.tolerance)),
            f.pass.map_or("n/a".into(), |p| p.to_string())
        );
    }
    if report.all_pass() {
        Ok(())
    } else {
        Err(Failure { code: 3, msg: "some metrics missed their target".into() })
    }
}

fn cmd_selftest() -> Res<()> {
    let mut all = true;
    let mut check = |name: &str, pass: bool, detail: Value| {
        all &= pass;
        emit(&json!({"kind": "selftest", "check": name, "pass": pass, "detail": detail}));
    };
    let rule = QuadratureRule::default();
    let relu = NetworkConfig::uniform(3, 1, 8, 1, 0.0, 2.0, Nonlinearity::Relu);
    let t = limit_kernel_with(&relu, &InputSet::single(vec![1.0]), &rule, &KernelOptions::default())?;
    let diag: Vec<f64> = (1..=t.depth() + 1).map(|l| t.layer(l)[(0, 0)]).collect();
    check("relu diagonal constant", diag.iter().all(|v| (v - 2.0).abs() < 1e-12), json!(diag));
    let mix = stein_gauge::MixtureVarianceSample::new(vec![0.0, 2.0], None)?;
    let v = stein_gauge::cosine_lower_bound(&mix).estimate;
    check("two-atom lower bound", (v - 0.0774).abs() < 5e-5, json!(v));
    let g = stein_gauge::gaussian_pair_bounds(4.0, 1.0)?;
    let d = stein_gauge::mixture_distances(&stein_gauge::MixtureVarianceSample::with_target(vec![4.0, 4.0], 1.0, None)?);
    check(
        "gaussian pair quadrature",
        (d.tv.estimate - g.tv_exact).abs() < 1e-8 && (d.w1.estimate - g.w1_exact).abs() < 1e-8,
        json!({"tv": d.tv.estimate, "tv_exact": g.tv_exact, "w1": d.w1.estimate, "w1_exact": g.w1_exact}),
    );
    let s1 = ops::DiscreteOperator::from_weighted(nngp_gauge::nalgebra::DMatrix::from_element(1, 1, 4.0), 1)?;
    let s2 = ops::DiscreteOperator::from_weighted(nngp_gauge::nalgebra::DMatrix::from_element(1, 1, 1.0), 1)?;
    let ps = ops::powers_stormer(&s1, &s2)?;
    check("powers-stormer scalar", (ps.rhs - 3.593).abs() < 1e-3 && (ps.lhs - 1.0).abs() < 1e-12, json!(ps));
    let pts: Vec<(usize, f64, f64)> = [16, 32, 64, 128].iter().map(|&n| (n, 7.0 / n as f64, 0.0)).collect();
    let f = harness::fit_slope(&pts);
    check("slope fit", f.slope.is_some_and(|s| (s + 1.0).abs() < 1e-12), json!(f));
    if all {
        Ok(())
    } else {
        Err(Failure { code: 3, msg: "self-test failed".into() })
    }
}

fn workers(flag: Option<usize>) -> Res<Option<usize>> {
    match std::env::var("NNGP_GAUGE_WORKERS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| fail(format!("NNGP_GAUGE_WORKERS='{v}' is not a count"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Res<()> {
    if let Some(n) = workers(cli.workers)? {
        if n == 0 {
            return Err(fail("worker count must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| fail(e.to_string()))?;
    }
    let config = cli.config.as_deref();
    match cli.cmd {
        Cmd::Kernel(a) => cmd_kernel(a, config),
        Cmd::Dist1d(a) => cmd_dist1d(a, config),
        Cmd::Distnd(a) => cmd_distnd(a, config),
        Cmd::Functional(a) => cmd_functional(a, config),
        Cmd::Sweep(a) => cmd_sweep(a, config),
        Cmd::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    // clap would exit 2 on usage errors; 2 is reserved for degenerate input
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
