//! Width sweeps: every requested metric is computed from one shared batch
//! of Sigma draws per width, then log-log slopes are fitted against target
//! exponents.

use crate::config::{InputSet, NetworkConfig};
use crate::kernel_engine::{limit_kernel_with, nondegeneracy_check, recursion_step, KernelOptions, KernelTable};
use crate::net_sampler::{CondCovSampler, SamplerKind};
use crate::operator_lab::{discretize, DiscreteOperator, FunctionalAccumulator, Grid};
use crate::quadrature::{QuadratureRule, QuadratureSpec};
use crate::rng::{split, MIXER_ID};
use crate::stats::{cumulants, jackknife_se, mean_var};
use crate::stein_gauge::{bures_w2, Estimate, convex_bound_from_draws, cosine_lower_bound, mixture_distances, stein_upper_bounds, MixtureVarianceSample, SteinBounds};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const CHUNK: u64 = 4096;
const GROUPS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    W1,
    Lower,
    ConvexBoundRhs,
    BuresW2,
    D2Rhs,
    W2Rhs,
    VarSigma,
    Kappa3,
    Kappa4,
    MeanGap,
    /// Exactly 1/n with zero error; exercises the fit and report path.
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub exponent: f64,
    pub tolerance: f64,
}

impl Metric {
    pub const ALL: [Metric; 12] = [
        Metric::Tv,
        Metric::W1,
        Metric::Lower,
        Metric::ConvexBoundRhs,
        Metric::BuresW2,
        Metric::D2Rhs,
        Metric::W2Rhs,
        Metric::VarSigma,
        Metric::Kappa3,
        Metric::Kappa4,
        Metric::MeanGap,
        Metric::Synthetic,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }

    pub fn parse(s: &str) -> Result<Metric> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown metric '{s}'")))
    }

    /// Predicted exponent and slope tolerance; `None` for metrics reported
    /// without a rate.
    pub fn default_target(self) -> Option<Target> {
        let t = |exponent, tolerance| Some(Target { exponent, tolerance });
        match self {
            Metric::Tv | Metric::W1 | Metric::Lower | Metric::VarSigma | Metric::Synthetic => t(-1.0, 0.2),
            Metric::MeanGap => t(-1.0, 0.25),
            Metric::ConvexBoundRhs | Metric::D2Rhs => t(-0.5, 0.15),
            Metric::W2Rhs => t(-0.125, 0.06),
            Metric::Kappa3 => t(-2.0, 0.35),
            Metric::Kappa4 => t(-3.0, 0.5),
            Metric::BuresW2 => None,
        }
    }

    fn needs_grid(self) -> bool {
        matches!(self, Metric::D2Rhs | Metric::W2Rhs)
    }

    fn needs_matrices(self) -> bool {
        matches!(self, Metric::ConvexBoundRhs | Metric::BuresW2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub nodes_per_axis: usize,
    #[serde(default)]
    pub order: usize,
    /// Reject balls whose closure contains the origin.
    #[serde(default = "yes")]
    pub exclude_origin: bool,
}

fn yes() -> bool {
    true
}

impl GridSpec {
    pub fn build(&self, multiplicity: usize) -> Result<Grid> {
        Grid::ball(self.center.clone(), self.radius, self.nodes_per_axis, self.order, multiplicity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Inputs(InputSet),
    Grid(GridSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Template; every hidden width is replaced by the sweep width.
    pub network: NetworkConfig,
    pub widths: Vec<usize>,
    pub replicas: usize,
    pub domain: Domain,
    pub metrics: Vec<Metric>,
    pub seed: u64,
    /// Overrides of [`Metric::default_target`].
    #[serde(default)]
    pub targets: BTreeMap<Metric, Target>,
    #[serde(default = "conditional")]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    /// Abort unless the limit covariance is non-degenerate to this order.
    #[serde(default)]
    pub nondegeneracy_order: Option<usize>,
}

fn conditional() -> SamplerKind {
    SamplerKind::Conditional
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.widths.len() < 4 {
            return Err(Error::InvalidConfig(format!("need >= 4 widths, got {}", self.widths.len())));
        }
        if self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("widths must be strictly increasing".into()));
        }
        if self.widths[0] < 8 {
            return Err(Error::InvalidConfig(format!("smallest width must be >= 8, got {}", self.widths[0])));
        }
        if self.replicas < 1000 {
            return Err(Error::InvalidConfig(format!("replicas must be >= 1000, got {}", self.replicas)));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("no metrics requested".into()));
        }
        let grid = matches!(self.domain, Domain::Grid(_));
        for m in &self.metrics {
            if m.needs_grid() && !grid {
                return Err(Error::InvalidConfig(format!("metric {} needs a grid domain", m.name())));
            }
            if m.needs_matrices() && grid {
                return Err(Error::InvalidConfig(format!("metric {} needs an input-set domain", m.name())));
            }
        }
        Ok(())
    }

    pub fn target(&self, m: Metric) -> Option<Target> {
        self.targets.get(&m).copied().or_else(|| m.default_target())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub metric: Metric,
    pub width: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// Deterministic error floor (numerical integration), if any.
    pub floor: f64,
    pub included: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub width: usize,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    InsufficientSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub status: FitStatus,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub intercept: Option<f64>,
    pub used: usize,
    pub excluded: Vec<Exclusion>,
}

/// A (width, estimate, std_error) point for [`fit_slope`], plus an
/// optional deterministic floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitPoint {
    pub width: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub floor: f64,
}

impl From<(usize, f64, f64)> for FitPoint {
    fn from((width, estimate, std_error): (usize, f64, f64)) -> Self {
        FitPoint { width, estimate, std_error, floor: 0.0 }
    }
}

fn exclusion_reason(p: &FitPoint) -> Option<String> {
    if !p.estimate.is_finite() || p.estimate <= 0.0 {
        return Some(format!("estimate {:e} not positive", p.estimate));
    }
    let noise = p.std_error.max(p.floor);
    if p.estimate < 2.0 * noise {
        return Some(format!("estimate {:e} below 2 x noise {:e}", p.estimate, noise));
    }
    None
}

/// Weighted least squares of log(estimate) on log(width), weights from the
/// relative errors.
pub fn fit_slope<P: Into<FitPoint> + Copy>(points: &[P]) -> SlopeFit {
    let mut used = vec![];
    let mut excluded = vec![];
    for p in points.iter().map(|p| (*p).into()) {
        match exclusion_reason(&p) {
            Some(reason) => excluded.push(Exclusion { width: p.width, reason }),
            None => used.push(p),
        }
    }
    if used.len() < 3 {
        return SlopeFit { status: FitStatus::InsufficientSignal, slope: None, slope_se: None, intercept: None, used: used.len(), excluded };
    }
    let xs: Vec<f64> = used.iter().map(|p| (p.width as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.estimate.ln()).collect();
    let ws: Vec<f64> = used.iter().map(|p| (p.std_error.max(p.floor) / p.estimate).max(1e-12).powi(-2)).collect();
    let sw: f64 = ws.iter().sum();
    let mx = ws.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = ws.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = ws.iter().zip(&xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = ws.iter().zip(xs.iter().zip(&ys)).map(|(w, (x, y))| w * (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    SlopeFit {
        status: FitStatus::Ok,
        slope: Some(slope),
        slope_se: Some(sxx.recip().sqrt()),
        intercept: Some(my - slope * mx),
        used: used.len(),
        excluded,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: Metric,
    pub fit: SlopeFit,
    pub target: Option<Target>,
    /// std_error / estimate at the largest width.
    pub largest_width_rel_error: Option<f64>,
    /// `None` when the metric carries no target.
    pub pass: Option<bool>,
}

/// Per-width quantities that are not fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthDiagnostics {
    pub width: usize,
    pub draws: usize,
    /// Limit value K(x, x) of the first index entry.
    pub limit: f64,
    pub mean_sigma: f64,
    pub var_sigma: f64,
    pub stein: Option<SteinBounds>,
    pub tv_error_bound: Option<f64>,
    pub w1_error_bound: Option<f64>,
    pub atoms: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub rng_mixer: String,
    pub sampler: SamplerKind,
    pub quadrature: QuadratureSpec,
    pub grid_hash: Option<String>,
    pub replicas: usize,
    pub widths: Vec<usize>,
    pub network: NetworkConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub schema_version: u32,
    pub environment: Environment,
    pub points: Vec<MetricPoint>,
    pub fits: Vec<MetricFit>,
    pub diagnostics: Vec<WidthDiagnostics>,
}

impl ScalingReport {
    /// True iff every metric with a target passes.
    pub fn all_pass(&self) -> bool {
        self.fits.iter().all(|f| f.pass != Some(false))
    }

    pub fn fit(&self, m: Metric) -> Option<&MetricFit> {
        self.fits.iter().find(|f| f.metric == m)
    }

    pub fn points_for(&self, m: Metric) -> Vec<&MetricPoint> {
        self.points.iter().filter(|p| p.metric == m).collect()
    }
}

fn assemble_fit(metric: Metric, points: &[MetricPoint], target: Option<Target>) -> MetricFit {
    let fps: Vec<FitPoint> =
        points.iter().map(|p| FitPoint { width: p.width, estimate: p.estimate, std_error: p.std_error, floor: p.floor }).collect();
    let fit = fit_slope(&fps);
    let rel = points.last().filter(|p| p.estimate > 0.0).map(|p| p.std_error.max(p.floor) / p.estimate);
    let pass = target.map(|t| match (fit.status, fit.slope, rel) {
        (FitStatus::Ok, Some(s), Some(r)) => (s - t.exponent).abs() <= t.tolerance && r < 0.3,
        _ => false,
    });
    MetricFit { metric, fit, target, largest_width_rel_error: rel, pass }
}

/// Pre-computed, width-independent part of a sweep.
struct Setup {
    inputs: InputSet,
    table: KernelTable,
    grid: Option<(Grid, DiscreteOperator)>,
}

fn setup(config: &SweepConfig) -> Result<Setup> {
    let rule = QuadratureRule::new(config.quadrature);
    let opts = KernelOptions { quadrature: config.quadrature, ..KernelOptions::default() };
    let (inputs, grid) = match &config.domain {
        Domain::Inputs(i) => (i.clone(), None),
        Domain::Grid(spec) => {
            let g = spec.build(config.network.output_dim())?;
            if spec.exclude_origin && g.contains_origin() {
                return Err(Error::InvalidConfig(format!(
                    "grid ball (center {:?}, radius {}) must not contain the origin",
                    spec.center, spec.radius
                )));
            }
            (g.input_set(), Some(g))
        }
    };
    let cfg0 = config.network.with_hidden_width(config.widths[0]);
    let table = limit_kernel_with(&cfg0, &inputs, &rule, &opts)?;
    if let Some(q) = config.nondegeneracy_order {
        nondegeneracy_check(&table, q, None)?.into_result()?;
    }
    let grid = match grid {
        Some(g) => {
            let op = discretize(&table.output(), &g)?;
            Some((g, op))
        }
        None => None,
    };
    Ok(Setup { inputs, table, grid })
}

struct Features {
    a: f64,
    matrix: Option<DMatrix<f64>>,
    terms: Option<(f64, f64)>,
    /// (Sigma^(1), F(Sigma^(L-1))) of the first entry, F the one-layer map.
    gap: Option<(f64, f64)>,
}

/// |E[Sigma^(L)] - K^(L+1)| for the first entry. E[Sigma^(L)] is estimated
/// by the mean of F(Sigma^(L-1)) = E[Sigma^(L) | layer L-1], with
/// Sigma^(1) (mean K^(2) exactly) as a control variate. Returns the gap and
/// its standard error.
fn mean_gap(pairs: &[(f64, f64)], mean_x: f64, limit: f64) -> (f64, f64) {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (mx, vx) = mean_var(&xs);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let cov = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (pairs.len() as f64 - 1.0);
    let beta = if vx > 0.0 { cov / vx } else { 0.0 };
    let resid: Vec<f64> = pairs.iter().map(|(x, y)| y - beta * (x - mean_x)).collect();
    let (est, vr) = mean_var(&resid);
    ((est - limit).abs(), (vr / resid.len() as f64).sqrt())
}

fn grouped<T>(items: &[T], f: impl Fn(&[T]) -> Result<f64> + Sync) -> Result<f64>
where
    T: Clone + Sync,
{
    let s = items.len();
    let g = GROUPS.min(s);
    let mut loo = Vec::with_capacity(g);
    for k in 0..g {
        let (lo, hi) = (k * s / g, (k + 1) * s / g);
        let rest: Vec<T> = items[..lo].iter().chain(&items[hi..]).cloned().collect();
        loo.push(f(&rest)?);
    }
    Ok(jackknife_se(&loo))
}

fn point(metric: Metric, width: usize, estimate: f64, std_error: f64, floor: f64, note: &str) -> MetricPoint {
    MetricPoint { metric, width, estimate, std_error, floor, included: true, note: note.to_string() }
}

fn width_points(config: &SweepConfig, st: &Setup, width: usize) -> Result<(Vec<MetricPoint>, WidthDiagnostics)> {
    let cfg = config.network.with_hidden_width(width);
    let sampler = CondCovSampler::new(config.sampler, &cfg, &st.inputs)?;
    let want = |m: Metric| config.metrics.contains(&m);
    let keep_matrices = config.metrics.iter().any(|m| m.needs_matrices());
    let acc_template = st.grid.as_ref().map(|(_, op)| FunctionalAccumulator::new(op));
    let mut acc = acc_template.clone();
    let base = split(config.seed, width as u64);
    let mut a = Vec::with_capacity(config.replicas);
    let mut mats = vec![];
    let mut gaps = vec![];
    let want_gap = want(Metric::MeanGap);
    let rule = QuadratureRule::new(config.quadrature);
    let mut start = 0u64;
    let total = config.replicas as u64;
    while start < total {
        let end = (start + CHUNK).min(total);
        let features = |_: u64, mut path: Vec<DMatrix<f64>>| -> Result<Features> {
            let gap = if want_gap {
                let depth = path.len() - 1;
                let x1 = path[depth.min(1)][(0, 0)];
                let y = if depth == 0 {
                    path[0][(0, 0)]
                } else {
                    let v = path[depth - 1][(0, 0)];
                    recursion_step([[v, v], [v, v]], &cfg, &rule)?
                };
                Some((x1, y))
            } else {
                None
            };
            let s = path.pop().expect("nonempty path");
            let terms = match &acc_template {
                Some(t) => Some(t.terms(&s)?),
                None => None,
            };
            Ok(Features { a: s[(0, 0)], terms, gap, matrix: keep_matrices.then_some(s) })
        };
        // only the mean gap needs the intermediate layers
        let feats: Vec<Result<Features>> = if want_gap {
            sampler.map_paths(start..end, base, features)
        } else {
            sampler.map(start..end, base, |k, s| features(k, vec![s]))
        };
        for f in feats {
            let f = f?;
            a.push(f.a);
            if let Some(m) = f.matrix {
                mats.push(m);
            }
            if let (Some(acc), Some((b, c))) = (acc.as_mut(), f.terms) {
                acc.push_terms(b, c);
            }
            if let Some(g) = f.gap {
                gaps.push(g);
            }
        }
        start = end;
    }

    let limit_k = st.table.output();
    let k00 = limit_k[(0, 0)];
    let (mean_a, var_a) = mean_var(&a);
    let mut diag = WidthDiagnostics {
        width,
        draws: a.len(),
        limit: k00,
        mean_sigma: mean_a,
        var_sigma: var_a,
        stein: None,
        tv_error_bound: None,
        w1_error_bound: None,
        atoms: None,
    };
    let mut pts = vec![];
    let one_d = want(Metric::Tv) || want(Metric::W1) || want(Metric::Lower);
    if one_d && mean_a > 0.0 {
        let mix = MixtureVarianceSample::new(a.clone(), Some(width))?;
        diag.stein = Some(stein_upper_bounds(var_a, mean_a)?);
        if want(Metric::Tv) || want(Metric::W1) {
            let d = mixture_distances(&mix);
            diag.tv_error_bound = Some(d.tv_error_bound);
            diag.w1_error_bound = Some(d.w1_error_bound);
            diag.atoms = Some(d.atoms);
            if want(Metric::Tv) {
                let note = if d.tv.clipped { "clipped to [0, 1]" } else { "" };
                pts.push(point(Metric::Tv, width, d.tv.estimate, d.tv.std_error, d.tv_error_bound, note));
            }
            if want(Metric::W1) {
                pts.push(point(Metric::W1, width, d.w1.estimate, d.w1.std_error, d.w1_error_bound, ""));
            }
        }
        if want(Metric::Lower) {
            let e = cosine_lower_bound(&mix);
            pts.push(point(Metric::Lower, width, e.estimate, e.std_error, 0.0, ""));
        }
    } else if one_d {
        // Z is identically zero; only W1 <= Var^{1/2} is available
        for m in [Metric::Tv, Metric::W1, Metric::Lower] {
            if want(m) {
                pts.push(point(m, width, 0.0, 0.0, 0.0, "degenerate limit variance; W1 <= Var(Sigma)^(1/2)"));
            }
        }
    }
    if want(Metric::ConvexBoundRhs) {
        let m = cfg.output_dim();
        let c = convex_bound_from_draws(&mats, m)?;
        let se = grouped(&mats, |rest| Ok(convex_bound_from_draws(rest, m)?.bound.raw))?;
        let note = if c.bound.clipped { "unclipped value; bound clips at 1" } else { "" };
        pts.push(point(Metric::ConvexBoundRhs, width, c.bound.raw, se, 0.0, note));
    }
    if want(Metric::BuresW2) {
        let mean_of = |ms: &[DMatrix<f64>]| {
            let mut s = DMatrix::zeros(limit_k.nrows(), limit_k.ncols());
            for m in ms {
                s += m;
            }
            s / ms.len() as f64
        };
        let w = bures_w2(&mean_of(&mats), &limit_k)?.w2;
        let se = grouped(&mats, |rest| Ok(bures_w2(&mean_of(rest), &limit_k)?.w2))?;
        pts.push(point(Metric::BuresW2, width, w, se, 0.0, "mean conditional covariance vs limit"));
    }
    if let Some(acc) = &acc {
        let f = acc.finish()?;
        if want(Metric::D2Rhs) {
            pts.push(point(Metric::D2Rhs, width, f.d2_rhs, f.d2_se, 0.0, ""));
        }
        if want(Metric::W2Rhs) {
            pts.push(point(Metric::W2Rhs, width, f.w2_rhs, f.w2_se, 0.0, ""));
        }
    }
    if want(Metric::VarSigma) || want(Metric::Kappa3) || want(Metric::Kappa4) {
        let c = cumulants(&a)?;
        if want(Metric::VarSigma) {
            pts.push(point(Metric::VarSigma, width, c.k2, c.k2_se, 0.0, ""));
        }
        if want(Metric::Kappa3) {
            pts.push(point(Metric::Kappa3, width, c.k3.abs(), c.k3_se, 0.0, "absolute value"));
        }
        if want(Metric::Kappa4) {
            pts.push(point(Metric::Kappa4, width, c.k4.abs(), c.k4_se, 0.0, "absolute value"));
        }
    }
    if want_gap {
        let mean_x = if cfg.depth == 0 { k00 } else { st.table.layer(2)[(0, 0)] };
        let (gap, se) = mean_gap(&gaps, mean_x, k00);
        // quadrature in F is accurate to ~1e-12 relative
        pts.push(point(Metric::MeanGap, width, gap, se, 1e-12 * k00.abs(), "conditional mean with control variate"));
    }
    if want(Metric::Synthetic) {
        pts.push(point(Metric::Synthetic, width, 1.0 / width as f64, 0.0, 0.0, "synthetic 1/n"));
    }
    Ok((pts, diag))
}

/// Runs every width, then fits each metric. Deterministic given the seed.
pub fn run_sweep(config: &SweepConfig) -> Result<ScalingReport> {
    config.validate()?;
    let st = setup(config)?;
    let mut points = vec![];
    let mut diagnostics = vec![];
    for &w in &config.widths {
        log::info!("sweep width {w}: {} draws", config.replicas);
        let (p, d) = width_points(config, &st, w)?;
        points.extend(p);
        diagnostics.push(d);
    }
    points.sort_by_key(|p| (p.metric, p.width));
    let mut metrics = config.metrics.clone();
    metrics.sort();
    metrics.dedup();
    let mut fits = vec![];
    for m in metrics {
        let ps: Vec<MetricPoint> = points.iter().filter(|p| p.metric == m).cloned().collect();
        let fit = assemble_fit(m, &ps, config.target(m));
        for e in &fit.fit.excluded {
            if let Some(p) = points.iter_mut().find(|p| p.metric == m && p.width == e.width) {
                p.included = false;
                p.note = if p.note.is_empty() { e.reason.clone() } else { format!("{}; {}", p.note, e.reason) };
            }
        }
        fits.push(fit);
    }
    Ok(ScalingReport {
        schema_version: SCHEMA_VERSION,
        environment: Environment {
            seed: config.seed,
            rng_mixer: MIXER_ID.to_string(),
            sampler: config.sampler,
            quadrature: config.quadrature,
            grid_hash: st.grid.as_ref().map(|(g, _)| g.hash()),
            replicas: config.replicas,
            widths: config.widths.clone(),
            network: config.network.clone(),
        },
        points,
        fits,
        diagnostics,
    })
}

/// TV, W1, the cosine lower bound and the Stein bounds at one width, for a
/// single input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneDRow {
    pub width: usize,
    pub draws: usize,
    pub limit: f64,
    pub mean_sigma: f64,
    pub var_sigma: f64,
    /// `None` when the limit variance vanishes (Z = 0).
    pub tv: Option<Estimate>,
    pub w1: Option<Estimate>,
    pub lower: Option<Estimate>,
    pub tv_error_bound: Option<f64>,
    pub w1_error_bound: Option<f64>,
    pub stein: Option<SteinBounds>,
    /// Always available: W1 <= Var(Sigma)^{1/2}.
    pub w1_variance_bound: f64,
    pub notes: Vec<String>,
}

impl OneDRow {
    /// Sandwich checks lower <= min(2 TV, W1), TV <= tv_bound and
    /// W1 <= w1_bound, each with `k` combined error bars of slack.
    pub fn sandwich_violations(&self, k: f64) -> Vec<String> {
        let mut out = vec![];
        let (Some(tv), Some(w1), Some(lo), Some(st)) = (&self.tv, &self.w1, &self.lower, &self.stein) else {
            return out;
        };
        let tv_floor = self.tv_error_bound.unwrap_or(0.0);
        let w1_floor = self.w1_error_bound.unwrap_or(0.0);
        let slack = |a: f64, b: f64| k * (a * a + b * b).sqrt();
        if lo.estimate > 2.0 * tv.estimate + slack(lo.std_error, 2.0 * tv.std_error) + 2.0 * tv_floor {
            out.push(format!("lower {:e} > 2 TV {:e}", lo.estimate, 2.0 * tv.estimate));
        }
        if lo.estimate > w1.estimate + slack(lo.std_error, w1.std_error) + w1_floor {
            out.push(format!("lower {:e} > W1 {:e}", lo.estimate, w1.estimate));
        }
        if tv.estimate > st.tv_bound + k * tv.std_error + tv_floor {
            out.push(format!("TV {:e} > Stein bound {:e}", tv.estimate, st.tv_bound));
        }
        if w1.estimate > st.w1_bound + k * w1.std_error + w1_floor {
            out.push(format!("W1 {:e} > Stein bound {:e}", w1.estimate, st.w1_bound));
        }
        out
    }
}

pub fn one_d_row(network: &NetworkConfig, input: &[f64], width: usize, replicas: usize, seed: u64, kind: SamplerKind, quadrature: QuadratureSpec) -> Result<OneDRow> {
    let cfg = network.with_hidden_width(width);
    let inputs = InputSet::single(input.to_vec());
    let opts = KernelOptions { quadrature, ..KernelOptions::default() };
    let limit = limit_kernel_with(&cfg, &inputs, &QuadratureRule::new(quadrature), &opts)?.output()[(0, 0)];
    let sampler = CondCovSampler::new(kind, &cfg, &inputs)?;
    let a = sampler.map(0..replicas as u64, split(seed, width as u64), |_, s| s[(0, 0)]);
    let (mean_a, var_a) = mean_var(&a);
    let mut row = OneDRow {
        width,
        draws: a.len(),
        limit,
        mean_sigma: mean_a,
        var_sigma: var_a,
        tv: None,
        w1: None,
        lower: None,
        tv_error_bound: None,
        w1_error_bound: None,
        stein: None,
        w1_variance_bound: var_a.sqrt(),
        notes: vec![],
    };
    if !(mean_a > 0.0) || limit <= 0.0 {
        row.notes.push("degenerate limit variance: TV skipped, only W1 <= Var(Sigma)^(1/2) applies".into());
        return Ok(row);
    }
    let mix = MixtureVarianceSample::new(a, Some(width))?;
    let d = mixture_distances(&mix);
    if d.tv.clipped {
        row.notes.push("TV clipped to [0, 1]".into());
    }
    row.tv_error_bound = Some(d.tv_error_bound);
    row.w1_error_bound = Some(d.w1_error_bound);
    row.tv = Some(d.tv);
    row.w1 = Some(d.w1);
    row.lower = Some(cosine_lower_bound(&mix));
    row.stein = Some(stein_upper_bounds(var_a, mean_a)?);
    Ok(row)
}

/// Re-fits a report from its points (e.g. after editing targets).
pub fn refit(points: &[MetricPoint], targets: &BTreeMap<Metric, Target>) -> Vec<MetricFit> {
    let mut metrics: Vec<Metric> = points.iter().map(|p| p.metric).collect();
    metrics.sort();
    metrics.dedup();
    metrics
        .into_iter()
        .map(|m| {
            let ps: Vec<MetricPoint> = points.iter().filter(|p| p.metric == m).cloned().collect();
            assemble_fit(m, &ps, targets.get(&m).copied().or_else(|| m.default_target()))
        })
        .collect()
}

pub fn to_json(report: &ScalingReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

pub fn from_json(text: &str) -> Result<ScalingReport> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let found = v.get("schema_version").and_then(|s| s.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaMismatch { found, expected: SCHEMA_VERSION });
    }
    Ok(serde_json::from_value(v)?)
}

pub fn persist(report: &ScalingReport, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(report)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ScalingReport> {
    from_json(&std::fs::read_to_string(path)?)
}

pub const CSV_COLUMNS: [&str; 6] = ["metric", "width", "estimate", "std_error", "included", "note"];

pub fn write_csv<W: Write>(report: &ScalingReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for p in &report.points {
        w.write_record([
            p.metric.name(),
            p.width.to_string(),
            format!("{:e}", p.estimate),
            format!("{:e}", p.std_error),
            p.included.to_string(),
            p.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
