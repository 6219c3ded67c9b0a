//! Distances between a Gaussian variance mixture and its matching Gaussian,
//! Stein-type bounds, cumulant identities, convex-distance bounds and
//! Bures-Wasserstein distances.
//!
//! The one-dimensional estimators work on the exact mixture
//! `f(t) = (1/S) sum_s phi(t; 0, A_s)` built from conditional variances,
//! never on output samples.

use crate::config::{InputSet, NetworkConfig};
use crate::kernel_engine::KernelTable;
use crate::linalg::{check_symmetric, frobenius, psd_repair, psd_sqrt, sym_eigen};
use crate::net_sampler::{CondCovDraw, CondCovSampler, SamplerKind};
use crate::rng::{rng_from, split};
use crate::stats::{cumulants_with_leave_out, jackknife_se, mean, normal_pdf, normal_sf};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::stats::{cumulants, MomentSummary};

/// Samples of the conditional variance A and the variance of the Gaussian
/// they are compared with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureVarianceSample {
    samples: Vec<f64>,
    target: f64,
    /// Target is the sample mean (recomputed on every jackknife subsample).
    mean_target: bool,
    pub width: Option<usize>,
}

impl MixtureVarianceSample {
    /// Target sigma^2 = sample mean of A.
    pub fn new(samples: Vec<f64>, width: Option<usize>) -> Result<Self> {
        let t = if samples.is_empty() { 0.0 } else { mean(&samples) };
        Self::build(samples, t, true, width)
    }

    /// Fixed target sigma^2.
    pub fn with_target(samples: Vec<f64>, target: f64, width: Option<usize>) -> Result<Self> {
        Self::build(samples, target, false, width)
    }

    fn build(samples: Vec<f64>, target: f64, mean_target: bool, width: Option<usize>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: samples.len() });
        }
        if let Some(bad) = samples.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidInput(format!("variance sample {bad} is not a finite nonnegative number")));
        }
        if !(target > 0.0) || !target.is_finite() {
            return Err(Error::InvalidInput(format!("target variance must be > 0, got {target}")));
        }
        Ok(MixtureVarianceSample { samples, target, mean_target, width })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A reported quantity with its error bar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
    pub method: String,
    pub clipped: bool,
}

impl Estimate {
    fn new(estimate: f64, std_error: f64, method: &str) -> Self {
        Estimate { estimate, std_error, method: method.to_string(), clipped: false }
    }
}

/// TV and W1 between the mixture and N(0, sigma^2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureDistances {
    pub tv: Estimate,
    pub w1: Estimate,
    /// Richardson difference, Gaussian tails beyond the grid and a rounding
    /// floor.
    pub tv_error_bound: f64,
    pub w1_error_bound: f64,
    /// sup_t |F_mix(t) - Phi(t)|.
    pub ks: f64,
    /// Samples handled as point masses at zero (sqrt(A) below two grid steps).
    pub atoms: usize,
    pub target: f64,
    /// Points of the symmetric grid on [-T, T].
    pub grid_points: usize,
    pub half_width: f64,
}

/// Simpson intervals on [0, T]; the full symmetric grid has 2 * HALF + 1
/// points.
const HALF: usize = 4096;
const DOMAIN_C: f64 = 12.0;
const JACKKNIFE_GROUPS: usize = 20;
const REANCHOR: usize = 256;

#[derive(Clone)]
struct Partial {
    density: Vec<f64>,
    atoms: usize,
    count: usize,
    sum: f64,
}

// Sum of phi(t_i; 0, A) over the samples on t_i = i h, i = 0..=HALF. Each
// Gaussian is advanced by the ratio recurrence e_{i+1} = e_i q^{2i+1} and
// re-anchored with a direct exponential every REANCHOR steps.
fn accumulate(samples: &[f64], h: f64) -> Partial {
    let mut density = vec![0.0; HALF + 1];
    let mut atoms = 0;
    for &a in samples {
        if a.sqrt() < 2.0 * h {
            atoms += 1;
            continue;
        }
        let c = 1.0 / (2.0 * std::f64::consts::PI * a).sqrt();
        let g = h * h / (2.0 * a);
        let q = (-g).exp();
        let q2 = q * q;
        let mut e = 1.0;
        let mut r = q;
        for (i, d) in density.iter_mut().enumerate() {
            if i > 0 && i % REANCHOR == 0 {
                let fi = i as f64;
                e = (-g * fi * fi).exp();
                r = (-g * (2.0 * fi + 1.0)).exp();
            }
            if e < 1e-300 {
                break;
            }
            *d += c * e;
            e *= r;
            r *= q2;
        }
    }
    Partial { density, atoms, count: samples.len(), sum: samples.iter().sum() }
}

struct GridResult {
    tv: f64,
    w1: f64,
    tv_coarse: f64,
    w1_coarse: f64,
    ks: f64,
}

// Cubic Hermite interpolant of G on one interval of length h, from its
// end values and end slopes, as coefficients of 1, s, s^2, s^3.
fn hermite_coeffs(g0: f64, g1: f64, d0: f64, d1: f64, h: f64) -> [f64; 4] {
    let slope = (g1 - g0) / h;
    [g0, d0, (3.0 * slope - 2.0 * d0 - d1) / h, (d0 + d1 - 2.0 * slope) / (h * h)]
}

fn poly_eval(c: &[f64; 4], s: f64) -> f64 {
    c[0] + s * (c[1] + s * (c[2] + s * c[3]))
}

fn poly_integral(c: &[f64; 4], s0: f64, s1: f64) -> f64 {
    let prim = |s: f64| s * (c[0] + s * (c[1] / 2.0 + s * (c[2] / 3.0 + s * c[3] / 4.0)));
    prim(s1) - prim(s0)
}

// Root of the interpolant in (0, h) given a sign change at the ends.
fn bisect_root(c: &[f64; 4], h: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    let lo_sign = poly_eval(c, 0.0).signum();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if poly_eval(c, mid).signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// G(t) = F_mix(t) - Phi(t) on the half grid: Simpson on even points, a
// three-point rule for odd ones.
fn cdf_gap(d: &[f64], p0: f64, h: f64) -> Vec<f64> {
    let n = d.len() - 1;
    let mut g = vec![0.0; n + 1];
    g[0] = 0.5 * p0;
    let mut i = 0;
    while i < n {
        g[i + 1] = g[i] + h * (5.0 * d[i] + 8.0 * d[i + 1] - d[i + 2]) / 12.0;
        g[i + 2] = g[i] + h / 3.0 * (d[i] + 4.0 * d[i + 1] + d[i + 2]);
        i += 2;
    }
    g
}

// Integral of |d| = |G'| over [0, T] and of |G|, splitting intervals at
// sign changes so the kinks of the absolute value are integrated exactly
// up to interpolation error.
fn abs_integrals(d: &[f64], g: &[f64], h: f64) -> (f64, f64) {
    let mut l1_d = 0.0;
    let mut l1_g = 0.0;
    for i in 0..d.len() - 1 {
        let c = hermite_coeffs(g[i], g[i + 1], d[i], d[i + 1], h);
        if d[i] * d[i + 1] < 0.0 {
            let s = h * d[i] / (d[i] - d[i + 1]);
            let gr = poly_eval(&c, s);
            l1_d += (gr - g[i]).abs() + (g[i + 1] - gr).abs();
        } else {
            l1_d += (g[i + 1] - g[i]).abs();
        }
        if g[i] * g[i + 1] < 0.0 {
            let s = bisect_root(&c, h);
            l1_g += poly_integral(&c, 0.0, s).abs() + poly_integral(&c, s, h).abs();
        } else {
            l1_g += poly_integral(&c, 0.0, h).abs();
        }
    }
    (l1_d, l1_g)
}

// TV and W1 from the averaged density on the half grid.
fn integrate(density: &[f64], p0: f64, sigma2: f64, h: f64) -> GridResult {
    let s = sigma2.sqrt();
    let diff: Vec<f64> = density.iter().enumerate().map(|(i, f)| f - normal_pdf(i as f64 * h / s) / s).collect();
    let g = cdf_gap(&diff, p0, h);
    let (l1_d, l1_g) = abs_integrals(&diff, &g, h);
    let coarse: Vec<f64> = diff.iter().step_by(2).copied().collect();
    let gc = cdf_gap(&coarse, p0, 2.0 * h);
    let (l1_dc, l1_gc) = abs_integrals(&coarse, &gc, 2.0 * h);
    let ks = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // TV = (1/2)(int_R |f - phi| + p0); W1 = int_R |G| with G odd
    GridResult { tv: l1_d + 0.5 * p0, w1: 2.0 * l1_g, tv_coarse: l1_dc + 0.5 * p0, w1_coarse: 2.0 * l1_gc, ks }
}

/// TV and W1 between the mixture and N(0, sigma^2), with grouped-jackknife
/// standard errors.
pub fn mixture_distances(mix: &MixtureVarianceSample) -> MixtureDistances {
    let xs = &mix.samples;
    let s_total = xs.len();
    let max_a = xs.iter().fold(0.0f64, |m, v| m.max(*v));
    let big = mix.target.max(max_a);
    let t_max = DOMAIN_C * big.sqrt();
    let h = t_max / HALF as f64;

    let groups = JACKKNIFE_GROUPS.min(s_total);
    let bounds: Vec<(usize, usize)> = (0..groups).map(|g| (g * s_total / groups, (g + 1) * s_total / groups)).collect();
    let parts: Vec<Partial> = bounds.par_iter().map(|&(lo, hi)| accumulate(&xs[lo..hi], h)).collect();

    let mut total = vec![0.0; HALF + 1];
    let (mut atoms, mut sum) = (0usize, 0.0);
    for p in &parts {
        for (t, d) in total.iter_mut().zip(&p.density) {
            *t += d;
        }
        atoms += p.atoms;
        sum += p.sum;
    }
    let target_for = |count: usize, sum: f64| if mix.mean_target { sum / count as f64 } else { mix.target };
    let evaluate = |dens_sum: &[f64], count: usize, atoms: usize, sum: f64| {
        let inv = 1.0 / count as f64;
        let dens: Vec<f64> = dens_sum.iter().map(|d| d * inv).collect();
        integrate(&dens, atoms as f64 * inv, target_for(count, sum), h)
    };
    let full = evaluate(&total, s_total, atoms, sum);

    let loo: Vec<GridResult> = parts
        .par_iter()
        .map(|p| {
            let rest: Vec<f64> = total.iter().zip(&p.density).map(|(t, d)| t - d).collect();
            evaluate(&rest, s_total - p.count, atoms - p.atoms, sum - p.sum)
        })
        .collect();
    let tv_loo: Vec<f64> = loo.iter().map(|r| r.tv).collect();
    let w1_loo: Vec<f64> = loo.iter().map(|r| r.w1).collect();

    // beyond T every component has at most its Gaussian tail
    let sigma2 = target_for(s_total, sum);
    let u_mix = t_max / big.sqrt();
    let u_tar = t_max / sigma2.sqrt();
    let tv_tail = normal_sf(u_mix) + normal_sf(u_tar);
    let w1_tail = 2.0 * (big.sqrt() * normal_pdf(u_mix) + sigma2.sqrt() * normal_pdf(u_tar));
    let floor = 1e-14 * (1.0 + HALF as f64).sqrt();
    let tv_err = (full.tv - full.tv_coarse).abs() + tv_tail + floor;
    let w1_err = (full.w1 - full.w1_coarse).abs() + w1_tail + floor * t_max;

    let mut tv = Estimate::new(full.tv, jackknife_se(&tv_loo), "mixture-density-simpson");
    if !(0.0..=1.0).contains(&tv.estimate) {
        tv.clipped = true;
        tv.estimate = tv.estimate.clamp(0.0, 1.0);
    }
    let w1 = Estimate::new(full.w1, jackknife_se(&w1_loo), "cdf-gap-simpson");
    MixtureDistances {
        tv,
        w1,
        tv_error_bound: tv_err,
        w1_error_bound: w1_err,
        ks: full.ks,
        atoms,
        target: sigma2,
        grid_points: 2 * HALF + 1,
        half_width: t_max,
    }
}

pub fn tv_mixture_vs_gaussian(mix: &MixtureVarianceSample) -> (Estimate, f64) {
    let d = mixture_distances(mix);
    (d.tv, d.tv_error_bound)
}

pub fn w1_mixture_vs_gaussian(mix: &MixtureVarianceSample) -> (Estimate, f64) {
    let d = mixture_distances(mix);
    (d.w1, d.w1_error_bound)
}

/// |mean e^{-A/2} - e^{-sigma^2/2}| with a delete-one jackknife error.
pub fn cosine_lower_bound(mix: &MixtureVarianceSample) -> Estimate {
    let xs = &mix.samples;
    let n = xs.len() as f64;
    let e: Vec<f64> = xs.iter().map(|a| (-0.5 * a).exp()).collect();
    let se: f64 = e.iter().sum();
    let sa: f64 = xs.iter().sum();
    let value = |sum_e: f64, sum_a: f64, count: f64| {
        let t = if mix.mean_target { sum_a / count } else { mix.target };
        (sum_e / count - (-0.5 * t).exp()).abs()
    };
    let full = value(se, sa, n);
    let loo: Vec<f64> = xs.iter().zip(&e).map(|(a, ei)| value(se - ei, sa - a, n - 1.0)).collect();
    Estimate::new(full, jackknife_se(&loo), "cosine-characteristic")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinBounds {
    pub tv_bound: f64,
    pub w1_bound: f64,
    /// 8 Var(A) / sigma^4 before clipping at 1.
    pub tv_raw: f64,
}

pub fn stein_upper_bounds(var_a: f64, sigma2: f64) -> Result<SteinBounds> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma^2 must be > 0, got {sigma2}")));
    }
    if !(var_a >= 0.0) {
        return Err(Error::InvalidInput(format!("Var(A) must be >= 0, got {var_a}")));
    }
    let tv_raw = 8.0 * var_a / (sigma2 * sigma2);
    Ok(SteinBounds { tv_bound: tv_raw.min(1.0), w1_bound: 4.0 * var_a / sigma2.powf(1.5), tv_raw })
}

/// Bounds for two centered Gaussians: TV <= 2 |s1 - s2| / max(s1, s2)
/// (variances) and W1 <= |sqrt(s1) - sqrt(s2)|, with the exact values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub tv_bound: f64,
    pub w1_bound: f64,
    pub tv_exact: f64,
    pub w1_exact: f64,
}

pub fn gaussian_pair_bounds(var1: f64, var2: f64) -> Result<GaussianPair> {
    if !(var1 > 0.0 && var2 > 0.0) {
        return Err(Error::InvalidInput("variances must be > 0".into()));
    }
    let (lo, hi) = if var1 <= var2 { (var1, var2) } else { (var2, var1) };
    let tv_exact = if hi == lo {
        0.0
    } else {
        // the densities cross at +-t*
        let t = (lo * hi * (hi / lo).ln() / (hi - lo)).sqrt();
        2.0 * (normal_sf(t / hi.sqrt()) - normal_sf(t / lo.sqrt()))
    };
    let dsd = (var1.sqrt() - var2.sqrt()).abs();
    Ok(GaussianPair {
        tv_bound: (2.0 * (hi - lo) / hi).min(1.0),
        w1_bound: dsd,
        tv_exact,
        w1_exact: dsd * (2.0 / std::f64::consts::PI).sqrt(),
    })
}

/// Both sides of 3 Var(Sigma_aa) = kappa_4(z), z one output coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cum4Check {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    /// (lhs - rhs) over the jackknife error of the paired difference.
    pub z_score: f64,
}

/// Pairs each conditional variance A_k with z_k = sqrt(A_k) xi_k; xi_k is
/// drawn from split(split(seed, k), 1), independent of the network draw.
pub fn cum4_from_variances(variances: &[f64], seed: u64) -> Result<Cum4Check> {
    let z: Vec<f64> = variances
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let mut rng = rng_from(split(split(seed, k as u64), 1));
            a.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let (ma, la) = cumulants_with_leave_out(variances)?;
    let (mz, lz) = cumulants_with_leave_out(&z)?;
    let diff: Vec<f64> = la[0].iter().zip(&lz[2]).map(|(v, k4)| 3.0 * v - k4).collect();
    let lhs = 3.0 * ma.k2;
    let rhs = mz.k4;
    let se = jackknife_se(&diff);
    let z_score = if se > 0.0 { (lhs - rhs) / se } else { 0.0 };
    Ok(Cum4Check { lhs, lhs_se: 3.0 * ma.k2_se, rhs, rhs_se: mz.k4_se, z_score })
}

pub fn cum4_identity_check(
    config: &NetworkConfig,
    input: &[f64],
    width: usize,
    replicas: usize,
    seed: u64,
    kind: SamplerKind,
) -> Result<Cum4Check> {
    if width < 2 {
        return Err(Error::InvalidConfig("width must be >= 2".into()));
    }
    if replicas < 1000 {
        return Err(Error::InvalidConfig("replicas must be >= 1000".into()));
    }
    let cfg = config.with_hidden_width(width);
    let inputs = InputSet::single(input.to_vec());
    let sampler = CondCovSampler::new(kind, &cfg, &inputs)?;
    let a = sampler.map(0..replicas as u64, seed, |_, s| s[(0, 0)]);
    cum4_from_variances(&a, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexBound {
    pub raw: f64,
    pub bound: f64,
    pub clipped: bool,
}

/// min(1, 402 (lambda_+^{-3/2} + 1) rank^{41/24} sqrt(var_sum)).
pub fn convex_bound(var_matrix_sum: f64, rank: usize, lambda_plus: f64) -> Result<ConvexBound> {
    if !(lambda_plus > 0.0) {
        return Err(Error::InvalidInput(format!("lambda_plus must be > 0, got {lambda_plus}")));
    }
    if rank < 1 {
        return Err(Error::InvalidInput("rank must be >= 1".into()));
    }
    if !(var_matrix_sum >= 0.0) {
        return Err(Error::InvalidInput("variance sum must be >= 0".into()));
    }
    let raw = 402.0 * (lambda_plus.powf(-1.5) + 1.0) * (rank as f64).powf(41.0 / 24.0) * var_matrix_sum.sqrt();
    Ok(ConvexBound { raw, bound: raw.min(1.0), clipped: raw > 1.0 })
}

/// Inputs of [`convex_bound`] estimated from draws of Sigma.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexBoundInputs {
    pub var_sum: f64,
    pub rank: usize,
    pub lambda_plus: f64,
    pub bound: ConvexBound,
}

/// Uses the eigendecomposition of the mean of the draws, threshold 1e-8 x
/// trace. `multiplicity` is n_{L+1}: the output covariance is Sigma tensor
/// I, which multiplies the variance sum and the rank.
pub fn convex_bound_from_draws(draws: &[DMatrix<f64>], multiplicity: usize) -> Result<ConvexBoundInputs> {
    if draws.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: draws.len() });
    }
    let m = draws[0].nrows();
    let s = draws.len() as f64;
    let mut mean_c = DMatrix::<f64>::zeros(m, m);
    for d in draws {
        mean_c += d;
    }
    mean_c /= s;
    let mut var_sum = 0.0;
    for r in 0..m {
        for c in 0..m {
            let mu = mean_c[(r, c)];
            var_sum += draws.iter().map(|d| (d[(r, c)] - mu).powi(2)).sum::<f64>() / (s - 1.0);
        }
    }
    let (vals, _) = sym_eigen(&mean_c);
    let thr = 1e-8 * mean_c.trace();
    let pos: Vec<f64> = vals.into_iter().filter(|v| *v > thr).collect();
    if pos.is_empty() {
        return Err(Error::InvalidInput("mean covariance has no positive eigenvalue".into()));
    }
    let rank = pos.len() * multiplicity;
    let lambda_plus = *pos.last().unwrap();
    let var_sum = var_sum * multiplicity as f64;
    Ok(ConvexBoundInputs { var_sum, rank, lambda_plus, bound: convex_bound(var_sum, rank, lambda_plus)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuresResult {
    pub w2: f64,
    /// ||sqrt(C1) - sqrt(C2)||_HS, the coupling bound.
    pub hs_bound: f64,
}

/// W2 between N(0, C1) and N(0, C2).
pub fn bures_w2(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<BuresResult> {
    if c1.shape() != c2.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", c1.shape(), c2.shape())));
    }
    check_symmetric(c1, 1e-8)?;
    check_symmetric(c2, 1e-8)?;
    let (c1, _) = psd_repair(c1);
    let (c2, _) = psd_repair(c2);
    let r1 = psd_sqrt(&c1).root;
    let r2 = psd_sqrt(&c2).root;
    let mid = &r1 * &c2 * &r1;
    let fidelity: f64 = sym_eigen(&mid).0.iter().map(|v| v.max(0.0).sqrt()).sum();
    let tr = c1.trace() + c2.trace();
    let w2 = (tr - 2.0 * fidelity).max(0.0).sqrt();
    let hs = frobenius(&(&r1 - &r2));
    // rounding in the trace difference is ~eps * tr
    if w2 * w2 > (hs + 1e-9).powi(2) + 64.0 * f64::EPSILON * tr {
        return Err(Error::InvariantViolation(format!("Bures W2 {w2} exceeds coupling bound {hs}")));
    }
    Ok(BuresResult { w2, hs_bound: hs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceAggregates {
    pub a_n: f64,
    pub b_n: f64,
    pub c_n: f64,
}

/// Weighted aggregates of entry variances and mean squared deviations from
/// the limit K^(L+1); `weights[i]` is the mass of index entry i.
pub fn variance_aggregates(draws: &[CondCovDraw], table: &KernelTable, weights: &[f64]) -> Result<VarianceAggregates> {
    if draws.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if draws.iter().any(|d| d.index != table.index) {
        return Err(Error::DimensionMismatch("draw index set differs from the kernel table".into()));
    }
    if weights.len() != table.index.len() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite, nonnegative, one per index entry".into()));
    }
    let k = table.output();
    let m = k.nrows();
    let s = draws.len() as f64;
    let (mut a_n, mut b_n, mut c_n) = (0.0, 0.0, 0.0);
    for r in 0..m {
        for c in 0..m {
            let w = weights[r] * weights[c];
            if w == 0.0 {
                continue;
            }
            let mu = draws.iter().map(|d| d.sigma[(r, c)]).sum::<f64>() / s;
            let var = if draws.len() > 1 { draws.iter().map(|d| (d.sigma[(r, c)] - mu).powi(2)).sum::<f64>() / (s - 1.0) } else { 0.0 };
            let msd = draws.iter().map(|d| (d.sigma[(r, c)] - k[(r, c)]).powi(2)).sum::<f64>() / s;
            a_n += w * var;
            b_n += w * msd;
            if r == c {
                c_n += weights[r] * msd;
            }
        }
    }
    Ok(VarianceAggregates { a_n, b_n, c_n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_variances_give_zero() {
        let mix = MixtureVarianceSample::new(vec![1.3; 50], None).unwrap();
        let d = mixture_distances(&mix);
        assert!(d.tv.estimate < 1e-10 && d.w1.estimate < 1e-10, "{d:?}");
        assert!(cosine_lower_bound(&mix).estimate < 1e-15);
    }

    #[test]
    fn cosine_two_atoms() {
        let mix = MixtureVarianceSample::new(vec![0.0, 2.0], None).unwrap();
        let v = cosine_lower_bound(&mix).estimate;
        let expect = (0.5 * (1.0 + (-1.0f64).exp()) - (-0.5f64).exp()).abs();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.0774).abs() < 5e-5);
    }

    #[test]
    fn stein_arithmetic() {
        let b = stein_upper_bounds(0.0, 1.0).unwrap();
        assert_eq!((b.tv_bound, b.w1_bound), (0.0, 0.0));
        let b = stein_upper_bounds(0.25, 1.0).unwrap();
        assert_eq!((b.tv_bound, b.w1_bound, b.tv_raw), (1.0, 1.0, 2.0));
        assert!(stein_upper_bounds(0.1, 0.0).is_err());
    }

    #[test]
    fn convex_arithmetic() {
        assert_eq!(convex_bound(0.0, 3, 0.5).unwrap().raw, 0.0);
        let b = convex_bound(1e-4, 1, 1.0).unwrap();
        assert!((b.raw - 8.04).abs() < 1e-12);
        assert_eq!(b.bound, 1.0);
        assert!(b.clipped);
        assert!(convex_bound(1.0, 1, 0.0).is_err());
    }

    #[test]
    fn bures_diagonal() {
        let c1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let c2 = DMatrix::identity(2, 2);
        let r = bures_w2(&c1, &c2).unwrap();
        assert!((r.w2 - 1.0).abs() < 1e-12);
        assert!((r.hs_bound - 1.0).abs() < 1e-12);
        let same = bures_w2(&c1, &c1).unwrap();
        assert!(same.w2 < 1e-7);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(bures_w2(&asym, &c2).is_err());
    }

    #[test]
    fn gaussian_pair_single_atom() {
        let p = gaussian_pair_bounds(4.0, 1.0).unwrap();
        assert_eq!(p.tv_bound, 1.0);
        assert_eq!(p.w1_bound, 1.0);
        let mix = MixtureVarianceSample::with_target(vec![4.0, 4.0], 1.0, None).unwrap();
        let d = mixture_distances(&mix);
        assert!((d.tv.estimate - p.tv_exact).abs() < 1e-9, "{} vs {}", d.tv.estimate, p.tv_exact);
        assert!((d.w1.estimate - p.w1_exact).abs() < 1e-9, "{} vs {}", d.w1.estimate, p.w1_exact);
        assert!(d.tv.estimate <= 2.0 * 3.0 / 4.0 && d.w1.estimate <= 1.0);
    }

    #[test]
    fn atoms_count_half_mass() {
        // half the mass at zero: TV = (1/2)(L1 of the continuous part + 1/2)
        let mix = MixtureVarianceSample::with_target(vec![0.0, 1.0], 1.0, None).unwrap();
        let d = mixture_distances(&mix);
        assert_eq!(d.atoms, 1);
        // continuous part is phi/2, so |f - phi| integrates to 1/2
        assert!((d.tv.estimate - 0.5).abs() < 1e-9);
        // W1 to N(0,1) of the mixture: half the mass moved to zero costs E|Z|/2
        assert!((d.w1.estimate - 0.5 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn aggregates_collapse() {
        let idx = vec![crate::Idx::value(0)];
        let table = KernelTable {
            index: idx.clone(),
            layers: vec![vec![vec![2.0]]],
            methods: vec![vec![vec![crate::kernel_engine::Method::Exact]]],
            unreliable: vec![],
            degenerate_inputs: vec![],
            correlation_clips: 0,
            quadrature: Default::default(),
        };
        let draw = |v: f64| CondCovDraw { index: idx.clone(), sigma: DMatrix::from_element(1, 1, v), width: 8, seed: 0 };
        let same = vec![draw(2.0), draw(2.0)];
        let a = variance_aggregates(&same, &table, &[1.0]).unwrap();
        assert_eq!((a.a_n, a.b_n, a.c_n), (0.0, 0.0, 0.0));
        let vals = [1.0, 2.5, 3.0, 1.5];
        let ds: Vec<_> = vals.iter().map(|v| draw(*v)).collect();
        let a = variance_aggregates(&ds, &table, &[1.0]).unwrap();
        let (_, var) = crate::stats::mean_var(&vals);
        assert!((a.a_n - var).abs() < 1e-14);
    }
}
