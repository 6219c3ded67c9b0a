//! Sample statistics: k-statistics, jackknife errors, normal CDF and the
//! Anderson-Darling normality test.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail P(N(0,1) > x), accurate far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let n = xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 })
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (mean_var(xs).1 / xs.len() as f64).sqrt()
}

/// Jackknife standard error from leave-out estimates (delete-one or
/// delete-group with equal group sizes).
pub fn jackknife_se(leave_out: &[f64]) -> f64 {
    let g = leave_out.len() as f64;
    if leave_out.len() < 2 {
        return 0.0;
    }
    let m = mean(leave_out);
    ((g - 1.0) / g * leave_out.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
}

/// k-statistics from the central moments m2, m3, m4 of n samples.
fn kstats_from(n: f64, m2: f64, m3: f64, m4: f64) -> [f64; 3] {
    let k2 = n / (n - 1.0) * m2;
    let k3 = n * n / ((n - 1.0) * (n - 2.0)) * m3;
    let k4 = n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2) / ((n - 1.0) * (n - 2.0) * (n - 3.0));
    [k2, k3, k4]
}

// Central moments about the mean from power sums of values already
// shifted by some center; `s1` need not vanish.
fn central_from_sums(n: f64, s1: f64, s2: f64, s3: f64, s4: f64) -> (f64, f64, f64) {
    let mu = s1 / n;
    let (p2, p3, p4) = (s2 / n, s3 / n, s4 / n);
    let m2 = p2 - mu * mu;
    let m3 = p3 - 3.0 * mu * p2 + 2.0 * mu.powi(3);
    let m4 = p4 - 4.0 * mu * p3 + 6.0 * mu * mu * p2 - 3.0 * mu.powi(4);
    (m2, m3, m4)
}

/// Unbiased cumulant estimates with delete-one jackknife errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub samples: usize,
    pub mean: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k2_se: f64,
    pub k3_se: f64,
    pub k4_se: f64,
}

pub fn cumulants(xs: &[f64]) -> Result<MomentSummary> {
    cumulants_with_leave_out(xs).map(|(m, _)| m)
}

/// Like [`cumulants`], also returning the delete-one k-statistics
/// (k2, k3, k4) so paired quantities can be jackknifed together.
pub fn cumulants_with_leave_out(xs: &[f64]) -> Result<(MomentSummary, [Vec<f64>; 3])> {
    if xs.len() < 8 {
        return Err(Error::InsufficientSamples { needed: 8, got: xs.len() });
    }
    let n = xs.len() as f64;
    let center = mean(xs);
    let mut s = [0.0f64; 4];
    for x in xs {
        let y = x - center;
        let y2 = y * y;
        s[0] += y;
        s[1] += y2;
        s[2] += y2 * y;
        s[3] += y2 * y2;
    }
    let (m2, m3, m4) = central_from_sums(n, s[0], s[1], s[2], s[3]);
    let full = kstats_from(n, m2, m3, m4);
    // a constant sequence has exactly zero cumulants; rounding in the
    // moment formulas must not leak through
    if m2 <= f64::EPSILON * f64::EPSILON * center * center {
        let zeros = [vec![0.0; xs.len()], vec![0.0; xs.len()], vec![0.0; xs.len()]];
        let m = MomentSummary { samples: xs.len(), mean: center, k2: 0.0, k3: 0.0, k4: 0.0, k2_se: 0.0, k3_se: 0.0, k4_se: 0.0 };
        return Ok((m, zeros));
    }
    let mut loo = [Vec::with_capacity(xs.len()), Vec::with_capacity(xs.len()), Vec::with_capacity(xs.len())];
    for x in xs {
        let y = x - center;
        let y2 = y * y;
        let (a2, a3, a4) = central_from_sums(n - 1.0, s[0] - y, s[1] - y2, s[2] - y2 * y, s[3] - y2 * y2);
        let k = kstats_from(n - 1.0, a2, a3, a4);
        for i in 0..3 {
            loo[i].push(k[i]);
        }
    }
    let summary = MomentSummary {
        samples: xs.len(),
        mean: center,
        k2: full[0].max(0.0),
        k3: full[1],
        k4: full[2],
        k2_se: jackknife_se(&loo[0]),
        k3_se: jackknife_se(&loo[1]),
        k4_se: jackknife_se(&loo[2]),
    };
    Ok((summary, loo))
}

/// Anderson-Darling statistic against a fully specified normal law, and
/// its asymptotic p-value.
pub fn anderson_darling(xs: &[f64], mean: f64, var: f64) -> (f64, f64) {
    let mut u: Vec<f64> = xs.iter().map(|x| normal_cdf((x - mean) / var.sqrt())).collect();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len();
    let nf = n as f64;
    let tiny = 1e-300;
    let mut s = 0.0;
    for i in 0..n {
        let lo = u[i].max(tiny).ln();
        let hi = (1.0 - u[n - 1 - i]).max(tiny).ln();
        s += (2.0 * i as f64 + 1.0) * (lo + hi);
    }
    let a2 = -nf - s / nf;
    (a2, 1.0 - ad_inf_cdf(a2))
}

// Limiting distribution of A^2 (Marsaglia and Marsaglia 2004).
fn ad_inf_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
}
