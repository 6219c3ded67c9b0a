//! Gaussian quadrature: Gauss-Legendre, Gauss-Hermite (probabilists'
//! weight) and a composite Legendre rule weighted by the normal density.
//!
//! The composite rule is the default for kernel evaluation. Plain
//! Gauss-Hermite converges slowly on `tanh(s x)` once `s` exceeds ~1,
//! because the poles of the integrand move towards the real axis; the
//! composite rule refines its panels with the scale of the integrand.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Nodes and weights of the `m`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mf = m as f64;
    for i in 0..(m + 1) / 2 {
        let mut t = (PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, p_prev) = legendre(m, t);
            dp = mf * (t * p - p_prev) / (t * t - 1.0);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (p, p_prev) = legendre(m, t);
        dp = if p.is_finite() { mf * (t * p - p_prev) / (t * t - 1.0) } else { dp };
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[m - 1 - i] = t;
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    (x, w)
}

// (P_m(t), P_{m-1}(t))
fn legendre(m: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 1..m {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// `m`-point Gauss-Hermite rule for the standard normal density; weights
/// sum to one.
///
/// Golub-Welsch eigenvalues seed a Newton polish on the orthonormal
/// Hermite polynomial; weights come from `1 / sum_k p_k(x)^2`, which keeps
/// small weights accurate in relative terms.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    if m == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let jacobi = nalgebra::DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut x: Vec<f64> = nalgebra::SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut w = vec![0.0; m];
    for xi in x.iter_mut() {
        for _ in 0..50 {
            let (pm, pm1, _) = hermite_orthonormal(m, *xi);
            let d = (m as f64).sqrt() * pm1;
            let step = pm / d;
            *xi -= step;
            if step.abs() < 1e-15 * xi.abs().max(1.0) {
                break;
            }
        }
    }
    // enforce exact symmetry
    for i in 0..m / 2 {
        let s = 0.5 * (x[m - 1 - i] - x[i]);
        x[i] = -s;
        x[m - 1 - i] = s;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    for (i, &xi) in x.iter().enumerate() {
        let (_, _, sumsq) = hermite_orthonormal(m, xi);
        w[i] = 1.0 / sumsq;
    }
    let total: f64 = w.iter().sum();
    for wi in w.iter_mut() {
        *wi /= total;
    }
    (x, w)
}

// (p_m(x), p_{m-1}(x), sum_{k<m} p_k(x)^2) for the orthonormal probabilists' Hermite family
fn hermite_orthonormal(m: usize, x: f64) -> (f64, f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    let mut sumsq = 1.0;
    if m == 1 {
        return (p1, p0, sumsq);
    }
    sumsq += p1 * p1;
    for k in 1..m {
        let kf = k as f64;
        let p2 = (x * p1 - kf.sqrt() * p0) / (kf + 1.0).sqrt();
        p0 = p1;
        p1 = p2;
        if k + 1 < m {
            sumsq += p1 * p1;
        }
    }
    (p1, p0, sumsq)
}

/// Which one-dimensional rule backs Gaussian expectations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuadratureSpec {
    /// Gauss-Hermite with `nodes` points.
    Hermite { nodes: usize },
    /// Composite 8-point Gauss-Legendre on [-10, 10] with `panels` panels
    /// at unit scale, doubled per octave of the integrand's standard
    /// deviation (up to 8x).
    Composite { panels: usize },
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec::Composite { panels: 16 }
    }
}

impl QuadratureSpec {
    /// The same rule with twice the resolution.
    pub fn refined(self) -> Self {
        match self {
            QuadratureSpec::Hermite { nodes } => QuadratureSpec::Hermite { nodes: 2 * nodes },
            QuadratureSpec::Composite { panels } => QuadratureSpec::Composite { panels: 2 * panels },
        }
    }
}

const COMPOSITE_HALF_WIDTH: f64 = 10.0;
const COMPOSITE_ORDER: usize = 8;
const COMPOSITE_LEVELS: usize = 4;

/// Quadrature rule for expectations under the standard normal law.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    spec: QuadratureSpec,
    levels: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::new(QuadratureSpec::default())
    }
}

impl QuadratureRule {
    pub fn new(spec: QuadratureSpec) -> Self {
        let levels = match spec {
            QuadratureSpec::Hermite { nodes } => vec![gauss_hermite(nodes.max(1))],
            QuadratureSpec::Composite { panels } => (0..COMPOSITE_LEVELS)
                .map(|l| composite_normal(panels.max(1) << l))
                .collect(),
        };
        QuadratureRule { spec, levels }
    }

    pub fn hermite(nodes: usize) -> Self {
        QuadratureRule::new(QuadratureSpec::Hermite { nodes })
    }

    pub fn spec(&self) -> QuadratureSpec {
        self.spec
    }

    /// Nodes/weights adequate for an integrand `f(sd * x)` whose features
    /// have unit scale.
    pub fn nodes_for_sd(&self, sd: f64) -> (&[f64], &[f64]) {
        let level = if self.levels.len() == 1 || !(sd > 1.0) {
            0
        } else {
            (sd.log2().ceil() as usize).min(self.levels.len() - 1)
        };
        let (x, w) = &self.levels[level];
        (x, w)
    }

    /// E[f(u)], u ~ N(0, var).
    pub fn expect1(&self, var: f64, f: impl Fn(f64) -> f64) -> f64 {
        if var <= 0.0 {
            return f(0.0);
        }
        let sd = var.sqrt();
        let (x, w) = self.nodes_for_sd(sd);
        x.iter().zip(w).map(|(&xi, &wi)| wi * f(sd * xi)).sum()
    }

    /// E[f(u) g(v)] for (u, v) ~ N(0, [[a, b], [b, c]]), via the Cholesky
    /// substitution u = l11 x1, v = l21 x1 + l22 x2.
    pub fn expect_product(&self, a: f64, b: f64, c: f64, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> f64 {
        if a <= 0.0 {
            return f(0.0) * self.expect1(c, g);
        }
        if c <= 0.0 {
            return g(0.0) * self.expect1(a, f);
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        let (x, w) = self.nodes_for_sd(l11.max(l21.abs()));
        let (xi, wi) = self.nodes_for_sd(l22);
        let mut total = 0.0;
        for (&x1, &w1) in x.iter().zip(w) {
            let fu = f(l11 * x1);
            if fu == 0.0 {
                continue;
            }
            let mu = l21 * x1;
            let inner: f64 = if l22 == 0.0 {
                g(mu)
            } else {
                xi.iter().zip(wi).map(|(&x2, &w2)| w2 * g(mu + l22 * x2)).sum()
            };
            total += w1 * fu * inner;
        }
        total
    }
}

fn composite_normal(panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (g, gw) = gauss_legendre(COMPOSITE_ORDER);
    let h = 2.0 * COMPOSITE_HALF_WIDTH / panels as f64;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let mut x = Vec::with_capacity(panels * COMPOSITE_ORDER);
    let mut w = Vec::with_capacity(panels * COMPOSITE_ORDER);
    for p in 0..panels {
        let mid = -COMPOSITE_HALF_WIDTH + (p as f64 + 0.5) * h;
        for (gi, wi) in g.iter().zip(&gw) {
            let t = mid + 0.5 * h * gi;
            x.push(t);
            w.push(0.5 * h * wi * norm * (-0.5 * t * t).exp());
        }
    }
    (x, w)
}
