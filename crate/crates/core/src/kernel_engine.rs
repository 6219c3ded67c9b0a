//! Infinite-width covariances K^(l) and their first-derivative entries.
//!
//! K^(1)(x, y) = C_b + (C_W / n_0) x.y and
//! K^(l+1)(x, y) = C_b + C_W E[sigma(u) sigma(v)], (u, v) ~ N(0, K^(l) block).
//!
//! Evaluation paths:
//! * ReLU, LeakyReLU, identity: closed forms. For these the derivative
//!   entries also follow in closed form, by regressing the tangent
//!   variables on (u, v) and using orthant moments of degree <= 2.
//! * Polynomials: exact bivariate Gaussian moments.
//! * Everything else: bivariate quadrature; derivative entries by central
//!   finite differences of the kernel chain on perturbed inputs.

use crate::config::{base_covariance, Idx, InputSet, NetworkConfig};
use crate::linalg::sym_eigen;
use crate::nonlinearity::{Nonlinearity, Smoothness};
use crate::quadrature::{QuadratureRule, QuadratureSpec};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    ClosedForm,
    Quadrature,
    FiniteDifference,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Closed form where available, finite differences otherwise.
    #[default]
    Auto,
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    pub quadrature: QuadratureSpec,
    pub derivative_method: DerivativeMethod,
    /// Finite-difference step relative to the input scale.
    pub fd_step: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { quadrature: QuadratureSpec::default(), derivative_method: DerivativeMethod::Auto, fd_step: 1e-4 }
    }
}

/// Limit covariances over B for layers 1..=L+1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub index: Vec<Idx>,
    /// `layers[l - 1]` is K^(l), row-major |B| x |B|.
    pub layers: Vec<Vec<Vec<f64>>>,
    pub methods: Vec<Vec<Vec<Method>>>,
    /// (layer, row, col) entries computed by finite differences across a
    /// kink of a non-smooth nonlinearity.
    pub unreliable: Vec<(usize, usize, usize)>,
    /// Inputs equal to zero with C_b = 0 (zero base kernel).
    pub degenerate_inputs: Vec<usize>,
    pub correlation_clips: usize,
    pub quadrature: QuadratureSpec,
}

impl KernelTable {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// K^(l) as a matrix, l in 1..=L+1.
    pub fn layer(&self, l: usize) -> DMatrix<f64> {
        let m = &self.layers[l - 1];
        DMatrix::from_fn(m.len(), m.len(), |r, c| m[r][c])
    }

    /// K^(L+1), the covariance of the network output.
    pub fn output(&self) -> DMatrix<f64> {
        self.layer(self.layers.len())
    }

    pub fn position(&self, idx: Idx) -> Option<usize> {
        self.index.iter().position(|i| *i == idx)
    }
}

// E[u^i v^j] for (u, v) ~ N(0, [[a, b], [b, c]]) by counting pairings.
fn gaussian_moment(i: usize, j: usize, a: f64, b: f64, c: f64) -> f64 {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let mut total = 0.0;
    for k in 0..=i.min(j) {
        if (i - k) % 2 == 1 || (j - k) % 2 == 1 {
            continue;
        }
        let p = (i - k) / 2;
        let q = (j - k) / 2;
        let coef = fact(i) * fact(j) / (fact(k) * fact(p) * fact(q) * 2f64.powi((p + q) as i32));
        total += coef * b.powi(k as i32) * a.powi(p as i32) * c.powi(q as i32);
    }
    total
}

/// Orthant moments of (u, v) ~ N(0, [[a, b], [b, c]]): E[u^i v^j 1_u 1_v]
/// with optional indicators 1{u > 0}, 1{v > 0}, i + j <= 2.
#[derive(Clone, Copy, Debug)]
struct Orthant {
    a: f64,
    b: f64,
    c: f64,
    rho: f64,
    theta: f64,
}

impl Orthant {
    fn new(a: f64, b: f64, c: f64) -> (Self, bool) {
        let mut clipped = false;
        let rho = if a > 0.0 && c > 0.0 {
            let r = b / (a * c).sqrt();
            if r.abs() > 1.0 {
                clipped = true;
                log::debug!("correlation {r} clipped to [-1, 1]");
            }
            r.clamp(-1.0, 1.0)
        } else {
            0.0
        };
        (Orthant { a, b, c, rho, theta: rho.acos() }, clipped)
    }

    fn moment(&self, i: usize, j: usize, iu: bool, iv: bool) -> f64 {
        let (a, b, c) = (self.a, self.b, self.c);
        if (iu && a <= 0.0) || (iv && c <= 0.0) || (i > 0 && a <= 0.0) || (j > 0 && c <= 0.0) {
            // the indicator or the monomial vanishes identically
            return if i == 0 && j == 0 && !iu && !iv { 1.0 } else { 0.0 };
        }
        let s2pi = (2.0 * PI).sqrt();
        match (iu, iv) {
            (false, false) => gaussian_moment(i, j, a, b, c),
            (true, false) | (false, true) => {
                if (i + j) % 2 == 0 {
                    return 0.5 * gaussian_moment(i, j, a, b, c);
                }
                // degree one: E[u 1{u>0}] = sqrt(a / 2pi), E[v 1{u>0}] = b / sqrt(2 pi a)
                let (own, other_cov, own_var) = if iu { (i == 1, b, a) } else { (j == 1, b, c) };
                if own {
                    own_var.sqrt() / s2pi
                } else {
                    other_cov / (s2pi * own_var.sqrt())
                }
            }
            (true, true) => {
                let t = self.theta;
                let (st, ct) = (t.sin(), t.cos());
                match (i, j) {
                    (0, 0) => (PI - t) / (2.0 * PI),
                    (1, 0) => a.sqrt() * (1.0 + self.rho) / (2.0 * s2pi),
                    (0, 1) => c.sqrt() * (1.0 + self.rho) / (2.0 * s2pi),
                    (2, 0) => a * (PI - t + st * ct) / (2.0 * PI),
                    (0, 2) => c * (PI - t + st * ct) / (2.0 * PI),
                    (1, 1) => (a * c).sqrt() * (st + (PI - t) * ct) / (2.0 * PI),
                    _ => unreachable!("degree > 2"),
                }
            }
        }
    }
}

/// E[relu(u) relu(v)]: the arc-cosine kernel of degree one.
pub fn arc_cosine(a: f64, b: f64, c: f64) -> f64 {
    Orthant::new(a, b, c).0.moment(1, 1, true, true)
}

// A function of one variable in the span {x, x 1{x>0}, 1, 1{x>0}}.
#[derive(Clone, Copy)]
struct Piecewise {
    lin: f64,
    lin_pos: f64,
    cst: f64,
    cst_pos: f64,
}

impl Piecewise {
    fn value(s: f64) -> Self {
        Piecewise { lin: s, lin_pos: 1.0 - s, cst: 0.0, cst_pos: 0.0 }
    }
    fn derivative(s: f64) -> Self {
        Piecewise { lin: 0.0, lin_pos: 0.0, cst: s, cst_pos: 1.0 - s }
    }
    // (coefficient, degree, indicator)
    fn terms(&self) -> [(f64, usize, bool); 4] {
        [(self.lin, 1, false), (self.lin_pos, 1, true), (self.cst, 0, false), (self.cst_pos, 0, true)]
    }
}

// Linear regression E[e | u, v] = alpha u + beta v.
fn regress(a: f64, b: f64, c: f64, eu: f64, ev: f64) -> (f64, f64) {
    let det = a * c - b * b;
    if a > 0.0 && c > 0.0 && det > 1e-10 * a * c {
        ((c * eu - b * ev) / det, (a * ev - b * eu) / det)
    } else if a > 0.0 {
        (eu / a, 0.0)
    } else if c > 0.0 {
        (0.0, ev / c)
    } else {
        (0.0, 0.0)
    }
}

/// Covariance data for one entry of the extended recursion.
struct ExtBlock {
    a: f64,
    b: f64,
    c: f64,
    /// (cov(e1, u), cov(e1, v)) if the row is a derivative entry
    e1: Option<(f64, f64)>,
    /// (cov(e2, u), cov(e2, v)) if the column is a derivative entry
    e2: Option<(f64, f64)>,
    e12: f64,
}

// E[f(u) g(v) P(e)] for piecewise-linear f, g and P in {1, e1, e2, e1 e2}.
fn relu_family_ext(slope: f64, blk: &ExtBlock) -> (f64, bool) {
    let (orth, clipped) = Orthant::new(blk.a, blk.b, blk.c);
    let f = if blk.e1.is_some() { Piecewise::derivative(slope) } else { Piecewise::value(slope) };
    let g = if blk.e2.is_some() { Piecewise::derivative(slope) } else { Piecewise::value(slope) };
    let (a, b, c) = (blk.a, blk.b, blk.c);
    let r1 = blk.e1.map(|(eu, ev)| regress(a, b, c, eu, ev));
    let r2 = blk.e2.map(|(eu, ev)| regress(a, b, c, eu, ev));
    // conditional polynomial in (u, v): coefficients over monomials
    // [1, u, v, uu, uv, vv]
    let mut poly = [0.0; 6];
    match (r1, r2) {
        (None, None) => poly[0] = 1.0,
        (Some((al, be)), None) | (None, Some((al, be))) => {
            poly[1] = al;
            poly[2] = be;
        }
        (Some((a1, b1)), Some((a2, b2))) => {
            let (eu1, ev1) = blk.e1.unwrap();
            poly[0] = blk.e12 - (a2 * eu1 + b2 * ev1);
            poly[3] = a1 * a2;
            poly[4] = a1 * b2 + b1 * a2;
            poly[5] = b1 * b2;
        }
    }
    let mono = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];
    let mut total = 0.0;
    for (cf, df, iu) in f.terms() {
        if cf == 0.0 {
            continue;
        }
        for (cg, dg, iv) in g.terms() {
            if cg == 0.0 {
                continue;
            }
            for (pc, &(pi, pj)) in poly.iter().zip(&mono) {
                if *pc == 0.0 {
                    continue;
                }
                let (i, j) = (df + pi, dg + pj);
                if i + j > 2 {
                    // factor degrees plus regression degree never exceed 2
                    unreachable!("degree overflow");
                }
                total += cf * cg * pc * orth.moment(i, j, iu, iv);
            }
        }
    }
    (total, clipped)
}

fn check_block(a: f64, b: f64, c: f64) -> Result<()> {
    let scale = a.abs().max(c.abs()).max(1e-300);
    let tol = 1e-10 * scale;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < -tol || c < -tol || b * b > a.max(0.0) * c.max(0.0) + tol * scale {
        return Err(Error::NotPsd(format!("covariance block [[{a}, {b}], [{b}, {c}]] is not PSD")));
    }
    Ok(())
}

// E[sigma(u) sigma(v)] and whether a correlation was clipped.
fn gaussian_product(a: f64, b: f64, c: f64, sigma: &Nonlinearity, rule: &QuadratureRule) -> (f64, bool) {
    let (a, c) = (a.max(0.0), c.max(0.0));
    if let Some(s) = sigma.relu_family_slope() {
        let (orth, clipped) = Orthant::new(a, b, c);
        let relu = orth.moment(1, 1, true, true);
        let bb = if a > 0.0 && c > 0.0 { orth.rho * (a * c).sqrt() } else { 0.0 };
        return (s * s * bb + s * (1.0 - s) * bb + (1.0 - s) * (1.0 - s) * relu, clipped);
    }
    if let Nonlinearity::Polynomial(coeffs) = sigma {
        let mut total = 0.0;
        for (i, ci) in coeffs.iter().enumerate() {
            for (j, cj) in coeffs.iter().enumerate() {
                total += ci * cj * gaussian_moment(i, j, a, b, c);
            }
        }
        return (total, false);
    }
    let f = |t: f64| sigma.value(t);
    (rule.expect_product(a, b, c, f, f), false)
}

/// One step of the recursion: C_b + C_W E[sigma(u) sigma(v)] with
/// (u, v) ~ N(0, [[k_prev[0][0], k_prev[0][1]], [k_prev[1][0], k_prev[1][1]]]).
pub fn recursion_step(k_prev: [[f64; 2]; 2], config: &NetworkConfig, rule: &QuadratureRule) -> Result<f64> {
    let (a, b, c) = (k_prev[0][0], 0.5 * (k_prev[0][1] + k_prev[1][0]), k_prev[1][1]);
    if (k_prev[0][1] - k_prev[1][0]).abs() > 1e-12 * a.abs().max(c.abs()).max(1.0) {
        return Err(Error::Asymmetric { asymmetry: (k_prev[0][1] - k_prev[1][0]).abs(), tolerance: 1e-12 });
    }
    check_block(a, b, c)?;
    Ok(config.c_b + config.c_w * gaussian_product(a, b, c, &config.nonlinearity, rule).0)
}

// K^(l)(x, y) for l = 1..=L+1 along one pair of raw inputs.
fn chain(config: &NetworkConfig, rule: &QuadratureRule, x: &[f64], y: &[f64]) -> Vec<f64> {
    let n0 = config.input_dim() as f64;
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).sum::<f64>();
    let mut a = config.c_b + config.c_w / n0 * dot(x, x);
    let mut b = config.c_b + config.c_w / n0 * dot(x, y);
    let mut c = config.c_b + config.c_w / n0 * dot(y, y);
    let mut out = vec![b];
    let sigma = &config.nonlinearity;
    for _ in 0..config.depth {
        let na = config.c_b + config.c_w * gaussian_product(a, a, a, sigma, rule).0;
        let nb = config.c_b + config.c_w * gaussian_product(a, b, c, sigma, rule).0;
        let nc = config.c_b + config.c_w * gaussian_product(c, c, c, sigma, rule).0;
        a = na;
        b = nb;
        c = nc;
        out.push(b);
    }
    out
}

/// Builds the full table for layers 1..=L+1 over the index set of `inputs`.
pub fn limit_kernel(config: &NetworkConfig, inputs: &InputSet, rule: &QuadratureRule) -> Result<KernelTable> {
    limit_kernel_with(config, inputs, rule, &KernelOptions { quadrature: rule.spec(), ..KernelOptions::default() })
}

pub fn limit_kernel_with(config: &NetworkConfig, inputs: &InputSet, rule: &QuadratureRule, opts: &KernelOptions) -> Result<KernelTable> {
    config.validate()?;
    inputs.validate(config)?;
    let (closure, _) = inputs.closure();
    let m = closure.len();
    let nb = inputs.index.len();
    let sigma = &config.nonlinearity;
    let pos = |i: Idx| closure.iter().position(|u| *u == i).unwrap();

    let closed_ext = sigma.relu_family_slope().is_some() && opts.derivative_method == DerivativeMethod::Auto;
    let has_derivs = closure.iter().any(|i| i.j > 0);

    let mut current = base_covariance(config, inputs, &closure);
    let mut layers = vec![current.clone()];
    let mut methods = vec![vec![vec![Method::Exact; m]; m]];
    let mut clips = 0usize;
    let value_method = match sigma {
        Nonlinearity::Relu | Nonlinearity::LeakyRelu(_) | Nonlinearity::Identity => Method::ClosedForm,
        Nonlinearity::Polynomial(_) => Method::Exact,
        _ => Method::Quadrature,
    };

    for _ in 1..=config.depth {
        let mut next = DMatrix::<f64>::zeros(m, m);
        let mut meth = vec![vec![value_method; m]; m];
        for r in 0..m {
            for c in r..m {
                let (ir, ic) = (closure[r], closure[c]);
                let (pu, pv) = (pos(Idx::value(ir.alpha)), pos(Idx::value(ic.alpha)));
                let (a, b, cc) = (current[(pu, pu)], current[(pu, pv)], current[(pv, pv)]);
                check_block(a, b, cc)?;
                let val = if ir.j == 0 && ic.j == 0 {
                    let (v, clipped) = gaussian_product(a, b, cc, sigma, rule);
                    clips += clipped as usize;
                    config.c_b + config.c_w * v
                } else if closed_ext {
                    let blk = ExtBlock {
                        a: a.max(0.0),
                        b,
                        c: cc.max(0.0),
                        e1: (ir.j > 0).then(|| (current[(r, pu)], current[(r, pv)])),
                        e2: (ic.j > 0).then(|| (current[(c, pu)], current[(c, pv)])),
                        e12: current[(r, c)],
                    };
                    let (v, clipped) = relu_family_ext(sigma.relu_family_slope().unwrap(), &blk);
                    clips += clipped as usize;
                    meth[r][c] = Method::ClosedForm;
                    meth[c][r] = Method::ClosedForm;
                    config.c_w * v
                } else {
                    // filled below from finite differences
                    meth[r][c] = Method::FiniteDifference;
                    meth[c][r] = Method::FiniteDifference;
                    0.0
                };
                next[(r, c)] = val;
                next[(c, r)] = val;
            }
        }
        layers.push(next.clone());
        methods.push(meth);
        current = next;
    }

    let mut unreliable = vec![];
    if has_derivs && !closed_ext && config.depth > 0 {
        let fd = finite_difference_entries(config, inputs, &closure, rule, opts.fd_step);
        for (r, c, vals, kink) in fd {
            for (l, v) in vals.into_iter().enumerate().skip(1) {
                layers[l][(r, c)] = v;
                layers[l][(c, r)] = v;
                if kink {
                    unreliable.push((l + 1, r, c));
                }
            }
        }
    }

    let degenerate_inputs = if config.c_b == 0.0 {
        inputs
            .inputs
            .iter()
            .enumerate()
            .filter(|(_, x)| x.iter().all(|v| *v == 0.0))
            .map(|(a, _)| a)
            .collect()
    } else {
        vec![]
    };

    // restrict to B (B occupies the first nb closure slots)
    let restrict = |mat: &DMatrix<f64>| (0..nb).map(|r| (0..nb).map(|c| mat[(r, c)]).collect()).collect();
    let unreliable = unreliable.into_iter().filter(|&(_, r, c)| r < nb && c < nb).collect();
    Ok(KernelTable {
        index: inputs.index.clone(),
        layers: layers.iter().map(restrict).collect(),
        methods: methods.iter().map(|mm| mm[..nb].iter().map(|row| row[..nb].to_vec()).collect()).collect(),
        unreliable,
        degenerate_inputs,
        correlation_clips: clips,
        quadrature: rule.spec(),
    })
}

type FdEntry = (usize, usize, Vec<f64>, bool);

fn finite_difference_entries(config: &NetworkConfig, inputs: &InputSet, closure: &[Idx], rule: &QuadratureRule, step: f64) -> Vec<FdEntry> {
    let norm = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    let shifted = |x: &[f64], v: &[f64], h: f64| x.iter().zip(v).map(|(a, b)| a + h * b).collect::<Vec<f64>>();
    let smooth = config.nonlinearity.smoothness() == Smoothness::Infinite;
    let mut out = vec![];
    for r in 0..closure.len() {
        for c in r..closure.len() {
            let (ir, ic) = (closure[r], closure[c]);
            if ir.j == 0 && ic.j == 0 {
                continue;
            }
            let x = &inputs.inputs[ir.alpha];
            let y = &inputs.inputs[ic.alpha];
            let scale = norm(x).max(norm(y));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let step_for = |j: usize| {
                let v = &inputs.directions[j - 1];
                (step * scale / norm(v), v.as_slice())
            };
            let vals: Vec<f64> = match (ir.j, ic.j) {
                (k, 0) => {
                    let (h, v) = step_for(k);
                    let p = chain(config, rule, &shifted(x, v, h), y);
                    let m = chain(config, rule, &shifted(x, v, -h), y);
                    p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * h)).collect()
                }
                (0, l) => {
                    let (h, v) = step_for(l);
                    let p = chain(config, rule, x, &shifted(y, v, h));
                    let m = chain(config, rule, x, &shifted(y, v, -h));
                    p.iter().zip(&m).map(|(p, m)| (p - m) / (2.0 * h)).collect()
                }
                (k, l) => {
                    let (h1, v1) = step_for(k);
                    let (h2, v2) = step_for(l);
                    let pp = chain(config, rule, &shifted(x, v1, h1), &shifted(y, v2, h2));
                    let pm = chain(config, rule, &shifted(x, v1, h1), &shifted(y, v2, -h2));
                    let mp = chain(config, rule, &shifted(x, v1, -h1), &shifted(y, v2, h2));
                    let mm = chain(config, rule, &shifted(x, v1, -h1), &shifted(y, v2, -h2));
                    (0..pp.len()).map(|i| (pp[i] - pm[i] - mp[i] + mm[i]) / (4.0 * h1 * h2)).collect()
                }
            };
            // a kink of sigma is crossed when the layer-1 correlation of the
            // pair can reach +-1 within the stencil
            let kink = !smooth && {
                let n0 = config.input_dim() as f64;
                let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).sum::<f64>();
                let a = config.c_b + config.c_w / n0 * dot(x, x);
                let b = config.c_b + config.c_w / n0 * dot(x, y);
                let cc = config.c_b + config.c_w / n0 * dot(y, y);
                a <= 0.0 || cc <= 0.0 || (b / (a * cc).sqrt()).abs() > 1.0 - 1e-6
            };
            if kink {
                log::warn!("finite-difference kernel entry ({r}, {c}) crosses a kink; flagged unreliable");
            }
            out.push((r, c, vals, kink));
        }
    }
    out
}

/// Smallest eigenvalue of K^(l) restricted to entries of order <= q, for
/// every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub order: usize,
    pub min_eigenvalues: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub pass: bool,
    /// First failing layer (1-based).
    pub failing_layer: Option<usize>,
}

impl NondegeneracyReport {
    pub fn into_result(self) -> Result<Self> {
        if let Some(l) = self.failing_layer {
            return Err(Error::Degenerate {
                layer: l,
                min_eigenvalue: self.min_eigenvalues[l - 1],
                threshold: self.thresholds[l - 1],
            });
        }
        Ok(self)
    }
}

/// `tolerance` is relative to the largest diagonal entry of each layer
/// (default 1e-8).
pub fn nondegeneracy_check(table: &KernelTable, q: usize, tolerance: Option<f64>) -> Result<NondegeneracyReport> {
    let sel: Vec<usize> = (0..table.index.len()).filter(|&i| table.index[i].order() <= q).collect();
    if q > 0 {
        // every input with an order-q entry needs all of the directions
        // that appear anywhere in the table
        let present = table.index.iter().any(|i| i.order() == q);
        if !present {
            return Err(Error::InvalidInput(format!("table has no entries of order {q}")));
        }
    }
    let rel = tolerance.unwrap_or(1e-8);
    let mut mins = vec![];
    let mut thresholds = vec![];
    let mut failing = None;
    for l in 1..=table.layers.len() {
        let full = table.layer(l);
        let sub = DMatrix::from_fn(sel.len(), sel.len(), |r, c| full[(sel[r], sel[c])]);
        let maxdiag = (0..sel.len()).map(|i| sub[(i, i)]).fold(0.0f64, f64::max);
        let min = sym_eigen(&sub).0.last().copied().unwrap_or(0.0);
        let thr = rel * maxdiag;
        if !(min > thr) && failing.is_none() {
            failing = Some(l);
        }
        mins.push(min);
        thresholds.push(thr);
    }
    Ok(NondegeneracyReport { order: q, min_eigenvalues: mins, thresholds, pass: failing.is_none(), failing_layer: failing })
}
