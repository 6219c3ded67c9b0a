//! Covariance operators discretized on a quadrature grid over a ball.
//!
//! Operators are stored in the weighted form `D^{1/2} K D^{1/2}` (D the
//! diagonal of quadrature weights, one per index entry), so matrix traces
//! and Frobenius norms are quadrature approximations of operator traces and
//! Hilbert-Schmidt norms. The output layer contributes n_{L+1} identical
//! independent blocks; only one block is stored, with its multiplicity.

use crate::config::{Idx, InputSet};
use crate::linalg::{check_symmetric, frobenius, psd_repair, psd_sqrt, sym_eigen};
use crate::quadrature::gauss_legendre;
use crate::rng::{rng_from, split};
use crate::stats::{jackknife_se, mean_var};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;

/// Tensor Gauss-Legendre nodes on a ball, with the index set
/// M_q x nodes (q <= 1, derivative directions along the coordinate axes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub center: Vec<f64>,
    pub radius: f64,
    pub nodes_per_axis: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub order: usize,
    pub multiplicity: usize,
}

fn ball_volume(dim: usize, radius: f64) -> f64 {
    let d = dim as f64;
    std::f64::consts::PI.powf(d / 2.0) / libm::tgamma(d / 2.0 + 1.0) * radius.powf(d)
}

impl Grid {
    /// Product rule on the bounding cube, nodes outside the open ball
    /// dropped, weights rescaled to the exact ball volume.
    pub fn ball(center: Vec<f64>, radius: f64, nodes_per_axis: usize, order: usize, multiplicity: usize) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || !(radius > 0.0) || nodes_per_axis == 0 || multiplicity == 0 {
            return Err(Error::InvalidConfig("grid needs dimension >= 1, radius > 0, nodes >= 1, multiplicity >= 1".into()));
        }
        if order > 1 {
            return Err(Error::InvalidConfig(format!("derivative order {order} > 1 is not supported on grids")));
        }
        let (g, w) = gauss_legendre(nodes_per_axis);
        let total = nodes_per_axis.pow(dim as u32);
        let mut nodes = vec![];
        let mut weights = vec![];
        for flat in 0..total {
            let mut rem = flat;
            let mut x = Vec::with_capacity(dim);
            let mut wt = 1.0;
            for c in &center {
                let k = rem % nodes_per_axis;
                rem /= nodes_per_axis;
                x.push(c + radius * g[k]);
                wt *= radius * w[k];
            }
            let r2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < radius * radius {
                nodes.push(x);
                weights.push(wt);
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidConfig("no grid node falls inside the ball".into()));
        }
        let vol = ball_volume(dim, radius);
        let s: f64 = weights.iter().sum();
        for w in &mut weights {
            *w *= vol / s;
        }
        Ok(Grid { center, radius, nodes_per_axis, nodes, weights, order, multiplicity })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.dim(), self.radius)
    }

    /// Whether the closed ball contains the origin.
    pub fn contains_origin(&self) -> bool {
        self.center.iter().map(|c| c * c).sum::<f64>().sqrt() <= self.radius
    }

    /// Inputs, axis directions and index set, ordered (J, alpha) with J
    /// outer: all values first, then each derivative.
    pub fn input_set(&self) -> InputSet {
        let dim = self.dim();
        let directions: Vec<Vec<f64>> =
            if self.order == 0 { vec![] } else { (0..dim).map(|k| (0..dim).map(|i| f64::from(u8::from(i == k))).collect()).collect() };
        let mut index = vec![];
        for j in 0..=directions.len() {
            for a in 0..self.nodes.len() {
                index.push(Idx { j, alpha: a });
            }
        }
        InputSet { inputs: self.nodes.clone(), directions, index }
    }

    /// Quadrature weight of every index entry.
    pub fn entry_weights(&self) -> Vec<f64> {
        let reps = if self.order == 0 { 1 } else { 1 + self.dim() };
        (0..reps).flat_map(|_| self.weights.iter().copied()).collect()
    }

    /// SHA-256 of the node coordinates, weights, order and multiplicity.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            for v in x {
                h.update(v.to_le_bytes());
            }
            h.update(w.to_le_bytes());
        }
        h.update((self.order as u64).to_le_bytes());
        h.update((self.multiplicity as u64).to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Weighted form of a covariance operator on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteOperator {
    /// One output block, D^{1/2} K D^{1/2}, row-major when serialized.
    #[serde(with = "matrix_rows")]
    pub matrix: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub multiplicity: usize,
    pub grid_hash: String,
    /// Negative eigenvalue mass clipped when the operator was built.
    pub repair: f64,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
    }
}

fn weighted(k: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |r, c| sw[r] * k[(r, c)] * sw[c])
}

/// Builds the weighted operator from raw kernel entries over the grid's
/// index set.
pub fn discretize(kernel: &DMatrix<f64>, grid: &Grid) -> Result<DiscreteOperator> {
    let weights = grid.entry_weights();
    if kernel.nrows() != weights.len() || kernel.ncols() != weights.len() {
        return Err(Error::DimensionMismatch(format!("kernel is {}x{}, grid index has {} entries", kernel.nrows(), kernel.ncols(), weights.len())));
    }
    check_symmetric(kernel, 1e-10)?;
    let m = weighted(kernel, &weights);
    let (vals, _) = sym_eigen(&m);
    let tr = m.trace().abs();
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -1e-8 * tr.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(format!("smallest eigenvalue {min:e} below -1e-8 x trace {tr:e}")));
    }
    let (matrix, repair) = psd_repair(&m);
    if repair > 0.0 {
        log::debug!("operator PSD repair magnitude {repair:e}");
    }
    Ok(DiscreteOperator { matrix, weights, multiplicity: grid.multiplicity, grid_hash: grid.hash(), repair })
}

/// Eigenvalues (descending, multiplicity expanded) and eigenvectors of one
/// block, orthonormal in the weighted inner product.
#[derive(Clone, Debug)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    pub block_eigenvalues: Vec<f64>,
    /// Columns u_k = D^{-1/2} v_k, so sum_i w_i u_k(i) u_l(i) = delta_kl.
    pub eigenvectors: DMatrix<f64>,
    /// ||M - V diag(lambda) V^T||_HS / ||M||_HS for one block.
    pub reconstruction_error: f64,
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.multiplicity as f64 * self.matrix.trace()
    }

    pub fn hs_norm(&self) -> f64 {
        (self.multiplicity as f64).sqrt() * frobenius(&self.matrix)
    }

    pub fn spectral(&self) -> SpectralDecomp {
        let (vals, vecs) = sym_eigen(&self.matrix);
        let n = self.dim();
        let recon = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals.clone())) * vecs.transpose();
        let err = frobenius(&(&recon - &self.matrix)) / frobenius(&self.matrix).max(f64::MIN_POSITIVE);
        let u = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] / self.weights[r].sqrt());
        let eigenvalues = vals.iter().flat_map(|v| std::iter::repeat(*v).take(self.multiplicity)).collect();
        SpectralDecomp { eigenvalues, block_eigenvalues: vals, eigenvectors: u, reconstruction_error: err }
    }

    /// Raw kernel entries K(x_i, x_j) recovered from the weighted form.
    pub fn kernel(&self) -> DMatrix<f64> {
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(self.dim(), self.dim(), |r, c| self.matrix[(r, c)] / (sw[r] * sw[c]))
    }

    fn check_compatible(&self, other: &DiscreteOperator) -> Result<()> {
        if self.dim() != other.dim() || self.multiplicity != other.multiplicity {
            return Err(Error::DimensionMismatch(format!(
                "operators {}x{} (x{}) and {}x{} (x{})",
                self.dim(),
                self.dim(),
                self.multiplicity,
                other.dim(),
                other.dim(),
                other.multiplicity
            )));
        }
        if self.grid_hash != other.grid_hash {
            return Err(Error::DimensionMismatch("operators live on different grids".into()));
        }
        Ok(())
    }

    /// Operator given directly by one weighted block (tests, synthetic use).
    pub fn from_weighted(matrix: DMatrix<f64>, multiplicity: usize) -> Result<Self> {
        check_symmetric(&matrix, 1e-10)?;
        let n = matrix.nrows();
        let (matrix, repair) = psd_repair(&matrix);
        Ok(DiscreteOperator { matrix, weights: vec![1.0; n], multiplicity, grid_hash: String::new(), repair })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowersStormer {
    pub lhs: f64,
    pub rhs: f64,
}

/// ||sqrt S1 - sqrt S2||_HS against
/// |Tr S1 - Tr S2|^{1/2} + sqrt 2 ||S1 - S2||_HS^{1/4} min(Tr sqrt S1, Tr sqrt S2)^{1/2}.
pub fn powers_stormer(s1: &DiscreteOperator, s2: &DiscreteOperator) -> Result<PowersStormer> {
    s1.check_compatible(s2)?;
    let m = s1.multiplicity as f64;
    let r1 = psd_sqrt(&s1.matrix).root;
    let r2 = psd_sqrt(&s2.matrix).root;
    let lhs = m.sqrt() * frobenius(&(&r1 - &r2));
    let trace_gap = (s1.trace() - s2.trace()).abs();
    let hs = m.sqrt() * frobenius(&(&s1.matrix - &s2.matrix));
    let min_tr_sqrt = (m * r1.trace()).min(m * r2.trace()).max(0.0);
    let rhs = trace_gap.sqrt() + 2f64.sqrt() * hs.powf(0.25) * min_tr_sqrt.sqrt();
    if lhs > rhs + 1e-8 {
        return Err(Error::InvariantViolation(format!("Powers-Stormer violated: {lhs} > {rhs}")));
    }
    Ok(PowersStormer { lhs, rhs })
}

/// Coupling bound ||sqrt S1 - sqrt S2||_HS on W2 of the two Gaussian
/// elements.
pub fn gelbrich_w2(s1: &DiscreteOperator, s2: &DiscreteOperator) -> Result<f64> {
    s1.check_compatible(s2)?;
    let r1 = psd_sqrt(&s1.matrix).root;
    let r2 = psd_sqrt(&s2.matrix).root;
    Ok((s1.multiplicity as f64).sqrt() * frobenius(&(&r1 - &r2)))
}

/// (1/2) ||S1 - S2||_HS.
pub fn d2_bound(s1: &DiscreteOperator, s2: &DiscreteOperator) -> Result<f64> {
    s1.check_compatible(s2)?;
    Ok(0.5 * (s1.multiplicity as f64).sqrt() * frobenius(&(&s1.matrix - &s2.matrix)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBound {
    pub draws: usize,
    /// Mean of ||Sigma - K||_HS^2.
    pub b_hat: f64,
    /// Mean of sum_i w_i (Sigma_ii - K_ii)^2.
    pub c_hat: f64,
    pub d2_rhs: f64,
    pub d2_se: f64,
    pub w2_rhs: f64,
    pub w2_se: f64,
}

/// Streams Sigma draws (raw entries over the grid index) against the limit
/// kernel; keeps two scalars per draw.
#[derive(Clone, Debug)]
pub struct FunctionalAccumulator {
    k: DMatrix<f64>,
    weights: Vec<f64>,
    multiplicity: f64,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl FunctionalAccumulator {
    pub fn new(k: &DiscreteOperator) -> Self {
        FunctionalAccumulator { k: k.kernel(), weights: k.weights.clone(), multiplicity: k.multiplicity as f64, b: vec![], c: vec![] }
    }

    /// Per-draw (||Sigma - K||^2_HS, sum_i w_i (Sigma_ii - K_ii)^2).
    pub fn terms(&self, sigma: &DMatrix<f64>) -> Result<(f64, f64)> {
        let n = self.weights.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!("draw is {}x{}, grid index has {n} entries", sigma.nrows(), sigma.ncols())));
        }
        let mut b = 0.0;
        let mut c = 0.0;
        for j in 0..n {
            for i in 0..n {
                let d = sigma[(i, j)] - self.k[(i, j)];
                b += self.weights[i] * self.weights[j] * d * d;
            }
            let d = sigma[(j, j)] - self.k[(j, j)];
            c += self.weights[j] * d * d;
        }
        Ok((self.multiplicity * b, self.multiplicity * c))
    }

    pub fn push(&mut self, sigma: &DMatrix<f64>) -> Result<()> {
        let (b, c) = self.terms(sigma)?;
        self.push_terms(b, c);
        Ok(())
    }

    pub fn push_terms(&mut self, b: f64, c: f64) {
        self.b.push(b);
        self.c.push(c);
    }

    pub fn finish(&self) -> Result<FunctionalBound> {
        let s = self.b.len();
        if s == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let sb: f64 = self.b.iter().sum();
        let sc: f64 = self.c.iter().sum();
        let d2 = |b: f64| 0.5 * b.max(0.0).sqrt();
        let w2 = |b: f64, c: f64| c.max(0.0).powf(0.25) + 2f64.sqrt() * b.max(0.0).powf(0.125);
        let nf = s as f64;
        let (b_hat, c_hat) = (sb / nf, sc / nf);
        let (d2_se, w2_se) = if s > 1 {
            let loo_d2: Vec<f64> = self.b.iter().map(|b| d2((sb - b) / (nf - 1.0))).collect();
            let loo_w2: Vec<f64> = self.b.iter().zip(&self.c).map(|(b, c)| w2((sb - b) / (nf - 1.0), (sc - c) / (nf - 1.0))).collect();
            (jackknife_se(&loo_d2), jackknife_se(&loo_w2))
        } else {
            (0.0, 0.0)
        };
        Ok(FunctionalBound { draws: s, b_hat, c_hat, d2_rhs: d2(b_hat), d2_se, w2_rhs: w2(b_hat, c_hat), w2_se })
    }
}

/// d2 and W2 bound values from Sigma draws given as weighted operators on
/// the grid of `k`.
pub fn functional_w2_bound(draws: &[DiscreteOperator], k: &DiscreteOperator) -> Result<FunctionalBound> {
    let mut acc = FunctionalAccumulator::new(k);
    for d in draws {
        d.check_compatible(k)?;
        acc.push(&d.kernel())?;
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub exponent: f64,
    /// (truncation, sum_{k <= truncation} lambda_k^p) at G/4, G/2 and G.
    pub partial_sums: Vec<(usize, f64)>,
    /// Fitted gamma in lambda_k ~ k^{-gamma}.
    pub decay: Option<f64>,
    /// gamma * p <= 1.1: the partial sums look divergent.
    pub non_summable: bool,
}

pub fn eigen_summability(k: &DiscreteOperator, p: f64) -> SummabilityReport {
    let vals: Vec<f64> = k.spectral().eigenvalues.into_iter().map(|v| v.max(0.0)).collect();
    let g = vals.len();
    let mut cum = 0.0;
    let mut partial = vec![];
    let cuts = [(g / 4).max(1), (g / 2).max(1), g];
    for (i, v) in vals.iter().enumerate() {
        cum += v.powf(p);
        if cuts.contains(&(i + 1)) && partial.last().map(|(t, _)| *t) != Some(i + 1) {
            partial.push((i + 1, cum));
        }
    }
    // tail fit on distinct eigenvalues above the rounding floor, skipping
    // the top one and the poorly resolved upper half of the spectrum
    let block = &k.spectral().block_eigenvalues;
    let top = block.first().copied().unwrap_or(0.0);
    let usable: Vec<(f64, f64)> = block
        .iter()
        .enumerate()
        .take(block.len() / 2)
        .skip(1)
        .filter(|(_, v)| **v > 1e-10 * top)
        .map(|(i, v)| (((i + 1) as f64).ln(), v.ln()))
        .collect();
    let decay = if usable.len() >= 3 {
        let n = usable.len() as f64;
        let mx = usable.iter().map(|u| u.0).sum::<f64>() / n;
        let my = usable.iter().map(|u| u.1).sum::<f64>() / n;
        let sxy: f64 = usable.iter().map(|u| (u.0 - mx) * (u.1 - my)).sum();
        let sxx: f64 = usable.iter().map(|u| (u.0 - mx).powi(2)).sum();
        Some(-sxy / sxx)
    } else {
        None
    };
    let non_summable = match decay {
        Some(gamma) => gamma * p <= 1.1,
        None => false,
    };
    SummabilityReport { exponent: p, partial_sums: partial, decay, non_summable }
}

/// Writes `index,eigenvalue` rows.
pub fn write_spectrum_csv<W: Write>(out: W, eigenvalues: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub replicas: usize,
    /// Monte Carlo mean of ||E - F||^2 in the weighted norm.
    pub empirical: f64,
    pub std_error: f64,
    /// ||sqrt K - sqrt S||_HS^2.
    pub predicted: f64,
    pub z_score: f64,
    /// Monte Carlo mean of max_i |E(x_i) - F(x_i)|^2 over grid nodes.
    pub sup_norm_sq: f64,
}

/// E = sqrt(S) xi and F = sqrt(K) xi with shared standard normal xi;
/// replica k uses seed split(seed, k).
pub fn couple_fields(k: &DiscreteOperator, s: &DiscreteOperator, replicas: usize, seed: u64) -> Result<CouplingReport> {
    k.check_compatible(s)?;
    if replicas < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: replicas });
    }
    let delta = psd_sqrt(&s.matrix).root - psd_sqrt(&k.matrix).root;
    let predicted = k.multiplicity as f64 * frobenius(&delta).powi(2);
    let n = k.dim();
    let inv_sw: Vec<f64> = k.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let mult = k.multiplicity;
    let per: Vec<(f64, f64)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(split(seed, r));
            let mut norm = 0.0;
            let mut sup: f64 = 0.0;
            for _ in 0..mult {
                let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let diff = &delta * xi;
                norm += diff.norm_squared();
                for (i, v) in diff.iter().enumerate() {
                    sup = sup.max((v * inv_sw[i]).powi(2));
                }
            }
            (norm, sup)
        })
        .collect();
    let norms: Vec<f64> = per.iter().map(|p| p.0).collect();
    let (mean, var) = mean_var(&norms);
    let se = (var / replicas as f64).sqrt();
    let z_score = if se > 0.0 { (mean - predicted) / se } else if (mean - predicted).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
    let sup_norm_sq = per.iter().map(|p| p.1).sum::<f64>() / replicas as f64;
    Ok(CouplingReport { replicas, empirical: mean, std_error: se, predicted, z_score, sup_norm_sq })
}
