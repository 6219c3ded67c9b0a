//! Random networks, first-order tangents and the conditional covariance
//! Sigma^(L) of the output layer given the last hidden layer.
//!
//! Two samplers produce `Sigma^(L)`:
//!
//! * [`SamplerKind::Materialized`] draws every weight matrix and runs the
//!   forward pass ([`forward`]). Cost O(n^2) per layer.
//! * [`SamplerKind::Conditional`] draws the same law without weights.
//!   Given layer l, the rows (z_i, V z_i) of layer l+1 are i.i.d.
//!   N(0, Sigma_ext^(l)), so each layer is sampled as `Z = Xi F^T` with
//!   `F F^T = Sigma_ext^(l)`. Cost O(n |B|^2) per layer, which is what makes
//!   10^5..10^6 replicas per width affordable.

use crate::config::{base_covariance, Idx, InputSet, NetworkConfig};
use crate::linalg::{psd_factor, psd_repair, symmetrize};
use crate::nonlinearity::Nonlinearity;
use crate::rng::{rng_from, split, Rng};
use crate::Result;
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Pre-activations and tangents of one sampled network.
#[derive(Clone, Debug)]
pub struct ForwardState {
    /// `pre[l - 1]` is z^(l), an n_l x |A| matrix, for l = 1..=L+1.
    pub pre: Vec<DMatrix<f64>>,
    /// `tangents[l - 1]` is V z^(l), an n_l x |T| matrix; column t belongs
    /// to `tangent_index[t]`.
    pub tangents: Vec<DMatrix<f64>>,
    pub tangent_index: Vec<Idx>,
    pub seed: u64,
}

/// One realization of Sigma^(L) over the index set B.
#[derive(Clone, Debug, PartialEq)]
pub struct CondCovDraw {
    pub index: Vec<Idx>,
    pub sigma: DMatrix<f64>,
    /// Width n_L of the last hidden layer.
    pub width: usize,
    pub seed: u64,
}

impl CondCovDraw {
    /// Clips negative eigenvalues at zero; returns the clipped mass.
    pub fn repair_psd(&mut self) -> f64 {
        let (m, repair) = psd_repair(&self.sigma);
        if repair > 0.0 {
            log::debug!("Sigma draw (seed {}) PSD repair magnitude {repair:e}", self.seed);
        }
        self.sigma = m;
        repair
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Materialized,
    Conditional,
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // row-major draw order
    let data: Vec<f64> = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn tangent_index(inputs: &InputSet) -> Vec<Idx> {
    inputs.index.iter().copied().filter(|i| i.j > 0).collect()
}

struct Layers {
    pre: Vec<DMatrix<f64>>,
    tangents: Vec<DMatrix<f64>>,
}

// Forward pass through layers 1..=last (last <= L+1), drawing for each layer
// W row-major and then b.
fn forward_layers(config: &NetworkConfig, inputs: &InputSet, tix: &[Idx], rng: &mut Rng, last: usize) -> Layers {
    let n0 = config.input_dim();
    let na = inputs.inputs.len();
    let x = DMatrix::from_fn(n0, na, |r, c| inputs.inputs[c][r]);
    let v = DMatrix::from_fn(n0, tix.len(), |r, c| inputs.directions[tix[c].j - 1][r]);
    let sigma = &config.nonlinearity;
    let mut pre = Vec::with_capacity(last);
    let mut tangents = Vec::with_capacity(last);
    let mut act = x;
    let mut dact = v;
    for l in 1..=last {
        let fan_in = config.widths[l - 1];
        let n = config.widths[l];
        let w = normal_matrix(rng, n, fan_in, (config.c_w / fan_in as f64).sqrt());
        let b = normal_vec(rng, n, config.c_b.sqrt());
        let mut z = &w * &act;
        for c in 0..na {
            for i in 0..n {
                z[(i, c)] += b[i];
            }
        }
        let dz = &w * &dact;
        if l < last {
            act = z.map(|t| sigma.value(t));
            dact = DMatrix::from_fn(n, tix.len(), |i, t| sigma.derivative(z[(i, tix[t].alpha)]) * dz[(i, t)]);
        }
        pre.push(z);
        tangents.push(dz);
    }
    Layers { pre, tangents }
}

/// Samples a network and runs it on `inputs`, returning every layer's
/// pre-activations and first-order tangents.
pub fn forward(config: &NetworkConfig, inputs: &InputSet, seed: u64) -> Result<ForwardState> {
    config.validate()?;
    inputs.validate(config)?;
    let tix = tangent_index(inputs);
    let mut rng = rng_from(seed);
    let layers = forward_layers(config, inputs, &tix, &mut rng, config.depth + 1);
    Ok(ForwardState { pre: layers.pre, tangents: layers.tangents, tangent_index: tix, seed })
}

/// Redraws only the output layer W^(L+1), b^(L+1) from `seed`, keeping the
/// hidden layers of `state`. Returns the n_{L+1} x |A| outputs.
pub fn resample_output(state: &ForwardState, config: &NetworkConfig, inputs: &InputSet, seed: u64) -> DMatrix<f64> {
    let l = config.depth;
    let act = if l == 0 {
        DMatrix::from_fn(config.input_dim(), inputs.inputs.len(), |r, c| inputs.inputs[c][r])
    } else {
        state.pre[l - 1].map(|t| config.nonlinearity.value(t))
    };
    let mut rng = rng_from(seed);
    let fan_in = config.widths[l];
    let n = config.widths[l + 1];
    let w = normal_matrix(&mut rng, n, fan_in, (config.c_w / fan_in as f64).sqrt());
    let b = normal_vec(&mut rng, n, config.c_b.sqrt());
    let mut z = &w * &act;
    for c in 0..z.ncols() {
        for i in 0..n {
            z[(i, c)] += b[i];
        }
    }
    z
}

// Sigma = C_b [j1 = j2 = 0] + (C_W / n) Phi^T Phi
fn gram_sigma(phi: &DMatrix<f64>, idx: &[Idx], c_b: f64, c_w: f64) -> DMatrix<f64> {
    let n = phi.nrows() as f64;
    // gemm on an explicit transpose is several times faster than tr_mul;
    // blocking can break exact symmetry, so restore it
    let mut s = symmetrize(&(phi.transpose() * phi)) * (c_w / n);
    for r in 0..idx.len() {
        for c in 0..idx.len() {
            if idx[r].j == 0 && idx[c].j == 0 {
                s[(r, c)] += c_b;
            }
        }
    }
    s
}

// Activations extended by the product rule: column (0, a) holds sigma(z_a),
// column (k, a) holds sigma'(z_a) * V_k z_a. `zcol(c)` gives the raw column c
// and `base[c]` the column holding (0, alpha_c).
fn ext_activations(z: &DMatrix<f64>, idx: &[Idx], base: &[usize], sigma: &Nonlinearity) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), idx.len(), |i, c| {
        if idx[c].j == 0 {
            sigma.value(z[(i, c)])
        } else {
            sigma.derivative(z[(i, base[c])]) * z[(i, c)]
        }
    })
}

// Sigma^(l) over B from layer-l pre-activations and tangents.
fn layer_sigma(z: &DMatrix<f64>, dz: &DMatrix<f64>, tix: &[Idx], config: &NetworkConfig, inputs: &InputSet) -> DMatrix<f64> {
    let nl = &config.nonlinearity;
    let phi = DMatrix::from_fn(z.nrows(), inputs.index.len(), |i, c| {
        let idx = inputs.index[c];
        if idx.j == 0 {
            nl.value(z[(i, idx.alpha)])
        } else {
            let t = tix.iter().position(|u| *u == idx).expect("tangent present");
            nl.derivative(z[(i, idx.alpha)]) * dz[(i, t)]
        }
    });
    gram_sigma(&phi, &inputs.index, config.c_b, config.c_w)
}

/// Sigma^(L) of a forward state, over the index set B of `inputs`.
pub fn conditional_covariance(state: &ForwardState, config: &NetworkConfig, inputs: &InputSet) -> CondCovDraw {
    let l = config.depth;
    let sigma = if l == 0 {
        base_covariance(config, inputs, &inputs.index)
    } else {
        layer_sigma(&state.pre[l - 1], &state.tangents[l - 1], &state.tangent_index, config, inputs)
    };
    CondCovDraw { index: inputs.index.clone(), sigma, width: config.last_hidden(), seed: state.seed }
}

/// Samples Sigma^(L) draws for a fixed (config, inputs).
#[derive(Clone, Debug)]
pub struct CondCovSampler {
    kind: SamplerKind,
    config: NetworkConfig,
    inputs: InputSet,
    tix: Vec<Idx>,
    // conditional sampler state
    closure: Vec<Idx>,
    base: Vec<usize>,
    nb: usize,
    f0: DMatrix<f64>,
}

impl CondCovSampler {
    pub fn new(kind: SamplerKind, config: &NetworkConfig, inputs: &InputSet) -> Result<Self> {
        config.validate()?;
        inputs.validate(config)?;
        let (closure, _) = inputs.closure();
        let base = closure
            .iter()
            .map(|i| closure.iter().position(|u| *u == Idx::value(i.alpha)).unwrap())
            .collect();
        let k1 = base_covariance(config, inputs, &closure);
        let m = closure.len();
        let n0 = config.input_dim();
        let f0 = if n0 + 1 < m {
            let s = (config.c_w / n0 as f64).sqrt();
            let cb = config.c_b.sqrt();
            DMatrix::from_fn(m, n0 + 1, |r, c| {
                if c < n0 {
                    s * inputs.ext_vector(closure[r])[c]
                } else if closure[r].j == 0 {
                    cb
                } else {
                    0.0
                }
            })
        } else {
            psd_factor(&k1)
        };
        Ok(CondCovSampler {
            kind,
            config: config.clone(),
            inputs: inputs.clone(),
            tix: tangent_index(inputs),
            closure,
            base,
            nb: inputs.index.len(),
            f0,
        })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn index(&self) -> &[Idx] {
        &self.inputs.index
    }

    /// Sigma^(L) over B for one replica seed.
    pub fn draw(&self, seed: u64) -> DMatrix<f64> {
        match self.kind {
            SamplerKind::Materialized => self.draw_materialized(seed, false).pop().expect("nonempty path"),
            SamplerKind::Conditional => self.draw_conditional(seed, false).pop().expect("nonempty path"),
        }
    }

    /// Sigma^(0), ..., Sigma^(L) over B for one replica seed, where
    /// Sigma^(0) = K^(1) is deterministic. The last entry equals
    /// [`Self::draw`] bit for bit.
    pub fn draw_path(&self, seed: u64) -> Vec<DMatrix<f64>> {
        match self.kind {
            SamplerKind::Materialized => self.draw_materialized(seed, true),
            SamplerKind::Conditional => self.draw_conditional(seed, true),
        }
    }

    fn base_sigma(&self) -> DMatrix<f64> {
        base_covariance(&self.config, &self.inputs, &self.inputs.index)
    }

    fn draw_materialized(&self, seed: u64, path: bool) -> Vec<DMatrix<f64>> {
        let l = self.config.depth;
        if l == 0 {
            return vec![self.base_sigma()];
        }
        let mut rng = rng_from(seed);
        let layers = forward_layers(&self.config, &self.inputs, &self.tix, &mut rng, l);
        let mut out = if path { vec![self.base_sigma()] } else { vec![] };
        let first = if path { 1 } else { l };
        for k in first..=l {
            out.push(layer_sigma(&layers.pre[k - 1], &layers.tangents[k - 1], &self.tix, &self.config, &self.inputs));
        }
        out
    }

    fn draw_conditional(&self, seed: u64, path: bool) -> Vec<DMatrix<f64>> {
        let cfg = &self.config;
        let l = cfg.depth;
        let m = self.closure.len();
        let mut out = if path || l == 0 { vec![self.base_sigma()] } else { vec![] };
        if l == 0 {
            return out;
        }
        let mut rng = rng_from(seed);
        if m == 1 {
            let vars = self.scalar_chain(&mut rng);
            let skip = if path { 0 } else { l - 1 };
            out.extend(vars.into_iter().skip(skip).map(|v| DMatrix::from_element(1, 1, v)));
            return out;
        }
        let nl = &cfg.nonlinearity;
        let mut factor = self.f0.clone();
        for layer in 1..=l {
            let n = cfg.widths[layer];
            let xi = normal_matrix(&mut rng, n, factor.ncols(), 1.0);
            let z = &xi * factor.transpose();
            let phi = ext_activations(&z, &self.closure, &self.base, nl);
            if layer == l {
                let s = gram_sigma(&phi, &self.closure, cfg.c_b, cfg.c_w);
                out.push(s.view((0, 0), (self.nb, self.nb)).into_owned());
                return out;
            }
            let gram = (path || n + 1 >= m).then(|| gram_sigma(&phi, &self.closure, cfg.c_b, cfg.c_w));
            if path {
                let g = gram.as_ref().expect("gram kept for the path");
                out.push(g.view((0, 0), (self.nb, self.nb)).into_owned());
            }
            factor = if n + 1 < m {
                let sw = (cfg.c_w / n as f64).sqrt();
                let cb = cfg.c_b.sqrt();
                DMatrix::from_fn(m, n + 1, |r, c| {
                    if c < n {
                        sw * phi[(c, r)]
                    } else if self.closure[r].j == 0 {
                        cb
                    } else {
                        0.0
                    }
                })
            } else {
                psd_factor(&gram.expect("gram for the factor"))
            };
        }
        unreachable!()
    }

    // single index (0, alpha): Sigma^(l) are scalar variances, l = 1..=L
    fn scalar_chain(&self, rng: &mut Rng) -> Vec<f64> {
        let cfg = &self.config;
        let nl = &cfg.nonlinearity;
        let mut var = self.f0.iter().map(|v| v * v).sum::<f64>();
        let mut out = Vec::with_capacity(cfg.depth);
        for layer in 1..=cfg.depth {
            let n = cfg.widths[layer];
            let sd = var.sqrt();
            let mut acc = 0.0;
            for _ in 0..n {
                let z = sd * rng.sample::<f64, _>(StandardNormal);
                let a = nl.value(z);
                acc += a * a;
            }
            var = cfg.c_b + cfg.c_w / n as f64 * acc;
            out.push(var);
        }
        out
    }

    /// Applies `f(replica, Sigma)` to replicas `range` in parallel; replica k
    /// uses seed `split(base_seed, k)`. Output order follows the replica index.
    pub fn map<T, F>(&self, range: std::ops::Range<u64>, base_seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, DMatrix<f64>) -> T + Sync + Send,
    {
        range.into_par_iter().map(|k| f(k, self.draw(split(base_seed, k)))).collect()
    }

    /// Like [`Self::map`] with the whole path Sigma^(0..=L).
    pub fn map_paths<T, F>(&self, range: std::ops::Range<u64>, base_seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, Vec<DMatrix<f64>>) -> T + Sync + Send,
    {
        range.into_par_iter().map(|k| f(k, self.draw_path(split(base_seed, k)))).collect()
    }
}

/// `replicas` draws of Sigma^(L) with the materialized sampler.
pub fn draw_cond_covs(config: &NetworkConfig, inputs: &InputSet, replicas: usize, base_seed: u64) -> Result<Vec<CondCovDraw>> {
    draw_cond_covs_with(SamplerKind::Materialized, config, inputs, replicas, base_seed)
}

pub fn draw_cond_covs_with(
    kind: SamplerKind,
    config: &NetworkConfig,
    inputs: &InputSet,
    replicas: usize,
    base_seed: u64,
) -> Result<Vec<CondCovDraw>> {
    if replicas == 0 {
        return Err(crate::Error::InvalidConfig("replicas must be >= 1".into()));
    }
    let sampler = CondCovSampler::new(kind, config, inputs)?;
    let width = config.last_hidden();
    Ok(sampler.map(0..replicas as u64, base_seed, |k, sigma| CondCovDraw {
        index: inputs.index.clone(),
        sigma,
        width,
        seed: split(base_seed, k),
    }))
}
