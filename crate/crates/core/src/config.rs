//! Network architecture and input/derivative index sets.

use crate::nonlinearity::Nonlinearity;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture and initialization of a random fully connected network.
///
/// `widths` holds n_0 (input dimension), n_1..n_L (hidden) and n_{L+1}
/// (output), so `widths.len() == depth + 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub c_b: f64,
    pub c_w: f64,
    pub nonlinearity: Nonlinearity,
}

impl NetworkConfig {
    /// All hidden layers share width `hidden`.
    pub fn uniform(depth: usize, n0: usize, hidden: usize, n_out: usize, c_b: f64, c_w: f64, nonlinearity: Nonlinearity) -> Self {
        let mut widths = vec![n0];
        widths.extend(std::iter::repeat(hidden).take(depth));
        widths.push(n_out);
        NetworkConfig { depth, widths, c_b, c_w, nonlinearity }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.depth + 2 {
            return Err(Error::InvalidConfig(format!(
                "depth {} needs {} widths, got {}",
                self.depth,
                self.depth + 2,
                self.widths.len()
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("all widths must be >= 1".into()));
        }
        if !(self.c_w > 0.0) || !self.c_w.is_finite() {
            return Err(Error::InvalidConfig(format!("C_W must be > 0, got {}", self.c_w)));
        }
        if !(self.c_b >= 0.0) || !self.c_b.is_finite() {
            return Err(Error::InvalidConfig(format!("C_b must be >= 0, got {}", self.c_b)));
        }
        self.nonlinearity.validate()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.depth + 1]
    }

    /// Width of the last hidden layer (n_L); for depth 0 this is n_0.
    pub fn last_hidden(&self) -> usize {
        self.widths[self.depth]
    }

    /// Same network with every hidden layer set to `n`.
    pub fn with_hidden_width(&self, n: usize) -> Self {
        let mut c = self.clone();
        for w in c.widths.iter_mut().take(self.depth + 1).skip(1) {
            *w = n;
        }
        c
    }
}

/// One entry (J, alpha) of the derivative index set: `j = 0` is the
/// function itself, `j = k >= 1` the directional derivative along the
/// k-th direction (1-based), evaluated at input `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Idx {
    pub j: usize,
    pub alpha: usize,
}

impl Idx {
    pub fn value(alpha: usize) -> Self {
        Idx { j: 0, alpha }
    }
    pub fn deriv(k: usize, alpha: usize) -> Self {
        Idx { j: k, alpha }
    }
    pub fn order(&self) -> usize {
        usize::from(self.j > 0)
    }
}

/// Inputs x_alpha, directions v_k and the index set B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSet {
    pub inputs: Vec<Vec<f64>>,
    #[serde(default)]
    pub directions: Vec<Vec<f64>>,
    #[serde(default)]
    pub index: Vec<Idx>,
}

impl InputSet {
    /// Values only: B = {(0, alpha)}.
    pub fn values(inputs: Vec<Vec<f64>>) -> Self {
        let index = (0..inputs.len()).map(Idx::value).collect();
        InputSet { inputs, directions: vec![], index }
    }

    pub fn single(x: Vec<f64>) -> Self {
        InputSet::values(vec![x])
    }

    /// Every input with its value and every directional derivative, grouped
    /// by input.
    pub fn with_derivatives(inputs: Vec<Vec<f64>>, directions: Vec<Vec<f64>>) -> Self {
        let mut index = vec![];
        for a in 0..inputs.len() {
            index.push(Idx::value(a));
            for k in 1..=directions.len() {
                index.push(Idx::deriv(k, a));
            }
        }
        InputSet { inputs, directions, index }
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    /// Highest derivative order present in B.
    pub fn order(&self) -> usize {
        self.index.iter().map(Idx::order).max().unwrap_or(0)
    }

    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let n0 = config.input_dim();
        if self.inputs.is_empty() {
            return Err(Error::InvalidInput("input set is empty".into()));
        }
        for (a, x) in self.inputs.iter().enumerate() {
            if x.len() != n0 {
                return Err(Error::DimensionMismatch(format!("input {a} has dimension {}, network expects {n0}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("input {a} is not finite")));
            }
            for (b, y) in self.inputs.iter().enumerate().take(a) {
                if x == y {
                    return Err(Error::InvalidInput(format!("inputs {b} and {a} coincide")));
                }
            }
        }
        for (k, v) in self.directions.iter().enumerate() {
            if v.len() != n0 {
                return Err(Error::DimensionMismatch(format!("direction {} has dimension {}", k + 1, v.len())));
            }
            if v.iter().all(|&c| c == 0.0) {
                return Err(Error::InvalidInput(format!("direction {} is zero", k + 1)));
            }
        }
        if self.index.is_empty() {
            return Err(Error::InvalidInput("index set B is empty".into()));
        }
        for (i, idx) in self.index.iter().enumerate() {
            if idx.alpha >= self.inputs.len() || idx.j > self.directions.len() {
                return Err(Error::InvalidInput(format!("index entry {i} ({}, {}) out of range", idx.j, idx.alpha)));
            }
            if self.index[..i].contains(idx) {
                return Err(Error::InvalidInput(format!("index entry {i} repeated")));
            }
        }
        let q = self.order() as u32;
        if !config.nonlinearity.smoothness().at_least(q) {
            return Err(Error::InvalidConfig(format!(
                "derivative order {q} exceeds smoothness of {}",
                config.nonlinearity.name()
            )));
        }
        Ok(())
    }

    /// V^J x_alpha: the input itself for j = 0, the direction for j >= 1
    /// (the derivative of the affine first layer along v is W v).
    pub fn ext_vector(&self, idx: Idx) -> &[f64] {
        if idx.j == 0 {
            &self.inputs[idx.alpha]
        } else {
            &self.directions[idx.j - 1]
        }
    }

    /// B together with (0, alpha) for every alpha it mentions; the value
    /// entries are needed to propagate derivative entries. Returns the
    /// closure and the position of each B entry inside it.
    pub fn closure(&self) -> (Vec<Idx>, Vec<usize>) {
        let mut all = self.index.clone();
        for idx in &self.index {
            let base = Idx::value(idx.alpha);
            if !all.contains(&base) {
                all.push(base);
            }
        }
        let pos = (0..self.index.len()).collect();
        (all, pos)
    }
}

/// Layer-1 covariance over an extended index list:
/// C_b [j1 = j2 = 0] + (C_W / n_0) <V^{j1} x_{a1}, V^{j2} x_{a2}>.
pub fn base_covariance(config: &NetworkConfig, inputs: &InputSet, idx: &[Idx]) -> nalgebra::DMatrix<f64> {
    let n0 = config.input_dim() as f64;
    nalgebra::DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
        let (a, b) = (idx[r], idx[c]);
        let dot: f64 = inputs.ext_vector(a).iter().zip(inputs.ext_vector(b)).map(|(x, y)| x * y).sum();
        let bias = if a.j == 0 && b.j == 0 { config.c_b } else { 0.0 };
        bias + config.c_w / n0 * dot
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let cfg = NetworkConfig::uniform(2, 2, 8, 1, 0.0, 2.0, Nonlinearity::Relu);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.widths, vec![2, 8, 8, 1]);
        let bad = NetworkConfig { c_w: 0.0, ..cfg.clone() };
        assert!(bad.validate().is_err());
        let dup = InputSet::values(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(dup.validate(&cfg).is_err());
        let zero_dir = InputSet::with_derivatives(vec![vec![1.0, 0.0]], vec![vec![0.0, 0.0]]);
        assert!(zero_dir.validate(&cfg).is_err());
        let ok = InputSet::with_derivatives(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]);
        assert!(ok.validate(&cfg).is_ok());
        assert_eq!(cfg.with_hidden_width(32).widths, vec![2, 32, 32, 1]);
    }
}
