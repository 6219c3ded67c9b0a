//! Pointwise nonlinearities with their first derivatives.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

/// Smoothness order: the nonlinearity is polynomially bounded to order r.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Finite(u32),
    Infinite,
}

impl Smoothness {
    pub fn at_least(self, q: u32) -> bool {
        match self {
            Smoothness::Finite(r) => r >= q,
            Smoothness::Infinite => true,
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied activation. Not serializable beyond its name.
#[derive(Clone)]
pub struct CustomActivation {
    pub name: String,
    pub value: ScalarFn,
    pub derivative: ScalarFn,
    pub smoothness: Smoothness,
}

impl fmt::Debug for CustomActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomActivation")
            .field("name", &self.name)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Nonlinearity {
    Relu,
    /// max(x, slope * x) for slope in [0, 1).
    LeakyRelu(f64),
    Tanh,
    /// x * Phi(x)
    Gelu,
    Identity,
    /// sum_i coeffs[i] x^i
    Polynomial(Vec<f64>),
    Custom(CustomActivation),
}

impl PartialEq for Nonlinearity {
    fn eq(&self, other: &Self) -> bool {
        use Nonlinearity::*;
        match (self, other) {
            (Relu, Relu) | (Tanh, Tanh) | (Gelu, Gelu) | (Identity, Identity) => true,
            (LeakyRelu(a), LeakyRelu(b)) => a == b,
            (Polynomial(a), Polynomial(b)) => a == b,
            (Custom(a), Custom(b)) => a.name == b.name && Arc::ptr_eq(&a.value, &b.value),
            _ => false,
        }
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

impl Nonlinearity {
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        smoothness: Smoothness,
    ) -> Self {
        Nonlinearity::Custom(CustomActivation {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            smoothness,
        })
    }

    pub fn name(&self) -> String {
        match self {
            Nonlinearity::Relu => "relu".into(),
            Nonlinearity::LeakyRelu(s) => format!("leaky_relu({s})"),
            Nonlinearity::Tanh => "tanh".into(),
            Nonlinearity::Gelu => "gelu".into(),
            Nonlinearity::Identity => "identity".into(),
            Nonlinearity::Polynomial(c) => format!("polynomial({c:?})"),
            Nonlinearity::Custom(c) => format!("custom({})", c.name),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Gelu => x * normal_cdf(x),
            Nonlinearity::Identity => x,
            Nonlinearity::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci),
            Nonlinearity::Custom(c) => (c.value)(x),
        }
    }

    /// First derivative. At the ReLU kink (x = 0) the value is 0 (the
    /// left derivative); LeakyReLU likewise returns its left slope there.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    *s
                }
            }
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Gelu => normal_cdf(x) + x * normal_pdf(x),
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Polynomial(c) => {
                let mut acc = 0.0;
                for (i, &ci) in c.iter().enumerate().skip(1).rev() {
                    acc = acc * x + i as f64 * ci;
                }
                acc
            }
            Nonlinearity::Custom(c) => (c.derivative)(x),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            Nonlinearity::Relu | Nonlinearity::LeakyRelu(_) => Smoothness::Finite(1),
            Nonlinearity::Custom(c) => c.smoothness,
            _ => Smoothness::Infinite,
        }
    }

    /// Points where the derivative is undefined.
    pub fn kinks(&self) -> &'static [f64] {
        match self {
            Nonlinearity::Relu | Nonlinearity::LeakyRelu(_) => &[0.0],
            _ => &[],
        }
    }

    /// Piecewise linear and positively homogeneous: ReLU, LeakyReLU, identity.
    pub fn relu_family_slope(&self) -> Option<f64> {
        match self {
            Nonlinearity::Relu => Some(0.0),
            Nonlinearity::LeakyRelu(s) => Some(*s),
            Nonlinearity::Identity => Some(1.0),
            _ => None,
        }
    }

    /// Compares the derivative with central differences of the value on a
    /// probe grid over [-4, 4], skipping points near declared kinks.
    /// Returns the largest absolute discrepancy.
    pub fn derivative_discrepancy(&self) -> f64 {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            let x = -4.0 + 8.0 * i as f64 / 400.0 + 1e-3;
            if self.kinks().iter().any(|k| (x - k).abs() < 10.0 * h) {
                continue;
            }
            let fd = (self.value(x + h) - self.value(x - h)) / (2.0 * h);
            let scale = 1.0 + self.derivative(x).abs();
            worst = worst.max((fd - self.derivative(x)).abs() / scale);
        }
        worst
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let Nonlinearity::LeakyRelu(s) = self {
            if !(0.0..1.0).contains(s) {
                return Err(crate::Error::InvalidConfig(format!("leaky relu slope {s} outside [0, 1)")));
            }
        }
        if let Nonlinearity::Polynomial(c) = self {
            if c.is_empty() || c.iter().any(|v| !v.is_finite()) {
                return Err(crate::Error::InvalidConfig("polynomial needs finite coefficients".into()));
            }
        }
        if let Smoothness::Finite(0) = self.smoothness() {
            return Err(crate::Error::InvalidConfig("smoothness order must be >= 1".into()));
        }
        let d = self.derivative_discrepancy();
        if !(d < 1e-4) {
            return Err(crate::Error::InvalidConfig(format!(
                "derivative of {} disagrees with finite differences (discrepancy {d:e})",
                self.name()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NonlinearityRepr {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Gelu,
    Identity,
    Polynomial { coeffs: Vec<f64> },
    Custom { name: String },
}

impl Serialize for Nonlinearity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            Nonlinearity::Relu => NonlinearityRepr::Relu,
            Nonlinearity::LeakyRelu(slope) => NonlinearityRepr::LeakyRelu { slope: *slope },
            Nonlinearity::Tanh => NonlinearityRepr::Tanh,
            Nonlinearity::Gelu => NonlinearityRepr::Gelu,
            Nonlinearity::Identity => NonlinearityRepr::Identity,
            Nonlinearity::Polynomial(c) => NonlinearityRepr::Polynomial { coeffs: c.clone() },
            Nonlinearity::Custom(c) => NonlinearityRepr::Custom { name: c.name.clone() },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Nonlinearity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(match NonlinearityRepr::deserialize(d)? {
            NonlinearityRepr::Relu => Nonlinearity::Relu,
            NonlinearityRepr::LeakyRelu { slope } => Nonlinearity::LeakyRelu(slope),
            NonlinearityRepr::Tanh => Nonlinearity::Tanh,
            NonlinearityRepr::Gelu => Nonlinearity::Gelu,
            NonlinearityRepr::Identity => Nonlinearity::Identity,
            NonlinearityRepr::Polynomial { coeffs } => Nonlinearity::Polynomial(coeffs),
            NonlinearityRepr::Custom { name } => {
                return Err(serde::de::Error::custom(format!(
                    "custom nonlinearity '{name}' cannot be restored from a file"
                )))
            }
        })
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = crate::Error;

    /// Parses `relu`, `tanh`, `gelu`, `identity`, `leaky_relu:0.1`,
    /// `poly:c0,c1,...`.
    fn from_str(s: &str) -> crate::Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (s.clone(), None),
        };
        let bad = |m: &str| crate::Error::InvalidConfig(format!("nonlinearity '{s}': {m}"));
        Ok(match head.as_str() {
            "relu" => Nonlinearity::Relu,
            "tanh" => Nonlinearity::Tanh,
            "gelu" => Nonlinearity::Gelu,
            "identity" | "linear" => Nonlinearity::Identity,
            "leaky_relu" | "leakyrelu" => {
                let slope = arg.as_deref().unwrap_or("0.01").parse::<f64>().map_err(|_| bad("bad slope"))?;
                Nonlinearity::LeakyRelu(slope)
            }
            "poly" | "polynomial" => {
                let coeffs = arg
                    .ok_or_else(|| bad("missing coefficients"))?
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad coefficient"))?;
                Nonlinearity::Polynomial(coeffs)
            }
            _ => return Err(bad("unknown")),
        })
    }
}
