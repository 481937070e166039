//! Scalar activation functions and their derivatives.
//!
//! All evaluations are total on ℝ. At nondifferentiable points the
//! derivative uses the subgradient conventions standard in learning code:
//! `relu'(0) = 0`, the unit step has derivative 0 everywhere, and the
//! truncated power with exponent 0 likewise. Gradient checks mask those
//! neighborhoods instead of arguing with them.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

const INV_SQRT_2PI: f64 = 0.3989422804014327;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    /// x ↦ x₊ᵏ (xᵏ for x > 0, else 0).
    TruncatedPower(u32),
    /// x ↦ x₊⁰ (1 for x > 0, else 0).
    UnitStep,
    /// Gaussian density (2π)^(-1/2) exp(-x²/2).
    GaussianRbf,
    /// x ↦ x. Polynomial, so it carries no universal approximation
    /// property; provided for tests only.
    Identity,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::TruncatedPower(k) => {
                if x > 0.0 {
                    x.powi(k as i32)
                } else {
                    0.0
                }
            }
            Activation::UnitStep => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::GaussianRbf => INV_SQRT_2PI * (-0.5 * x * x).exp(),
            Activation::Identity => x,
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::TruncatedPower(k) => {
                if k == 0 || x <= 0.0 {
                    0.0
                } else {
                    k as f64 * x.powi(k as i32 - 1)
                }
            }
            Activation::UnitStep => 0.0,
            Activation::GaussianRbf => -x * INV_SQRT_2PI * (-0.5 * x * x).exp(),
            Activation::Identity => 1.0,
        }
    }

    /// Componentwise σ.
    pub fn apply(self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.eval(x)).collect()
    }

    /// Componentwise σ′.
    pub fn apply_deriv(self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.deriv(x)).collect()
    }

    /// True when σ is C¹ on all of ℝ, which is what finite-difference
    /// verification at fixed step sizes requires.
    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            Activation::Sigmoid
                | Activation::Tanh
                | Activation::Softplus
                | Activation::GaussianRbf
                | Activation::Identity
        )
    }

    /// Whether sums Σ αₗ σ(cₗ·ξ + dₗ) are dense in C(D). Everything here
    /// except the identity (a polynomial) qualifies.
    pub fn has_uap(self) -> bool {
        !matches!(self, Activation::Identity)
    }

    /// Stable one-byte tag for checkpoint files. Truncated powers encode
    /// their exponent as `32 + k`.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Softplus => 3,
            Activation::UnitStep => 4,
            Activation::GaussianRbf => 5,
            Activation::Identity => 6,
            Activation::TruncatedPower(k) => {
                assert!(k <= 223, "truncated power exponent too large for tag");
                32 + k as u8
            }
        }
    }

    pub fn from_tag(tag: u8) -> Result<Activation> {
        Ok(match tag {
            0 => Activation::Sigmoid,
            1 => Activation::Tanh,
            2 => Activation::Relu,
            3 => Activation::Softplus,
            4 => Activation::UnitStep,
            5 => Activation::GaussianRbf,
            6 => Activation::Identity,
            t if t >= 32 => Activation::TruncatedPower((t - 32) as u32),
            t => return Err(Error::BadCheckpoint(format!("unknown activation tag {t}"))),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
            Activation::Softplus => write!(f, "softplus"),
            Activation::TruncatedPower(k) => write!(f, "truncated_power:{k}"),
            Activation::UnitStep => write!(f, "unit_step"),
            Activation::GaussianRbf => write!(f, "gaussian_rbf"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Activation> {
        let s = s.trim();
        Ok(match s {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "softplus" => Activation::Softplus,
            "unit_step" => Activation::UnitStep,
            "gaussian_rbf" => Activation::GaussianRbf,
            "identity" => Activation::Identity,
            other => {
                if let Some(k) = other.strip_prefix("truncated_power:") {
                    let k: u32 = k.parse().map_err(|_| {
                        Error::InvalidArgument(format!("bad truncated power exponent in `{other}`"))
                    })?;
                    Activation::TruncatedPower(k)
                } else {
                    return Err(Error::InvalidArgument(format!(
                        "unknown activation `{other}`"
                    )));
                }
            }
        })
    }
}
