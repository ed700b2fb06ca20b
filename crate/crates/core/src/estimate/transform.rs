//! Bijections between the unconstrained optimizer space and model parameters.

use crate::error::{Error, Result};

/// Map from an unconstrained coordinate `z` to a constrained parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    /// `(-1, 1)` via `tanh`.
    Tanh,
    /// `(0, inf)` via `exp`.
    Exp,
}

impl Link {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Link::Identity => z,
            Link::Tanh => z.tanh(),
            Link::Exp => z.exp(),
        }
    }

    pub fn invert(self, v: f64) -> Result<f64> {
        match self {
            Link::Identity => Ok(v),
            Link::Tanh if v.abs() < 1.0 => Ok(v.atanh()),
            Link::Exp if v > 0.0 => Ok(v.ln()),
            _ => Err(Error::InvalidParams(format!(
                "{v} is outside the domain of {self:?}"
            ))),
        }
    }

    /// `d link(z) / dz`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Link::Exp => z.exp(),
        }
    }
}

/// How a constrained parameter is reported (SDs are reported as variances).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Report {
    AsIs,
    Square,
}

impl Report {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Report::AsIs => v,
            Report::Square => v * v,
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Report::AsIs => 1.0,
            Report::Square => 2.0 * v,
        }
    }
}

/// Unconstrained vector together with its per-coordinate links.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedParams {
    pub z: Vec<f64>,
    pub links: Vec<Link>,
}

impl TransformedParams {
    pub fn from_constrained(values: &[f64], links: &[Link]) -> Result<Self> {
        if values.len() != links.len() {
            return Err(Error::InvalidArgument(
                "one link per parameter required".into(),
            ));
        }
        let z = values
            .iter()
            .zip(links)
            .map(|(&v, l)| l.invert(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            z,
            links: links.to_vec(),
        })
    }

    pub fn constrained(&self) -> Vec<f64> {
        constrain(&self.z, &self.links)
    }

    /// Diagonal of `d constrained / dz`.
    pub fn jacobian(&self) -> Vec<f64> {
        self.z
            .iter()
            .zip(&self.links)
            .map(|(&z, l)| l.derivative(z))
            .collect()
    }
}

pub fn constrain(z: &[f64], links: &[Link]) -> Vec<f64> {
    z.iter().zip(links).map(|(&z, l)| l.apply(z)).collect()
}
