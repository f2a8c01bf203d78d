//! Robust cost functions and their weight functions.
//!
//! A robust cost is a pair `(ρ, ψ)` with `ψ(e) = ρ'(e)/e`: the cost replaces
//! the squared-error loss on normalized residuals, and the weight function
//! drives the covariance reweighting in [`crate::filters`]. Only the Huber
//! cost ships; the enumeration leaves room for further costs (Welsch,
//! Hampel) whose weights may reach zero, which is why the filters clamp
//! weights to a floor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("tuning parameter gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
}

/// Available robust cost families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Huber,
}

/// A robust cost `ρ` with its weight function `ψ` and tuning parameter `γ`,
/// applied to normalized (dimensionless) residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustCost {
    kind: CostKind,
    gamma: f64,
}

impl RobustCost {
    /// Huber cost: quadratic inside `γ`, linear outside. The customary
    /// default for `gamma` is 1.345.
    pub fn huber(gamma: f64) -> Result<Self, CostError> {
        if !(gamma > 0.0) {
            return Err(CostError::NonPositiveGamma(gamma));
        }
        Ok(Self {
            kind: CostKind::Huber,
            gamma,
        })
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Cost value `ρ(e)`. Even, continuous, convex; the boundary `|e| = γ`
    /// belongs to the linear branch (both branches agree there).
    pub fn rho(&self, e: f64) -> f64 {
        match self.kind {
            CostKind::Huber => {
                let a = e.abs();
                if a < self.gamma {
                    0.5 * e * e
                } else {
                    self.gamma * a - 0.5 * self.gamma * self.gamma
                }
            }
        }
    }

    /// Weight `ψ(e) = ρ'(e)/e`: 1 inside `γ`, `γ/|e|` outside. Always in
    /// `(0, 1]` for the Huber cost.
    pub fn psi(&self, e: f64) -> f64 {
        match self.kind {
            CostKind::Huber => {
                let a = e.abs();
                if a < self.gamma {
                    1.0
                } else {
                    self.gamma / a
                }
            }
        }
    }
}
