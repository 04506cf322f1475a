//! Closed-form steady-state error bounds for compressed step-wise transmission.
//!
//! With a contractive step map (Lipschitz constant `L < 1`), a δ-compressor,
//! activation energy `σ_a²` and step-to-step drift energy `σ_Δ²`:
//!
//! * naive compression settles at `(1−δ)σ_a² / (1−L²)`;
//! * residual compression with error feedback settles at
//!   `(1−δ)σ_Δ² / (1−L² − (1−δ)(L²+1))`, provided the denominator is positive;
//! * residual compression without feedback grows like `t(1−δ)σ_Δ²`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid bound parameter: {0}")]
    InvalidParam(String),
    #[error("contraction lost: L = {0} must be below 1")]
    NotContractive(f64),
    #[error(
        "feedback loop unstable: need δ > 1 − (1−L²)/(L²+1) = {threshold:.6}, got δ = {delta:.6} (L = {lipschitz})"
    )]
    Unstable {
        delta: f64,
        lipschitz: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub delta: f64,
    pub lipschitz: f64,
    pub sigma_a_sq: f64,
    pub sigma_delta_sq: f64,
}

impl BoundParams {
    fn check(&self) -> Result<(), TheoryError> {
        let bad = |s: String| Err(TheoryError::InvalidParam(s));
        let all = [self.delta, self.lipschitz, self.sigma_a_sq, self.sigma_delta_sq];
        if all.iter().any(|v| !v.is_finite()) {
            return bad(format!("non-finite parameter in {self:?}"));
        }
        if self.delta > 1.0 {
            return bad(format!("δ = {} exceeds 1", self.delta));
        }
        if self.lipschitz < 0.0 {
            return bad(format!("L = {} is negative", self.lipschitz));
        }
        if self.lipschitz >= 1.0 {
            return Err(TheoryError::NotContractive(self.lipschitz));
        }
        if self.sigma_a_sq < 0.0 || self.sigma_delta_sq < 0.0 {
            return bad("energies must be nonnegative".into());
        }
        Ok(())
    }

    /// Whether the feedback loop's fixed point exists.
    pub fn is_stable(&self) -> bool {
        self.lipschitz < 1.0 && self.delta > stability_threshold(self.lipschitz)
    }
}

/// Steady-state error of naive (non-residual) compression.
pub fn v_naive(p: &BoundParams) -> Result<f64, TheoryError> {
    p.check()?;
    let l2 = p.lipschitz * p.lipschitz;
    Ok((1.0 - p.delta) * p.sigma_a_sq / (1.0 - l2))
}

/// Steady-state error of residual compression with error feedback.
pub fn v_residual(p: &BoundParams) -> Result<f64, TheoryError> {
    p.check()?;
    let l2 = p.lipschitz * p.lipschitz;
    let denom = 1.0 - l2 - (1.0 - p.delta) * (l2 + 1.0);
    if denom <= 0.0 {
        return Err(TheoryError::Unstable {
            delta: p.delta,
            lipschitz: p.lipschitz,
            threshold: stability_threshold(p.lipschitz),
        });
    }
    Ok((1.0 - p.delta) * p.sigma_delta_sq / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRatio {
    pub value: f64,
    /// Set for a lossless compressor, where both bounds vanish and the ratio
    /// is reported as 0 by convention.
    pub exact_compressor: bool,
}

/// `v_residual / v_naive`, evaluated from its own closed form.
pub fn bound_ratio(p: &BoundParams) -> Result<BoundRatio, TheoryError> {
    // Shares the stability and parameter checks.
    v_residual(p)?;
    if p.delta == 1.0 {
        return Ok(BoundRatio {
            value: 0.0,
            exact_compressor: true,
        });
    }
    if p.sigma_a_sq == 0.0 {
        return Err(TheoryError::InvalidParam(
            "σ_a² = 0 makes the naive bound zero".into(),
        ));
    }
    let l2 = p.lipschitz * p.lipschitz;
    let value = (p.sigma_delta_sq / p.sigma_a_sq) * (1.0 - l2)
        / (1.0 - l2 - (1.0 - p.delta) * (l2 + 1.0));
    Ok(BoundRatio {
        value,
        exact_compressor: false,
    })
}

/// Smallest δ for which the feedback loop is stable: `2L²/(1+L²)`.
pub fn stability_threshold(lipschitz: f64) -> f64 {
    let l2 = lipschitz * lipschitz;
    1.0 - (1.0 - l2) / (l2 + 1.0)
}

/// Expected accumulated error after `t` steps without feedback.
pub fn no_feedback_growth(delta: f64, sigma_delta_sq: f64, t: f64) -> f64 {
    t * (1.0 - delta) * sigma_delta_sq
}
