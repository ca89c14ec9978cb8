//! Robust regression losses, their IRLS weights, and the clipping operator.
//!
//! All losses are functions of the residual `r = y - f(x)` only. Losses with
//! a scale parameter interpret `sigma` in response units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor below which a residual is treated as zero by [`irls_weight`].
pub const DEFAULT_FLOOR_EPS: f64 = 1e-12;

/// Which robust loss to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `σ² log(1 + r²/σ²)`
    Cauchy,
    /// `σ² (1 - exp(-r²/σ²))`
    Correntropy,
    /// `|r|`
    Absolute,
    /// `r²/2` inside `[-σ, σ]`, `σ|r| - σ²/2` outside.
    Huber,
}

impl LossKind {
    pub fn has_scale(self) -> bool {
        !matches!(self, LossKind::Absolute)
    }
}

/// A loss together with its scale parameter.
///
/// `sigma` is ignored (and stored as `1.0`) for [`LossKind::Absolute`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledLoss {
    kind: LossKind,
    sigma: f64,
}

impl ScaledLoss {
    pub fn new(kind: LossKind, sigma: f64) -> Result<Self> {
        if kind.has_scale() && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{kind:?} loss needs a finite positive scale, got {sigma}"
            )));
        }
        let sigma = if kind.has_scale() { sigma } else { 1.0 };
        Ok(Self { kind, sigma })
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        Self::new(LossKind::Cauchy, sigma)
    }

    pub fn correntropy(sigma: f64) -> Result<Self> {
        Self::new(LossKind::Correntropy, sigma)
    }

    pub fn huber(sigma: f64) -> Result<Self> {
        Self::new(LossKind::Huber, sigma)
    }

    pub fn absolute() -> Self {
        Self {
            kind: LossKind::Absolute,
            sigma: 1.0,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Scale parameter; `None` for the absolute loss.
    pub fn sigma(&self) -> Option<f64> {
        self.kind.has_scale().then_some(self.sigma)
    }

    /// Loss value at `residual`, without input validation.
    #[inline]
    pub(crate) fn value_unchecked(&self, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.kind {
            LossKind::Cauchy => s2 * (r * r / s2).ln_1p(),
            LossKind::Correntropy => -s2 * (-(r * r) / s2).exp_m1(),
            LossKind::Absolute => r.abs(),
            LossKind::Huber => {
                let a = r.abs();
                if a <= self.sigma {
                    0.5 * r * r
                } else {
                    self.sigma * a - 0.5 * s2
                }
            }
        }
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, r: f64, floor_eps: f64) -> f64 {
        let a = r.abs();
        if a < floor_eps {
            return match self.kind {
                LossKind::Cauchy | LossKind::Correntropy => 1.0,
                LossKind::Huber => 0.5,
                LossKind::Absolute => 1.0 / floor_eps,
            };
        }
        match self.kind {
            LossKind::Absolute => 1.0 / a,
            LossKind::Huber if a <= self.sigma => 0.5,
            _ => {
                let w = self.value_unchecked(r) / (r * r);
                // log1p(x)/x and -expm1(-x)/x underflow to 0 only for absurd
                // residuals; keep the weight strictly positive.
                w.max(f64::MIN_POSITIVE)
            }
        }
    }
}

/// Evaluates the loss at `residual`.
pub fn eval_loss(loss: &ScaledLoss, residual: f64) -> Result<f64> {
    if !residual.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    Ok(loss.value_unchecked(residual))
}

/// IRLS weight `loss(r) / r²`, with the analytic `r → 0` limit below `floor_eps`.
///
/// For the absolute loss the weight is `1 / max(|r|, floor_eps)`.
pub fn irls_weight(loss: &ScaledLoss, residual: f64, floor_eps: f64) -> Result<f64> {
    if !residual.is_finite() {
        return Err(Error::NonFinite("residual"));
    }
    if !(floor_eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "floor_eps must be positive, got {floor_eps}"
        )));
    }
    Ok(loss.weight_unchecked(residual, floor_eps))
}

/// Symmetric clipping bound `M > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBound(f64);

impl ClipBound {
    pub fn new(m: f64) -> Result<Self> {
        if m > 0.0 && !m.is_nan() {
            Ok(Self(m))
        } else {
            Err(Error::InvalidParameter(format!(
                "clip bound must be positive, got {m}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Projects `value` onto `[-M, M]`.
#[inline]
pub fn clip(value: f64, bound: ClipBound) -> f64 {
    value.clamp(-bound.0, bound.0)
}
