//! Training losses `ℓ(y, t)` with derivatives in `t`, and validation losses.
//!
//! The smoothed hinge is quadratic on the closed band `|1 - yt| ≤ h`:
//!
//! ```text
//! ℓ(y, t) = 0                      yt > 1 + h
//!         = (1 + h - yt)² / (4h)   |1 - yt| ≤ h
//!         = 1 - yt                 yt < 1 - h
//! ```

use serde::{Deserialize, Serialize};

use crate::data::is_sign_label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Square,
    Hinge,
    Huber { h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    ZeroOne,
    Square,
}

/// Which branch of the smoothed hinge a margin falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Band {
    Outside,
    Quadratic,
    Linear,
}

fn band(margin: f64, h: f64) -> Band {
    // compare against the edges directly; `|1 - m| <= h` misclassifies
    // margins a rounding error below `1 + h`
    if margin > 1.0 + h {
        Band::Outside
    } else if margin >= 1.0 - h {
        Band::Quadratic
    } else {
        Band::Linear
    }
}

impl LossKind {
    pub fn huber(h: f64) -> Result<Self> {
        if h > 0.0 && h.is_finite() {
            Ok(LossKind::Huber { h })
        } else {
            Err(Error::invalid(format!("Huber parameter {h} must be positive")))
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, LossKind::Hinge)
    }

    fn check_label(&self, y: f64) -> Result<()> {
        match self {
            LossKind::Square => Ok(()),
            _ if is_sign_label(y) => Ok(()),
            _ => Err(Error::invalid(format!("margin loss needs y = ±1, got {y}"))),
        }
    }

    fn require_smooth(&self) -> Result<()> {
        if self.is_differentiable() {
            Ok(())
        } else {
            Err(Error::UnsupportedLoss(
                "hinge loss has no derivative; use the smoothed hinge".into(),
            ))
        }
    }

    pub fn value(&self, y: f64, t: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(match *self {
            LossKind::Square => (t - y) * (t - y),
            LossKind::Hinge => (1.0 - y * t).max(0.0),
            LossKind::Huber { h } => {
                let m = y * t;
                match band(m, h) {
                    Band::Outside => 0.0,
                    Band::Quadratic => (1.0 + h - m).powi(2) / (4.0 * h),
                    Band::Linear => 1.0 - m,
                }
            }
        })
    }

    pub fn d1(&self, y: f64, t: f64) -> Result<f64> {
        self.require_smooth()?;
        self.check_label(y)?;
        Ok(match *self {
            LossKind::Square => 2.0 * (t - y),
            LossKind::Huber { h } => {
                let m = y * t;
                match band(m, h) {
                    Band::Outside => 0.0,
                    Band::Quadratic => -y * (1.0 + h - m) / (2.0 * h),
                    Band::Linear => -y,
                }
            }
            LossKind::Hinge => unreachable!(),
        })
    }

    pub fn d2(&self, y: f64, t: f64) -> Result<f64> {
        self.require_smooth()?;
        self.check_label(y)?;
        Ok(match *self {
            LossKind::Square => 2.0,
            LossKind::Huber { h } => {
                if band(y * t, h) == Band::Quadratic {
                    1.0 / (2.0 * h)
                } else {
                    0.0
                }
            }
            LossKind::Hinge => unreachable!(),
        })
    }
}

impl ValidationKind {
    /// 0-1 loss uses `sign(0) = +1`.
    pub fn value(&self, y: f64, pred: f64) -> Result<f64> {
        match self {
            ValidationKind::Square => Ok((pred - y) * (pred - y)),
            ValidationKind::ZeroOne => {
                if !is_sign_label(y) {
                    return Err(Error::invalid(format!("0-1 loss needs y = ±1, got {y}")));
                }
                let sign = if pred >= 0.0 { 1.0 } else { -1.0 };
                Ok(if sign == y { 0.0 } else { 1.0 })
            }
        }
    }
}
