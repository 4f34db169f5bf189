//! Confidence tightening for chance constraints under a KL ambiguity ball.
//!
//! `chi(y, delta) = inf_{x in (0,1)} (exp(-delta) x^y - 1) / (x - 1)` is the
//! reference-distribution confidence that guarantees confidence `y` for every
//! distribution within KL radius `delta` of the reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search;

const GRID_HALF: usize = 5_000;
const GRID_EDGE: f64 = 1e-8;
const REFINE_WIDTH: f64 = 1e-12;
const INVERSE_WIDTH: f64 = 1e-13;

/// Radius of a KL ball.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KlRadius(f64);

impl KlRadius {
    pub fn new(delta: f64) -> Result<Self> {
        if delta >= 0.0 && delta.is_finite() {
            Ok(Self(delta))
        } else {
            Err(Error::Domain(format!(
                "KL radius must be finite and nonnegative, got {delta}"
            )))
        }
    }

    pub const ZERO: KlRadius = KlRadius(0.0);

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Direction in which `chi` moves with `y` at fixed radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// Result of the infimum: the value and, when attained inside `(0, 1)`, its argmin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tightening {
    pub value: f64,
    pub argmin: Option<f64>,
}

fn check_level(y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "confidence must lie in [0, 1], got {y}"
        )))
    }
}

/// `h(x) = (exp(-delta) x^y - 1) / (x - 1)`, evaluated without cancellation near `x = 1`.
pub fn tightening_ratio(x: f64, y: f64, delta: f64) -> f64 {
    let num = (y * (x - 1.0).ln_1p() - delta).exp_m1();
    num / (x - 1.0)
}

fn grid() -> &'static [f64] {
    use std::sync::OnceLock;
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    GRID.get_or_init(|| {
        let low = search::log_space(GRID_EDGE, 0.5, GRID_HALF);
        let mut high: Vec<f64> = search::log_space(GRID_EDGE, 0.5, GRID_HALF)
            .into_iter()
            .map(|u| 1.0 - u)
            .collect();
        high.reverse();
        let mut all = low;
        all.extend(high.into_iter().filter(|&x| x > 0.5));
        all
    })
}

/// Tightened confidence with the attaining `x`.
pub fn adjust_confidence_detail(eps: f64, delta: KlRadius) -> Result<Tightening> {
    check_level(eps)?;
    let d = delta.value();
    let h = |x: f64| tightening_ratio(x, eps, d);
    let (x, v) = search::grid_then_golden(h, grid(), REFINE_WIDTH);

    // boundary limits: x -> 0 and, for delta = 0, x -> 1
    let at_zero = if eps > 0.0 { 1.0 } else { -(-d).exp_m1() };
    let at_one = if d == 0.0 { eps } else { f64::INFINITY };
    let mut best = Tightening {
        value: v,
        argmin: Some(x),
    };
    if at_zero <= best.value {
        best = Tightening {
            value: at_zero,
            argmin: None,
        };
    }
    if at_one <= best.value {
        best = Tightening {
            value: at_one,
            argmin: None,
        };
    }
    best.value = best.value.clamp(0.0, 1.0);
    Ok(best)
}

/// `chi(eps, delta)`: reference confidence that robustly guarantees `eps`.
pub fn adjust_confidence(eps: f64, delta: KlRadius) -> Result<f64> {
    Ok(adjust_confidence_detail(eps, delta)?.value)
}

/// Numerically detected direction of `y -> chi(y, delta)`.
pub fn detect_monotonicity(delta: KlRadius) -> Result<Monotonicity> {
    let a = adjust_confidence(0.25, delta)?;
    let b = adjust_confidence(0.75, delta)?;
    Ok(if b >= a {
        Monotonicity::Increasing
    } else {
        Monotonicity::Decreasing
    })
}

/// Attainable interval of `chi(., delta)` over `y in [0, 1]`.
pub fn adjust_range(delta: KlRadius) -> Result<(f64, f64)> {
    let a = adjust_confidence(0.0, delta)?;
    let b = adjust_confidence(1.0, delta)?;
    Ok((a.min(b), a.max(b)))
}

/// Bracket `[lo, hi]` on `y` with `chi(lo) <= target <= chi(hi)` (for an
/// increasing map; reversed otherwise), narrowed until `hi - lo <= width` or
/// `|chi(mid) - target| <= value_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseBracket {
    /// End where `chi <= target`.
    pub below: f64,
    /// End where `chi >= target`.
    pub above: f64,
}

pub fn inverse_adjust_bracket(
    target: f64,
    delta: KlRadius,
    width: f64,
    value_tol: f64,
) -> Result<InverseBracket> {
    let (low, high) = adjust_range(delta)?;
    if !(target >= low - value_tol && target <= high + value_tol) {
        return Err(Error::Range { target, low, high });
    }
    let dir = detect_monotonicity(delta)?;
    let (mut below, mut above): (f64, f64) = match dir {
        Monotonicity::Increasing => (0.0, 1.0),
        Monotonicity::Decreasing => (1.0, 0.0),
    };
    for _ in 0..200 {
        if (above - below).abs() <= width {
            break;
        }
        let mid = 0.5 * (below + above);
        let v = adjust_confidence(mid, delta)?;
        if (v - target).abs() <= value_tol {
            return Ok(InverseBracket {
                below: mid,
                above: mid,
            });
        }
        if v < target {
            below = mid;
        } else {
            above = mid;
        }
    }
    Ok(InverseBracket { below, above })
}

/// `y` with `chi(y, delta) = target`, bracketed to width 1e-13 in `y`. A value
/// tolerance would not do: `chi` is nearly flat where it saturates at 1.
pub fn inverse_adjust(target: f64, delta: KlRadius) -> Result<f64> {
    let b = inverse_adjust_bracket(target, delta, INVERSE_WIDTH, 0.0)?;
    Ok(0.5 * (b.below + b.above))
}
