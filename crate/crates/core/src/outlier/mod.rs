//! Per-household speed outlier rejection and the stretch factor.
//!
//! Rejection is iterative: compute the mean and sample standard deviation of
//! the surviving speeds, take the single point furthest from the mean and
//! drop it when its deviation exceeds `multiplier · s`. The multiplier is
//! either a fixed `k` or the modified Thompson tau
//!
//! ```text
//! tau(n, alpha) = t · (n − 1) / (√n · √(n − 2 + t²))
//! ```
//!
//! with `t` the two-sided Student-t critical value at `alpha` and `n − 2`
//! degrees of freedom.

pub mod student_t;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OutlierError {
    #[error("invalid outlier config: {0}")]
    InvalidConfig(String),
    #[error("stretch factor undefined: kept maximum is {0}")]
    UndefinedStretch(f64),
    #[error("raw maximum {raw} is below kept maximum {kept}")]
    RawBelowKept { raw: f64, kept: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TauMode {
    /// Reject when the deviation exceeds `k` sample standard deviations.
    FixedK { k: f64 },
    /// Reject when the deviation exceeds `tau(n, alpha)` standard deviations.
    TauTable { alpha: f64 },
}

impl TauMode {
    pub fn name(&self) -> &'static str {
        match self {
            TauMode::FixedK { .. } => "fixed_k",
            TauMode::TauTable { .. } => "tau_table",
        }
    }

    /// Rejection threshold in units of the sample standard deviation.
    pub fn multiplier(&self, n: usize) -> f64 {
        match *self {
            TauMode::FixedK { k } => k,
            TauMode::TauTable { alpha } => thompson_tau(n, alpha),
        }
    }
}

/// Names accepted on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauModeName {
    FixedK,
    TauTable,
}

impl FromStr for TauModeName {
    type Err = OutlierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed_k" => Ok(TauModeName::FixedK),
            "tau_table" => Ok(TauModeName::TauTable),
            other => Err(OutlierError::InvalidConfig(format!(
                "unknown tau mode `{other}` (expected fixed_k or tau_table)"
            ))),
        }
    }
}

impl fmt::Display for TauModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TauModeName::FixedK => "fixed_k",
            TauModeName::TauTable => "tau_table",
        })
    }
}

pub const DEFAULT_K: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_MIN_N: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauConfig {
    pub mode: TauMode,
    /// Below this many surviving points the filter stops.
    pub min_n: usize,
}

impl Default for TauConfig {
    fn default() -> Self {
        TauConfig {
            mode: TauMode::FixedK { k: DEFAULT_K },
            min_n: DEFAULT_MIN_N,
        }
    }
}

impl TauConfig {
    pub fn fixed_k(k: f64) -> Self {
        TauConfig {
            mode: TauMode::FixedK { k },
            ..Default::default()
        }
    }

    pub fn tau_table(alpha: f64) -> Self {
        TauConfig {
            mode: TauMode::TauTable { alpha },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), OutlierError> {
        match self.mode {
            TauMode::FixedK { k } if !(k.is_finite() && k > 0.0) => {
                return Err(OutlierError::InvalidConfig(format!("k must be positive, got {k}")));
            }
            TauMode::TauTable { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(OutlierError::InvalidConfig(format!(
                    "alpha must be in (0, 1), got {alpha}"
                )));
            }
            _ => {}
        }
        if self.min_n < 3 {
            return Err(OutlierError::InvalidConfig(format!(
                "min_n must be at least 3, got {}",
                self.min_n
            )));
        }
        Ok(())
    }
}

/// Modified Thompson tau for a sample of `n >= 3`.
pub fn thompson_tau(n: usize, alpha: f64) -> f64 {
    assert!(n >= 3, "thompson tau needs n >= 3");
    let nf = n as f64;
    let t = student_t::two_sided_critical(alpha, nf - 2.0);
    t * (nf - 1.0) / (nf.sqrt() * (nf - 2.0 + t * t).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterResult {
    /// Surviving speeds, in input order.
    pub kept: Vec<f64>,
    /// Rejected speeds, in rejection order.
    pub rejected: Vec<f64>,
    pub iterations: usize,
}

impl FilterResult {
    pub fn kept_max(&self) -> Option<f64> {
        self.kept.iter().copied().reduce(f64::max)
    }
}

/// Iteratively rejects the most deviant speed while it exceeds the threshold.
///
/// Statistics are accumulated over the values in sorted order, so the kept
/// and rejected multisets do not depend on input order. When the largest and
/// smallest value deviate equally the larger is rejected; among equal values
/// the later-indexed one goes first.
pub fn tau_filter(speeds: &[f64], cfg: &TauConfig) -> FilterResult {
    // (value, input index), ascending
    let mut active: Vec<(f64, usize)> = speeds.iter().copied().zip(0..).collect();
    active.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rejected: Vec<(f64, usize)> = Vec::new();
    while active.len() >= cfg.min_n.max(3) {
        let n = active.len();
        let mean = active.iter().map(|v| v.0).sum::<f64>() / n as f64;
        let var = active.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let s = var.sqrt();
        if !(s > 0.0 && s.is_finite()) {
            break;
        }
        let low = active[0].0;
        let high = active[n - 1].0;
        let (dev, pos) = if high - mean >= mean - low {
            (high - mean, n - 1)
        } else {
            // last entry of the run of minimal values has the highest index
            let run = active.iter().take_while(|v| v.0 == low).count();
            (mean - low, run - 1)
        };
        if dev > cfg.mode.multiplier(n) * s {
            rejected.push(active.remove(pos));
        } else {
            break;
        }
    }

    let mut keep_mask = vec![true; speeds.len()];
    for &(_, i) in &rejected {
        keep_mask[i] = false;
    }
    FilterResult {
        kept: speeds
            .iter()
            .zip(&keep_mask)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .collect(),
        iterations: rejected.len(),
        rejected: rejected.into_iter().map(|v| v.0).collect(),
    }
}

/// Ratio of the raw maximum speed to the speed-tier.
pub fn stretch_factor(raw_max: f64, kept_max: f64) -> Result<f64, OutlierError> {
    if !(kept_max > 0.0 && kept_max.is_finite()) {
        return Err(OutlierError::UndefinedStretch(kept_max));
    }
    if raw_max < kept_max {
        return Err(OutlierError::RawBelowKept {
            raw: raw_max,
            kept: kept_max,
        });
    }
    Ok(raw_max / kept_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcdfPoint {
    pub x: f64,
    /// Fraction of factors strictly greater than `x`.
    pub ccdf: f64,
}

/// Empirical CCDF evaluated at each distinct factor.
pub fn stretch_ccdf(factors: &[f64]) -> Vec<CcdfPoint> {
    let mut sorted = factors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CcdfPoint> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        // for runs of equal values the last index wins
        let greater = (sorted.len() - i - 1) as f64 / n;
        match out.last_mut() {
            Some(p) if p.x == x => p.ccdf = greater,
            _ => out.push(CcdfPoint { x, ccdf: greater }),
        }
    }
    out
}
