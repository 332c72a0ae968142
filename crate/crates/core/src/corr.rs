//! Speed/congestion correlation per client IP and household classification.
//!
//! For a single home, tests run while the network is congested record more
//! congestion signals and lower throughput, so the Pearson coefficient
//! between `download_mbps` and `congestion_count` is negative. When several
//! homes with different link capacities share one address the pooled pairs
//! are dominated by the capacity spread and the coefficient turns positive.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{window_by_month, IpSeries, SeriesKey, YearMonth};

/// Default minimum number of tests per IP and analysis window.
pub const DEFAULT_MIN_SAMPLES: usize = 10;
pub const DEFAULT_DENSITY_BINS: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum CorrError {
    #[error("pearson correlation needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("no defined correlation values to build a density from")]
    EmptyDensity,
    #[error("density bin count must be positive")]
    ZeroBins,
}

/// Running first and second co-moments of a stream of `(x, y)` pairs.
///
/// Welford-style update: the deviation products are accumulated against the
/// running means, which avoids the cancellation of the naive
/// `Σxy − n·x̄·ȳ` formula.
#[derive(Debug, Clone, Default)]
pub struct CoMoments {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        let dx_new = x - self.mean_x;
        let dy_new = y - self.mean_y;
        self.m2_x += dx * dx_new;
        self.m2_y += dy * dy_new;
        // symmetric in x and y: average of the two equivalent update forms
        self.c_xy += 0.5 * (dx * dy_new + dy * dx_new);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Sample Pearson coefficient, `None` when either coordinate has zero
    /// variance or fewer than two pairs were seen.
    pub fn rho(&self) -> Option<f64> {
        if self.n < 2 || self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return None;
        }
        let r = self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt());
        Some(r.clamp(-1.0, 1.0))
    }
}

impl Extend<(f64, f64)> for CoMoments {
    fn extend<T: IntoIterator<Item = (f64, f64)>>(&mut self, iter: T) {
        for (x, y) in iter {
            self.push(x, y);
        }
    }
}

/// Pearson correlation of `(speed, congestion)` pairs.
///
/// `Ok(None)` means undefined (a constant coordinate).
pub fn pearson_rho(pairs: &[(f64, f64)]) -> Result<Option<f64>, CorrError> {
    if pairs.len() < 2 {
        return Err(CorrError::TooFewPairs(pairs.len()));
    }
    let mut m = CoMoments::new();
    m.extend(pairs.iter().copied());
    Ok(m.rho())
}

/// Per-IP pairs divided by their per-coordinate maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScaled {
    pub pairs: Vec<(f64, f64)>,
    /// Set when the speed maximum was zero; speeds are then emitted as-is.
    pub speed_unscaled: bool,
    /// Set when the congestion maximum was zero.
    pub congestion_unscaled: bool,
}

/// Normalizes speed and congestion separately to `[0, 1]` for plotting.
///
/// Pearson's coefficient is unchanged by this, so classification works on
/// raw pairs.
pub fn unit_scale(series: &IpSeries) -> UnitScaled {
    let pairs = series.pairs();
    let max_x = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_y = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let sx = if max_x > 0.0 { max_x } else { 1.0 };
    let sy = if max_y > 0.0 { max_y } else { 1.0 };
    UnitScaled {
        pairs: pairs.iter().map(|&(x, y)| (x / sx, y / sy)).collect(),
        speed_unscaled: max_x <= 0.0,
        congestion_unscaled: max_y <= 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    SingleHousehold,
    MultiHousehold,
    /// Enough samples but a constant coordinate.
    Indeterminate,
    InsufficientData,
}

impl Label {
    pub const ALL: [Label; 4] = [
        Label::SingleHousehold,
        Label::MultiHousehold,
        Label::Indeterminate,
        Label::InsufficientData,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::SingleHousehold => "single_household",
            Label::MultiHousehold => "multi_household",
            Label::Indeterminate => "indeterminate",
            Label::InsufficientData => "insufficient_data",
        }
    }

    /// Labels whose IPs pass the sample-count filter.
    pub fn is_qualifying(self) -> bool {
        self != Label::InsufficientData
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub key: SeriesKey,
    pub n_samples: usize,
    /// Computed whenever at least two pairs exist, even below `min_samples`.
    pub rho: Option<f64>,
    pub label: Label,
}

/// Labels one IP by the sign of its speed/congestion correlation.
///
/// `rho <= 0` is a single household, `rho > 0` a shared address.
pub fn classify_ip(series: &IpSeries, min_samples: usize) -> Classification {
    let mut m = CoMoments::new();
    m.extend(series.pairs());
    let rho = m.rho();
    let n = series.len();
    let label = match rho {
        _ if n < min_samples => Label::InsufficientData,
        None => Label::Indeterminate,
        Some(r) if r > 0.0 => Label::MultiHousehold,
        Some(_) => Label::SingleHousehold,
    };
    Classification {
        key: series.key().clone(),
        n_samples: n,
        rho,
        label,
    }
}

/// Classifies each calendar month of a series independently.
pub fn rho_by_month(series: &IpSeries, min_samples: usize) -> Vec<(YearMonth, Classification)> {
    window_by_month(series)
        .into_iter()
        .map(|w| (w.month, classify_ip(&w.series, min_samples)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Normalized histogram of `rho` over `[-1, 1]`.
///
/// Only IPs that passed the sample-count filter and have a defined
/// coefficient contribute. Bins are half-open except the last, which
/// includes `+1`.
pub fn rho_density(classifications: &[Classification], bins: usize) -> Result<Vec<DensityBin>, CorrError> {
    if bins == 0 {
        return Err(CorrError::ZeroBins);
    }
    let values: Vec<f64> = classifications
        .iter()
        .filter(|c| c.label.is_qualifying())
        .filter_map(|c| c.rho)
        .collect();
    if values.is_empty() {
        return Err(CorrError::EmptyDensity);
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for r in &values {
        let i = (((r + 1.0) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = values.len() as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| DensityBin {
            lo: -1.0 + i as f64 * width,
            hi: if i + 1 == bins {
                1.0
            } else {
                -1.0 + (i + 1) as f64 * width
            },
            mass: c as f64 / total,
        })
        .collect())
}
