//! Household speed-tier estimation and capacity-bin histograms.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::SeriesKey;
use crate::outlier::{stretch_factor, tau_filter, FilterResult, OutlierError, TauConfig};

#[derive(Debug, Error, PartialEq)]
pub enum TierError {
    #[error("no positive speed measurement to estimate a tier from")]
    NoValidSpeed,
    #[error("invalid tier bins: {0}")]
    InvalidBins(String),
    #[error(transparent)]
    Outlier(#[from] OutlierError),
}

/// Default capacity bin edges in Mbps; the last bin is open-ended.
pub const DEFAULT_EDGES: [f64; 6] = [0.0, 8.0, 12.0, 25.0, 50.0, 100.0];

/// Bin edges `[e0=0, e1, ..., ek]` defining `[e0,e1), ..., [ek, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierBins {
    edges: Vec<f64>,
}

impl TierBins {
    pub fn new(edges: Vec<f64>) -> Result<Self, TierError> {
        if edges.is_empty() {
            return Err(TierError::InvalidBins("no edges given".into()));
        }
        if edges[0] != 0.0 {
            return Err(TierError::InvalidBins(format!(
                "first edge must be 0, got {}",
                edges[0]
            )));
        }
        if let Some(e) = edges.iter().find(|e| !e.is_finite()) {
            return Err(TierError::InvalidBins(format!("edge {e} is not finite")));
        }
        if let Some(w) = edges.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TierError::InvalidBins(format!(
                "edges must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TierBins { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the half-open bin holding `x`. Values on an interior edge
    /// belong to the upper bin; negative values clamp to the first bin.
    pub fn index_of(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x).saturating_sub(1)
    }

    /// `(lo, hi)` of bin `i`, `hi = None` for the open last bin.
    pub fn bounds(&self, i: usize) -> (f64, Option<f64>) {
        (self.edges[i], self.edges.get(i + 1).copied())
    }
}

impl Default for TierBins {
    fn default() -> Self {
        TierBins {
            edges: DEFAULT_EDGES.to_vec(),
        }
    }
}

impl FromStr for TierBins {
    type Err = TierError;

    /// Comma-separated edges, e.g. `0,8,12,25,50,100`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let edges = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| TierError::InvalidBins(format!("`{}` is not a number", t.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        TierBins::new(edges)
    }
}

impl fmt::Display for TierBins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Largest kept speed.
pub fn estimate_tier(kept: &[f64]) -> Result<f64, TierError> {
    kept.iter()
        .copied()
        .filter(|v| v.is_finite())
        .reduce(f64::max)
        .filter(|&m| m > 0.0)
        .ok_or(TierError::NoValidSpeed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierEstimate {
    pub key: SeriesKey,
    pub speed_tier: f64,
    pub stretch_factor: f64,
    pub n_kept: usize,
}

/// Everything computed for one single-household IP on its way to a tier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HouseholdTier {
    pub estimate: TierEstimate,
    /// Tests before dropping zero speeds.
    pub n: usize,
    pub zero_speed_dropped: usize,
    pub raw_max: f64,
    pub filter: FilterResult,
}

/// Drops zero-speed tests, filters outliers and takes the largest survivor.
pub fn estimate_household(key: &SeriesKey, speeds: &[f64], cfg: &TauConfig) -> Result<HouseholdTier, TierError> {
    let positive: Vec<f64> = speeds.iter().copied().filter(|&v| v > 0.0).collect();
    let raw_max = estimate_tier(&positive)?;
    let filter = tau_filter(&positive, cfg);
    let speed_tier = estimate_tier(&filter.kept)?;
    let stretch = stretch_factor(raw_max, speed_tier)?;
    Ok(HouseholdTier {
        estimate: TierEstimate {
            key: key.clone(),
            speed_tier,
            stretch_factor: stretch,
            n_kept: filter.kept.len(),
        },
        n: speeds.len(),
        zero_speed_dropped: speeds.len() - positive.len(),
        raw_max,
        filter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the open-ended last bin.
    pub hi: Option<f64>,
    pub count: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub total: usize,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn masses(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.mass).collect()
    }
}

/// Normalized histogram of tiers. With no tiers every mass is 0.
pub fn bin_tiers(tiers: &[f64], bins: &TierBins) -> Histogram {
    let mut counts = vec![0usize; bins.len()];
    for &t in tiers {
        counts[bins.index_of(t)] += 1;
    }
    let total = tiers.len();
    Histogram {
        total,
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| {
                let (lo, hi) = bins.bounds(i);
                HistogramBin {
                    lo,
                    hi,
                    count,
                    mass: if total == 0 { 0.0 } else { count as f64 / total as f64 },
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Every qualifying IP treated as a house, tier = raw maximum.
    Raw,
    /// Single households only, tier = raw maximum.
    RhoFiltered,
    /// Single households after outlier removal.
    Cleaned,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Raw, Stage::RhoFiltered, Stage::Cleaned];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::RhoFiltered => "rho_filtered",
            Stage::Cleaned => "cleaned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageHistograms {
    pub raw: Histogram,
    pub rho_filtered: Histogram,
    pub cleaned: Histogram,
}

impl StageHistograms {
    pub fn get(&self, stage: Stage) -> &Histogram {
        match stage {
            Stage::Raw => &self.raw,
            Stage::RhoFiltered => &self.rho_filtered,
            Stage::Cleaned => &self.cleaned,
        }
    }
}

/// Tier histograms for the three processing stages of one group.
pub fn compare_stages(
    raw_per_ip_max: &[f64],
    post_rho_filter: &[f64],
    post_outlier_filter: &[f64],
    bins: &TierBins,
) -> StageHistograms {
    StageHistograms {
        raw: bin_tiers(raw_per_ip_max, bins),
        rho_filtered: bin_tiers(post_rho_filter, bins),
        cleaned: bin_tiers(post_outlier_filter, bins),
    }
}
