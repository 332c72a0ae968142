//! Per-group aggregation of classifications and tier estimates.

mod output;
mod pipeline;

pub use output::{write_outputs, write_rejections_ndjson, OutputSelection, Surface, REPORT_FILES};
pub use pipeline::{
    analyze_series, run_on_records, run_pipeline, FileRejection, PipelineError, PipelineOutput, Summary,
};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corr::{rho_density, Classification, DensityBin, Label};
use crate::ingest::YearMonth;
use crate::outlier::{stretch_ccdf, CcdfPoint};
use crate::tier::{compare_stages, HouseholdTier, StageHistograms, TierBins};

/// Everything computed for one `(group, ip)` series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpAnalysis {
    pub classification: Classification,
    pub monthly: Vec<(YearMonth, Classification)>,
    /// Largest positive speed, `None` when every test measured 0.
    pub raw_max: Option<f64>,
    pub zero_speed_tests: usize,
    /// Present for single households with at least one positive speed.
    pub household: Option<HouseholdTier>,
}

impl IpAnalysis {
    pub fn group(&self) -> &str {
        &self.classification.key.group
    }

    pub fn label(&self) -> Label {
        self.classification.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub n_ips: usize,
    pub n_records: usize,
    pub n_single: usize,
    pub n_multi: usize,
    pub n_indeterminate: usize,
    pub n_insufficient: usize,
    /// Single households over IPs meeting the sample threshold.
    pub single_fraction: Option<f64>,
    pub zero_speed_tests: usize,
    /// `None` when no qualifying IP has a defined correlation.
    pub rho_density: Option<Vec<DensityBin>>,
    pub tier_histograms: StageHistograms,
    pub stretch_ccdf: Vec<CcdfPoint>,
}

impl GroupReport {
    pub fn count(&self, label: Label) -> usize {
        match label {
            Label::SingleHousehold => self.n_single,
            Label::MultiHousehold => self.n_multi,
            Label::Indeterminate => self.n_indeterminate,
            Label::InsufficientData => self.n_insufficient,
        }
    }
}

/// Builds one report per group, ordered by group label.
///
/// Tier stages: `raw` covers every IP meeting the sample threshold with its
/// raw maximum speed, `rho_filtered` the single households with their raw
/// maximum, and `cleaned` the single households' outlier-filtered tiers.
pub fn build_report(analyses: &[IpAnalysis], bins: &TierBins, density_bins: usize) -> Vec<GroupReport> {
    let mut by_group: BTreeMap<&str, Vec<&IpAnalysis>> = BTreeMap::new();
    for a in analyses {
        by_group.entry(a.group()).or_default().push(a);
    }
    by_group
        .into_iter()
        .map(|(group, members)| group_report(group, &members, bins, density_bins))
        .collect()
}

fn group_report(group: &str, members: &[&IpAnalysis], bins: &TierBins, density_bins: usize) -> GroupReport {
    let count = |l: Label| members.iter().filter(|a| a.label() == l).count();
    let n_single = count(Label::SingleHousehold);
    let n_insufficient = count(Label::InsufficientData);
    let qualifying = members.len() - n_insufficient;

    let classifications: Vec<Classification> = members.iter().map(|a| a.classification.clone()).collect();

    let raw: Vec<f64> = members
        .iter()
        .filter(|a| a.label().is_qualifying())
        .filter_map(|a| a.raw_max)
        .collect();
    let singles = || members.iter().filter(|a| a.label() == Label::SingleHousehold);
    let rho_filtered: Vec<f64> = singles().filter_map(|a| a.raw_max).collect();
    let cleaned: Vec<f64> = singles()
        .filter_map(|a| a.household.as_ref())
        .map(|h| h.estimate.speed_tier)
        .collect();
    let factors: Vec<f64> = singles()
        .filter_map(|a| a.household.as_ref())
        .map(|h| h.estimate.stretch_factor)
        .collect();

    GroupReport {
        group: group.to_string(),
        n_ips: members.len(),
        n_records: members.iter().map(|a| a.classification.n_samples).sum(),
        n_single,
        n_multi: count(Label::MultiHousehold),
        n_indeterminate: count(Label::Indeterminate),
        n_insufficient,
        single_fraction: (qualifying > 0).then(|| n_single as f64 / qualifying as f64),
        zero_speed_tests: members.iter().map(|a| a.zero_speed_tests).sum(),
        rho_density: rho_density(&classifications, density_bins).ok(),
        tier_histograms: compare_stages(&raw, &rho_filtered, &cleaned, bins),
        stretch_ccdf: stretch_ccdf(&factors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{IpSeries, Measurement, SeriesKey};
    use crate::outlier::TauConfig;

    fn series(group: &str, ip: &str, pairs: &[(f64, u64)]) -> IpSeries {
        IpSeries::new(
            SeriesKey {
                group: group.into(),
                ip: ip.parse().unwrap(),
            },
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(s, c))| Measurement {
                    timestamp: 1491004800 + 3600 * i as i64,
                    download_mbps: s,
                    congestion_count: c,
                })
                .collect(),
        )
        .unwrap()
    }

    fn decreasing(top: f64) -> Vec<(f64, u64)> {
        (0..12).map(|i| (top - i as f64 * 0.1, i as u64)).collect()
    }

    fn increasing(top: f64) -> Vec<(f64, u64)> {
        (0..12).map(|i| (top - i as f64, 12 - i as u64)).collect()
    }

    fn analyses(list: &[IpSeries]) -> Vec<IpAnalysis> {
        list.iter()
            .map(|s| analyze_series(s, 10, &TauConfig::default()))
            .collect()
    }

    #[test]
    fn label_partition_and_fraction() {
        let a = analyses(&[
            series("A", "10.0.0.1", &decreasing(20.0)),
            series("A", "10.0.0.2", &decreasing(7.0)),
            series("A", "10.0.0.3", &increasing(60.0)),
            series("A", "10.0.0.4", &[(5.0, 1), (6.0, 2)]),
            series("A", "10.0.0.5", &[(5.0, 3); 12]),
            series("B", "10.0.0.1", &decreasing(30.0)),
        ]);
        let r = build_report(&a, &TierBins::default(), 40);
        assert_eq!(r.len(), 2);
        let g = &r[0];
        assert_eq!(g.group, "A");
        assert_eq!(
            (g.n_single, g.n_multi, g.n_indeterminate, g.n_insufficient),
            (2, 1, 1, 1)
        );
        assert_eq!(g.n_single + g.n_multi + g.n_indeterminate + g.n_insufficient, g.n_ips);
        assert_eq!(g.single_fraction, Some(0.5));
        assert_eq!(g.n_records, 12 * 4 + 2);
        assert_eq!(g.tier_histograms.raw.total, 4);
        assert_eq!(g.tier_histograms.rho_filtered.total, 2);
        assert_eq!(g.tier_histograms.cleaned.total, 2);
        let d = g.rho_density.as_ref().unwrap();
        assert!((d.iter().map(|b| b.mass).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_single_group_has_equal_raw_and_rho_stages() {
        let a = analyses(&[
            series("A", "10.0.0.1", &decreasing(20.0)),
            series("A", "10.0.0.2", &decreasing(7.0)),
        ]);
        let g = &build_report(&a, &TierBins::default(), 40)[0];
        assert_eq!(g.n_multi, 0);
        assert_eq!(g.tier_histograms.raw, g.tier_histograms.rho_filtered);
    }

    #[test]
    fn group_without_qualifying_ips() {
        let a = analyses(&[series("A", "10.0.0.1", &[(5.0, 1), (6.0, 2)])]);
        let g = &build_report(&a, &TierBins::default(), 40)[0];
        assert_eq!(g.n_insufficient, 1);
        assert_eq!(g.single_fraction, None);
        assert!(g.rho_density.is_none());
        assert_eq!(g.tier_histograms.raw.total, 0);
        assert!(g.stretch_ccdf.is_empty());
    }
}
