//! Household isolation and speed-tier estimation for broadband speed-test data.
//!
//! Speed tests in public measurement datasets are indexed by client IP, and a
//! single IP may front several subscriptions (NAT, dynamic leases). The
//! pipeline in this crate:
//!
//! 1. [`ingest`] parses flat CSV/NDJSON exports and groups tests per
//!    `(group, client IP)`.
//! 2. [`corr`] computes the Pearson correlation between download speed and
//!    congestion count for every IP. A non-positive correlation marks a
//!    single household, a positive one an address shared by several homes.
//! 3. [`outlier`] strips inflated speed measurements from single households
//!    with an iterative Thompson-tau style rejection.
//! 4. [`tier`] takes the largest surviving speed as the household speed-tier
//!    and bins tiers into capacity histograms.
//! 5. [`report`] assembles per-group reports and drives the whole pipeline.
//!
//! [`synth`] generates seeded corpora with planted ground truth for
//! validation.

pub mod config;
pub mod corr;
pub mod ingest;
pub mod outlier;
pub mod report;
pub mod synth;
pub mod tier;

pub use config::Config;
pub use corr::{classify_ip, pearson_rho, Classification, Label};
pub use ingest::{group_by_ip, parse_records, window_by_month, Format, IpSeries, SeriesKey, TestRecord};
pub use outlier::{stretch_ccdf, stretch_factor, tau_filter, FilterResult, TauConfig, TauMode};
pub use report::{build_report, run_pipeline, GroupReport};
pub use tier::{bin_tiers, compare_stages, estimate_tier, TierBins, TierEstimate};
