use std::fs::File;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::{build_report, GroupReport, IpAnalysis};
use crate::config::{Config, ConfigError};
use crate::corr::{classify_ip, rho_by_month, Label};
use crate::ingest::{group_by_ip, parse_records, IngestError, IpSeries, TestRecord};
use crate::outlier::TauConfig;
use crate::tier::{estimate_household, estimate_tier};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(#[from] ConfigError),
    #[error("[ingest] {path}: {source}")]
    Ingest { path: String, source: IngestError },
    #[error("[ingest] no records")]
    NoRecords,
    #[error("[report] writing {path}: {message}")]
    Write { path: String, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for usage/config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::NoRecords => 2,
            PipelineError::Ingest { source, .. } if source.is_usage() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRejection {
    pub file: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    /// Data rows read across all inputs.
    pub records_in: usize,
    pub records_rejected: usize,
    /// Records that made it into a per-IP series.
    pub records_classified: usize,
    pub n_series: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: Config,
    pub summary: Summary,
    pub rejections: Vec<FileRejection>,
    pub records: Vec<TestRecord>,
    pub series: Vec<IpSeries>,
    pub analyses: Vec<IpAnalysis>,
    pub reports: Vec<GroupReport>,
}

/// Classifies one series and, for single households, estimates its tier.
pub fn analyze_series(series: &IpSeries, min_samples: usize, tau: &TauConfig) -> IpAnalysis {
    let classification = classify_ip(series, min_samples);
    let speeds = series.speeds();
    let raw_max = estimate_tier(&speeds).ok();
    let household = match classification.label {
        Label::SingleHousehold => estimate_household(series.key(), &speeds, tau).ok(),
        _ => None,
    };
    IpAnalysis {
        monthly: rho_by_month(series, min_samples),
        zero_speed_tests: speeds.iter().filter(|&&v| v <= 0.0).count(),
        raw_max,
        household,
        classification,
    }
}

/// Reads every input and runs ingest, classification, outlier filtering,
/// tier estimation and reporting.
pub fn run_pipeline(inputs: &[PathBuf], config: &Config) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut records_in = 0;
    for path in inputs {
        let outcome = read_input(path, config)?;
        records_in += outcome.total();
        let file = path.display().to_string();
        rejections.extend(outcome.rejections.into_iter().map(|r| FileRejection {
            file: file.clone(),
            line: r.line,
            reason: r.reason,
        }));
        records.extend(outcome.records);
    }
    let mut out = run_on_records(records, config)?;
    out.summary.records_in = records_in;
    out.summary.records_rejected = rejections.len();
    out.rejections = rejections;
    Ok(out)
}

fn read_input(path: &Path, config: &Config) -> Result<crate::ingest::ParseOutcome, PipelineError> {
    let ingest_err = |source: IngestError| PipelineError::Ingest {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(|e| ingest_err(e.into()))?;
    parse_records(std::io::BufReader::new(file), config.ingest.format).map_err(ingest_err)
}

/// Runs everything after parsing on already-validated records.
pub fn run_on_records(records: Vec<TestRecord>, config: &Config) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    if records.is_empty() {
        return Err(PipelineError::NoRecords);
    }
    let tau = config.tau_config()?;
    let bins = config.tier_bins()?;
    let min_samples = config.classify.min_samples;

    let series: Vec<IpSeries> = group_by_ip(records.iter().cloned()).into_values().collect();
    let analyses: Vec<IpAnalysis> = series.iter().map(|s| analyze_series(s, min_samples, &tau)).collect();
    let reports = build_report(&analyses, &bins, config.classify.density_bins);

    Ok(PipelineOutput {
        config: config.clone(),
        summary: Summary {
            records_in: records.len(),
            records_rejected: 0,
            records_classified: series.iter().map(IpSeries::len).sum(),
            n_series: series.len(),
        },
        rejections: Vec::new(),
        records,
        series,
        analyses,
        reports,
    })
}
