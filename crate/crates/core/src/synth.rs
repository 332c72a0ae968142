//! Seeded synthetic speed-test corpora with planted ground truth.
//!
//! A household test draws a congestion count `c ~ Poisson(rate)` and a speed
//!
//! ```text
//! speed = capacity · (1 − sensitivity · c / (c + rate)) + N(0, noise_sd²)
//! ```
//!
//! clamped to `[0, capacity]`. Speed therefore falls with congestion inside
//! one household. A shared IP draws each test from one of several households
//! chosen by weight; congestion counts scale with the link rate through
//! [`CongestionRegime`], so pooling households of different capacity lines up
//! high speeds with high counts.

use std::fmt;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{parse_timestamp, IpSeries, Measurement, SeriesKey, TestRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("corpus spec has no entries")]
    EmptySpec,
    #[error("corpus spec: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Network conditions shared by households on the same access network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CongestionRegime {
    /// Mean congestion signals per test for each Mbps of link capacity.
    pub congestion_per_mbps: f64,
    pub sensitivity: f64,
    /// Noise standard deviation as a fraction of capacity.
    pub noise_fraction: f64,
}

impl Default for CongestionRegime {
    fn default() -> Self {
        CongestionRegime {
            congestion_per_mbps: 0.5,
            sensitivity: 0.3,
            noise_fraction: 0.05,
        }
    }
}

impl CongestionRegime {
    pub fn household(&self, capacity_mbps: f64) -> HouseholdModel {
        HouseholdModel {
            capacity_mbps,
            congestion_rate: self.congestion_per_mbps * capacity_mbps,
            noise_sd: self.noise_fraction * capacity_mbps,
            sensitivity: self.sensitivity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HouseholdModel {
    pub capacity_mbps: f64,
    /// Mean congestion count per test; also the half-saturation constant of
    /// the speed curve.
    pub congestion_rate: f64,
    pub noise_sd: f64,
    /// Fraction of capacity lost as congestion saturates.
    pub sensitivity: f64,
}

impl HouseholdModel {
    /// Model with the default [`CongestionRegime`].
    pub fn with_capacity(capacity_mbps: f64) -> Self {
        CongestionRegime::default().household(capacity_mbps)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |what: &str, v: f64| Err(SynthError::InvalidModel(format!("{what} = {v}")));
        if !(self.capacity_mbps.is_finite() && self.capacity_mbps > 0.0) {
            return bad("capacity_mbps", self.capacity_mbps);
        }
        if !(self.congestion_rate.is_finite() && self.congestion_rate > 0.0) {
            return bad("congestion_rate", self.congestion_rate);
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd", self.noise_sd);
        }
        if !(self.sensitivity > 0.0 && self.sensitivity <= 1.0) {
            return bad("sensitivity", self.sensitivity);
        }
        Ok(())
    }

    /// Noise-free speed at congestion count `c`.
    pub fn expected_speed(&self, c: f64) -> f64 {
        self.capacity_mbps * (1.0 - self.sensitivity * c / (c + self.congestion_rate))
    }

    /// One `(speed, congestion)` draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, u64) {
        let c: f64 = Poisson::new(self.congestion_rate).expect("validated rate").sample(rng);
        let mut speed = self.expected_speed(c);
        if self.noise_sd > 0.0 {
            let noise: f64 = Normal::new(0.0, self.noise_sd).expect("validated sd").sample(rng);
            speed += noise;
        }
        (speed.clamp(0.0, self.capacity_mbps), c as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharedIpModel {
    households: Vec<HouseholdModel>,
    weights: Vec<f64>,
}

impl SharedIpModel {
    pub fn new(households: Vec<HouseholdModel>, weights: Vec<f64>) -> Result<Self, SynthError> {
        if households.is_empty() {
            return Err(SynthError::InvalidModel(
                "shared IP needs at least one household".into(),
            ));
        }
        if households.len() != weights.len() {
            return Err(SynthError::InvalidModel(format!(
                "{} households but {} weights",
                households.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(SynthError::InvalidModel("weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidModel(format!("weights sum to {sum}, not 1")));
        }
        for h in &households {
            h.validate()?;
        }
        Ok(SharedIpModel { households, weights })
    }

    /// Equal weights over `households`.
    pub fn uniform(households: Vec<HouseholdModel>) -> Result<Self, SynthError> {
        let weights = vec![1.0 / households.len().max(1) as f64; households.len()];
        SharedIpModel::new(households, weights)
    }

    pub fn households(&self) -> &[HouseholdModel] {
        &self.households
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlantedModel {
    Single(HouseholdModel),
    Shared(SharedIpModel),
}

impl PlantedModel {
    pub fn kind(&self) -> Kind {
        match self {
            PlantedModel::Single(_) => Kind::Single,
            PlantedModel::Shared(_) => Kind::Shared,
        }
    }

    /// Planted capacity; for shared IPs the largest member capacity.
    pub fn capacity_mbps(&self) -> f64 {
        match self {
            PlantedModel::Single(h) => h.capacity_mbps,
            PlantedModel::Shared(s) => s.households.iter().map(|h| h.capacity_mbps).fold(0.0, f64::max),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        match self {
            PlantedModel::Single(h) => h.validate(),
            PlantedModel::Shared(s) => s.households.iter().try_for_each(HouseholdModel::validate),
        }
    }
}

/// Extra inflated measurements, e.g. tests that ran above the provisioned
/// rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierInjection {
    /// Probability that a test is inflated.
    pub rate: f64,
    /// Multiplier applied to an inflated test's speed.
    pub scale: f64,
}

/// Time range the test timestamps are drawn from, uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeWindow {
    pub start: i64,
    pub span_secs: i64,
}

impl Default for TimeWindow {
    /// April to July 2017.
    fn default() -> Self {
        TimeWindow {
            start: 1_491_004_800,
            span_secs: 122 * 86_400,
        }
    }
}

/// Draws timestamped tests for one IP.
struct TestSource<'a> {
    model: &'a PlantedModel,
    picker: Option<WeightedIndex<f64>>,
    outliers: Option<OutlierInjection>,
    window: TimeWindow,
}

impl<'a> TestSource<'a> {
    fn new(
        model: &'a PlantedModel,
        outliers: Option<OutlierInjection>,
        window: TimeWindow,
    ) -> Result<Self, SynthError> {
        model.validate()?;
        if window.span_secs <= 0 {
            return Err(SynthError::InvalidModel("time window must have positive span".into()));
        }
        if let Some(o) = outliers {
            if !(0.0..=1.0).contains(&o.rate) || !(o.scale.is_finite() && o.scale >= 1.0) {
                return Err(SynthError::InvalidModel(format!(
                    "outlier rate must be in [0,1] and scale >= 1 (got {}, {})",
                    o.rate, o.scale
                )));
            }
        }
        let picker = match model {
            PlantedModel::Shared(s) if s.households.len() > 1 => {
                Some(WeightedIndex::new(&s.weights).map_err(|e| SynthError::InvalidModel(e.to_string()))?)
            }
            _ => None,
        };
        Ok(TestSource {
            model,
            picker,
            outliers,
            window,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Measurement {
        let timestamp = self.window.start + rng.random_range(0..self.window.span_secs);
        let household = match self.model {
            PlantedModel::Single(h) => h,
            PlantedModel::Shared(s) => match &self.picker {
                Some(p) => &s.households[p.sample(rng)],
                None => &s.households[0],
            },
        };
        let (mut speed, congestion) = household.sample(rng);
        if let Some(o) = self.outliers {
            if rng.random::<f64>() < o.rate {
                speed *= o.scale;
            }
        }
        Measurement {
            timestamp,
            download_mbps: speed,
            congestion_count: congestion,
        }
    }

    fn series<R: Rng + ?Sized>(&self, key: SeriesKey, n: usize, rng: &mut R) -> Result<IpSeries, SynthError> {
        let records = (0..n).map(|_| self.draw(rng)).collect();
        IpSeries::new(key, records).ok_or_else(|| SynthError::InvalidModel("test count must be at least 1".into()))
    }
}

pub fn default_key() -> SeriesKey {
    SeriesKey {
        group: "synthetic".into(),
        ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
    }
}

/// `n` tests from one household, with the default key and time window.
pub fn gen_household(model: &HouseholdModel, n: usize, seed: u64) -> Result<IpSeries, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_household_with(model, n, default_key(), TimeWindow::default(), &mut rng)
}

pub fn gen_household_with<R: Rng + ?Sized>(
    model: &HouseholdModel,
    n: usize,
    key: SeriesKey,
    window: TimeWindow,
    rng: &mut R,
) -> Result<IpSeries, SynthError> {
    let planted = PlantedModel::Single(*model);
    TestSource::new(&planted, None, window)?.series(key, n, rng)
}

/// `n` tests pooled from the households of a shared IP.
pub fn gen_shared_ip(model: &SharedIpModel, n: usize, seed: u64) -> Result<IpSeries, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_shared_ip_with(model, n, default_key(), TimeWindow::default(), &mut rng)
}

pub fn gen_shared_ip_with<R: Rng + ?Sized>(
    model: &SharedIpModel,
    n: usize,
    key: SeriesKey,
    window: TimeWindow,
    rng: &mut R,
) -> Result<IpSeries, SynthError> {
    let planted = PlantedModel::Shared(model.clone());
    TestSource::new(&planted, None, window)?.series(key, n, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub isp: String,
    pub country: String,
    pub model: PlantedModel,
    pub ip_count: usize,
    pub tests_per_ip: usize,
    pub outliers: Option<OutlierInjection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSpec {
    pub window: TimeWindow,
    pub entries: Vec<CorpusEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Single,
    Shared,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Single => "single",
            Kind::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub ip: IpAddr,
    pub group: String,
    pub kind: Kind,
    pub capacity_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<TestRecord>,
    pub truth: Vec<GroundTruth>,
}

/// Address of the `i`-th synthetic client, counting from 10.0.0.1.
pub fn corpus_ip(i: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::from(0x0A00_0001u32 + i as u32))
}

/// Generates every entry in order from a single seeded stream.
pub fn gen_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus, SynthError> {
    if spec.entries.is_empty() {
        return Err(SynthError::EmptySpec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Corpus {
        records: Vec::new(),
        truth: Vec::new(),
    };
    for entry in &spec.entries {
        let source = TestSource::new(&entry.model, entry.outliers, spec.window)?;
        let group = crate::ingest::group_label(&entry.isp, &entry.country);
        for _ in 0..entry.ip_count {
            let ip = corpus_ip(corpus.truth.len());
            let key = SeriesKey {
                group: group.clone(),
                ip,
            };
            let series = source.series(key, entry.tests_per_ip, &mut rng)?;
            corpus.records.extend(series.records().iter().map(|m| TestRecord {
                client_ip: ip,
                timestamp: m.timestamp,
                download_mbps: m.download_mbps,
                congestion_count: m.congestion_count,
                isp: entry.isp.clone(),
                country: entry.country.clone(),
            }));
            corpus.truth.push(GroundTruth {
                ip,
                group: group.clone(),
                kind: entry.model.kind(),
                capacity_mbps: entry.model.capacity_mbps(),
            });
        }
    }
    Ok(corpus)
}

impl Corpus {
    pub fn write_ground_truth_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ip", "kind", "capacity_mbps"])?;
        for t in &self.truth {
            w.write_record([t.ip.to_string(), t.kind.to_string(), t.capacity_mbps.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `records.csv` and `ground_truth.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        let records = std::fs::File::create(dir.join("records.csv"))?;
        crate::ingest::write_records_csv(&self.records, std::io::BufWriter::new(records))?;
        let truth = std::fs::File::create(dir.join("ground_truth.csv"))?;
        self.write_ground_truth_csv(std::io::BufWriter::new(truth))?;
        Ok(())
    }
}

// On-disk corpus spec (TOML).

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default)]
    start: Option<String>,
    #[serde(default)]
    span_days: Option<f64>,
    #[serde(default)]
    regime: CongestionRegime,
    #[serde(default, rename = "entry")]
    entries: Vec<EntryFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    isp: String,
    #[serde(default)]
    country: String,
    kind: Kind,
    capacity_mbps: Vec<f64>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    ip_count: usize,
    tests_per_ip: usize,
    #[serde(default)]
    regime: Option<CongestionRegime>,
    #[serde(default)]
    outliers: Option<OutlierInjection>,
}

impl CorpusSpec {
    /// Parses a TOML corpus description:
    ///
    /// ```toml
    /// start = "2017-04-01T00:00:00Z"
    /// span_days = 122
    ///
    /// [regime]
    /// congestion_per_mbps = 0.5
    ///
    /// [[entry]]
    /// isp = "ExampleNet"
    /// country = "AU"
    /// kind = "shared"
    /// capacity_mbps = [8, 20]
    /// ip_count = 30
    /// tests_per_ip = 100
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let file: SpecFile = toml::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))?;
        let mut window = TimeWindow::default();
        if let Some(s) = &file.start {
            window.start = parse_timestamp(s).ok_or_else(|| SynthError::Spec(format!("invalid start `{s}`")))?;
        }
        if let Some(d) = file.span_days {
            if !(d > 0.0 && d.is_finite()) {
                return Err(SynthError::Spec(format!("span_days must be positive, got {d}")));
            }
            window.span_secs = (d * 86_400.0).round() as i64;
        }
        let mut entries = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            let regime = e.regime.unwrap_or(file.regime);
            let households: Vec<HouseholdModel> = e.capacity_mbps.iter().map(|&c| regime.household(c)).collect();
            let model = match e.kind {
                Kind::Single => {
                    if households.len() != 1 || e.weights.is_some() {
                        return Err(SynthError::Spec(format!(
                            "single entry for `{}` needs exactly one capacity and no weights",
                            e.isp
                        )));
                    }
                    PlantedModel::Single(households[0])
                }
                Kind::Shared => PlantedModel::Shared(match e.weights {
                    Some(w) => SharedIpModel::new(households, w)?,
                    None => SharedIpModel::uniform(households)?,
                }),
            };
            model.validate()?;
            if e.tests_per_ip == 0 {
                return Err(SynthError::Spec("tests_per_ip must be at least 1".into()));
            }
            entries.push(CorpusEntry {
                isp: e.isp,
                country: e.country,
                model,
                ip_count: e.ip_count,
                tests_per_ip: e.tests_per_ip,
                outliers: e.outliers,
            });
        }
        if entries.is_empty() {
            return Err(SynthError::EmptySpec);
        }
        Ok(CorpusSpec { window, entries })
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        CorpusSpec::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
