//! Parsing, validation and grouping of raw speed-test records.
//!
//! Two flat input formats are accepted, both using the same field names:
//!
//! ```text
//! client_ip,timestamp,download_mbps,congestion_count,isp,country
//! 1.2.3.4,1501545600,18.5,7,NetCo,AU
//! ```
//!
//! or one JSON object per line with the same keys. `country` is optional.
//! `timestamp` is either integer epoch seconds or an RFC 3339 string.
//!
//! Malformed rows never abort a run: each one is recorded as a [`Rejection`]
//! carrying its line number and a short reason.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Column names of the flat record schema, in canonical output order.
pub const FIELDS: [&str; 6] = [
    "client_ip",
    "timestamp",
    "download_mbps",
    "congestion_count",
    "isp",
    "country",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unknown input format `{0}` (expected `csv` or `ndjson`)")]
    UnknownFormat(String),
    #[error("csv header has no `{0}` column")]
    MissingColumn(&'static str),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl IngestError {
    /// True for problems with the caller's input contract rather than the
    /// environment.
    pub fn is_usage(&self) -> bool {
        matches!(self, IngestError::UnknownFormat(_) | IngestError::MissingColumn(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Ndjson,
}

impl FromStr for Format {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "ndjson" | "jsonl" => Ok(Format::Ndjson),
            _ => Err(IngestError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Ndjson => "ndjson",
        })
    }
}

/// One speed-test measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub client_ip: IpAddr,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub download_mbps: f64,
    pub congestion_count: u64,
    pub isp: String,
    /// ISO-3166 alpha-2, empty when unknown.
    pub country: String,
}

impl TestRecord {
    /// Group label used for aggregation: `isp`, or `isp/country` when the
    /// country is known.
    pub fn group(&self) -> String {
        group_label(&self.isp, &self.country)
    }

    pub fn key(&self) -> SeriesKey {
        SeriesKey {
            group: self.group(),
            ip: self.client_ip,
        }
    }

    pub fn measurement(&self) -> Measurement {
        Measurement {
            timestamp: self.timestamp,
            download_mbps: self.download_mbps,
            congestion_count: self.congestion_count,
        }
    }
}

pub fn group_label(isp: &str, country: &str) -> String {
    if country.is_empty() {
        isp.to_string()
    } else {
        format!("{isp}/{country}")
    }
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number in the input (the CSV header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<TestRecord>,
    pub rejections: Vec<Rejection>,
}

impl ParseOutcome {
    /// Number of data rows seen, accepted or not.
    pub fn total(&self) -> usize {
        self.records.len() + self.rejections.len()
    }
}

/// Parses every data row of `input`.
///
/// Blank lines are ignored. Any row that fails validation is kept out of
/// `records` and appended to `rejections`; only unreadable input is fatal.
pub fn parse_records<R: Read>(input: R, format: Format) -> Result<ParseOutcome, IngestError> {
    match format {
        Format::Csv => parse_csv(input),
        Format::Ndjson => parse_ndjson(input),
    }
}

struct Columns {
    idx: [Option<usize>; 6],
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let mut idx = [None; 6];
        for (i, name) in header.iter().enumerate() {
            if let Some(f) = FIELDS.iter().position(|f| f.eq_ignore_ascii_case(name.trim())) {
                idx[f].get_or_insert(i);
            }
        }
        // country is optional
        for (f, name) in FIELDS.iter().enumerate().take(5) {
            if idx[f].is_none() {
                return Err(IngestError::MissingColumn(name));
            }
        }
        Ok(Columns { idx })
    }
}

fn parse_csv<R: Read>(input: R) -> Result<ParseOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(fatal_csv(e)),
    };
    let mut out = ParseOutcome::default();
    if header.is_empty() {
        return Ok(out);
    }
    let cols = Columns::from_header(&header)?;

    let mut row = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                let line = row.position().map_or(0, |p| p.line());
                if row.iter().all(str::is_empty) {
                    continue;
                }
                let field = |f: usize| -> Result<Option<&str>, String> { Ok(cols.idx[f].and_then(|i| row.get(i))) };
                match build_record(field) {
                    Ok(rec) => out.records.push(rec),
                    Err(reason) => out.rejections.push(Rejection { line, reason }),
                }
            }
            Err(e) => {
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(fatal_csv(e));
                }
                let line = e.position().map_or(0, |p| p.line());
                let reason = match e.kind() {
                    csv::ErrorKind::Utf8 { .. } => "invalid utf-8".to_string(),
                    _ => e.to_string(),
                };
                out.rejections.push(Rejection { line, reason });
            }
        }
    }
    Ok(out)
}

fn fatal_csv(e: csv::Error) -> IngestError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            _ => unreachable!(),
        }
    } else {
        IngestError::Csv(e)
    }
}

fn parse_ndjson<R: Read>(input: R) -> Result<ParseOutcome, IngestError> {
    let mut out = ParseOutcome::default();
    let mut reader = BufReader::new(input);
    let mut buf = Vec::new();
    let mut line = 0u64;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line += 1;
        let text = match std::str::from_utf8(&buf) {
            Ok(t) => t.trim(),
            Err(_) => {
                out.rejections.push(Rejection {
                    line,
                    reason: "invalid utf-8".into(),
                });
                continue;
            }
        };
        if text.is_empty() {
            continue;
        }
        match ndjson_record(text) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.rejections.push(Rejection { line, reason }),
        }
    }
    Ok(out)
}

fn ndjson_record(text: &str) -> Result<TestRecord, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("json line is not an object")?;
    let mut fields: [Option<String>; 6] = Default::default();
    for (f, name) in FIELDS.iter().enumerate() {
        fields[f] = match obj.get(*name) {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.trim().to_string()),
            Some(serde_json::Value::Number(n)) => Some(n.to_string()),
            Some(_) => return Err(format!("{name} has unsupported json type")),
        };
    }
    build_record(|f| Ok(fields[f].as_deref()))
}

/// Validates one row given a field accessor indexed like [`FIELDS`].
fn build_record<'a, F>(field: F) -> Result<TestRecord, String>
where
    F: Fn(usize) -> Result<Option<&'a str>, String>,
{
    let required = |f: usize| -> Result<&'a str, String> {
        match field(f)? {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(format!("missing {}", FIELDS[f])),
        }
    };

    let client_ip = required(0)?
        .parse::<IpAddr>()
        .map_err(|_| "invalid client ip".to_string())?;
    let timestamp = parse_timestamp(required(1)?).ok_or("invalid timestamp")?;
    let download_mbps = parse_speed(required(2)?)?;
    let congestion_count = parse_congestion(required(3)?)?;
    let isp = required(4)?.to_string();
    let country = field(5)?.unwrap_or("").to_string();

    Ok(TestRecord {
        client_ip,
        timestamp,
        download_mbps,
        congestion_count,
        isp,
        country,
    })
}

/// Integer epoch seconds or RFC 3339. Returns `None` unless the value maps
/// to a representable instant.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let secs = match s.parse::<i64>() {
        Ok(v) => v,
        Err(_) => DateTime::parse_from_rfc3339(s).ok()?.timestamp(),
    };
    DateTime::<Utc>::from_timestamp(secs, 0).map(|_| secs)
}

fn parse_speed(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| "non-numeric speed".to_string())?;
    if !v.is_finite() {
        Err("non-finite speed".into())
    } else if v < 0.0 {
        Err("negative speed".into())
    } else {
        Ok(v)
    }
}

fn parse_congestion(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(v) => Ok(v),
        Err(_) if s.parse::<i64>().is_ok() => Err("negative congestion count".into()),
        Err(_) => Err("non-integer congestion count".into()),
    }
}

/// Writes records in the canonical CSV schema.
pub fn write_records_csv<'a, W, I>(records: I, out: W) -> Result<(), csv::Error>
where
    W: Write,
    I: IntoIterator<Item = &'a TestRecord>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELDS)?;
    for r in records {
        w.write_record([
            r.client_ip.to_string(),
            r.timestamp.to_string(),
            r.download_mbps.to_string(),
            r.congestion_count.to_string(),
            r.isp.clone(),
            r.country.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Identity of a per-IP series: the aggregation group and the client address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SeriesKey {
    pub group: String,
    pub ip: IpAddr,
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.group, self.ip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub timestamp: i64,
    pub download_mbps: f64,
    pub congestion_count: u64,
}

/// All measurements of one client IP, ordered by time. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct IpSeries {
    key: SeriesKey,
    records: Vec<Measurement>,
}

impl IpSeries {
    /// Builds a series, sorting measurements by timestamp (stable, so equal
    /// timestamps keep their input order). Returns `None` for an empty list.
    pub fn new(key: SeriesKey, mut records: Vec<Measurement>) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        records.sort_by_key(|m| m.timestamp);
        Some(IpSeries { key, records })
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn records(&self) -> &[Measurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.records.iter().map(|m| m.download_mbps).collect()
    }

    /// `(download_mbps, congestion_count)` pairs in time order.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .map(|m| (m.download_mbps, m.congestion_count as f64))
            .collect()
    }
}

/// Partitions records into per-`(group, ip)` series.
pub fn group_by_ip<I>(records: I) -> BTreeMap<SeriesKey, IpSeries>
where
    I: IntoIterator<Item = TestRecord>,
{
    let mut buckets: BTreeMap<SeriesKey, Vec<Measurement>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.key()).or_default().push(r.measurement());
    }
    buckets
        .into_iter()
        .filter_map(|(k, v)| IpSeries::new(k.clone(), v).map(|s| (k, s)))
        .collect()
}

/// A calendar month in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(timestamp: i64) -> Self {
        let t = DateTime::<Utc>::from_timestamp(timestamp, 0).expect("timestamps are validated at ingest");
        YearMonth {
            year: t.year(),
            month: t.month(),
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthWindow {
    pub month: YearMonth,
    pub series: IpSeries,
}

/// Splits a series into consecutive calendar-month windows (UTC).
pub fn window_by_month(series: &IpSeries) -> Vec<MonthWindow> {
    let mut windows: Vec<MonthWindow> = Vec::new();
    let mut current: Option<(YearMonth, Vec<Measurement>)> = None;
    for m in series.records() {
        let month = YearMonth::of(m.timestamp);
        match &mut current {
            Some((cur, recs)) if *cur == month => recs.push(*m),
            _ => {
                if let Some((cur, recs)) = current.take() {
                    windows.push(window(series.key(), cur, recs));
                }
                current = Some((month, vec![*m]));
            }
        }
    }
    if let Some((cur, recs)) = current {
        windows.push(window(series.key(), cur, recs));
    }
    windows
}

fn window(key: &SeriesKey, month: YearMonth, records: Vec<Measurement>) -> MonthWindow {
    MonthWindow {
        month,
        series: IpSeries::new(key.clone(), records).expect("window is non-empty"),
    }
}
