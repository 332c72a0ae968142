use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::pipeline::{FileRejection, PipelineError, PipelineOutput, Summary};
use super::GroupReport;
use crate::config::Config;
use crate::ingest::write_records_csv;
use crate::tier::Stage;

/// One output file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Records,
    Series,
    Rejections,
    Classifications,
    Monthly,
    RhoDensity,
    Households,
    IpDetail,
    TierHistograms,
    StretchCcdf,
    GroupSummary,
    ReportJson,
}

impl Surface {
    pub fn file_name(self) -> &'static str {
        match self {
            Surface::Records => "records.csv",
            Surface::Series => "series.csv",
            Surface::Rejections => "rejections.ndjson",
            Surface::Classifications => "classifications.csv",
            Surface::Monthly => "rho_monthly.csv",
            Surface::RhoDensity => "rho_density.csv",
            Surface::Households => "households.csv",
            Surface::IpDetail => "ip_detail.ndjson",
            Surface::TierHistograms => "tier_histograms.csv",
            Surface::StretchCcdf => "stretch_ccdf.csv",
            Surface::GroupSummary => "group_summary.csv",
            Surface::ReportJson => "report.json",
        }
    }
}

/// Files written by the `pipeline` command without `--emit-intermediate`.
pub const REPORT_FILES: [&str; 9] = [
    "classifications.csv",
    "rho_density.csv",
    "households.csv",
    "ip_detail.ndjson",
    "tier_histograms.csv",
    "stretch_ccdf.csv",
    "group_summary.csv",
    "report.json",
    "rho_monthly.csv",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputSelection(pub Vec<Surface>);

impl OutputSelection {
    pub fn ingest() -> Self {
        OutputSelection(vec![Surface::Records, Surface::Series])
    }

    pub fn classify() -> Self {
        OutputSelection(vec![Surface::Classifications, Surface::RhoDensity, Surface::Monthly])
    }

    pub fn tiers() -> Self {
        OutputSelection(vec![
            Surface::Households,
            Surface::IpDetail,
            Surface::TierHistograms,
            Surface::StretchCcdf,
        ])
    }

    pub fn report() -> Self {
        OutputSelection(vec![
            Surface::GroupSummary,
            Surface::RhoDensity,
            Surface::TierHistograms,
            Surface::StretchCcdf,
            Surface::ReportJson,
        ])
    }

    pub fn pipeline(emit_intermediate: bool) -> Self {
        let mut s = vec![
            Surface::Classifications,
            Surface::Monthly,
            Surface::RhoDensity,
            Surface::Households,
            Surface::IpDetail,
            Surface::TierHistograms,
            Surface::StretchCcdf,
            Surface::GroupSummary,
            Surface::ReportJson,
        ];
        if emit_intermediate {
            s.extend([Surface::Records, Surface::Series, Surface::Rejections]);
        }
        OutputSelection(s)
    }
}

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn write_outputs(out: &PipelineOutput, dir: &Path, selection: &OutputSelection) -> Result<(), PipelineError> {
    let write_err = |path: &Path, e: &dyn std::fmt::Display| PipelineError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| write_err(dir, &e))?;
    for &surface in &selection.0 {
        let path = dir.join(surface.file_name());
        let file = File::create(&path).map_err(|e| write_err(&path, &e))?;
        let mut w = BufWriter::new(file);
        write_surface(out, surface, &mut w)
            .and_then(|_| w.flush().map_err(Into::into))
            .map_err(|e| write_err(&path, &e))?;
    }
    Ok(())
}

fn write_surface<W: Write>(out: &PipelineOutput, surface: Surface, w: &mut W) -> Res {
    match surface {
        Surface::Records => write_records_csv(&out.records, w)?,
        Surface::Series => series_csv(out, w)?,
        Surface::Rejections => write_rejections_ndjson(&out.rejections, w)?,
        Surface::Classifications => classifications_csv(out, w)?,
        Surface::Monthly => monthly_csv(out, w)?,
        Surface::RhoDensity => density_csv(&out.reports, w)?,
        Surface::Households => households_csv(out, w)?,
        Surface::IpDetail => ip_detail(out, w)?,
        Surface::TierHistograms => histograms_csv(&out.reports, w)?,
        Surface::StretchCcdf => ccdf_csv(&out.reports, w)?,
        Surface::GroupSummary => summary_csv(&out.reports, w)?,
        Surface::ReportJson => report_json(out, w)?,
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn hi(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "inf".into())
}

pub fn write_rejections_ndjson<W: Write>(rejections: &[FileRejection], mut w: W) -> std::io::Result<()> {
    for r in rejections {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn series_csv<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "ip", "n", "first_timestamp", "last_timestamp"])?;
    for s in &out.series {
        let r = s.records();
        c.write_record([
            s.key().group.clone(),
            s.key().ip.to_string(),
            s.len().to_string(),
            r[0].timestamp.to_string(),
            r[r.len() - 1].timestamp.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

fn classifications_csv<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "ip", "n_samples", "rho", "label"])?;
    for a in &out.analyses {
        let k = &a.classification;
        c.write_record([
            k.key.group.clone(),
            k.key.ip.to_string(),
            k.n_samples.to_string(),
            opt(k.rho),
            k.label.as_str().to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

fn monthly_csv<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "ip", "month", "n_samples", "rho", "label"])?;
    for a in &out.analyses {
        for (month, k) in &a.monthly {
            c.write_record([
                k.key.group.clone(),
                k.key.ip.to_string(),
                month.to_string(),
                k.n_samples.to_string(),
                opt(k.rho),
                k.label.as_str().to_string(),
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

fn density_csv<W: Write>(reports: &[GroupReport], w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "bin_lo", "bin_hi", "mass"])?;
    for r in reports {
        for b in r.rho_density.iter().flatten() {
            c.write_record([r.group.clone(), b.lo.to_string(), b.hi.to_string(), b.mass.to_string()])?;
        }
    }
    c.flush()?;
    Ok(())
}

fn households_csv<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "group",
        "ip",
        "n",
        "kept_n",
        "rejected_n",
        "speed_tier",
        "stretch_factor",
    ])?;
    for h in out.analyses.iter().filter_map(|a| a.household.as_ref()) {
        c.write_record([
            h.estimate.key.group.clone(),
            h.estimate.key.ip.to_string(),
            h.n.to_string(),
            h.filter.kept.len().to_string(),
            h.filter.rejected.len().to_string(),
            h.estimate.speed_tier.to_string(),
            h.estimate.stretch_factor.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct IpDetail<'a> {
    group: &'a str,
    ip: String,
    n_samples: usize,
    rho: Option<f64>,
    label: &'a str,
    raw_max: Option<f64>,
    zero_speed_tests: usize,
    speed_tier: Option<f64>,
    stretch_factor: Option<f64>,
    kept_n: Option<usize>,
    rejected: Option<&'a [f64]>,
}

fn ip_detail<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    for a in &out.analyses {
        let k = &a.classification;
        let h = a.household.as_ref();
        let row = IpDetail {
            group: &k.key.group,
            ip: k.key.ip.to_string(),
            n_samples: k.n_samples,
            rho: k.rho,
            label: k.label.as_str(),
            raw_max: a.raw_max,
            zero_speed_tests: a.zero_speed_tests,
            speed_tier: h.map(|h| h.estimate.speed_tier),
            stretch_factor: h.map(|h| h.estimate.stretch_factor),
            kept_n: h.map(|h| h.filter.kept.len()),
            rejected: h.map(|h| h.filter.rejected.as_slice()),
        };
        serde_json::to_writer(&mut *w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn histograms_csv<W: Write>(reports: &[GroupReport], w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "stage", "bin_lo", "bin_hi", "mass"])?;
    for r in reports {
        for stage in Stage::ALL {
            for b in &r.tier_histograms.get(stage).bins {
                c.write_record([
                    r.group.clone(),
                    stage.as_str().to_string(),
                    b.lo.to_string(),
                    hi(b.hi),
                    b.mass.to_string(),
                ])?;
            }
        }
    }
    c.flush()?;
    Ok(())
}

fn ccdf_csv<W: Write>(reports: &[GroupReport], w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["group", "x", "ccdf"])?;
    for r in reports {
        for p in &r.stretch_ccdf {
            c.write_record([r.group.clone(), p.x.to_string(), p.ccdf.to_string()])?;
        }
    }
    c.flush()?;
    Ok(())
}

fn summary_csv<W: Write>(reports: &[GroupReport], w: &mut W) -> Res {
    let mut c = csv::Writer::from_writer(w);
    c.write_record([
        "group",
        "n_ips",
        "n_records",
        "n_single",
        "n_multi",
        "n_indeterminate",
        "n_insufficient",
        "single_fraction",
        "zero_speed_tests",
    ])?;
    for r in reports {
        c.write_record([
            r.group.clone(),
            r.n_ips.to_string(),
            r.n_records.to_string(),
            r.n_single.to_string(),
            r.n_multi.to_string(),
            r.n_indeterminate.to_string(),
            r.n_insufficient.to_string(),
            opt(r.single_fraction),
            r.zero_speed_tests.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    summary: &'a Summary,
    config: &'a Config,
    groups: &'a [GroupReport],
}

fn report_json<W: Write>(out: &PipelineOutput, w: &mut W) -> Res {
    let doc = ReportDocument {
        summary: &out.summary,
        config: &out.config,
        groups: &out.reports,
    };
    serde_json::to_writer_pretty(&mut *w, &doc)?;
    w.write_all(b"\n")?;
    Ok(())
}
