use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bbtier::config::Config;
use bbtier::ingest::Format;
use bbtier::outlier::TauModeName;
use bbtier::report::{
    run_pipeline, write_outputs, write_rejections_ndjson, OutputSelection, PipelineError, PipelineOutput, Surface,
};
use bbtier::synth::{gen_corpus, CorpusSpec, SynthError};
use bbtier::tier::TierBins;

#[derive(Parser)]
#[command(
    name = "bbtier",
    version,
    about = "Speed-tier estimation for broadband speed-test records"
)]
struct Cli {
    #[command(flatten)]
    opts: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "csv|ndjson")]
    format: Option<Format>,
    #[arg(long, global = true, value_name = "N")]
    min_samples: Option<usize>,
    #[arg(long, global = true, value_name = "fixed_k|tau_table")]
    tau_mode: Option<TauModeName>,
    #[arg(long, global = true, value_name = "X")]
    tau_k: Option<f64>,
    #[arg(long, global = true, value_name = "X")]
    alpha: Option<f64>,
    /// Comma-separated bin edges, e.g. 0,8,12,25,50,100.
    #[arg(long, global = true, value_name = "LIST")]
    bins: Option<String>,
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Also write records.csv, series.csv and rejections.ndjson.
    #[arg(long, global = true)]
    emit_intermediate: bool,
    /// Write rejected input lines here instead of stderr.
    #[arg(long, global = true, value_name = "PATH")]
    reject_log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and group records; writes records.csv and series.csv.
    Ingest { inputs: Vec<PathBuf> },
    /// Classify IPs as single or multi household.
    Classify { inputs: Vec<PathBuf> },
    /// Outlier-filter single households and estimate tiers.
    Tiers { inputs: Vec<PathBuf> },
    /// Per-group summary, histograms and report.json.
    Report { inputs: Vec<PathBuf> },
    /// Generate a synthetic corpus with ground truth.
    Synth {
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
    },
    /// Run every stage and write all report files.
    Pipeline { inputs: Vec<PathBuf> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    };
    ExitCode::from(code)
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let code = match e {
            SynthError::Io(_) | SynthError::Csv(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: format!("[synth] {e}"),
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let opts = &cli.opts;
    let (inputs, selection) = match &cli.command {
        Command::Synth { spec } => return synth(spec, opts),
        Command::Ingest { inputs } => (inputs, with_intermediate(OutputSelection::ingest(), opts)),
        Command::Classify { inputs } => (inputs, with_intermediate(OutputSelection::classify(), opts)),
        Command::Tiers { inputs } => (inputs, with_intermediate(OutputSelection::tiers(), opts)),
        Command::Report { inputs } => (inputs, with_intermediate(OutputSelection::report(), opts)),
        Command::Pipeline { inputs } => (inputs, OutputSelection::pipeline(opts.emit_intermediate)),
    };
    if inputs.is_empty() {
        return Err(Failure::usage("no input files given"));
    }
    let config = load_config(opts)?;
    let out = run_pipeline(inputs, &config)?;
    log_rejections(&out, opts)?;
    write_outputs(&out, &opts.out, &selection)?;
    let s = &out.summary;
    eprintln!(
        "{} records read, {} rejected, {} series, wrote {}",
        s.records_in,
        s.records_rejected,
        s.n_series,
        opts.out.display()
    );
    Ok(())
}

fn with_intermediate(selection: OutputSelection, opts: &Shared) -> OutputSelection {
    let mut all = selection.0;
    if opts.emit_intermediate {
        for s in [Surface::Records, Surface::Series, Surface::Rejections] {
            if !all.contains(&s) {
                all.push(s);
            }
        }
    }
    OutputSelection(all)
}

fn load_config(opts: &Shared) -> Result<Config, Failure> {
    let mut config = match &opts.config {
        Some(path) => Config::load(path).map_err(PipelineError::from)?,
        None => Config::default(),
    };
    if let Some(f) = opts.format {
        config.ingest.format = f;
    }
    if let Some(n) = opts.min_samples {
        config.classify.min_samples = n;
    }
    if let Some(m) = opts.tau_mode {
        config.outlier.mode = m.to_string();
    }
    if let Some(k) = opts.tau_k {
        config.outlier.k = k;
    }
    if let Some(a) = opts.alpha {
        config.outlier.alpha = a;
    }
    if let Some(list) = &opts.bins {
        let bins: TierBins = list
            .parse()
            .map_err(|e| Failure::usage(format!("[config] --bins: {e}")))?;
        config.tier.bins = bins.edges().to_vec();
    }
    config.validate().map_err(PipelineError::from)?;
    Ok(config)
}

fn log_rejections(out: &PipelineOutput, opts: &Shared) -> Result<(), Failure> {
    if out.rejections.is_empty() && opts.reject_log.is_none() {
        return Ok(());
    }
    let result = match &opts.reject_log {
        Some(path) => File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            write_rejections_ndjson(&out.rejections, &mut w)?;
            w.flush()
        }),
        None => write_rejections_ndjson(&out.rejections, io::stderr().lock()),
    };
    result.map_err(|e| Failure {
        code: 1,
        message: format!("[ingest] writing rejection log: {e}"),
    })
}

fn synth(spec: &Path, opts: &Shared) -> Result<(), Failure> {
    let spec = CorpusSpec::load(spec)?;
    let corpus = gen_corpus(&spec, opts.seed)?;
    corpus.write_to_dir(&opts.out)?;
    eprintln!(
        "{} records for {} IPs, wrote {}",
        corpus.records.len(),
        corpus.truth.len(),
        opts.out.display()
    );
    Ok(())
}
