//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//!     cargo test -p bbtier --test acceptance

// `ensure!(x <= tol)` must also fail when x is NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bbtier::config::Config;
use bbtier::corr::{pearson_rho, rho_by_month, Label};
use bbtier::ingest::{window_by_month, write_records_csv};
use bbtier::outlier::{stretch_ccdf, stretch_factor, tau_filter, thompson_tau, TauConfig};
use bbtier::report::run_pipeline;
use bbtier::synth::{gen_corpus, gen_household, gen_shared_ip, CorpusSpec, HouseholdModel, Kind, SharedIpModel};
use bbtier::tier::{bin_tiers, TierBins};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("pearson oracle equivalence", pearson_oracle),
        ("scale invariance", scale_invariance),
        ("ground-truth sign flip", sign_flip),
        ("thompson tau hand-derived cases", tau_cases),
        ("filter laws", filter_laws),
        ("histogram and ccdf laws", histogram_laws),
        ("end-to-end synthetic recovery", end_to_end),
        ("determinism", determinism),
        ("monthly consistency", monthly),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(start: Instant, limit_secs: u64) -> Result<Duration, String> {
    let t = start.elapsed();
    if t > Duration::from_secs(limit_secs) {
        return Err(format!("took {t:?}, limit {limit_secs}s"));
    }
    Ok(t)
}

/// Textbook two-pass Pearson coefficient.
fn two_pass_rho(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn random_series(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(2..=500);
    let integer_y = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            let x = rng.random_range(0.0..=1000.0);
            let y = if integer_y {
                rng.random_range(0..=1000) as f64
            } else {
                rng.random_range(0.0..=1000.0)
            };
            (x, y)
        })
        .collect()
}

fn pearson_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let pairs = random_series(&mut rng);
        let got = pearson_rho(&pairs).map_err(|e| e.to_string())?;
        match (got, two_pass_rho(&pairs)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (a, b) => ensure!(a == b, "series {i}: {a:?} vs {b:?}"),
        }
    }
    ensure!(worst <= 1e-12, "max |diff| {worst:e}");
    let t = within(start, 5)?;
    Ok(format!("1000 series, max |diff| {worst:.1e}, {t:.2?}"))
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let pairs = random_series(&mut rng);
        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let b = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (a * x, b * y)).collect();
        let r0 = pearson_rho(&pairs).unwrap();
        let r1 = pearson_rho(&scaled).unwrap();
        match (r0, r1) {
            (Some(p), Some(q)) => worst = worst.max((p - q).abs()),
            _ => ensure!(r0 == r1, "series {i}: {r0:?} vs {r1:?}"),
        }
    }
    ensure!(worst <= 1e-12, "max |diff| {worst:e}");
    Ok(format!("100 series, max |diff| {worst:.1e}"))
}

fn rho(pairs: &[(f64, f64)]) -> f64 {
    pearson_rho(pairs).unwrap().unwrap_or(0.0)
}

fn sign_flip() -> Outcome {
    let start = Instant::now();
    let slow = HouseholdModel::with_capacity(8.0);
    let fast = HouseholdModel::with_capacity(20.0);
    let (mut neg_slow, mut neg_fast, mut pos_pooled) = (0, 0, 0);
    for seed in 0..100u64 {
        let a = gen_household(&slow, 200, 2 * seed).unwrap().pairs();
        let b = gen_household(&fast, 200, 2 * seed + 1).unwrap().pairs();
        neg_slow += (rho(&a) < 0.0) as usize;
        neg_fast += (rho(&b) < 0.0) as usize;
        let pooled: Vec<(f64, f64)> = a.into_iter().chain(b).collect();
        pos_pooled += (rho(&pooled) > 0.0) as usize;
    }
    let detail = format!("8 Mbps rho<0 {neg_slow}/100, 20 Mbps rho<0 {neg_fast}/100, pooled rho>0 {pos_pooled}/100");
    ensure!(neg_slow >= 95 && neg_fast >= 95 && pos_pooled >= 90, "{detail}");
    within(start, 10)?;
    Ok(detail)
}

fn tau_cases() -> Outcome {
    // Ten points, fixed k = 2:
    //   sum 243, mean 24.3, sum of squared deviations 1424.1, s = sqrt(1424.1/9) = 12.579
    //   |60 - 24.3| = 35.7 > 2s = 25.16, so 60 goes.
    //   Remaining nine: sum 183, mean 20.333, squared deviations sum to 8, s = 1,
    //   largest deviation |22 - 20.333| = 1.667 < 2. Stop.
    //   Stretch factor 60 / 22 = 2.72727.
    let ten = [20., 21., 19., 22., 20., 21., 20., 19., 21., 60.];
    let r = tau_filter(&ten, &TauConfig::fixed_k(2.0));
    ensure!(r.rejected == vec![60.0], "ten-point rejected {:?}", r.rejected);
    let sf = stretch_factor(60.0, r.kept_max().unwrap()).map_err(|e| e.to_string())?;
    ensure!((sf - 2.727).abs() <= 0.001, "stretch factor {sf}");

    // Five points:
    //   sum 101.7, mean 20.34, sum of squared deviations 1966.712, s = 22.1738
    //   |60 - 20.34| = 39.66.
    //   fixed k = 2: 2s = 44.348 > 39.66, so 60 is kept.
    //   tau table, alpha 0.05: t(0.025, df 3) = 3.18245,
    //   tau = 3.18245 * 4 / (sqrt 5 * sqrt(3 + 3.18245^2)) = 1.57122,
    //   tau * s = 34.84 < 39.66, so 60 is rejected. The remaining four have
    //   mean 10.425, s = 0.43493, tau(4) = 1.42500, tau * s = 0.6198 > 0.575.
    let five = [10., 10.5, 11., 10.2, 60.];
    let fixed = tau_filter(&five, &TauConfig::fixed_k(2.0));
    ensure!(fixed.rejected.is_empty(), "fixed_k rejected {:?}", fixed.rejected);
    let tau = thompson_tau(5, 0.05);
    ensure!((tau - 1.57122).abs() < 1e-5, "tau(5) = {tau}");
    let table = tau_filter(&five, &TauConfig::tau_table(0.05));
    ensure!(table.rejected == vec![60.0], "tau_table rejected {:?}", table.rejected);
    Ok(format!(
        "ten-point rejects {{60}}, stretch {sf:.4}; five-point fixed_k keeps 60, tau_table (tau={tau:.4}) rejects it"
    ))
}

fn random_speeds(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(0..=60);
    let cap = rng.random_range(1.0..200.0);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..cap)).collect();
    // a few spikes and duplicates
    for _ in 0..rng.random_range(0..3) {
        v.push(cap * rng.random_range(1.0..4.0));
    }
    if let Some(&x) = v.first() {
        v.push(x);
    }
    v
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn filter_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let configs = [TauConfig::fixed_k(2.0), TauConfig::tau_table(0.05)];
    for i in 0..1000 {
        let speeds = random_speeds(&mut rng);
        let cfg = &configs[i % 2];
        let r = tau_filter(&speeds, cfg);
        let mut both = r.kept.clone();
        both.extend(&r.rejected);
        ensure!(
            sorted(both) == sorted(speeds.clone()),
            "input {i}: kept + rejected != input"
        );
        let again = tau_filter(&r.kept, cfg);
        ensure!(
            again.rejected.is_empty(),
            "input {i}: refiltering rejected {:?}",
            again.rejected
        );
        let positive: Vec<f64> = r.kept.iter().copied().filter(|&v| v > 0.0).collect();
        if let (Some(raw), Some(kept)) = (
            speeds.iter().copied().reduce(f64::max),
            positive.into_iter().reduce(f64::max),
        ) {
            let sf = stretch_factor(raw, kept).map_err(|e| format!("input {i}: {e}"))?;
            ensure!(sf >= 1.0, "input {i}: stretch factor {sf}");
        }
        let mut shuffled = speeds.clone();
        shuffled.shuffle(&mut rng);
        let p = tau_filter(&shuffled, cfg);
        ensure!(
            sorted(p.kept) == sorted(r.kept),
            "input {i}: kept multiset depends on order"
        );
    }
    Ok("1000 inputs: conservation, idempotence, stretch >= 1, permutation invariance".into())
}

fn histogram_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bins = TierBins::default();
    for i in 0..1000 {
        let n = rng.random_range(1..200);
        let tiers: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..150.0)).collect();
        let h = bin_tiers(&tiers, &bins);
        let total: f64 = h.masses().iter().sum();
        ensure!((total - 1.0).abs() <= 1e-9, "case {i}: masses sum to {total}");
        let factors: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let ccdf = stretch_ccdf(&factors);
        ensure!(
            ccdf.iter().all(|p| (0.0..=1.0).contains(&p.ccdf)),
            "case {i}: ccdf outside [0, 1]"
        );
        ensure!(
            ccdf.windows(2).all(|w| w[0].x < w[1].x && w[0].ccdf >= w[1].ccdf),
            "case {i}: ccdf not non-increasing"
        );
    }
    let edges = &bins.edges()[1..];
    let h = bin_tiers(edges, &bins);
    for (j, &e) in edges.iter().enumerate() {
        let bin = &h.bins[j + 1];
        ensure!(bin.lo == e && bin.count == 1, "edge {e} not in the bin starting at {e}");
    }
    Ok(format!("1000 cases; edges {edges:?} land in the upper bin"))
}

fn manifest_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

/// Bins with the planted tiers 8, 20 and 50 well inside a bin.
const RECOVERY_BINS: &str = "0,6,12,25,40,100";
const CORPUS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let spec = CorpusSpec::load(&manifest_path("data/acceptance_corpus.toml")).map_err(|e| e.to_string())?;
    let bins: TierBins = RECOVERY_BINS.parse().unwrap();
    let mut config = Config::default();
    config.tier.bins = bins.edges().to_vec();
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    for seed in CORPUS_SEEDS {
        let corpus = gen_corpus(&spec, seed).map_err(|e| e.to_string())?;
        let n_single = corpus.truth.iter().filter(|t| t.kind == Kind::Single).count();
        ensure!(corpus.truth.len() == 100 && n_single == 70, "corpus shape");
        let min_tests = corpus.records.len() / corpus.truth.len();
        ensure!(min_tests >= 50, "only {min_tests} tests per IP");

        let input = dir.path().join(format!("records_{seed}.csv"));
        let file = std::fs::File::create(&input).unwrap();
        write_records_csv(&corpus.records, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
        let out = run_pipeline(&[input], &config).map_err(|e| e.to_string())?;

        let mut correct = 0;
        let mut within_10 = 0;
        let mut correct_single = 0;
        for t in &corpus.truth {
            let a = out
                .analyses
                .iter()
                .find(|a| a.classification.key.ip == t.ip)
                .ok_or_else(|| format!("no analysis for {}", t.ip))?;
            let expected = match t.kind {
                Kind::Single => Label::SingleHousehold,
                Kind::Shared => Label::MultiHousehold,
            };
            if a.label() != expected {
                continue;
            }
            correct += 1;
            if t.kind == Kind::Single {
                correct_single += 1;
                let tier = a.household.as_ref().map(|h| h.estimate.speed_tier).unwrap_or(0.0);
                if (tier - t.capacity_mbps).abs() <= 0.1 * t.capacity_mbps {
                    within_10 += 1;
                }
            }
        }
        let accuracy = correct as f64 / 100.0;
        let tier_share = within_10 as f64 / correct_single.max(1) as f64;

        let planted: Vec<f64> = corpus
            .truth
            .iter()
            .filter(|t| t.kind == Kind::Single)
            .map(|t| t.capacity_mbps)
            .collect();
        let planted = bin_tiers(&planted, &bins).masses();
        let recovered = out.reports[0].tier_histograms.cleaned.masses();
        let worst_bin = planted
            .iter()
            .zip(&recovered)
            .map(|(p, r)| (p - r).abs())
            .fold(0.0, f64::max);

        details.push(format!(
            "seed {seed}: accuracy {:.0}%, tiers within 10% {:.0}%, worst bin {:.1} pts",
            100.0 * accuracy,
            100.0 * tier_share,
            100.0 * worst_bin
        ));
        ensure!(
            accuracy >= 0.85 && tier_share >= 0.90 && worst_bin <= 0.02 + 1e-12,
            "{}",
            details.last().unwrap()
        );
    }
    within(start, 30)?;
    Ok(details.join("; "))
}

fn bbtier(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bbtier"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "bbtier {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).display().to_string();
    let spec = manifest_path("data/acceptance_corpus.toml").display().to_string();
    let config = manifest_path("data/example_config.toml").display().to_string();
    bbtier(&["synth", "--spec", &spec, "--seed", "42", "--out", &d("corpus_a")])?;
    bbtier(&["synth", "--spec", &spec, "--seed", "42", "--out", &d("corpus_b")])?;
    ensure!(
        read_dir_sorted(&dir.path().join("corpus_a")) == read_dir_sorted(&dir.path().join("corpus_b")),
        "synth output differs between runs"
    );
    let input = d("corpus_a/records.csv");
    for out in ["run_a", "run_b"] {
        bbtier(&[
            "pipeline",
            "--config",
            &config,
            "--seed",
            "42",
            "--emit-intermediate",
            "--out",
            &d(out),
            &input,
        ])?;
    }
    let a = read_dir_sorted(&dir.path().join("run_a"));
    let b = read_dir_sorted(&dir.path().join("run_b"));
    ensure!(a.len() >= 9, "only {} report files", a.len());
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure!(x == y, "{name} differs between runs");
    }
    ensure!(a.len() == b.len(), "file sets differ");
    Ok(format!(
        "synth and {} pipeline files byte-identical across runs",
        a.len()
    ))
}

fn monthly() -> Outcome {
    let single = HouseholdModel::with_capacity(8.0);
    let shared = SharedIpModel::uniform(vec![
        HouseholdModel::with_capacity(8.0),
        HouseholdModel::with_capacity(20.0),
    ])
    .unwrap();
    let (mut single_ok, mut shared_ok) = (0, 0);
    for seed in 0..100u64 {
        let s = gen_household(&single, 458, seed).unwrap();
        let m = gen_shared_ip(&shared, 896, 1000 + seed).unwrap();
        ensure!(
            window_by_month(&s).len() == 4,
            "single series does not span four months"
        );
        ensure!(
            window_by_month(&m).len() == 4,
            "shared series does not span four months"
        );
        let signs = |series| -> Vec<f64> {
            rho_by_month(series, 10)
                .iter()
                .map(|(_, c)| c.rho.unwrap_or(0.0))
                .collect()
        };
        single_ok += signs(&s).iter().all(|&r| r < 0.0) as usize;
        shared_ok += signs(&m).iter().all(|&r| r > 0.0) as usize;
    }
    let detail = format!("single negative every month {single_ok}/100, shared positive every month {shared_ok}/100");
    ensure!(single_ok >= 90 && shared_ok >= 90, "{detail}");
    Ok(detail)
}
