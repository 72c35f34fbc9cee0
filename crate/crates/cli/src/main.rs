use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsd_cli::bundle::{self, TrainRequest};
use rsd_cli::config::{RunConfig, SynthSource};
use rsd_cli::fsutil::atomic_write;
use rsd_cli::{emit_report, run_pipeline};
use rsd_core::dataset::{FeatureTable, VarietySelection};
use rsd_core::error::ErrorKind;
use rsd_core::geodata;
use rsd_core::indices::{self, BandRoleMap};
use rsd_core::learners::Algorithm;
use rsd_core::screening;
use rsd_core::synth;
use rsd_core::tuning::{HalvingConfig, ParamGrid};
use rsd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rsd", version, about = "Pixel-level crop disease classification from multispectral rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled scene (rasters, blocks, features).
    Synth(SynthArgs),
    /// Extract labeled pixels from rasters and block polygons.
    Ingest(IngestArgs),
    /// Compute the 28-column feature table.
    Features(FeaturesArgs),
    /// Welch t-test screening with Bonferroni correction.
    Screen(ScreenArgs),
    /// Tune and fit one (variety, algorithm) cell.
    Train(TrainArgs),
    /// Bootstrap a trained bundle on its held-out rows.
    Evaluate(EvaluateArgs),
    /// Label-permutation test for a trained bundle.
    Permtest(PermtestArgs),
    /// Summarize a finished run directory.
    Report(ReportArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic scene config; without it the survey-count fixture is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Class separation of the fixture, in units of band noise.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict the fixture to these varieties.
    #[arg(long, value_delimiter = ',')]
    varieties: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RasterInputs {
    /// Band manifest JSON mapping band names to rasters.
    #[arg(long)]
    manifest: PathBuf,
    /// GeoJSON FeatureCollection of labeled blocks.
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long, default_value_t = geodata::DEFAULT_SCALE)]
    scale: f64,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    inputs: RasterInputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Pixels CSV from `ingest`.
    #[arg(long, conflicts_with_all = ["manifest", "blocks"])]
    pixels: Option<PathBuf>,
    #[arg(long, requires = "blocks")]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    blocks: Option<PathBuf>,
    #[arg(long, default_value_t = geodata::DEFAULT_SCALE)]
    scale: f64,
    /// Role override such as R550=B03; repeatable.
    #[arg(long = "role", value_parser = parse_pair)]
    roles: Vec<(String, String)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScreenArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Variety settings; defaults to every variety plus ALL.
    #[arg(long, value_delimiter = ',')]
    varieties: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Variety name or ALL.
    #[arg(long)]
    variety: String,
    #[arg(long)]
    algorithm: Algorithm,
    /// JSON grid, e.g. {"C": [1, 10]}; defaults to the built-in grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    eta: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    seed: u64,
    /// Tune and fit on every balanced row and write hyperparams_table.csv.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Split CSV written by `train`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = 5000)]
    b: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PermtestArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Bootstrap distribution from `evaluate`.
    #[arg(long)]
    bootstrap: PathBuf,
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    run_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',')]
    varieties: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b_bootstrap: Option<usize>,
    #[arg(long)]
    b_permutation: Option<usize>,
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(|| format!("expected ROLE=BAND, got {s:?}"))
}

fn selections(names: &[String], table: &FeatureTable) -> Result<Vec<VarietySelection>> {
    if names.is_empty() {
        let mut v: Vec<VarietySelection> =
            table.distinct_varieties().into_iter().map(VarietySelection::Variety).collect();
        v.push(VarietySelection::All);
        return Ok(v);
    }
    names.iter().map(|s| s.parse()).collect()
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => read_json_file::<SynthSource>(p)?.to_config(),
        None => SynthSource::Fixture {
            separation: a.separation,
            seed: a.seed,
            varieties: (!a.varieties.is_empty()).then(|| a.varieties.clone()),
        }
        .to_config(),
    };
    let scene = synth::generate_synthetic_scene(&cfg)?;
    let files = synth::write_scene(&scene, &a.out)?;
    let (pos, neg) = scene.table.class_counts();
    println!("wrote {} ({pos} positive, {neg} negative pixels)", files.manifest.display());
    Ok(())
}

fn extract(inputs: &RasterInputs) -> Result<Vec<geodata::LabeledPixel>> {
    let stack = geodata::load_band_manifest(&inputs.manifest, inputs.scale)?;
    let blocks = geodata::load_blocks(&inputs.blocks)?;
    geodata::extract_labeled_pixels(&stack, &blocks)
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let pixels = extract(&a.inputs)?;
    atomic_write(&a.out, |p| geodata::write_pixels_csv(&pixels, p))?;
    println!("wrote {} labeled pixels to {}", pixels.len(), a.out.display());
    Ok(())
}

fn cmd_features(a: FeaturesArgs) -> Result<()> {
    let pixels = match (&a.pixels, &a.manifest, &a.blocks) {
        (Some(p), _, _) => geodata::read_pixels_csv(p)?,
        (None, Some(m), Some(b)) => extract(&RasterInputs {
            manifest: m.clone(),
            blocks: b.clone(),
            scale: a.scale,
        })?,
        _ => return Err(Error::Config("give --pixels or --manifest with --blocks".into())),
    };
    let roles = BandRoleMap::with_overrides(a.roles.iter().map(|(r, b)| (r.as_str(), b.as_str())))?;
    let build = indices::build_feature_matrix(&pixels, &roles)?;
    atomic_write(&a.out, |p| build.table.write_csv(p))?;
    println!("wrote {} rows, dropped {} pixels", build.table.len(), build.dropped);
    for (name, n) in &build.drop_reasons {
        println!("  {name}: {n}");
    }
    Ok(())
}

fn cmd_screen(a: ScreenArgs) -> Result<()> {
    let (table, _) = FeatureTable::read_csv(&a.features)?;
    let report = screening::screen_table(&table, &selections(&a.varieties, &table)?, a.alpha)?;
    atomic_write(&a.out, |p| report.write_csv(p))?;
    println!(
        "{} of {} tests significant at threshold {:.3e}",
        report.significant().count(),
        report.m,
        report.threshold
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let grid = match &a.grid {
        Some(p) => read_json_file::<ParamGrid>(p)?,
        None => ParamGrid::default_for(a.algorithm),
    };
    let out = bundle::train(&TrainRequest {
        features: &a.features,
        variety: a.variety.parse()?,
        algorithm: a.algorithm,
        grid,
        k: a.k,
        halving: HalvingConfig { eta: a.eta, r0: None },
        test_fraction: a.test_fraction,
        seed: a.seed,
        full: a.full,
        out_dir: &a.out,
    })?;
    println!("wrote {}", out.bundle.display());
    if let Some(s) = &out.split {
        println!("wrote {}", s.display());
    }
    if let Some(h) = &out.hyperparams {
        println!("wrote {}", h.display());
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    if !a.algorithms.is_empty() {
        cfg.algorithms = a.algorithms;
    }
    if !a.varieties.is_empty() {
        cfg.varieties = Some(a.varieties);
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(b) = a.b_bootstrap {
        cfg.b_bootstrap = b;
    }
    if let Some(b) = a.b_permutation {
        cfg.b_permutation = b;
    }
    let outcome = run_pipeline(&cfg)?;
    let failed: Vec<_> = outcome.failed().collect();
    if failed.is_empty() {
        let report = emit_report(&outcome.output_dir)?;
        println!("{} cells complete; summary at {}", report.rows.len(), report.csv.display());
        return Ok(ExitCode::SUCCESS);
    }
    for c in &failed {
        eprintln!(
            "cell {}/{} failed: {}",
            c.variety,
            c.algorithm,
            c.message.as_deref().unwrap_or("unknown error")
        );
    }
    let code = if failed.iter().any(|c| c.error_kind.as_deref() == Some("convergence")) {
        4
    } else if failed.iter().any(|c| c.error_kind.as_deref() == Some("config")) {
        2
    } else {
        3
    };
    Ok(ExitCode::from(code))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Ingest(a) => cmd_ingest(a)?,
        Command::Features(a) => cmd_features(a)?,
        Command::Screen(a) => cmd_screen(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Evaluate(a) => {
            let p = bundle::evaluate(&a.bundle, &a.split, a.b, &a.out)?;
            println!("wrote {}", p.display());
        }
        Command::Permtest(a) => {
            let p = bundle::permtest(&a.bundle, &a.split, &a.bootstrap, a.b, &a.out)?;
            println!("wrote {}", p.display());
        }
        Command::Report(a) => {
            let r = emit_report(&a.run_dir)?;
            println!("{} rows written to {}", r.rows.len(), r.csv.display());
        }
        Command::Run(a) => return cmd_run(a),
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Convergence => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
