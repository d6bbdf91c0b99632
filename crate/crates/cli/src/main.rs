//! `semmap`: build, query and evaluate instance-level semantic maps.
//!
//! Exit codes: 0 success, 1 other failure, 2 malformed input file,
//! 3 empty map, 4 invalid configuration or arguments.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use semmap_core::cache::AreaMode;
use semmap_core::config::EngineConfig;
use semmap_core::eval::{evaluate, CategoryFile, GroundTruth};
use semmap_core::map::SemanticMap;
use semmap_core::pipeline::{build_from_archive, read_queries, run_queries, validate_archive};
use semmap_core::ply::{export_ply, instance_color};
use semmap_core::query::QueryMode;
use semmap_core::sampling::SamplingStrategy;
use semmap_core::synth::{generate_scene, presets, write_scene, SceneSpec};
use semmap_core::Error;

#[derive(Parser)]
#[command(name = "semmap", version, about = "Instance-level open-vocabulary semantic mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene into a frame archive with ground truth and queries.
    Gen(GenArgs),
    /// Integrate a frame archive into a map file.
    Build(BuildArgs),
    /// Resolve natural-language queries against a map.
    Query(QueryArgs),
    /// Score a map against ground-truth labels.
    Eval(EvalArgs),
    /// Write reconstructed points as a binary PLY.
    ExportPly(ExportArgs),
    /// Check every frame of an archive and report problems.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Scene description (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    spec: Option<PathBuf>,
    /// Built-in scene: abutting-boxes, similar-instances, desk, sphere.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Confidence,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum AreaArg {
    Footprint,
    InverseDepth,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Engine settings (TOML); flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
    #[arg(long)]
    block_capacity: Option<usize>,
    #[arg(long)]
    cache_capacity: Option<usize>,
    #[arg(long, value_enum)]
    area_mode: Option<AreaArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the ingest report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    TwoStage,
    ObjectOnly,
    EnvironmentOnly,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    map: PathBuf,
    /// JSON-lines query file.
    #[arg(long)]
    queries: PathBuf,
    /// Candidate band width; defaults to the map's configured value.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "two-stage")]
    mode: ModeArg,
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    categories: PathBuf,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-class table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlySource {
    /// Zero crossings of the distance field, with fused color.
    Surface,
    /// Sampled instance points, colored by instance.
    Instances,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "surface")]
    source: PlySource,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    archive: PathBuf,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen(args: GenArgs) -> Result<()> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => SceneSpec::load(path)?,
        (None, Some(name)) => presets::by_name(name, args.seed.unwrap_or(0))?,
        (None, None) => unreachable!("clap requires one of --spec/--preset"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec, spec.seed)?;
    let report = write_scene(&scene, &args.out)?;
    info!("wrote {} frames to {}", report.frames, args.out.display());
    print_json(&report)
}

fn engine_config(args: &BuildArgs) -> Result<EngineConfig> {
    let mut cfg = match &args.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(s) = args.sampling {
        cfg.sampling = match s {
            SamplingArg::Confidence => SamplingStrategy::Confidence,
            SamplingArg::Random => SamplingStrategy::Random,
        };
    }
    if let Some(n) = args.block_capacity {
        cfg.block_capacity = n;
    }
    if let Some(n) = args.cache_capacity {
        cfg.cache_capacity = n;
        cfg.environment_cache_capacity = n;
    }
    if let Some(a) = args.area_mode {
        cfg.area_mode = match a {
            AreaArg::Footprint => AreaMode::Footprint,
            AreaArg::InverseDepth => AreaMode::InverseDepth,
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build(args: BuildArgs) -> Result<()> {
    let cfg = engine_config(&args)?;
    let (map, report) = build_from_archive(&args.archive, &cfg)?;
    map.write(&args.out)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &args.report {
        write_json(&report, path)?;
    }
    print_json(&report)
}

fn query(args: QueryArgs) -> Result<()> {
    let map = SemanticMap::read(&args.map)?;
    let queries = read_queries(&args.queries)?;
    let mode = match args.mode {
        ModeArg::TwoStage => QueryMode::TwoStage,
        ModeArg::ObjectOnly => QueryMode::ObjectOnly,
        ModeArg::EnvironmentOnly => QueryMode::EnvironmentOnly,
    };
    let results = run_queries(&map, &queries, args.alpha, mode)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for r in &results {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let map = SemanticMap::read(&args.map)?;
    let gt = GroundTruth::read(&args.gt)?;
    let categories = CategoryFile::read(&args.categories)?;
    let metrics = evaluate(&map, &gt, &categories)?;
    if let Some(path) = &args.out {
        write_json(&metrics, path)?;
    }
    if let Some(path) = &args.csv {
        fs::write(path, metrics.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&metrics)
}

fn export(args: ExportArgs) -> Result<()> {
    let map = SemanticMap::read(&args.map)?;
    let (points, colors) = match args.source {
        PlySource::Surface => {
            let cloud = map.grid().extract_surface_points();
            (cloud.positions, cloud.colors)
        }
        PlySource::Instances => {
            let pts = map.labeled_points();
            let colors = pts.iter().map(|p| instance_color(p.owner)).collect();
            (pts.into_iter().map(|p| p.position).collect(), colors)
        }
    };
    export_ply(&points, &colors, &args.out)?;
    info!("wrote {} points to {}", points.len(), args.out.display());
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<bool> {
    let summary = validate_archive(&args.archive)?;
    print_json(&summary)?;
    Ok(summary.valid)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Format(_) | Error::Frame { .. } | Error::Sequence(_)) => 2,
        Some(Error::EmptyMap) => 3,
        Some(Error::Config(_) | Error::Spec(_) | Error::InvalidArgument(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::ExportPly(a) => export(a),
        Command::Validate(a) => match validate(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
