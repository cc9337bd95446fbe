//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid flags or a store that cannot serve the
//! requested protocol, 3 store I/O or validation failure, 4 evaluation abort.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::geometry::GeometryMode;
use crate::harness::{evaluate, sweep, synth_store, FeatureStore, Protocol, StoreLayout, SweepAxes, SynthParams};
use crate::odc::{AnchorInit, ClassifierConfig, WeightFn, WeightInit};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STORE: i32 = 3;
pub const EXIT_EVAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "oblique-fsl", version, about = "Few-shot classification on the oblique manifold")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one configuration and print a JSON report.
    Run(RunArgs),
    /// Evaluate every combination of the listed values and print a JSON array.
    Sweep(SweepArgs),
    /// Write a synthetic pre-pooled feature store.
    Synth(SynthArgs),
    /// Check a feature store file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Feature store to sample episodes from.
    #[arg(long, value_name = "PATH", required_unless_present = "synth", conflicts_with = "synth")]
    features: Option<PathBuf>,
    /// Sample episodes from an in-memory synthetic store instead.
    #[arg(long)]
    synth: bool,
    #[command(flatten)]
    synth_shape: SynthShape,
}

#[derive(Debug, Args)]
struct SynthShape {
    #[arg(long, default_value_t = SynthParams::default().classes)]
    classes: usize,
    /// Records per class; the second half serves as query pool.
    #[arg(long, default_value_t = SynthParams::default().per_class)]
    per_class: usize,
    /// Feature channels n.
    #[arg(long, default_value_t = SynthParams::default().n)]
    dim: usize,
    #[arg(long, default_value_t = SynthParams::default().separation)]
    separation: f64,
    /// Query-half center offset.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    shift: f64,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    #[arg(long, default_value_t = 5)]
    ways: usize,
    #[arg(long, default_value_t = 1)]
    shots: usize,
    /// Query samples per class.
    #[arg(long, default_value_t = 15)]
    queries: usize,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Parallel episode workers; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Master seed for stores, episodes and initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 7.5)]
    gamma: f64,
    /// Conditional-entropy weight.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Cross-entropy weight.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// RSGD iterations per episode.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, value_enum, default_value_t = GeometryMode::Exact)]
    geometry: GeometryMode,
    /// Drop the mutual-information term; --tau defaults to 0.
    #[arg(long)]
    inductive: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Last anchor index [default: 14, or 0 with --inductive]
    #[arg(long)]
    tau: Option<usize>,
    /// Pyramid depth p.
    #[arg(long, default_value_t = 11)]
    pyramid: usize,
    #[arg(long, value_enum, default_value_t = WeightFn::Paper)]
    weight_fn: WeightFn,
    #[arg(long, value_enum, default_value_t = AnchorInit::PseudoKM)]
    anchor_init: AnchorInit,
    #[arg(long, value_enum, default_value_t = WeightInit::Prototype)]
    weight_init: WeightInit,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated anchor counts [default: 14, or 0 with --inductive]
    #[arg(long, value_delimiter = ',')]
    tau: Vec<usize>,
    /// Comma-separated pyramid depths.
    #[arg(long, value_delimiter = ',', default_value = "11")]
    pyramid: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "paper")]
    weight_fn: Vec<WeightFn>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pseudokm")]
    anchor_init: Vec<AnchorInit>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "prototype")]
    weight_init: Vec<WeightInit>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    shape: SynthShape,
    /// Region columns per record.
    #[arg(long, default_value_t = 11)]
    pyramid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    path: PathBuf,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Store(_) | Error::Io(_) => EXIT_STORE,
        Error::InvalidConfig(_) | Error::InsufficientData(_) | Error::PyramidTooDeep { .. } => EXIT_USAGE,
        _ => EXIT_EVAL,
    }
}

fn synth_params(shape: &SynthShape, p: usize, seed: u64) -> SynthParams {
    SynthParams {
        classes: shape.classes,
        per_class: shape.per_class,
        n: shape.dim,
        p,
        separation: shape.separation,
        shift: shape.shift,
        seed,
    }
}

fn load_source(source: &SourceArgs, p: usize, seed: u64) -> crate::Result<FeatureStore> {
    match &source.features {
        Some(path) => FeatureStore::load(path),
        None => synth_store(&synth_params(&source.synth_shape, p, seed)),
    }
}

fn base_config(model: &ModelArgs, protocol: &ProtocolArgs) -> ClassifierConfig {
    ClassifierConfig {
        gamma: model.gamma,
        alpha: model.alpha,
        lambda: model.lambda,
        lr: model.lr,
        iterations: model.iters,
        geometry: model.geometry,
        inductive: model.inductive,
        seed: protocol.seed,
        ..ClassifierConfig::default()
    }
}

fn default_tau(model: &ModelArgs) -> usize {
    if model.inductive {
        ClassifierConfig::inductive().tau
    } else {
        ClassifierConfig::transductive().tau
    }
}

fn protocol_of(a: &ProtocolArgs) -> Protocol {
    Protocol {
        ways: a.ways,
        shots: a.shots,
        queries: a.queries,
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&PathBuf>) -> crate::Result<()> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    json.push('\n');
    match output {
        Some(path) => fs::write(path, json)?,
        None => std::io::stdout().lock().write_all(json.as_bytes())?,
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> crate::Result<()> {
    let store = load_source(&a.source, a.pyramid, a.protocol.seed)?;
    let config = ClassifierConfig {
        tau: a.tau.unwrap_or_else(|| default_tau(&a.model)),
        p: a.pyramid,
        weight_fn: a.weight_fn,
        anchor_init: a.anchor_init,
        weight_init: a.weight_init,
        ..base_config(&a.model, &a.protocol)
    };
    let report = evaluate(&store, &config, a.protocol.episodes, protocol_of(&a.protocol), a.protocol.threads)?;
    emit(&report, a.protocol.output.as_ref())
}

fn cmd_sweep(a: SweepArgs) -> crate::Result<()> {
    if a.source.synth && a.pyramid.len() > 1 {
        return Err(Error::InvalidConfig(
            "a synthetic store is pre-pooled; sweep --pyramid needs a raw --features store".into(),
        ));
    }
    let store = load_source(&a.source, a.pyramid[0], a.protocol.seed)?;
    let axes = SweepAxes {
        tau: if a.tau.is_empty() { vec![default_tau(&a.model)] } else { a.tau },
        p: a.pyramid,
        weight_fn: a.weight_fn,
        anchor_init: a.anchor_init,
        weight_init: a.weight_init,
    };
    let reports = sweep(
        &store,
        &base_config(&a.model, &a.protocol),
        &axes,
        a.protocol.episodes,
        protocol_of(&a.protocol),
        a.protocol.threads,
    )?;
    emit(&reports, a.protocol.output.as_ref())
}

fn cmd_synth(a: SynthArgs) -> crate::Result<()> {
    synth_store(&synth_params(&a.shape, a.pyramid, a.seed))?.save(&a.output)
}

fn cmd_validate(a: ValidateArgs) -> crate::Result<()> {
    let store = FeatureStore::load(&a.path)?;
    let records: usize = store.classes().iter().map(|c| c.records.len()).sum();
    let layout = match store.layout() {
        StoreLayout::Raw { height, width } => format!("raw {}x{height}x{width}", store.channels()),
        StoreLayout::Pooled { p } => format!("pooled {}x{p}", store.channels()),
    };
    println!(
        "ok: {} classes, {records} records, {layout}{}",
        store.classes().len(),
        if store.split_halves() { ", split halves" } else { "" }
    );
    Ok(())
}
