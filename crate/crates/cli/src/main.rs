//! `rsm`: synthetic data generation, subject ranking and identification
//! experiments from the command line.
//!
//! Diagnostics go to stderr (`RSM_LOG={error,warn,info,debug}` controls
//! verbosity); the primary result document is the only thing on stdout.
//! Exit codes: 0 success, 2 config/parse error, 3 data mismatch,
//! 4 numerical failure.

mod config_doc;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rsm_core::config::RunConfig;
use rsm_core::error::Error as CoreError;
use rsm_core::eval::{
    cmc_csv, lambda_csv, rank_probe, run_experiment, sweep_csv, sweep_l, sweep_lambda,
    ExperimentOutcome, Method,
};
use rsm_core::gallery::{Gallery, ProbeSet};
use rsm_core::io;
use rsm_core::ranking::{RankingConfig, ResidualKind};

use config_doc::ExperimentConfigDoc;
use manifest::{sha256_hex, Manifest};

#[derive(Parser)]
#[command(name = "rsm", version, about = "Joint-block-sparse Bayesian subject ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic gallery, probes and manifest into a directory.
    Generate(GenerateArgs),
    /// Rank gallery subjects against one probe; JSON result on stdout.
    Rank(RankArgs),
    /// Run repeated-trial identification experiments and write
    /// results.json, cmc.csv and sweep tables.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config JSON (the `generator` block drives generation).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Rsm,
    Isr,
    Src,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Rsm => Method::Rsm,
            MethodArg::Isr => Method::Isr,
            MethodArg::Src => Method::Src,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ResidualArg {
    Srid,
    #[value(name = "isr-min")]
    IsrMin,
}

#[derive(Args)]
struct RankArgs {
    /// Gallery matrix CSV (one row of A per line).
    #[arg(long)]
    gallery: PathBuf,
    /// Subject labels, one integer per gallery column.
    #[arg(long)]
    labels: PathBuf,
    /// Probe matrix CSV (columns are frames).
    #[arg(long)]
    probe: PathBuf,
    /// Inference/baseline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rsm")]
    method: MethodArg,
    /// Dense-noise variance override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Sweep budget override.
    #[arg(long = "T")]
    iterations: Option<usize>,
    /// Early-stop threshold override.
    #[arg(long)]
    tol: Option<f64>,
    /// Snapshot fraction override.
    #[arg(long)]
    zeta: Option<f64>,
    /// Budget decay override.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rank only this many subjects (default: all).
    #[arg(long = "max-ranks")]
    max_ranks: Option<usize>,
    /// Residual used to score subjects.
    #[arg(long, value_enum, default_value = "srid")]
    residual: ResidualArg,
    /// Scale gallery columns to unit norm before ranking.
    #[arg(long)]
    normalize: bool,
    /// Identifier written into the result (default: probe file stem).
    #[arg(long = "probe-id")]
    probe_id: Option<String>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-frame solves.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Restrict to a single method.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    trials: Option<usize>,
    /// Probe lengths for the L sweep, e.g. `1,2,4`.
    #[arg(long = "sweep-L")]
    sweep_l: Option<String>,
    /// Worker threads for trials and probes.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dense-noise variance override.
    #[arg(long)]
    lambda: Option<f64>,
    /// Sweep budget override.
    #[arg(long = "T")]
    iterations: Option<usize>,
    /// Early-stop threshold override.
    #[arg(long)]
    tol: Option<f64>,
    /// Snapshot fraction override.
    #[arg(long)]
    zeta: Option<f64>,
    /// Budget decay override.
    #[arg(long)]
    tau: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::DimensionMismatch(_))
        | Some(CoreError::NonFinite(_))
        | Some(CoreError::SubjectAbsent(_)) => 3,
        Some(CoreError::Numerical { .. }) => 4,
        Some(_) | None => 2,
    }
}

fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // a pool may already exist when invoked twice in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn read_config_text(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(text)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let text = read_config_text(&args.config)?;
    let mut doc = ExperimentConfigDoc::from_json(&text)?;
    if let Some(seed) = args.seed {
        doc.generator.seed = seed;
    }

    let instance = rsm_core::synth::generate_instance(&doc.generator)?;
    std::fs::create_dir_all(&args.out).context("creating output directory")?;

    let mut manifest = Manifest::new("generate", sha256_hex(text.as_bytes()));

    let gallery_csv = io::matrix_to_csv(instance.gallery.matrix());
    std::fs::write(args.out.join("gallery.csv"), &gallery_csv)?;
    manifest.record_file("gallery.csv", gallery_csv.as_bytes());

    let labels: Vec<i64> = instance
        .gallery
        .labels()
        .iter()
        .map(|&c| instance.gallery.original_label(c).unwrap_or(c.0 as i64))
        .collect();
    let labels_text = io::labels_to_text(&labels);
    std::fs::write(args.out.join("labels.csv"), &labels_text)?;
    manifest.record_file("labels.csv", labels_text.as_bytes());

    for probe in &instance.probes {
        let subject = probe.true_subject.expect("generated probe has a subject");
        let label = instance.gallery.original_label(subject).unwrap_or(subject.0 as i64);
        let name = format!("probe_{label}.csv");
        let probe_csv = io::matrix_to_csv(probe.matrix());
        std::fs::write(args.out.join(&name), &probe_csv)?;
        manifest.record_file(&name, probe_csv.as_bytes());
    }

    manifest.write(&args.out).context("writing manifest")?;
    info!(
        "generated {} gallery columns and {} probes into {}",
        instance.gallery.num_columns(),
        instance.probes.len(),
        args.out.display()
    );
    Ok(())
}

fn run_config_for_rank(args: &RankArgs) -> Result<RunConfig> {
    let mut run = match &args.config {
        Some(path) => RunConfig::from_json(&read_config_text(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.lambda {
        run.lambda = v;
    }
    if let Some(v) = args.iterations {
        run.max_iters = v;
    }
    if let Some(v) = args.tol {
        run.tol = v;
    }
    if let Some(v) = args.zeta {
        run.zeta = v;
    }
    if let Some(v) = args.tau {
        run.tau = v;
    }
    if let Some(v) = args.seed {
        run.seed = v;
    }
    run.validate()?;
    Ok(run)
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    configure_jobs(args.jobs);
    let run = run_config_for_rank(&args)?;

    let matrix = io::read_matrix(&args.gallery)?;
    let labels = io::read_labels(&args.labels)?;
    let mut gallery = Gallery::build(matrix, &labels)?;
    if args.normalize {
        gallery = gallery.normalized_columns();
    }
    let probe = ProbeSet::new(io::read_matrix(&args.probe)?)?;
    probe.check_dims(&gallery)?;

    let ranking = RankingConfig {
        zeta: run.zeta,
        tau: run.tau,
        residual_kind: match args.residual {
            ResidualArg::Srid => ResidualKind::Srid,
            ResidualArg::IsrMin => ResidualKind::IsrMin,
        },
        max_ranks: args.max_ranks,
    };
    let result = rank_probe(
        args.method.into(),
        &gallery,
        &probe,
        &run.hyperparams(),
        &run.inference_config(),
        &ranking,
        &run.baseline,
    )?;

    let probe_id = args.probe_id.clone().unwrap_or_else(|| {
        args.probe.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "probe".into())
    });
    let report = result.to_report(&gallery, &probe_id);
    let mut text = serde_json::to_string_pretty(&report).context("serializing result")?;
    text.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, text).context("writing result")?,
        None => print!("{text}"),
    }
    info!("ranked {} subjects for probe {probe_id}", report.psi.len());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    configure_jobs(args.jobs);
    let text = read_config_text(&args.config)?;
    let mut doc = ExperimentConfigDoc::from_json(&text)?;
    if let Some(m) = args.method {
        doc.methods = vec![m.into()];
    }
    if let Some(t) = args.trials {
        doc.trials = t;
    }
    if let Some(seed) = args.seed {
        doc.generator.seed = seed;
    }
    if let Some(v) = args.lambda {
        doc.run.lambda = v;
    }
    if let Some(v) = args.iterations {
        doc.run.max_iters = v;
    }
    if let Some(v) = args.tol {
        doc.run.tol = v;
    }
    if let Some(v) = args.zeta {
        doc.run.zeta = v;
    }
    if let Some(v) = args.tau {
        doc.run.tau = v;
    }
    if let Some(list) = &args.sweep_l {
        let values = list
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|e| CoreError::Parse(format!("--sweep-L entry {tok:?}: {e}")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        doc.sweep_l = Some(values);
    }
    doc.validate()?;

    let config_hash = sha256_hex(text.as_bytes());
    let plan = doc.to_plan();
    std::fs::create_dir_all(&args.out).context("creating output directory")?;
    let mut manifest = Manifest::new("experiment", config_hash.clone());

    info!("running {} trials x {} methods", plan.trials, plan.methods.len());
    let outcome = run_experiment(&plan)?;
    let results = ResultsDoc { config_hash, outcome };
    let mut results_text = serde_json::to_string_pretty(&results).context("serializing results")?;
    results_text.push('\n');
    std::fs::write(args.out.join("results.json"), &results_text)?;
    manifest.record_file("results.json", results_text.as_bytes());

    for (i, aggregate) in results.outcome.aggregates.iter().enumerate() {
        let csv = cmc_csv(aggregate);
        if i == 0 {
            std::fs::write(args.out.join("cmc.csv"), &csv)?;
            manifest.record_file("cmc.csv", csv.as_bytes());
        }
        let name = format!("cmc_{}.csv", aggregate.method);
        std::fs::write(args.out.join(&name), &csv)?;
        manifest.record_file(&name, csv.as_bytes());
    }

    if let Some(values) = &doc.sweep_l {
        info!("sweeping L over {values:?}");
        let rows = sweep_l(&plan, values)?;
        let csv = sweep_csv(&rows);
        std::fs::write(args.out.join("sweep.csv"), &csv)?;
        manifest.record_file("sweep.csv", csv.as_bytes());
    }

    if let Some(grid) = &doc.lambda_grid {
        info!("sweeping lambda over {grid:?}");
        let rows = sweep_lambda(&plan, grid)?;
        let csv = lambda_csv(&rows);
        std::fs::write(args.out.join("lambda_sweep.csv"), &csv)?;
        manifest.record_file("lambda_sweep.csv", csv.as_bytes());
    }

    manifest.write(&args.out).context("writing manifest")?;
    info!("results written to {}", args.out.display());
    Ok(())
}

/// results.json top-level document.
#[derive(serde::Serialize, serde::Deserialize)]
struct ResultsDoc {
    config_hash: String,
    #[serde(flatten)]
    outcome: ExperimentOutcome,
}
