use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use filterprune_core::io::{
    read_dataset, read_model, write_dataset, write_heatmap, write_manifest, write_model, write_report, Model,
    PruneReportFile,
};
use filterprune_core::select::{prune, FpMethod, PruneConfig, PruneStatus, Selector};
use filterprune_core::synth::{generate, GeneratorConfig};
use filterprune_core::tensor::forward;
use filterprune_core::verify::{run_suite, Suite};
use filterprune_core::{count_stats, reduction_report, Activation, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_FILE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "filterprune", version, about = "Filter pruning by sparse approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network with planted redundant filters and a random dataset.
    Gen(GenArgs),
    /// Prune a network and write the pruned model and a report.
    Prune(PruneArgs),
    /// Compare a model's output and size with a reference model.
    Eval(EvalArgs),
    /// Run seeded oracle checks.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    layers: usize,
    #[arg(long)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Fraction of planted filters; one value, or one per layer separated by commas.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    redundancy: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    examples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    FpOmp,
    FpBackward,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Hbgs,
    Hbgts,
    Uniform,
    Random,
}

#[derive(clap::Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "fp-backward")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "hbgts")]
    selector: SelectorArg,
    #[arg(long, default_value_t = 5)]
    alpha: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    floor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON report; the heatmap CSV is written next to it.
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    reference_model: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Theorem1,
    Theorem2,
    OmpOracle,
    BackwardOracle,
    TreeOracle,
    All,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trials per suite; each suite has its own default.
    #[arg(long)]
    trials: Option<usize>,
}

enum Failure {
    Usage(String),
    File(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_)) | Some(Error::InvalidFraction { .. }) => Failure::Usage(format!("{e:#}")),
            _ => Failure::File(e),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// `report.json` -> `report.heatmap.csv`.
fn heatmap_path(report: &Path) -> PathBuf {
    report.with_extension("heatmap.csv")
}

/// `model.json` -> `model.manifest.json`.
fn manifest_path(model: &Path) -> PathBuf {
    model.with_extension("manifest.json")
}

fn cmd_gen(args: GenArgs) -> Result<u8, Failure> {
    let redundancy = match args.redundancy.as_slice() {
        [r] => vec![*r; args.layers],
        list if list.len() == args.layers => list.to_vec(),
        list => return Err(usage(format!("--redundancy has {} values for {} layers", list.len(), args.layers))),
    };
    let cfg = GeneratorConfig {
        layers: args.layers,
        channels: args.channels,
        kernel: args.kernel,
        redundancy,
        examples: args.examples,
        seed: args.seed,
        activation: Activation::Identity,
        spatial: 8,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let g = generate(&cfg).context("generating network")?;
    let model = Model { network: g.network, input_shape: vec![args.channels, cfg.spatial, cfg.spatial] };
    write_model(&args.out_model, &model).context("writing model")?;
    write_manifest(manifest_path(&args.out_model), &g.manifest).context("writing manifest")?;
    write_dataset(&args.out_data, &g.dataset).context("writing dataset")?;
    let planted: usize = g.manifest.layers.iter().map(|l| l.planted.len()).sum();
    println!(
        "wrote {} layers ({} planted filters) to {} and {} examples to {}",
        args.layers,
        planted,
        args.out_model.display(),
        args.examples,
        args.out_data.display()
    );
    Ok(0)
}

fn cmd_prune(args: PruneArgs) -> Result<u8, Failure> {
    let cfg = PruneConfig {
        alpha: args.alpha,
        beta: args.beta,
        selector: match args.selector {
            SelectorArg::Hbgs => Selector::Hbgs,
            SelectorArg::Hbgts => Selector::Hbgts,
            SelectorArg::Uniform => Selector::Uniform,
            SelectorArg::Random => Selector::Random,
        },
        fp_method: match args.method {
            MethodArg::FpOmp => FpMethod::Omp,
            MethodArg::FpBackward => FpMethod::Backward,
        },
        floor: args.floor,
        seed: args.seed,
        ..PruneConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let model = read_model(&args.model).context("reading model")?;
    let data = read_dataset(&args.data).context("reading dataset")?;
    let outcome = prune(model.network.clone(), &data, cfg.clone()).context("pruning")?;
    let report = PruneReportFile::new(&cfg, &model.input_shape, &model.network, &outcome).context("building report")?;

    let pruned = Model { network: outcome.network.clone(), input_shape: model.input_shape.clone() };
    write_model(&args.out, &pruned).context("writing pruned model")?;
    write_report(&args.report, &report).context("writing report")?;
    write_heatmap(heatmap_path(&args.report), &report).context("writing heatmap")?;

    let (params, flops) = report.reduction.render();
    println!("rounds: {}", report.rounds.len());
    println!("filters: {:?} -> {:?}", report.original_filters, report.final_filters);
    println!("param drop: {params}  FLOPs drop: {flops}");
    if outcome.degenerate_examples > 0 {
        eprintln!("warning: {} zero-norm reference outputs were skipped", outcome.degenerate_examples);
    }
    match outcome.status {
        PruneStatus::Completed => Ok(0),
        PruneStatus::Partial => {
            eprintln!("partial: no layer could be pruned further before reaching beta = {}", cfg.beta);
            Ok(EXIT_PARTIAL)
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<u8, Failure> {
    let model = read_model(&args.model).context("reading model")?;
    let reference = read_model(&args.reference_model).context("reading reference model")?;
    let data = read_dataset(&args.data).context("reading dataset")?;
    let mut total = 0.0;
    for x in data.examples() {
        let y_ref = forward(&reference.network, x).context("evaluating reference model")?;
        let y = forward(&model.network, x).context("evaluating model")?;
        let norm = y_ref.norm();
        if norm > 0.0 {
            total += y_ref.distance(&y).context("comparing outputs")? / norm;
        }
    }
    let before = count_stats(&reference.network, &reference.input_shape).context("counting reference")?;
    let after = count_stats(&model.network, &reference.input_shape).context("counting model")?;
    let (params, flops) = reduction_report(&before, &after).context("computing reduction")?.render();
    println!("relative error: {:e}", total / data.len() as f64);
    println!("params: {} -> {}", before.params, after.params);
    println!("FLOPs: {} -> {}", before.flops, after.flops);
    println!("param drop: {params}  FLOPs drop: {flops}");
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Failure> {
    let suites: Vec<Suite> = match args.suite {
        SuiteArg::Theorem1 => vec![Suite::Theorem1],
        SuiteArg::Theorem2 => vec![Suite::Theorem2],
        SuiteArg::OmpOracle => vec![Suite::OmpOracle],
        SuiteArg::BackwardOracle => vec![Suite::BackwardOracle],
        SuiteArg::TreeOracle => vec![Suite::TreeOracle],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    if args.trials == Some(0) {
        return Err(usage("--trials must be positive"));
    }
    let mut ok = true;
    for suite in suites {
        let trials = args.trials.unwrap_or_else(|| suite.default_trials());
        let r = run_suite(suite, args.seed, trials).with_context(|| format!("running {}", suite.name()))?;
        println!(
            "{}: trials={} max_deviation={:.3e} tolerance={:e} mismatches={} {}",
            suite.name(),
            r.trials,
            r.max_deviation,
            r.tolerance,
            r.mismatches,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() {
            ok = false;
            let seeds: Vec<String> = r.failing_seeds.iter().map(u64::to_string).collect();
            println!("  failing seeds: {}", seeds.join(" "));
        }
    }
    Ok(if ok { 0 } else { EXIT_VERIFY })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::File(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FILE)
        }
    }
}
