//! `fame`: offline setup, streaming inference and evaluation from the
//! command line. Every subcommand reads the same TOML (or JSON) config;
//! `--seed`, `--dataset` and `--format` override it.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fame_core::corpus::InputFormat;
use fame_core::eval::{self, sweep::k_sweep};
use fame_core::inference::{classify_stream, ModelBundle, RoutePath};
use fame_core::kshot::labeling_cost_report;
use fame_core::par::{with_jobs, ExecMode};
use fame_core::partition::{certify, export_prompt_payload, import_partition, tfidf_grouping};
use fame_core::pipeline::{load_corpus, prepare, setup, write_setup, PipelineConfig, Prepared};
use fame_core::synthetic::{generate, read_truth, SyntheticConfig};

const DEFAULT_OUT: &str = "fame-out";

#[derive(Parser)]
#[command(name = "fame", version, about = "Failure-aware mixture-of-experts log anomaly detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML, or JSON for *.json); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Labeled corpus; overrides `dataset.path`.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Corpus format: loghub, jsonl or raw; overrides `dataset.format`.
    #[arg(long, global = true, value_parser = InputFormat::from_str)]
    format: Option<InputFormat>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the offline prefix into templates (templates.json).
    Parse,
    /// Draw the K-shot sample (sample.json) and print the labeling cost.
    Sample {
        /// Overrides `k` in the config.
        #[arg(long)]
        k: Option<usize>,
        /// Extra K values for the labeling-cost table.
        #[arg(long, value_delimiter = ',')]
        cost_ks: Vec<usize>,
    },
    /// Propose or import a failure-domain partition.
    #[command(subcommand)]
    Partition(PartitionCommand),
    /// Train router and experts, calibrate, and write the model bundle.
    Setup,
    /// Classify a line stream with a bundle, one JSON verdict per line.
    Infer {
        #[arg(long)]
        bundle: PathBuf,
        /// Input file, `-` for stdin.
        #[arg(long, default_value = "-")]
        input: String,
        /// Output file, `-` for stdout.
        #[arg(long, default_value = "-")]
        output: String,
        /// Input format (raw, loghub or jsonl).
        #[arg(long = "input-format", default_value = "raw", value_parser = InputFormat::from_str)]
        input_format: InputFormat,
    },
    /// Score the test split against ground truth, with baselines.
    Eval {
        /// Existing bundle; trained from the config when absent.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Synthetic ground-truth sidecar, for domain-label agreement.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        no_baselines: bool,
    },
    /// Full pipeline over a grid of K values and seeds.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "5,10,25,50,100")]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Write a seeded synthetic corpus, its ground truth and a config.
    GenSynthetic(GenArgs),
}

#[derive(Subcommand)]
enum PartitionCommand {
    /// Write the grouping prompt for an external model (prompt.json).
    ExportPrompt,
    /// Group templates by TF-IDF similarity (partition.json).
    Tfidf,
    /// Validate and certify a partition file (certification.json).
    Import { file: PathBuf },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 50_000)]
    lines: usize,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 5)]
    mixed_templates: usize,
    #[arg(long, default_value_t = 0.05)]
    anomaly_rate: f64,
    /// Anomaly templates that only appear in the test region.
    #[arg(long, default_value_t = 0)]
    novel_templates: usize,
    /// No mixed templates: every anomaly template is anomaly-only.
    #[arg(long)]
    closed_world: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mode = if cli.global.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match with_jobs(mode, cli.global.jobs, || run(&cli, mode)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

/// The cause chain, skipping causes whose text an outer message already
/// carries.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn run(cli: &Cli, mode: ExecMode) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Parse => cmd_parse(g),
        Command::Sample { k, cost_ks } => cmd_sample(g, *k, cost_ks),
        Command::Partition(p) => cmd_partition(g, p),
        Command::Setup => cmd_setup(g, mode),
        Command::Infer {
            bundle,
            input,
            output,
            input_format,
        } => cmd_infer(bundle, input, output, *input_format, mode),
        Command::Eval {
            bundle,
            truth,
            no_baselines,
        } => cmd_eval(g, bundle.as_deref(), truth.as_deref(), !no_baselines, mode),
        Command::Sweep { ks, seeds } => cmd_sweep(g, ks, seeds, mode),
        Command::GenSynthetic(a) => cmd_gen(g, a),
    }
}

/// Config with CLI overrides. Relative paths inside a config file are
/// taken relative to that file.
fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let mut cfg = PipelineConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut cfg.dataset.path, &mut cfg.partition.file, &mut cfg.output].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &g.dataset {
        cfg.dataset.path = Some(d.clone());
    }
    if let Some(f) = g.format {
        cfg.dataset.format = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&PipelineConfig>) -> Result<PathBuf> {
    let dir = g
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let start = Instant::now();
    let corpus = load_corpus(cfg)?;
    let prep = prepare(corpus.records, cfg)?;
    log::info!(
        "prepared {} lines ({} offline, {} templates, {} labels) in {:.2?}",
        prep.records.len(),
        prep.split.offline.len(),
        prep.table.len(),
        prep.sample.label_count(),
        start.elapsed()
    );
    Ok(prep)
}

fn cmd_parse(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let prep = prepared(&cfg)?;
    let dir = out_dir(g, Some(&cfg))?;
    let path = dir.join("templates.json");
    write_text(&path, &prep.table.to_json()?)?;
    println!("{} templates from {} offline lines -> {}", prep.table.len(), prep.split.offline.len(), path.display());
    Ok(())
}

fn cmd_sample(g: &Global, k: Option<usize>, cost_ks: &[usize]) -> Result<()> {
    let mut cfg = load_config(g)?;
    if let Some(k) = k {
        cfg.k = k;
    }
    cfg.validate()?;
    let prep = prepared(&cfg)?;
    let dir = out_dir(g, Some(&cfg))?;
    let path = dir.join("sample.json");
    write_json(&path, &prep.sample.audit_json(prep.offline()))?;
    let mut ks = vec![cfg.k];
    ks.extend(cost_ks.iter().copied().filter(|&x| x != cfg.k));
    ks.sort_unstable();
    let costs = labeling_cost_report(prep.offline(), &ks)?;
    println!("{:>6}  {:>8}  {:>13}  {:>9}", "K", "labels", "offline lines", "reduction");
    for c in &costs {
        println!("{:>6}  {:>8}  {:>13}  {:>8}x", c.k, c.labels, c.offline_lines, c.reduction_rounded);
    }
    write_json(&dir.join("labeling_cost.json"), &costs)?;
    println!("sample -> {}", path.display());
    Ok(())
}

fn cmd_partition(g: &Global, command: &PartitionCommand) -> Result<()> {
    let cfg = load_config(g)?;
    let prep = prepared(&cfg)?;
    let dir = out_dir(g, Some(&cfg))?;
    match command {
        PartitionCommand::ExportPrompt => {
            let path = dir.join("prompt.json");
            write_json(&path, &export_prompt_payload(&prep.table, &prep.sample, prep.offline()))?;
            println!("prompt -> {}", path.display());
        }
        PartitionCommand::Tfidf => {
            let proposal = tfidf_grouping(&prep.table, &prep.sample, cfg.partition.link_threshold);
            let path = dir.join("partition.json");
            write_text(&path, &proposal.to_json()?)?;
            println!("{} groups -> {}", proposal.expert_groups().count(), path.display());
        }
        PartitionCommand::Import { file } => {
            let doc = fs::read_to_string(file).with_context(|| format!("reading partition file {}", file.display()))?;
            let proposal = import_partition(&doc, &prep.sample).with_context(|| format!("stage `partition`: {}", file.display()))?;
            let cert = certify(&proposal, &prep.sample, &prep.pool, prep.offline(), &cfg.certify_config())
                .context("stage `certify`")?;
            for d in &cert.decisions {
                let cosine = d.cosine.map_or(String::new(), |c| format!(" cosine {c:.3}"));
                println!("{:<24} {:>4} EventIDs  {:?}{cosine}", d.name, d.event_ids, d.outcome);
            }
            let path = dir.join("certification.json");
            write_json(&path, &cert)?;
            println!("certification -> {}", path.display());
        }
    }
    Ok(())
}

fn cmd_setup(g: &Global, mode: ExecMode) -> Result<()> {
    let cfg = load_config(g)?;
    let prep = prepared(&cfg)?;
    let start = Instant::now();
    let built = setup(&prep, &cfg, mode)?;
    log::info!("setup finished in {:.2?}", start.elapsed());
    let dir = g
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT).join("bundle"));
    write_setup(&built, &dir)?;
    for d in &built.report.domains {
        println!("{:<24} {:<13} {:>4} EventIDs {:>9} offline lines", d.name, format!("{:?}", d.kind), d.event_ids, d.offline_lines);
    }
    println!("bundle {} -> {}", built.report.config_hash, dir.display());
    Ok(())
}

fn cmd_infer(bundle: &Path, input: &str, output: &str, format: InputFormat, mode: ExecMode) -> Result<()> {
    let bundle = ModelBundle::load(bundle).context("stage `load`")?;
    let reader: Box<dyn io::BufRead> = if input == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(File::open(input).with_context(|| format!("opening {input}"))?))
    };
    let writer: Box<dyn Write> = if output == "-" {
        Box::new(io::stdout().lock())
    } else {
        Box::new(BufWriter::new(File::create(output).with_context(|| format!("creating {output}"))?))
    };
    let summary = classify_stream(&bundle, reader, format, writer, mode).context("stage `infer`")?;
    eprintln!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn cmd_eval(g: &Global, bundle: Option<&Path>, truth: Option<&Path>, baselines: bool, mode: ExecMode) -> Result<()> {
    let cfg = load_config(g)?;
    let prep = prepared(&cfg)?;
    let model = match bundle {
        Some(path) => {
            let b = ModelBundle::load(path).context("stage `load`")?;
            if b.config_hash != cfg.hash() {
                log::warn!("bundle config hash {} differs from the current config {}", b.config_hash, cfg.hash());
            }
            b
        }
        None => setup(&prep, &cfg, mode)?.bundle,
    };
    let (report, verdicts) = eval::evaluate(&prep, &model, &cfg, baselines, mode).context("stage `eval`")?;
    let mut text = report.to_text();
    let mut json = serde_json::to_value(&report)?;
    if let Some(path) = truth {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let truth = read_truth(BufReader::new(file))?;
        if truth.len() != prep.records.len() {
            bail!("truth file has {} records, corpus has {}", truth.len(), prep.records.len());
        }
        let planted: Vec<Option<String>> = truth.into_iter().map(|t| t.domain).collect();
        let agreement = eval::domain_agreement(
            &model,
            prep.offline(),
            &planted[prep.split.offline.clone()],
            &verdicts,
            &planted[prep.split.test.clone()],
            RoutePath::Mixed,
        );
        text.push_str(&format!(
            "mixed-path domain labels: {} of {} detections match the planted domain\n",
            agreement.agreeing, agreement.detections
        ));
        json["domain_agreement"] = serde_json::to_value(&agreement)?;
    }
    print!("{text}");
    let dir = out_dir(g, Some(&cfg))?;
    write_json(&dir.join("eval.json"), &json)?;
    write_text(&dir.join("eval.csv"), &report.to_csv())?;
    write_text(&dir.join("eval.txt"), &text)?;
    Ok(())
}

fn cmd_sweep(g: &Global, ks: &[usize], seeds: &[u64], mode: ExecMode) -> Result<()> {
    let cfg = load_config(g)?;
    let corpus = load_corpus(&cfg)?;
    let report = k_sweep(corpus.records, &cfg, ks, seeds, mode).context("stage `sweep`")?;
    print!("{}", report.to_text());
    let dir = out_dir(g, Some(&cfg))?;
    write_json(&dir.join("sweep.json"), &report)?;
    write_text(&dir.join("sweep.csv"), &report.to_csv())?;
    Ok(())
}

fn cmd_gen(g: &Global, a: &GenArgs) -> Result<()> {
    let mut sc = SyntheticConfig {
        lines: a.lines,
        domains: a.domains,
        mixed_templates: a.mixed_templates,
        anomaly_rate: a.anomaly_rate,
        novel_templates: a.novel_templates,
        ..SyntheticConfig::default()
    };
    if let Some(seed) = g.seed {
        sc.seed = seed;
    }
    if a.closed_world {
        sc = sc.closed_world();
    }
    let corpus = generate(&sc).context("stage `generate`")?;
    let dir = out_dir(g, None)?;
    let mut log = BufWriter::new(File::create(dir.join("corpus.log")).context("creating corpus.log")?);
    corpus.write_loghub(&mut log)?;
    log.flush()?;
    let mut truth = BufWriter::new(File::create(dir.join("truth.jsonl")).context("creating truth.jsonl")?);
    corpus.write_truth(&mut truth)?;
    truth.flush()?;
    let mut cfg = PipelineConfig::default();
    cfg.dataset.path = Some(PathBuf::from("corpus.log"));
    cfg.dataset.format = InputFormat::LoghubLabeled;
    write_text(&dir.join("config.toml"), &cfg.to_toml()?)?;
    let anomalies = corpus.lines.iter().filter(|l| l.anomaly).count();
    println!(
        "{} lines ({} anomalous), {} templates, {} planted domains -> {}",
        corpus.len(),
        anomalies,
        corpus.templates.len(),
        corpus.domains.len(),
        dir.display()
    );
    Ok(())
}
