use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use citerec::corpus::Corpus;
use citerec::davinci::Ablation;
use citerec::fixture::{self, FixtureConfig};
use citerec::metrics::EvalReport;
use citerec::pipeline::{
    ablation_study, k_sweep_csv, run_pipeline, sweep_k, Context, Paths, PipelineConfig,
    PipelineReport, TrainingSummary, Workdir,
};
use citerec::profiler::{parse_range, sweep_profile_weights, ProfileWeights, SweepMetric};
use citerec::split::SplitName;
use citerec::{Error, Result};

/// Two-stage local citation recommendation: profile-enriched retrieval and
/// a gated neural reranker.
#[derive(Parser)]
#[command(name = "citerec", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file (TOML or JSON).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    documents: Option<PathBuf>,
    #[arg(long, global = true)]
    edges: Option<PathBuf>,
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    #[arg(long, global = true, env = "CITEREC_WORKDIR")]
    workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Candidate list size.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Override any config field, e.g. `--set davinci.epochs=5`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus files and report what was kept.
    Ingest,
    /// Partition queries and write split.json.
    Split,
    /// Profiled index, retrieval and weight sweeps.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Reranker training, reranking and ablations.
    #[command(subcommand)]
    Davinci(DavinciCmd),
    /// Evaluate the stored test retrieval and rerank lists.
    Eval,
    /// Run every stage end to end.
    Pipeline,
    /// Rerank quality for several candidate-list sizes.
    SweepK {
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        /// Train a separate model for every k.
        #[arg(long)]
        retrain: bool,
    },
    /// Synthetic datasets for trying the pipeline.
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Build and store the profiled index.
    Build,
    /// Retrieve candidates for every split with the stored index.
    Retrieve,
    /// Grid search over the fusion weights.
    Sweep {
        /// start:stop:step for alpha (beta = 1 - alpha).
        #[arg(long, default_value = "0:1:0.1")]
        alpha: String,
        /// start:stop:step for gamma (delta = 1 - gamma).
        #[arg(long, default_value = "0:1:0.1")]
        gamma: String,
        #[arg(long, default_value = "recall@10")]
        metric: String,
        #[arg(long, default_value = "val")]
        split: String,
    },
}

#[derive(Subcommand)]
enum DavinciCmd {
    /// Train on the stored train/val retrieval lists.
    Train,
    /// Rerank the stored test lists with the stored model.
    Rerank,
    /// Train and evaluate reranker variants side by side.
    Ablate {
        /// full, A1, A2, A3, A4 (all when omitted).
        #[arg(long = "variant", value_delimiter = ',')]
        variants: Vec<String>,
    },
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Write a synthetic corpus and a matching config.toml.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Number of documents.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        fixture_seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Fixture(FixtureCmd::Gen { out, size, fixture_seed }) = &cli.command {
        return fixture_gen(out, *size, *fixture_seed);
    }
    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Ingest => ingest(&config),
        Command::Split => {
            let ctx = Context::prepare(&config)?;
            let manifest = ctx.split.manifest(&config.split);
            Workdir::create(&config.paths.workdir, &config)?.write_json("split.json", &manifest)?;
            println!(
                "train {} val {} test {} (dropped val {} test {}), candidate corpus {}",
                ctx.split.train.len(),
                ctx.split.val.len(),
                ctx.split.test.len(),
                ctx.split.dropped.val,
                ctx.split.dropped.test,
                ctx.split.corpus_ids.len()
            );
            Ok(())
        }
        Command::Profile(cmd) => profile(&config, cmd),
        Command::Davinci(cmd) => davinci(&config, cmd),
        Command::Eval => eval(&config),
        Command::Pipeline => {
            let report = run_pipeline(&config)?;
            print_report(&report);
            Ok(())
        }
        Command::SweepK { ks, retrain } => {
            let ctx = Context::prepare(&config)?;
            let rows = sweep_k(&ctx, &ks, retrain)?;
            let csv = k_sweep_csv(&rows);
            Workdir::create(&config.paths.workdir, &config)?.write_text("k_sweep.csv", &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::Fixture(_) => unreachable!("handled above"),
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut config = match &g.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
            e => e,
        })?,
        None => PipelineConfig::new(Paths {
            documents: PathBuf::from("documents.jsonl"),
            edges: PathBuf::from("edges.jsonl"),
            queries: PathBuf::from("queries.jsonl"),
            workdir: PathBuf::from("work"),
        }),
    };
    let p = &mut config.paths;
    for (flag, field) in [
        (&g.documents, &mut p.documents),
        (&g.edges, &mut p.edges),
        (&g.queries, &mut p.queries),
        (&g.workdir, &mut p.workdir),
    ] {
        if let Some(v) = flag {
            *field = v.clone();
        }
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(k) = g.k {
        config.prior.k = k;
    }
    apply_overrides(config, &g.overrides)
}

/// Applies `a.b.c=value` assignments; values parse as JSON, falling back to
/// a plain string.
fn apply_overrides(config: PipelineConfig, overrides: &[String]) -> Result<PipelineConfig> {
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut tree = serde_json::to_value(&config).expect("config serializes");
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects PATH=VALUE, got {item:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut tree;
        for key in path.split('.') {
            node = node
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config field {path:?}")))?;
        }
        *node = value;
    }
    serde_json::from_value(tree).map_err(|e| Error::Config(format!("--set: {e}")))
}

fn ingest(config: &PipelineConfig) -> Result<()> {
    let p = &config.paths;
    let (corpus, report) = Corpus::ingest(&p.documents, &p.edges)?;
    let work = Workdir::create(&p.workdir, config)?;
    corpus.persist(work.path("documents.jsonl"), work.path("edges.jsonl"))?;
    work.write_json("ingest.json", &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn profile(config: &PipelineConfig, cmd: ProfileCmd) -> Result<()> {
    let ctx = Context::prepare(config)?;
    let work = Workdir::create(&config.paths.workdir, config)?;
    match cmd {
        ProfileCmd::Build => {
            let index = ctx.build_index()?;
            work.save_index(&index, &ctx.corpus)?;
            println!("indexed {} documents ({} dims)", index.len(), index.dim());
        }
        ProfileCmd::Retrieve => {
            let index = work.load_index(&ctx.corpus)?;
            for split in [SplitName::Train, SplitName::Val, SplitName::Test] {
                let lists = ctx.retrieve(&index, split, config.prior.k)?;
                work.write_retrievals(split, &lists)?;
                println!("{}: {} lists", split.as_str(), lists.len());
            }
        }
        ProfileCmd::Sweep { alpha, gamma, metric, split } => {
            let split = parse_split(&split)?;
            let metric: SweepMetric = metric.parse()?;
            let grid = ProfileWeights::grid(&parse_range(&alpha)?, &parse_range(&gamma)?)?;
            let queries = ctx.split.queries(split);
            let encodings = ctx.encode_queries(queries)?;
            let result = sweep_profile_weights(
                &ctx.corpus,
                &ctx.components()?,
                &ctx.split,
                queries,
                &encodings,
                &grid,
                metric,
                config.prior.k,
            )?;
            work.write_text("profile_sweep.csv", &result.to_csv())?;
            let best = result.best();
            println!(
                "best {:.4} at alpha {} beta {} gamma {} delta {}",
                best.value, best.weights.alpha, best.weights.beta, best.weights.gamma, best.weights.delta
            );
        }
    }
    work.finish()
}

fn davinci(config: &PipelineConfig, cmd: DavinciCmd) -> Result<()> {
    let ctx = Context::prepare(config)?;
    let work = Workdir::create(&config.paths.workdir, config)?;
    match cmd {
        DavinciCmd::Train => {
            let train = work.read_retrievals(SplitName::Train)?;
            let val = work.read_retrievals(SplitName::Val)?;
            let outcome = ctx.train(&config.davinci_config(), &train, &val)?;
            work.save_model(&outcome)?;
            let summary = TrainingSummary::from(&outcome);
            work.write_training(&summary)?;
            println!(
                "trained {} epochs, best epoch {}, final loss {:.6}",
                summary.loss_curve.len(),
                summary.best_epoch,
                summary.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
        }
        DavinciCmd::Rerank => {
            let model = work.load_model()?;
            let test = work.read_retrievals(SplitName::Test)?;
            let reranked = ctx.rerank(&model, SplitName::Test, &test)?;
            work.write_jsonl("rerank_test.jsonl", &reranked)?;
            println!("reranked {} test lists", reranked.len());
        }
        DavinciCmd::Ablate { variants } => {
            let variants: Vec<Ablation> = if variants.is_empty() {
                Ablation::ALL.to_vec()
            } else {
                variants.iter().map(|v| v.parse()).collect::<Result<_>>()?
            };
            let results = ablation_study(&ctx, &variants)?;
            let mut table = String::new();
            for (a, report) in &results {
                let t = report.to_table(a.label());
                table.push_str(if table.is_empty() { &t } else { t.lines().nth(1).unwrap_or("") });
                if !table.ends_with('\n') {
                    table.push('\n');
                }
            }
            let json: Vec<(&str, &EvalReport)> = results.iter().map(|(a, r)| (a.label(), r)).collect();
            work.write_json("ablation.json", &json)?;
            work.write_text("ablation.txt", &table)?;
            print!("{table}");
        }
    }
    work.finish()
}

fn eval(config: &PipelineConfig) -> Result<()> {
    let ctx = Context::prepare(config)?;
    let work = Workdir::create(&config.paths.workdir, config)?;
    let test = work.read_retrievals(SplitName::Test)?;
    let reranked = work.read_jsonl("rerank_test.jsonl")?;
    let report = PipelineReport {
        retrieval: ctx.evaluate(SplitName::Test, &test, &config.eval.retrieval_ks)?,
        rerank: ctx.evaluate(SplitName::Test, &reranked, &config.eval.rerank_ks)?,
    };
    work.write_reports(&report)?;
    print_report(&report);
    work.finish()
}

fn print_report(report: &PipelineReport) {
    print!("{}", report.retrieval.to_table("profiler"));
    print!("{}", report.rerank.to_table("reranker"));
}

fn parse_split(s: &str) -> Result<SplitName> {
    match s {
        "train" => Ok(SplitName::Train),
        "val" => Ok(SplitName::Val),
        "test" => Ok(SplitName::Test),
        _ => Err(Error::Config(format!("unknown split {s:?}"))),
    }
}

fn fixture_gen(out: &Path, documents: Option<usize>, seed: Option<u64>) -> Result<()> {
    let defaults = FixtureConfig::default();
    let fc = FixtureConfig {
        documents: documents.unwrap_or(defaults.documents),
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let f = fixture::generate(&fc)?;
    f.write(out)?;
    // relative paths resolve against the config file's directory
    let config = fixture::pipeline_config(Path::new(""), Path::new("work"));
    let path = out.join("config.toml");
    std::fs::write(&path, config.to_toml()).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!(
        "{} documents, {} edges, {} queries written to {}",
        f.documents.len(),
        f.edges.len(),
        f.queries.len(),
        out.display()
    );
    Ok(())
}
