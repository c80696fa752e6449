//! `somonitor`: one subcommand per pipeline stage. Artifacts are printed as
//! JSON on stdout; summaries and progress go to stderr. Exit code 0 on
//! success, 1 on invalid input or unknown ids, 2 when a backend fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use somonitor_core::cluster::ClusterPillar;
use somonitor_core::config::Config;
use somonitor_core::domain::ScoreLayer;
use somonitor_core::pipeline::{run_demo, ErrorClass, Pipeline, PipelineError, RankerSpec};
use somonitor_core::store::DatasetFormat;
use somonitor_core::story::SelectionPolicy;

#[derive(Parser)]
#[command(name = "somonitor", version, about = "Ad-creative analytics: pillars, personas, challenges, ranking and story briefs")]
struct Cli {
    /// Config file (default: ./somonitor.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory, overriding [store] root.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Completion backend id, overriding [gateway] backend.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and store a dataset file.
    Ingest {
        path: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Counts and brand shares of a stored dataset.
    Stats { dataset_id: String },
    /// Extract content pillars for every record.
    Pillars { dataset_id: String },
    /// Cluster the audience (personas) or insight (challenges) pillar.
    Cluster(ClusterArgs),
    /// Rank the holdout candidates of each brand and objective.
    Rank(RankArgs),
    /// Compare rankers with nDCG and Recall per brand and objective.
    Evaluate(EvaluateArgs),
    /// Persona × challenge share gaps between two brands.
    Opportunities {
        dataset_id: String,
        #[arg(long)]
        own: String,
        #[arg(long)]
        competitor: String,
        #[arg(long)]
        policy: Option<SelectionPolicy>,
    },
    /// Write a character, story and brief for one persona and challenge.
    Story {
        dataset_id: String,
        #[arg(long)]
        persona: usize,
        #[arg(long)]
        challenge: usize,
        #[arg(long)]
        brand: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        /// Full bind address, overriding [service] bind.
        #[arg(long, conflicts_with = "port")]
        bind: Option<String>,
    },
    /// Run every stage offline on the bundled synthetic corpus.
    Demo {
        /// Store directory for the demo run.
        #[arg(long, default_value = "somonitor-demo")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PillarArg {
    Audience,
    Insight,
}

#[derive(Args)]
struct ClusterArgs {
    dataset_id: String,
    #[arg(long, value_enum)]
    pillar: PillarArg,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "outlier-pct")]
    outlier_pct: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RankerArg {
    Score,
    Llm,
}

#[derive(Args)]
struct RankArgs {
    dataset_id: String,
    #[arg(long, value_enum)]
    ranker: RankerArg,
    /// Ground LLM rankings with best, median and worst earlier ads.
    #[arg(long)]
    grounded: bool,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Ensemble size for LLM rankings.
    #[arg(long)]
    runs: Option<usize>,
    /// CTR classifier for score rankings (oracle or lexical-baseline).
    #[arg(long)]
    classifier: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    dataset_id: String,
    /// Comma-separated: score, score:<classifier>, llm, llm-gd.
    #[arg(long, value_delimiter = ',', required = true)]
    rankers: Vec<RankerSpec>,
    #[arg(long = "R")]
    relevance_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
}

enum Failure {
    Invalid(String),
    Backend(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.class() {
            ErrorClass::Backend => Self::Backend(e.to_string()),
            ErrorClass::Invalid | ErrorClass::NotFound => Self::Invalid(e.to_string()),
        }
    }
}

fn emit<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut config = Config::discover(cli.config.as_deref()).map_err(|e| Failure::Invalid(e.to_string()))?;
    if let Some(root) = &cli.store {
        config.store.root = root.clone();
    }
    if let Some(backend) = &cli.backend {
        config.gateway.backend = backend.clone();
    }
    Ok(config)
}

fn progress(label: &'static str) -> impl Fn(f64) + Sync {
    move |p| {
        if p >= 1.0 {
            eprintln!("{label}: done");
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Ingest { path, format } => {
            let pipeline = Pipeline::open(config)?;
            let format = match format {
                Some(Format::Jsonl) => DatasetFormat::Jsonl,
                Some(Format::Csv) => DatasetFormat::Csv,
                None => DatasetFormat::from_path(&path),
            };
            let handle = pipeline.store.load_dataset(&path, format).map_err(PipelineError::from)?;
            eprintln!("dataset {} ({} records)", handle.dataset_id, handle.item_count);
            emit(&handle)
        }
        Command::Stats { dataset_id } => {
            let pipeline = Pipeline::open(config)?;
            let stats = pipeline.store.dataset_stats(&dataset_id).map_err(PipelineError::from)?;
            eprintln!("{} records: {} ads, {} organic", stats.total, stats.ads, stats.organic);
            for (brand, share) in &stats.per_brand {
                eprintln!("  {brand}: {} ({:.3})", share.count, share.share);
            }
            emit(&stats)
        }
        Command::Pillars { dataset_id } => {
            let pipeline = Pipeline::open(config)?;
            let table = pipeline.pillars(&dataset_id, &progress("pillars"))?;
            eprintln!("run {}: {} rows, {} failures", table.run_id, table.rows.len(), table.failures.len());
            emit(&table)
        }
        Command::Cluster(args) => {
            let c = &mut config.cluster;
            c.pillar = match args.pillar {
                PillarArg::Audience => ClusterPillar::Audience,
                PillarArg::Insight => ClusterPillar::Insight,
            };
            c.k0 = args.k0.unwrap_or(c.k0);
            c.k_max = args.kmax.unwrap_or(c.k_max);
            c.seed = args.seed.unwrap_or(c.seed);
            c.outlier_percentile = args.outlier_pct.unwrap_or(c.outlier_percentile);
            eprintln!("k0={} kmax={} seed={} outlier-pct={}", c.k0, c.k_max, c.seed, c.outlier_percentile);
            let cluster_config = c.clone();
            let pipeline = Pipeline::open(config)?;
            let run = pipeline.clusters(&args.dataset_id, &cluster_config, &progress("clusters"))?;
            eprintln!("run {}: K={}, {} outliers excluded", run.run_id, run.k, run.excluded.len());
            for card in &run.cards {
                eprintln!("  [{}] {} ({} members)", card.cluster_id, card.name, card.member_count);
            }
            emit(&run)
        }
        Command::Rank(args) => {
            let r = &mut config.rank;
            r.alpha = args.alpha.unwrap_or(r.alpha);
            r.beta = args.beta.unwrap_or(r.beta);
            r.ensemble_runs = args.runs.unwrap_or(r.ensemble_runs);
            if let Some(c) = &args.classifier {
                r.classifier = c.clone();
            }
            let layer = ScoreLayer::new(r.alpha, r.beta).map_err(|e| Failure::Invalid(e.to_string()))?;
            if layer.is_degenerate() && args.ranker == RankerArg::Score {
                eprintln!("warning: alpha == beta scores every ad alike; the order falls back to ids");
            }
            let spec = match args.ranker {
                RankerArg::Score if args.grounded => return Err(Failure::Invalid("--grounded applies only to --ranker llm".into())),
                RankerArg::Score => RankerSpec::Score { classifier: None },
                RankerArg::Llm => {
                    eprintln!("ensemble size {}", r.ensemble_runs);
                    RankerSpec::Llm { grounded: args.grounded }
                }
            };
            let pipeline = Pipeline::open(config)?;
            let run = pipeline.rank(&args.dataset_id, &spec, &progress("rank"))?;
            eprintln!("run {}: {} candidates ranked by {}", run.run_id, run.list.candidate_ids.len(), run.label);
            if run.list.degraded {
                eprintln!("warning: more than half of the ensemble runs failed");
            }
            emit(&run)
        }
        Command::Evaluate(args) => {
            config.eval.relevance_size = args.relevance_size.unwrap_or(config.eval.relevance_size);
            if let Some(cutoffs) = args.cutoffs {
                config.eval.cutoffs = cutoffs;
            }
            let pipeline = Pipeline::open(config)?;
            let report = pipeline.evaluate(&args.dataset_id, &args.rankers, &progress("evaluate"))?;
            eprint!("{}", report.table);
            emit(&report)
        }
        Command::Opportunities { dataset_id, own, competitor, policy } => {
            if let Some(policy) = policy {
                config.story.policy = policy;
            }
            let pipeline = Pipeline::open(config)?;
            let report = pipeline.opportunities(&dataset_id, &own, &competitor)?;
            let cell = &report.selection.cell;
            eprintln!(
                "selected persona {} × challenge {}: {competitor} {:.3} vs {own} {:.3} (gap {:.3})",
                cell.persona_id, cell.challenge_id, cell.competitor_share, cell.own_share, cell.gap
            );
            if report.selection.not_underexploited {
                eprintln!("note: {own} is not behind {competitor} in any cell");
            }
            emit(&report)
        }
        Command::Story { dataset_id, persona, challenge, brand } => {
            let pipeline = Pipeline::open(config)?;
            let outcome = pipeline.story(&dataset_id, persona, challenge, &brand)?;
            eprintln!("{}: {}", outcome.story.character.name, outcome.story.concluding_insight);
            eprintln!("brief written to {}", outcome.brief_path.display());
            emit(&outcome)
        }
        Command::Serve { port, bind } => {
            let bind = match (bind, port) {
                (Some(b), _) => b,
                (None, Some(p)) => format!("127.0.0.1:{p}"),
                (None, None) => config.service.bind.clone(),
            };
            let pipeline = Pipeline::open(config)?;
            eprintln!("serving on http://{bind}");
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Backend(e.to_string()))?;
            runtime
                .block_on(somonitor_api::serve(pipeline, &bind))
                .map_err(|e| Failure::Invalid(format!("cannot serve on {bind}: {e}")))
        }
        Command::Demo { out } => {
            let summary = run_demo(&out, &|stage, p| {
                if p >= 1.0 {
                    eprintln!("{stage}: done");
                }
            })?;
            eprintln!("dataset {} ({} ads)", summary.dataset.dataset_id, summary.dataset.item_count);
            for run in [&summary.personas, &summary.challenges] {
                for card in &run.cards {
                    eprintln!("  {:?} {}: {} ({} members)", card.kind, card.cluster_id, card.name, card.member_count);
                }
            }
            eprint!("{}", summary.report.table);
            eprintln!("brief written to {}", summary.story.brief_path.display());
            emit(&summary)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Backend(msg)) => {
            eprintln!("backend error: {msg}");
            ExitCode::from(2)
        }
    }
}
