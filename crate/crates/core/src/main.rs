use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use humbench::boosters::{
    auto_optimize, dev_split, generate_samples, select_exemplars, DevScorer, OptimizeParams, GENERATION_SHOTS,
};
use humbench::classical::{cross_validate, top_features, train_logreg, FeatureMode, FeatureModel, TrainParams};
use humbench::corpus::{self, ActivityTable, ThreadStore};
use humbench::metrics::distribution_baseline;
use humbench::prompts::{Format, PromptConfig, PromptFactory, Task};
use humbench::runner::{
    coarse_counts, coarse_labels, emit_report, feature_texts, load_gold, run_experiment, score_run, BoosterKind, ExperimentConfig, GoldRecord,
    GoldRule, MetricReport, ReportFormat, RunResult,
};
use humbench::service::{self, AnnotationStore};
use humbench::{Codebook, Error, Result};

#[derive(Parser)]
#[command(name = "humbench", version, about = "Intellectual humility / arrogance detection workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// Gold dataset (CSV in the released layout, or JSONL of gold records).
    #[arg(long)]
    dataset: PathBuf,
    /// Codebook TOML; the built-in codebook when omitted.
    #[arg(long)]
    codebook: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self) -> Result<(Codebook, Vec<GoldRecord>)> {
        let cb = match &self.codebook {
            Some(p) => Codebook::load(p)?,
            None => Codebook::default_codebook(),
        };
        let gold = load_gold(&self.dataset, &cb)?;
        Ok((cb, gold))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a thread dump, dropping malformed lines, and write normalized threads.
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subreddit sample after the author-activity exclusion.
    Sample {
        #[arg(long)]
        threads: PathBuf,
        /// Delimited author_id,subreddit,count file.
        #[arg(long)]
        activity: PathBuf,
        #[arg(long, default_value_t = 500)]
        max_posts: usize,
        #[arg(long, default_value_t = 100)]
        activity_cap: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick one annotation target (first or second comment) per sampled thread.
    Targets {
        #[arg(long)]
        threads: PathBuf,
        #[arg(long, default_value_t = corpus::DEFAULT_MAX_THREADS)]
        max_threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Descriptive statistics of a gold dataset.
    Describe {
        #[command(flatten)]
        data: DatasetArgs,
    },
    /// Score a saved run against gold and write reports.
    Score {
        /// run.json written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Overrides the dataset recorded in the run config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Gold-positive rule: intersection, union or per-annotator-mean.
        #[arg(long)]
        gold: Option<GoldRule>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distribution baseline for coarse classes and per-label presence.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Class counts instead of a dataset, e.g. `IH=134,IA=60,NE=156`.
        #[arg(long)]
        counts: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Automatic prompt optimization on a seeded dev split, per label.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Label abbreviations; all codebook labels when omitted.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 3)]
        per_round: usize,
        /// Directory for optimized_prompts.json and optimization_history.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-refinement run; writes transcripts next to the reports.
    Refine {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        gold: Option<GoldRule>,
    },
    /// Stratified k-fold logistic regression baseline on coarse classes.
    BaselineCv {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value = "tfidf")]
        mode: FeatureMode,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Prepend the context to the target comment.
        #[arg(long)]
        with_context: bool,
    },
    /// Train on the full dataset and print the strongest words per class.
    TopWords {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value = "tfidf")]
        mode: FeatureMode,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        with_context: bool,
        /// Save the trained weight matrix as text.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Run an experiment config and write run.json plus reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gold: Option<GoldRule>,
        /// Shuffle label order in multiple-selection prompts with this seed.
        #[arg(long)]
        shuffle_labels: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "json,csv,md")]
        format: Vec<ReportFormat>,
    },
    /// Render a saved report.json as csv or markdown.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
    /// Print the conversation a config sends for one gold record.
    Prompt {
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long, default_value = "C&D-BQ")]
        prompt: PromptConfig,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        shuffle_labels: Option<u64>,
    },
    /// Generate synthetic samples for a label from agreed exemplars.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the annotation API (and optionally the console's static files).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Event log; created when missing.
        #[arg(long)]
        log: PathBuf,
        /// Targets JSONL available for waves.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Shared bearer token; also read from HUMBENCH_SERVICE_TOKEN.
        #[arg(long, env = "HUMBENCH_SERVICE_TOKEN")]
        token: Option<String>,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = service::DEFAULT_SNAPSHOT_EVERY)]
        snapshot_every: u64,
    },
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_counts(text: &str) -> Result<BTreeMap<String, u64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected class=count, got `{kv}`")))?;
            let n = v.trim().parse().map_err(|_| Error::InvalidInput(format!("bad count `{v}`")))?;
            Ok((k.trim().to_string(), n))
        })
        .collect()
}

fn run_and_report(cfg: &ExperimentConfig, formats: &[ReportFormat]) -> Result<(RunResult, MetricReport)> {
    let codebook = cfg.load_codebook()?;
    let gold = load_gold(&cfg.dataset, &codebook)?;
    let gateway = cfg.build_gateway()?;
    let run = run_experiment(cfg, &codebook, &gold, &gateway)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Service(format!("{}: {e}", cfg.output_dir.display())))?;
    let run_path = cfg.output_dir.join("run.json");
    std::fs::write(&run_path, run.to_json()?).map_err(|e| Error::Service(format!("{}: {e}", run_path.display())))?;
    let report = score_run(&run, &gold, &codebook)?;
    for p in emit_report(&report, &cfg.output_dir, formats)? {
        info!("wrote {}", p.display());
    }
    Ok((run, report))
}

fn summarize(report: &MetricReport) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "targets {}  all {}  IH {}  IA {}  coarse {:.4}  (calls {}, retries {}, unparseable {}, failed {})",
        report.n_targets,
        f(report.all_mean),
        f(report.ih_mean),
        f(report.ia_mean),
        report.coarse_f1,
        report.gateway_calls,
        report.retries,
        report.unparseable,
        report.failed
    );
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { dump, out } => {
            let store = corpus::ingest_dump(&dump)?;
            store.write_jsonl(&out)?;
            println!("{} threads ingested, {} lines skipped", store.len(), store.skipped);
        }
        Command::Sample { threads, activity, max_posts, activity_cap, seed, out } => {
            let store = ThreadStore { threads: corpus::read_jsonl(&threads)?, skipped: 0 };
            let table = ActivityTable::load(&activity)?;
            let sampled = corpus::sample_threads(&store, &table, max_posts, activity_cap, seed)?;
            sampled.write_jsonl(&out)?;
            println!("{} of {} threads sampled", sampled.len(), store.len());
        }
        Command::Targets { threads, max_threads, seed, out } => {
            let store = ThreadStore { threads: corpus::read_jsonl(&threads)?, skipped: 0 };
            let targets = corpus::build_targets(&store, max_threads, seed);
            corpus::write_jsonl(&out, &targets)?;
            println!("{} targets written", targets.len());
        }
        Command::Describe { data } => {
            let (_, gold) = data.load()?;
            print_json(&corpus::describe(&gold)?)?;
        }
        Command::Score { run, dataset, gold, out } => {
            let text = std::fs::read_to_string(&run).map_err(|e| Error::Service(format!("{}: {e}", run.display())))?;
            let mut result: RunResult = serde_json::from_str(&text)?;
            if let Some(rule) = gold {
                result.config.gold_rule = rule;
            }
            let path = dataset.unwrap_or_else(|| result.config.dataset.clone());
            let codebook = result.config.load_codebook()?;
            let records = load_gold(&path, &codebook)?;
            let report = score_run(&result, &records, &codebook)?;
            let dir = out.unwrap_or_else(|| run.parent().unwrap_or(Path::new(".")).to_path_buf());
            emit_report(&report, &dir, &ReportFormat::ALL)?;
            summarize(&report);
        }
        Command::Baseline { dataset, codebook, counts, trials, seed } => {
            let mut out = BTreeMap::new();
            if let Some(text) = counts {
                out.insert("classes".to_string(), distribution_baseline(&parse_counts(&text)?, trials, seed)?);
            }
            if let Some(path) = dataset {
                let (cb, gold) = DatasetArgs { dataset: path, codebook }.load()?;
                let refs: Vec<&GoldRecord> = gold.iter().collect();
                out.insert("coarse".to_string(), distribution_baseline(&coarse_counts(&refs), trials, seed)?);
                for l in cb.abbrevs() {
                    let pos = gold.iter().filter(|r| r.agreed.contains(l)).count() as u64;
                    let counts = BTreeMap::from([(true, pos), (false, gold.len() as u64 - pos)]);
                    out.insert(l.to_string(), distribution_baseline(&counts, trials, seed)?);
                }
            }
            if out.is_empty() {
                return Err(Error::InvalidInput("give --dataset or --counts".into()));
            }
            print_json(&out)?;
        }
        Command::Optimize { config, labels, rounds, per_round, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let codebook = cfg.load_codebook()?;
            let gold = load_gold(&cfg.dataset, &codebook)?;
            let gateway = cfg.build_gateway()?;
            let factory = PromptFactory::new(&codebook);
            let content = cfg.prompt_config()?.content;
            let bq = PromptConfig::new(Task::LabelWise, content, Format::BinaryQuestion)?;
            let labels: Vec<String> =
                if labels.is_empty() { codebook.abbrevs().map(String::from).collect() } else { labels };
            std::fs::create_dir_all(&out).map_err(|e| Error::Service(format!("{}: {e}", out.display())))?;
            let mut prompts = BTreeMap::new();
            let mut histories = Vec::new();
            for label in &labels {
                codebook.label(label).ok_or_else(|| Error::UnknownLabel(label.clone()))?;
                let (dev, _) = dev_split(&gold, label, cfg.seed);
                let seed_prompt = factory.system_prompt(&bq, Some(label))?;
                let scorer = DevScorer { factory: &factory, content, label, dev: &dev, gateway: &gateway };
                let params = OptimizeParams { rounds, per_round, seed: cfg.seed };
                let (best, history) = auto_optimize(label, &seed_prompt, &seed_prompt, &gateway, &scorer, params)?;
                println!(
                    "{label}: seed {:.4} -> {:.4}",
                    history.seed_score,
                    history.incumbent_scores().last().copied().unwrap_or(history.seed_score)
                );
                prompts.insert(label.clone(), best);
                histories.push(history);
            }
            let p = out.join("optimized_prompts.json");
            std::fs::write(&p, serde_json::to_string_pretty(&prompts)?).map_err(|e| Error::Service(e.to_string()))?;
            corpus::write_jsonl(out.join("optimization_history.jsonl"), &histories)?;
        }
        Command::Refine { config, rounds, gold } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.booster = BoosterKind::SelfRefine;
            if let Some(r) = rounds {
                cfg.refine_rounds = r;
            }
            if let Some(g) = gold {
                cfg.gold_rule = g;
            }
            cfg.validate()?;
            let (run, report) = run_and_report(&cfg, &ReportFormat::ALL)?;
            let transcripts: Vec<_> = run.predictions.iter().filter_map(|p| p.transcript.clone()).collect();
            corpus::write_jsonl(cfg.output_dir.join("refinement_transcripts.jsonl"), &transcripts)?;
            summarize(&report);
        }
        Command::BaselineCv { data, mode, folds, seed, lambda, with_context } => {
            let (_, gold) = data.load()?;
            let params = TrainParams { lambda, ..TrainParams::default() };
            let cv = cross_validate(&feature_texts(&gold, with_context), &coarse_labels(&gold), mode, folds, seed, params)?;
            print_json(&cv)?;
        }
        Command::TopWords { data, mode, k, lambda, with_context, save } => {
            let (_, gold) = data.load()?;
            let texts = feature_texts(&gold, with_context);
            let fm = FeatureModel::fit(&texts, mode)?;
            let x: Vec<_> = texts.iter().map(|t| fm.transform(t)).collect();
            let model = train_logreg(&x, &coarse_labels(&gold), fm.dim(), TrainParams { lambda, ..TrainParams::default() })?;
            if let Some(p) = save {
                model.save(&p)?;
            }
            let tops = model.classes.iter().map(|c| top_features(&model, &fm, c, k)).collect::<Result<Vec<_>>>()?;
            print_json(&tops)?;
        }
        Command::Run { config, gold, shuffle_labels, format } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(g) = gold {
                cfg.gold_rule = g;
            }
            if shuffle_labels.is_some() {
                cfg.shuffle_labels = shuffle_labels;
            }
            let (_, report) = run_and_report(&cfg, &format)?;
            summarize(&report);
        }
        Command::Report { input, format } => {
            let text = std::fs::read_to_string(&input).map_err(|e| Error::Service(format!("{}: {e}", input.display())))?;
            let report: MetricReport = serde_json::from_str(&text)?;
            match format {
                ReportFormat::Json => print_json(&report)?,
                ReportFormat::Csv => print!("{}", humbench::runner::report_csv(&report)?),
                ReportFormat::Markdown => print!("{}", humbench::runner::report_markdown(&report)),
            }
        }
        Command::Prompt { data, prompt, label, index, shuffle_labels } => {
            let (cb, gold) = data.load()?;
            let record = gold
                .get(index)
                .ok_or_else(|| Error::InvalidInput(format!("index {index} out of range ({} records)", gold.len())))?;
            let factory = match shuffle_labels {
                Some(s) => PromptFactory::shuffled(&cb, s),
                None => PromptFactory::new(&cb),
            };
            let conv = factory.build_prompt(&record.target, &prompt, label.as_deref())?;
            print!("{}", conv.to_transcript());
        }
        Command::Generate { config, label, n, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let codebook = cfg.load_codebook()?;
            let gold = load_gold(&cfg.dataset, &codebook)?;
            let gateway = cfg.build_gateway()?;
            let ex = select_exemplars(&gold, &label, GENERATION_SHOTS, 0, cfg.seed, &BTreeSet::new())?;
            let factory = PromptFactory::new(&codebook);
            let report = generate_samples(&factory, &label, &ex.positives, &gateway, n)?;
            if report.shortfall > 0 {
                warn!("{} of {} samples could not be parsed", report.shortfall, report.requested);
            }
            corpus::write_jsonl(&out, &report.samples)?;
            println!("{} samples written", report.samples.len());
        }
        Command::Serve { bind, log, targets, codebook, token, static_dir, snapshot_every } => {
            let cb = match codebook {
                Some(p) => Codebook::load(p)?,
                None => Codebook::default_codebook(),
            };
            let targets = match targets {
                Some(p) => corpus::read_targets(p)?,
                None => Vec::new(),
            };
            let store = Arc::new(AnnotationStore::open_with(&log, cb, targets, snapshot_every)?);
            let app = service::router(store, token, static_dir);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Service(e.to_string()))?;
            rt.block_on(service::serve(bind, app))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Integrity(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
