use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use benchroute::harness::{
    distance_correlation_table, instance_split, ood_gap_sweep, per_instance_routing,
    small_model_routing, subset_quality, leave_one_task_out, ExperimentConfig, Selector,
};
use benchroute::ood::{alpha_grid, generate_pairs, write_pairs, write_pairs_csv, PairConfig};
use benchroute::router::CandidateFilter;
use benchroute::svg::{Chart, Mark};
use benchroute::synth::{generate_synthetic, SyntheticSpec};
use benchroute::{
    jsonfmt, BenchmarkStore, Execution, IngestConfig, PredictorConfig, RouteRequest, ScoreKind,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ServiceConfig;
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "benchroute", version, about = "Route new tasks to LLMs using benchmark evaluation dumps")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw JSONL files and write a store directory.
    Ingest(IngestArgs),
    /// Load a store or raw files and print a summary line.
    Validate(ValidateArgs),
    /// Replay benchmark tasks to produce distance/accuracy pairs (CSV).
    Pairs(PairsArgs),
    /// Route a new task (or each of its inputs) to a model; prints JSON.
    Route(RouteArgs),
    /// Leave-one-task-out routing evaluation; prints per-task CSV.
    Evaluate(EvaluateArgs),
    /// Mixing sweeps, small-model routing, distance subsets and correlations.
    Sweep(SweepArgs),
    /// Generate a synthetic store with known per-task accuracies.
    Synth(SynthArgs),
    /// Serve routing decisions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RawInput {
    /// Samples JSONL (task_id, sample_id, embedding, labels | raw_metrics, ll).
    #[arg(long, requires = "models")]
    pub samples: Option<PathBuf>,
    /// Model roster JSONL (model_id, n_params_b, display_name).
    #[arg(long, requires = "samples")]
    pub models: Option<PathBuf>,
    /// Ingest options as TOML; flags below override it.
    #[arg(long)]
    pub ingest_config: Option<PathBuf>,
    /// Derive binary labels from raw metrics using per-task thresholds.
    #[arg(long)]
    pub binarize: bool,
    /// Per-task binarization threshold, TASK=VALUE (repeatable).
    #[arg(long = "threshold", value_name = "TASK=VALUE")]
    pub thresholds: Vec<String>,
    /// Lower bound of continuous labels (rescaled to [0, 1]).
    #[arg(long)]
    pub label_min: Option<f64>,
    #[arg(long)]
    pub label_max: Option<f64>,
    /// Expected embedding dimension.
    #[arg(long)]
    pub dimension: Option<usize>,
}

impl RawInput {
    fn ingest_config(&self) -> Result<IngestConfig> {
        let mut cfg = match &self.ingest_config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => IngestConfig::default(),
        };
        if self.binarize {
            cfg.binarize = true;
        }
        if !self.thresholds.is_empty() {
            let mut map = cfg.thresholds.take().unwrap_or_default();
            for t in &self.thresholds {
                let (task, value) = t
                    .split_once('=')
                    .with_context(|| format!("threshold {t:?} is not TASK=VALUE"))?;
                map.insert(task.to_string(), value.parse().with_context(|| format!("threshold {t:?}"))?);
            }
            cfg.thresholds = Some(map);
        }
        cfg.label_min = self.label_min.or(cfg.label_min);
        cfg.label_max = self.label_max.or(cfg.label_max);
        cfg.dimension = self.dimension.or(cfg.dimension);
        Ok(cfg)
    }

    fn load(&self) -> Result<Option<BenchmarkStore>> {
        match (&self.samples, &self.models) {
            (Some(s), Some(m)) => Ok(Some(BenchmarkStore::load(s, m, &self.ingest_config()?)?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub raw: RawInput,
    /// Output store directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["store", "samples"]))]
pub struct ValidateArgs {
    /// Store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[command(flatten)]
    pub raw: RawInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Parallel,
    Sequential,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Parallel => Execution::Parallel,
            ExecArg::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 19)]
    pub kappa: usize,
    /// Comma-separated mixing levels; default 15 levels in [0, 0.2].
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 50)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    pub execution: ExecArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    S1,
    S2,
    S3,
}

impl From<ScoreArg> for ScoreKind {
    fn from(s: ScoreArg) -> Self {
        match s {
            ScoreArg::S1 => ScoreKind::S1,
            ScoreArg::S2 => ScoreKind::S2,
            ScoreArg::S3 => ScoreKind::S3,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["input", "request", "requests"]))]
pub struct RouteArgs {
    /// Service config TOML (store paths and router settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Precomputed pairs CSV; the smoother is replayed from the store otherwise.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Task inputs as JSONL: one embedding array, or an object with an
    /// `embedding` field, per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// A single route request JSON document, as accepted by POST /v1/route.
    #[arg(long)]
    pub request: Option<PathBuf>,
    /// Route request JSONL; prints one response per line.
    #[arg(long)]
    pub requests: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub score: Option<ScoreArg>,
    #[arg(long)]
    pub per_instance: bool,
    /// Only consider models with at most this many parameters (billions).
    #[arg(long)]
    pub max_params: Option<f64>,
    /// Comma-separated candidate model ids.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Monte-Carlo seed for the confidence gate.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Experiment config TOML; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated score rows (s1,s2,s3,s3_true_p,ll).
    #[arg(long, value_delimiter = ',')]
    pub scores: Option<Vec<String>>,
    #[arg(long)]
    pub max_params: Option<f64>,
    /// Mixing repeats used to fit the smoother per fold.
    #[arg(long)]
    pub pair_repeats: Option<usize>,
    #[arg(long, value_enum)]
    pub execution: Option<ExecArg>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(e) = self.eta {
            cfg.eta = e;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(scores) = &self.scores {
            cfg.score_kinds = scores.iter().map(|s| s.parse()).collect::<benchroute::Result<_>>()?;
        }
        if self.max_params.is_some() {
            cfg.model_filter = self.max_params;
        }
        if let Some(r) = self.pair_repeats {
            cfg.pair_repeats = r;
        }
        if let Some(e) = self.execution {
            cfg.execution = e.into();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Per-task CSV output; stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-selector summary CSV.
    #[arg(long)]
    pub summary_csv: Option<PathBuf>,
    /// Full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    /// Routing and predictor accuracy as a function of the mixing level.
    Gap,
    /// Routing restricted to small models against a fixed reference model.
    SmallModels,
    /// Per-instance routing quality on test subsets close to the train set.
    Subset,
    /// Dataset distance against score/accuracy correlation per run.
    Correlation,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    #[arg(long, value_enum)]
    pub analysis: Analysis,
    /// Directory for CSV and SVG outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated mixing levels.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Fixed comparison model for `small-models`.
    #[arg(long)]
    pub reference_model: Option<String>,
    /// Whole tasks held out for `subset`.
    #[arg(long, default_value_t = 2)]
    pub holdout_tasks: usize,
    /// Fraction of every other task held out for `subset`.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Neighbors used for the train-set distance in `subset`.
    #[arg(long, default_value_t = 5)]
    pub knn: usize,
    /// Comma-separated distance thresholds for `subset`; quantiles when omitted.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Full generator spec as TOML; the size flags are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub tasks: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 6)]
    pub models: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Validate(a) => validate(a),
        Command::Pairs(a) => pairs(a),
        Command::Route(a) => route(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let store = a.raw.load()?.context("--samples and --models are required")?;
    store.save(&a.out)?;
    println!("{}", store.summary());
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let store = match &a.store {
        Some(dir) => BenchmarkStore::load_dir(dir)?,
        None => a.raw.load()?.context("--samples and --models are required")?,
    };
    println!("ok {}", store.summary());
    Ok(())
}

fn pairs(a: PairsArgs) -> Result<()> {
    let store = BenchmarkStore::load_dir(&a.store)?;
    let predictor = PredictorConfig {
        k: a.k,
        threshold: a.threshold,
        ..PredictorConfig::default()
    };
    let cfg = PairConfig {
        alphas: a.alphas.unwrap_or_else(|| alpha_grid(15, 0.2)),
        repeats: a.repeats,
        cap: a.cap,
        kappa: a.kappa,
        seed: a.seed,
    };
    let set = generate_pairs(&store, &predictor, &cfg, a.execution.into())?;
    for w in &set.warnings {
        log::warn!("{w}");
    }
    match &a.out {
        Some(p) => write_pairs_csv(p, &set.pairs)?,
        None => write_pairs(io::stdout().lock(), &set.pairs)?,
    }
    log::info!("{} pairs", set.pairs.len());
    Ok(())
}

/// Parse task inputs: one embedding per JSONL line, either a bare array or an
/// object with an `embedding` field.
pub fn read_inputs(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let emb = match v {
            serde_json::Value::Object(mut m) => m
                .remove("embedding")
                .with_context(|| format!("{}:{}: missing embedding", path.display(), i + 1))?,
            other => other,
        };
        out.push(
            serde_json::from_value(emb)
                .with_context(|| format!("{}:{}: embedding must be an array of numbers", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn route(a: RouteArgs) -> Result<()> {
    let mut cfg = ServiceConfig::load(a.config.as_deref())?;
    if let Some(s) = a.store {
        cfg.store.dir = Some(s);
    }
    if let Some(p) = a.pairs {
        cfg.store.pairs = Some(p);
    }
    let router = service::load_router(&cfg)?;

    let overrides = |req: &mut RouteRequest| {
        if let Some(s) = a.score {
            req.score = Some(s.into());
        }
        if a.per_instance {
            req.per_instance = true;
        }
        if a.max_params.is_some() || a.models.is_some() {
            let f = req.candidates.get_or_insert_with(CandidateFilter::default);
            if a.max_params.is_some() {
                f.max_params_b = a.max_params;
            }
            if a.models.is_some() {
                f.model_ids = a.models.clone();
            }
        }
        if a.seed.is_some() {
            req.seed = a.seed;
        }
    };

    let mut stdout = BufWriter::new(io::stdout().lock());
    if let Some(path) = &a.requests {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut req: RouteRequest =
                serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            overrides(&mut req);
            writeln!(stdout, "{}", service::route_json(&router, &req)?)?;
        }
        return Ok(stdout.flush()?);
    }

    let mut req = match (&a.request, &a.input) {
        (Some(p), _) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        (None, Some(p)) => RouteRequest {
            inputs: read_inputs(p)?,
            candidates: None,
            score: None,
            per_instance: false,
            seed: None,
        },
        (None, None) => unreachable!("clap enforces one query source"),
    };
    overrides(&mut req);
    writeln!(stdout, "{}", service::route_json(&router, &req)?)?;
    Ok(stdout.flush()?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let store = BenchmarkStore::load_dir(&a.exp.store)?;
    let cfg = a.exp.config()?;
    let report = leave_one_task_out(&store, &cfg)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    match &a.csv {
        Some(p) => report.write_csv(create(p)?)?,
        None => report.write_csv(io::stdout().lock())?,
    }
    if let Some(p) = &a.summary_csv {
        report.write_summary_csv(create(p)?)?;
    }
    if let Some(p) = &a.json {
        let mut w = create(p)?;
        jsonfmt::to_writer(&mut w, &report)?;
        w.flush()?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let store = BenchmarkStore::load_dir(&a.exp.store)?;
    let mut cfg = a.exp.config()?;
    if let Some(al) = &a.alphas {
        cfg.alphas = al.clone();
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);

    match a.analysis {
        Analysis::Gap => {
            let sw = ood_gap_sweep(&store, &cfg)?;
            sw.write_csv(create(&out("gap.csv"))?)?;
            sw.write_predictor_csv(create(&out("gap_predictor.csv"))?)?;
            let mut acc = Chart::new("Selected-model accuracy vs mixing level", "alpha", "accuracy");
            let mut by_sel: BTreeMap<Selector, (Vec<(f64, f64)>, Vec<f64>)> = BTreeMap::new();
            for p in &sw.points {
                for (sel, ms) in &p.accuracy {
                    let e = by_sel.entry(*sel).or_default();
                    e.0.push((p.alpha, ms.mean));
                    e.1.push(ms.sd);
                }
            }
            for (sel, (pts, sd)) in by_sel {
                acc.add(sel.as_str(), Mark::Line, pts, Some(sd));
            }
            fs::write(out("gap.svg"), acc.render())?;
            let mut pa = Chart::new("Predictor accuracy vs mixing level", "alpha", "accuracy");
            pa.add(
                "predictor",
                Mark::Line,
                sw.points.iter().map(|p| (p.alpha, p.predictor_accuracy.mean)).collect(),
                Some(sw.points.iter().map(|p| p.predictor_accuracy.sd).collect()),
            );
            fs::write(out("gap_predictor.svg"), pa.render())?;
        }
        Analysis::Correlation => {
            let sw = ood_gap_sweep(&store, &cfg)?;
            let table = distance_correlation_table(&sw.runs);
            if table.skipped + table.undefined > 0 {
                log::warn!(
                    "{} runs skipped, {} undefined correlations",
                    table.skipped,
                    table.undefined
                );
            }
            table.write_csv(create(&out("correlation.csv"))?)?;
            let mut chart = Chart::new("Score/accuracy correlation vs dataset distance", "u", "pearson");
            for sel in [Selector::S1, Selector::S2, Selector::S3] {
                let pts: Vec<(f64, f64)> = table
                    .rows
                    .iter()
                    .filter_map(|r| r.pearson.get(&sel).map(|&v| (r.u, v)))
                    .collect();
                if !pts.is_empty() {
                    chart.add(sel.as_str(), Mark::Points, pts, None);
                }
            }
            fs::write(out("correlation.svg"), chart.render())?;
        }
        Analysis::SmallModels => {
            let reference = a
                .reference_model
                .as_deref()
                .context("--reference-model is required for small-models")?;
            if cfg.model_filter.is_none() {
                bail!("--max-params is required for small-models");
            }
            let rep = small_model_routing(&store, &cfg, reference)?;
            rep.write_csv(create(&out("small_models.csv"))?)?;
            let mut chart = Chart::new("Small-model routing vs reference", "alpha", "accuracy");
            for sel in Selector::ALL {
                let pts: Vec<(f64, f64)> = cfg
                    .alphas
                    .iter()
                    .filter_map(|&al| rep.mean_accuracy(al, sel).map(|v| (al, v)))
                    .collect();
                if !pts.is_empty() {
                    chart.add(sel.as_str(), Mark::Line, pts, None);
                }
            }
            let ref_pts: Vec<(f64, f64)> = cfg
                .alphas
                .iter()
                .map(|&al| {
                    let v: Vec<f64> = rep
                        .rows
                        .iter()
                        .filter(|r| r.alpha == al)
                        .map(|r| r.reference_accuracy)
                        .collect();
                    (al, v.iter().sum::<f64>() / v.len().max(1) as f64)
                })
                .collect();
            chart.add(reference, Mark::Line, ref_pts, None);
            fs::write(out("small_models.svg"), chart.render())?;
        }
        Analysis::Subset => {
            let split = instance_split(&store, a.holdout_tasks, a.test_fraction, cfg.rng_seed)?;
            let outcomes = per_instance_routing(&store, &split, cfg.k, a.knn, cfg.execution)?;
            let thresholds = match &a.thresholds {
                Some(t) => t.clone(),
                None => {
                    let mut d: Vec<f64> = outcomes.iter().map(|o| o.distance).collect();
                    d.sort_by(f64::total_cmp);
                    (1..=10)
                        .map(|i| {
                            if i == 10 {
                                f64::INFINITY
                            } else {
                                d[(i * d.len() / 10).min(d.len() - 1)]
                            }
                        })
                        .collect()
                }
            };
            let rows = subset_quality(&outcomes, &thresholds);
            let mut w = create(&out("subset.csv"))?;
            writeln!(w, "threshold,retained_fraction,mean_quality")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{}",
                    r.threshold,
                    r.retained_fraction,
                    r.mean_quality.map(|q| q.to_string()).unwrap_or_default()
                )?;
            }
            w.flush()?;
            let mut chart = Chart::new("Per-instance quality vs retained test fraction", "retained fraction", "quality");
            chart.add(
                "per-instance kNN",
                Mark::Line,
                rows.iter()
                    .filter_map(|r| r.mean_quality.map(|q| (r.retained_fraction, q)))
                    .collect(),
                None,
            );
            fs::write(out("subset.svg"), chart.render())?;
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticSpec::planted(a.tasks, a.samples, a.models, a.noise, a.seed),
    };
    let (store, truth) = generate_synthetic(&spec)?;
    store.save(&a.out)?;
    truth.save(&a.out.join("ground_truth.json"))?;
    println!("{}", store.summary());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = ServiceConfig::load(a.config.as_deref())?;
    if let Some(s) = a.store {
        cfg.store.dir = Some(s);
    }
    if let Some(p) = a.pairs {
        cfg.store.pairs = Some(p);
    }
    if let Some(b) = a.bind {
        cfg.server.bind = b;
    }
    let addr = cfg.validate()?;
    let router = Arc::new(service::load_router(&cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        // Printed on stdout so wrappers can discover an ephemeral port.
        println!("listening on {}", listener.local_addr()?);
        service::serve(listener, router).await
    })
}
