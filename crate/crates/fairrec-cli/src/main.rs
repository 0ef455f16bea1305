//! `fairrec` — train and audit pairwise recommenders under
//! provider-group fairness treatments.
//!
//! Exit codes: 0 success, 1 pipeline failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fairrec::harness::{
    self, DataSource, ExperimentConfig, Setting, DEFAULT_LAMBDA,
};
use fairrec::ingest::{self, SplitSpec, ThresholdMode};
use fairrec::model::{build_sensitive_representation, compute_group_stats, rank_top_k};
use fairrec::sampler::{self, UpsampleConfig};
use fairrec::synth::{self, SynthConfig};
use fairrec::trainer;

#[derive(Parser)]
#[command(name = "fairrec", version, about = "Provider-fairness experiments for pairwise recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with controlled imbalance
    Synth(SynthArgs),
    /// Load a rating log with provider metadata into the dataset format
    Ingest(IngestArgs),
    /// Upsample a dataset's minority interactions
    Upsample(UpsampleArgs),
    /// Run one experimental setting end to end (train + audit)
    Train(TrainArgs),
    /// Audit a saved checkpoint against a dataset's test split
    Evaluate(EvaluateArgs),
    /// Baseline-train every imbalance grid cell and emit heatmap tables
    SweepImbalance(SweepImbalanceArgs),
    /// Sweep the upsampling degree and emit the trade-off table
    SweepUpsample(SweepUpsampleArgs),
    /// Compare run reports with bootstrap confidence intervals
    Compare(CompareArgs),
    /// Print a run report, or emit a gnuplot script for a sweep heatmap
    Report(ReportArgs),
}

fn default_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FAIRREC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Args)]
struct ScaleArgs {
    /// Use the full-scale dataset dimensions (slow)
    #[arg(long)]
    paper_scale: bool,
}

impl ScaleArgs {
    fn base(&self, seed: u64) -> SynthConfig {
        if self.paper_scale {
            log::warn!("paper-scale generation and training can take hours");
            eprintln!("warning: --paper-scale selected; expect long runtimes");
            SynthConfig::paper_scale(seed)
        } else {
            SynthConfig::desk_scale(seed)
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory (default: $FAIRREC_OUT or ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    interactions: Option<usize>,
    /// Popularity concentration omega
    #[arg(long)]
    omega: Option<f64>,
    /// Catalog share of class 0
    #[arg(long, default_value_t = 0.5)]
    catalog: f64,
    /// Observation share of class 0
    #[arg(long, default_value_t = 0.5)]
    observation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scale: ScaleArgs,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    providers: PathBuf,
    #[arg(long)]
    attributes: PathBuf,
    /// Binarization threshold
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Comparison mode: at_least or equal
    #[arg(long, default_value = "at_least")]
    mode: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UpsampleArgs {
    /// Dataset directory (from `synth` or `ingest`)
    #[arg(long)]
    data: PathBuf,
    /// Strategy: real, fake, or fake_by_pop
    #[arg(long)]
    strategy: String,
    /// Target minority interaction share (default: catalog share)
    #[arg(long)]
    target: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (TOML); flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Setting: baseline, real, fake, fake_by_pop, reg, real_reg, fake_reg, fake_by_pop_reg
    #[arg(long)]
    setting: Option<String>,
    /// Dataset directory; defaults to a synthetic desk-scale dataset
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scale: ScaleArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint file from `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepImbalanceArgs {
    /// Comma-separated grid values in (0, 0.5]
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5")]
    values: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Popularity concentration of the generated datasets
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scale: ScaleArgs,
}

#[derive(Args)]
struct SweepUpsampleArgs {
    /// Experiment config file (TOML) providing the pipeline template
    #[arg(long)]
    config: Option<PathBuf>,
    /// Strategy when no config file is given
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated ascending target shares
    #[arg(long)]
    shares: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scale: ScaleArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// report.json files; the first is the baseline
    reports: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing report.json
    #[arg(long)]
    run: Option<PathBuf>,
    /// Emit a gnuplot script for this sweep .dat file instead
    #[arg(long)]
    gnuplot: Option<String>,
}

fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow::anyhow!("bad value '{v}': {e}")))
        .collect()
}

/// Errors that are usage mistakes rather than pipeline failures.
struct UsageError(String);

fn parse_setting(s: &str) -> Result<Setting, UsageError> {
    Setting::parse(s).ok_or_else(|| {
        UsageError(format!(
            "unknown setting '{s}' (expected one of: {})",
            Setting::ALL.map(|v| v.as_str()).join(", ")
        ))
    })
}

fn parse_strategy(s: &str) -> Result<fairrec::model::UpsampleStrategy, UsageError> {
    fairrec::model::UpsampleStrategy::parse(s)
        .ok_or_else(|| UsageError(format!("unknown strategy '{s}' (expected real, fake, fake_by_pop)")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse(); // clap exits with 2 on usage errors
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

enum RunError {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        RunError::Pipeline(e)
    }
}

impl From<UsageError> for RunError {
    fn from(e: UsageError) -> Self {
        RunError::Usage(e.0)
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args)?,
        Command::Ingest(args) => cmd_ingest(args)?,
        Command::Upsample(args) => cmd_upsample(args)?,
        Command::Train(args) => cmd_train(args)?,
        Command::Evaluate(args) => cmd_evaluate(args)?,
        Command::SweepImbalance(args) => cmd_sweep_imbalance(args)?,
        Command::SweepUpsample(args) => cmd_sweep_upsample(args)?,
        Command::Compare(args) => cmd_compare(args)?,
        Command::Report(args) => cmd_report(args)?,
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), RunError> {
    let mut cfg = args.scale.base(args.seed);
    if let Some(v) = args.users {
        cfg.num_users = v;
    }
    if let Some(v) = args.items {
        cfg.num_items = v;
    }
    if let Some(v) = args.interactions {
        cfg.num_interactions = v;
    }
    if let Some(v) = args.omega {
        cfg.popularity_scale = v;
    }
    cfg = cfg.with_blocks(args.catalog, args.observation);
    let out = default_out(args.out);
    let ds = synth::generate(&cfg).context("generation failed")?;
    ingest::save_dataset_dir(&ds, &out).context("writing dataset")?;
    println!(
        "wrote {} interactions over {} users x {} items to {}",
        ds.interactions.len(),
        ds.num_users,
        ds.num_items,
        out.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<(), RunError> {
    let mode = ThresholdMode::parse(&args.mode).map_err(|e| UsageError(e.to_string()))?;
    let out = default_out(args.out);
    let (ds, maps) = ingest::load_dataset(
        &args.ratings,
        &args.providers,
        &args.attributes,
        args.threshold,
        mode,
    )
    .context("ingest failed")?;
    ingest::save_dataset_dir(&ds, &out).context("writing dataset")?;
    maps.save_all(&out).context("writing key maps")?;
    println!(
        "ingested {} interactions, {} users, {} items, {} providers into {}",
        ds.interactions.len(),
        ds.num_users,
        ds.num_items,
        maps.providers.len(),
        out.display()
    );
    Ok(())
}

fn cmd_upsample(args: UpsampleArgs) -> Result<(), RunError> {
    let strategy = parse_strategy(&args.strategy)?;
    let ds = ingest::load_dataset_dir(&args.data).context("loading dataset")?;
    let reprs = build_sensitive_representation(&ds).context("sensitive representation")?;
    let stats = compute_group_stats(&ds, &reprs).context("group stats")?;
    let target = args.target.unwrap_or_else(|| stats.catalog_minority_share());
    let cfg = UpsampleConfig {
        strategy,
        target_share: target,
        max_added: None,
        seed: args.seed,
    };
    let out = default_out(args.out);
    let augmented = sampler::upsample(&ds, &reprs, &stats, &cfg).context("upsampling")?;
    let achieved = sampler::minority_interaction_share(&augmented, &reprs, stats.minority_class);
    ingest::save_dataset_dir(&augmented, &out).context("writing dataset")?;
    println!(
        "added {} interactions; minority share {:.4} -> {:.4} (target {:.4}); wrote {}",
        augmented.interactions.len() - ds.interactions.len(),
        stats.interaction_minority_share(),
        achieved,
        target,
        out.display()
    );
    Ok(())
}

fn load_experiment_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<(), RunError> {
    let out = default_out(args.out.clone());
    let mut cfg = match &args.config {
        Some(path) => load_experiment_config(path)?,
        None => {
            let mut c = ExperimentConfig::synthetic_default(Setting::Baseline, out.clone());
            c.source = DataSource::Synth {
                config: args.scale.base(args.seed.unwrap_or(0)),
            };
            c
        }
    };
    cfg.output_dir = out;
    if let Some(s) = &args.setting {
        cfg.setting = parse_setting(s)?;
        if cfg.setting.regularized() && cfg.lambda <= 0.0 {
            cfg.lambda = DEFAULT_LAMBDA;
        }
    }
    if let Some(data) = &args.data {
        cfg.source = DataSource::Dir { path: data.clone() };
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(t) = args.target {
        cfg.target_share = Some(t);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(d) = args.dim {
        cfg.train.dim = d;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    let report = harness::run_setting(&cfg).context("run failed")?;
    println!("{}", serde_json::to_string_pretty(&summary(&report)).unwrap());
    Ok(())
}

fn summary(report: &harness::RunReport) -> serde_json::Value {
    let m = &report.metrics;
    serde_json::json!({
        "setting": report.setting.as_str(),
        "seed": report.seed,
        "k": m.k,
        "ndcg": m.ndcg,
        "delta_r": m.delta_relevance,
        "delta_v": m.delta_visibility,
        "delta_e": m.delta_exposure,
        "minority_relevance_share": m.minority_relevance_share,
        "cov_tot": m.cov_tot,
        "cov_min": m.cov_min,
        "cov_maj": m.cov_maj,
        "achieved_share": report.achieved_share,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), RunError> {
    let ds = ingest::load_dataset_dir(&args.data).context("loading dataset")?;
    let (model, _header) = trainer::load_checkpoint(&args.checkpoint).context("loading checkpoint")?;
    if model.num_users != ds.num_users || model.num_items != ds.num_items {
        return Err(RunError::Pipeline(anyhow::anyhow!(
            "checkpoint shape {}x{} does not match dataset {}x{}",
            model.num_users,
            model.num_items,
            ds.num_users,
            ds.num_items
        )));
    }
    let splits = ingest::split(&ds, &SplitSpec::default()).context("splitting")?;
    let reprs = build_sensitive_representation(&ds).context("sensitive representation")?;
    let stats = compute_group_stats(&splits.train, &reprs).context("group stats")?;
    let mut exclude = splits.train.user_item_sets();
    for i in &splits.validation {
        exclude[i.user as usize].insert(i.item);
    }
    let lists = rank_top_k(
        |u, i| model.score(u, i),
        ds.num_users,
        ds.num_items,
        args.k,
        &exclude,
    );
    let mut truth: Vec<std::collections::HashSet<u32>> =
        vec![std::collections::HashSet::new(); ds.num_users];
    for i in &splits.test {
        truth[i.user as usize].insert(i.item);
    }
    let report = fairrec::metrics::evaluate(&lists, &reprs, &stats, &truth, false)
        .context("evaluation")?;
    let json = serde_json::to_string_pretty(&report).unwrap();
    match args.out {
        Some(path) => std::fs::write(&path, &json).context("writing report")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_sweep_imbalance(args: SweepImbalanceArgs) -> Result<(), RunError> {
    let values = parse_list(&args.values)?;
    let out = default_out(args.out);
    let mut base = args.scale.base(args.seed);
    if let Some(w) = args.omega {
        base.popularity_scale = w;
    }
    let mut template =
        ExperimentConfig::synthetic_default(Setting::Baseline, out.join("runs"));
    template.seed = args.seed;
    if let Some(e) = args.epochs {
        template.train.max_epochs = e;
    }
    if let Some(d) = args.dim {
        template.train.dim = d;
    }
    if let Some(lr) = args.lr {
        template.train.learning_rate = lr;
    }
    if let Some(b) = args.batch {
        template.train.batch_size = b;
    }
    if let Some(p) = args.patience {
        template.train.patience = p;
    }
    if let Some(k) = args.k {
        template.k = k;
    }
    let cells = harness::run_imbalance_sweep(&base, &values, &template, &out)
        .context("sweep failed")?;
    let failures = cells.iter().filter(|c| c.outcome.is_err()).count();
    println!(
        "{} cells done, {} failed; tables in {}",
        cells.len(),
        failures,
        out.display()
    );
    Ok(())
}

fn cmd_sweep_upsample(args: SweepUpsampleArgs) -> Result<(), RunError> {
    let shares = parse_list(&args.shares)?;
    let out = default_out(args.out);
    let template = match &args.config {
        Some(path) => load_experiment_config(path)?,
        None => {
            let strategy = args
                .strategy
                .as_deref()
                .ok_or_else(|| UsageError("either --config or --strategy is required".into()))?;
            let setting = match parse_strategy(strategy)? {
                fairrec::model::UpsampleStrategy::Real => Setting::Real,
                fairrec::model::UpsampleStrategy::Fake => Setting::Fake,
                fairrec::model::UpsampleStrategy::FakeByPop => Setting::FakeByPop,
            };
            let mut c = ExperimentConfig::synthetic_default(setting, out.join("runs"));
            c.source = DataSource::Synth {
                config: args.scale.base(args.seed),
            };
            c.seed = args.seed;
            c
        }
    };
    let rows = harness::run_upsample_sweep(&template, &shares, &out).context("sweep failed")?;
    let best = rows.iter().find(|r| r.best_delta_e).unwrap();
    println!(
        "{} shares done; minimum delta-exposure {:.4} at target {:.3}; table in {}",
        rows.len(),
        best.report.metrics.delta_exposure,
        best.target_share,
        out.join("tradeoff.csv").display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), RunError> {
    if args.reports.len() < 2 {
        return Err(UsageError("need at least two report.json files".into()).into());
    }
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        reports.push(
            serde_json::from_str::<harness::RunReport>(&text)
                .with_context(|| format!("parsing {}", path.display()))?,
        );
    }
    let comparisons = harness::compare_settings(&reports, args.seed).context("comparison")?;
    let out = default_out(args.out).with_extension("csv");
    harness::write_comparison_csv(&comparisons, &out).context("writing table")?;
    for c in &comparisons {
        for d in &c.deltas {
            println!(
                "{} vs {}: {} {:+.6}{}",
                c.other_setting.as_str(),
                c.baseline_setting.as_str(),
                d.metric,
                d.delta,
                if d.significant { " (significant)" } else { "" }
            );
        }
    }
    println!("table written to {}", out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), RunError> {
    if let Some(dat) = &args.gnuplot {
        print!("{}", harness::gnuplot_heatmap_script(dat, "sweep heatmap"));
        return Ok(());
    }
    let run = args
        .run
        .ok_or_else(|| UsageError("pass --run DIR or --gnuplot FILE".into()))?;
    let text = std::fs::read_to_string(run.join("report.json"))
        .with_context(|| format!("reading {}", run.join("report.json").display()))?;
    let report: harness::RunReport =
        serde_json::from_str(&text).context("parsing report.json")?;
    println!("{}", serde_json::to_string_pretty(&summary(&report)).unwrap());
    Ok(())
}
