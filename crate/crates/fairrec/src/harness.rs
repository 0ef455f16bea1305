//! Experiment orchestration: the eight treatment settings, imbalance and
//! upsampling sweeps, setting comparison with bootstrap intervals, and
//! reproducible on-disk artifacts.
//!
//! Every run writes a manifest (full config + content hash + seed) from
//! which the run can be replayed bit-identically in single-threaded mode.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{self, SplitSpec, ThresholdMode};
use crate::metrics::{self, MetricsReport};
use crate::model::{
    build_sensitive_representation, compute_group_stats, rank_top_k, Dataset, UpsampleStrategy,
};
use crate::sampler::{self, UpsampleConfig};
use crate::synth::{self, SynthConfig};
use crate::trainer::{self, TrainConfig};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synth { config: SynthConfig },
    Ingest {
        ratings: PathBuf,
        providers: PathBuf,
        attributes: PathBuf,
        threshold: f64,
        mode: ThresholdMode,
    },
    /// A directory previously written by `ingest::save_dataset_dir`.
    Dir { path: PathBuf },
}

/// The eight treatment combinations of upsampling and regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Baseline,
    Real,
    Fake,
    FakeByPop,
    Reg,
    RealReg,
    FakeReg,
    FakeByPopReg,
}

impl Setting {
    pub const ALL: [Setting; 8] = [
        Setting::Baseline,
        Setting::Real,
        Setting::Fake,
        Setting::FakeByPop,
        Setting::Reg,
        Setting::RealReg,
        Setting::FakeReg,
        Setting::FakeByPopReg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::Real => "real",
            Setting::Fake => "fake",
            Setting::FakeByPop => "fake_by_pop",
            Setting::Reg => "reg",
            Setting::RealReg => "real_reg",
            Setting::FakeReg => "fake_reg",
            Setting::FakeByPopReg => "fake_by_pop_reg",
        }
    }

    pub fn parse(s: &str) -> Option<Setting> {
        Setting::ALL
            .into_iter()
            .find(|v| v.as_str() == s || v.as_str().replace('_', "-") == s)
    }

    /// The upsampling strategy this setting applies, if any.
    pub fn strategy(self) -> Option<UpsampleStrategy> {
        match self {
            Setting::Real | Setting::RealReg => Some(UpsampleStrategy::Real),
            Setting::Fake | Setting::FakeReg => Some(UpsampleStrategy::Fake),
            Setting::FakeByPop | Setting::FakeByPopReg => Some(UpsampleStrategy::FakeByPop),
            Setting::Baseline | Setting::Reg => None,
        }
    }

    pub fn regularized(self) -> bool {
        matches!(
            self,
            Setting::Reg | Setting::RealReg | Setting::FakeReg | Setting::FakeByPopReg
        )
    }
}

/// Default regularization weight for the reg-bearing settings.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// One experiment: dataset, treatment, training setup, outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub setting: Setting,
    /// Minority interaction share to upsample to; defaults to the
    /// minority's catalog representation when absent.
    pub target_share: Option<f64>,
    /// Regularization weight; ignored by unregularized settings.
    pub lambda: f64,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub k: usize,
    pub triplets_per_observation: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn synthetic_default(setting: Setting, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            source: DataSource::Synth {
                config: SynthConfig::desk_scale(0),
            },
            setting,
            target_share: None,
            lambda: if setting.regularized() { DEFAULT_LAMBDA } else { 0.0 },
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            k: 10,
            triplets_per_observation: sampler::DEFAULT_TRIPLETS_PER_OBSERVATION,
            seed: 0,
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.setting.regularized() && self.lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "setting {} requires lambda > 0",
                self.setting.as_str()
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if let Some(t) = self.target_share {
            if !(0.0..1.0).contains(&t) || t <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "target_share {t} must lie in (0, 1)"
                )));
            }
        }
        self.train.validate()?;
        self.split.validate()?;
        Ok(())
    }
}

fn stage_err(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Stage {
        stage: stage.to_string(),
        msg: e.to_string(),
    }
}

fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// SHA-256 hex of a dataset's canonical JSON form.
pub fn dataset_hash(dataset: &Dataset) -> String {
    let json = serde_json::to_vec(dataset).expect("dataset serializes");
    hex(&Sha256::digest(&json))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Replay information for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    /// Content hash of the input dataset after the data stage.
    pub dataset_hash: String,
    pub seed: u64,
}

/// A finished run: audit metrics plus replay identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub setting: Setting,
    pub seed: u64,
    pub dataset_hash: String,
    pub achieved_share: Option<f64>,
    pub metrics: MetricsReport,
}

fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Synth { config } => {
            // content-addressed cache of generated datasets
            let key = hex(&Sha256::digest(serde_json::to_vec(config)?))[..16].to_string();
            let cache_dir = cfg.output_dir.join("cache").join(key);
            if cache_dir.join("meta.json").exists() {
                if let Ok(ds) = ingest::load_dataset_dir(&cache_dir) {
                    return Ok(ds);
                }
            }
            let ds = synth::generate(config)?;
            ingest::save_dataset_dir(&ds, &cache_dir)?;
            Ok(ds)
        }
        DataSource::Ingest {
            ratings,
            providers,
            attributes,
            threshold,
            mode,
        } => {
            let (ds, maps) = ingest::load_dataset(ratings, providers, attributes, *threshold, *mode)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            maps.save_all(&cfg.output_dir)?;
            Ok(ds)
        }
        DataSource::Dir { path } => ingest::load_dataset_dir(path),
    }
}

/// Runs one experimental setting end to end and writes artifacts
/// (report.json, report.csv, trainlog.csv, model.ckpt, manifest.json)
/// under the output directory.
///
/// On failure, partial artifacts stay behind a `failed` marker recording
/// the stage and the error.
pub fn run_setting(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    match run_setting_inner(cfg) {
        Ok(report) => Ok(report),
        Err(e) => {
            let _ = std::fs::write(cfg.output_dir.join("failed"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_setting_inner(cfg: &ExperimentConfig) -> Result<RunReport> {
    let dataset = resolve_dataset(cfg).map_err(stage_err("data"))?;
    let ds_hash = dataset_hash(&dataset);

    let splits = ingest::split(&dataset, &cfg.split).map_err(stage_err("split"))?;
    let reprs = build_sensitive_representation(&dataset).map_err(stage_err("stats"))?;
    let stats = compute_group_stats(&splits.train, &reprs).map_err(stage_err("stats"))?;

    let (train_data, achieved_share) = match cfg.setting.strategy() {
        Some(strategy) => {
            let target = cfg
                .target_share
                .unwrap_or_else(|| stats.catalog_minority_share());
            let ucfg = UpsampleConfig {
                strategy,
                target_share: target,
                max_added: None,
                seed: sub_seed(cfg.seed, "upsample"),
            };
            let augmented =
                sampler::upsample(&splits.train, &reprs, &stats, &ucfg).map_err(stage_err("upsample"))?;
            let achieved =
                sampler::minority_interaction_share(&augmented, &reprs, stats.minority_class);
            (augmented, Some(achieved))
        }
        None => (splits.train.clone(), None),
    };

    let triplets = sampler::build_triplets(
        &train_data,
        cfg.triplets_per_observation,
        sub_seed(cfg.seed, "triplets"),
    )
    .map_err(stage_err("triplets"))?;

    let mut tcfg = cfg.train.clone();
    tcfg.lambda = if cfg.setting.regularized() { cfg.lambda } else { 0.0 };
    tcfg.seed = sub_seed(cfg.seed, "train");
    let validation: Vec<(u32, u32)> = splits.validation.iter().map(|i| (i.user, i.item)).collect();
    let (model, train_log) = trainer::train(&train_data, &validation, &triplets, &tcfg, &reprs, &stats)
        .map_err(stage_err("train"))?;

    // rank over items unseen in training and validation; audit against test
    let mut exclude = train_data.user_item_sets();
    for i in &splits.validation {
        exclude[i.user as usize].insert(i.item);
    }
    let lists = rank_top_k(
        |u, i| model.score(u, i),
        dataset.num_users,
        dataset.num_items,
        cfg.k,
        &exclude,
    );
    let mut truth: Vec<HashSet<u32>> = vec![HashSet::new(); dataset.num_users];
    for i in &splits.test {
        truth[i.user as usize].insert(i.item);
    }
    let metrics =
        metrics::evaluate(&lists, &reprs, &stats, &truth, true).map_err(stage_err("evaluate"))?;

    let report = RunReport {
        setting: cfg.setting,
        seed: cfg.seed,
        dataset_hash: ds_hash.clone(),
        achieved_share,
        metrics,
    };

    // artifacts
    let dir = &cfg.output_dir;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write_report_csv(&[report.clone()], dir.join("report.csv"))?;
    train_log.write_csv(dir.join("trainlog.csv"))?;
    trainer::save_checkpoint(
        &model,
        tcfg.seed,
        trainer::config_hash(&tcfg),
        dir.join("model.ckpt"),
    )?;
    let manifest = Manifest {
        config: cfg.clone(),
        dataset_hash: ds_hash,
        seed: cfg.seed,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let _ = std::fs::remove_file(dir.join("failed"));
    Ok(report)
}

/// Replays a run from its manifest; single-threaded, bit-exact.
pub fn run_from_manifest<P: AsRef<Path>>(path: P) -> Result<RunReport> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path.as_ref())?)?;
    run_setting(&manifest.config)
}

/// Writes run reports as a flat CSV table.
pub fn write_report_csv<P: AsRef<Path>>(reports: &[RunReport], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "setting",
        "seed",
        "k",
        "ndcg",
        "delta_r",
        "delta_v",
        "delta_e",
        "minority_relevance_share",
        "cov_tot",
        "cov_min",
        "cov_maj",
        "achieved_share",
        "dataset_hash",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
    for r in reports {
        let m = &r.metrics;
        w.write_record([
            r.setting.as_str().to_string(),
            r.seed.to_string(),
            m.k.to_string(),
            format!("{:.17e}", m.ndcg),
            format!("{:.17e}", m.delta_relevance),
            format!("{:.17e}", m.delta_visibility),
            format!("{:.17e}", m.delta_exposure),
            format!("{:.17e}", m.minority_relevance_share),
            format!("{:.17e}", m.cov_tot),
            opt(m.cov_min),
            opt(m.cov_maj),
            opt(r.achieved_share),
            r.dataset_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of the imbalance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub catalog_share: f64,
    pub observation_share: f64,
    pub outcome: std::result::Result<RunReport, String>,
}

/// Baseline-trains every (L_x, O_y) grid cell and tabulates the minority
/// relevance share and the three disparities.
///
/// Cells run in a bounded worker pool; each cell is internally
/// single-threaded and seeded independently, so results do not depend on
/// scheduling. Per-cell failures are recorded and the sweep continues.
pub fn run_imbalance_sweep(
    base_synth: &SynthConfig,
    values: &[f64],
    template: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<SweepCell>> {
    let grid = synth::sweep_grid(base_synth, values)?;
    std::fs::create_dir_all(out_dir)?;
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, synth_cfg)| {
            let x = synth_cfg.catalog_block[0];
            let y = synth_cfg.observation_block[0];
            let mut cfg = template.clone();
            cfg.setting = Setting::Baseline;
            cfg.lambda = 0.0;
            cfg.source = DataSource::Synth {
                config: SynthConfig {
                    seed: sub_seed(template.seed, &format!("cell-{idx}")),
                    ..synth_cfg.clone()
                },
            };
            cfg.output_dir = out_dir.join(format!("cell_{x:.1}_{y:.1}"));
            let outcome = run_setting(&cfg).map_err(|e| e.to_string());
            SweepCell {
                catalog_share: x,
                observation_share: y,
                outcome,
            }
        })
        .collect();

    for (name, pick) in [
        ("relevance_share", pick_share as fn(&RunReport) -> f64),
        ("delta_v", pick_dv),
        ("delta_e", pick_de),
    ] {
        write_triangle_csv(&cells, values, pick, out_dir.join(format!("{name}.csv")))?;
        write_gnuplot_dat(&cells, pick, out_dir.join(format!("{name}.dat")))?;
    }
    Ok(cells)
}

fn pick_share(r: &RunReport) -> f64 {
    r.metrics.minority_relevance_share
}
fn pick_dv(r: &RunReport) -> f64 {
    r.metrics.delta_visibility
}
fn pick_de(r: &RunReport) -> f64 {
    r.metrics.delta_exposure
}

/// Half-triangular matrix (rows = catalog share x, columns = observation
/// share y, populated where x >= y).
fn write_triangle_csv<P: AsRef<Path>>(
    cells: &[SweepCell],
    values: &[f64],
    pick: fn(&RunReport) -> f64,
    path: P,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["catalog\\observation".to_string()];
    header.extend(values.iter().map(|v| format!("{v}")));
    w.write_record(&header)?;
    for &x in values {
        let mut row = vec![format!("{x}")];
        for &y in values {
            let cell = cells
                .iter()
                .find(|c| (c.catalog_share - x).abs() < 1e-9 && (c.observation_share - y).abs() < 1e-9);
            row.push(match cell {
                Some(c) => match &c.outcome {
                    Ok(r) => format!("{:.6}", pick(r)),
                    Err(_) => "failed".to_string(),
                },
                None => String::new(), // x < y: outside the half-triangle
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// gnuplot-compatible `x y value` rows, blank line between x blocks.
fn write_gnuplot_dat<P: AsRef<Path>>(
    cells: &[SweepCell],
    pick: fn(&RunReport) -> f64,
    path: P,
) -> Result<()> {
    let mut out = String::from("# catalog_share observation_share value\n");
    let mut last_x = f64::NAN;
    for c in cells {
        if last_x.is_finite() && (c.catalog_share - last_x).abs() > 1e-9 {
            out.push('\n');
        }
        last_x = c.catalog_share;
        if let Ok(r) = &c.outcome {
            out.push_str(&format!(
                "{} {} {:.6}\n",
                c.catalog_share,
                c.observation_share,
                pick(r)
            ));
        }
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// One row of the upsampling-degree trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub target_share: f64,
    pub report: RunReport,
    /// True on the row minimizing delta-exposure.
    pub best_delta_e: bool,
}

/// Sweeps the upsampling target share for a fixed strategy and tabulates
/// the accuracy/disparity trade-off, marking the argmin of ΔE.
pub fn run_upsample_sweep(
    template: &ExperimentConfig,
    shares: &[f64],
    out_dir: &Path,
) -> Result<Vec<TradeoffRow>> {
    if shares.is_empty() {
        return Err(Error::InvalidConfig("empty share list".into()));
    }
    if shares.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("shares must be strictly ascending".into()));
    }
    if template.setting.strategy().is_none() {
        return Err(Error::InvalidConfig(
            "upsample sweep requires an upsampling setting".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &share in shares {
        let mut cfg = template.clone();
        cfg.target_share = Some(share);
        cfg.output_dir = out_dir.join(format!("share_{share:.3}"));
        let report = run_setting(&cfg)?;
        rows.push(TradeoffRow {
            target_share: share,
            report,
            best_delta_e: false,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| {
            a.1.report
                .metrics
                .delta_exposure
                .total_cmp(&b.1.report.metrics.delta_exposure)
        })
        .map(|(i, _)| i)
        .unwrap();
    rows[best].best_delta_e = true;

    let mut w = csv::Writer::from_path(out_dir.join("tradeoff.csv"))?;
    w.write_record([
        "target_share",
        "achieved_share",
        "ndcg",
        "delta_r",
        "delta_v",
        "delta_e",
        "cov_tot",
        "cov_min",
        "cov_maj",
        "best_delta_e",
    ])?;
    for row in &rows {
        let m = &row.report.metrics;
        w.write_record([
            format!("{}", row.target_share),
            row.report
                .achieved_share
                .map_or(String::new(), |s| format!("{s:.6}")),
            format!("{:.6}", m.ndcg),
            format!("{:.6}", m.delta_relevance),
            format!("{:.6}", m.delta_visibility),
            format!("{:.6}", m.delta_exposure),
            format!("{:.6}", m.cov_tot),
            m.cov_min.map_or(String::new(), |v| format!("{v:.6}")),
            m.cov_maj.map_or(String::new(), |v| format!("{v:.6}")),
            if row.best_delta_e { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Delta of one metric between two runs, with a bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub baseline: f64,
    pub other: f64,
    pub delta: f64,
    /// 95% percentile-bootstrap interval over paired per-user resamples;
    /// None when per-user values are unavailable.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// True when the bootstrap interval excludes 0.
    pub significant: bool,
}

/// Pairwise comparison of one run against a baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_setting: Setting,
    pub other_setting: Setting,
    pub deltas: Vec<MetricDelta>,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;

fn bootstrap_delta(
    base: &[Option<f64>],
    other: &[Option<f64>],
    seed: u64,
) -> Option<(f64, f64)> {
    let paired: Vec<(f64, f64)> = base
        .iter()
        .zip(other)
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some((*a, *b)),
            _ => None,
        })
        .collect();
    if paired.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut sum = 0.0;
        for _ in 0..paired.len() {
            let (a, b) = paired[rng.gen_range(0..paired.len())];
            sum += b - a;
        }
        deltas.push(sum / paired.len() as f64);
    }
    deltas.sort_by(f64::total_cmp);
    let lo = deltas[(BOOTSTRAP_RESAMPLES as f64 * 0.025) as usize];
    let hi = deltas[(BOOTSTRAP_RESAMPLES as f64 * 0.975) as usize - 1];
    Some((lo, hi))
}

/// Compares each report against the first (the baseline), with paired
/// percentile-bootstrap intervals over per-user values.
pub fn compare_settings(reports: &[RunReport], seed: u64) -> Result<Vec<Comparison>> {
    if reports.len() < 2 {
        return Err(Error::InvalidConfig(
            "comparison needs at least two reports".into(),
        ));
    }
    let base = &reports[0];
    for r in &reports[1..] {
        if r.dataset_hash != base.dataset_hash {
            return Err(Error::InvalidConfig(
                "reports were produced on different datasets".into(),
            ));
        }
        if r.metrics.k != base.metrics.k {
            return Err(Error::InvalidConfig("reports use different k".into()));
        }
    }
    let mut comparisons = Vec::new();
    for r in &reports[1..] {
        let mut deltas = Vec::new();
        let pairs: [(&str, f64, f64, Option<(&Vec<Option<f64>>, &Vec<Option<f64>>)>); 4] = [
            (
                "ndcg",
                base.metrics.ndcg,
                r.metrics.ndcg,
                per_user_pair(base, r, |p| &p.ndcg),
            ),
            (
                "delta_r",
                base.metrics.delta_relevance,
                r.metrics.delta_relevance,
                per_user_pair(base, r, |p| &p.relevance_ratio),
            ),
            (
                "delta_v",
                base.metrics.delta_visibility,
                r.metrics.delta_visibility,
                per_user_pair(base, r, |p| &p.visibility_ratio),
            ),
            (
                "delta_e",
                base.metrics.delta_exposure,
                r.metrics.delta_exposure,
                per_user_pair(base, r, |p| &p.exposure_ratio),
            ),
        ];
        for (name, b, o, users) in pairs {
            let ci = users.and_then(|(ub, uo)| {
                bootstrap_delta(ub, uo, sub_seed(seed, &format!("{name}-{}", r.setting.as_str())))
            });
            let (ci_low, ci_high) = match ci {
                Some((lo, hi)) => (Some(lo), Some(hi)),
                None => (None, None),
            };
            let significant = matches!(ci, Some((lo, hi)) if lo > 0.0 || hi < 0.0);
            deltas.push(MetricDelta {
                metric: name.to_string(),
                baseline: b,
                other: o,
                delta: o - b,
                ci_low,
                ci_high,
                significant,
            });
        }
        comparisons.push(Comparison {
            baseline_setting: base.setting,
            other_setting: r.setting,
            deltas,
        });
    }
    Ok(comparisons)
}

fn per_user_pair<'a>(
    base: &'a RunReport,
    other: &'a RunReport,
    field: fn(&crate::metrics::PerUserBreakdown) -> &Vec<Option<f64>>,
) -> Option<(&'a Vec<Option<f64>>, &'a Vec<Option<f64>>)> {
    match (&base.metrics.per_user, &other.metrics.per_user) {
        (Some(b), Some(o)) => Some((field(b), field(o))),
        _ => None,
    }
}

/// Writes comparisons as a CSV table.
pub fn write_comparison_csv<P: AsRef<Path>>(comparisons: &[Comparison], path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "baseline",
        "other",
        "metric",
        "baseline_value",
        "other_value",
        "delta",
        "ci_low",
        "ci_high",
        "significant",
    ])?;
    for c in comparisons {
        for d in &c.deltas {
            w.write_record([
                c.baseline_setting.as_str().to_string(),
                c.other_setting.as_str().to_string(),
                d.metric.clone(),
                format!("{:.6}", d.baseline),
                format!("{:.6}", d.other),
                format!("{:.6}", d.delta),
                d.ci_low.map_or(String::new(), |v| format!("{v:.6}")),
                d.ci_high.map_or(String::new(), |v| format!("{v:.6}")),
                if d.significant { "1" } else { "0" }.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Emits a gnuplot script rendering a sweep's `.dat` heatmap file.
pub fn gnuplot_heatmap_script(dat_file: &str, title: &str) -> String {
    format!(
        "set title '{title}'\n\
         set xlabel 'observation share'\n\
         set ylabel 'catalog share'\n\
         set view map\n\
         splot '{dat_file}' using 2:1:3 with points pt 5 ps 4 palette\n"
    )
}
