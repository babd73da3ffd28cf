//! Config-driven reproduction harness: budget sweeps over strategies and
//! seeds, tidy CSV records, and plot-ready series aggregation.
//!
//! A sweep is deterministic end to end: the same config file yields the same
//! records in the same order (wall-time columns aside, which measure real
//! elapsed time).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{
    draw_initial_samples, run_baseline, run_tempest, AttackConfig, BaselineKind, ScalerSource,
    TargetMode,
};
use crate::data::{load_csv, split, EncodingMap, SchemaFile, TabularDataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalBudget};
use crate::nn::TrainConfig;
use crate::querygen::GenKind;
use crate::scaling::ScalerKind;
use crate::stats::{compute_stats, load_stats_file, PublicStats};
use crate::victim::{train_victim, VictimAccess, VictimDeployment};

/// Environment variable pointing at the dataset cache; relative data paths in
/// a config resolve against it, falling back to the config file's directory.
pub const DATA_DIR_ENV: &str = "TEMPEST_DATA_DIR";

/// What a strategy does at each (budget, seed) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyMode {
    /// Victim baseline row: validation accuracy of the victim itself.
    Victim,
    Genvar,
    Genmin,
    Datafree,
    Prada,
}

/// One attack strategy of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: String,
    pub mode: StrategyMode,
    /// Adversary scaler kind.
    #[serde(default = "default_scaler")]
    pub scaler: ScalerKind,
    /// "from-stats" (default) or "fit-on-generated".
    #[serde(default)]
    pub fit_on_generated: bool,
    #[serde(default)]
    pub per_class: bool,
    /// Train the substitute on argmax labels instead of probability vectors.
    #[serde(default)]
    pub hard_labels: bool,
    /// Share of the budget replaced by initial samples.
    #[serde(default)]
    pub fraction: f64,
    /// Per-budget initial sample counts, overriding `fraction` (keys are
    /// budgets).
    #[serde(default)]
    pub initial_counts: BTreeMap<String, usize>,
    /// Statistics file standing in for the public pool (real-world mode).
    #[serde(default)]
    pub stats_file: Option<PathBuf>,
    /// prada: initial samples per class.
    #[serde(default)]
    pub prada_per_class: Option<usize>,
    /// prada: total initial samples, drawn stratified (for unbalanced data).
    #[serde(default)]
    pub prada_total: Option<usize>,
}

fn default_scaler() -> ScalerKind {
    ScalerKind::Standard
}

/// A whole sweep: dataset, strategies, budgets, seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Dataset name used in result records.
    pub name: String,
    pub csv: PathBuf,
    pub schema: PathBuf,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_scaler")]
    pub victim_scaler: ScalerKind,
    /// Victim training epochs; substitutes always use the same value.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub strategies: Vec<StrategyConfig>,
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}

fn default_batch_size() -> usize {
    TrainConfig::default().batch_size
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seed list is empty"));
        }
        if self.budgets.is_empty() {
            return Err(Error::invalid("budget list is empty"));
        }
        if !self.budgets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("budgets must be strictly increasing"));
        }
        if self.strategies.is_empty() {
            return Err(Error::invalid("strategy list is empty"));
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Loads a TOML sweep config and resolves its data paths.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut config: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        line: e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0),
        message: format!("config {}: {}", path.display(), e.message()),
    })?;
    let base = std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| path.parent().map(PathBuf::from))
        .unwrap_or_default();
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_relative() {
            base.join(p)
        } else {
            p.clone()
        }
    };
    config.csv = resolve(&config.csv);
    config.schema = resolve(&config.schema);
    for strategy in &mut config.strategies {
        if let Some(f) = &strategy.stats_file {
            strategy.stats_file = Some(resolve(f));
        }
    }
    Ok(config)
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub strategy: String,
    pub budget: usize,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub fidelity: Option<f64>,
    /// Per-class recall; `None` marks classes absent from validation.
    pub recall: Vec<Option<f64>>,
    pub queries: u64,
    pub wall_time_ms: u64,
    pub error: Option<String>,
}

/// The stable column set of the results CSV.
pub const CSV_HEADER: [&str; 10] = [
    "dataset",
    "strategy",
    "budget",
    "seed",
    "accuracy",
    "fidelity",
    "recall",
    "queries",
    "wall_time_ms",
    "error",
];

fn recall_to_field(recall: &[Option<f64>]) -> String {
    recall
        .iter()
        .map(|r| match r {
            Some(v) => format!("{v}"),
            None => "na".to_string(),
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn recall_from_field(field: &str) -> Result<Vec<Option<f64>>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|part| {
            if part == "na" {
                Ok(None)
            } else {
                part.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::invalid(format!("bad recall entry {part:?}: {e}")))
            }
        })
        .collect()
}

fn opt_f64(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|e| Error::invalid(format!("bad number {field:?}: {e}")))
    }
}

/// Writes records in the documented column order. Floats use Rust's shortest
/// round-trip formatting, so identical runs produce identical bytes.
pub fn write_records_csv(records: &[ExperimentRecord], mut w: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(&mut w);
    writer.write_record(CSV_HEADER)?;
    for r in records {
        writer.write_record([
            r.dataset.clone(),
            r.strategy.clone(),
            r.budget.to_string(),
            r.seed.to_string(),
            r.accuracy.map(|v| v.to_string()).unwrap_or_default(),
            r.fidelity.map(|v| v.to_string()).unwrap_or_default(),
            recall_to_field(&r.recall),
            r.queries.to_string(),
            r.wall_time_ms.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Error {
        let line = e
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

/// Reads a results CSV back; malformed rows report their line number.
pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {headers:?}"),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or_default();
        let field = |i: usize| row.get(i).unwrap_or_default().to_string();
        let parse_err = |msg: String| Error::Parse { line, message: msg };
        records.push(ExperimentRecord {
            dataset: field(0),
            strategy: field(1),
            budget: field(2)
                .parse()
                .map_err(|e| parse_err(format!("budget: {e}")))?,
            seed: field(3)
                .parse()
                .map_err(|e| parse_err(format!("seed: {e}")))?,
            accuracy: opt_f64(&field(4)).map_err(|e| parse_err(e.to_string()))?,
            fidelity: opt_f64(&field(5)).map_err(|e| parse_err(e.to_string()))?,
            recall: recall_from_field(&field(6)).map_err(|e| parse_err(e.to_string()))?,
            queries: field(7)
                .parse()
                .map_err(|e| parse_err(format!("queries: {e}")))?,
            wall_time_ms: field(8)
                .parse()
                .map_err(|e| parse_err(format!("wall_time_ms: {e}")))?,
            error: match field(9) {
                s if s.is_empty() => None,
                s => Some(s),
            },
        });
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "result file holds no records".into(),
        });
    }
    Ok(records)
}

/// Per-seed context shared by every cell of that seed.
struct SeedContext {
    seed: u64,
    victim: Arc<VictimDeployment>,
    victim_accuracy: f64,
    victim_recall: Vec<Option<f64>>,
    victim_train: TabularDataset,
    validation: Arc<TabularDataset>,
    pooled_stats: PublicStats,
    victim_train_ms: u64,
}

mod seed_stream {
    pub const VICTIM: u64 = 0x5EED_0001;
    pub const INITIAL: u64 = 0x5EED_0002;
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

fn build_seed_context(
    config: &ExperimentConfig,
    dataset: &TabularDataset,
    seed: u64,
) -> Result<SeedContext> {
    let parts = split(dataset, seed)?;
    let start = Instant::now();
    let victim = train_victim(
        &parts.victim_train,
        config.victim_scaler,
        &config.train_config(derive_seed(seed, seed_stream::VICTIM)),
    )?;
    let victim_train_ms = start.elapsed().as_millis() as u64;
    let victim_accuracy = victim.accuracy_on(&parts.validation)?;

    // Victim recall per class on validation, through its own boundary.
    let mut present = vec![0usize; parts.validation.n_classes()];
    let mut hit = vec![0usize; parts.validation.n_classes()];
    {
        let batch = crate::querygen::QueryBatch {
            rows: parts.validation.rows.clone(),
            provenance: vec![crate::querygen::Provenance::Generated; parts.validation.len()],
            pre_normalized: false,
        };
        let probs = victim.predict(&batch)?;
        for (p, &label) in probs.iter().zip(&parts.validation.labels) {
            present[label] += 1;
            if crate::nn::argmax(p) == label {
                hit[label] += 1;
            }
        }
    }
    let victim_recall = (0..parts.validation.n_classes())
        .map(|c| {
            if present[c] == 0 {
                None
            } else {
                Some(hit[c] as f64 / present[c] as f64)
            }
        })
        .collect();

    let pooled_stats = compute_stats(&parts.public_pool, false)?;
    Ok(SeedContext {
        seed,
        victim: Arc::new(victim),
        victim_accuracy,
        victim_recall,
        victim_train: parts.victim_train,
        validation: Arc::new(parts.validation),
        pooled_stats,
        victim_train_ms,
    })
}

fn run_cell(
    config: &ExperimentConfig,
    ctx: &SeedContext,
    strategy: &StrategyConfig,
    budget: usize,
) -> Result<(f64, f64, Vec<Option<f64>>, u64)> {
    if strategy.mode == StrategyMode::Victim {
        return Ok((
            ctx.victim_accuracy,
            1.0,
            ctx.victim_recall.clone(),
            0,
        ));
    }

    let access = VictimAccess::in_process_shared(ctx.victim.clone());
    let attack_seed = derive_seed(ctx.seed, budget as u64);
    let mut attack = AttackConfig::new(
        match strategy.mode {
            StrategyMode::Genvar => GenKind::GenVar,
            StrategyMode::Genmin => GenKind::GenMin,
            StrategyMode::Datafree | StrategyMode::Prada | StrategyMode::Victim => {
                GenKind::DataFreeRandom
            }
        },
        budget,
        strategy.scaler,
        attack_seed,
    );
    attack.per_class = strategy.per_class;
    attack.scaler_source = if strategy.fit_on_generated {
        ScalerSource::FitOnGenerated
    } else {
        ScalerSource::FromStats
    };
    attack.target_mode = if strategy.hard_labels {
        TargetMode::Hard
    } else {
        TargetMode::Soft
    };
    attack.train = config.train_config(0);
    attack.initial_fraction = strategy.fraction;
    if let Some(&count) = strategy.initial_counts.get(&budget.to_string()) {
        attack.initial_count = Some(count);
    }

    let stats_storage;
    let stats: &PublicStats = match &strategy.stats_file {
        Some(path) => {
            stats_storage = load_stats_file(path, ctx.victim.schema())?;
            &stats_storage
        }
        None if strategy.per_class => {
            stats_storage = compute_stats(
                &TabularDataset {
                    schema: ctx.victim_train.schema.clone(),
                    rows: ctx.victim_train.rows.clone(),
                    labels: ctx.victim_train.labels.clone(),
                    class_names: ctx.victim_train.class_names.clone(),
                },
                true,
            )?;
            &stats_storage
        }
        None => &ctx.pooled_stats,
    };

    let result = match strategy.mode {
        StrategyMode::Prada => {
            let initial = draw_initial_samples(
                &ctx.victim_train,
                strategy.prada_per_class.or({
                    if strategy.prada_total.is_none() {
                        Some(10)
                    } else {
                        None
                    }
                }),
                strategy.prada_total,
                derive_seed(ctx.seed, seed_stream::INITIAL),
            )?;
            run_baseline(&access, BaselineKind::PradaLike, Some(&initial), budget, &attack)?
        }
        StrategyMode::Datafree => run_baseline(&access, BaselineKind::DataFree, None, budget, &attack)?,
        _ => {
            let needs_initial = attack.initial_fraction > 0.0 || attack.initial_count.is_some();
            let initial = needs_initial.then_some(&ctx.victim_train);
            run_tempest(&access, stats, initial, &attack)?
        }
    };

    let map = EncodingMap::from_schema(ctx.victim.schema());
    let report = evaluate(
        &result.substitute,
        &result.adversary_scaler,
        &map,
        &access,
        &ctx.validation,
        EvalBudget::Excluded,
    )?;
    Ok((
        report.accuracy,
        report.fidelity,
        report.per_class_recall,
        result.queries_used,
    ))
}

/// Runs the whole sweep: per seed, split 1:3:1, train the victim, compute
/// pool statistics, then run every strategy at every budget from scratch.
/// Cell failures become error-tagged records instead of aborting. `workers`
/// bounds the rayon pool; output order is deterministic regardless.
pub fn run_sweep(config: &ExperimentConfig, workers: usize) -> Result<Vec<ExperimentRecord>> {
    use rayon::prelude::*;

    config.validate()?;
    let schema_file = SchemaFile::load(&config.schema)?;
    let loaded = load_csv(&config.csv, &schema_file.features, &schema_file.label)?;
    let dataset = loaded.dataset;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;

    let contexts: Vec<std::result::Result<SeedContext, String>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| build_seed_context(config, &dataset, seed).map_err(|e| e.to_string()))
            .collect()
    });

    struct Cell<'a> {
        order: usize,
        strategy: &'a StrategyConfig,
        budget: usize,
        seed_index: usize,
    }
    let mut cells = Vec::new();
    let mut order = 0usize;
    for strategy in &config.strategies {
        for &budget in &config.budgets {
            for seed_index in 0..config.seeds.len() {
                cells.push(Cell {
                    order,
                    strategy,
                    budget,
                    seed_index,
                });
                order += 1;
            }
        }
    }

    let mut records: Vec<(usize, ExperimentRecord)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let seed = config.seeds[cell.seed_index];
                let started = Instant::now();
                let record = match &contexts[cell.seed_index] {
                    Ok(ctx) => match run_cell(config, ctx, cell.strategy, cell.budget) {
                        Ok((accuracy, fidelity, recall, queries)) => ExperimentRecord {
                            dataset: config.name.clone(),
                            strategy: cell.strategy.name.clone(),
                            budget: cell.budget,
                            seed,
                            accuracy: Some(accuracy),
                            fidelity: Some(fidelity),
                            recall,
                            queries,
                            wall_time_ms: if cell.strategy.mode == StrategyMode::Victim {
                                ctx.victim_train_ms
                            } else {
                                started.elapsed().as_millis() as u64
                            },
                            error: None,
                        },
                        Err(e) => ExperimentRecord {
                            dataset: config.name.clone(),
                            strategy: cell.strategy.name.clone(),
                            budget: cell.budget,
                            seed,
                            accuracy: None,
                            fidelity: None,
                            recall: Vec::new(),
                            queries: 0,
                            wall_time_ms: started.elapsed().as_millis() as u64,
                            error: Some(e.to_string()),
                        },
                    },
                    Err(e) => ExperimentRecord {
                        dataset: config.name.clone(),
                        strategy: cell.strategy.name.clone(),
                        budget: cell.budget,
                        seed,
                        accuracy: None,
                        fidelity: None,
                        recall: Vec::new(),
                        queries: 0,
                        wall_time_ms: 0,
                        error: Some(format!("victim setup failed: {e}")),
                    },
                };
                (cell.order, record)
            })
            .collect()
    });
    records.sort_by_key(|(order, _)| *order);
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

/// One aggregated point of a (dataset, strategy) series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub budget: usize,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups records into per-(dataset, strategy) budget series, averaging over
/// seeds. Error records are skipped.
pub fn aggregate(
    records: &[ExperimentRecord],
) -> BTreeMap<(String, String), Vec<SeriesPoint>> {
    let mut grouped: BTreeMap<(String, String), BTreeMap<usize, (Vec<f64>, Vec<f64>)>> =
        BTreeMap::new();
    for r in records {
        let (Some(acc), Some(fid)) = (r.accuracy, r.fidelity) else {
            continue;
        };
        let slot = grouped
            .entry((r.dataset.clone(), r.strategy.clone()))
            .or_default()
            .entry(r.budget)
            .or_default();
        slot.0.push(acc);
        slot.1.push(fid);
    }
    grouped
        .into_iter()
        .map(|(key, budgets)| {
            let series = budgets
                .into_iter()
                .map(|(budget, (accs, fids))| {
                    let (am, asd) = mean_std(&accs);
                    let (fm, fsd) = mean_std(&fids);
                    SeriesPoint {
                        budget,
                        n: accs.len(),
                        accuracy_mean: am,
                        accuracy_std: asd,
                        fidelity_mean: fm,
                        fidelity_std: fsd,
                    }
                })
                .collect();
            (key, series)
        })
        .collect()
}

/// Reads a results CSV and writes per-(dataset, strategy) series files plus a
/// markdown summary table into `out_dir`.
pub fn report(results: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<()> {
    let records = read_records_csv(results)?;
    let series = aggregate(&records);
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut summary = String::from(
        "| dataset | strategy | budget | n | accuracy | fidelity |\n|---|---|---|---|---|---|\n",
    );
    for ((dataset, strategy), points) in &series {
        let file = out_dir.join(format!("{dataset}__{strategy}.csv"));
        let mut w = csv::Writer::from_path(&file)?;
        w.write_record([
            "budget",
            "n",
            "accuracy_mean",
            "accuracy_std",
            "fidelity_mean",
            "fidelity_std",
        ])?;
        for p in points {
            w.write_record([
                p.budget.to_string(),
                p.n.to_string(),
                p.accuracy_mean.to_string(),
                p.accuracy_std.to_string(),
                p.fidelity_mean.to_string(),
                p.fidelity_std.to_string(),
            ])?;
            summary.push_str(&format!(
                "| {dataset} | {strategy} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
                p.budget, p.n, p.accuracy_mean, p.accuracy_std, p.fidelity_mean, p.fidelity_std,
            ));
        }
        w.flush()?;
    }
    std::fs::write(out_dir.join("summary.md"), summary)?;
    Ok(())
}
