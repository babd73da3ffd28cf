//! `tempest` — command-line front end for the tabular model-extraction lab.
//!
//! The subcommands compose the same pipeline the sweep harness runs:
//! `train-victim` → `serve-victim` → `extract` → `evaluate`, with
//! `compute-stats` / `gen-data` for the statistics side and
//! `sweep` / `report` for full reproductions.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tempest_core::attack::{
    run_baseline, run_tempest, AttackConfig, BaselineKind, ScalerSource, TargetMode,
};
use tempest_core::data::{encode, load_csv, split, SchemaFile};
use tempest_core::experiments;
use tempest_core::metrics::{evaluate, EvalBudget};
use tempest_core::nn::TrainConfig;
use tempest_core::querygen::{generate, GenKind, GenMode};
use tempest_core::scaling::ScalerKind;
use tempest_core::stats::{compute_stats, load_stats_file, save_stats_file};
use tempest_core::victim::{self, train_victim, ResponseMode, VictimAccess, VictimDeployment};

#[derive(Parser)]
#[command(
    name = "tempest",
    version,
    about = "Model-extraction laboratory for tabular classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalerArg {
    Standard,
    Minmax,
}

impl From<ScalerArg> for ScalerKind {
    fn from(v: ScalerArg) -> ScalerKind {
        match v {
            ScalerArg::Standard => ScalerKind::Standard,
            ScalerArg::Minmax => ScalerKind::MinMax,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Genvar,
    Genmin,
    Datafree,
    Prada,
}

#[derive(Clone, Copy, ValueEnum)]
enum ResponseModeArg {
    Soft,
    Hard,
}

#[derive(Args)]
struct TrainArgs {
    /// Learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset 1:3:1, train the victim on its share, and write the
    /// deployment file.
    TrainVictim {
        #[arg(long)]
        csv: PathBuf,
        /// Schema JSON (features + label column).
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, value_enum, default_value = "standard")]
        scaler: ScalerArg,
        #[command(flatten)]
        train: TrainArgs,
        /// Output deployment file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the public pool's statistics here.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Also dump the three splits as CSV files into this directory.
        #[arg(long)]
        splits_out: Option<PathBuf>,
    },
    /// Serve a deployment over HTTP.
    ServeVictim {
        #[arg(long)]
        deployment: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, value_enum, default_value = "soft")]
        response_mode: ResponseModeArg,
        /// Legacy prior-work mode: rows flagged pre-normalized skip the
        /// victim's scaler.
        #[arg(long)]
        allow_pre_normalized: bool,
    },
    /// Compute a statistics file from a dataset (typically the public pool).
    ComputeStats {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Include a per-class overlay.
        #[arg(long)]
        per_class: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a query batch from a statistics file and dump it as CSV.
    GenData {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        per_class: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one extraction against a victim (deployment file or HTTP
    /// endpoint) and write the substitute bundle.
    Extract {
        /// Deployment file path or http://host:port endpoint.
        #[arg(long)]
        victim: String,
        /// Statistics file (genvar/genmin; datafree and prada need none).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value = "standard")]
        scaler: ScalerArg,
        /// Fit the adversary scaler on generated data instead of statistics.
        #[arg(long)]
        fit_on_generated: bool,
        #[arg(long, value_enum, default_value = "soft")]
        target_mode: ResponseModeArg,
        /// Labeled CSV of initial samples (for --fraction or prada).
        #[arg(long)]
        initial: Option<PathBuf>,
        /// Schema JSON for --initial.
        #[arg(long)]
        initial_schema: Option<PathBuf>,
        /// Share of the budget taken by initial samples.
        #[arg(long, default_value_t = 0.0)]
        fraction: f64,
        /// Generate per class from the statistics overlay.
        #[arg(long)]
        per_class: bool,
        #[command(flatten)]
        train: TrainArgs,
        /// Output substitute bundle.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a substitute bundle against a victim on a labeled CSV.
    Evaluate {
        /// Substitute bundle from `extract`.
        #[arg(long)]
        model: PathBuf,
        /// Deployment file path or http://host:port endpoint.
        #[arg(long)]
        victim: String,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Bill evaluation queries against the budget counter.
        #[arg(long)]
        strict_budget: bool,
    },
    /// Run a full config-driven sweep and write the results CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a results CSV into plot-ready series files.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn victim_access(spec: &str) -> Result<VictimAccess> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(VictimAccess::remote(spec)?)
    } else {
        let deployment = VictimDeployment::load(spec)?;
        Ok(VictimAccess::in_process(deployment))
    }
}

fn write_rows_csv(
    path: &PathBuf,
    schema: &[tempest_core::data::FeatureSpec],
    label: Option<&str>,
    rows: &[tempest_core::data::Row],
    labels: Option<(&[usize], &[String])>,
    extra: Option<(&str, &[String])>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path)?;
    let mut header: Vec<String> = schema.iter().map(|s| s.name.clone()).collect();
    if let Some(label) = label {
        header.push(label.to_string());
    }
    if let Some((name, _)) = extra {
        header.push(name.to_string());
    }
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some((labels, names)) = labels {
            record.push(names[labels[i]].clone());
        }
        if let Some((_, values)) = extra {
            record.push(values[i].clone());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::TrainVictim {
            csv,
            schema,
            scaler,
            train,
            out,
            stats_out,
            splits_out,
        } => {
            let schema_file = SchemaFile::load(&schema)?;
            let loaded = load_csv(&csv, &schema_file.features, &schema_file.label)?;
            println!(
                "loaded {} rows ({} dropped), {} classes",
                loaded.dataset.len(),
                loaded.dropped_rows,
                loaded.dataset.n_classes()
            );
            let parts = split(&loaded.dataset, train.seed)?;
            println!(
                "split 1:3:1 -> victim {} / validation {} / public pool {}",
                parts.victim_train.len(),
                parts.validation.len(),
                parts.public_pool.len()
            );
            let deployment = train_victim(&parts.victim_train, scaler.into(), &train.config())?;
            let accuracy = deployment.accuracy_on(&parts.validation)?;
            println!("victim validation accuracy: {accuracy:.4}");
            deployment.save(&out)?;
            println!("deployment written to {}", out.display());
            if let Some(stats_path) = stats_out {
                let stats = compute_stats(&parts.public_pool, false)?;
                save_stats_file(&stats, &stats_path)?;
                println!("public-pool statistics written to {}", stats_path.display());
            }
            if let Some(dir) = splits_out {
                std::fs::create_dir_all(&dir)?;
                for (name, part) in [
                    ("victim_train", &parts.victim_train),
                    ("validation", &parts.validation),
                    ("public_pool", &parts.public_pool),
                ] {
                    write_rows_csv(
                        &dir.join(format!("{name}.csv")),
                        &part.schema,
                        Some(&schema_file.label),
                        &part.rows,
                        Some((&part.labels, &part.class_names)),
                        None,
                    )?;
                }
                println!("splits written to {}", dir.display());
            }
        }
        Command::ServeVictim {
            deployment,
            addr,
            response_mode,
            allow_pre_normalized,
        } => {
            let mut dep = VictimDeployment::load(&deployment)?;
            dep.set_response_mode(match response_mode {
                ResponseModeArg::Soft => ResponseMode::Soft,
                ResponseModeArg::Hard => ResponseMode::Hard,
            });
            dep.set_allow_pre_normalized(allow_pre_normalized);
            let service = victim::http::serve(dep, &addr)?;
            println!("serving victim on http://{}", service.local_addr());
            service.wait();
        }
        Command::ComputeStats {
            csv,
            schema,
            per_class,
            out,
        } => {
            let schema_file = SchemaFile::load(&schema)?;
            let loaded = load_csv(&csv, &schema_file.features, &schema_file.label)?;
            let stats = compute_stats(&loaded.dataset, per_class)?;
            save_stats_file(&stats, &out)?;
            println!("statistics written to {}", out.display());
        }
        Command::GenData {
            stats,
            schema,
            mode,
            n,
            per_class,
            seed,
            out,
        } => {
            let schema_file = SchemaFile::load(&schema)?;
            let stats = load_stats_file(&stats, &schema_file.features)?;
            let kind = match mode {
                ModeArg::Genvar => GenKind::GenVar,
                ModeArg::Genmin => GenKind::GenMin,
                ModeArg::Datafree => GenKind::DataFreeRandom,
                ModeArg::Prada => bail!("prada is an attack strategy, not a generator"),
            };
            let gen_mode = GenMode {
                kind,
                per_class,
                allow_fallback: true,
                seed,
            };
            let batch = generate(&stats, gen_mode, n, &schema_file.features)?;
            let provenance: Vec<String> = batch
                .provenance
                .iter()
                .map(|p| format!("{p:?}").to_lowercase())
                .collect();
            write_rows_csv(
                &out,
                &schema_file.features,
                None,
                &batch.rows,
                None,
                Some(("provenance", &provenance)),
            )?;
            println!("{} rows written to {}", batch.len(), out.display());
        }
        Command::Extract {
            victim,
            stats,
            mode,
            budget,
            scaler,
            fit_on_generated,
            target_mode,
            initial,
            initial_schema,
            fraction,
            per_class,
            train,
            out,
        } => {
            let access = victim_access(&victim)?;
            let gen_kind = match mode {
                ModeArg::Genvar => GenKind::GenVar,
                ModeArg::Genmin => GenKind::GenMin,
                ModeArg::Datafree | ModeArg::Prada => GenKind::DataFreeRandom,
            };
            let mut config = AttackConfig::new(gen_kind, budget, scaler.into(), train.seed);
            config.per_class = per_class;
            config.scaler_source = if fit_on_generated {
                ScalerSource::FitOnGenerated
            } else {
                ScalerSource::FromStats
            };
            config.target_mode = match target_mode {
                ResponseModeArg::Soft => TargetMode::Soft,
                ResponseModeArg::Hard => TargetMode::Hard,
            };
            config.initial_fraction = fraction;
            config.train = train.config();

            let initial_data = match initial {
                Some(path) => {
                    let schema_path =
                        initial_schema.context("--initial requires --initial-schema")?;
                    let schema_file = SchemaFile::load(&schema_path)?;
                    Some(load_csv(&path, &schema_file.features, &schema_file.label)?.dataset)
                }
                None => None,
            };

            let result = match mode {
                ModeArg::Prada => run_baseline(
                    &access,
                    BaselineKind::PradaLike,
                    initial_data.as_ref(),
                    budget,
                    &config,
                )?,
                ModeArg::Datafree => {
                    run_baseline(&access, BaselineKind::DataFree, None, budget, &config)?
                }
                _ => {
                    let stats_path = stats.context("genvar/genmin need --stats")?;
                    let stats = load_stats_file(&stats_path, access.schema())?;
                    run_tempest(&access, &stats, initial_data.as_ref(), &config)?
                }
            };
            println!(
                "queries used: {} (final training loss {:.6})",
                result.queries_used,
                result.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            let bundle = VictimDeployment::assemble(
                result.substitute,
                result.adversary_scaler,
                access.schema(),
                access.class_names().to_vec(),
            )?;
            bundle.save(&out)?;
            println!("substitute bundle written to {}", out.display());
        }
        Command::Evaluate {
            model,
            victim,
            csv,
            schema,
            strict_budget,
        } => {
            let schema_file = SchemaFile::load(&schema)?;
            let loaded = load_csv(&csv, &schema_file.features, &schema_file.label)?;
            let access = victim_access(&victim)?;
            let (substitute, scaler, bundle_schema, _) =
                VictimDeployment::load(&model)?.into_parts();
            if bundle_schema != loaded.dataset.schema {
                bail!("substitute bundle schema does not match the evaluation dataset");
            }
            let (_, map) = encode(&loaded.dataset)?;
            let report = evaluate(
                &substitute,
                &scaler,
                &map,
                &access,
                &loaded.dataset,
                if strict_budget {
                    EvalBudget::Counted
                } else {
                    EvalBudget::Excluded
                },
            )?;
            println!("accuracy:  {:.4}", report.accuracy);
            println!("fidelity:  {:.4}", report.fidelity);
            for (c, recall) in report.per_class_recall.iter().enumerate() {
                match recall {
                    Some(r) => println!("recall[{}]: {r:.4}", loaded.dataset.class_names[c]),
                    None => println!(
                        "recall[{}]: undefined (no validation rows)",
                        loaded.dataset.class_names[c]
                    ),
                }
            }
        }
        Command::Sweep {
            config,
            workers,
            out,
        } => {
            let config = experiments::load_config(&config)?;
            let records = experiments::run_sweep(&config, workers)?;
            let failures = records.iter().filter(|r| r.error.is_some()).count();
            let mut bytes = Vec::new();
            experiments::write_records_csv(&records, &mut bytes)?;
            std::fs::write(&out, bytes)?;
            println!(
                "{} records written to {} ({failures} cell failures)",
                records.len(),
                out.display()
            );
        }
        Command::Report { input, out_dir } => {
            experiments::report(&input, &out_dir)?;
            println!("series written to {}", out_dir.display());
        }
    }
    Ok(())
}
