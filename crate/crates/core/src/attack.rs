//! Attack orchestration: generate queries, send them through the victim
//! boundary, pick the adversary's normalization, and distill the responses
//! into a substitute model.
//!
//! The attack only ever touches a [`VictimAccess`] and public statistics;
//! the victim's training rows, private scaler, and validation labels are
//! unreachable from here by construction.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EncodingMap, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, MlpModel, Targets, TrainConfig};
use crate::querygen::{
    generate, jacobian_augment, mix_with_initial_count, GenKind, GenMode, Provenance,
    QueryBatch,
};
use crate::scaling::{Scaler, ScalerKind};
use crate::stats::PublicStats;
use crate::victim::{VictimAccess, HIDDEN_DIM};

/// Where the adversary's scaler parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalerSource {
    /// Public statistics where available, fit on the generated batch for the
    /// rest.
    FromStats,
    /// Fit entirely on the generated (and queried) batch.
    FitOnGenerated,
}

/// Trains the substitute on full probability vectors or on argmax labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    Soft,
    Hard,
}

/// Everything one extraction run needs besides the victim and statistics.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub gen_kind: GenKind,
    /// Generate per class from the statistics overlay.
    pub per_class: bool,
    /// Fall back to uniform [0,1) for features without statistics.
    pub allow_fallback: bool,
    pub budget: usize,
    pub scaler_kind: ScalerKind,
    pub scaler_source: ScalerSource,
    pub target_mode: TargetMode,
    /// Share of the budget replaced by genuine samples; 0 disables mixing.
    pub initial_fraction: f64,
    /// Exact initial-sample count, overriding the fraction when set.
    pub initial_count: Option<usize>,
    /// Step size of the prada-like gradient-sign augmentation, in normalized
    /// units.
    pub augment_lambda: f64,
    /// Hidden width of the substitute; defaults to the victim architecture.
    pub hidden_dim: usize,
    /// Learning rate, epochs, and batch size for substitute training; its
    /// seed field is ignored in favor of one derived from `seed`.
    pub train: TrainConfig,
    /// Master seed; generation, mixing, initialization, and training derive
    /// their own streams from it.
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(gen_kind: GenKind, budget: usize, scaler_kind: ScalerKind, seed: u64) -> Self {
        AttackConfig {
            gen_kind,
            per_class: false,
            allow_fallback: true,
            budget,
            scaler_kind,
            scaler_source: ScalerSource::FromStats,
            target_mode: TargetMode::Soft,
            initial_fraction: 0.0,
            initial_count: None,
            augment_lambda: 0.1,
            hidden_dim: HIDDEN_DIM,
            train: TrainConfig::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("query budget must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.initial_fraction) {
            return Err(Error::invalid(format!(
                "initial fraction must lie in [0,1), got {}",
                self.initial_fraction
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("substitute hidden width must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one extraction run: the substitute, its scaler, and the full
/// labelled query record.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub substitute: MlpModel,
    pub adversary_scaler: Scaler,
    pub queries_used: u64,
    /// Mean training loss per epoch of the final training pass.
    pub epoch_losses: Vec<f64>,
    /// The queries sent, with provenance.
    pub queried: QueryBatch,
    /// The victim's responses, aligned with `queried`.
    pub responses: Vec<Vec<f64>>,
}

/// Seed streams derived from the attack seed.
mod seed_stream {
    pub const GENERATE: u64 = 0;
    pub const MIX: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

fn targets_from_responses(responses: &[Vec<f64>], mode: TargetMode) -> Targets {
    match mode {
        TargetMode::Soft => Targets::Soft(responses.to_vec()),
        TargetMode::Hard => Targets::Hard(responses.iter().map(|p| argmax(p)).collect()),
    }
}

fn fit_adversary_scaler(
    config: &AttackConfig,
    stats: &PublicStats,
    encoded: &[Vec<f64>],
    map: &EncodingMap,
) -> Result<Scaler> {
    if config.gen_kind == GenKind::DataFreeRandom {
        // Data-free rows are already "normalized" in the adversary's eyes;
        // there is nothing to fit and no statistics to fit from.
        return Ok(Scaler::identity(map.width()));
    }
    match config.scaler_source {
        ScalerSource::FromStats => {
            Scaler::fit_from_stats_with_fallback(config.scaler_kind, stats, encoded)
        }
        ScalerSource::FitOnGenerated => Scaler::fit_with_map(config.scaler_kind, encoded, map),
    }
}

/// The statistics-driven extraction: generate from public statistics, mix in
/// initial samples when configured, query the victim, normalize on the
/// adversary's side, and train the substitute in one pass.
pub fn run_tempest(
    access: &VictimAccess,
    stats: &PublicStats,
    initial: Option<&TabularDataset>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    let schema = access.schema();
    if schema != stats.schema() {
        return Err(Error::SchemaMismatch(
            "victim schema differs from the statistics schema".into(),
        ));
    }

    let mode = GenMode {
        kind: config.gen_kind,
        per_class: config.per_class,
        allow_fallback: config.allow_fallback,
        seed: derive_seed(config.seed, seed_stream::GENERATE),
    };
    let mut batch = generate(stats, mode, config.budget, schema)?;

    let initial_count = match config.initial_count {
        Some(count) => count,
        None if config.initial_fraction > 0.0 => {
            (config.initial_fraction * config.budget as f64).ceil() as usize
        }
        None => 0,
    };
    if initial_count > 0 {
        let initial = initial.ok_or_else(|| {
            Error::invalid("initial samples requested but no initial dataset given")
        })?;
        batch = mix_with_initial_count(
            &batch,
            initial,
            initial_count,
            derive_seed(config.seed, seed_stream::MIX),
        )?;
    }

    let responses = access.query(&batch)?;
    finish_run(access, stats, config, batch, responses)
}

fn finish_run(
    access: &VictimAccess,
    stats: &PublicStats,
    config: &AttackConfig,
    batch: QueryBatch,
    responses: Vec<Vec<f64>>,
) -> Result<AttackResult> {
    let map = EncodingMap::from_schema(access.schema());
    let encoded: Vec<Vec<f64>> = batch
        .rows
        .iter()
        .map(|row| map.encode_row(row))
        .collect::<Result<_>>()?;
    let scaler = fit_adversary_scaler(config, stats, &encoded, &map)?;
    let normalized = scaler.transform(&encoded)?;

    let n_classes = responses
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::invalid("victim returned no responses"))?;
    let targets = targets_from_responses(&responses, config.target_mode);

    let mut substitute = MlpModel::init(
        map.width(),
        config.hidden_dim,
        n_classes,
        derive_seed(config.seed, seed_stream::INIT),
    )?;
    let train_config = TrainConfig {
        seed: derive_seed(config.seed, seed_stream::TRAIN),
        ..config.train.clone()
    };
    let epoch_losses = substitute.train(&normalized, &targets, &train_config)?;

    Ok(AttackResult {
        substitute,
        adversary_scaler: scaler,
        queries_used: batch.len() as u64,
        epoch_losses,
        queried: batch,
        responses,
    })
}

/// Baseline families the paper compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Random [0,1) queries presented as already-normalized data.
    DataFree,
    /// Initial samples grown by gradient-sign augmentation, one round per
    /// budget doubling.
    PradaLike,
}

/// Runs a baseline attack with the same downstream training path as the
/// statistics-driven attack.
pub fn run_baseline(
    access: &VictimAccess,
    kind: BaselineKind,
    initial: Option<&TabularDataset>,
    budget: usize,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let mut config = config.clone();
    config.budget = budget;
    config.validate()?;
    match kind {
        BaselineKind::DataFree => {
            let stats = PublicStats::unavailable(access.schema());
            config.gen_kind = GenKind::DataFreeRandom;
            config.per_class = false;
            config.initial_fraction = 0.0;
            config.initial_count = None;
            run_tempest(access, &stats, None, &config)
        }
        BaselineKind::PradaLike => run_prada_like(access, initial, &config),
    }
}

/// Initial samples, then rounds of query → train → augment until the budget
/// is spent. Every row is queried exactly once; the substitute is retrained
/// from scratch on the full record each round.
fn run_prada_like(
    access: &VictimAccess,
    initial: Option<&TabularDataset>,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let initial = initial
        .ok_or_else(|| Error::invalid("the prada-like baseline requires initial samples"))?;
    if initial.is_empty() {
        return Err(Error::invalid("initial sample set is empty"));
    }
    if initial.len() > config.budget {
        return Err(Error::invalid(format!(
            "{} initial samples exceed the budget {}",
            initial.len(),
            config.budget
        )));
    }
    let schema = access.schema();
    if schema != initial.schema.as_slice() {
        return Err(Error::SchemaMismatch(
            "initial samples do not match the victim schema".into(),
        ));
    }
    let map = EncodingMap::from_schema(schema);
    let stats = PublicStats::unavailable(schema);

    let mut batch = QueryBatch {
        rows: initial.rows.clone(),
        provenance: vec![Provenance::InitialSample; initial.len()],
        pre_normalized: false,
    };
    let mut responses = access.query(&batch)?;
    let mut result = finish_run(access, &stats, config, batch.clone(), responses.clone())?;

    while batch.len() < config.budget {
        let encoded: Vec<Vec<f64>> = batch
            .rows
            .iter()
            .map(|row| map.encode_row(row))
            .collect::<Result<_>>()?;
        let normalized = result.adversary_scaler.transform(&encoded)?;
        let augmented = jacobian_augment(
            &result.substitute,
            &normalized,
            &result.adversary_scaler,
            &map,
            config.augment_lambda,
        )?;
        let room = config.budget - batch.len();
        let take = room.min(batch.len());
        let new_rows: Vec<_> = augmented.rows[batch.len()..batch.len() + take].to_vec();
        let new_batch = QueryBatch {
            rows: new_rows.clone(),
            provenance: vec![Provenance::Augmented; take],
            pre_normalized: false,
        };
        let new_responses = access.query(&new_batch)?;
        batch.rows.extend(new_rows);
        batch
            .provenance
            .extend(std::iter::repeat_n(Provenance::Augmented, take));
        responses.extend(new_responses);
        result = finish_run(access, &stats, config, batch.clone(), responses.clone())?;
    }
    Ok(result)
}

/// Draws the prada-like initial sample set from a dataset: either an exact
/// count per class, or a stratified total for datasets too unbalanced for
/// equal division.
pub fn draw_initial_samples(
    dataset: &TabularDataset,
    per_class: Option<usize>,
    total: Option<usize>,
    seed: u64,
) -> Result<TabularDataset> {
    let count = match (per_class, total) {
        (Some(k), None) => k * dataset.n_classes(),
        (None, Some(t)) => t,
        _ => {
            return Err(Error::invalid(
                "specify exactly one of per-class or total initial sample count",
            ))
        }
    };
    if count == 0 || count > dataset.len() {
        return Err(Error::invalid(format!(
            "cannot draw {count} initial samples from {} rows",
            dataset.len()
        )));
    }
    let template = QueryBatch {
        rows: vec![dataset.rows[0].clone(); count],
        provenance: vec![Provenance::Generated; count],
        pre_normalized: false,
    };
    let drawn = match per_class {
        // Equal division via the mixing quotas; everything becomes an
        // initial sample.
        Some(_) | None => mix_with_initial_count(&template, dataset, count, seed)?,
    };
    let rows: Vec<_> = drawn
        .rows
        .iter()
        .zip(&drawn.provenance)
        .filter(|(_, p)| **p == Provenance::InitialSample)
        .map(|(r, _)| r.clone())
        .collect();
    // Recover labels by matching rows back to the dataset.
    let labels: Vec<usize> = rows
        .iter()
        .map(|row| {
            dataset
                .rows
                .iter()
                .position(|r| r == row)
                .map(|i| dataset.labels[i])
                .expect("drawn row exists in source dataset")
        })
        .collect();
    Ok(TabularDataset {
        schema: dataset.schema.clone(),
        rows,
        labels,
        class_names: dataset.class_names.clone(),
    })
}
