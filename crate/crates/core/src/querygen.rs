//! Query-data generators: Gaussian from mean/variance, uniform from min/max,
//! the data-free random baseline, initial-sample mixing, and the
//! gradient-sign augmentation used by the prada-like baseline.
//!
//! All generators are pure functions of their inputs and a seed; features are
//! sampled independently, with no correlation structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{EncodingMap, FeatureKind, FeatureSpec, FeatureValue, Row, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, MlpModel};
use crate::scaling::Scaler;
use crate::stats::{FeatureStats, PublicStats};

/// Which generator fills numeric features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    /// Per-feature Normal(mean, variance).
    GenVar,
    /// Per-feature Uniform[min, max].
    GenMin,
    /// Uniform [0,1) per column, pretending the data is already normalized.
    DataFreeRandom,
}

impl std::fmt::Display for GenKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GenKind::GenVar => write!(f, "genvar"),
            GenKind::GenMin => write!(f, "genmin"),
            GenKind::DataFreeRandom => write!(f, "datafree"),
        }
    }
}

/// Full generation mode: generator kind, per-class switch, fallback policy,
/// and the seed that pins the batch.
#[derive(Debug, Clone, Copy)]
pub struct GenMode {
    pub kind: GenKind,
    /// Draw ⌈n/|C|⌉ rows per class from the per-class overlay.
    pub per_class: bool,
    /// Features whose statistics are unavailable fall back to uniform [0,1)
    /// instead of failing.
    pub allow_fallback: bool,
    pub seed: u64,
}

impl GenMode {
    pub fn new(kind: GenKind, seed: u64) -> GenMode {
        GenMode {
            kind,
            per_class: false,
            allow_fallback: true,
            seed,
        }
    }
}

/// Where a query row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Generated,
    InitialSample,
    Augmented,
}

/// Raw-scale query rows with per-row provenance.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub rows: Vec<Row>,
    pub provenance: Vec<Provenance>,
    /// Data-free rows are generated directly in normalized coordinates; a
    /// victim configured for the legacy mode skips its own scaler for them.
    pub pre_normalized: bool,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn sample_pool(
    spec: &FeatureSpec,
    stats: &PublicStats,
    fi: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureValue> {
    let pool = stats
        .pool(fi)
        .ok_or_else(|| Error::EmptyPool(spec.name.clone()))?;
    let total: u64 = pool.values().sum();
    if total == 0 {
        return Err(Error::EmptyPool(spec.name.clone()));
    }
    let mut ticket = rng.gen_range(0..total);
    for (value, &count) in pool {
        if ticket < count {
            return Ok(FeatureValue::Cat(value.clone()));
        }
        ticket -= count;
    }
    unreachable!("ticket bounded by total count")
}

fn sample_numeric(
    kind: GenKind,
    spec: &FeatureSpec,
    fs: &FeatureStats,
    allow_fallback: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    match kind {
        GenKind::GenVar => match (fs.mean, fs.variance) {
            (Some(mean), Some(variance)) => {
                let sigma = variance.sqrt();
                if sigma == 0.0 {
                    Ok(mean)
                } else {
                    let normal = Normal::new(mean, sigma)
                        .map_err(|e| Error::invalid(format!("bad normal parameters: {e}")))?;
                    Ok(normal.sample(rng))
                }
            }
            _ if allow_fallback => Ok(rng.gen_range(0.0..1.0)),
            _ => Err(Error::UnavailableStatistic {
                feature: spec.name.clone(),
                statistic: if fs.mean.is_none() { "mean" } else { "variance" }.into(),
            }),
        },
        GenKind::GenMin => match (fs.min, fs.max) {
            (Some(min), Some(max)) => {
                if min == max {
                    Ok(min)
                } else {
                    Ok(rng.gen_range(min..=max))
                }
            }
            _ if allow_fallback => Ok(rng.gen_range(0.0..1.0)),
            _ => Err(Error::UnavailableStatistic {
                feature: spec.name.clone(),
                statistic: if fs.min.is_none() { "min" } else { "max" }.into(),
            }),
        },
        GenKind::DataFreeRandom => Ok(rng.gen_range(0.0..1.0)),
    }
}

/// Statistics used for one feature of one row: the class overlay when
/// requested and populated, else the pooled statistics.
fn effective_stats<'a>(
    stats: &'a PublicStats,
    class: Option<usize>,
    fi: usize,
) -> &'a FeatureStats {
    if let Some(class) = class {
        if let Some(fs) = stats.class_feature(class, fi) {
            if fs.mean.is_some() || fs.variance.is_some() || fs.min.is_some() || fs.max.is_some() {
                return fs;
            }
        }
    }
    stats.feature(fi)
}

fn generate_row(
    stats: &PublicStats,
    kind: GenKind,
    allow_fallback: bool,
    class: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Row> {
    let schema = stats.schema();
    let mut row = Vec::with_capacity(schema.len());
    for (fi, spec) in schema.iter().enumerate() {
        match spec.kind {
            FeatureKind::Numeric => {
                let fs = effective_stats(stats, class, fi);
                row.push(FeatureValue::Num(sample_numeric(
                    kind,
                    spec,
                    fs,
                    allow_fallback,
                    rng,
                )?));
            }
            FeatureKind::Categorical => match kind {
                // The data-free adversary has no pool; it can only pick
                // uniformly among the schema's categories.
                GenKind::DataFreeRandom => {
                    if spec.categories.is_empty() {
                        return Err(Error::EmptyPool(spec.name.clone()));
                    }
                    let k = rng.gen_range(0..spec.categories.len());
                    row.push(FeatureValue::Cat(spec.categories[k].clone()));
                }
                _ => row.push(sample_pool(spec, stats, fi, rng)?),
            },
        }
    }
    Ok(row)
}

/// Generates `n` query rows from public statistics.
///
/// GenVar draws numeric features from Normal(mean, variance), GenMin from
/// Uniform[min, max], DataFreeRandom from uniform [0,1) per column (flagged
/// pre-normalized). Features with unavailable statistics fall back to uniform
/// [0,1) when the mode allows it. Categorical cells come from the observed
/// value pool. Per-class mode draws ⌈n/|C|⌉ rows per overlay class and trims
/// the excess from the highest class indices down.
pub fn generate(
    stats: &PublicStats,
    mode: GenMode,
    n: usize,
    schema: &[FeatureSpec],
) -> Result<QueryBatch> {
    if n == 0 {
        return Err(Error::invalid("cannot generate an empty batch"));
    }
    if schema != stats.schema() {
        return Err(Error::SchemaMismatch(
            "generation schema differs from the statistics schema".into(),
        ));
    }
    if mode.per_class && mode.kind == GenKind::DataFreeRandom {
        return Err(Error::invalid("per-class generation needs statistics"));
    }
    if mode.per_class && !stats.has_per_class() {
        return Err(Error::invalid(
            "per-class generation requires a per-class overlay in the statistics",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mode.seed);
    let mut rows = Vec::with_capacity(n);
    if mode.per_class {
        let classes: Vec<usize> = stats.classes().collect();
        let per = n.div_ceil(classes.len());
        let mut counts = vec![per; classes.len()];
        let mut excess = per * classes.len() - n;
        for c in (0..classes.len()).rev() {
            if excess == 0 {
                break;
            }
            counts[c] -= 1;
            excess -= 1;
        }
        for (slot, &class) in classes.iter().enumerate() {
            for _ in 0..counts[slot] {
                rows.push(generate_row(
                    stats,
                    mode.kind,
                    mode.allow_fallback,
                    Some(class),
                    &mut rng,
                )?);
            }
        }
    } else {
        for _ in 0..n {
            rows.push(generate_row(
                stats,
                mode.kind,
                mode.allow_fallback,
                None,
                &mut rng,
            )?);
        }
    }
    let provenance = vec![Provenance::Generated; rows.len()];
    Ok(QueryBatch {
        rows,
        provenance,
        pre_normalized: mode.kind == GenKind::DataFreeRandom,
    })
}

/// Replaces ⌈fraction·budget⌉ generated rows with genuine samples divided
/// equally across the classes present in `initial`. See
/// [`mix_with_initial_count`] for the exact-count form.
pub fn mix_with_initial_samples(
    generated: &QueryBatch,
    initial: &TabularDataset,
    fraction: f64,
    seed: u64,
) -> Result<QueryBatch> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "initial-sample fraction must lie in (0,1), got {fraction}"
        )));
    }
    let budget = generated.len();
    let count = (fraction * budget as f64).ceil() as usize;
    mix_with_initial_count(generated, initial, count, seed)
}

/// Replaces exactly `count` generated rows with initial samples.
///
/// The count is divided equally across the classes present in `initial`
/// (remainder to the lowest class indices). Classes with too few rows hand
/// their deficit to later classes; if the initial set as a whole cannot cover
/// `count`, the scarcest class is reported in a class-shortfall error.
pub fn mix_with_initial_count(
    generated: &QueryBatch,
    initial: &TabularDataset,
    count: usize,
    seed: u64,
) -> Result<QueryBatch> {
    let budget = generated.len();
    if count > budget {
        return Err(Error::invalid(format!(
            "{count} initial samples exceed the budget {budget}"
        )));
    }
    if generated.pre_normalized {
        return Err(Error::invalid(
            "cannot mix raw initial samples into a pre-normalized batch",
        ));
    }
    if !initial.rows.is_empty()
        && !generated.rows.is_empty()
        && initial.rows[0].len() != generated.rows[0].len()
    {
        return Err(Error::SchemaMismatch(
            "initial samples and generated rows disagree on arity".into(),
        ));
    }

    let n_classes = initial.n_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in initial.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let present: Vec<usize> = (0..n_classes)
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    if present.is_empty() && count > 0 {
        return Err(Error::invalid("initial dataset has no rows"));
    }

    let mut quotas = vec![0usize; n_classes];
    if count > 0 {
        let base = count / present.len();
        let rem = count % present.len();
        for (slot, &c) in present.iter().enumerate() {
            quotas[c] = base + usize::from(slot < rem);
        }
        // Cap to availability, pushing the deficit to classes with spare rows.
        let mut deficit = 0usize;
        for &c in &present {
            let avail = by_class[c].len();
            if quotas[c] > avail {
                deficit += quotas[c] - avail;
                quotas[c] = avail;
            }
        }
        if deficit > 0 {
            for &c in &present {
                if deficit == 0 {
                    break;
                }
                let spare = by_class[c].len() - quotas[c];
                let take = spare.min(deficit);
                quotas[c] += take;
                deficit -= take;
            }
        }
        if deficit > 0 {
            let worst = present
                .iter()
                .copied()
                .min_by_key(|&c| by_class[c].len())
                .expect("nonempty");
            return Err(Error::ClassShortfall {
                class: worst,
                needed: count.div_ceil(present.len()),
                available: by_class[worst].len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = budget - count;
    let mut rows: Vec<Row> = generated.rows[..keep].to_vec();
    let mut provenance: Vec<Provenance> = generated.provenance[..keep].to_vec();
    for (c, &quota) in quotas.iter().enumerate() {
        if quota == 0 {
            continue;
        }
        let mut idx = by_class[c].clone();
        shuffle(&mut idx, &mut rng);
        for &i in idx.iter().take(quota) {
            rows.push(initial.rows[i].clone());
            provenance.push(Provenance::InitialSample);
        }
    }
    debug_assert_eq!(rows.len(), budget);
    Ok(QueryBatch {
        rows,
        provenance,
        pre_normalized: false,
    })
}

/// Gradient-sign augmentation in the adversary's normalized space.
///
/// For each seed row `x` a new point `x + lambda * sign(dL/dx)` is produced,
/// where `L` is the substitute's cross-entropy against its own current
/// prediction and `sign(0) = 0`. The output holds the seeds followed by the
/// augmented points, both mapped back to raw scale through the scaler inverse
/// and the encoding map, so it doubles the input size. The step is fully
/// deterministic.
pub fn jacobian_augment(
    substitute: &MlpModel,
    seeds: &[Vec<f64>],
    scaler: &Scaler,
    map: &EncodingMap,
    lambda: f64,
) -> Result<QueryBatch> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("augmentation needs at least one seed row"));
    }
    let width = map.width();
    if substitute.in_dim() != width || scaler.arity() != width {
        return Err(Error::invalid(
            "substitute, scaler, and encoding map disagree on feature width",
        ));
    }

    let mut augmented = Vec::with_capacity(seeds.len());
    for x in seeds {
        let probs = substitute.forward(x)?;
        let mut target = vec![0.0; probs.len()];
        target[argmax(&probs)] = 1.0;
        let grad = substitute.input_gradient(x, &target)?;
        let stepped: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(&xi, &g)| xi + lambda * sign(g))
            .collect();
        augmented.push(stepped);
    }
    let mut rows = Vec::with_capacity(seeds.len() * 2);
    for x in seeds {
        rows.push(map.decode_row(&scaler.inverse_row(x)?)?);
    }
    for x in &augmented {
        rows.push(map.decode_row(&scaler.inverse_row(x)?)?);
    }
    let mut provenance = vec![Provenance::Generated; seeds.len()];
    provenance.extend(vec![Provenance::Augmented; seeds.len()]);
    Ok(QueryBatch {
        rows,
        provenance,
        pre_normalized: false,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, FeatureValue, TabularDataset};
    use crate::stats::compute_stats;

    fn dataset(columns: &[&[f64]], labels: &[usize], n_classes: usize) -> TabularDataset {
        let n = columns[0].len();
        let schema: Vec<FeatureSpec> = (0..columns.len())
            .map(|i| FeatureSpec::numeric(format!("f{i}")))
            .collect();
        let rows: Vec<Row> = (0..n)
            .map(|r| columns.iter().map(|c| FeatureValue::Num(c[r])).collect())
            .collect();
        TabularDataset {
            schema,
            rows,
            labels: labels.to_vec(),
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        }
    }

    #[test]
    fn genvar_degenerate_gaussian_is_constant() {
        let ds = dataset(&[&[3.0, 3.0, 3.0]], &[0, 0, 0], 1);
        let stats = compute_stats(&ds, false).unwrap();
        let batch = generate(&stats, GenMode::new(GenKind::GenVar, 1), 5, &ds.schema).unwrap();
        for row in &batch.rows {
            assert_eq!(row[0], FeatureValue::Num(3.0));
        }
    }

    #[test]
    fn genmin_respects_bounds_and_moments() {
        let ds = dataset(&[&[0.0, 10.0]], &[0, 1], 2);
        let stats = compute_stats(&ds, false).unwrap();
        let n = 100_000;
        let batch = generate(&stats, GenMode::new(GenKind::GenMin, 7), n, &ds.schema).unwrap();
        let values: Vec<f64> = batch.rows.iter().map(|r| r[0].as_num().unwrap()).collect();
        assert!(values.iter().all(|&v| (0.0..=10.0).contains(&v)));
        let mean = values.iter().sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.1, "uniform sample mean {mean}");
    }

    #[test]
    fn genvar_law_of_large_numbers() {
        // Sample mean and variance converge to the stored statistics.
        let column: Vec<f64> = (0..500)
            .map(|i| (i as f64 * 0.13).sin() * 8.0 + 20.0)
            .collect();
        let labels = vec![0usize; 500];
        let ds = dataset(&[&column], &labels, 1);
        let stats = compute_stats(&ds, false).unwrap();
        let n = 100_000;
        let batch = generate(&stats, GenMode::new(GenKind::GenVar, 3), n, &ds.schema).unwrap();
        let values: Vec<f64> = batch.rows.iter().map(|r| r[0].as_num().unwrap()).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let want_mean = stats.feature(0).mean.unwrap();
        let want_var = stats.feature(0).variance.unwrap();
        assert!(
            (mean - want_mean).abs() / want_mean.abs() < 0.02,
            "mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() / want_var < 0.02,
            "variance {var} vs {want_var}"
        );
    }

    #[test]
    fn datafree_stays_in_unit_interval_and_is_flagged() {
        let ds = dataset(&[&[5.0, 50.0], &[-3.0, 9.0]], &[0, 1], 2);
        let stats = compute_stats(&ds, false).unwrap();
        let batch = generate(
            &stats,
            GenMode::new(GenKind::DataFreeRandom, 5),
            2000,
            &ds.schema,
        )
        .unwrap();
        assert!(batch.pre_normalized);
        for row in &batch.rows {
            for cell in row {
                let v = cell.as_num().unwrap();
                assert!((0.0..1.0).contains(&v));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let ds = dataset(&[&[0.0, 10.0], &[5.0, 7.0]], &[0, 1], 2);
        let stats = compute_stats(&ds, false).unwrap();
        for kind in [GenKind::GenVar, GenKind::GenMin, GenKind::DataFreeRandom] {
            let a = generate(&stats, GenMode::new(kind, 11), 50, &ds.schema).unwrap();
            let b = generate(&stats, GenMode::new(kind, 11), 50, &ds.schema).unwrap();
            assert_eq!(a.rows, b.rows, "{kind}");
            let c = generate(&stats, GenMode::new(kind, 12), 50, &ds.schema).unwrap();
            assert_ne!(a.rows, c.rows, "{kind}");
        }
    }

    #[test]
    fn fallback_fills_unavailable_features() {
        // Stats known for feature 0 only; feature 1 falls back to [0,1).
        let schema = vec![FeatureSpec::numeric("a"), FeatureSpec::numeric("b")];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(
            &path,
            r#"{ "features": { "a": { "mean": 100.0, "variance": 1.0 } } }"#,
        )
        .unwrap();
        let stats = crate::stats::load_stats_file(&path, &schema).unwrap();
        let batch = generate(&stats, GenMode::new(GenKind::GenVar, 2), 500, &schema).unwrap();
        let a_mean = batch
            .rows
            .iter()
            .map(|r| r[0].as_num().unwrap())
            .sum::<f64>()
            / 500.0;
        assert!((a_mean - 100.0).abs() < 0.5);
        for row in &batch.rows {
            let b = row[1].as_num().unwrap();
            assert!((0.0..1.0).contains(&b));
        }
    }

    #[test]
    fn fallback_disabled_errors_with_statistic_name() {
        let schema = vec![FeatureSpec::numeric("a")];
        let stats = crate::stats::PublicStats::unavailable(&schema);
        let mode = GenMode {
            kind: GenKind::GenVar,
            per_class: false,
            allow_fallback: false,
            seed: 0,
        };
        match generate(&stats, mode, 3, &schema) {
            Err(Error::UnavailableStatistic { feature, statistic }) => {
                assert_eq!(feature, "a");
                assert_eq!(statistic, "mean");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn categorical_cells_come_from_pool() {
        let schema = vec![FeatureSpec::categorical("c", &["x", "y", "z"])];
        let rows = vec![
            vec![FeatureValue::Cat("x".into())],
            vec![FeatureValue::Cat("y".into())],
            vec![FeatureValue::Cat("x".into())],
        ];
        let ds = TabularDataset {
            schema: schema.clone(),
            rows,
            labels: vec![0, 0, 0],
            class_names: vec!["only".into()],
        };
        let stats = compute_stats(&ds, false).unwrap();
        let batch = generate(&stats, GenMode::new(GenKind::GenVar, 4), 200, &schema).unwrap();
        for row in &batch.rows {
            match &row[0] {
                FeatureValue::Cat(v) => assert!(v == "x" || v == "y", "z never observed"),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn empty_pool_is_an_error() {
        let schema = vec![FeatureSpec::categorical("c", &["x"])];
        let stats = crate::stats::PublicStats::unavailable(&schema);
        match generate(&stats, GenMode::new(GenKind::GenVar, 0), 2, &schema) {
            Err(Error::EmptyPool(name)) => assert_eq!(name, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_class_draws_from_overlay() {
        // Class 0 concentrated at -100, class 1 at +100; per-class generation
        // must produce both clusters in equal measure.
        let col: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { -100.0 } else { 100.0 })
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let ds = dataset(&[&col], &labels, 2);
        let stats = compute_stats(&ds, true).unwrap();
        let mode = GenMode {
            kind: GenKind::GenVar,
            per_class: true,
            allow_fallback: true,
            seed: 9,
        };
        let batch = generate(&stats, mode, 10, &ds.schema).unwrap();
        assert_eq!(batch.len(), 10);
        let negatives = batch
            .rows
            .iter()
            .filter(|r| r[0].as_num().unwrap() < 0.0)
            .count();
        assert_eq!(negatives, 5, "five rows per class");
    }

    #[test]
    fn per_class_trims_from_highest_class() {
        let col: Vec<f64> = (0..30).map(|i| (i % 3) as f64 * 10.0).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let ds = dataset(&[&col], &labels, 3);
        let stats = compute_stats(&ds, true).unwrap();
        let mode = GenMode {
            kind: GenKind::GenVar,
            per_class: true,
            allow_fallback: true,
            seed: 2,
        };
        // 7 over 3 classes: ceil gives 3 each, trim one from classes 2 and 1.
        let batch = generate(&stats, mode, 7, &ds.schema).unwrap();
        assert_eq!(batch.len(), 7);
        let count = |target: f64| {
            batch
                .rows
                .iter()
                .filter(|r| (r[0].as_num().unwrap() - target).abs() < 4.0)
                .count()
        };
        assert_eq!(count(0.0), 3);
        assert_eq!(count(10.0), 2);
        assert_eq!(count(20.0), 2);
    }

    #[test]
    fn per_class_requires_overlay() {
        let ds = dataset(&[&[1.0, 2.0]], &[0, 1], 2);
        let stats = compute_stats(&ds, false).unwrap();
        let mode = GenMode {
            kind: GenKind::GenVar,
            per_class: true,
            allow_fallback: true,
            seed: 0,
        };
        assert!(matches!(
            generate(&stats, mode, 4, &ds.schema),
            Err(Error::InvalidArgument(_))
        ));
    }

    fn generated_batch(n: usize) -> (TabularDataset, QueryBatch) {
        let col: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let ds = dataset(&[&col], &labels, 2);
        let stats = compute_stats(&ds, false).unwrap();
        let batch = generate(&stats, GenMode::new(GenKind::GenVar, 1), n, &ds.schema).unwrap();
        (ds, batch)
    }

    #[test]
    fn mix_replaces_requested_fraction() {
        let (ds, batch) = generated_batch(20);
        let mixed = mix_with_initial_samples(&batch, &ds, 0.1, 3).unwrap();
        assert_eq!(mixed.len(), 20);
        let initial_rows: Vec<&Row> = mixed
            .rows
            .iter()
            .zip(&mixed.provenance)
            .filter(|(_, p)| **p == Provenance::InitialSample)
            .map(|(r, _)| r)
            .collect();
        assert_eq!(initial_rows.len(), 2);
        // One per class: in this fixture even values are class 0, odd class 1.
        let classes: Vec<usize> = initial_rows
            .iter()
            .map(|r| (r[0].as_num().unwrap() as usize) % 2)
            .collect();
        assert!(classes.contains(&0) && classes.contains(&1));
    }

    #[test]
    fn mix_half_and_half() {
        let (ds, batch) = generated_batch(10);
        let mixed = mix_with_initial_samples(&batch, &ds, 0.5, 3).unwrap();
        let initial = mixed
            .provenance
            .iter()
            .filter(|p| **p == Provenance::InitialSample)
            .count();
        assert_eq!(initial, 5);
        assert_eq!(mixed.len(), 10);
    }

    #[test]
    fn mix_rejects_degenerate_fractions() {
        let (ds, batch) = generated_batch(10);
        for fraction in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(
                mix_with_initial_samples(&batch, &ds, fraction, 0),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn mix_reports_class_shortfall() {
        let (_, batch) = generated_batch(10);
        let tiny = dataset(&[&[1.0, 2.0]], &[0, 1], 2);
        match mix_with_initial_count(&batch, &tiny, 5, 0) {
            Err(Error::ClassShortfall { available, .. }) => assert_eq!(available, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mix_redistributes_when_a_class_is_short() {
        let (_, batch) = generated_batch(10);
        // Class 0 has 5 rows, class 1 has 1.
        let ds = dataset(&[&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], &[0, 0, 0, 0, 0, 1], 2);
        let mixed = mix_with_initial_count(&batch, &ds, 4, 1).unwrap();
        let initial = mixed
            .provenance
            .iter()
            .filter(|p| **p == Provenance::InitialSample)
            .count();
        assert_eq!(initial, 4);
    }

    #[test]
    fn augment_steps_by_lambda_per_coordinate() {
        let model = MlpModel::init(2, 4, 2, 8).unwrap();
        let schema = vec![FeatureSpec::numeric("a"), FeatureSpec::numeric("b")];
        let map = EncodingMap::from_schema(&schema);
        let scaler = Scaler::identity(2);
        let seeds = vec![vec![0.4, -0.2], vec![1.0, 2.0]];
        let out = jacobian_augment(&model, &seeds, &scaler, &map, 0.1).unwrap();
        assert_eq!(out.len(), 4);
        for (i, seed) in seeds.iter().enumerate() {
            let augmented = &out.rows[seeds.len() + i];
            for (j, cell) in augmented.iter().enumerate() {
                let diff = (cell.as_num().unwrap() - seed[j]).abs();
                assert!(
                    diff < 1e-12 || (diff - 0.1).abs() < 1e-12,
                    "coordinate moved by {diff}"
                );
            }
        }
        assert_eq!(out.provenance[0], Provenance::Generated);
        assert_eq!(out.provenance[2], Provenance::Augmented);
    }

    #[test]
    fn augment_matches_finite_difference_signs() {
        let model = MlpModel::from_parts(
            2,
            3,
            2,
            crate::nn::Activation::Identity,
            vec![0.4, -0.3, 0.2, 0.6, 0.1, -0.5],
            vec![0.05, -0.02, 0.3],
            vec![0.7, -0.2, -0.4, 0.5, 0.3, 0.1],
            vec![0.0, 0.1],
        )
        .unwrap();
        let schema = vec![FeatureSpec::numeric("a"), FeatureSpec::numeric("b")];
        let map = EncodingMap::from_schema(&schema);
        let scaler = Scaler::identity(2);
        let x = vec![0.8, -0.6];

        // Finite-difference oracle for dL/dx, L being the loss at the current
        // prediction.
        let probs = model.forward(&x).unwrap();
        let label = argmax(&probs);
        let loss_at = |x: &[f64]| -> f64 {
            let p = model.forward(x).unwrap();
            -p[label].ln()
        };
        let eps = 1e-6;
        let mut expected_signs = Vec::new();
        for j in 0..2 {
            let mut plus = x.clone();
            plus[j] += eps;
            let mut minus = x.clone();
            minus[j] -= eps;
            expected_signs.push(sign((loss_at(&plus) - loss_at(&minus)) / (2.0 * eps)));
        }

        let out = jacobian_augment(&model, &[x.clone()], &scaler, &map, 0.25).unwrap();
        let augmented = &out.rows[1];
        for j in 0..2 {
            let moved = augmented[j].as_num().unwrap() - x[j];
            assert!(
                (moved - 0.25 * expected_signs[j]).abs() < 1e-9,
                "coordinate {j}: moved {moved}, expected sign {}",
                expected_signs[j]
            );
        }
    }

    #[test]
    fn augment_rejects_bad_lambda() {
        let model = MlpModel::init(1, 2, 2, 0).unwrap();
        let schema = vec![FeatureSpec::numeric("a")];
        let map = EncodingMap::from_schema(&schema);
        let scaler = Scaler::identity(1);
        for lambda in [0.0, -0.5] {
            assert!(matches!(
                jacobian_augment(&model, &[vec![0.1]], &scaler, &map, lambda),
                Err(Error::InvalidArgument(_))
            ));
        }
    }
}
