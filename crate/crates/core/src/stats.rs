//! Per-feature statistics computed from the public pool or loaded from
//! hand-curated sources. This is the only knowledge the adversary holds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureSpec, FeatureValue, TabularDataset};
use crate::error::{Error, Result};

/// Statistics of one numeric feature. `None` means the statistic is not
/// available; availability drives fallback generation downstream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl FeatureStats {
    pub fn has_mean_var(&self) -> bool {
        self.mean.is_some() && self.variance.is_some()
    }

    pub fn has_min_max(&self) -> bool {
        self.min.is_some() && self.max.is_some()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let Some(v) = self.variance {
            if v < 0.0 {
                return Err(Error::invalid(format!(
                    "feature {name:?}: variance {v} is negative"
                )));
            }
        }
        if let (Some(lo), Some(hi)) = (self.min, self.max) {
            if lo > hi {
                return Err(Error::invalid(format!(
                    "feature {name:?}: min {lo} exceeds max {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Observed category values with multiplicities, so empirical frequencies are
/// preserved when sampling.
pub type CategoricalPool = BTreeMap<String, u64>;

/// The adversary's knowledge: per-feature statistics, optional per-class
/// overlay, and categorical value pools. Aligned with a declared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicStats {
    schema: Vec<FeatureSpec>,
    /// Pooled statistics, indexed like the schema. Categorical entries stay
    /// all-`None`.
    per_feature: Vec<FeatureStats>,
    /// Class index → per-feature statistics.
    per_class: BTreeMap<usize, Vec<FeatureStats>>,
    /// Value pools for categorical features, indexed like the schema.
    pools: Vec<Option<CategoricalPool>>,
}

impl PublicStats {
    /// Stats object with every statistic unavailable and empty pools.
    pub fn unavailable(schema: &[FeatureSpec]) -> PublicStats {
        PublicStats {
            schema: schema.to_vec(),
            per_feature: vec![FeatureStats::default(); schema.len()],
            per_class: BTreeMap::new(),
            pools: schema
                .iter()
                .map(|s| match s.kind {
                    FeatureKind::Numeric => None,
                    FeatureKind::Categorical => Some(CategoricalPool::new()),
                })
                .collect(),
        }
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn feature(&self, fi: usize) -> &FeatureStats {
        &self.per_feature[fi]
    }

    pub fn feature_by_name(&self, name: &str) -> Option<&FeatureStats> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .map(|fi| &self.per_feature[fi])
    }

    /// Per-class statistics for one feature, when the overlay carries the
    /// class.
    pub fn class_feature(&self, class: usize, fi: usize) -> Option<&FeatureStats> {
        self.per_class.get(&class).map(|v| &v[fi])
    }

    pub fn has_per_class(&self) -> bool {
        !self.per_class.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    pub fn pool(&self, fi: usize) -> Option<&CategoricalPool> {
        self.pools[fi].as_ref()
    }

    fn feature_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::SchemaMismatch(format!("feature {name:?} not in schema")))
    }
}

fn column_stats(values: &[f64]) -> FeatureStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Population variance, consistent with the sampling side.
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    FeatureStats {
        mean: Some(mean),
        variance: Some(variance),
        min: Some(min),
        max: Some(max),
    }
}

fn numeric_column(pool: &TabularDataset, fi: usize, rows: Option<&[usize]>) -> Vec<f64> {
    match rows {
        Some(idx) => idx
            .iter()
            .filter_map(|&i| pool.rows[i][fi].as_num())
            .collect(),
        None => pool.rows.iter().filter_map(|r| r[fi].as_num()).collect(),
    }
}

/// Computes mean, population variance, min, and max per numeric feature and
/// fills categorical pools. With `per_class`, a per-class overlay is added;
/// every class must then be present in the pool.
pub fn compute_stats(pool: &TabularDataset, per_class: bool) -> Result<PublicStats> {
    if pool.is_empty() {
        return Err(Error::invalid("stats pool is empty"));
    }
    let mut stats = PublicStats::unavailable(&pool.schema);

    for (fi, spec) in pool.schema.iter().enumerate() {
        match spec.kind {
            FeatureKind::Numeric => {
                stats.per_feature[fi] = column_stats(&numeric_column(pool, fi, None));
            }
            FeatureKind::Categorical => {
                let pool_map = stats.pools[fi].as_mut().expect("categorical pool slot");
                for row in &pool.rows {
                    if let FeatureValue::Cat(v) = &row[fi] {
                        *pool_map.entry(v.clone()).or_insert(0) += 1;
                    }
                }
            }
        }
    }

    if per_class {
        for class in 0..pool.n_classes() {
            let idx: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels[i] == class).collect();
            if idx.is_empty() {
                return Err(Error::MissingClass {
                    class,
                    name: pool.class_names[class].clone(),
                });
            }
            let mut class_stats = vec![FeatureStats::default(); pool.schema.len()];
            for (fi, spec) in pool.schema.iter().enumerate() {
                if spec.kind == FeatureKind::Numeric {
                    class_stats[fi] = column_stats(&numeric_column(pool, fi, Some(&idx)));
                }
            }
            stats.per_class.insert(class, class_stats);
        }
    }

    Ok(stats)
}

/// On-disk form of [`PublicStats`]: feature-keyed sections so hand-curated
/// files can list any subset of statistics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StatsFile {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    features: BTreeMap<String, FeatureStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pools: BTreeMap<String, CategoricalPool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    per_class: BTreeMap<String, BTreeMap<String, FeatureStats>>,
}

/// Loads a statistics file against a schema. Listed statistics are flagged
/// available; everything else stays unavailable and triggers fallback
/// generation downstream.
pub fn load_stats_file(path: impl AsRef<Path>, schema: &[FeatureSpec]) -> Result<PublicStats> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: StatsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("stats file {}: {}", path.display(), e),
    })?;

    let mut stats = PublicStats::unavailable(schema);
    for (name, fs) in &file.features {
        let fi = stats.feature_index(name)?;
        if schema[fi].kind != FeatureKind::Numeric {
            return Err(Error::SchemaMismatch(format!(
                "feature {name:?} is categorical; statistics apply to numeric features"
            )));
        }
        fs.validate(name)?;
        stats.per_feature[fi] = *fs;
    }
    for (name, pool) in &file.pools {
        let fi = stats.feature_index(name)?;
        if schema[fi].kind != FeatureKind::Categorical {
            return Err(Error::SchemaMismatch(format!(
                "feature {name:?} is numeric; pools apply to categorical features"
            )));
        }
        stats.pools[fi] = Some(pool.clone());
    }
    for (class_key, features) in &file.per_class {
        let class: usize = class_key.parse().map_err(|_| {
            Error::SchemaMismatch(format!("per-class key {class_key:?} is not a class index"))
        })?;
        let mut class_stats = vec![FeatureStats::default(); schema.len()];
        for (name, fs) in features {
            let fi = stats.feature_index(name)?;
            fs.validate(name)?;
            class_stats[fi] = *fs;
        }
        stats.per_class.insert(class, class_stats);
    }
    Ok(stats)
}

/// Writes statistics in the same format [`load_stats_file`] reads; the pair
/// round-trips losslessly.
pub fn save_stats_file(stats: &PublicStats, path: impl AsRef<Path>) -> Result<()> {
    let mut file = StatsFile::default();
    for (fi, spec) in stats.schema.iter().enumerate() {
        let fs = stats.per_feature[fi];
        if fs.mean.is_some() || fs.variance.is_some() || fs.min.is_some() || fs.max.is_some() {
            file.features.insert(spec.name.clone(), fs);
        }
        if let Some(pool) = &stats.pools[fi] {
            if !pool.is_empty() {
                file.pools.insert(spec.name.clone(), pool.clone());
            }
        }
    }
    for (&class, class_stats) in &stats.per_class {
        let mut section = BTreeMap::new();
        for (fi, spec) in stats.schema.iter().enumerate() {
            let fs = class_stats[fi];
            if fs.mean.is_some() || fs.variance.is_some() || fs.min.is_some() || fs.max.is_some() {
                section.insert(spec.name.clone(), fs);
            }
        }
        file.per_class.insert(class.to_string(), section);
    }
    let text = serde_json::to_string_pretty(&file).expect("stats serialize");
    std::fs::write(path, text)?;
    Ok(())
}
