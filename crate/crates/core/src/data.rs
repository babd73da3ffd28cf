//! Dataset schema, CSV ingestion, categorical encoding, and the 1:3:1 split
//! into victim-training, validation, and public-statistics pools.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a feature holds real numbers or nominal values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// One column of the schema.
///
/// For categorical features `categories` fixes the one-hot layout. It may be
/// left empty in a schema file, in which case [`load_csv`] freezes the
/// categories in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// Declarative schema file: feature list plus the label column name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub label: String,
    pub features: Vec<FeatureSpec>,
}

impl SchemaFile {
    pub fn load(path: impl AsRef<Path>) -> Result<SchemaFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingFile {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("schema file {}: {}", path.display(), e),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// A raw cell value, before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Num(v) => write!(f, "{v}"),
            FeatureValue::Cat(s) => write!(f, "{s}"),
        }
    }
}

/// A raw feature record; cells are aligned with a schema.
pub type Row = Vec<FeatureValue>;

/// Schema-tagged rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub schema: Vec<FeatureSpec>,
    pub rows: Vec<Row>,
    /// Class index per row; indexes into `class_names`.
    pub labels: Vec<usize>,
    /// Class names in first-appearance order; the index is the class id.
    pub class_names: Vec<String>,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows of one class, cloned into a new dataset with the same schema and
    /// class table.
    pub fn class_subset(&self, class: usize) -> TabularDataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            if label == class {
                rows.push(row.clone());
                labels.push(label);
            }
        }
        TabularDataset {
            schema: self.schema.clone(),
            rows,
            labels,
            class_names: self.class_names.clone(),
        }
    }

    /// Validates row arity, cell kinds, finite numerics, and label range.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            validate_row(&self.schema, row).map_err(|e| Error::invalid(format!("row {i}: {e}")))?;
        }
        for (i, &label) in self.labels.iter().enumerate() {
            if label >= self.class_names.len() {
                return Err(Error::invalid(format!(
                    "row {i}: label {label} out of range for {} classes",
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }
}

/// Checks one row against a schema: arity, kinds, finite numerics, in-schema
/// categories.
pub fn validate_row(schema: &[FeatureSpec], row: &Row) -> Result<()> {
    if row.len() != schema.len() {
        return Err(Error::invalid(format!(
            "row has {} cells, schema has {} features",
            row.len(),
            schema.len()
        )));
    }
    for (spec, cell) in schema.iter().zip(row) {
        match (spec.kind, cell) {
            (FeatureKind::Numeric, FeatureValue::Num(v)) => {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "feature {:?} has non-finite value {v}",
                        spec.name
                    )));
                }
            }
            (FeatureKind::Categorical, FeatureValue::Cat(v)) => {
                if !spec.categories.iter().any(|c| c == v) {
                    return Err(Error::UnknownCategory {
                        feature: spec.name.clone(),
                        value: v.clone(),
                    });
                }
            }
            (FeatureKind::Numeric, FeatureValue::Cat(v)) => {
                return Err(Error::invalid(format!(
                    "feature {:?} expects a number, got {v:?}",
                    spec.name
                )));
            }
            (FeatureKind::Categorical, FeatureValue::Num(v)) => {
                return Err(Error::invalid(format!(
                    "feature {:?} expects a category, got {v}",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}

/// Outcome of CSV ingestion: the dataset plus how many rows were dropped for
/// missing or unparseable cells.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: TabularDataset,
    pub dropped_rows: usize,
}

/// A cell counts as missing when empty or `?` (the UCI convention).
fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "?"
}

/// Loads a CSV with a header row against a declared schema.
///
/// Rows with missing or unparseable cells are dropped and counted. Class
/// indices follow first appearance in the file, as do categories of
/// categorical features whose schema left the list empty.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &[FeatureSpec],
    label_column: &str,
) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::MissingFile {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::HeaderMismatch(e.to_string()))?
        .clone();
    let mut column_of: HashMap<&str, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        column_of.insert(name, i);
    }
    let mut feature_cols = Vec::with_capacity(schema.len());
    for spec in schema {
        let col = *column_of.get(spec.name.as_str()).ok_or_else(|| {
            Error::HeaderMismatch(format!("feature {:?} not found in header", spec.name))
        })?;
        feature_cols.push(col);
    }
    let label_col = *column_of.get(label_column).ok_or_else(|| {
        Error::HeaderMismatch(format!("label column {:?} not found in header", label_column))
    })?;

    // Categories are discovered in first-appearance order when the schema
    // leaves them open; explicit lists are frozen and reject other values.
    let mut discovered: Vec<Vec<String>> = schema.iter().map(|s| s.categories.clone()).collect();
    let explicit: Vec<bool> = schema.iter().map(|s| !s.categories.is_empty()).collect();

    let mut rows: Vec<Row> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut dropped = 0usize;
    let mut total = 0usize;

    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        total += 1;

        let mut row: Row = Vec::with_capacity(schema.len());
        let mut ok = true;
        for (fi, spec) in schema.iter().enumerate() {
            let cell = record.get(feature_cols[fi]).unwrap_or("");
            if is_missing(cell) {
                ok = false;
                break;
            }
            match spec.kind {
                FeatureKind::Numeric => match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(FeatureValue::Num(v)),
                    _ => {
                        ok = false;
                        break;
                    }
                },
                FeatureKind::Categorical => {
                    let value = cell.to_string();
                    if !discovered[fi].iter().any(|c| *c == value) {
                        if explicit[fi] {
                            ok = false;
                            break;
                        }
                        discovered[fi].push(value.clone());
                    }
                    row.push(FeatureValue::Cat(value));
                }
            }
        }
        let label_cell = record.get(label_col).unwrap_or("");
        if is_missing(label_cell) {
            ok = false;
        }
        if !ok {
            dropped += 1;
            continue;
        }
        let label_name = label_cell.to_string();
        let label = *class_index.entry(label_name.clone()).or_insert_with(|| {
            class_names.push(label_name);
            class_names.len() - 1
        });
        rows.push(row);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::AllRowsDropped(total));
    }

    let schema: Vec<FeatureSpec> = schema
        .iter()
        .zip(discovered)
        .map(|(spec, categories)| FeatureSpec {
            name: spec.name.clone(),
            kind: spec.kind,
            categories,
        })
        .collect();

    let dataset = TabularDataset {
        schema,
        rows,
        labels,
        class_names,
    };
    dataset.validate()?;
    Ok(LoadedCsv {
        dataset,
        dropped_rows: dropped,
    })
}

/// The three disjoint parts of the 1:3:1 split.
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub victim_train: TabularDataset,
    pub validation: TabularDataset,
    pub public_pool: TabularDataset,
}

/// Seeded, stratified 1:3:1 partition into victim-training, validation, and
/// public-statistics pool.
pub fn split(dataset: &TabularDataset, seed: u64) -> Result<SplitResult> {
    if dataset.len() < 5 {
        return Err(Error::invalid(format!(
            "split needs at least 5 rows, got {}",
            dataset.len()
        )));
    }
    let parts = stratified_partition(&dataset.labels, dataset.n_classes(), seed);
    let take = |idx: &[usize]| -> TabularDataset {
        TabularDataset {
            schema: dataset.schema.clone(),
            rows: idx.iter().map(|&i| dataset.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
            class_names: dataset.class_names.clone(),
        }
    };
    Ok(SplitResult {
        victim_train: take(&parts[0]),
        validation: take(&parts[1]),
        public_pool: take(&parts[2]),
    })
}

/// Splits row indices per class with weights 1:3:1 using largest-remainder
/// rounding (ties resolved in part order).
pub(crate) fn stratified_partition(
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> [Vec<usize>; 3] {
    const WEIGHTS: [f64; 3] = [1.0, 3.0, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for indices in by_class.iter_mut() {
        indices.shuffle(&mut rng);
        let n = indices.len();
        let total: f64 = WEIGHTS.iter().sum();
        let quotas: Vec<f64> = WEIGHTS.iter().map(|w| n as f64 * w / total).collect();
        let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut leftover = n - sizes.iter().sum::<usize>();
        // Largest fractional part first; ties go to the earlier part.
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &p in &order {
            if leftover == 0 {
                break;
            }
            sizes[p] += 1;
            leftover -= 1;
        }
        let mut start = 0usize;
        for (p, &size) in sizes.iter().enumerate() {
            parts[p].extend_from_slice(&indices[start..start + size]);
            start += size;
        }
    }
    parts
}

/// Column layout of the encoded matrix: numeric features pass through,
/// categorical features expand to one-hot blocks in schema category order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMap {
    schema: Vec<FeatureSpec>,
    /// Per feature: (first encoded column, number of columns).
    spans: Vec<(usize, usize)>,
    width: usize,
}

impl EncodingMap {
    pub fn from_schema(schema: &[FeatureSpec]) -> EncodingMap {
        let mut spans = Vec::with_capacity(schema.len());
        let mut col = 0usize;
        for spec in schema {
            let len = match spec.kind {
                FeatureKind::Numeric => 1,
                FeatureKind::Categorical => spec.categories.len(),
            };
            spans.push((col, len));
            col += len;
        }
        EncodingMap {
            schema: schema.to_vec(),
            spans,
            width: col,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    /// Encoded column span of feature `fi`.
    pub fn span(&self, fi: usize) -> (usize, usize) {
        self.spans[fi]
    }

    /// True when the encoded column belongs to a one-hot block.
    pub fn is_one_hot_column(&self, col: usize) -> bool {
        self.feature_of_column(col)
            .map(|fi| self.schema[fi].kind == FeatureKind::Categorical)
            .unwrap_or(false)
    }

    fn feature_of_column(&self, col: usize) -> Option<usize> {
        self.spans
            .iter()
            .position(|&(start, len)| col >= start && col < start + len)
    }

    /// Encodes a raw row into the numeric feature space.
    pub fn encode_row(&self, row: &Row) -> Result<Vec<f64>> {
        validate_row(&self.schema, row)?;
        let mut out = vec![0.0; self.width];
        for (fi, (spec, cell)) in self.schema.iter().zip(row).enumerate() {
            let (start, _) = self.spans[fi];
            match (spec.kind, cell) {
                (FeatureKind::Numeric, FeatureValue::Num(v)) => out[start] = *v,
                (FeatureKind::Categorical, FeatureValue::Cat(v)) => {
                    let k = spec
                        .categories
                        .iter()
                        .position(|c| c == v)
                        .expect("validated above");
                    out[start + k] = 1.0;
                }
                _ => unreachable!("validated above"),
            }
        }
        Ok(out)
    }

    /// Maps an encoded vector back to a raw row; one-hot blocks decode to the
    /// argmax category (lowest index on ties).
    pub fn decode_row(&self, encoded: &[f64]) -> Result<Row> {
        if encoded.len() != self.width {
            return Err(Error::invalid(format!(
                "encoded row has {} columns, map expects {}",
                encoded.len(),
                self.width
            )));
        }
        let mut row = Vec::with_capacity(self.schema.len());
        for (fi, spec) in self.schema.iter().enumerate() {
            let (start, len) = self.spans[fi];
            match spec.kind {
                FeatureKind::Numeric => row.push(FeatureValue::Num(encoded[start])),
                FeatureKind::Categorical => {
                    let block = &encoded[start..start + len];
                    let mut best = 0usize;
                    for (k, &v) in block.iter().enumerate() {
                        if v > block[best] {
                            best = k;
                        }
                    }
                    row.push(FeatureValue::Cat(spec.categories[best].clone()));
                }
            }
        }
        Ok(row)
    }
}

/// One-hot encodes a dataset. Returns the row-major matrix together with the
/// map that makes generated raw queries encode identically.
pub fn encode(dataset: &TabularDataset) -> Result<(Vec<Vec<f64>>, EncodingMap)> {
    let map = EncodingMap::from_schema(&dataset.schema);
    let mut matrix = Vec::with_capacity(dataset.len());
    for row in &dataset.rows {
        matrix.push(map.encode_row(row)?);
    }
    Ok((matrix, map))
}
