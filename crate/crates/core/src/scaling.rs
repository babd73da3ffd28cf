//! Standard (mean/variance) and MinMax normalization, fit either from data or
//! directly from public statistics. The victim and the adversary each own one
//! of these; the asymmetry between them is the core of the threat model.

use serde::{Deserialize, Serialize};

use crate::data::EncodingMap;
use crate::error::{Error, Result};
use crate::stats::PublicStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    Standard,
    MinMax,
}

impl std::fmt::Display for ScalerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalerKind::Standard => write!(f, "standard"),
            ScalerKind::MinMax => write!(f, "minmax"),
        }
    }
}

/// Fitted normalization parameters over an encoded feature space.
///
/// Per column the pair is `(mean, variance)` for Standard and `(min, max)`
/// for MinMax, in raw feature units. One-hot columns carry identity
/// parameters and pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    kind: ScalerKind,
    params: Vec<(f64, f64)>,
}

impl Scaler {
    pub fn kind(&self) -> ScalerKind {
        self.kind
    }

    /// Encoded width this scaler transforms.
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[(f64, f64)] {
        &self.params
    }

    fn identity_params(kind: ScalerKind) -> (f64, f64) {
        match kind {
            ScalerKind::Standard => (0.0, 1.0),
            ScalerKind::MinMax => (0.0, 1.0),
        }
    }

    /// A scaler that leaves every column unchanged (MinMax outputs are still
    /// clamped to [0,1] by definition, so identity uses Standard semantics).
    pub fn identity(width: usize) -> Scaler {
        Scaler {
            kind: ScalerKind::Standard,
            params: vec![Self::identity_params(ScalerKind::Standard); width],
        }
    }

    /// Rebuilds a scaler from serialized parameters.
    pub fn from_parts(kind: ScalerKind, params: Vec<(f64, f64)>) -> Scaler {
        Scaler { kind, params }
    }

    /// Fits per-column parameters on an encoded matrix, treating every column
    /// as numeric.
    pub fn fit(kind: ScalerKind, data: &[Vec<f64>]) -> Result<Scaler> {
        Self::fit_inner(kind, data, None)
    }

    /// Like [`Scaler::fit`] but one-hot columns of the encoding get identity
    /// parameters so encoded categoricals stay untouched.
    pub fn fit_with_map(kind: ScalerKind, data: &[Vec<f64>], map: &EncodingMap) -> Result<Scaler> {
        Self::fit_inner(kind, data, Some(map))
    }

    fn fit_inner(kind: ScalerKind, data: &[Vec<f64>], map: Option<&EncodingMap>) -> Result<Scaler> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit a scaler on empty data"));
        }
        let width = data[0].len();
        if let Some(map) = map {
            if map.width() != width {
                return Err(Error::invalid(format!(
                    "encoding map width {} does not match data width {width}",
                    map.width()
                )));
            }
        }
        let n = data.len() as f64;
        let mut params = Vec::with_capacity(width);
        for col in 0..width {
            if map.map(|m| m.is_one_hot_column(col)).unwrap_or(false) {
                params.push(Self::identity_params(kind));
                continue;
            }
            let p = match kind {
                ScalerKind::Standard => {
                    let mean = data.iter().map(|r| r[col]).sum::<f64>() / n;
                    let variance =
                        data.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
                    (mean, variance)
                }
                ScalerKind::MinMax => {
                    let min = data.iter().map(|r| r[col]).fold(f64::INFINITY, f64::min);
                    let max = data
                        .iter()
                        .map(|r| r[col])
                        .fold(f64::NEG_INFINITY, f64::max);
                    (min, max)
                }
            };
            params.push(p);
        }
        Ok(Scaler { kind, params })
    }

    /// Builds a scaler purely from public statistics, never touching data.
    /// Standard needs mean+variance per numeric feature, MinMax needs
    /// min+max; a missing statistic is an error naming feature and statistic.
    pub fn fit_from_stats(kind: ScalerKind, stats: &PublicStats) -> Result<Scaler> {
        let map = EncodingMap::from_schema(stats.schema());
        let mut params = vec![Self::identity_params(kind); map.width()];
        for (fi, spec) in stats.schema().iter().enumerate() {
            if spec.kind != crate::data::FeatureKind::Numeric {
                continue;
            }
            let (start, _) = map.span(fi);
            let fs = stats.feature(fi);
            params[start] = match kind {
                ScalerKind::Standard => {
                    let mean = fs.mean.ok_or_else(|| Error::UnavailableStatistic {
                        feature: spec.name.clone(),
                        statistic: "mean".into(),
                    })?;
                    let variance = fs.variance.ok_or_else(|| Error::UnavailableStatistic {
                        feature: spec.name.clone(),
                        statistic: "variance".into(),
                    })?;
                    (mean, variance)
                }
                ScalerKind::MinMax => {
                    let min = fs.min.ok_or_else(|| Error::UnavailableStatistic {
                        feature: spec.name.clone(),
                        statistic: "min".into(),
                    })?;
                    let max = fs.max.ok_or_else(|| Error::UnavailableStatistic {
                        feature: spec.name.clone(),
                        statistic: "max".into(),
                    })?;
                    (min, max)
                }
            };
        }
        Ok(Scaler { kind, params })
    }

    /// Per-feature hybrid: statistics where available, otherwise parameters
    /// fit on `data`. This is the adversary's best effort under partial
    /// real-world statistics.
    pub fn fit_from_stats_with_fallback(
        kind: ScalerKind,
        stats: &PublicStats,
        data: &[Vec<f64>],
    ) -> Result<Scaler> {
        let map = EncodingMap::from_schema(stats.schema());
        let fitted = Scaler::fit_with_map(kind, data, &map)?;
        let mut params = fitted.params.clone();
        for (fi, spec) in stats.schema().iter().enumerate() {
            if spec.kind != crate::data::FeatureKind::Numeric {
                continue;
            }
            let (start, _) = map.span(fi);
            let fs = stats.feature(fi);
            match kind {
                ScalerKind::Standard => {
                    if let (Some(mean), Some(variance)) = (fs.mean, fs.variance) {
                        params[start] = (mean, variance);
                    }
                }
                ScalerKind::MinMax => {
                    if let (Some(min), Some(max)) = (fs.min, fs.max) {
                        params[start] = (min, max);
                    }
                }
            }
        }
        Ok(Scaler { kind, params })
    }

    fn transform_value(&self, col: usize, x: f64) -> f64 {
        let (p, q) = self.params[col];
        match self.kind {
            ScalerKind::Standard => {
                if q <= 0.0 {
                    0.0
                } else {
                    (x - p) / q.sqrt()
                }
            }
            ScalerKind::MinMax => {
                if q <= p {
                    0.0
                } else {
                    ((x - p) / (q - p)).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Inverse of the affine part of the transform. Clamped MinMax values and
    /// degenerate columns cannot be recovered; they map back to the column
    /// floor.
    pub fn inverse_value(&self, col: usize, y: f64) -> f64 {
        let (p, q) = self.params[col];
        match self.kind {
            ScalerKind::Standard => {
                if q <= 0.0 {
                    p
                } else {
                    y * q.sqrt() + p
                }
            }
            ScalerKind::MinMax => {
                if q <= p {
                    p
                } else {
                    y * (q - p) + p
                }
            }
        }
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.arity() {
            return Err(Error::invalid(format!(
                "row has {} columns, scaler expects {}",
                row.len(),
                self.arity()
            )));
        }
        Ok((0..row.len())
            .map(|c| self.transform_value(c, row[c]))
            .collect())
    }

    pub fn inverse_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.arity() {
            return Err(Error::invalid(format!(
                "row has {} columns, scaler expects {}",
                row.len(),
                self.arity()
            )));
        }
        Ok((0..row.len())
            .map(|c| self.inverse_value(c, row[c]))
            .collect())
    }

    /// Transforms a whole encoded batch.
    pub fn transform(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|row| self.transform_row(row)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::stats::compute_stats;
    use crate::data::{FeatureValue, TabularDataset};

    fn column_matrix(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn standard_fit_two_points() {
        let s = Scaler::fit(ScalerKind::Standard, &column_matrix(&[0.0, 2.0])).unwrap();
        assert_eq!(s.params()[0], (1.0, 1.0));
    }

    #[test]
    fn minmax_fit_extrema() {
        let s = Scaler::fit(ScalerKind::MinMax, &column_matrix(&[3.0, 7.0, 5.0])).unwrap();
        assert_eq!(s.params()[0], (3.0, 7.0));
    }

    #[test]
    fn standard_self_normalization() {
        let data: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.731).sin() * 12.0 + 4.0, i as f64])
            .collect();
        let s = Scaler::fit(ScalerKind::Standard, &data).unwrap();
        let t = s.transform(&data).unwrap();
        for col in 0..2 {
            let n = t.len() as f64;
            let mean = t.iter().map(|r| r[col]).sum::<f64>() / n;
            let var = t.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "column {col} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "column {col} variance {var}");
        }
    }

    #[test]
    fn fit_from_stats_zscore() {
        let ds = TabularDataset {
            schema: vec![FeatureSpec::numeric("x")],
            rows: vec![vec![FeatureValue::Num(3.0)], vec![FeatureValue::Num(7.0)]],
            labels: vec![0, 0],
            class_names: vec!["c".into()],
        };
        let stats = compute_stats(&ds, false).unwrap();
        let s = Scaler::fit_from_stats(ScalerKind::Standard, &stats).unwrap();
        // mean 5, variance 4 → 7 maps to 1.
        assert!((s.transform_row(&[7.0]).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_from_stats_minmax() {
        let ds = TabularDataset {
            schema: vec![FeatureSpec::numeric("x")],
            rows: vec![vec![FeatureValue::Num(0.0)], vec![FeatureValue::Num(10.0)]],
            labels: vec![0, 0],
            class_names: vec!["c".into()],
        };
        let stats = compute_stats(&ds, false).unwrap();
        let s = Scaler::fit_from_stats(ScalerKind::MinMax, &stats).unwrap();
        assert!((s.transform_row(&[5.0]).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_from_stats_missing_statistic_errors() {
        let stats = crate::stats::PublicStats::unavailable(&[FeatureSpec::numeric("x")]);
        match Scaler::fit_from_stats(ScalerKind::Standard, &stats) {
            Err(Error::UnavailableStatistic { feature, statistic }) => {
                assert_eq!(feature, "x");
                assert_eq!(statistic, "mean");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transform_identity_params() {
        let s = Scaler::identity(2);
        let row = vec![1.25, -7.0];
        assert_eq!(s.transform_row(&row).unwrap(), row);
    }

    #[test]
    fn minmax_clamps_out_of_range() {
        let s = Scaler::fit(ScalerKind::MinMax, &column_matrix(&[0.0, 10.0])).unwrap();
        assert_eq!(s.transform_row(&[-5.0]).unwrap()[0], 0.0);
        assert_eq!(s.transform_row(&[15.0]).unwrap()[0], 1.0);
    }

    #[test]
    fn degenerate_columns_map_to_zero() {
        let s = Scaler::fit(ScalerKind::Standard, &column_matrix(&[4.0, 4.0])).unwrap();
        assert_eq!(s.transform_row(&[4.0]).unwrap()[0], 0.0);
        let m = Scaler::fit(ScalerKind::MinMax, &column_matrix(&[4.0, 4.0])).unwrap();
        assert_eq!(m.transform_row(&[9.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn round_trip_inverse() {
        let data: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 1.7 - 3.0, (i as f64).cos() * 9.0])
            .collect();
        for kind in [ScalerKind::Standard, ScalerKind::MinMax] {
            let s = Scaler::fit(kind, &data).unwrap();
            for row in &data {
                let t = s.transform_row(row).unwrap();
                let back = s.inverse_row(&t).unwrap();
                for (a, b) in row.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-9, "{kind} {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn arity_mismatch_rejected() {
        let s = Scaler::identity(3);
        assert!(s.transform_row(&[1.0]).is_err());
    }

    #[test]
    fn one_hot_columns_untouched() {
        let schema = vec![
            FeatureSpec::numeric("x"),
            FeatureSpec::categorical("c", &["a", "b"]),
        ];
        let map = crate::data::EncodingMap::from_schema(&schema);
        let data = vec![vec![10.0, 1.0, 0.0], vec![20.0, 0.0, 1.0]];
        for kind in [ScalerKind::Standard, ScalerKind::MinMax] {
            let s = Scaler::fit_with_map(kind, &data, &map).unwrap();
            let t = s.transform(&data).unwrap();
            assert_eq!(t[0][1], 1.0);
            assert_eq!(t[0][2], 0.0);
            assert_eq!(t[1][1], 0.0);
            assert_eq!(t[1][2], 1.0);
        }
    }

    #[test]
    fn stats_equivalence_with_data_fit() {
        // fit_from_stats(compute_stats(D)) must equal fit(D) to 1e-9.
        let schema = vec![FeatureSpec::numeric("x"), FeatureSpec::numeric("y")];
        let rows: Vec<Vec<FeatureValue>> = (0..31)
            .map(|i| {
                vec![
                    FeatureValue::Num((i as f64 * 0.639).sin() * 40.0),
                    FeatureValue::Num(i as f64 * 2.0 + 1.0),
                ]
            })
            .collect();
        let ds = TabularDataset {
            schema,
            rows,
            labels: vec![0; 31],
            class_names: vec!["c".into()],
        };
        let (matrix, _) = crate::data::encode(&ds).unwrap();
        let stats = compute_stats(&ds, false).unwrap();
        for kind in [ScalerKind::Standard, ScalerKind::MinMax] {
            let from_stats = Scaler::fit_from_stats(kind, &stats).unwrap();
            let from_data = Scaler::fit(kind, &matrix).unwrap();
            for (a, b) in from_stats.params().iter().zip(from_data.params()) {
                assert!((a.0 - b.0).abs() < 1e-9);
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }
}
