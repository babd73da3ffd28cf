//! Evaluation of substitutes: accuracy against true labels, fidelity against
//! the victim's predictions, and per-class recall.

use crate::data::{EncodingMap, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, MlpModel};
use crate::querygen::{Provenance, QueryBatch};
use crate::scaling::Scaler;
use crate::victim::VictimAccess;

/// Whether fidelity's victim-side queries count toward the attack budget.
/// The default excludes them; strict mode bills the adversary for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalBudget {
    #[default]
    Excluded,
    Counted,
}

/// One evaluation of a substitute on a validation set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    pub fidelity: f64,
    /// Recall per class; `None` for classes absent from the validation set.
    pub per_class_recall: Vec<Option<f64>>,
    pub n_evaluated: usize,
}

fn substitute_predictions(
    substitute: &MlpModel,
    scaler: &Scaler,
    map: &EncodingMap,
    validation: &TabularDataset,
) -> Result<Vec<usize>> {
    if validation.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut out = Vec::with_capacity(validation.len());
    for row in &validation.rows {
        let encoded = map.encode_row(row)?;
        let normalized = scaler.transform_row(&encoded)?;
        out.push(substitute.predict_class(&normalized)?);
    }
    Ok(out)
}

/// Fraction of validation rows where the substitute's argmax equals the true
/// label. Rows are encoded and normalized with the adversary's own scaler.
pub fn accuracy(
    substitute: &MlpModel,
    scaler: &Scaler,
    map: &EncodingMap,
    validation: &TabularDataset,
) -> Result<f64> {
    let predictions = substitute_predictions(substitute, scaler, map, validation)?;
    let correct = predictions
        .iter()
        .zip(&validation.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / validation.len() as f64)
}

/// Fraction of validation rows where substitute and victim agree. Each side
/// applies its own normalization to the raw row.
pub fn fidelity(
    substitute: &MlpModel,
    scaler: &Scaler,
    map: &EncodingMap,
    victim: &VictimAccess,
    validation: &TabularDataset,
    budget: EvalBudget,
) -> Result<f64> {
    let predictions = substitute_predictions(substitute, scaler, map, validation)?;
    let victim_classes = victim_predictions(victim, validation, budget)?;
    let agree = predictions
        .iter()
        .zip(&victim_classes)
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / validation.len() as f64)
}

fn victim_predictions(
    victim: &VictimAccess,
    validation: &TabularDataset,
    budget: EvalBudget,
) -> Result<Vec<usize>> {
    let batch = QueryBatch {
        rows: validation.rows.clone(),
        provenance: vec![Provenance::Generated; validation.len()],
        pre_normalized: false,
    };
    let responses = match budget {
        EvalBudget::Excluded => victim.query_eval(&batch)?,
        EvalBudget::Counted => victim.query(&batch)?,
    };
    Ok(responses.iter().map(|p| argmax(p)).collect())
}

/// Recall per class. Classes with no validation rows report `None` rather
/// than zero.
pub fn per_class_recall(
    substitute: &MlpModel,
    scaler: &Scaler,
    map: &EncodingMap,
    validation: &TabularDataset,
) -> Result<Vec<Option<f64>>> {
    let predictions = substitute_predictions(substitute, scaler, map, validation)?;
    let n_classes = validation.n_classes();
    let mut present = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (pred, &label) in predictions.iter().zip(&validation.labels) {
        present[label] += 1;
        if *pred == label {
            hit[label] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|c| {
            if present[c] == 0 {
                None
            } else {
                Some(hit[c] as f64 / present[c] as f64)
            }
        })
        .collect())
}

/// Accuracy, fidelity, and recall in one pass.
pub fn evaluate(
    substitute: &MlpModel,
    scaler: &Scaler,
    map: &EncodingMap,
    victim: &VictimAccess,
    validation: &TabularDataset,
    budget: EvalBudget,
) -> Result<EvalReport> {
    let predictions = substitute_predictions(substitute, scaler, map, validation)?;
    let victim_classes = victim_predictions(victim, validation, budget)?;

    let n = validation.len();
    let correct = predictions
        .iter()
        .zip(&validation.labels)
        .filter(|(p, l)| p == l)
        .count();
    let agree = predictions
        .iter()
        .zip(&victim_classes)
        .filter(|(a, b)| a == b)
        .count();

    let n_classes = validation.n_classes();
    let mut present = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (pred, &label) in predictions.iter().zip(&validation.labels) {
        present[label] += 1;
        if *pred == label {
            hit[label] += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        fidelity: agree as f64 / n as f64,
        per_class_recall: (0..n_classes)
            .map(|c| {
                if present[c] == 0 {
                    None
                } else {
                    Some(hit[c] as f64 / present[c] as f64)
                }
            })
            .collect(),
        n_evaluated: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, FeatureValue, Row, TabularDataset};
    use crate::nn::{Activation, TrainConfig};
    use crate::scaling::ScalerKind;
    use crate::victim::train_victim;

    fn numeric_dataset(xs: &[(f64, usize)], n_classes: usize) -> TabularDataset {
        TabularDataset {
            schema: vec![FeatureSpec::numeric("x")],
            rows: xs.iter().map(|&(v, _)| vec![FeatureValue::Num(v)]).collect(),
            labels: xs.iter().map(|&(_, l)| l).collect(),
            class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        }
    }

    /// Enough steps for tiny fixtures to be memorized.
    fn long_train() -> TrainConfig {
        TrainConfig {
            epochs: 300,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    /// A model that always predicts the given class, whatever the input.
    fn constant_model(in_dim: usize, out_dim: usize, class: usize) -> MlpModel {
        let mut b2 = vec![0.0; out_dim];
        b2[class] = 10.0;
        MlpModel::from_parts(
            in_dim,
            1,
            out_dim,
            Activation::Relu,
            vec![0.0; in_dim],
            vec![0.0],
            vec![0.0; out_dim],
            b2,
        )
        .unwrap()
    }

    #[test]
    fn constant_predictor_accuracy_is_class_share() {
        // 40% of labels are class 0.
        let rows: Vec<(f64, usize)> = (0..10).map(|i| (i as f64, usize::from(i >= 4))).collect();
        let ds = numeric_dataset(&rows, 2);
        let model = constant_model(1, 2, 0);
        let map = EncodingMap::from_schema(&ds.schema);
        let acc = accuracy(&model, &Scaler::identity(1), &map, &ds).unwrap();
        assert!((acc - 0.4).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let rows: Vec<(f64, usize)> = (0..10)
            .map(|i| (if i % 2 == 0 { -5.0 - i as f64 } else { 5.0 + i as f64 }, i % 2))
            .collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &long_train()).unwrap();
        assert_eq!(deployment.accuracy_on(&ds).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_matches_enumeration_oracle() {
        let rows: Vec<(f64, usize)> = (0..50).map(|i| ((i as f64 * 0.71).sin() * 3.0, i % 3)).collect();
        let ds = numeric_dataset(&rows, 3);
        let model = MlpModel::init(1, 7, 3, 21).unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let scaler = Scaler::identity(1);
        let acc = accuracy(&model, &scaler, &map, &ds).unwrap();

        // Brute-force row-by-row count.
        let mut correct = 0;
        for (row, &label) in ds.rows.iter().zip(&ds.labels) {
            let x = vec![row[0].as_num().unwrap()];
            if model.predict_class(&x).unwrap() == label {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / 50.0);
    }

    #[test]
    fn fidelity_of_victim_with_itself_is_one() {
        let rows: Vec<(f64, usize)> = (0..20).map(|i| (i as f64 - 10.0, i % 2)).collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &TrainConfig::default()).unwrap();

        // Substitute is literally the victim: same model file, same scaler.
        let mut bytes = Vec::new();
        deployment.write_to(&mut bytes).unwrap();
        let clone = crate::victim::VictimDeployment::read_from(&mut bytes.as_slice()).unwrap();
        let access = VictimAccess::in_process(deployment);

        // Evaluate through the cloned deployment's own boundary by comparing
        // victim answers with themselves row by row.
        let batch = QueryBatch {
            rows: ds.rows.clone(),
            provenance: vec![Provenance::Generated; ds.len()],
            pre_normalized: false,
        };
        let a = access.query_eval(&batch).unwrap();
        let b = clone.predict(&batch).unwrap();
        let agree = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| argmax(x) == argmax(y))
            .count();
        assert_eq!(agree, ds.len());
    }

    #[test]
    fn fidelity_matches_enumeration_oracle() {
        let rows: Vec<(f64, usize)> = (0..50).map(|i| ((i as f64 * 1.3).cos() * 4.0, i % 2)).collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &TrainConfig::default()).unwrap();
        let clone_model = {
            let mut bytes = Vec::new();
            deployment.write_to(&mut bytes).unwrap();
            crate::victim::VictimDeployment::read_from(&mut bytes.as_slice()).unwrap()
        };
        let substitute = MlpModel::init(1, 5, 2, 77).unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let scaler = Scaler::identity(1);
        let access = VictimAccess::in_process(deployment);

        let fid = fidelity(&substitute, &scaler, &map, &access, &ds, EvalBudget::Excluded).unwrap();

        let mut agree = 0;
        for row in &ds.rows {
            let x = vec![row[0].as_num().unwrap()];
            let sub_class = substitute.predict_class(&x).unwrap();
            let batch = QueryBatch {
                rows: vec![row.clone()],
                provenance: vec![Provenance::Generated],
                pre_normalized: false,
            };
            let victim_class = argmax(&clone_model.predict(&batch).unwrap()[0]);
            if sub_class == victim_class {
                agree += 1;
            }
        }
        assert_eq!(fid, agree as f64 / 50.0);
    }

    #[test]
    fn flipped_substitute_has_zero_fidelity() {
        // Victim memorizes a separable 2-class task; the substitute is
        // trained on flipped labels, so it predicts the victim's argmin.
        let rows: Vec<(f64, usize)> = (0..20)
            .map(|i| (if i % 2 == 0 { -9.0 - i as f64 } else { 9.0 + i as f64 }, i % 2))
            .collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &long_train()).unwrap();
        assert_eq!(deployment.accuracy_on(&ds).unwrap(), 1.0);
        let access = VictimAccess::in_process(deployment);

        let flipped = TabularDataset {
            labels: ds.labels.iter().map(|&l| 1 - l).collect(),
            ..ds.clone()
        };
        let (matrix, map) = crate::data::encode(&flipped).unwrap();
        let scaler = Scaler::fit(ScalerKind::Standard, &matrix).unwrap();
        let normalized = scaler.transform(&matrix).unwrap();
        let mut substitute = MlpModel::init(1, 6, 2, 1).unwrap();
        substitute
            .train(
                &normalized,
                &crate::nn::Targets::Hard(flipped.labels.clone()),
                &long_train(),
            )
            .unwrap();
        assert_eq!(accuracy(&substitute, &scaler, &map, &flipped).unwrap(), 1.0);

        let fid = fidelity(&substitute, &scaler, &map, &access, &ds, EvalBudget::Excluded).unwrap();
        assert_eq!(fid, 0.0);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let rows: Vec<(f64, usize)> = (0..30).map(|i| ((i as f64 * 0.37).sin() * 5.0, i % 2)).collect();
        let ds = numeric_dataset(&rows, 2);
        let mut permuted_rows: Vec<(Row, usize)> = ds
            .rows
            .iter()
            .cloned()
            .zip(ds.labels.iter().cloned())
            .collect();
        permuted_rows.reverse();
        let permuted = TabularDataset {
            schema: ds.schema.clone(),
            rows: permuted_rows.iter().map(|(r, _)| r.clone()).collect(),
            labels: permuted_rows.iter().map(|(_, l)| *l).collect(),
            class_names: ds.class_names.clone(),
        };
        let model = MlpModel::init(1, 4, 2, 5).unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let scaler = Scaler::identity(1);
        let a1 = accuracy(&model, &scaler, &map, &ds).unwrap();
        let a2 = accuracy(&model, &scaler, &map, &permuted).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn saturating_predictor_has_full_recall_on_its_class() {
        let rows: Vec<(f64, usize)> = (0..12).map(|i| (i as f64, usize::from(i % 3 == 0))).collect();
        let ds = numeric_dataset(&rows, 2);
        let model = constant_model(1, 2, 1);
        let map = EncodingMap::from_schema(&ds.schema);
        let recalls = per_class_recall(&model, &Scaler::identity(1), &map, &ds).unwrap();
        assert_eq!(recalls[1], Some(1.0));
        assert_eq!(recalls[0], Some(0.0));
    }

    #[test]
    fn recall_matches_hand_tallied_confusion_case() {
        // Six rows; the model splits on sign of x. Hand tally:
        //   class 0 rows: -1 (pred 0, hit), -2 (hit), +3 (pred 1, miss) -> 2/3
        //   class 1 rows: +1 (hit), -4 (miss) -> 1/2
        //   class 2: absent -> None
        let ds = TabularDataset {
            schema: vec![FeatureSpec::numeric("x")],
            rows: vec![
                vec![FeatureValue::Num(-1.0)],
                vec![FeatureValue::Num(-2.0)],
                vec![FeatureValue::Num(3.0)],
                vec![FeatureValue::Num(1.0)],
                vec![FeatureValue::Num(-4.0)],
                vec![FeatureValue::Num(-5.0)],
            ],
            labels: vec![0, 0, 0, 1, 1, 0],
            class_names: vec!["a".into(), "b".into(), "c".into()],
        };
        // Sign model: w1=1, w2 row maps positive to class 1.
        let model = MlpModel::from_parts(
            1,
            1,
            3,
            Activation::Identity,
            vec![1.0],
            vec![0.0],
            vec![-5.0, 5.0, 0.0],
            vec![0.0, 0.0, -100.0],
        )
        .unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let recalls = per_class_recall(&model, &Scaler::identity(1), &map, &ds).unwrap();
        assert_eq!(recalls[0], Some(3.0 / 4.0));
        assert_eq!(recalls[1], Some(0.5));
        assert_eq!(recalls[2], None);
    }

    #[test]
    fn empty_validation_rejected() {
        let ds = numeric_dataset(&[], 2);
        let model = constant_model(1, 2, 0);
        let map = EncodingMap::from_schema(&[FeatureSpec::numeric("x")]);
        assert!(accuracy(&model, &Scaler::identity(1), &map, &ds).is_err());
    }

    #[test]
    fn accuracy_equals_fidelity_under_perfect_victim() {
        // Victim memorizes a separable dataset, so its predictions equal the
        // labels and any substitute scores identically on both metrics.
        let rows: Vec<(f64, usize)> = (0..16)
            .map(|i| (if i % 2 == 0 { -8.0 - i as f64 } else { 8.0 + i as f64 }, i % 2))
            .collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &long_train()).unwrap();
        assert_eq!(deployment.accuracy_on(&ds).unwrap(), 1.0, "victim must memorize");
        let access = VictimAccess::in_process(deployment);

        let substitute = MlpModel::init(1, 6, 2, 3).unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let scaler = Scaler::identity(1);
        let acc = accuracy(&substitute, &scaler, &map, &ds).unwrap();
        let fid = fidelity(&substitute, &scaler, &map, &access, &ds, EvalBudget::Excluded).unwrap();
        assert_eq!(acc, fid);
    }

    #[test]
    fn strict_budget_counts_evaluation_queries() {
        let rows: Vec<(f64, usize)> = (0..10).map(|i| (i as f64, i % 2)).collect();
        let ds = numeric_dataset(&rows, 2);
        let deployment = train_victim(&ds, ScalerKind::Standard, &TrainConfig::default()).unwrap();
        let access = VictimAccess::in_process(deployment);
        let substitute = MlpModel::init(1, 4, 2, 0).unwrap();
        let map = EncodingMap::from_schema(&ds.schema);
        let scaler = Scaler::identity(1);

        fidelity(&substitute, &scaler, &map, &access, &ds, EvalBudget::Excluded).unwrap();
        assert_eq!(access.query_count(), 0);
        fidelity(&substitute, &scaler, &map, &access, &ds, EvalBudget::Counted).unwrap();
        assert_eq!(access.query_count(), ds.len() as u64);
    }
}
