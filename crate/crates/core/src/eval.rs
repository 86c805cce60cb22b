//! Test-set metrics: accuracy, AUC and the confusion counts.

use std::fmt::Write as _;

use crate::data::{Label, LabeledSet};
use crate::error::{Error, Result};
use crate::model::{predict_label, ClassifierModel};

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy_of(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::contract("accuracy of an empty test set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::contract("predictions and labels differ in length"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn predicted_labels(model: &ClassifierModel, test: &LabeledSet) -> Result<Vec<Label>> {
    Ok(model
        .predict_proba_batch(test.features())?
        .into_iter()
        .map(|p| Label::from_sign(predict_label(p)))
        .collect())
}

pub fn accuracy(model: &ClassifierModel, test: &LabeledSet) -> Result<f64> {
    accuracy_of(&predicted_labels(model, test)?, test.labels())
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` via midranks, `O(n log n)`.
pub fn auc_of(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l == Label::Positive).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUC needs both classes in the test set"));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::contract(format!("score {s} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == Label::Positive {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

pub fn auc(model: &ClassifierModel, test: &LabeledSet) -> Result<f64> {
    auc_of(&model.predict_proba_batch(test.features())?, test.labels())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub n_test: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

impl MetricsReport {
    /// AUC is left empty when the test set has a single class.
    pub fn compute(model: &ClassifierModel, test: &LabeledSet) -> Result<Self> {
        let scores = model.predict_proba_batch(test.features())?;
        let preds: Vec<Label> = scores.iter().map(|&p| Label::from_sign(predict_label(p))).collect();
        let accuracy = accuracy_of(&preds, test.labels())?;
        let mut r = MetricsReport {
            accuracy,
            auc: auc_of(&scores, test.labels()).ok(),
            n_test: test.len(),
            true_positive: 0,
            false_positive: 0,
            true_negative: 0,
            false_negative: 0,
        };
        for (p, y) in preds.iter().zip(test.labels()) {
            match (p, y) {
                (Label::Positive, Label::Positive) => r.true_positive += 1,
                (Label::Positive, Label::Negative) => r.false_positive += 1,
                (Label::Negative, Label::Negative) => r.true_negative += 1,
                (Label::Negative, Label::Positive) => r.false_negative += 1,
            }
        }
        Ok(r)
    }

    fn fields(&self) -> [(&'static str, String); 7] {
        [
            ("accuracy", format!("{:.6}", self.accuracy)),
            ("auc", self.auc.map(|a| format!("{a:.6}")).unwrap_or_default()),
            ("n_test", self.n_test.to_string()),
            ("tp", self.true_positive.to_string()),
            ("fp", self.false_positive.to_string()),
            ("tn", self.true_negative.to_string()),
            ("fn", self.false_negative.to_string()),
        ]
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_header() -> String {
        MetricsReport {
            accuracy: 0.0,
            auc: None,
            n_test: 0,
            true_positive: 0,
            false_positive: 0,
            true_negative: 0,
            false_negative: 0,
        }
        .fields()
        .map(|(k, _)| k)
        .join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.fields().map(|(_, v)| v).join(",")
    }
}
