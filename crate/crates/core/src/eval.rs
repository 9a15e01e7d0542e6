//! Accuracy, rank-statistic ROC-AUC, confusion matrices and k-fold
//! aggregation.

use rayon::prelude::*;

use crate::data::FoldPlan;
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

fn check_probs(probs: &Tensor, labels: &[usize]) -> Result<usize> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::shape(format!("{} labels for probabilities {:?}", labels.len(), probs.shape())));
    }
    let classes = probs.shape()[1];
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, num_classes: classes });
    }
    Ok(classes)
}

/// Row argmax (lowest index on ties) of each probability row.
pub fn predictions(probs: &Tensor) -> Vec<usize> {
    probs.rows().map(argmax).collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy over zero samples"));
    }
    check_probs(probs, labels)?;
    let hits = predictions(probs).iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `confusion[true][predicted]` counts.
pub fn confusion(probs: &Tensor, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    let classes = check_probs(probs, labels)?;
    let mut m = vec![vec![0; classes]; classes];
    for (p, &l) in predictions(probs).into_iter().zip(labels) {
        m[l][p] += 1;
    }
    Ok(m)
}

/// Mann–Whitney AUC: P(score⁺ > score⁻) + ½ P(tie), computed in integer
/// half-units so the result matches pairwise counting exactly.
pub fn roc_auc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_u = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// One-vs-rest AUC for each class from its probability column.
pub fn per_class_auc(probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let classes = check_probs(probs, labels)?;
    (0..classes)
        .map(|c| {
            if !labels.contains(&c) {
                return Err(Error::MissingClass(c));
            }
            let scores: Vec<f64> = probs.rows().map(|r| r[c]).collect();
            let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            roc_auc_binary(&scores, &truth)
        })
        .collect()
}

/// Macro average of [`per_class_auc`].
pub fn roc_auc_multiclass(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let per = per_class_auc(probs, labels)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    pub auc: f64,
    pub per_class_auc: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub fold_id: Option<usize>,
}

impl MetricReport {
    pub fn evaluate(probs: &Tensor, labels: &[usize], fold_id: Option<usize>) -> Result<Self> {
        let per_class_auc = per_class_auc(probs, labels)?;
        Ok(Self {
            accuracy: accuracy(probs, labels)?,
            auc: per_class_auc.iter().sum::<f64>() / per_class_auc.len() as f64,
            per_class_auc,
            confusion: confusion(probs, labels)?,
            fold_id,
        })
    }
}

/// Per-fold reports with mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<MetricReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
}

impl CrossValReport {
    pub fn from_folds(folds: Vec<MetricReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Empty("cross-validation without folds"));
        }
        let (mean_accuracy, std_accuracy) = mean_std(folds.iter().map(|f| f.accuracy));
        let (mean_auc, std_auc) = mean_std(folds.iter().map(|f| f.auc));
        Ok(Self { folds, mean_accuracy, std_accuracy, mean_auc, std_auc })
    }
}

pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `run(fold, train_indices, test_indices)` for every fold of `plan`
/// (in parallel) and aggregates the results in fold order.
pub fn cross_validate<F>(plan: &FoldPlan, run: F) -> Result<CrossValReport>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<MetricReport> + Sync,
{
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let mut report = run(f, &plan.train_indices(f), &plan.test_indices(f))?;
            report.fold_id = Some(f);
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    CrossValReport::from_folds(folds)
}
