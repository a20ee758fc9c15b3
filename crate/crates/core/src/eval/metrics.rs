//! Zero-shot decision rules and retrieval/classification metrics on
//! precomputed similarities.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::EvalError;

/// `sims[n][k] = <image_n, class_k>`, accumulated in f64.
pub fn similarities(image_embs: ArrayView2<'_, f32>, class_embs: ArrayView2<'_, f32>) -> Array2<f64> {
    image_embs.mapv(f64::from).dot(&class_embs.mapv(f64::from).t())
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top1Result {
    pub predictions: Vec<usize>,
    /// Recall of each class; 0 for classes without samples.
    pub per_class_recall: Vec<f64>,
    /// Unweighted mean of `per_class_recall`.
    pub macro_accuracy: f64,
}

pub fn classify_top1(sims: ArrayView2<'_, f64>, truth: &[usize]) -> Result<Top1Result, EvalError> {
    let k = sims.ncols();
    if k < 2 {
        return Err(EvalError::TooFewClasses(k));
    }
    if truth.len() != sims.nrows() {
        return Err(EvalError::Shape(format!("{} labels for {} images", truth.len(), sims.nrows())));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= k) {
        return Err(EvalError::LabelNotInClassSet(format!("class index {bad}")));
    }
    let predictions: Vec<usize> = sims.axis_iter(Axis(0)).map(argmax).collect();
    let mut hits = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &t) in predictions.iter().zip(truth) {
        support[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let per_class_recall: Vec<f64> = hits
        .iter()
        .zip(&support)
        .map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 })
        .collect();
    let macro_accuracy = per_class_recall.iter().sum::<f64>() / k as f64;
    Ok(Top1Result {
        predictions,
        per_class_recall,
        macro_accuracy,
    })
}

/// Class `i` is present iff its similarity exceeds the mean similarity of
/// the other classes (strictly).
pub fn multilabel_eq2(sims: ArrayView1<'_, f64>) -> Vec<bool> {
    let k = sims.len();
    if k < 2 {
        return vec![false; k];
    }
    let total: f64 = sims.sum();
    sims.iter().map(|&s| (k - 1) as f64 * s > total - s).collect()
}

/// Class `i` is present iff its similarity exceeds the negative prompt's.
pub fn multilabel_negative_class(sims: ArrayView1<'_, f64>, negative: f64) -> Vec<bool> {
    sims.iter().map(|&s| s > negative).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApAtK {
    pub ap: f64,
    /// The relevant set was empty, so `ap` is 0 by convention.
    pub empty_relevant: bool,
}

/// `AP@k = 1/min(|R|, k) * sum_{i <= k} rel(i) * precision@i`.
pub fn average_precision_at_k(ranking: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<ApAtK, EvalError> {
    if k == 0 {
        return Err(EvalError::Shape("k must be >= 1".into()));
    }
    let mut seen = HashSet::with_capacity(ranking.len());
    if let Some(dup) = ranking.iter().find(|id| !seen.insert(**id)) {
        return Err(EvalError::DuplicateRankedItem(*dup));
    }
    if relevant.is_empty() {
        return Ok(ApAtK {
            ap: 0.0,
            empty_relevant: true,
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(ApAtK {
        ap: sum / relevant.len().min(k) as f64,
        empty_relevant: false,
    })
}

/// Image indices by descending score; the lower index wins ties.
pub fn rank_descending(scores: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub per_class_ap: Vec<f64>,
    pub map: f64,
    /// Classes whose relevant set was empty.
    pub empty_classes: Vec<usize>,
}

/// Text-to-image retrieval: each class column of `sims` ranks all images.
pub fn retrieve_text_to_image(
    sims: ArrayView2<'_, f64>,
    relevance: &[HashSet<usize>],
    k: usize,
) -> Result<RetrievalResult, EvalError> {
    if sims.nrows() == 0 {
        return Err(EvalError::Shape("retrieval needs at least one image".into()));
    }
    if relevance.len() != sims.ncols() {
        return Err(EvalError::Shape(format!(
            "{} relevance sets for {} classes",
            relevance.len(),
            sims.ncols()
        )));
    }
    let mut per_class_ap = Vec::with_capacity(relevance.len());
    let mut empty_classes = Vec::new();
    for (c, rel) in relevance.iter().enumerate() {
        let ranking = rank_descending(sims.column(c));
        let r = average_precision_at_k(&ranking, rel, k)?;
        if r.empty_relevant {
            empty_classes.push(c);
        }
        per_class_ap.push(r.ap);
    }
    let map = per_class_ap.iter().sum::<f64>() / per_class_ap.len() as f64;
    Ok(RetrievalResult {
        per_class_ap,
        map,
        empty_classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfResult {
    pub per_class: Vec<Prf>,
    pub macro_avg: Prf,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Per-class and macro precision/recall/F1 over `N x K` binary matrices.
pub fn macro_prf1(predictions: ArrayView2<'_, bool>, truths: ArrayView2<'_, bool>) -> Result<PrfResult, EvalError> {
    if predictions.dim() != truths.dim() {
        return Err(EvalError::Shape(format!(
            "predictions {:?} vs truths {:?}",
            predictions.dim(),
            truths.dim()
        )));
    }
    let per_class: Vec<Prf> = predictions
        .axis_iter(Axis(1))
        .zip(truths.axis_iter(Axis(1)))
        .map(|(p, t)| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&a, &b) in p.iter().zip(t.iter()) {
                match (a, b) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            prf_from_counts(tp, fp, fn_)
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    let macro_avg = Prf {
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
    };
    Ok(PrfResult { per_class, macro_avg })
}
