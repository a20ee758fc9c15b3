//! Zero-shot evaluation: template-averaged class embeddings, top-1 and
//! multilabel classification, text-to-image retrieval and the report.

pub mod export;
pub mod metrics;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_embeddings, import_embeddings};
pub use metrics::{
    average_precision_at_k, classify_top1, macro_prf1, multilabel_eq2, multilabel_negative_class, rank_descending,
    retrieve_text_to_image, similarities, ApAtK, Prf, PrfResult, RetrievalResult, Top1Result,
};

use crate::data::{BandId, DataError, PreparedSplit};
use crate::model::{ModelError, ModelParameters};
use crate::tokenizer::Vocabulary;

pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "a satellite photo of {}",
    "a satellite image of {}",
    "an aerial photo of {}",
    "a remote sensing image of {}",
    "an overhead view of {}",
    "a top-down satellite view of {}",
    "an overhead image of {}",
    "a bird's eye view of {}",
];
pub const DEFAULT_NEGATIVE_CLASS: &str = "other features";
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {0:?} has no templates")]
    EmptyTemplates(String),
    #[error("template {0:?} must contain the placeholder {{}} exactly once")]
    BadTemplate(String),
    #[error("label {0} is not in the class set")]
    LabelNotInClassSet(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("ranking lists item {0} more than once")]
    DuplicateRankedItem(usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub templates: Vec<String>,
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, templates: Vec<String>) -> Result<Self, EvalError> {
        let spec = Self {
            name: name.into(),
            templates,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_default_templates(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            templates: DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.templates.is_empty() {
            return Err(EvalError::EmptyTemplates(self.name.clone()));
        }
        if let Some(t) = self.templates.iter().find(|t| t.matches("{}").count() != 1) {
            return Err(EvalError::BadTemplate(t.clone()));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Vec<String> {
        self.templates.iter().map(|t| t.replacen("{}", &self.name, 1)).collect()
    }
}

/// Mean of the rows, renormalized to unit length.
pub fn mean_then_normalize(rows: ArrayView2<'_, f32>) -> Array1<f32> {
    let mean = rows.mapv(f64::from).mean_axis(Axis(0)).expect("at least one row");
    let norm = mean.dot(&mean).sqrt().max(1e-12);
    mean.mapv(|v| (v / norm) as f32)
}

pub fn encode_prompts(params: &ModelParameters, vocab: &Vocabulary, prompts: &[String]) -> Result<Array2<f32>, EvalError> {
    let ctx = params.config.context_length;
    let mut tokens = Array2::zeros((prompts.len(), ctx));
    for (mut row, p) in tokens.axis_iter_mut(Axis(0)).zip(prompts) {
        row.assign(&Array1::from(vocab.encode(p, ctx)));
    }
    Ok(params.encode_text(tokens.view())?)
}

/// `K x D` class embeddings, one template-averaged row per class.
pub fn build_class_embeddings(
    params: &ModelParameters,
    vocab: &Vocabulary,
    classes: &[ClassSpec],
) -> Result<Array2<f32>, EvalError> {
    let mut out = Array2::zeros((classes.len(), params.config.proj_dim));
    for (mut row, c) in out.axis_iter_mut(Axis(0)).zip(classes) {
        c.validate()?;
        let e = encode_prompts(params, vocab, &c.prompts())?;
        row.assign(&mean_then_normalize(e.view()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultilabelMethod {
    Eq2,
    NegativeClass,
}

impl FromStr for MultilabelMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eq2" => Ok(Self::Eq2),
            "negclass" | "negative_class" => Ok(Self::NegativeClass),
            other => Err(format!("unknown multilabel method {other:?} (expected eq2 or negclass)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub bands: Vec<BandId>,
    pub templates: Vec<String>,
    pub method: MultilabelMethod,
    pub negative_class: String,
    pub k: usize,
    pub checkpoint: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            bands: BandId::TEN_BAND.to_vec(),
            templates: DEFAULT_TEMPLATES.iter().map(|t| t.to_string()).collect(),
            method: MultilabelMethod::Eq2,
            negative_class: DEFAULT_NEGATIVE_CLASS.to_string(),
            k: DEFAULT_K,
            checkpoint: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub bands: Vec<BandId>,
    pub templates: Vec<String>,
    pub checkpoint: String,
    pub method: MultilabelMethod,
    pub negative_class: String,
    pub k: usize,
    pub num_images: usize,
    pub multilabel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: MacroMetrics,
    /// Classes without relevant images; their AP is reported as 0.
    pub empty_relevant_classes: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: classification columns, then retrieval.
    pub fn render_table(&self) -> String {
        let w = self.per_class.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let k = self.config.k;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$} {:>7} | {:>8} {:>9} {:>8} {:>8} | {:>8}",
            "class",
            "support",
            "accuracy",
            "precision",
            "recall",
            "f1",
            format!("AP@{k}")
        );
        let _ = writeln!(s, "{}", "-".repeat(w + 63));
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        for c in &self.per_class {
            let _ = writeln!(
                s,
                "{:<w$} {:>7} | {:>8} {:>9} {:>8} {:>8} | {:>8}",
                c.name,
                c.support,
                pct(c.accuracy),
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                pct(c.ap_at_k)
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(w + 63));
        let m = &self.macro_avg;
        let _ = writeln!(
            s,
            "{:<w$} {:>7} | {:>8} {:>9} {:>8} {:>8} | {:>8}",
            "macro",
            self.config.num_images,
            pct(m.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            pct(m.map_at_k)
        );
        s
    }
}

/// Distinct labels in order of first appearance.
pub fn class_names_from_labels(labels: &[Vec<String>]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for l in labels.iter().flatten() {
        if seen.insert(l.clone()) {
            out.push(l.clone());
        }
    }
    out
}

fn truth_matrix(labels: &[Vec<String>], class_names: &[String]) -> Result<Array2<bool>, EvalError> {
    let mut t = Array2::from_elem((labels.len(), class_names.len()), false);
    for (i, ls) in labels.iter().enumerate() {
        for l in ls {
            let k = class_names
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| EvalError::LabelNotInClassSet(format!("{l:?}")))?;
            t[[i, k]] = true;
        }
    }
    Ok(t)
}

/// Builds the report from precomputed embeddings.
///
/// Single-label data is scored with top-1 predictions; multilabel data uses
/// `settings.method`, which needs `negative` for the negative-class rule.
pub fn report_from_embeddings(
    image_embs: ArrayView2<'_, f32>,
    labels: &[Vec<String>],
    class_names: &[String],
    class_embs: ArrayView2<'_, f32>,
    negative: Option<ArrayView1<'_, f32>>,
    settings: &EvalSettings,
) -> Result<EvalReport, EvalError> {
    let k = class_names.len();
    if k < 2 {
        return Err(EvalError::TooFewClasses(k));
    }
    if class_embs.nrows() != k || image_embs.nrows() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} class embeddings for {k} classes, {} image embeddings for {} labels",
            class_embs.nrows(),
            image_embs.nrows(),
            labels.len()
        )));
    }
    let truth = truth_matrix(labels, class_names)?;
    let multilabel = labels.iter().any(|l| l.len() > 1);
    let sims = similarities(image_embs, class_embs);
    let n = labels.len();

    let relevance: Vec<HashSet<usize>> = (0..k)
        .map(|c| (0..n).filter(|&i| truth[[i, c]]).collect())
        .collect();
    let retrieval = retrieve_text_to_image(sims.view(), &relevance, settings.k)?;

    let (decisions, accuracy, macro_accuracy) = if multilabel {
        let mut d = Array2::from_elem((n, k), false);
        let neg_sims = match settings.method {
            MultilabelMethod::Eq2 => None,
            MultilabelMethod::NegativeClass => {
                let neg = negative.ok_or_else(|| EvalError::Shape("negative-class method needs a negative embedding".into()))?;
                Some(image_embs.mapv(f64::from).dot(&neg.mapv(f64::from)))
            }
        };
        for (i, row) in sims.axis_iter(Axis(0)).enumerate() {
            let dec = match &neg_sims {
                None => multilabel_eq2(row),
                Some(ns) => multilabel_negative_class(row, ns[i]),
            };
            for (c, v) in dec.into_iter().enumerate() {
                d[[i, c]] = v;
            }
        }
        let acc: Vec<f64> = (0..k)
            .map(|c| (0..n).filter(|&i| d[[i, c]] == truth[[i, c]]).count() as f64 / n.max(1) as f64)
            .collect();
        let m = acc.iter().sum::<f64>() / k as f64;
        (d, acc, m)
    } else {
        let t: Vec<usize> = labels
            .iter()
            .map(|l| class_names.iter().position(|c| *c == l[0]).expect("checked by truth_matrix"))
            .collect();
        let top1 = classify_top1(sims.view(), &t)?;
        let mut d = Array2::from_elem((n, k), false);
        for (i, &p) in top1.predictions.iter().enumerate() {
            d[[i, p]] = true;
        }
        (d, top1.per_class_recall, top1.macro_accuracy)
    };
    let prf = macro_prf1(decisions.view(), truth.view())?;

    let per_class = (0..k)
        .map(|c| ClassMetrics {
            name: class_names[c].clone(),
            support: relevance[c].len(),
            accuracy: accuracy[c],
            precision: prf.per_class[c].precision,
            recall: prf.per_class[c].recall,
            f1: prf.per_class[c].f1,
            ap_at_k: retrieval.per_class_ap[c],
        })
        .collect();
    Ok(EvalReport {
        config: ReportConfig {
            bands: settings.bands.clone(),
            templates: settings.templates.clone(),
            checkpoint: settings.checkpoint.clone(),
            method: settings.method,
            negative_class: settings.negative_class.clone(),
            k: settings.k,
            num_images: n,
            multilabel,
        },
        per_class,
        macro_avg: MacroMetrics {
            accuracy: macro_accuracy,
            precision: prf.macro_avg.precision,
            recall: prf.macro_avg.recall,
            f1: prf.macro_avg.f1,
            map_at_k: retrieval.map,
        },
        empty_relevant_classes: retrieval.empty_classes.iter().map(|&c| class_names[c].clone()).collect(),
    })
}

pub struct Evaluation {
    pub report: EvalReport,
    pub image_embeddings: Array2<f32>,
    pub class_embeddings: Array2<f32>,
}

/// Encodes a prepared split and scores it against `class_names`.
pub fn evaluate(
    params: &ModelParameters,
    vocab: &Vocabulary,
    data: &PreparedSplit,
    class_names: &[String],
    settings: &EvalSettings,
) -> Result<Evaluation, EvalError> {
    let specs = class_names
        .iter()
        .map(|c| ClassSpec::new(c.clone(), settings.templates.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let class_embeddings = build_class_embeddings(params, vocab, &specs)?;
    let negative = ClassSpec::new(settings.negative_class.clone(), settings.templates.clone())?;
    let negative = build_class_embeddings(params, vocab, &[negative])?;
    let image_embeddings = params.encode_image(data.images())?;
    let report = report_from_embeddings(
        image_embeddings.view(),
        &data.labels,
        class_names,
        class_embeddings.view(),
        Some(negative.row(0)),
        settings,
    )?;
    Ok(Evaluation {
        report,
        image_embeddings,
        class_embeddings,
    })
}
