//! Scoring unlabelled stacks and summarizing labelled outcomes.

use std::borrow::Cow;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FeatureKind, TrainedModel};
use super::source::StackSource;
use super::train::{load_error, prepare, quantile_mean};
use super::PipelineError;
use crate::classifier::{baseline_features, roc_curve, BaselineKind, RocCurve};
use crate::dataset::{ImageStack, Label};
use crate::screening::{apply_mask, PixelSet};
use crate::spectral::spike_basis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    /// Probability of the abnormal class; absent when the patient could not
    /// be scored.
    pub score: Option<f64>,
    pub error: Option<String>,
}

impl PatientPrediction {
    pub fn predicted(&self) -> Option<Label> {
        self.score.map(|s| Label::from_positive(s > 0.5))
    }
}

/// Feature vector of one prepared stack under `model`.
pub fn model_features(model: &TrainedModel, stack: &ImageStack) -> Result<Vec<f64>, PipelineError> {
    let image = match model.config.features {
        FeatureKind::QuantileMean => {
            let selection = model.selection.as_ref().ok_or(PipelineError::Model("missing selection".into()))?;
            let basis = spike_basis(stack).map_err(|source| PipelineError::Spectral {
                patient: stack.patient_id().to_owned(),
                source,
            })?;
            quantile_mean(stack, &basis, selection)
        }
        FeatureKind::RandomImage => baseline_features(stack, BaselineKind::RandomImage, model.config.seed),
        FeatureKind::MeanImage => baseline_features(stack, BaselineKind::MeanImage, model.config.seed),
    };
    Ok(apply_mask(&image, &model.mask, PixelSet::A3)?)
}

fn score_one(model: &TrainedModel, stack: Cow<'_, ImageStack>) -> Result<f64, PipelineError> {
    let stack = prepare(stack, model.preprocessing.side)?;
    let x = model_features(model, &stack)?;
    Ok(model.ensemble.predict_proba(&x)?)
}

/// Score every patient of `source`. Failures become records with an error
/// instead of aborting the batch. Returns the records and the compute time,
/// which excludes loading.
pub fn predict_source<S: StackSource + ?Sized>(
    model: &TrainedModel,
    source: &S,
    block_size: usize,
) -> (Vec<PatientPrediction>, Duration) {
    let n = source.len();
    let mut out = Vec::with_capacity(n);
    let mut compute = Duration::ZERO;
    let block_size = block_size.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + block_size).min(n);
        let loaded: Vec<Result<Cow<'_, ImageStack>, PipelineError>> = (start..end)
            .into_par_iter()
            .map(|i| source.load(i).map_err(|e| load_error(source, i, e)))
            .collect();
        let t = Instant::now();
        let block: Vec<PatientPrediction> = loaded
            .into_par_iter()
            .enumerate()
            .map(|(k, stack)| {
                let patient_id = source.patient_id(start + k).into_owned();
                match stack.and_then(|s| score_one(model, s)) {
                    Ok(score) => PatientPrediction {
                        patient_id,
                        score: Some(score),
                        error: None,
                    },
                    Err(e) => {
                        warn!("{patient_id}: undiagnosed: {e}");
                        PatientPrediction {
                            patient_id,
                            score: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect();
        compute += t.elapsed();
        out.extend(block);
        start = end;
    }
    (out, compute)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_patients: usize,
    pub n_diagnosed: usize,
    pub n_undiagnosed: usize,
    /// Abnormal is the positive class. Undiagnosed and unlabelled patients
    /// are left out.
    pub confusion: Confusion,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub train_seconds: Option<f64>,
    pub test_seconds: Option<f64>,
    pub predictions: Vec<PatientPrediction>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Diagnosed, labelled patients as `(score, is_abnormal)`.
fn scored(predictions: &[PatientPrediction], truth: &[Option<Label>]) -> (Vec<f64>, Vec<bool>) {
    predictions
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| Some((p.score?, t.as_ref()?.is_positive())))
        .unzip()
}

pub fn roc_for(predictions: &[PatientPrediction], truth: &[Option<Label>]) -> Option<RocCurve> {
    let (scores, labels) = scored(predictions, truth);
    roc_curve(&scores, &labels).ok()
}

pub fn evaluate(predictions: &[PatientPrediction], truth: &[Option<Label>]) -> EvalReport {
    assert_eq!(predictions.len(), truth.len());
    let mut c = Confusion::default();
    let (scores, labels) = scored(predictions, truth);
    for (&s, &positive) in scores.iter().zip(&labels) {
        match (s > 0.5, positive) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let n_diagnosed = predictions.iter().filter(|p| p.score.is_some()).count();
    EvalReport {
        n_patients: predictions.len(),
        n_diagnosed,
        n_undiagnosed: predictions.len() - n_diagnosed,
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        auc: roc_curve(&scores, &labels).ok().map(|r| r.auc),
        confusion: c,
        train_seconds: None,
        test_seconds: None,
        predictions: predictions.to_vec(),
    }
}

/// Score and evaluate a labelled test cohort. Labels are only read after
/// every patient has been scored.
pub fn test_pipeline<S: StackSource + ?Sized>(
    model: &TrainedModel,
    source: &S,
    labels: &[Option<Label>],
    block_size: usize,
) -> EvalReport {
    let (predictions, compute) = predict_source(model, source, block_size);
    let mut report = evaluate(&predictions, labels);
    report.test_seconds = Some(compute.as_secs_f64());
    report
}

/// `patient_id,score,predicted_label,true_label`. Undiagnosed patients have
/// an empty score and the label `undiagnosed`.
pub fn write_predictions(
    path: &Path,
    predictions: &[PatientPrediction],
    truth: Option<&[Option<Label>]>,
) -> Result<(), PipelineError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| PipelineError::Csv(path.display().to_string(), e))?;
    let csv_err = |e| PipelineError::Csv(path.display().to_string(), e);
    let mut header = vec!["patient_id", "score", "predicted_label"];
    if truth.is_some() {
        header.push("true_label");
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, p) in predictions.iter().enumerate() {
        let score = p.score.map(|s| s.to_string()).unwrap_or_default();
        let predicted = p.predicted().map_or("undiagnosed", Label::as_str);
        let mut row = vec![p.patient_id.clone(), score, predicted.to_owned()];
        if let Some(t) = truth {
            row.push(t[i].map(|l| l.as_str().to_owned()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// `threshold,fpr,tpr`, first row at threshold `inf`.
pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<(), PipelineError> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| PipelineError::io(path, e))
}
