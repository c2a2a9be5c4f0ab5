//! Repeated stratified train/test resampling.

use log::info;
use serde::{Deserialize, Serialize};

use super::model::FeatureKind;
use super::predict::{test_pipeline, EvalReport};
use super::source::{StackSource, Subset};
use super::train::{train_pipeline, TrainConfig};
use super::PipelineError;
use crate::dataset::{split_indices, Label};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub repeats: usize,
    pub train_normal: usize,
    pub train_abnormal: usize,
    pub seed: u64,
    pub train: TrainConfig,
    /// Also run the random-image and mean-image baselines on every split.
    pub baselines: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub in_sample_accuracy: Option<f64>,
    pub n_undiagnosed: usize,
    pub train_seconds: Option<f64>,
    pub test_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRun {
    pub repeat: usize,
    pub split_seed: u64,
    pub test_ids: Vec<String>,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; absent below two values.
    pub sd: Option<f64>,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self {
            mean,
            sd,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub accuracy: Option<MeanSd>,
    pub sensitivity: Option<MeanSd>,
    pub specificity: Option<MeanSd>,
    pub auc: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub repeats: usize,
    pub runs: Vec<CvRun>,
    pub summary: Vec<MethodSummary>,
}

fn result(method: FeatureKind, in_sample: &EvalReport, test: &EvalReport) -> MethodResult {
    MethodResult {
        method: method.as_str().to_owned(),
        accuracy: test.accuracy,
        sensitivity: test.sensitivity,
        specificity: test.specificity,
        auc: test.auc,
        in_sample_accuracy: in_sample.accuracy,
        n_undiagnosed: test.n_undiagnosed,
        train_seconds: in_sample.train_seconds,
        test_seconds: test.test_seconds,
    }
}

pub fn cross_validate<S: StackSource + ?Sized>(
    source: &S,
    labels: &[Label],
    config: &CvConfig,
) -> Result<CvReport, PipelineError> {
    if labels.len() != source.len() {
        return Err(PipelineError::Config("one label per patient is required".into()));
    }
    if config.repeats == 0 {
        return Err(PipelineError::Config("repeats must be at least 1".into()));
    }
    let mut methods = vec![config.train.features];
    if config.baselines {
        methods.extend([FeatureKind::RandomImage, FeatureKind::MeanImage]);
    }
    let mut runs = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let split_seed = derive_seed(config.seed, stream::CROSSVAL, repeat as u64);
        let (train_idx, test_idx) = split_indices(labels, config.train_normal, config.train_abnormal, split_seed)?;
        let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_labels: Vec<Option<Label>> = test_idx.iter().map(|&i| Some(labels[i])).collect();
        let train = Subset::new(source, train_idx);
        let test = Subset::new(source, test_idx);
        let mut results = Vec::with_capacity(methods.len());
        for &kind in &methods {
            let train_config = TrainConfig {
                features: kind,
                ..config.train.clone()
            };
            let outcome = train_pipeline(&train, &train_labels, &train_config)?;
            let report = test_pipeline(&outcome.model, &test, &test_labels, config.train.block_size);
            info!(
                "repeat {repeat} {}: accuracy {:?} auc {:?}",
                kind.as_str(),
                report.accuracy,
                report.auc
            );
            results.push(result(kind, &outcome.report, &report));
        }
        runs.push(CvRun {
            repeat,
            split_seed,
            test_ids: (0..test.len()).map(|i| test.patient_id(i).into_owned()).collect(),
            methods: results,
        });
    }
    let summary = methods
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let collect = |f: fn(&MethodResult) -> Option<f64>| {
                let v: Vec<f64> = runs.iter().filter_map(|r| f(&r.methods[k])).collect();
                MeanSd::of(&v)
            };
            MethodSummary {
                method: kind.as_str().to_owned(),
                accuracy: collect(|m| m.accuracy),
                sensitivity: collect(|m| m.sensitivity),
                specificity: collect(|m| m.specificity),
                auc: collect(|m| m.auc),
            }
        })
        .collect();
    Ok(CvReport {
        repeats: config.repeats,
        runs,
        summary,
    })
}
