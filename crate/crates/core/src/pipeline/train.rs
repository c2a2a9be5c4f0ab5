//! Training: spike bases, grid search, screening and the ensemble fit.
//!
//! The cohort is streamed three times in blocks. The first pass computes
//! every scan's spike basis and the per-grid-point screening statistics, the
//! second gathers kept pixels for the grid-point clustering, the third
//! builds each patient's mean quantile image once the levels are known.

use std::borrow::Cow;
use std::time::{Duration, Instant};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{FeatureKind, ModelConfig, Preprocessing, TrainedModel};
use super::predict::{evaluate, EvalReport, PatientPrediction};
use super::source::StackSource;
use super::PipelineError;
use crate::classifier::{baseline_features, fit, BaselineKind, EnsembleConfig};
use crate::dataset::{check_trainable, normalize_intensity, Image, ImageStack, Label};
use crate::screening::{apply_mask, PixelMask, PixelSet, ScreeningAccumulator};
use crate::selection::{
    grid_points, select_from_scores, AlphaSelection, GridFeatures, GridInput, GridPoint, GridScreening,
    SelectionConfig,
};
use crate::spectral::{mean_image, select_quantile_images, spike_basis, SpikeBasis};

pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub features: FeatureKind,
    pub selection: SelectionConfig,
    pub ensemble: EnsembleConfig,
    /// Resize target; defaults to the side of the first stack.
    pub side: Option<usize>,
    /// Patients resident at once while streaming.
    pub block_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            features: FeatureKind::QuantileMean,
            selection: SelectionConfig::default(),
            ensemble: EnsembleConfig::default(),
            side: None,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl TrainConfig {
    /// Use one master seed for clustering, baselines and the ensemble.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.selection.seed = seed;
        self.ensemble.seed = seed;
        self
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            features: self.features,
            seed: self.selection.seed,
            quantile_count: self.selection.quantile_count,
            kmeans_restarts: self.selection.restarts,
            gram_pixels: self.selection.gram_pixels,
            ensemble: self.ensemble.clone(),
        }
    }
}

/// Resize to `side` and bring intensities into `[0, 1]` when needed.
pub(crate) fn prepare(stack: Cow<'_, ImageStack>, side: usize) -> Result<Cow<'_, ImageStack>, PipelineError> {
    let stack = if stack.p() != side {
        Cow::Owned(stack.resized(side))
    } else {
        stack
    };
    if stack.is_unit_range() {
        Ok(stack)
    } else {
        let id = stack.patient_id().to_owned();
        normalize_intensity(&stack)
            .map(Cow::Owned)
            .map_err(|source| PipelineError::Load { patient: id, source })
    }
}

/// Streams a source in blocks and keeps load time out of the clock.
pub(crate) struct Streamer<'s, S: ?Sized> {
    pub source: &'s S,
    pub side: usize,
    pub block_size: usize,
    pub compute: Duration,
}

impl<'s, S: StackSource + ?Sized> Streamer<'s, S> {
    pub fn new(source: &'s S, side: Option<usize>, block_size: usize) -> Result<Self, PipelineError> {
        let side = match side {
            Some(s) => s,
            None => {
                if source.is_empty() {
                    return Err(PipelineError::Config("empty cohort".into()));
                }
                source.load(0).map_err(|e| load_error(source, 0, e))?.p()
            }
        };
        if side == 0 {
            return Err(PipelineError::Config("image side must be positive".into()));
        }
        Ok(Self {
            source,
            side,
            block_size: block_size.max(1),
            compute: Duration::ZERO,
        })
    }

    pub fn load_block(&self, start: usize, end: usize) -> Result<Vec<Cow<'s, ImageStack>>, PipelineError> {
        (start..end)
            .into_par_iter()
            .map(|i| {
                let stack = self.source.load(i).map_err(|e| load_error(self.source, i, e))?;
                prepare(stack, self.side)
            })
            .collect()
    }

    /// Run `f(start, stacks)` over consecutive blocks, timing only `f`.
    pub fn for_each_block(
        &mut self,
        mut f: impl FnMut(usize, &[Cow<'s, ImageStack>]) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let n = self.source.len();
        let mut start = 0;
        while start < n {
            let end = (start + self.block_size).min(n);
            let stacks = self.load_block(start, end)?;
            let t = Instant::now();
            f(start, &stacks)?;
            self.compute += t.elapsed();
            start = end;
        }
        Ok(())
    }
}

pub(crate) fn load_error<S: StackSource + ?Sized>(
    source: &S,
    i: usize,
    source_err: crate::dataset::DatasetError,
) -> PipelineError {
    PipelineError::Load {
        patient: source.patient_id(i).into_owned(),
        source: source_err,
    }
}

fn bases_for(stacks: &[Cow<'_, ImageStack>]) -> Result<Vec<SpikeBasis>, PipelineError> {
    stacks
        .par_iter()
        .map(|s| {
            spike_basis(s).map_err(|source| PipelineError::Spectral {
                patient: s.patient_id().to_owned(),
                source,
            })
        })
        .collect()
}

fn inputs<'a>(stacks: &'a [Cow<'_, ImageStack>], bases: &'a [SpikeBasis]) -> Vec<GridInput<'a>> {
    stacks
        .iter()
        .zip(bases)
        .map(|(s, basis)| GridInput { stack: s, basis })
        .collect()
}

fn check_labels<S: StackSource + ?Sized>(source: &S, labels: &[Label]) -> Result<(), PipelineError> {
    if labels.len() != source.len() {
        return Err(PipelineError::Config(format!(
            "{} labels for {} patients",
            labels.len(),
            source.len()
        )));
    }
    check_trainable(labels)?;
    Ok(())
}

/// Outcome of the grid search, with the spike bases it computed.
pub struct SelectionRun {
    pub selection: AlphaSelection,
    pub bases: Vec<SpikeBasis>,
    pub side: usize,
    pub seconds: f64,
}

fn run_selection_with<S: StackSource + ?Sized>(
    streamer: &mut Streamer<'_, S>,
    labels: &[Label],
    config: &SelectionConfig,
) -> Result<(AlphaSelection, Vec<SpikeBasis>), PipelineError> {
    config.validate()?;
    let points = grid_points(&config.grid);
    let mut screening = GridScreening::new(points.clone(), streamer.side);
    let mut bases: Vec<SpikeBasis> = Vec::with_capacity(streamer.source.len());
    streamer.for_each_block(|start, stacks| {
        let block = bases_for(stacks)?;
        screening.push_block(&inputs(stacks, &block), &labels[start..start + stacks.len()])?;
        bases.extend(block);
        Ok(())
    })?;
    let masks = screening.masks()?;
    drop(screening);
    info!("grid screening done over {} points", points.len());

    let mut features = GridFeatures::new(points, &masks, config.gram_pixels);
    streamer.for_each_block(|start, stacks| {
        features.push_block(&inputs(stacks, &bases[start..start + stacks.len()]))?;
        Ok(())
    })?;
    let t = Instant::now();
    let errors = features.score(labels, config.seed, config.restarts)?;
    streamer.compute += t.elapsed();
    let selection = select_from_scores(&config.grid, &errors, config.quantile_count)?;
    info!(
        "selected ell={} alpha*={} (misclustering {})",
        selection.ell, selection.alpha_star, selection.min_error
    );
    Ok((selection, bases))
}

/// Grid search only.
pub fn run_selection<S: StackSource + ?Sized>(
    source: &S,
    labels: &[Label],
    config: &SelectionConfig,
    side: Option<usize>,
    block_size: usize,
) -> Result<SelectionRun, PipelineError> {
    check_labels(source, labels)?;
    let mut streamer = Streamer::new(source, side, block_size)?;
    let (selection, bases) = run_selection_with(&mut streamer, labels, config)?;
    Ok(SelectionRun {
        selection,
        bases,
        side: streamer.side,
        seconds: streamer.compute.as_secs_f64(),
    })
}

/// Percentages of pixels in each screened set, one row per level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStatsRow {
    pub alpha: f64,
    pub pct_a1: f64,
    pub pct_a2: f64,
    pub pct_a3: f64,
}

pub fn mask_stats<S: StackSource + ?Sized>(
    source: &S,
    labels: &[Label],
    ell: usize,
    alphas: &[f64],
    side: Option<usize>,
    block_size: usize,
) -> Result<Vec<MaskStatsRow>, PipelineError> {
    check_labels(source, labels)?;
    if !(ell == 1 || ell == 2) || alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(PipelineError::Config("ell must be 1 or 2 and alphas within [0, 1]".into()));
    }
    let points: Vec<GridPoint> = alphas.iter().map(|&alpha| GridPoint { ell, alpha }).collect();
    let mut streamer = Streamer::new(source, side, block_size)?;
    let mut screening = GridScreening::new(points, streamer.side);
    streamer.for_each_block(|start, stacks| {
        let block = bases_for(stacks)?;
        screening.push_block(&inputs(stacks, &block), &labels[start..start + stacks.len()])?;
        Ok(())
    })?;
    Ok(screening
        .masks()?
        .iter()
        .zip(alphas)
        .map(|(mask, &alpha)| {
            let [a1, a2, a3] = mask.percentages();
            MaskStatsRow {
                alpha,
                pct_a1: a1,
                pct_a2: a2,
                pct_a3: a3,
            }
        })
        .collect())
}

/// Mean of the quantile images at the selected levels.
pub fn quantile_mean(stack: &ImageStack, basis: &SpikeBasis, selection: &AlphaSelection) -> Image {
    mean_image(&select_quantile_images(stack, basis, selection.ell, &selection.alphas))
        .expect("selection has at least one level")
}

/// A trained model with its in-sample report.
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub report: EvalReport,
}

pub fn train_pipeline<S: StackSource + ?Sized>(
    source: &S,
    labels: &[Label],
    config: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    check_labels(source, labels)?;
    config.ensemble.validate()?;
    let mut streamer = Streamer::new(source, config.side, config.block_size)?;
    let side = streamer.side;

    let (selection, images) = match config.features {
        FeatureKind::QuantileMean => {
            let (selection, bases) = run_selection_with(&mut streamer, labels, &config.selection)?;
            let mut images: Vec<Image> = Vec::with_capacity(source.len());
            streamer.for_each_block(|start, stacks| {
                let block: Vec<Image> = stacks
                    .par_iter()
                    .zip(&bases[start..start + stacks.len()])
                    .map(|(s, b)| quantile_mean(s, b, &selection))
                    .collect();
                images.extend(block);
                Ok(())
            })?;
            (Some(selection), images)
        }
        kind => {
            let baseline = match kind {
                FeatureKind::RandomImage => BaselineKind::RandomImage,
                _ => BaselineKind::MeanImage,
            };
            let seed = config.selection.seed;
            let mut images: Vec<Image> = Vec::with_capacity(source.len());
            streamer.for_each_block(|_, stacks| {
                let block: Vec<Image> = stacks
                    .par_iter()
                    .map(|s| baseline_features(s, baseline, seed))
                    .collect();
                images.extend(block);
                Ok(())
            })?;
            (None, images)
        }
    };

    let t = Instant::now();
    let mask = match config.features {
        FeatureKind::QuantileMean => {
            let mut acc = ScreeningAccumulator::new(side * side);
            for (img, &label) in images.iter().zip(labels) {
                acc.push(&img.vectorize(), label)?;
            }
            acc.mask(side)?
        }
        _ => PixelMask::keep_all(side),
    };
    let q = mask.count(PixelSet::A3);
    if q == 0 {
        return Err(PipelineError::EmptyMask);
    }
    info!("final mask keeps {q} of {} pixels", side * side);
    let features: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| apply_mask(img, &mask, PixelSet::A3).expect("sides agree"))
        .collect();
    drop(images);
    let y: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    let ensemble = fit(&features, &y, &config.ensemble)?;
    let train_seconds = (streamer.compute + t.elapsed()).as_secs_f64();

    let model = TrainedModel {
        config: config.model_config(),
        mask,
        selection,
        preprocessing: Preprocessing::new(side),
        ensemble,
    };
    let predictions: Vec<PatientPrediction> = features
        .iter()
        .enumerate()
        .map(|(i, x)| PatientPrediction {
            patient_id: source.patient_id(i).into_owned(),
            score: Some(model.ensemble.predict_proba(x).expect("dimension matches")),
            error: None,
        })
        .collect();
    let truth: Vec<Option<Label>> = labels.iter().copied().map(Some).collect();
    let mut report = evaluate(&predictions, &truth);
    report.train_seconds = Some(train_seconds);
    Ok(TrainOutcome { model, report })
}
