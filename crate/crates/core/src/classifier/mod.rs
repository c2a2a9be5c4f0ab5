//! Tree-ensemble classifier, ROC analysis and baseline features.
//!
//! `gbrf` is gradient boosting on the logistic loss in which every stage's
//! tree is grown on its own random feature subset. `rf` is plain bagging with
//! Gini splits and majority-vote leaves.

mod baseline;
mod roc;
mod tree;

use log::debug;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{baseline_features, BaselineKind};
pub use roc::{roc_curve, RocCurve, RocPoint};
pub use tree::{Node, Tree};

use crate::rng::{rng_for, stream};
use tree::{Grower, Stat};

/// Newton leaf denominators are floored here.
pub const HESSIAN_FLOOR: f64 = 1e-12;
/// Halvings tried before a stage that would raise the training loss is
/// dropped.
pub const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("{features_per_tree} features per tree requested but rows have {available}")]
    TooFewFeatures {
        features_per_tree: usize,
        available: usize,
    },
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("row {row} has {found} features, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("row {0} contains a non-finite feature")]
    NonFinite(usize),
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("malformed tree {tree}: {reason}")]
    MalformedTree { tree: usize, reason: String },
    #[error("scores and labels must be equally long and non-empty")]
    BadRocInput,
    #[error("ROC needs both classes among the labels")]
    RocSingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Gbrf,
    Rf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_trees: usize,
    pub features_per_tree: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub mode: EnsembleMode,
    pub seed: u64,
    /// Draw a fresh feature subset at every split instead of once per tree.
    #[serde(default)]
    pub per_split_features: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            features_per_tree: 20,
            max_depth: 3,
            learning_rate: 0.1,
            mode: EnsembleMode::Gbrf,
            seed: 0,
            per_split_features: false,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_owned()));
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1");
        }
        if self.features_per_tree == 0 {
            return bad("features_per_tree must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        Ok(())
    }
}

/// A fitted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub mode: EnsembleMode,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood of labels under raw logistic scores.
pub fn log_loss(raw: &[f64], y: &[bool]) -> f64 {
    // log(1 + e^{-z}) for positives, log(1 + e^{z}) for negatives
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    let total: f64 = raw
        .iter()
        .zip(y)
        .map(|(&z, &t)| if t { softplus(-z) } else { softplus(z) })
        .sum();
    total / raw.len() as f64
}

impl Ensemble {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(self.n_features)
                .map_err(|reason| ClassifierError::MalformedTree { tree: i, reason })?;
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.n_features {
            return Err(ClassifierError::DimensionMismatch {
                row: 0,
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Summed logistic score (gbrf) or vote count (rf).
    pub fn raw_score(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        self.check_dim(x)?;
        Ok(self.trees.iter().fold(self.base_score, |acc, t| acc + t.evaluate(x)))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        let raw = self.raw_score(x)?;
        Ok(match self.mode {
            EnsembleMode::Gbrf => sigmoid(raw),
            EnsembleMode::Rf => {
                if self.trees.is_empty() {
                    0.5
                } else {
                    raw / self.trees.len() as f64
                }
            }
        })
    }

    /// Positive when the probability exceeds one half.
    pub fn predict(&self, x: &[f64]) -> Result<bool, ClassifierError> {
        Ok(self.predict_proba(x)? > 0.5)
    }
}

fn check_training<R: AsRef<[f64]>>(x: &[R], y: &[bool], config: &EnsembleConfig) -> Result<usize, ClassifierError> {
    config.validate()?;
    if x.len() != y.len() {
        return Err(ClassifierError::LabelCount {
            rows: x.len(),
            labels: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(ClassifierError::TooFewRows(x.len()));
    }
    if y.iter().all(|&t| t) || y.iter().all(|&t| !t) {
        return Err(ClassifierError::SingleClass);
    }
    let q = x[0].as_ref().len();
    for (row, r) in x.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != q {
            return Err(ClassifierError::DimensionMismatch {
                row,
                expected: q,
                found: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite(row));
        }
    }
    if q < config.features_per_tree {
        return Err(ClassifierError::TooFewFeatures {
            features_per_tree: config.features_per_tree,
            available: q,
        });
    }
    Ok(q)
}

/// The feature subset of tree `t`, ascending.
pub fn tree_features(config: &EnsembleConfig, n_features: usize, t: usize) -> Vec<usize> {
    let mut rng = rng_for(config.seed, stream::TREE_FEATURES, t as u64);
    draw_subset(&mut rng, n_features, config.features_per_tree)
}

fn draw_subset(rng: &mut impl rand::Rng, n: usize, k: usize) -> Vec<usize> {
    let mut f = sample(rng, n, k).into_vec();
    f.sort_unstable();
    f
}

/// Candidate features for every node of tree `t`, in preorder.
fn feature_source(config: &EnsembleConfig, q: usize, t: usize) -> Box<dyn FnMut() -> Vec<usize> + '_> {
    if config.per_split_features {
        let mut rng = rng_for(config.seed, stream::SPLIT_FEATURES, t as u64);
        let k = config.features_per_tree;
        Box::new(move || draw_subset(&mut rng, q, k))
    } else {
        let f = tree_features(config, q, t);
        Box::new(move || f.clone())
    }
}

/// Fit an ensemble; see [`fit_traced`].
pub fn fit<R: AsRef<[f64]> + Sync>(x: &[R], y: &[bool], config: &EnsembleConfig) -> Result<Ensemble, ClassifierError> {
    fit_traced(x, y, config).map(|(e, _)| e)
}

/// Fit an ensemble and, in gbrf mode, return the training log-loss before
/// the first stage and after every stage.
pub fn fit_traced<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[bool],
    config: &EnsembleConfig,
) -> Result<(Ensemble, Vec<f64>), ClassifierError> {
    let q = check_training(x, y, config)?;
    match config.mode {
        EnsembleMode::Gbrf => Ok(fit_gbrf(x, y, config, q)),
        EnsembleMode::Rf => Ok((fit_rf(x, y, config, q), Vec::new())),
    }
}

fn fit_gbrf<R: AsRef<[f64]> + Sync>(x: &[R], y: &[bool], config: &EnsembleConfig, q: usize) -> (Ensemble, Vec<f64>) {
    let n = x.len();
    let pos = y.iter().filter(|&&t| t).count() as f64;
    let base_score = (pos / (n as f64 - pos)).ln();
    let mut raw = vec![base_score; n];
    let mut loss = log_loss(&raw, y);
    let mut trace = vec![loss];
    let mut trees = Vec::with_capacity(config.n_trees);
    let lr = config.learning_rate;
    let mut stats: Vec<Stat> = vec![(0.0, 0.0); n];
    for t in 0..config.n_trees {
        for ((s, &z), &target) in stats.iter_mut().zip(&raw).zip(y) {
            let p = sigmoid(z);
            *s = (p - f64::from(u8::from(target)), p * (1.0 - p));
        }
        let grower = Grower {
            x,
            stats: &stats,
            max_depth: config.max_depth,
            gain: |parent: Stat, l: Stat, r: Stat| {
                let score = |s: Stat| s.0 * s.0 / s.1.max(HESSIAN_FLOOR);
                score(l) + score(r) - score(parent)
            },
            leaf: |s: Stat| -s.0 / s.1.max(HESSIAN_FLOOR) * lr,
        };
        let mut tree = grower.grow((0..n).collect(), &mut *feature_source(config, q, t));

        // Backtrack until the stage does not raise the training loss.
        let step: Vec<f64> = x.iter().map(|r| tree.evaluate(r.as_ref())).collect();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = raw.iter().zip(&step).map(|(z, s)| z + scale * s).collect();
            let trial_loss = log_loss(&trial, y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, trial_loss)) => {
                if scale != 1.0 {
                    // Power-of-two scaling is exact, so the stored leaves
                    // reproduce `trial` bit for bit.
                    debug!("stage {t}: step scaled by {scale}");
                    scale_leaves(&mut tree, scale);
                }
                raw = trial;
                loss = trial_loss;
            }
            None => {
                debug!("stage {t}: no descent, stage zeroed");
                scale_leaves(&mut tree, 0.0);
            }
        }
        trace.push(loss);
        trees.push(tree);
    }
    (
        Ensemble {
            mode: EnsembleMode::Gbrf,
            n_features: q,
            base_score,
            trees,
        },
        trace,
    )
}

fn scale_leaves(tree: &mut Tree, scale: f64) {
    for v in tree.nodes.iter_mut().filter_map(|n| n.leaf_value.as_mut()) {
        *v *= scale;
    }
}

fn fit_rf<R: AsRef<[f64]> + Sync>(x: &[R], y: &[bool], config: &EnsembleConfig, q: usize) -> Ensemble {
    let n = x.len();
    let stats: Vec<Stat> = y.iter().map(|&t| (f64::from(u8::from(t)), 1.0)).collect();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(config.seed, stream::TREE_BOOTSTRAP, t as u64);
            let rows: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
            let grower = Grower {
                x,
                stats: &stats,
                max_depth: config.max_depth,
                gain: |parent: Stat, l: Stat, r: Stat| {
                    let gini = |s: Stat| if s.1 > 0.0 { 2.0 * s.0 * (s.1 - s.0) / s.1 } else { 0.0 };
                    gini(parent) - gini(l) - gini(r)
                },
                leaf: |s: Stat| if s.0 > s.1 - s.0 { 1.0 } else { 0.0 },
            };
            grower.grow(rows, &mut *feature_source(config, q, t))
        })
        .collect();
    Ensemble {
        mode: EnsembleMode::Rf,
        n_features: q,
        base_score: 0.0,
        trees,
    }
}
