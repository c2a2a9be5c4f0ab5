//! The trained model and its JSON file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classifier::{Ensemble, EnsembleConfig, Tree};
use crate::screening::{PixelMask, PixelSet};
use crate::selection::{AlphaSelection, GramPixels};

pub const FORMAT_VERSION: &str = "sml-model-v1";

/// What a patient's feature vector is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Mean of the selected quantile images, screened.
    QuantileMean,
    /// One slice drawn at random per patient, all pixels.
    RandomImage,
    /// Mean of all slices, all pixels.
    MeanImage,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::QuantileMean => "sml",
            FeatureKind::RandomImage => "random_image",
            FeatureKind::MeanImage => "mean_image",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub features: FeatureKind,
    pub seed: u64,
    pub quantile_count: usize,
    pub kmeans_restarts: usize,
    pub gram_pixels: GramPixels,
    pub ensemble: EnsembleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityScaling {
    /// Stacks outside `[0, 1]` are mapped there by their own min and max.
    MinMaxPerStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    BilinearCornerAligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    /// Every slice is resized to `side`×`side` before anything else.
    pub side: usize,
    pub intensity: IntensityScaling,
    pub resize: ResizeMethod,
}

impl Preprocessing {
    pub fn new(side: usize) -> Self {
        Self {
            side,
            intensity: IntensityScaling::MinMaxPerStack,
            resize: ResizeMethod::BilinearCornerAligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub mask: PixelMask,
    /// Absent for the whole-scan baselines.
    pub selection: Option<AlphaSelection>,
    pub preprocessing: Preprocessing,
    pub ensemble: Ensemble,
}

#[derive(Serialize)]
struct FileRef<'a> {
    format_version: &'a str,
    config: &'a ModelConfig,
    mask: &'a PixelMask,
    selection: &'a Option<AlphaSelection>,
    preprocessing: &'a Preprocessing,
    base_score: f64,
    trees: &'a [Tree],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOwned {
    #[allow(dead_code)]
    format_version: String,
    config: ModelConfig,
    mask: PixelMask,
    selection: Option<AlphaSelection>,
    preprocessing: Preprocessing,
    base_score: f64,
    trees: Vec<Tree>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<String>,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.ensemble.n_features
    }

    pub fn to_json(&self) -> String {
        let file = FileRef {
            format_version: FORMAT_VERSION,
            config: &self.config,
            mask: &self.mask,
            selection: &self.selection,
            preprocessing: &self.preprocessing,
            base_score: self.ensemble.base_score,
            trees: &self.ensemble.trees,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| PipelineError::Model(format!("not a model file: {e}")))?;
        match probe.format_version.as_deref() {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(PipelineError::Version(other.to_owned())),
            None => return Err(PipelineError::Model("missing format_version".into())),
        }
        let f: FileOwned = serde_json::from_str(text).map_err(|e| PipelineError::Model(e.to_string()))?;
        let model = TrainedModel {
            ensemble: Ensemble {
                mode: f.config.ensemble.mode,
                n_features: f.mask.count(PixelSet::A3),
                base_score: f.base_score,
                trees: f.trees,
            },
            config: f.config,
            mask: f.mask,
            selection: f.selection,
            preprocessing: f.preprocessing,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Model(m));
        self.mask.validate().map_err(|e| PipelineError::Model(e.to_string()))?;
        self.config
            .ensemble
            .validate()
            .map_err(|e| PipelineError::Model(e.to_string()))?;
        self.ensemble.validate().map_err(|e| PipelineError::Model(e.to_string()))?;
        if self.preprocessing.side != self.mask.p || self.mask.p == 0 {
            return bad(format!(
                "preprocessing side {} does not match mask side {}",
                self.preprocessing.side, self.mask.p
            ));
        }
        if !self.ensemble.base_score.is_finite() {
            return bad("non-finite base_score".into());
        }
        match (&self.selection, self.config.features) {
            (Some(sel), FeatureKind::QuantileMean) => {
                if !(sel.ell == 1 || sel.ell == 2) {
                    return bad(format!("selection ell must be 1 or 2, got {}", sel.ell));
                }
                if sel.alphas.is_empty() || sel.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return bad("selection alphas must be non-empty and within [0, 1]".into());
                }
            }
            (None, FeatureKind::RandomImage | FeatureKind::MeanImage) => {}
            (Some(_), _) => return bad("baseline models carry no selection".into()),
            (None, FeatureKind::QuantileMean) => return bad("model lacks its alpha selection".into()),
        }
        Ok(())
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), PipelineError> {
    fs::write(path, model.to_json()).map_err(|e| PipelineError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    TrainedModel::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUMP: &str = r#"{
  "format_version": "sml-model-v1",
  "config": {
    "features": "quantile_mean",
    "seed": 1,
    "quantile_count": 5,
    "kmeans_restarts": 10,
    "gram_pixels": "A3",
    "ensemble": {
      "n_trees": 1,
      "features_per_tree": 1,
      "max_depth": 1,
      "learning_rate": 0.1,
      "mode": "gbrf",
      "seed": 1,
      "per_split_features": false
    }
  },
  "mask": { "p": 2, "n": 10, "t1": 0.2, "t2": 0.4, "assignment": [1, 3, 2, 1] },
  "selection": {
    "ell": 2, "alpha_star": 0.0, "alphas": [0.0, 0.005, 0.01, 0.015, 0.02],
    "min_error": 0.1, "grid": [0.0, 1.0], "errors": []
  },
  "preprocessing": { "side": 2, "intensity": "min_max_per_stack", "resize": "bilinear_corner_aligned" },
  "base_score": 0.0,
  "trees": [[
    { "feature": 0, "threshold": 0.5, "left": 1, "right": 2, "leaf_value": null },
    { "feature": null, "threshold": null, "left": null, "right": null, "leaf_value": -2.0 },
    { "feature": null, "threshold": null, "left": null, "right": null, "leaf_value": 3.0 }
  ]]
}"#;

    #[test]
    fn hand_written_stump_predicts_both_sides() {
        let model = TrainedModel::from_json(STUMP).unwrap();
        assert_eq!(model.n_features(), 1);
        let low = model.ensemble.predict_proba(&[0.2]).unwrap();
        let high = model.ensemble.predict_proba(&[0.9]).unwrap();
        assert_eq!(low, crate::classifier::sigmoid(-2.0));
        assert_eq!(high, crate::classifier::sigmoid(3.0));
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = TrainedModel::from_json(STUMP).unwrap();
        let first = model.to_json();
        let again = TrainedModel::from_json(&first).unwrap();
        assert_eq!(again, model);
        assert_eq!(again.to_json(), first);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
        assert_eq!(load_model(&path).unwrap(), model);
    }

    #[test]
    fn unknown_version_and_schema_violations() {
        let v999 = STUMP.replace("sml-model-v1", "v999");
        assert!(matches!(TrainedModel::from_json(&v999), Err(PipelineError::Version(v)) if v == "v999"));
        let extra = STUMP.replacen("\"base_score\"", "\"surprise\": 1, \"base_score\"", 1);
        assert!(matches!(TrainedModel::from_json(&extra), Err(PipelineError::Model(_))));
        // split on a feature outside the kept set
        let wide = STUMP.replace("\"feature\": 0", "\"feature\": 3");
        assert!(matches!(TrainedModel::from_json(&wide), Err(PipelineError::Model(_))));
        let no_selection = STUMP.replace("\"selection\": {", "\"selection\": null, \"x\": {");
        assert!(TrainedModel::from_json(&no_selection).is_err());
    }
}
