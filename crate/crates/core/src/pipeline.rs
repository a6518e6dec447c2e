//! End-to-end study on synthetic data: dataset, classifier, saliency maps
//! for every method, and the pieces a campaign or automated run needs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    gradient_saliency, train, Classifier, ClassifierError, GradientMethod, SmoothGradParams, TrainConfig, TrainReport,
};
use crate::crowdgame::{CampaignAssets, GameError};
use crate::dataset::LabeledImage;
use crate::saliency::{generate_random_saliency, rank_pixels, PixelRanking, SaliencyMap, RANDOM_METHOD_ID};
use crate::seeds;
use crate::simcrowd::{generate_synthetic_dataset, oracle_saliency, SimError, SyntheticDataset, SyntheticDatasetConfig, ORACLE_METHOD_ID};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown saliency method {0}")]
    UnknownMethod(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("saliency: {0}")]
    Saliency(String),
    #[error("method {0} needs a trained model")]
    NoModel(String),
}

pub const BUILTIN_METHODS: [&str; 4] = [ORACLE_METHOD_ID, "vanilla", "smoothgrad", RANDOM_METHOD_ID];

/// Methods of the default study. SmoothGrad is left out because on the
/// synthetic data it is statistically indistinguishable from vanilla.
pub const DEFAULT_METHODS: [&str; 3] = [ORACLE_METHOD_ID, "vanilla", RANDOM_METHOD_ID];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub dataset: SyntheticDatasetConfig,
    pub train: TrainConfig,
    pub smoothgrad: SmoothGradParams,
    pub methods: Vec<String>,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetConfig::default(),
            train: TrainConfig::default(),
            smoothgrad: SmoothGradParams::default(),
            methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

/// Saliency map of `item` under one of the built-in methods. Gradient
/// methods explain the model's predicted class.
pub fn builtin_saliency(
    method: &str,
    model: Option<&Classifier>,
    item: &LabeledImage,
    mask: Option<&[bool]>,
    smoothgrad: &SmoothGradParams,
    seed: u64,
) -> Result<SaliencyMap, PipelineError> {
    let img = &item.image;
    let item_seed = seeds::derive(seed, seeds::SALIENCY, item_key(&item.id));
    match method {
        ORACLE_METHOD_ID => {
            let mask = mask.ok_or_else(|| SimError::NoMask(item.id.clone()))?;
            Ok(oracle_saliency(mask, img.width(), img.height(), &item.id)?)
        }
        RANDOM_METHOD_ID => generate_random_saliency(img.width(), img.height(), item_seed, &item.id)
            .map_err(|e| PipelineError::Saliency(e.to_string())),
        "vanilla" | "smoothgrad" => {
            let m = if method == "vanilla" {
                GradientMethod::Vanilla
            } else {
                GradientMethod::SmoothGrad(SmoothGradParams {
                    seed: item_seed,
                    ..smoothgrad.clone()
                })
            };
            let model = model.ok_or_else(|| PipelineError::NoModel(method.to_string()))?;
            let class = model.predict_class(img)?;
            Ok(gradient_saliency(model, img, &item.id, &m, class)?)
        }
        other => Err(PipelineError::UnknownMethod(other.to_string())),
    }
}

/// Stable 64-bit key for an image id (FNV-1a).
fn item_key(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Saliency maps keyed by method then image id.
pub type SaliencyStore = BTreeMap<String, BTreeMap<String, SaliencyMap>>;

pub struct Study {
    pub config: StudyConfig,
    pub data: SyntheticDataset,
    pub model: Classifier,
    pub report: TrainReport,
    pub test_accuracy: f64,
    /// Maps for every train and test image under every method.
    pub maps: SaliencyStore,
}

impl Study {
    pub fn build(config: StudyConfig) -> Result<Self, PipelineError> {
        let data = generate_synthetic_dataset(&config.dataset)?;
        let (model, report) = train(&data.train.items, data.train.n_classes(), &config.train)?;
        let test_accuracy = model.accuracy(&data.test.items)?;
        let mut maps = SaliencyStore::new();
        for method in &config.methods {
            let per_image = maps.entry(method.clone()).or_default();
            for item in data.train.items.iter().chain(&data.test.items) {
                let map = builtin_saliency(method, Some(&model), item, data.mask(&item.id), &config.smoothgrad, config.seed)?;
                per_image.insert(item.id.clone(), map);
            }
        }
        Ok(Self {
            config,
            data,
            model,
            report,
            test_accuracy,
            maps,
        })
    }

    /// Campaign assets over the test split.
    pub fn campaign_assets(&self) -> Result<Arc<CampaignAssets>, PipelineError> {
        Ok(Arc::new(CampaignAssets::build(
            &self.data.test,
            Some(&self.data.masks),
            &self.config.methods,
            |img, m| self.maps.get(m)?.get(img).cloned(),
        )?))
    }

    pub fn rankings(&self, method: &str) -> Result<BTreeMap<String, PixelRanking>, PipelineError> {
        let maps = self
            .maps
            .get(method)
            .ok_or_else(|| PipelineError::UnknownMethod(method.to_string()))?;
        Ok(maps.iter().map(|(id, m)| (id.clone(), rank_pixels(m))).collect())
    }
}
