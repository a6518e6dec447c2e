//! On-disk layout shared by the CLI and the server.
//!
//! ```text
//! <root>/datasets/<dataset_id>/manifest.json, images/, masks/
//! <root>/models/<model_id>.json
//! <root>/saliency/<dataset_id>/<method>/<image_id>.salm
//! <root>/campaigns/<campaign_id>.events.jsonl
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use peekaboom_core::classifier::{Classifier, ClassifierParams};
use peekaboom_core::crowdgame::{Campaign, CampaignAssets, CampaignConfig};
use peekaboom_core::dataset::{read_dataset_dir, write_dataset_dir, Dataset, Manifest, Split, SplitDataset};
use peekaboom_core::saliency::SaliencyMap;
use peekaboom_core::salm;
use peekaboom_core::storage::{parse_log, read_log, replay, Clock, Durability, EventBody, EventLog};

pub const STORE_ENV: &str = "PEEKABOOM_STORE_DIR";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn safe_name(kind: &str, name: &str) -> Result<()> {
    if name.is_empty() || name.starts_with('.') || name.contains(['/', '\\']) {
        bail!("invalid {kind} id {name:?}");
    }
    Ok(())
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, dataset_id: &str) -> PathBuf {
        self.root.join("datasets").join(dataset_id)
    }

    pub fn model_path(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{model_id}.json"))
    }

    pub fn saliency_dir(&self, dataset_id: &str, method: &str) -> PathBuf {
        self.root.join("saliency").join(dataset_id).join(method)
    }

    pub fn campaigns_dir(&self) -> PathBuf {
        self.root.join("campaigns")
    }

    pub fn campaign_log(&self, campaign_id: &str) -> PathBuf {
        self.campaigns_dir().join(EventLog::file_name(campaign_id))
    }

    pub fn save_dataset(&self, dataset_id: &str, data: &SplitDataset) -> Result<()> {
        safe_name("dataset", dataset_id)?;
        let dir = self.dataset_dir(dataset_id);
        if dir.join("manifest.json").exists() {
            bail!("dataset {dataset_id} already exists");
        }
        write_dataset_dir(&dir, dataset_id, data)?;
        Ok(())
    }

    pub fn load_dataset(&self, dataset_id: &str) -> Result<(Manifest, SplitDataset)> {
        safe_name("dataset", dataset_id)?;
        read_dataset_dir(&self.dataset_dir(dataset_id)).with_context(|| format!("loading dataset {dataset_id}"))
    }

    pub fn save_model(&self, model_id: &str, model: &Classifier) -> Result<()> {
        safe_name("model", model_id)?;
        let path = self.model_path(model_id);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(&path, serde_json::to_string(&model.to_params())?)?;
        Ok(())
    }

    pub fn load_model(&self, model_id: &str) -> Result<Classifier> {
        safe_name("model", model_id)?;
        let path = self.model_path(model_id);
        let text = fs::read_to_string(&path).with_context(|| format!("reading model {}", path.display()))?;
        let params: ClassifierParams = serde_json::from_str(&text)?;
        Ok(Classifier::from_params(params)?)
    }

    pub fn save_saliency(&self, dataset_id: &str, map: &SaliencyMap) -> Result<()> {
        safe_name("method", &map.method_id)?;
        let dir = self.saliency_dir(dataset_id, &map.method_id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(format!("{}.salm", map.image_id)), salm::encode(map))?;
        Ok(())
    }

    pub fn load_saliency(&self, dataset_id: &str, method: &str, image_id: &str) -> Result<SaliencyMap> {
        let path = self.saliency_dir(dataset_id, method).join(format!("{image_id}.salm"));
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(salm::decode(&bytes)?)
    }

    /// Campaign assets over `images` (ids in campaign order).
    pub fn assets(&self, dataset_id: &str, methods: &[String], images: Option<&[String]>, split: Split) -> Result<Arc<CampaignAssets>> {
        let (_, data) = self.load_dataset(dataset_id)?;
        let chosen = match images {
            None => data.split(split).clone(),
            Some(ids) => {
                let all: BTreeMap<&str, _> = data.items().map(|it| (it.id.as_str(), it)).collect();
                let items = ids
                    .iter()
                    .map(|id| all.get(id.as_str()).map(|it| (*it).clone()).ok_or_else(|| anyhow!("image {id} missing from dataset {dataset_id}")))
                    .collect::<Result<Vec<_>>>()?;
                Dataset {
                    class_names: data.class_names().to_vec(),
                    items,
                }
            }
        };
        let mut missing = None;
        let assets = CampaignAssets::build(&chosen, Some(&data.masks), methods, |img, m| {
            match self.load_saliency(dataset_id, m, img) {
                Ok(map) => Some(map),
                Err(e) => {
                    missing.get_or_insert(e);
                    None
                }
            }
        });
        match assets {
            Ok(a) => Ok(Arc::new(a)),
            Err(e) => Err(match missing {
                Some(io) => anyhow!("{e} ({io:#})"),
                None => e.into(),
            }),
        }
    }

    pub fn create_campaign(
        &self,
        config: CampaignConfig,
        split: Split,
        clock: Box<dyn Clock>,
        durability: Durability,
    ) -> Result<Campaign> {
        safe_name("campaign", &config.campaign_id)?;
        let assets = self.assets(&config.dataset_id, &config.methods, None, split)?;
        let n_classes = assets.class_names.len();
        config.validate(n_classes)?;
        fs::create_dir_all(self.campaigns_dir())?;
        let log = EventLog::create(&self.campaign_log(&config.campaign_id), durability)?;
        Ok(Campaign::create(config, assets, log, clock)?)
    }

    /// The logged config of a campaign and its assets rebuilt from the store.
    pub fn campaign_assets(&self, campaign_id: &str) -> Result<(CampaignConfig, Arc<CampaignAssets>)> {
        safe_name("campaign", campaign_id)?;
        let path = self.campaign_log(campaign_id);
        let events = match read_log(&path) {
            Ok(ev) => ev,
            // A server may be appending; the first line is all that is needed.
            Err(_) => {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                parse_log(&text).unwrap_or_else(|(partial, _)| partial)
            }
        };
        let (config, images) = match events.first().map(|e| &e.body) {
            Some(EventBody::CampaignCreated { config, images, .. }) => (config.clone(), images.clone()),
            _ => bail!("campaign {campaign_id} log does not start with campaign_created"),
        };
        let ids: Vec<String> = images.into_iter().map(|i| i.image_id).collect();
        let assets = self.assets(&config.dataset_id, &config.methods, Some(&ids), Split::Test)?;
        Ok((config, assets))
    }

    pub fn open_campaign(&self, campaign_id: &str, clock: Box<dyn Clock>, durability: Durability) -> Result<Campaign> {
        let (_, assets) = self.campaign_assets(campaign_id)?;
        let log = EventLog::open(&self.campaign_log(campaign_id), durability)?;
        Ok(Campaign::resume(log, assets, clock)?)
    }

    /// Campaign ids with a log in the store, sorted.
    pub fn campaign_ids(&self) -> Result<Vec<String>> {
        let dir = self.campaigns_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".events.jsonl") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Replays a stored log without loading assets.
    pub fn campaign_state(&self, campaign_id: &str) -> Result<peekaboom_core::crowdgame::CampaignState> {
        let events = read_log(&self.campaign_log(campaign_id))?;
        Ok(replay(&events)?)
    }
}
