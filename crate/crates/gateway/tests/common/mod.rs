#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use peekaboom_core::crowdgame::{CampaignAssets, CampaignConfig};
use peekaboom_core::saliency::generate_random_saliency;
use peekaboom_core::simcrowd::{generate_synthetic_dataset, oracle_saliency, SyntheticDatasetConfig};
use peekaboom_core::storage::{Clock, Durability, LogicalClock};
use peekaboom_gateway::api::{router, AppState};
use peekaboom_gateway::store::Store;

pub const DATASET: &str = "tiny";
pub const METHODS: [&str; 2] = ["oracle", "random"];

pub fn tiny_config() -> SyntheticDatasetConfig {
    SyntheticDatasetConfig {
        width: 12,
        height: 12,
        classes: 6,
        images_per_class: 8,
        seed: 3,
        ..Default::default()
    }
}

/// A store holding the tiny dataset with oracle and random maps.
pub fn tiny_store(dir: &std::path::Path) -> Store {
    let store = Store::new(dir);
    let data = generate_synthetic_dataset(&tiny_config()).unwrap();
    store.save_dataset(DATASET, &data).unwrap();
    for (k, item) in data.items().enumerate() {
        let (w, h) = (item.image.width(), item.image.height());
        store
            .save_saliency(DATASET, &oracle_saliency(data.mask(&item.id).unwrap(), w, h, &item.id).unwrap())
            .unwrap();
        store
            .save_saliency(DATASET, &generate_random_saliency(w, h, k as u64, &item.id).unwrap())
            .unwrap();
    }
    store
}

pub fn campaign_config(id: &str) -> CampaignConfig {
    CampaignConfig {
        quota: 3,
        pairs_per_worker: 5,
        seed: 11,
        ..CampaignConfig::new(id, DATASET, METHODS.iter().map(|s| s.to_string()).collect())
    }
}

pub fn assets(store: &Store) -> Arc<CampaignAssets> {
    let methods: Vec<String> = METHODS.iter().map(|s| s.to_string()).collect();
    store
        .assets(DATASET, &methods, None, peekaboom_core::dataset::Split::Test)
        .unwrap()
}

pub fn logical() -> Box<dyn Clock> {
    Box::new(LogicalClock::starting_at(0))
}

/// Serves `store` on an ephemeral port; returns the base URL.
pub fn serve(store: Store) -> String {
    let state = AppState::with_clock(store, Duration::from_secs(3600), Durability::Flush, Arc::new(logical)).unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(Arc::new(state))).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}
