//! Client for external classifier and saliency plugins.
//!
//! Wire protocol, JSON over HTTP:
//!
//! ```text
//! POST {endpoint}/v1/classify  {"images": [<PNG base64>...], "model": <id>}
//!                           -> {"scores": [[<C floats>]...]}
//! POST {endpoint}/v1/saliency  {"image": <PNG base64>, "method": <id>, "class_index": <n>}
//!                           -> {"salm_b64": <SALM bytes base64>}
//! ```
//!
//! A plugin that does not support a method answers 4xx with
//! `{"error": "unsupported_method"}`.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::autoeval::{AutoEvalError, ScoreModel};
use crate::classifier::argmax;
use crate::saliency::{ImageTensor, SaliencyMap};
use crate::salm;

pub const PLUGIN_METHODS: [&str; 4] = ["gradcam", "guided_bp", "smoothgrad", "vanilla"];

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("image {index}: expected {expected} scores, got {got}")]
    ScoreLength { index: usize, expected: usize, got: usize },
    #[error("sent {sent} images, received {received} score vectors")]
    BatchLength { sent: usize, received: usize },
    #[error("unsupported saliency method {0}")]
    UnsupportedMethod(String),
    #[error("saliency map is {map_w}x{map_h}, image is {image_w}x{image_h}")]
    DimensionMismatch {
        map_w: usize,
        map_h: usize,
        image_w: usize,
        image_h: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("image encoding: {0}")]
    Image(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub images: Vec<String>,
    pub model: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyRequest {
    pub image: String,
    pub method: String,
    pub class_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub salm_b64: String,
}

pub fn encode_png_b64(image: &ImageTensor) -> Result<String, RemoteError> {
    Ok(B64.encode(image.to_png().map_err(|e| RemoteError::Image(e.to_string()))?))
}

#[derive(Debug, Clone)]
pub struct PluginClient {
    http: reqwest::blocking::Client,
    endpoint: String,
}

impl PluginClient {
    pub fn new(endpoint: &str, timeout: Duration) -> Result<Self, RemoteError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.trim_end_matches('/').to_string(),
        })
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<(u16, String), RemoteError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.endpoint))
            .json(body)
            .send()
            .map_err(|e| RemoteError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| RemoteError::Transport(e.to_string()))?;
        Ok((status, text))
    }

    /// One score vector per image, in request order. Any malformed entry
    /// fails the whole batch.
    pub fn classify(&self, images: &[ImageTensor], model: &str, n_classes: usize) -> Result<Vec<Vec<f64>>, RemoteError> {
        if images.is_empty() {
            return Err(RemoteError::EmptyBatch);
        }
        let req = ClassifyRequest {
            images: images.iter().map(encode_png_b64).collect::<Result<_, _>>()?,
            model: model.to_string(),
        };
        let (status, text) = self.post("/v1/classify", &json!(req))?;
        if !(200..300).contains(&status) {
            return Err(RemoteError::Protocol(format!("status {status}: {text}")));
        }
        let resp: ClassifyResponse = serde_json::from_str(&text).map_err(|e| RemoteError::Protocol(e.to_string()))?;
        if resp.scores.len() != images.len() {
            return Err(RemoteError::BatchLength {
                sent: images.len(),
                received: resp.scores.len(),
            });
        }
        for (index, s) in resp.scores.iter().enumerate() {
            if s.len() != n_classes {
                return Err(RemoteError::ScoreLength {
                    index,
                    expected: n_classes,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(RemoteError::Protocol(format!("non-finite score for image {index}")));
            }
        }
        Ok(resp.scores)
    }

    /// A full-resolution saliency map computed by the plugin.
    pub fn saliency(&self, image: &ImageTensor, method: &str, class_index: usize) -> Result<SaliencyMap, RemoteError> {
        if !PLUGIN_METHODS.contains(&method) {
            return Err(RemoteError::UnsupportedMethod(method.to_string()));
        }
        let req = SaliencyRequest {
            image: encode_png_b64(image)?,
            method: method.to_string(),
            class_index,
        };
        let (status, text) = self.post("/v1/saliency", &json!(req))?;
        if (400..500).contains(&status) {
            let unsupported = serde_json::from_str::<serde_json::Value>(&text)
                .ok()
                .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(|e| e == "unsupported_method"))
                .unwrap_or(false);
            if unsupported {
                return Err(RemoteError::UnsupportedMethod(method.to_string()));
            }
        }
        if !(200..300).contains(&status) {
            return Err(RemoteError::Protocol(format!("status {status}: {text}")));
        }
        let resp: SaliencyResponse = serde_json::from_str(&text).map_err(|e| RemoteError::Protocol(e.to_string()))?;
        let bytes = B64
            .decode(resp.salm_b64)
            .map_err(|e| RemoteError::Protocol(e.to_string()))?;
        let map = salm::decode(&bytes).map_err(|e| RemoteError::Protocol(e.to_string()))?;
        if map.width() != image.width() || map.height() != image.height() {
            return Err(RemoteError::DimensionMismatch {
                map_w: map.width(),
                map_h: map.height(),
                image_w: image.width(),
                image_h: image.height(),
            });
        }
        Ok(map)
    }
}

/// A plugin model used as the fixed classifier of ROAE/KAE runs.
pub struct RemoteClassifier {
    pub client: PluginClient,
    pub model: String,
    pub n_classes: usize,
    pub batch_size: usize,
}

impl ScoreModel for RemoteClassifier {
    fn classify(&self, images: &[ImageTensor]) -> Result<Vec<usize>, AutoEvalError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(self.batch_size.max(1)) {
            let scores = self
                .client
                .classify(chunk, &self.model, self.n_classes)
                .map_err(|e| AutoEvalError::Remote(e.to_string()))?;
            out.extend(scores.iter().map(|s| argmax(s)));
        }
        Ok(out)
    }
}
