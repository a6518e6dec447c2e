//! Blocking HTTP client of the worker API, used to drive simulated workers
//! against a running server.

use std::time::Duration;

use serde_json::{json, Value};

use peekaboom_core::crowdgame::{Choice, PairId};
use peekaboom_core::simcrowd::{BackendError, GameBackend, StepResult, StepView};

use crate::api::{AnswerBody, AnswerReply, TaskJson, WireChoice};

pub struct HttpBackend {
    http: reqwest::blocking::Client,
    base: String,
    campaign_id: String,
}

fn step_view(t: &TaskJson) -> StepView {
    StepView {
        trial_id: t.trial_id,
        pair: t.pair,
        step: t.step,
        options: t.choices.iter().map(|c| c.index).collect(),
    }
}

fn http_error(resp: reqwest::blocking::Response) -> BackendError {
    let status = resp.status();
    let body = resp.text().unwrap_or_default();
    format!("HTTP {status}: {body}").into()
}

impl HttpBackend {
    pub fn new(base: &str, campaign_id: &str) -> Result<Self, BackendError> {
        Ok(Self {
            http: reqwest::blocking::Client::builder().timeout(Duration::from_secs(30)).build()?,
            base: base.trim_end_matches('/').to_string(),
            campaign_id: campaign_id.to_string(),
        })
    }
}

/// Worker handles are bearer tokens.
impl GameBackend for HttpBackend {
    fn register(&mut self) -> Result<String, BackendError> {
        let resp = self
            .http
            .post(format!("{}/api/v1/workers", self.base))
            .json(&json!({"campaign_id": self.campaign_id}))
            .send()?;
        if !resp.status().is_success() {
            return Err(http_error(resp));
        }
        let v: Value = resp.json()?;
        v["worker_token"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "registration reply lacks worker_token".into())
    }

    fn assign(&mut self, worker: &str) -> Result<Option<Vec<PairId>>, BackendError> {
        let resp = self
            .http
            .post(format!("{}/api/v1/campaigns/{}/assignments", self.base, self.campaign_id))
            .bearer_auth(worker)
            .send()?;
        if resp.status() == reqwest::StatusCode::CONFLICT {
            let v: Value = resp.json()?;
            if v["error"] == "campaign_closed" {
                return Ok(None);
            }
            return Err(format!("assignment refused: {v}").into());
        }
        if !resp.status().is_success() {
            return Err(http_error(resp));
        }
        let v: Value = resp.json()?;
        Ok(Some(serde_json::from_value(v["pairs"].clone())?))
    }

    fn next(&mut self, worker: &str) -> Result<Option<StepView>, BackendError> {
        let resp = self
            .http
            .get(format!("{}/api/v1/trials/next", self.base))
            .bearer_auth(worker)
            .send()?;
        if resp.status() == reqwest::StatusCode::NO_CONTENT {
            return Ok(None);
        }
        if !resp.status().is_success() {
            return Err(http_error(resp));
        }
        let t: TaskJson = resp.json()?;
        Ok(Some(step_view(&t)))
    }

    fn answer(&mut self, worker: &str, trial_id: u64, step: usize, choice: Choice) -> Result<StepResult, BackendError> {
        let resp = self
            .http
            .post(format!("{}/api/v1/trials/{trial_id}/answers", self.base))
            .bearer_auth(worker)
            .json(&AnswerBody {
                step,
                choice: WireChoice::from_choice(choice),
            })
            .send()?;
        if !resp.status().is_success() {
            return Err(http_error(resp));
        }
        let r: AnswerReply = resp.json()?;
        match (r.outcome.as_str(), r.next) {
            ("advance", Some(t)) => Ok(StepResult::Advance(step_view(&t))),
            ("correct" | "exhausted", _) => Ok(StepResult::Done),
            (other, _) => Err(format!("unexpected outcome {other:?}").into()),
        }
    }
}
