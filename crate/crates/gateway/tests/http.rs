mod common;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use peekaboom_core::crowdgame::{Campaign, SharedCampaign};
use peekaboom_core::masking::{apply_mask, reveal_set};
use peekaboom_core::saliency::ImageTensor;
use peekaboom_core::simcrowd::{run_simulated_campaign, uniform_population, LocalBackend, SimKnowledge};
use peekaboom_core::storage::{read_log, EventLog};
use peekaboom_gateway::client::HttpBackend;

use common::*;

fn post(c: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = c.post(url).json(&body).send().unwrap();
    let s = r.status();
    (s, r.json().unwrap_or(Value::Null))
}

fn create(c: &Client, base: &str, id: &str) -> Value {
    let (s, v) = post(c, format!("{base}/api/v1/campaigns"), json!({ "config": campaign_config(id) }));
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

fn register(c: &Client, base: &str, id: &str) -> String {
    let (s, v) = post(c, format!("{base}/api/v1/workers"), json!({ "campaign_id": id }));
    assert_eq!(s, StatusCode::OK, "{v}");
    v["worker_token"].as_str().unwrap().to_string()
}

#[test]
fn health_and_unknown_route() {
    let dir = tempfile::tempdir().unwrap();
    let base = serve(tiny_store(dir.path()));
    let c = Client::new();
    let v: Value = c.get(format!("{base}/healthz")).send().unwrap().json().unwrap();
    assert_eq!(v, json!({"status": "ok"}));
    let r = c.get(format!("{base}/api/v1/nothing")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let v: Value = r.json().unwrap();
    assert_eq!(v["error"], "not_found");
}

#[test]
fn http_session_reproduces_in_process_events() {
    let dir = tempfile::tempdir().unwrap();
    let store = tiny_store(dir.path());
    let assets = assets(&store);
    let config = campaign_config("eq");
    let knowledge = SimKnowledge::new(&assets, &config.schedule).unwrap();
    let population = uniform_population(7, 0.1, 0.9, 0.2, 5).unwrap();

    let local = SharedCampaign::new(Campaign::create(config, assets, EventLog::in_memory(), logical()).unwrap());
    let want = run_simulated_campaign(&mut LocalBackend(local.clone()), &knowledge, &population).unwrap();

    let base = serve(store.clone());
    let c = Client::new();
    create(&c, &base, "eq");
    let mut http = HttpBackend::new(&base, "eq").unwrap();
    let got = run_simulated_campaign(&mut http, &knowledge, &population).unwrap();
    assert_eq!(got, want);

    let remote = read_log(&store.campaign_log("eq")).unwrap();
    let local = local.events();
    assert_eq!(remote.len(), local.len());
    for (r, l) in remote.iter().zip(&local) {
        assert_eq!(r.without_timestamp().to_line(), l.without_timestamp().to_line());
    }
}

#[test]
fn worker_flow_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = tiny_store(dir.path());
    let base = serve(store.clone());
    let c = Client::new();
    let created = create(&c, &base, "flow");
    assert_eq!(created["n_pairs"], 24);

    // Duplicate campaign, unknown campaign, missing token.
    let (s, _) = post(&c, format!("{base}/api/v1/campaigns"), json!({ "config": campaign_config("flow") }));
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = post(&c, format!("{base}/api/v1/workers"), json!({ "campaign_id": "nope" }));
    assert_eq!(s, StatusCode::NOT_FOUND);
    let r = c.get(format!("{base}/api/v1/trials/next")).send().unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = c.get(format!("{base}/api/v1/campaigns/flow/metrics")).send().unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    let token = register(&c, &base, "flow");
    assert_eq!(token.len(), 64);
    let other = register(&c, &base, "flow");
    assert_ne!(token, other);

    // Nothing assigned yet.
    let r = c.get(format!("{base}/api/v1/trials/next?token={token}")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NO_CONTENT);

    let r = c
        .post(format!("{base}/api/v1/campaigns/flow/assignments"))
        .bearer_auth(&token)
        .send()
        .unwrap();
    let v: Value = r.json().unwrap();
    assert_eq!(v["pairs"].as_array().unwrap().len(), 5);

    let task: Value = c
        .get(format!("{base}/api/v1/trials/next?token={token}"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let trial = task["trial_id"].as_u64().unwrap();
    assert_eq!(task["step"], 0);
    assert_eq!(task["choices"].as_array().unwrap().len(), 5);
    assert_eq!(task["idk_allowed"], true);

    // The image is the server-side masked render at 5% exposure.
    let png = B64.decode(task["image_png_b64"].as_str().unwrap()).unwrap();
    let shown = ImageTensor::from_png(&png).unwrap();
    let assets = assets(&store);
    let pair = task["pair"].as_u64().unwrap() as usize;
    let src = &assets.images[pair / 2].image;
    let reveal = reveal_set(&assets.rankings[pair], 0.05, src.n_pixels()).unwrap();
    let want = apply_mask(src, &reveal, &campaign_config("flow").ui_fill).unwrap();
    let err = shown.values().iter().zip(want.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 0.5 / 255.0 + 1e-12, "{err}");

    // Another worker cannot answer this trial.
    let answer_url = format!("{base}/api/v1/trials/{trial}/answers");
    let r = c
        .post(&answer_url)
        .bearer_auth(&other)
        .json(&json!({"step": 0, "choice": "idk"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::FORBIDDEN);

    let r = c
        .post(&answer_url)
        .bearer_auth(&token)
        .json(&json!({"step": 0, "choice": "maybe"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);

    // IDK advances; the retried submission returns the same reply and logs nothing.
    let log_len = || read_log(&store.campaign_log("flow")).unwrap().len();
    let first = c
        .post(&answer_url)
        .bearer_auth(&token)
        .json(&json!({"step": 0, "choice": "idk"}))
        .send()
        .unwrap();
    assert_eq!(first.status(), StatusCode::OK);
    let first: Value = first.json().unwrap();
    assert_eq!(first["outcome"], "advance");
    assert_eq!(first["next"]["step"], 1);
    let n = log_len();
    let again: Value = c
        .post(&answer_url)
        .bearer_auth(&token)
        .json(&json!({"step": 0, "choice": "idk"}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(again, first);
    assert_eq!(log_len(), n);

    // A different answer for the same step conflicts; a skipped step is stale.
    let label = task["choices"][0]["index"].as_u64().unwrap();
    let r = c
        .post(&answer_url)
        .bearer_auth(&token)
        .json(&json!({"step": 0, "choice": label}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let r = c
        .post(&answer_url)
        .bearer_auth(&token)
        .json(&json!({"step": 3, "choice": "idk"}))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);

    // IDK to the end exhausts the trial.
    let mut last = first;
    for step in 1..8 {
        last = c
            .post(&answer_url)
            .bearer_auth(&token)
            .json(&json!({"step": step, "choice": "idk"}))
            .send()
            .unwrap()
            .json()
            .unwrap();
    }
    assert_eq!(last["outcome"], "exhausted");
    assert!(last.get("next").is_none());

    let status: Value = c.get(format!("{base}/api/v1/campaigns/flow")).send().unwrap().json().unwrap();
    assert_eq!(status["completed_trials"], 1);
    // One finished trial leaves the other method without data.
    let r = c.get(format!("{base}/api/v1/campaigns/flow/metrics")).send().unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let v: Value = r.json().unwrap();
    assert!(v["message"].as_str().unwrap().contains("no completed trials for method"), "{v}");
}

#[test]
fn closed_campaign_refuses_assignments_and_restart_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let store = tiny_store(dir.path());
    let base = serve(store.clone());
    let c = Client::new();
    create(&c, &base, "full");
    let cfg = campaign_config("full");
    let knowledge = SimKnowledge::new(&assets(&store), &cfg.schedule).unwrap();
    let population = uniform_population(3, 0.2, 0.6, 0.1, 1).unwrap();
    let summary = run_simulated_campaign(&mut HttpBackend::new(&base, "full").unwrap(), &knowledge, &population).unwrap();
    assert_eq!(summary.trials, 24 * 3);

    let token = register(&c, &base, "full");
    let r = c
        .post(format!("{base}/api/v1/campaigns/full/assignments"))
        .bearer_auth(&token)
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    assert_eq!(r.json::<Value>().unwrap()["error"], "campaign_closed");

    // A second server over the same store picks the campaign up from its log.
    let before = read_log(&store.campaign_log("full")).unwrap();
    let base2 = serve(store.clone());
    let status: Value = c.get(format!("{base2}/api/v1/campaigns/full")).send().unwrap().json().unwrap();
    assert_eq!(status["closed"], true);
    assert_eq!(status["events"], before.len());
    let m1: Value = c.get(format!("{base}/api/v1/campaigns/full/metrics")).send().unwrap().json().unwrap();
    let m2: Value = c.get(format!("{base2}/api/v1/campaigns/full/metrics")).send().unwrap().json().unwrap();
    assert_eq!(m1, m2);
}
