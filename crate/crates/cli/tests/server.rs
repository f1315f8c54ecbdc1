use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hhlink::server::router;
use hhlink_core::adjudication::Adjudicator;
use hhlink_core::synth::bundled_roster;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(n: usize, log: Option<&std::path::Path>) -> Router {
    let profiles = bundled_roster(n, 2);
    let adj = match log {
        Some(p) => Adjudicator::with_log(profiles, 5, p).unwrap(),
        None => Adjudicator::new(profiles, 5).unwrap(),
    };
    router(Arc::new(Mutex::new(adj)), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, String) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(body.to_vec()).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: &Value) -> (StatusCode, Value) {
    let req = Request::post("/api/decision")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, text) = call(app, req).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn candidate_ids(task: &Value) -> Vec<String> {
    task["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["profile"]["profile_id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn task_decision_and_conflicts() {
    let app = app(50, None);
    let (status, body) = get(&app, "/api/next-task?session=alice").await;
    assert_eq!(status, StatusCode::OK);
    let task: Value = serde_json::from_str(&body).unwrap();
    let anchor = task["anchor"]["profile_id"].as_str().unwrap().to_string();
    let ids = candidate_ids(&task);
    assert_eq!(ids.len(), 10);
    assert!(task["candidates"][0]["field_distances"]["first_name"].is_u64());

    // the same session gets the same task back while it holds the lease
    let (_, again) = get(&app, "/api/next-task?session=alice").await;
    assert_eq!(serde_json::from_str::<Value>(&again).unwrap()["anchor"], task["anchor"]);
    let (_, other) = get(&app, "/api/next-task?session=bob").await;
    let other: Value = serde_json::from_str(&other).unwrap();
    assert_ne!(other["anchor"], task["anchor"]);

    let decision = json!({"anchor_id": anchor, "accepted": [ids[0]], "rejected": ids[1..]});
    let (status, body) = post(&app, &decision).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
    assert_eq!(post(&app, &decision).await.0, StatusCode::OK);

    let flipped = json!({"anchor_id": anchor, "accepted": [], "rejected": ids});
    let (status, body) = post(&app, &flipped).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "E_CONFLICT");

    let bad = json!({"anchor_id": other["anchor"]["profile_id"], "accepted": ["nobody"], "rejected": []});
    let (status, body) = post(&app, &bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "E_INVALID_IDS");
    let unserved = json!({"anchor_id": "zzz", "accepted": [], "rejected": []});
    assert_eq!(post(&app, &unserved).await.1["error"], "E_UNKNOWN_TASK");
    assert_eq!(get(&app, "/api/next-task?session=").await.0, StatusCode::BAD_REQUEST);

    let (status, stats) = get(&app, "/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    let stats: Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["decisions"], 1);
    assert_eq!(stats["accepted"], 1);
    assert_eq!(stats["profiles"], 50);

    let resp = app.clone().oneshot(Request::get("/api/export").body(Body::empty()).unwrap()).await.unwrap();
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/csv"));
    let csv = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    // only adjudicated profiles are exported: the anchor and its accepted candidate
    assert_eq!(csv.lines().count(), 3);
}

#[tokio::test]
async fn rejecting_everything_yields_singletons() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("decisions.ndjson");
    let app = app(1000, Some(&log));
    let mut served = 0;
    loop {
        let (status, body) = get(&app, "/api/next-task?session=s1").await;
        if status == StatusCode::NOT_FOUND {
            assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"], "E_EXHAUSTED");
            break;
        }
        let task: Value = serde_json::from_str(&body).unwrap();
        let d = json!({"anchor_id": task["anchor"]["profile_id"], "accepted": [], "rejected": candidate_ids(&task)});
        assert_eq!(post(&app, &d).await.0, StatusCode::OK);
        served += 1;
    }
    assert_eq!(served, 1000);
    let (_, csv) = get(&app, "/api/export").await;
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("cluster_id,profile_id"));
    assert!(rows.all(|r| {
        let (c, p) = r.split_once(',').unwrap();
        p == c
    }));

    // a restart replays the log and stays exhausted
    let restarted = app_with_log(&log);
    assert_eq!(get(&restarted, "/api/next-task?session=s2").await.0, StatusCode::NOT_FOUND);
    assert!(log.with_extension("ndjson.snapshot.json").exists());
}

fn app_with_log(log: &std::path::Path) -> Router {
    app(1000, Some(log))
}
