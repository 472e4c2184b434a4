mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chainflow_core::chain::Block;
use chainflow_core::engine::WorkflowEngine;
use chainflow_core::petrinet::fixtures::{deferred_choice, seq};
use chainflow_core::worklist::WorkStatus;
use chainflow_node::api;
use common::{config, request, spawn, until};
use http_body_util::BodyExt;
use serde_json::{json, Value as Json};
use tower::ServiceExt;
use uuid::Uuid;

#[tokio::test]
async fn fresh_node_reports_genesis_head() {
    let d = spawn(config("n1", false)).await;
    let (status, head) = request(&d.handle, "GET", "/chain/head", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(head["height"], 0);
    assert_eq!(head["hash"], json!(Block::genesis("testnet").block_hash));
    assert_eq!(head["design"], "actions");
    let (_, blocks) = request(&d.handle, "GET", "/chain/blocks", None).await;
    assert_eq!(blocks, json!([]));
}

#[tokio::test]
async fn case_runs_to_completion_through_the_api() {
    let d = spawn(config("n1", true)).await;
    let (status, body) = request(&d.handle, "POST", "/models", Some(json!(seq("n1", "n1")))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{body}");
    assert!(until(&d.handle, 10, |c| c.node.visible().model("SEQ").is_some()).await);
    let (_, models) = request(&d.handle, "GET", "/models", None).await;
    assert_eq!(models[0]["name"], "SEQ");
    assert_eq!(models[0]["confirmed"], true);

    let (status, launched) = request(&d.handle, "POST", "/cases", Some(json!({"model": "SEQ"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{launched}");
    let case: Uuid = serde_json::from_value(launched["case_id"].clone()).unwrap();

    for (t, x) in [("A", 3), ("B", 7)] {
        assert!(until(&d.handle, 10, move |c| c.node.worklist().find(case, t).is_some()).await, "{t} never listed");
        let (_, view) = request(&d.handle, "GET", "/worklist", None).await;
        let item = view["items"].as_array().unwrap().iter().find(|i| i["transition"] == t).unwrap()["id"].as_str().unwrap().to_string();
        let uri = format!("/worklist/{item}/complete");
        let (status, body) = request(&d.handle, "POST", &uri, Some(json!({"outputs": {"x": {"integer": x}}}))).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{body}");
        let id = item.clone();
        assert!(
            until(&d.handle, 10, move |c| c.node.worklist().archive().iter().any(|i| i.id == id && i.status == WorkStatus::Confirmed)).await,
            "{t} never confirmed"
        );
    }
    let (_, got) = request(&d.handle, "GET", &format!("/cases/{case}"), None).await;
    assert_eq!(got["confirmed"]["marking"], json!({"p2": 1}));
    assert_eq!(got["confirmed"]["values"]["x"], json!({"integer": 7}));
}

#[tokio::test]
async fn deferred_choice_loser_gets_409_with_reason() {
    let d = spawn(config("n1", true)).await;
    request(&d.handle, "POST", "/models", Some(json!(deferred_choice("n1", "n1", "n1")))).await;
    assert!(until(&d.handle, 10, |c| c.node.visible().model("DC").is_some()).await);
    let (_, launched) = request(&d.handle, "POST", "/cases", Some(json!({"model": "DC"}))).await;
    let case: Uuid = serde_json::from_value(launched["case_id"].clone()).unwrap();
    assert!(until(&d.handle, 10, move |c| c.node.worklist().find(case, "A").is_some() && c.node.worklist().find(case, "B").is_some()).await);

    let (a, b) = d
        .handle
        .call(move |c| {
            let w = c.node.worklist();
            (w.find(case, "A").unwrap().id.clone(), w.find(case, "B").unwrap().id.clone())
        })
        .await
        .unwrap();
    let outputs = json!({"outputs": {"choice": {"string": "a"}}});
    let (status, _) = request(&d.handle, "POST", &format!("/worklist/{a}/complete"), Some(outputs)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, err) = request(&d.handle, "POST", &format!("/worklist/{b}/complete"), Some(json!({"outputs": {"choice": {"string": "b"}}}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");
    assert!(err["reason"].as_str().unwrap().contains("`B` is not enabled"), "{err}");
    assert!(err["code"].is_string());

    // The losing item leaves the worklist once the winner confirms.
    let bid = b.clone();
    assert!(until(&d.handle, 10, move |c| c.node.worklist().item(&bid).is_none()).await, "loser never withdrawn");
}

#[tokio::test]
async fn errors_use_code_and_reason() {
    let d = spawn(config("n1", false)).await;
    let router = api::router(d.handle.clone());
    let req = Request::post("/models").body(Body::from("{not json")).unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Json = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(body["code"], "malformed");

    let (status, body) = request(&d.handle, "POST", "/cases", Some(json!({"model": "NOPE"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "{body}");
    let (status, body) = request(&d.handle, "POST", "/worklist/w99/complete", Some(json!({"outputs": {}}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "unknown_item");
    let (status, _) = request(&d.handle, "GET", "/cases/not-a-uuid", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = request(&d.handle, "GET", "/chain/blocks?from=zz", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = request(&d.handle, "POST", "/cases", Some(json!({"model": "SEQ", "extra": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["reason"].as_str().unwrap().contains("extra"));
}

#[tokio::test]
async fn event_stream_pushes_named_events() {
    let d = spawn(config("n1", true)).await;
    let resp = api::router(d.handle.clone()).oneshot(Request::get("/events").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    request(&d.handle, "POST", "/models", Some(json!(seq("n1", "n1")))).await;

    let mut text = String::new();
    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    while !(text.contains("event: TxAccepted") && text.contains("event: HeadAdvanced")) {
        let frame = tokio::time::timeout_at(deadline, body.frame()).await.expect("events arrive").unwrap().unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
    }
    let tx_line = text.lines().skip_while(|l| *l != "event: TxAccepted").find(|l| l.starts_with("data: ")).unwrap();
    let data: Json = serde_json::from_str(&tx_line["data: ".len()..]).unwrap();
    assert_eq!(data["kind"], "ModelUpdate");
    assert!(text.find("event: TxAccepted").unwrap() < text.find("event: HeadAdvanced").unwrap());
}

#[tokio::test]
async fn pending_panel_shows_depth_progress() {
    let mut c = config("n1", false);
    c.confirmation_depth = 3;
    let d = spawn(c).await;
    request(&d.handle, "POST", "/models", Some(json!(seq("n1", "n1")))).await;
    let (_, pending) = request(&d.handle, "GET", "/transactions/pending", None).await;
    assert_eq!(pending[0]["stage"], "pending");
    assert_eq!(pending[0]["required_depth"], 3);
    d.handle.call(|c| c.node.mine_block().unwrap()).await.unwrap();
    let (_, pending) = request(&d.handle, "GET", "/transactions/pending", None).await;
    assert_eq!(pending[0]["stage"], "mined");
    assert_eq!(pending[0]["depth"], 0);
}

#[tokio::test]
async fn block_log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config("n1", false);
    c.data_dir = Some(dir.path().to_path_buf());
    let d = spawn(c.clone()).await;
    request(&d.handle, "POST", "/models", Some(json!(seq("n1", "n1")))).await;
    let head = d
        .handle
        .call(|c| {
            for _ in 0..3 {
                c.node.mine_block().unwrap();
            }
            c.node.chain().head()
        })
        .await
        .unwrap();
    // Give the loop a turn to flush the last block.
    d.handle.call(|_| ()).await.unwrap();
    d.shutdown();

    let d = spawn(c).await;
    let (_, got) = request(&d.handle, "GET", "/chain/head", None).await;
    assert_eq!(got["hash"], json!(head));
    assert_eq!(got["height"], 3);
    let (_, models) = request(&d.handle, "GET", "/models", None).await;
    assert_eq!(models[0]["name"], "SEQ");
}
