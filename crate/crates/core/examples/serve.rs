//! Drive the REST service through a scripted session in-process, or run it
//! on a socket with `--listen`.
//!
//! ```text
//! cargo run --example serve
//! cargo run --example serve -- --listen 127.0.0.1:8080
//! ```

use std::path::Path;

use annofuse::api::{router, serve, AppState, ServeConfig};
use annofuse::ingest::{load_descriptors, load_fusion_config_file};
use annofuse::model::UserRegistry;
use annofuse::workbench::{SystemClock, Workbench};
use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, user: &str, content_type: &str, body: Vec<u8>) -> (u16, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("x-user-id", user)
        .header("content-type", content_type)
        .body(Body::from(body))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status().as_u16();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, user: &str, body: Value) -> Value {
    let (status, bytes) = call(app, method, uri, user, "application/json", body.to_string().into_bytes()).await;
    let value: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} as {user} -> {status}");
    value
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/clinic");
    let args: Vec<String> = std::env::args().collect();
    if let Some(i) = args.iter().position(|a| a == "--listen") {
        let dir = std::env::temp_dir().join("annofuse-serve");
        println!("serving {} until Ctrl-C", dir.display());
        serve(ServeConfig {
            addr: args.get(i + 1).ok_or("--listen needs an address")?.parse()?,
            data_dir: dir,
            hierarchy: Some(fixtures.join("hierarchy.json")),
            users: fixtures.join("users.json"),
        })
        .await?;
        return Ok(());
    }

    let users = UserRegistry::load(&fixtures.join("users.json"))?;
    let wb = Workbench::in_memory(users, load_fusion_config_file(&fixtures.join("hierarchy.json"))?, Box::new(SystemClock));
    let app = router(AppState::new(wb));

    for mut d in load_descriptors(&fixtures.join("sources.json"))? {
        let csv = std::fs::read_to_string(d.path.take().expect("fixture descriptors name a file"))?;
        json_call(&app, "POST", "/api/sources", "ana", json!({ "descriptor": d, "csv": csv })).await;
    }
    let fused = json_call(&app, "POST", "/api/fuse", "ana", Value::Null).await;
    println!("  {}", fused["summary"]);

    let cells = json_call(&app, "GET", "/api/cells?entity=P1&dimension=visual_acuity", "ana", Value::Null).await;
    let refs: Vec<Value> = cells.as_array().unwrap().iter().map(|c| c["cell"].clone()).collect();

    let boundary = "annofuse-example";
    let mut form = String::new();
    form += &format!("--{boundary}\r\nContent-Disposition: form-data; name=\"text\"\r\n\r\nacuity improves\r\n");
    form += &format!("--{boundary}\r\nContent-Disposition: form-data; name=\"cells\"\r\n\r\n{}\r\n", Value::from(refs));
    let mut body = form.into_bytes();
    body.extend_from_slice(
        format!("--{boundary}\r\nContent-Disposition: form-data; name=\"snapshot\"; filename=\"chart.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(b"\x89PNG\r\n\x1a\nchart");
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let (status, created) = call(&app, "POST", "/api/findings", "ana", &format!("multipart/form-data; boundary={boundary}"), body).await;
    let created: Value = serde_json::from_slice(&created)?;
    println!("POST /api/findings as ana -> {status}");
    let id = created["id"].as_u64().unwrap();

    json_call(&app, "POST", &format!("/api/annotations/{id}/comments"), "eve", json!({ "text": "consistent with the letter" })).await;
    let refused = json_call(&app, "POST", &format!("/api/findings/{id}/votes"), "ana", json!({ "verdict": "confirm" })).await;
    println!("  {}", refused["code"]);
    let vote = json_call(&app, "POST", &format!("/api/findings/{id}/votes"), "eve", json!({ "verdict": "confirm" })).await;
    println!("  state now {}", vote["state"]);

    let feed = json_call(&app, "GET", "/api/feed", "ana", Value::Null).await;
    println!("{}", serde_json::to_string_pretty(&feed[0])?);
    Ok(())
}
