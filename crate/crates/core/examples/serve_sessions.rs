//! Starts the session service, drives one stepped session over HTTP and
//! prints the event stream.
//!
//! cargo run --release --example serve_sessions

use std::sync::Arc;

use futures::StreamExt;
use seqcorr::dstar::DStarLibrary;
use seqcorr::rewards::Scenario;
use seqcorr::service::{serve, AppState, ServiceConfig};
use seqcorr::sim::Engine;
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let scenario = Scenario::load(format!("{dir}/two_agent.json"))?;
    let library = DStarLibrary::load(format!("{dir}/two_agent.dstar.json"))?;
    let engine = Arc::new(Engine::with_defaults(scenario, Some(library))?);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(serve(listener, AppState::new(vec![engine], ServiceConfig::default())));
    println!("listening on {base}");

    let http = reqwest::Client::new();
    let created: Value = http
        .post(format!("{base}/sessions"))
        .json(&json!({"scenario_id": "two_agent", "model": "sequence", "seed": 3}))
        .send()
        .await?
        .json()
        .await?;
    let id = created["session_id"].as_str().unwrap().to_string();
    println!("session {id}, belief {}", created["snapshot"]["belief"]);

    let mut events = http.get(format!("{base}/sessions/{id}/events")).send().await?.bytes_stream();
    let reader = tokio::spawn(async move {
        let mut buf = String::new();
        while let Some(Ok(chunk)) = events.next().await {
            buf.push_str(&String::from_utf8_lossy(&chunk));
            while let Some(end) = buf.find("\n\n") {
                let frame: String = buf.drain(..end + 2).collect();
                if let Some(data) = frame.lines().find_map(|l| l.strip_prefix("data:")) {
                    let e: Value = serde_json::from_str(data.trim()).unwrap();
                    println!("event {:>2} {}", e["seq"], e["snapshot"]["last_event_kind"]);
                    if e["snapshot"]["last_event_kind"] == "final" {
                        return;
                    }
                }
            }
        }
    });

    http.post(format!("{base}/sessions/{id}/step")).send().await?;
    let r: Value = http
        .post(format!("{base}/sessions/{id}/corrections"))
        .json(&json!({"timestep": 4, "agent": 1, "force": [-0.6, 0.6]}))
        .send()
        .await?
        .json()
        .await?;
    println!("after correction, belief {}", r["snapshot"]["belief"]);
    loop {
        let s: Value = http.post(format!("{base}/sessions/{id}/step")).send().await?.json().await?;
        if s["done"] == true || s.get("error").is_some() {
            break;
        }
    }
    let ended: Value = http.delete(format!("{base}/sessions/{id}")).send().await?.json().await?;
    println!("predicted theta {}", ended["predicted_theta_index"]);
    reader.await?;
    Ok(())
}
