mod common;

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

use seqcorr::dstar::DStarLibrary;
use seqcorr::service::{
    router, AppState, CorrectionResponse, ScenarioInfo, ServiceConfig, SessionCreated, SessionEnded, Snapshot,
    StreamEvent,
};
use seqcorr::sim::{replay, run_episode, Engine, EpisodeLog, InferenceModel, LogRecord};

struct Server {
    base: String,
    client: Client,
    engines: Vec<Arc<Engine>>,
}

async fn start(log_dir: Option<std::path::PathBuf>) -> Server {
    let single = common::scenario("single_agent");
    let library = DStarLibrary::load(common::scenario_path("single_agent.dstar")).unwrap();
    let engines = vec![
        Arc::new(Engine::with_defaults(single, Some(library)).unwrap()),
        Arc::new(Engine::with_defaults(common::scenario("two_agent"), None).unwrap()),
    ];
    let app = AppState::new(
        engines.clone(),
        ServiceConfig {
            log_dir,
            ..ServiceConfig::default()
        },
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(app)).await.unwrap() });
    Server {
        base: format!("http://{addr}"),
        client: Client::new(),
        engines,
    }
}

impl Server {
    async fn create(&self, body: Value) -> reqwest::Response {
        self.client.post(format!("{}/sessions", self.base)).json(&body).send().await.unwrap()
    }

    async fn session(&self, scenario: &str, model: &str, seed: u64) -> SessionCreated {
        let resp = self.create(json!({"scenario_id": scenario, "model": model, "seed": seed})).await;
        assert_eq!(resp.status(), StatusCode::CREATED);
        resp.json().await.unwrap()
    }

    async fn correct(&self, id: &str, timestep: usize, agent: usize, force: [f64; 2]) -> reqwest::Response {
        self.client
            .post(format!("{}/sessions/{id}/corrections", self.base))
            .json(&json!({"timestep": timestep, "agent": agent, "force": force}))
            .send()
            .await
            .unwrap()
    }

    async fn step(&self, id: &str) -> reqwest::Response {
        self.client.post(format!("{}/sessions/{id}/step", self.base)).send().await.unwrap()
    }

    async fn end(&self, id: &str) -> reqwest::Response {
        self.client.delete(format!("{}/sessions/{id}", self.base)).send().await.unwrap()
    }

    /// Collects stream events until the server closes the stream.
    async fn events(&self, id: &str) -> tokio::task::JoinHandle<Vec<StreamEvent>> {
        let resp = self
            .client
            .get(format!("{}/sessions/{id}/events", self.base))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        let mut body = resp.bytes_stream();
        let (ready_tx, ready_rx) = tokio::sync::oneshot::channel();
        let handle = tokio::spawn(async move {
            let mut ready = Some(ready_tx);
            let mut buf = String::new();
            let mut out = Vec::new();
            while let Some(chunk) = body.next().await {
                buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
                while let Some(end) = buf.find("\n\n") {
                    let frame: String = buf.drain(..end + 2).collect();
                    let data: String = frame
                        .lines()
                        .filter_map(|l| l.strip_prefix("data:"))
                        .map(str::trim_start)
                        .collect();
                    if !data.is_empty() {
                        out.push(serde_json::from_str::<StreamEvent>(&data).unwrap());
                        if let Some(tx) = ready.take() {
                            let _ = tx.send(());
                        }
                    }
                }
            }
            out
        });
        ready_rx.await.unwrap();
        handle
    }
}

fn without_id(mut s: Snapshot) -> Snapshot {
    s.session_id.clear();
    s
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scenarios_list_library_coverage() {
    let server = start(None).await;
    let list: Vec<ScenarioInfo> = server
        .client
        .get(format!("{}/scenarios", server.base))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(list.len(), 2);
    let single = list.iter().find(|s| s.scenario.id == "single_agent").unwrap();
    assert_eq!(single.library_k_max, 4);
    assert_eq!(single.models, InferenceModel::ALL.to_vec());
    let two = list.iter().find(|s| s.scenario.id == "two_agent").unwrap();
    assert_eq!(two.library_k_max, 0);
    assert!(!two.models.contains(&InferenceModel::Sequence));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_returns_initial_plan_and_is_deterministic() {
    let server = start(None).await;
    let a = server.session("single_agent", "sequence", 3).await;
    let b = server.session("single_agent", "sequence", 3).await;
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(&a.snapshot.plan, server.engines[0].initial_plan());
    assert_eq!(a.snapshot.clock, 0);
    assert_eq!(a.snapshot.belief, *server.engines[0].prior());
    assert_eq!(without_id(a.snapshot), without_id(b.snapshot));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn create_errors() {
    let server = start(None).await;
    let resp = server.create(json!({"scenario_id": "nowhere", "model": "final"})).await;
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);

    let resp = server.create(json!({"scenario_id": "two_agent", "model": "sequence"})).await;
    assert_eq!(resp.status(), StatusCode::PRECONDITION_FAILED);
    let err: Value = resp.json().await.unwrap();
    assert!(err["hint"].as_str().unwrap().contains("precompute"));

    let resp = server.create(json!({"scenario_id": "two_agent", "model": "bogus"})).await;
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let resp = server
        .client
        .post(format!("{}/sessions", server.base))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn corrections_are_clamped_and_validated() {
    let server = start(None).await;
    let s = server.session("two_agent", "independent", 0).await;
    let resp = server.correct(&s.session_id, 3, 1, [3.0, 4.0]).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let r: CorrectionResponse = resp.json().await.unwrap();
    assert!(r.clamped);
    let bound = server.engines[1].scenario().hyperparameters.force_bound;
    let f = r.applied.force;
    assert!(((f[0] * f[0] + f[1] * f[1]).sqrt() - bound).abs() < 1e-12);
    assert!((f[1] / f[0] - 4.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.snapshot.corrections, 1);

    let bad_agent = server.correct(&s.session_id, 5, 7, [0.1, 0.0]).await;
    assert_eq!(bad_agent.status(), StatusCode::BAD_REQUEST);
    let malformed = server
        .client
        .post(format!("{}/sessions/{}/corrections", server.base, s.session_id))
        .json(&json!({"timestep": 2, "force": [0.0, 0.0]}))
        .send()
        .await
        .unwrap();
    assert_eq!(malformed.status(), StatusCode::BAD_REQUEST);
    let missing = server.correct("nobody", 2, 0, [0.0, 0.0]).await;
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn past_timesteps_are_restamped() {
    let server = start(None).await;
    let s = server.session("single_agent", "final", 0).await;
    for _ in 0..4 {
        assert_eq!(server.step(&s.session_id).await.status(), StatusCode::OK);
    }
    let r: CorrectionResponse = server.correct(&s.session_id, 1, 0, [0.2, 0.0]).await.json().await.unwrap();
    assert_eq!(r.applied.timestep, 5);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn zero_force_corrections() {
    let server = start(None).await;
    let engine = &server.engines[1];
    let scenario = engine.scenario();

    // Nothing moves, so the independent update is the reward of the
    // unchanged plan with no displacement penalty.
    let s = server.session("two_agent", "independent", 0).await;
    let r: CorrectionResponse = server.correct(&s.session_id, 4, 0, [0.0, 0.0]).await.json().await.unwrap();
    assert!(!r.clamped);
    assert_eq!(r.deformed_plan, s.snapshot.plan);
    let beta = scenario.hyperparameters.beta_noise;
    let lls: Vec<f64> = (0..scenario.num_candidates())
        .map(|i| beta * seqcorr::rewards::reward(engine.initial_plan(), &scenario.theta(i), scenario).unwrap())
        .collect();
    let expected = seqcorr::evidence::posterior_update(engine.prior(), &lls).unwrap().probabilities();
    for (a, b) in expected.iter().zip(r.snapshot.belief.probabilities()) {
        assert!((a - b).abs() <= 1e-9);
    }

    let f = server.session("two_agent", "final", 0).await;
    let r: CorrectionResponse = server.correct(&f.session_id, 4, 0, [0.0, 0.0]).await.json().await.unwrap();
    assert_eq!(r.snapshot.belief, f.snapshot.belief);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_orders_ticks_corrections_and_final() {
    let server = start(None).await;
    let s = server.session("single_agent", "sequence", 1).await;
    let id = s.session_id.clone();
    let events = server.events(&id).await;
    server.step(&id).await;
    server.correct(&id, 2, 0, [-0.5, 0.2]).await;
    server.step(&id).await;
    server.step(&id).await;
    let ended: SessionEnded = server.end(&id).await.json().await.unwrap();
    let events = tokio::time::timeout(Duration::from_secs(10), events).await.unwrap().unwrap();

    let kinds: Vec<&str> = events.iter().map(|e| e.snapshot.last_event_kind.as_str()).collect();
    assert_eq!(kinds, ["snapshot", "tick", "correction", "tick", "tick", "final"]);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, [0, 1, 2, 3, 4, 5]);
    assert!(events[0].record.is_none());

    // The stream, concatenated, is the log after its header.
    let streamed: Vec<LogRecord> = events.iter().filter_map(|e| e.record.clone()).collect();
    assert_eq!(streamed, ended.log[1..]);
    for (e, r) in events[1..].iter().zip(&ended.log[1..]) {
        assert_eq!(&e.snapshot.belief, r.belief());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reconnect_resyncs_without_changing_state() {
    let server = start(None).await;
    let s = server.session("single_agent", "independent", 1).await;
    let id = s.session_id.clone();
    server.step(&id).await;
    server.correct(&id, 3, 0, [-0.4, 0.0]).await;
    for _ in 0..2 {
        let resp = server
            .client
            .get(format!("{}/sessions/{id}/events", server.base))
            .send()
            .await
            .unwrap();
        let mut body = resp.bytes_stream();
        let chunk = body.next().await.unwrap().unwrap();
        let text = std::str::from_utf8(&chunk).unwrap();
        let data = text.lines().find_map(|l| l.strip_prefix("data:")).unwrap().trim_start();
        let ev: StreamEvent = serde_json::from_str(data).unwrap();
        assert_eq!(ev.seq, 2);
        assert_eq!(ev.snapshot.clock, 1);
        assert_eq!(ev.snapshot.corrections, 1);
    }
    let snap: Snapshot = server.step(&id).await.json().await.unwrap();
    assert_eq!(snap.clock, 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_submissions_apply_in_fifo_order() {
    let server = Arc::new(start(None).await);
    let s = server.session("two_agent", "independent", 2).await;
    let id = s.session_id.clone();
    let events = server.events(&id).await;
    let sends = (0..6).map(|i| {
        let server = Arc::clone(&server);
        let id = id.clone();
        async move { server.correct(&id, 2 + i, i % 2, [0.1 * i as f64, 0.05]).await.status() }
    });
    let statuses = futures::future::join_all(sends).await;
    assert!(statuses.iter().all(|s| *s == StatusCode::OK));
    let ended: SessionEnded = server.end(&id).await.json().await.unwrap();
    let events = tokio::time::timeout(Duration::from_secs(10), events).await.unwrap().unwrap();
    let corrections: Vec<usize> = events
        .iter()
        .filter(|e| e.snapshot.last_event_kind == "correction")
        .map(|e| e.snapshot.corrections)
        .collect();
    assert_eq!(corrections, [1, 2, 3, 4, 5, 6]);
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..=7).collect::<Vec<u64>>());
    let log = EpisodeLog::from_records(ended.log).unwrap();
    assert_eq!(log.num_corrections(), 6);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sessions_are_isolated() {
    let server = start(None).await;
    let a = server.session("two_agent", "independent", 5).await;
    let b = server.session("two_agent", "independent", 5).await;
    let c = server.session("two_agent", "independent", 5).await;
    for t in [2, 5, 8] {
        server.correct(&a.session_id, t, 0, [0.6, 0.0]).await;
        server.step(&b.session_id).await;
        server.step(&c.session_id).await;
        server.correct(&b.session_id, t + 1, 1, [-0.3, 0.1]).await;
        server.correct(&c.session_id, t + 1, 1, [-0.3, 0.1]).await;
    }
    let eb: SessionEnded = server.end(&b.session_id).await.json().await.unwrap();
    let ec: SessionEnded = server.end(&c.session_id).await.json().await.unwrap();
    let ea: SessionEnded = server.end(&a.session_id).await.json().await.unwrap();
    assert_eq!(eb.log, ec.log);
    assert_ne!(ea.log, eb.log);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ending_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Some(dir.path().to_path_buf())).await;
    let s = server.session("two_agent", "final", 0).await;
    let resp = server.end(&s.session_id).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let ended: SessionEnded = resp.json().await.unwrap();
    let log = EpisodeLog::load(ended.log_path.as_ref().unwrap()).unwrap();
    assert_eq!(log.num_corrections(), 0);
    assert_eq!(log.records(), ended.log.as_slice());
    assert!(replay(&log, None).unwrap().passed());

    assert_eq!(server.end(&s.session_id).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(server.step(&s.session_id).await.status(), StatusCode::GONE);
    assert_eq!(server.correct(&s.session_id, 3, 0, [0.1, 0.0]).await.status(), StatusCode::GONE);
    assert_eq!(server.end("never-existed").await.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_episode_reproduces_recorded_log() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(Some(dir.path().to_path_buf())).await;
    let recorded = run_episode(Arc::clone(&server.engines[0]), InferenceModel::Sequence, 4, 0.1).unwrap();
    assert!(recorded.num_corrections() >= 1);
    let s = server.session("single_agent", "sequence", 4).await;
    for r in &recorded.records()[1..] {
        match r {
            LogRecord::Tick { .. } => assert_eq!(server.step(&s.session_id).await.status(), StatusCode::OK),
            LogRecord::Correction { requested, .. } => {
                let resp = server
                    .correct(&s.session_id, requested.timestep, requested.agent, requested.force)
                    .await;
                assert_eq!(resp.status(), StatusCode::OK);
            }
            _ => {}
        }
    }
    let ended: SessionEnded = server.end(&s.session_id).await.json().await.unwrap();
    let log = EpisodeLog::load(ended.log_path.unwrap()).unwrap();
    assert_eq!(log.final_belief(), recorded.final_belief());
    assert_eq!(log.predicted_theta_index(), recorded.predicted_theta_index());
    assert!(replay(&log, Some(InferenceModel::Sequence)).unwrap().passed());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stepping_past_the_horizon_conflicts() {
    let server = start(None).await;
    let s = server.session("single_agent", "final", 0).await;
    let horizon = s.snapshot.horizon;
    for _ in 0..horizon {
        assert_eq!(server.step(&s.session_id).await.status(), StatusCode::OK);
    }
    assert_eq!(server.step(&s.session_id).await.status(), StatusCode::CONFLICT);
    let late = server.correct(&s.session_id, horizon - 1, 0, [0.1, 0.0]).await;
    assert_eq!(late.status(), StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn auto_mode_advances_the_clock() {
    let server = start(None).await;
    let resp = server
        .create(json!({"scenario_id": "single_agent", "model": "final", "mode": "auto", "tick_rate": 50.0}))
        .await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    let s: SessionCreated = resp.json().await.unwrap();
    tokio::time::sleep(Duration::from_millis(400)).await;
    let ended: SessionEnded = server.end(&s.session_id).await.json().await.unwrap();
    let log = EpisodeLog::from_records(ended.log).unwrap();
    let ticks = log.records().iter().filter(|r| r.kind() == "tick").count();
    assert!(ticks >= 3, "{ticks} ticks");
}
