mod common;

use std::fs;
use std::time::{Duration, Instant};

use base64::Engine as _;
use common::*;
use serde_json::json;
use sketchforge::mesh::obj::import_obj;
use sketchforge::procedural::Category;
use sketchforge_cli::store::{replay_store, JobState, LOG_FILE};

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

#[test]
fn fit_job_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), quick(), 1);
    let (s, health) = get_json(&format!("{}/api/v1/healthz", server.url));
    assert_eq!(s, 200);
    assert!(health["version"].is_string());

    let sketch = sketch_png(Category::Table, 30.0, 15.0);
    let body = json!({ "kind": "fit", "sketch_png_base64": b64(&sketch), "prompt": "A grey table", "pose": { "azimuth_deg": 30.0, "elevation_deg": 15.0 } });
    let id = submit(&server, body.clone());
    let status = wait(&server, &id, Duration::from_secs(60));
    assert_eq!(status["state"], "done", "{status}");
    assert_eq!(status["progress"]["done"], status["progress"]["total"]);
    let mesh_id = status["outputs"]["mesh_id"].as_str().unwrap();
    let (s, obj) = get(&format!("{}/api/v1/meshes/{mesh_id}", server.url));
    assert_eq!(s, 200);
    let mesh = import_obj(&obj).unwrap();
    assert_eq!(mesh.vertices.len(), 642);

    let preview = status["outputs"]["preview_ids"][0].as_str().unwrap();
    let (s, png) = get(&format!("{}/api/v1/previews/{preview}", server.url));
    assert_eq!(s, 200);
    assert!(png.starts_with(b"\x89PNG"));
    let (s, trace) = get_json(&format!("{}/api/v1/traces/{}", server.url, status["outputs"]["trace_id"].as_str().unwrap()));
    assert_eq!(s, 200);
    assert_eq!(trace["fit"]["steps"].as_array().unwrap().len(), 6);

    let (s, png) = get(&format!("{}/api/v1/render?mesh_id={mesh_id}&azimuth_deg=-45&elevation_deg=10&size=24", server.url));
    assert_eq!(s, 200);
    assert!(png.starts_with(b"\x89PNG"));

    // Identical request, identical blobs.
    let again = wait(&server, &submit(&server, body), Duration::from_secs(60));
    assert_eq!(again["outputs"], status["outputs"]);
}

#[test]
fn stylize_and_pipeline_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), quick(), 1);
    let sketch = b64(&sketch_png(Category::Box, 0.0, 0.0));
    let fit = wait(&server, &submit(&server, json!({ "kind": "fit", "sketch_png_base64": sketch })), Duration::from_secs(60));
    let mesh_id = fit["outputs"]["mesh_id"].as_str().unwrap();
    let styled = wait(&server, &submit(&server, json!({ "kind": "stylize", "mesh_id": mesh_id, "prompt": "red" })), Duration::from_secs(60));
    assert_eq!(styled["state"], "done", "{styled}");
    let (_, obj) = get(&format!("{}/api/v1/meshes/{}", server.url, styled["outputs"]["mesh_id"].as_str().unwrap()));
    assert!(import_obj(&obj).unwrap().colors.is_some());

    let body = json!({ "kind": "pipeline", "sketch_png_base64": sketch, "prompt": "blue box", "config": { "fit": { "iterations": 2 } } });
    let piped = wait(&server, &submit(&server, body), Duration::from_secs(60));
    assert_eq!(piped["state"], "done", "{piped}");
    assert_eq!(piped["progress"]["total"], 5);
}

#[test]
fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(dir.path(), quick(), 1);
    let jobs = format!("{}/api/v1/jobs", server.url);
    for body in [
        "{not json",
        r#"{"kind": "sculpt"}"#,
        r#"{"kind": "fit"}"#,
        r#"{"kind": "fit", "sketch_png_base64": "!!"}"#,
        r#"{"kind": "fit", "sketch_png_base64": "aGVsbG8="}"#,
        r#"{"kind": "stylize", "mesh_id": "abc", "prompt": "red"}"#,
        r#"{"kind": "stylize", "prompt": "  "}"#,
        r#"{"kind": "infer", "sketch_png_base64": "aGVsbG8="}"#,
        r#"{"kind": "fit", "extra": 1}"#,
    ] {
        let (s, v) = post_json(&jobs, body);
        assert_eq!(s, 400, "{body}: {v}");
        assert!(!v["error"].as_str().unwrap().is_empty());
    }
    let sketch = b64(&sketch_png(Category::Box, 0.0, 0.0));
    let (s, _) = post_json(&jobs, &json!({ "kind": "fit", "sketch_png_base64": sketch, "config": { "fit": { "iterations": 0 } } }).to_string());
    assert_eq!(s, 400);
    let (s, _) = post_json(&jobs, &json!({ "kind": "fit", "sketch_png_base64": sketch, "pose": { "azimuth_deg": 0, "elevation_deg": 120 } }).to_string());
    assert_eq!(s, 400);

    for path in ["jobs/00000000-0000-0000-0000-000000000000", "jobs/nope", "meshes/abc", "previews/abc", "nothing"] {
        let (s, v) = get_json(&format!("{}/api/v1/{path}", server.url));
        assert_eq!(s, 404, "{path}");
        assert!(v["error"].is_string());
    }
    let (s, _) = get(&format!("{}/api/v1/render?mesh_id={}", server.url, "0".repeat(64)));
    assert_eq!(s, 404);
}

#[test]
fn status_stays_fast_while_a_job_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.fit.iterations = 300;
    let server = Server::start(dir.path(), cfg, 1);
    let id = submit(&server, json!({ "kind": "fit", "sketch_png_base64": b64(&sketch_png(Category::Lamp, 0.0, 0.0)) }));
    let url = format!("{}/api/v1/jobs/{id}", server.url);
    let mut saw_running = false;
    let mut worst = Duration::ZERO;
    for _ in 0..20 {
        let t = Instant::now();
        let (s, v) = get_json(&url);
        worst = worst.max(t.elapsed());
        assert_eq!(s, 200);
        saw_running |= v["state"] == "running" && v["progress"]["done"].as_u64().unwrap() > 0;
        std::thread::sleep(Duration::from_millis(25));
    }
    assert!(saw_running);
    assert!(worst < Duration::from_millis(100), "{worst:?}");
}

#[test]
fn restart_recovers_jobs_and_marks_interrupted() {
    let dir = tempfile::tempdir().unwrap();
    let sketch = b64(&sketch_png(Category::Box, 0.0, 0.0));
    let done_id;
    let done_outputs;
    {
        let server = Server::start(dir.path(), quick(), 1);
        done_id = submit(&server, json!({ "kind": "fit", "sketch_png_base64": sketch }));
        done_outputs = wait(&server, &done_id, Duration::from_secs(60))["outputs"].clone();
        server.stop();
    }
    // Simulated crash: a job caught mid-run and a torn final record.
    let log = dir.path().join(LOG_FILE);
    let text = fs::read_to_string(&log).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let mut running = first.clone();
    running["id"] = json!("11111111-2222-3333-4444-555555555555");
    running["state"] = json!("running");
    let torn = running.to_string();
    fs::write(&log, format!("{text}{running}\n{}", &torn[..torn.len() / 2])).unwrap();

    let table = replay_store(dir.path()).unwrap();
    assert_eq!(table.len(), 2);
    let interrupted = table.iter().find(|j| j.id.to_string().starts_with("11111111")).unwrap();
    assert_eq!((interrupted.state, interrupted.error.as_deref()), (JobState::Failed, Some("interrupted")));

    let server = Server::start(dir.path(), quick(), 1);
    let (_, v) = get_json(&format!("{}/api/v1/jobs/{done_id}", server.url));
    assert_eq!(v["state"], "done");
    assert_eq!(v["outputs"], done_outputs);
    let (s, _) = get(&format!("{}/api/v1/meshes/{}", server.url, done_outputs["mesh_id"].as_str().unwrap()));
    assert_eq!(s, 200);
    let (_, v) = get_json(&format!("{}/api/v1/jobs/11111111-2222-3333-4444-555555555555", server.url));
    assert_eq!((v["state"].as_str(), v["error"].as_str()), (Some("failed"), Some("interrupted")));
    // The service keeps accepting work after recovery.
    let id = submit(&server, json!({ "kind": "fit", "sketch_png_base64": sketch }));
    assert_eq!(wait(&server, &id, Duration::from_secs(60))["state"], "done");
}

#[test]
fn queued_jobs_resume_after_restart_and_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let sketch = b64(&sketch_png(Category::Box, 0.0, 0.0));
    let (good, broken);
    {
        let server = Server::start(dir.path(), quick(), 1);
        good = submit(&server, json!({ "kind": "fit", "sketch_png_base64": sketch }));
        wait(&server, &good, Duration::from_secs(60));
        server.stop();
    }
    // Two jobs left queued by a crash; the second lost its sketch blob.
    let log = dir.path().join(LOG_FILE);
    let text = fs::read_to_string(&log).unwrap();
    let mut queued: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    queued["id"] = json!("aaaaaaaa-0000-4000-8000-000000000001");
    let mut lost = queued.clone();
    lost["id"] = json!("aaaaaaaa-0000-4000-8000-000000000002");
    lost["inputs"]["sketch_id"] = json!("f".repeat(64));
    fs::write(&log, format!("{text}{queued}\n{lost}\n")).unwrap();
    broken = "aaaaaaaa-0000-4000-8000-000000000002";

    let server = Server::start(dir.path(), quick(), 1);
    let resumed = wait(&server, "aaaaaaaa-0000-4000-8000-000000000001", Duration::from_secs(60));
    assert_eq!(resumed["state"], "done", "{resumed}");
    let failed = wait(&server, broken, Duration::from_secs(60));
    assert_eq!(failed["state"], "failed");
    assert!(!failed["error"].as_str().unwrap().is_empty());
    assert!(failed.get("outputs").is_none() || failed["outputs"].is_null());
    let (_, first) = get_json(&format!("{}/api/v1/jobs/{good}", server.url));
    assert_eq!(first["outputs"], resumed["outputs"]);
}
