#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sketchforge::procedural::Category;
use sketchforge::render::{render_silhouette, CameraPose, RenderConfig};
use sketchforge::sketch::stroke_png;
use sketchforge_cli::config::{Config, Provider};
use sketchforge_cli::service::{Service, ServiceOptions};

pub fn sketch_png(category: Category, azimuth: f64, elevation: f64) -> Vec<u8> {
    let pose = CameraPose::at(azimuth, elevation).unwrap();
    let sil = render_silhouette(&category.exemplar(), &pose, &RenderConfig::square(64)).unwrap().thresholded(0.5);
    stroke_png(&sil).unwrap()
}

/// Fast settings for end-to-end runs.
pub fn quick_config() -> Value {
    json!({
        "fit": { "iterations": 6 },
        "style": { "iterations": 3, "resolution": 32, "views": 2 },
        "preview_size": 16,
        "train": {
            "epochs": 2,
            "batch_size": 4,
            "render_resolution": 32,
            "embed_resolution": 16,
            "model": { "input_resolution": 16, "channels": [2, 2, 2, 2], "latent_dim": 4, "decoder_hidden": 4, "view_hidden": 3 }
        }
    })
}

pub fn quick() -> Config {
    Config::default().merged(&quick_config()).unwrap()
}

pub struct Server {
    pub url: String,
    pub service: Arc<Service>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(store: &Path, config: Config, workers: usize) -> Server {
        let (service, pool) = Service::start(ServiceOptions {
            store: store.to_path_buf(),
            workers,
            config,
            checkpoint: None,
            provider: Provider::Toy,
        })
        .unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let svc = service.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                sketchforge_cli::server::serve(listener, svc, pool, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Server { url: format!("http://{addr}"), service, stop: Some(stop), thread: Some(thread) }
    }

    /// Graceful stop: waits for running jobs to be recorded.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

/// Status code and body.
pub fn get(url: &str) -> (u16, Vec<u8>) {
    let mut r = agent().get(url).call().unwrap();
    (r.status().as_u16(), r.body_mut().read_to_vec().unwrap())
}

pub fn get_json(url: &str) -> (u16, Value) {
    let (s, b) = get(url);
    (s, serde_json::from_slice(&b).unwrap())
}

pub fn post_json(url: &str, body: &str) -> (u16, Value) {
    let mut r = agent().post(url).header("content-type", "application/json").send(body).unwrap();
    let bytes = r.body_mut().read_to_vec().unwrap();
    (r.status().as_u16(), serde_json::from_slice(&bytes).unwrap())
}

pub fn submit(server: &Server, body: Value) -> String {
    let (status, v) = post_json(&format!("{}/api/v1/jobs", server.url), &body.to_string());
    assert_eq!(status, 202, "{v}");
    v["job_id"].as_str().unwrap().to_string()
}

/// Polls a job until it leaves the queue and the worker.
pub fn wait(server: &Server, id: &str, timeout: Duration) -> Value {
    let start = Instant::now();
    loop {
        let (status, v) = get_json(&format!("{}/api/v1/jobs/{id}", server.url));
        assert_eq!(status, 200);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        assert!(start.elapsed() < timeout, "job {id} still {}", v["state"]);
        std::thread::sleep(Duration::from_millis(20));
    }
}
