#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use image::{DynamicImage, Rgb, RgbImage, Rgba, RgbaImage};
use insertkit_adapters::AdapterSet;
use insertkit_pipeline::imaging::encode_png;
use insertkit_server::{router, AppState, ServerConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub struct TestServer {
    pub app: Router,
    pub state: AppState,
    pub dir: tempfile::TempDir,
}

pub fn fast_config(dir: &std::path::Path) -> ServerConfig {
    let mut cfg = ServerConfig::new(dir);
    cfg.workers = 2;
    cfg.pipeline.compose_steps = 10;
    cfg.pipeline.refine_inference_steps = 10;
    cfg.pipeline.refine_noise_steps = 2;
    cfg.pipeline.colorize_steps = 5;
    cfg.pipeline.seed = 3;
    cfg
}

pub fn start_with(config: impl FnOnce(&mut ServerConfig)) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config(dir.path());
    config(&mut cfg);
    let state = AppState::start(cfg, Arc::new(|| Ok(AdapterSet::toy()))).unwrap();
    TestServer {
        app: router(state.clone()),
        state,
        dir,
    }
}

pub fn start() -> TestServer {
    start_with(|_| {})
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("not json: {}", String::from_utf8_lossy(&self.body)))
    }
}

impl TestServer {
    pub async fn call(&self, method: Method, uri: &str, body: Option<Vec<u8>>, json: bool) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        if json {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let body = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
        Reply { status, body }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None, false).await
    }

    pub async fn post_json(&self, uri: &str, v: Value) -> Reply {
        self.call(Method::POST, uri, Some(v.to_string().into_bytes()), true).await
    }

    pub async fn put_json(&self, uri: &str, v: Value) -> Reply {
        self.call(Method::PUT, uri, Some(v.to_string().into_bytes()), true).await
    }

    pub async fn post(&self, uri: &str) -> Reply {
        self.call(Method::POST, uri, None, false).await
    }

    pub async fn upload(&self, id: &str, kind: &str, bytes: Vec<u8>) -> Reply {
        self.call(Method::POST, &format!("/sessions/{id}/assets?kind={kind}"), Some(bytes), false)
            .await
    }

    /// New session with the standard prompt and optional config overrides.
    pub async fn session(&self, config: Value) -> String {
        let r = self
            .post_json(
                "/sessions",
                json!({
                    "prompt": { "product_type": "bicycle", "color": "red", "place": "driveway", "template_id": "insertion" },
                    "config": config,
                }),
            )
            .await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
        r.json()["id"].as_str().unwrap().to_string()
    }

    /// Session with object and background uploaded and the object placed.
    pub async fn placed_session(&self, config: Value) -> String {
        let id = self.session(config).await;
        assert_eq!(self.upload(&id, "object", png_rgb(&object(32))).await.status, StatusCode::CREATED);
        assert_eq!(self.upload(&id, "background", png_rgb(&background(64, 64))).await.status, StatusCode::CREATED);
        let r = self
            .put_json(&format!("/sessions/{id}/placement"), json!({ "x": 16, "y": 16, "scale": 1.0 }))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
        id
    }

    pub async fn wait_job(&self, job: &str) -> Value {
        for _ in 0..3000 {
            let t = self.get(&format!("/jobs/{job}")).await.json();
            if matches!(t["status"].as_str(), Some("succeeded" | "failed")) {
                return t;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        panic!("job {job} did not finish");
    }

    /// Runs a stage and waits for it to succeed.
    pub async fn run_stage(&self, id: &str, stage: &str, k: usize) -> Value {
        let r = self.post(&format!("/sessions/{id}/stages/{stage}?k={k}")).await;
        assert_eq!(r.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&r.body));
        let t = self.wait_job(r.json()["id"].as_str().unwrap()).await;
        assert_eq!(t["status"], "succeeded", "{t}");
        self.get(&format!("/sessions/{id}/variants/{stage}")).await.json()
    }

    /// Selects a variant and waits for a finalize job it queued.
    pub async fn select(&self, id: &str, stage: &str, index: usize) -> Value {
        let r = self
            .post_json(&format!("/sessions/{id}/variants/{stage}/select"), json!({ "index": index }))
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
        let v = r.json();
        if let Some(job) = v["job"]["id"].as_str() {
            let t = self.wait_job(job).await;
            assert_eq!(t["status"], "succeeded", "{t}");
        }
        v
    }
}

/// Saturated blob with a dark outline on white.
pub fn object(size: u32) -> RgbImage {
    let c = size as f64 / 2.0;
    RgbImage::from_fn(size, size, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() / c;
        if d < 0.6 {
            Rgb([200, (40 + x * 2 % 60) as u8, 40])
        } else if d < 0.7 {
            Rgb([20, 20, 20])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

/// Fully opaque square, so every pixel belongs to the mask.
pub fn opaque_square(side: u32) -> RgbaImage {
    RgbaImage::from_pixel(side, side, Rgba([30, 90, 160, 255]))
}

/// Grey line drawing; triggers automatic colorization.
pub fn line_drawing(size: u32) -> RgbImage {
    let c = size as f64 / 2.0;
    RgbImage::from_fn(size, size, |x, y| {
        let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() / c;
        if (0.5..0.7).contains(&d) {
            Rgb([30, 30, 30])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

pub fn background(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 3 % 256) as u8, 120, (y * 5 % 256) as u8]))
}

pub fn png_rgb(img: &RgbImage) -> Vec<u8> {
    encode_png(&DynamicImage::ImageRgb8(img.clone())).unwrap()
}

pub fn png_rgba(img: &RgbaImage) -> Vec<u8> {
    encode_png(&DynamicImage::ImageRgba8(img.clone())).unwrap()
}

pub fn sha(bytes: &[u8]) -> String {
    insertkit_pipeline::imaging::sha256_hex(bytes)
}
