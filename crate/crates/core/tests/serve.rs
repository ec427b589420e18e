use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use sightgrasp::eyesim::Rig;
use sightgrasp::fuse::{gaze_filter, FusionConfig, GraspDetector, ScriptedDetector};
use sightgrasp::geom::Pixel;
use sightgrasp::serve::{router, synthetic_frame, ErrorBody, FrameInfo, ServedSelection, Service};
use tower::ServiceExt;

fn service() -> Arc<Service> {
    let rig = Rig::default();
    Arc::new(Service::new(Box::new(ScriptedDetector), FusionConfig::default(), synthetic_frame(&rig).unwrap()).unwrap())
}

async fn call(svc: &Arc<Service>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn get(path: &str) -> Request<Body> {
    Request::get(path).body(Body::empty()).unwrap()
}

fn gaze(u: f64, v: f64, t: i64) -> Request<Body> {
    Request::post("/gaze")
        .header("content-type", "application/json")
        .body(Body::from(format!(r#"{{"u":{u},"v":{v},"t_ms":{t}}}"#)))
        .unwrap()
}

#[tokio::test]
async fn health_reports_model() {
    let svc = service();
    let (s, body) = call(&svc, get("/health")).await;
    assert_eq!(s, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, serde_json::json!({"status": "ok", "model": "scripted"}));
}

#[tokio::test]
async fn gaze_then_selection_matches_library() {
    let svc = service();
    let (s, _) = call(&svc, get("/selection")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = call(&svc, gaze(150.0, 110.0, 10)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = call(&svc, get("/selection")).await;
    assert_eq!(s, StatusCode::OK);
    let got: ServedSelection = serde_json::from_slice(&body).unwrap();

    let (_, frame) = svc.frame();
    let maps = ScriptedDetector.detect(&frame).unwrap();
    let expect = gaze_filter(&maps, Pixel::new(150.0, 110.0), &FusionConfig::default()).unwrap().to_json();
    assert_eq!(got.selection, expect);
    assert_eq!(got.frame_id, 0);
    let raw: serde_json::Value = serde_json::from_slice(&body).unwrap();
    for k in ["center", "theta_deg", "width", "score", "confident"] {
        assert!(raw.get(k).is_some());
    }
}

#[tokio::test]
async fn out_of_bounds_gaze_is_422() {
    let svc = service();
    let (s, body) = call(&svc, gaze(500.0, 10.0, 1)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let e: ErrorBody = serde_json::from_slice(&body).unwrap();
    assert_eq!(e.error.code, "GazeOutOfBounds");
    let (s, body) = call(
        &svc,
        Request::post("/gaze").header("content-type", "application/json").body(Body::from("{\"u\":1}")).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(serde_json::from_slice::<ErrorBody>(&body).is_ok());
    let (s, body) = call(&svc, get("/nope")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().error.code, "NotFound");
}

#[tokio::test]
async fn frame_round_trip_and_heatmap() {
    let svc = service();
    let (s, png) = call(&svc, get("/frame")).await;
    assert_eq!(s, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap().to_rgb8();
    assert_eq!(img, svc.frame().1.image);

    let (s, heat) = call(&svc, get("/heatmap")).await;
    assert_eq!(s, StatusCode::OK);
    let heat = image::load_from_memory(&heat).unwrap().to_luma8();
    assert_eq!(heat.dimensions(), img.dimensions());
    assert_eq!(heat.pixels().map(|p| p.0[0]).max(), Some(255));

    let small = image::RgbImage::from_pixel(64, 48, image::Rgb([10, 20, 30]));
    let mut buf = std::io::Cursor::new(Vec::new());
    small.write_to(&mut buf, image::ImageFormat::Png).unwrap();
    let (s, body) = call(&svc, Request::post("/frame").body(Body::from(buf.into_inner())).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    let info: FrameInfo = serde_json::from_slice(&body).unwrap();
    assert_eq!(info, FrameInfo { frame_id: 1, width: 64, height: 48 });
    let (_, png) = call(&svc, get("/frame")).await;
    assert_eq!(image::load_from_memory(&png).unwrap().to_rgb8(), small);
    let (s, _) = call(&svc, gaze(100.0, 10.0, 2)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, body) = call(&svc, Request::post("/frame").body(Body::from("not a png")).unwrap()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(serde_json::from_slice::<ErrorBody>(&body).unwrap().error.code, "InvalidImage");
}

#[tokio::test]
async fn replay_is_deterministic() {
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let svc = service();
        let mut seq = Vec::new();
        for (i, (u, v)) in [(20.0, 30.0), (150.0, 110.0), (70.0, 120.0)].into_iter().enumerate() {
            seq.push(call(&svc, gaze(u, v, i as i64)).await.1);
            seq.push(call(&svc, get("/selection")).await.1);
        }
        bodies.push(seq);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[tokio::test]
async fn stream_emits_selection_on_change() {
    let svc = service();
    let resp = router(svc.clone()).oneshot(get("/stream")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    call(&svc, gaze(150.0, 110.0, 5)).await;
    let frame = tokio::time::timeout(std::time::Duration::from_secs(10), body.frame()).await.unwrap().unwrap().unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    assert!(text.starts_with("event: selection\ndata: "), "{text}");
    let json = text.trim_start_matches("event: selection\ndata: ").trim();
    let sel: ServedSelection = serde_json::from_str(json).unwrap();
    assert_eq!(sel, svc.selection().unwrap().unwrap());
}
