use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use futures_util::{SinkExt, StreamExt};
use reqwest::StatusCode;
use serde_json::{json, Value};
use splatedit::editing::{apply_edit, EditOp};
use splatedit::io::from_bytes;
use splatedit::io::to_bytes;
use splatedit::semantics::Selection;
use splatedit::testcard::TestCard;
use splatedit::trainer::TrainConfig;
use splatedit::Image;
use splatedit_server::{router, AppState};
use tokio_tungstenite::tungstenite::Message;

async fn spawn() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(AppState::mock())).await.unwrap() });
    format!("127.0.0.1:{}", addr.port())
}

fn card_png() -> String {
    B64.encode(TestCard::new().image.encode_png().unwrap())
}

async fn create(client: &reqwest::Client, base: &str, steps: usize) -> u64 {
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let r = client
        .post(format!("http://{base}/session"))
        .json(&json!({ "image_png": card_png(), "config": cfg }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json::<Value>().await.unwrap()["id"].as_u64().unwrap()
}

async fn status(client: &reqwest::Client, base: &str, id: u64) -> Value {
    client.get(format!("http://{base}/session/{id}/status")).send().await.unwrap().json().await.unwrap()
}

async fn wait_ready(client: &reqwest::Client, base: &str, id: u64) -> Value {
    for _ in 0..600 {
        let s = status(client, base, id).await;
        if s["state"] != "training" {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("session {id} did not finish training");
}

async fn export(client: &reqwest::Client, base: &str, id: u64) -> Vec<u8> {
    let r = client.get(format!("http://{base}/session/{id}/export")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.bytes().await.unwrap().to_vec()
}

async fn post(client: &reqwest::Client, url: String, body: Value) -> (StatusCode, Value) {
    let r = client.post(url).json(&body).send().await.unwrap();
    let code = r.status();
    (code, r.json().await.unwrap_or(Value::Null))
}

#[tokio::test(flavor = "multi_thread")]
async fn fresh_session_renders_the_upload() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let s = status(&c, &base, id).await;
    assert_eq!(s["state"], "ready");
    assert_eq!(s["steps"], 0);
    let r = c.post(format!("http://{base}/session/{id}/render")).json(&json!({})).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.headers()["content-type"], "image/png");
    let img = Image::decode_png(&r.bytes().await.unwrap()).unwrap();
    let uploaded = Image::decode_png(&B64.decode(card_png()).unwrap()).unwrap();
    let psnr = img.psnr(&uploaded).unwrap();
    assert!(psnr >= 25.0, "psnr {psnr}");
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_is_404() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let r = c.get(format!("http://{base}/session/77/status")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "unknown_session");
    for path in ["render", "query/text", "undo"] {
        let (code, _) = post(&c, format!("http://{base}/session/77/{path}"), json!({ "text": "red" })).await;
        assert_eq!(code, StatusCode::NOT_FOUND, "{path}");
    }
    assert_eq!(c.get(format!("http://{base}/session/77/export")).send().await.unwrap().status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn untrained_session_refuses_queries() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let (code, body) = post(&c, format!("http://{base}/session/{id}/query/text"), json!({ "text": "red", "tau": 0.5 })).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["error"], "codec_not_ready");
    let (code, _) = post(&c, format!("http://{base}/session/{id}/render"), json!({ "heatmap": "red" })).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let rect = json!({ "x0": 0.0, "y0": 0.0, "x1": 10.0, "y1": 10.0 });
    let (code, _) = post(&c, format!("http://{base}/session/{id}/query/bbox"), json!({ "rect": rect })).await;
    assert_eq!(code, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests_are_rejected() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let (code, body) = post(&c, format!("http://{base}/session"), json!({ "image_png": "not base64!" })).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "invalid_argument");
    let id = create(&c, &base, 0).await;
    let big = splatedit::Camera::new(100.0, 100.0, 512.0, 512.0, 1025, 1024);
    let (code, body) = post(&c, format!("http://{base}/session/{id}/render"), json!({ "camera": big })).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "render_too_large");
    let (code, body) = post(&c, format!("http://{base}/session/{id}/undo"), json!({})).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["error"], "nothing_to_undo");
}

#[tokio::test(flavor = "multi_thread")]
async fn trained_session_answers_queries() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 40).await;
    let s = wait_ready(&c, &base, id).await;
    assert_eq!((s["state"].as_str(), s["step"].as_u64()), (Some("ready"), Some(40)));
    assert_eq!(s["distilled"], true);
    assert!(s["last"]["psnr"].as_array().unwrap().len() == 3);

    let (code, body) = post(&c, format!("http://{base}/session/{id}/query/text"), json!({ "text": "red" })).await;
    assert_eq!(code, StatusCode::OK);
    let sel: Selection = serde_json::from_value(body).unwrap();
    assert_eq!(sel.indices.len(), sel.scores.len());
    let truth = TestCard::new().object_indices("red");
    assert!(sel.iou(&truth) > 0.5, "IoU {}", sel.iou(&truth));

    let (code, body) = post(&c, format!("http://{base}/session/{id}/query/text"), json!({ "text": "red", "tau": 1.0 })).await;
    assert_eq!(code, StatusCode::OK);
    assert!(body["indices"].as_array().unwrap().is_empty());

    let rect = json!({ "x0": 8.0, "y0": 10.0, "x1": 24.0, "y1": 26.0 });
    let (code, body) = post(&c, format!("http://{base}/session/{id}/query/bbox"), json!({ "rect": rect, "k": 2, "rho": 0.2 })).await;
    assert_eq!(code, StatusCode::OK);
    let sel: Selection = serde_json::from_value(body).unwrap();
    assert!(!sel.is_empty());

    let (code, body) = post(&c, format!("http://{base}/session/{id}/render"), json!({ "heatmap": "red" })).await;
    assert_eq!(code, StatusCode::OK);
    let heat = Image::decode_png(&B64.decode(body["heatmap_png"].as_str().unwrap()).unwrap()).unwrap();
    let img = Image::decode_png(&B64.decode(body["image_png"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!((heat.width, img.width), (64, 64));
    // The red square is hot, the background is not.
    assert!(heat.get(16, 18)[0] > heat.get(60, 2)[0]);
}

fn translate(sel: &Selection, t: [f64; 3]) -> EditOp {
    EditOp::translate(sel.clone(), t)
}

#[tokio::test(flavor = "multi_thread")]
async fn edits_use_revisions_and_undo_exactly() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let before = export(&c, &base, id).await;
    let (scene, _) = from_bytes(&before).unwrap();
    let rev = status(&c, &base, id).await["revision"].as_u64().unwrap();
    // Selections carry the server's layout revision; the loaded copy starts at 0.
    let mut sel = Selection::from_indices(&scene, (0..200).collect()).unwrap();
    sel.layout_revision = layout_from_status(&c, &base, id).await;
    let url = format!("http://{base}/session/{id}/edit");

    let mut stale = serde_json::to_value(translate(&sel, [0.1, 0.0, 0.0])).unwrap();
    stale["revision"] = json!(rev + 1000);
    let (code, body) = post(&c, url.clone(), stale).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(body["error"], "stale_revision");

    let mut ok = serde_json::to_value(translate(&sel, [0.1, 0.0, 0.0])).unwrap();
    ok["revision"] = json!(rev);
    let (code, body) = post(&c, url.clone(), ok.clone()).await;
    assert_eq!(code, StatusCode::OK);
    let rev2 = body["revision"].as_u64().unwrap();
    assert!(rev2 > rev);
    assert_eq!(status(&c, &base, id).await["revision"], rev2);
    // Reusing the old revision is now stale.
    let (code, _) = post(&c, url.clone(), ok).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_ne!(export(&c, &base, id).await, before);

    let (code, _) = post(&c, format!("http://{base}/session/{id}/undo"), json!({})).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(export(&c, &base, id).await, before);
}

async fn layout_from_status(c: &reqwest::Client, base: &str, id: u64) -> u64 {
    status(c, base, id).await["layout_revision"].as_u64().expect("status reports layout_revision")
}

#[tokio::test(flavor = "multi_thread")]
async fn replaying_logged_edits_on_an_export_reproduces_the_final_state() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let start = export(&c, &base, id).await;
    let layout = layout_from_status(&c, &base, id).await;
    let (mut local, meta) = from_bytes(&start).unwrap();
    let mut ops = Vec::new();
    let q = splatedit::scene::quat_from_axis_angle([0.0, 1.0, 0.0], 0.3);
    for (k, idx) in [(0..300).collect::<Vec<_>>(), (1000..1400).collect(), (2000..2100).collect()].into_iter().enumerate() {
        let mut sel = Selection::from_indices(&local, idx).unwrap();
        sel.layout_revision = layout;
        ops.push(match k {
            0 => EditOp::translate(sel, [0.2, -0.1, 0.05]),
            1 => EditOp::rotate(sel, q, None),
            _ => EditOp::remove(sel),
        });
    }
    for op in &ops {
        let (code, _) = post(&c, format!("http://{base}/session/{id}/edit"), serde_json::to_value(op).unwrap()).await;
        assert_eq!(code, StatusCode::OK);
    }
    let end = export(&c, &base, id).await;
    for op in &ops {
        let mut op = op.clone();
        op.selection.layout_revision = local.layout_revision();
        apply_edit(&mut local, &op).unwrap();
    }
    assert_eq!(to_bytes(&local, &meta).unwrap(), end);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_edits_are_serialised() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let (scene, _) = from_bytes(&export(&c, &base, id).await).unwrap();
    let mut sel = Selection::from_indices(&scene, vec![5]).unwrap();
    sel.layout_revision = layout_from_status(&c, &base, id).await;
    let x0 = f64::from(scene.gaussians()[5].center[0]);
    let body = serde_json::to_value(translate(&sel, [0.25, 0.0, 0.0])).unwrap();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (c, url, body) = (c.clone(), format!("http://{base}/session/{id}/edit"), body.clone());
            tokio::spawn(async move { post(&c, url, body).await })
        })
        .collect();
    let mut revisions = Vec::new();
    for t in tasks {
        let (code, body) = t.await.unwrap();
        assert_eq!(code, StatusCode::OK);
        revisions.push(body["revision"].as_u64().unwrap());
    }
    revisions.sort_unstable();
    revisions.dedup();
    assert_eq!(revisions.len(), 16);
    let (after, _) = from_bytes(&export(&c, &base, id).await).unwrap();
    assert!((f64::from(after.gaussians()[5].center[0]) - (x0 + 4.0)).abs() < 1e-5);
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_pushes_frames_after_edits_and_camera_changes() {
    let base = spawn().await;
    let c = reqwest::Client::new();
    let id = create(&c, &base, 0).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{base}/session/{id}/stream")).await.unwrap();
    let mut next_frame = async || -> (Value, Image) {
        let header = match ws.next().await.unwrap().unwrap() {
            Message::Text(t) => serde_json::from_str::<Value>(&t).unwrap(),
            m => panic!("expected a header, got {m:?}"),
        };
        let png = match ws.next().await.unwrap().unwrap() {
            Message::Binary(b) => b,
            m => panic!("expected a frame, got {m:?}"),
        };
        (header, Image::decode_png(&png).unwrap())
    };
    let (h0, f0) = next_frame().await;
    assert_eq!((f0.width, f0.height), (64, 64));

    let (scene, _) = from_bytes(&export(&c, &base, id).await).unwrap();
    let mut sel = Selection::from_indices(&scene, TestCard::new().object_indices("red")).unwrap();
    sel.layout_revision = layout_from_status(&c, &base, id).await;
    let (code, body) = post(&c, format!("http://{base}/session/{id}/edit"), serde_json::to_value(EditOp::remove(sel)).unwrap()).await;
    assert_eq!(code, StatusCode::OK);
    let (h1, f1) = next_frame().await;
    assert_eq!(h1["revision"], body["revision"]);
    assert!(h1["revision"].as_u64() > h0["revision"].as_u64());
    // The red square is gone from the pushed frame.
    assert!(f0.get(16, 18)[0] > 0.6 && f1.get(16, 18)[0] < 0.6);

    drop(next_frame);
    let small = splatedit::Camera::new(16.0, 16.0, 8.0, 8.0, 16, 16);
    ws.send(Message::Text(serde_json::to_string(&small).unwrap().into())).await.unwrap();
    let mut next = async || match ws.next().await.unwrap().unwrap() {
        Message::Binary(b) => Some(Image::decode_png(&b).unwrap()),
        _ => None,
    };
    let mut frame = None;
    for _ in 0..4 {
        if let Some(f) = next().await {
            frame = Some(f);
            break;
        }
    }
    let f = frame.expect("frame after camera change");
    assert_eq!((f.width, f.height), (16, 16));
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_of_unknown_session_is_refused() {
    let base = spawn().await;
    assert!(tokio_tungstenite::connect_async(format!("ws://{base}/session/9/stream")).await.is_err());
}
