use std::collections::HashSet;
use std::path::Path;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use t23daqa::dataset::load_ratings;
use t23daqa::subjective::{process_ratings, OutlierParams};
use t23daqa::synthetic::{scripted_ratings, synthetic_assets};
use t23daqa::AssetRecord;
use t23daqa_service::{router, AppState, RatingStore, StoreConfig};

fn manifest(n: usize, dir: &Path) -> Vec<AssetRecord> {
    std::fs::create_dir_all(dir.join("videos")).unwrap();
    synthetic_assets(n, 3)
        .into_iter()
        .map(|a| {
            let rel = format!("videos/{}.mp4", a.asset_id);
            std::fs::write(dir.join(&rel), (0..=255u8).collect::<Vec<_>>()).unwrap();
            AssetRecord {
                asset_id: a.asset_id,
                prompt: a.prompt,
                generator: a.generator,
                video_path: rel.into(),
                frame_count: 120,
                width: 512,
                height: 512,
            }
        })
        .collect()
}

fn make_app(dir: &Path, manifest: &[AssetRecord], allowed: Option<&[&str]>) -> Router {
    let store = RatingStore::open(StoreConfig {
        manifest: manifest.to_vec(),
        store_path: dir.join("store.jsonl"),
        seed: 7,
        allowed_subjects: allowed.map(|a| a.iter().map(|s| s.to_string()).collect::<HashSet<_>>()),
        allow_overwrite: true,
    })
    .unwrap();
    router(AppState::new(store, dir.to_path_buf()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (
        status,
        res.into_body().collect().await.unwrap().to_bytes().to_vec(),
    )
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, body) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

async fn post_rating(app: &Router, subject: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(format!("/session/{subject}/rating"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, body) = call(app, req).await;
    (s, serde_json::from_slice(&body).unwrap_or(Value::Null))
}

#[tokio::test]
async fn session_flow() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(6, dir.path());
    let app = make_app(dir.path(), &m, None);

    let (s, session) = get_json(&app, "/session/s1").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session["subset_index"], 1);
    assert_eq!(session["cursor"], 0);
    assert_eq!(session["subset_sizes"], json!([2, 2, 2]));

    let (s, _) = get_json(&app, "/session/s1/previous").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, first) = get_json(&app, "/session/s1/current").await;
    let first_id = first["asset_id"].as_str().unwrap().to_string();
    assert_eq!(first_id, session["order"][0]);
    assert!(first["prompt"].as_str().unwrap().starts_with("a "));

    let (s, err) = post_rating(
        &app,
        "s1",
        json!({"asset_id": first_id, "q": 3.25, "a": 4.0, "c": 1.5}),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("0.1"));

    let other = session["order"][1].as_str().unwrap();
    let (s, _) = post_rating(
        &app,
        "s1",
        json!({"asset_id": other, "q": 3.2, "a": 4.0, "c": 1.5}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, ack) = post_rating(
        &app,
        "s1",
        json!({"asset_id": first_id, "q": 3.2, "a": 4.0, "c": 1.5}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["session"]["cursor"], 1);

    let (_, second) = get_json(&app, "/session/s1/current").await;
    assert_eq!(second["asset_id"], session["order"][1]);

    let (_, prev) = get_json(&app, "/session/s1/previous").await;
    assert_eq!(prev["asset_id"], first_id.as_str());
    assert_eq!(prev["rating"], json!([3.2, 4.0, 1.5]));

    // read-only unless overwrite is requested
    let (s, _) = post_rating(
        &app,
        "s1",
        json!({"asset_id": first_id, "q": 3.5, "a": 4.0, "c": 1.5}),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, ack) = post_rating(
        &app,
        "s1",
        json!({"asset_id": first_id, "q": 3.5, "a": 4.0, "c": 1.5, "overwrite": true}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["overwrite"], true);
    assert_eq!(ack["session"]["cursor"], 1);

    let (_, body) = call(
        &app,
        Request::get("/export.csv").body(Body::empty()).unwrap(),
    )
    .await;
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().contains("3.5"));

    let (s, _) = get_json(&app, "/media/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_export_is_header_only_and_unlisted_subject_is_forbidden() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(3, dir.path());
    let app = make_app(dir.path(), &m, Some(&["alice"]));
    let (s, body) = call(
        &app,
        Request::get("/export.csv").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(body).unwrap().lines().count(), 1);
    let (s, _) = get_json(&app, "/session/mallory").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = get_json(&app, "/session/alice").await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn media_supports_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(3, dir.path());
    let app = make_app(dir.path(), &m, None);
    let uri = format!("/media/{}", m[0].asset_id);
    let (s, body) = call(&app, Request::get(&uri).body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body.len(), 256);
    let req = Request::get(&uri)
        .header(header::RANGE, "bytes=10-19")
        .body(Body::empty())
        .unwrap();
    let (s, body) = call(&app, req).await;
    assert_eq!(s, StatusCode::PARTIAL_CONTENT);
    assert_eq!(body, (10..20u8).collect::<Vec<_>>());
}

#[tokio::test]
async fn restart_resumes_cursor_and_skips_corrupt_lines() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(6, dir.path());
    let first_order;
    {
        let app = make_app(dir.path(), &m, None);
        let (_, s) = get_json(&app, "/session/bob").await;
        first_order = s["order"].clone();
        for id in first_order.as_array().unwrap() {
            let (st, _) = post_rating(
                &app,
                "bob",
                json!({"asset_id": id, "q": 1.0, "a": 2.0, "c": 3.0}),
            )
            .await;
            assert_eq!(st, StatusCode::OK);
        }
        let (_, s) = get_json(&app, "/session/bob").await;
        assert_eq!(s["subset_index"], 2);
    }
    // a torn write from a crash mid-append
    let store = dir.path().join("store.jsonl");
    let mut text = std::fs::read_to_string(&store).unwrap();
    text.push_str("{\"seq\": 99, \"subj");
    std::fs::write(&store, text).unwrap();

    let app = make_app(dir.path(), &m, None);
    let (_, s) = get_json(&app, "/session/bob").await;
    assert_eq!(s["subset_index"], 2);
    assert_eq!(s["cursor"], 0);
    assert_eq!(s["total_rated"], 2);

    let (_, cur) = get_json(&app, "/session/bob/current").await;
    let (st, _) = post_rating(
        &app,
        "bob",
        json!({"asset_id": cur["asset_id"], "q": 1.0, "a": 2.0, "c": 3.0}),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    drop(app);
    let app = make_app(dir.path(), &m, None);
    let (_, s) = get_json(&app, "/session/bob").await;
    assert_eq!(s["cursor"], 1);
}

#[tokio::test]
async fn completed_subject_gets_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(3, dir.path());
    let app = make_app(dir.path(), &m, None);
    for _ in 0..3 {
        let (_, cur) = get_json(&app, "/session/eve/current").await;
        let (s, _) = post_rating(
            &app,
            "eve",
            json!({"asset_id": cur["asset_id"], "q": 0.0, "a": 5.0, "c": 2.5}),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    let (s, _) = get_json(&app, "/session/eve").await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn scripted_study_round_trips_to_the_same_mos() {
    let dir = tempfile::tempdir().unwrap();
    let assets = synthetic_assets(9, 3);
    let m = manifest(9, dir.path());
    let scripted = scripted_ratings(&assets, 3, 0.3, 21);
    let app = make_app(dir.path(), &m, None);
    for subject in ["subj00", "subj01", "subj02"] {
        loop {
            let (s, cur) = get_json(&app, &format!("/session/{subject}/current")).await;
            if s != StatusCode::OK {
                break;
            }
            let id = cur["asset_id"].as_str().unwrap();
            let r = scripted
                .iter()
                .find(|r| r.subject_id == subject && r.asset_id == id)
                .unwrap();
            let (s, _) = post_rating(
                &app,
                subject,
                json!({"asset_id": id, "q": r.scores[0], "a": r.scores[1], "c": r.scores[2]}),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
        }
    }
    let (_, body) = call(
        &app,
        Request::get("/export.csv").body(Body::empty()).unwrap(),
    )
    .await;
    let csv_path = dir.path().join("export.csv");
    std::fs::write(&csv_path, body).unwrap();
    let exported = load_ratings(&csv_path).unwrap();
    assert_eq!(exported.len(), 27);

    let params = OutlierParams::default();
    let (direct, _) = process_ratings(&scripted, Some(&m), &params).unwrap();
    let (via_service, _) = process_ratings(&exported, Some(&m), &params).unwrap();
    for (a, b) in direct.iter().zip(&via_service) {
        assert_eq!(a.asset_id, b.asset_id);
        for d in 0..3 {
            assert!((a.mos[d] - b.mos[d]).abs() < 1e-9);
        }
    }
}
