use std::sync::Arc;

use asthmon_cli::api::{router, AppState};
use asthmon_core::gateway::DeviceToken;
use asthmon_core::model::{LungFunctionReading, Trigger};
use asthmon_core::observation::{Observation, Payload};
use asthmon_core::report::{render_cohort, ReportFormat, ReportOptions};
use asthmon_core::simulator::scenarios::{fall_pollen_case, winter_cohort_case, winter_pm25_case};
use asthmon_core::{AnalysisConfig, PatientId, Platform, Season};
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, NaiveDate, Utc};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn now() -> DateTime<Utc> {
    "2018-03-10T12:00:00Z".parse().unwrap()
}

fn platform() -> Platform {
    let p = Platform::in_memory(AnalysisConfig::default()).unwrap();
    winter_pm25_case().load_into(p.store()).unwrap();
    fall_pollen_case().load_into(p.store()).unwrap();
    for s in winter_cohort_case() {
        s.load_into(p.store()).unwrap();
    }
    p.gateway()
        .tokens()
        .register(DeviceToken {
            token: "device-secret".into(),
            bound_patient_id: PatientId::new("winter-pm25"),
            expiry: "2019-01-01T00:00:00Z".parse().unwrap(),
        })
        .unwrap();
    p
}

fn app(p: &Platform) -> Router {
    router(AppState::with_clock(p.clone(), Arc::new(now)))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let (status, _, body) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (status, body)
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (status, body) = get(app, uri).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

fn post(body: String, token: Option<&str>) -> Request<Body> {
    let mut req = Request::post("/v1/observations").header(header::CONTENT_TYPE, "application/x-ndjson");
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    req.body(Body::from(body)).unwrap()
}

/// A winter-pm25 reading `hour` hours into 2018-02-20, inside its deployment.
fn lung_line(hour: i64, pef: f64) -> String {
    let base: DateTime<Utc> = "2018-02-20T00:00:00Z".parse().unwrap();
    let ts = base + Duration::hours(hour);
    let r = LungFunctionReading { patient_id: PatientId::new("winter-pm25"), timestamp: ts, pef, fev1: 2.5 };
    Observation::new(Payload::Lung(r), ts).to_json_line()
}

#[tokio::test]
async fn triggers_equal_library_call() {
    let p = platform();
    let app = app(&p);
    let id = PatientId::new("winter-pm25");
    let body = get_json(&app, "/v1/patients/winter-pm25/triggers").await;
    assert_eq!(body, serde_json::to_value(p.triggers(&id, None).unwrap()).unwrap());

    let end = NaiveDate::from_ymd_opt(2018, 1, 15).unwrap();
    let body = get_json(&app, "/v1/patients/winter-pm25/triggers?learning_end=2018-01-15").await;
    assert_eq!(body, serde_json::to_value(p.triggers(&id, Some(end)).unwrap()).unwrap());
    assert_eq!(body["learning"]["period"]["range"]["end"], "2018-01-15");
}

#[tokio::test]
async fn every_read_endpoint_matches_the_library() {
    let p = platform();
    let app = app(&p);
    let id = PatientId::new("winter-pm25");
    let cases: Vec<(&str, Value)> = vec![
        ("/v1/patients", serde_json::to_value(p.patients()).unwrap()),
        ("/v1/patients/winter-pm25/summary", serde_json::to_value(p.summary(&id).unwrap()).unwrap()),
        ("/v1/patients/winter-pm25/episodes", serde_json::to_value(p.episodes(&id).unwrap()).unwrap()),
        (
            "/v1/patients/winter-pm25/timeline?from=2017-12-10&to=2017-12-20",
            serde_json::to_value(
                p.timeline_view(&id, NaiveDate::from_ymd_opt(2017, 12, 10), NaiveDate::from_ymd_opt(2017, 12, 20)).unwrap(),
            )
            .unwrap(),
        ),
        ("/v1/cohort/triggers?season=winter", serde_json::to_value(p.cohort(Season::Winter).unwrap()).unwrap()),
        ("/v1/cohort/triggers", serde_json::to_value(p.cohort_overview().unwrap()).unwrap()),
        ("/v1/config", serde_json::to_value(p.config()).unwrap()),
    ];
    for (uri, expected) in cases {
        assert_eq!(get_json(&app, uri).await, expected, "{uri}");
    }
}

#[tokio::test]
async fn repeated_queries_are_byte_identical() {
    let p = platform();
    let app = app(&p);
    for uri in [
        "/v1/patients",
        "/v1/patients/winter-pm25/timeline",
        "/v1/patients/winter-pm25/triggers",
        "/v1/patients/fall-pollen/summary",
        "/v1/patients/winter-pm25/report?format=csv",
        "/v1/cohort/triggers?season=winter",
        "/v1/alerts",
    ] {
        let first = get(&app, uri).await;
        let second = get(&app, uri).await;
        assert_eq!(first.0, StatusCode::OK, "{uri}");
        assert_eq!(first, second, "{uri}");
    }
}

#[tokio::test]
async fn timeline_window_is_day_aligned() {
    let app = app(&platform());
    let body = get_json(&app, "/v1/patients/winter-pm25/timeline?from=2017-12-10&to=2017-12-16").await;
    let days = body["days"].as_array().unwrap();
    assert_eq!(days.len(), 7);
    assert_eq!(days[0]["date"], "2017-12-10");
    assert_eq!(days[6]["date"], "2017-12-16");
}

#[tokio::test]
async fn reports_render_each_format() {
    let p = platform();
    let app = app(&p);
    let id = PatientId::new("winter-pm25");
    let report = p.report(&id, &ReportOptions::default()).unwrap();
    for (format, mime) in [("csv", "text/csv"), ("md", "text/markdown"), ("json", "application/json")] {
        let uri = format!("/v1/patients/winter-pm25/report?format={format}");
        let (status, headers, body) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert!(headers[header::CONTENT_TYPE].to_str().unwrap().starts_with(mime));
        assert_eq!(String::from_utf8(body).unwrap(), report.render(format.parse().unwrap()));
    }
    let (status, _) = get(&app, "/v1/patients/winter-pm25/report?format=pdf").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn errors_map_to_statuses() {
    let app = app(&platform());
    let cases = [
        ("/v1/patients/nobody/summary", StatusCode::NOT_FOUND),
        ("/v1/patients/nobody/triggers", StatusCode::NOT_FOUND),
        ("/v1/patients/winter-pm25/triggers?learning_end=tomorrow", StatusCode::BAD_REQUEST),
        ("/v1/patients/winter-pm25/triggers?learning_end=2030-01-01", StatusCode::UNPROCESSABLE_ENTITY),
        ("/v1/patients/winter-pm25/timeline?from=2018-01-10&to=2018-01-01", StatusCode::BAD_REQUEST),
        ("/v1/cohort/triggers?season=monsoon", StatusCode::BAD_REQUEST),
        ("/v1/cohort/triggers?season=summer", StatusCode::UNPROCESSABLE_ENTITY),
        ("/v1/alerts?bogus=1", StatusCode::BAD_REQUEST),
        ("/v2/patients", StatusCode::NOT_FOUND),
    ];
    for (uri, expected) in cases {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, expected, "{uri}: {}", String::from_utf8_lossy(&body));
        let body: Value = serde_json::from_slice(&body).unwrap();
        assert!(body["error"].is_string() && body["message"].is_string(), "{uri}");
    }
}

#[tokio::test]
async fn ingest_statuses() {
    let p = platform();
    let app = app(&p);

    let (status, _, _) = send(&app, post(lung_line(1, 300.0), None)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _, _) = send(&app, post(lung_line(1, 300.0), Some("wrong"))).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let batch = format!("{}\n{}\n", lung_line(1, 300.0), lung_line(2, 310.0));
    let (status, _, body) = send(&app, post(batch.clone(), Some("device-secret"))).await;
    assert_eq!(status, StatusCode::OK);
    let receipt: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(receipt["accepted"], 2);

    // Resending the same batch is acknowledged as duplicates.
    let (status, _, body) = send(&app, post(batch, Some("device-secret"))).await;
    assert_eq!(status, StatusCode::OK);
    let receipt: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!((receipt["accepted"].as_u64(), receipt["duplicates"].as_u64()), (Some(0), Some(2)));

    let partial = format!("{}\nnot json\n", lung_line(3, 320.0));
    let (status, _, body) = send(&app, post(partial, Some("device-secret"))).await;
    assert_eq!(status, StatusCode::MULTI_STATUS);
    let receipt: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(receipt["accepted"], 1);
    assert_eq!(receipt["rejected"][0]["index"], 1);

    let huge: String = (0..10_001).map(|i| lung_line(10 + i, 300.0) + "\n").collect();
    let before = p.store().read().len();
    let (status, _, _) = send(&app, post(huge, Some("device-secret"))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(p.store().read().len(), before);

    p.store().suspend();
    let (status, headers, _) = send(&app, post(lung_line(4, 330.0), Some("device-secret"))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(headers.contains_key(header::RETRY_AFTER));
    p.store().resume();
    let (status, _, _) = send(&app, post(lung_line(4, 330.0), Some("device-secret"))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn reads_follow_the_latest_commit() {
    let p = platform();
    let app = app(&p);
    let before = get(&app, "/v1/patients/winter-pm25/timeline?from=2018-02-20&to=2018-02-20").await;
    let (status, _, _) = send(&app, post(lung_line(1, 300.0) + "\n", Some("device-secret"))).await;
    assert_eq!(status, StatusCode::OK);
    let after = get(&app, "/v1/patients/winter-pm25/timeline?from=2018-02-20&to=2018-02-20").await;
    assert_ne!(before.1, after.1);
}

#[tokio::test]
async fn alerts_endpoint_filters_stored_alerts() {
    let p = platform();
    let date = NaiveDate::from_ymd_opt(2017, 9, 13).unwrap();
    let produced = p.run_alerts(date).unwrap();
    assert!(!produced.is_empty());
    let app = app(&p);
    let all = get_json(&app, "/v1/alerts").await;
    assert_eq!(all, serde_json::to_value(p.alerts(None, None, None)).unwrap());
    let mine = get_json(&app, "/v1/alerts?patient_id=fall-pollen&from=2017-09-13&to=2017-09-13").await;
    let mine = mine.as_array().unwrap();
    assert!(!mine.is_empty());
    assert!(mine.iter().all(|a| a["patient_id"] == "fall-pollen" && a["date"] == "2017-09-13"));
    let none = get_json(&app, "/v1/alerts?patient_id=fall-pollen&from=2030-01-01").await;
    assert_eq!(none, Value::Array(vec![]));
}

#[tokio::test]
async fn config_exposes_healthy_ranges() {
    let p = platform();
    let body = get_json(&app(&p), "/v1/config").await;
    assert_eq!(body["healthy"], serde_json::to_value(p.config().healthy).unwrap());
    assert_eq!(body["prolonged_window"], 7);
    assert_eq!(body["prolonged_min"], 5);
}

#[tokio::test]
async fn cohort_markdown_lists_major_triggers() {
    let p = platform();
    let app = app(&p);
    let (status, body) = get(&app, "/v1/cohort/triggers?season=winter&format=md").await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    let summary = p.cohort(Season::Winter).unwrap();
    assert_eq!(text, render_cohort(&summary, ReportFormat::Markdown));
    let pm25 = summary.major_trigger_counts[&Trigger::Pm25];
    assert!(text.contains(&format!("| {} | {pm25} |", Trigger::Pm25.label())), "{text}");
}
