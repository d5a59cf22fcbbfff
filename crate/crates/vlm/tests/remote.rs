use std::sync::Arc;

use poivre_core::canvas::{Raster, Rgb};
use poivre_core::geometry::{Point, TargetRegion};
use poivre_core::rollout::{run_poivre, ParseFailure, RolloutConfig};
use poivre_core::task::{ImageRef, PointingTask};
use poivre_vlm::stub::{StubReply, StubServer};
use poivre_vlm::{AttemptOutcome, EndpointConfig, VlmClient, VlmError, VlmPolicy};

fn config(server: &StubServer, retries: u32) -> EndpointConfig {
    EndpointConfig {
        base_url: server.base_url().to_string(),
        model: "stub-model".into(),
        api_key_env: None,
        max_retries: retries,
        backoff_ms: 0,
        timeout_secs: 10.0,
        ..EndpointConfig::default()
    }
}

fn client(server: &StubServer, retries: u32) -> VlmClient {
    VlmClient::with_key(config(server, retries), Some("secret".into())).unwrap()
}

fn gray(w: u32, h: u32) -> Raster {
    Raster::filled(w, h, Rgb([200, 200, 200])).unwrap()
}

fn task() -> PointingTask {
    PointingTask::new(
        "remote-1",
        ImageRef::Raster(Arc::new(gray(101, 81))),
        "the mug",
        vec![TargetRegion::disc(Point::new(12.0, 22.0), 4.0).unwrap()],
    )
    .unwrap()
}

#[test]
fn json_reply_round_trip() {
    let server = StubServer::start(vec![StubReply::Text(r#"[{"x":10,"y":20}]"#.into())]).unwrap();
    let reply = client(&server, 0).remote_act(&[gray(16, 16)], "the mug", 1).unwrap();
    assert_eq!(reply.points, vec![Point::new(10.0, 20.0)]);
    assert_eq!(reply.attempts.len(), 1);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer secret"));
    let body = reqs[0].json().unwrap();
    assert_eq!(body["model"], "stub-model");
    assert!(reqs[0].prompt().unwrap().contains("the mug"));
    assert_eq!(reqs[0].images().len(), 1);
}

#[test]
fn prose_reply_uses_fallback_grammar() {
    let server = StubServer::start(vec![StubReply::Text(
        "The mug is at (55.5, 44.5) in the picture.".into(),
    )])
    .unwrap();
    let reply = client(&server, 0).remote_act(&[gray(8, 8)], "q", 1).unwrap();
    assert_eq!(reply.points, vec![Point::new(55.5, 44.5)]);
}

#[test]
fn server_errors_are_retried() {
    let server = StubServer::start(vec![
        StubReply::Status(500, "boom".into()),
        StubReply::Status(503, "busy".into()),
        StubReply::Text(r#"{"x": 1, "y": 2}"#.into()),
    ])
    .unwrap();
    let reply = client(&server, 3).remote_act(&[gray(8, 8)], "q", 1).unwrap();
    assert_eq!(reply.points, vec![Point::new(1.0, 2.0)]);
    assert_eq!(reply.attempts.len(), 3);
    assert_eq!(reply.attempts[0].outcome, AttemptOutcome::Status { status: 500 });
    assert_eq!(reply.attempts[1].outcome, AttemptOutcome::Status { status: 503 });
    assert_eq!(reply.attempts[2].outcome, AttemptOutcome::Ok);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn retries_run_out() {
    let server = StubServer::start(vec![StubReply::Status(500, "down".into())]).unwrap();
    let err = client(&server, 2).remote_act(&[gray(8, 8)], "q", 1).unwrap_err();
    assert!(matches!(err, VlmError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.requests().len(), 3);
    let core: poivre_core::Error = err.into();
    assert!(matches!(core, poivre_core::Error::Endpoint(_)));
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(vec![StubReply::Status(401, "bad key".into())]).unwrap();
    let err = client(&server, 3).remote_act(&[gray(8, 8)], "q", 1).unwrap_err();
    assert!(matches!(err, VlmError::Status { status: 401, .. }));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn parse_failures_are_retried_then_surface() {
    let server = StubServer::start(vec![
        StubReply::Text("I cannot see a mug.".into()),
        StubReply::Text("[{\"x\": 30, \"y\": 40}]".into()),
    ])
    .unwrap();
    let reply = client(&server, 1).remote_act(&[gray(8, 8)], "q", 1).unwrap();
    assert_eq!(reply.points, vec![Point::new(30.0, 40.0)]);
    assert!(matches!(reply.attempts[0].outcome, AttemptOutcome::ParseFailure { .. }));

    let server = StubServer::start(vec![StubReply::Text("no idea".into())]).unwrap();
    let err = client(&server, 1).remote_act(&[gray(8, 8)], "q", 1).unwrap_err();
    assert!(matches!(err, VlmError::Parse { attempts: 2, .. }));
    assert!(matches!(poivre_core::Error::from(err), poivre_core::Error::Parse(_)));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let cfg = EndpointConfig {
        base_url: "http://127.0.0.1:9/v1".into(),
        api_key_env: None,
        max_retries: 1,
        backoff_ms: 0,
        timeout_secs: 2.0,
        ..EndpointConfig::default()
    };
    let err = VlmClient::new(cfg).unwrap().remote_act(&[gray(8, 8)], "q", 1).unwrap_err();
    assert!(matches!(err, VlmError::Transport { attempts: 2, .. }), "{err:?}");
}

#[test]
fn second_turn_sees_first_marker() {
    let server = StubServer::start(vec![
        StubReply::Text(r#"[{"x": 40, "y": 60}]"#.into()),
        StubReply::Text(r#"[{"x": 12, "y": 22}]"#.into()),
    ])
    .unwrap();
    let mut policy = VlmPolicy::new(Arc::new(client(&server, 0)));
    let cfg = RolloutConfig::with_turns(2);
    let traj = run_poivre(&mut policy, &task(), &cfg).unwrap();
    assert_eq!(traj.turns(), 2);
    assert_eq!(traj.final_points(), &[Point::new(12.0, 22.0)]);
    assert!(traj.logprobs.is_none());

    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    let first = &reqs[0].images()[0];
    let second = &reqs[1].images()[0];
    let (px, py) = Point::new(40.0, 60.0).to_pixel(101, 81);
    assert_eq!((px, py), (40, 48));
    assert_ne!(first.get(px, py), Rgb::BROWN);
    assert_eq!(second.get(px, py), Rgb::BROWN);
    assert!(reqs[1].prompt().unwrap().contains("turn 2"));
}

#[test]
fn penalized_parse_failure_keeps_going() {
    let server = StubServer::start(vec![
        StubReply::Text("hmm".into()),
        StubReply::Text(r#"[{"x": 12, "y": 22}]"#.into()),
    ])
    .unwrap();
    let mut policy = VlmPolicy::new(Arc::new(client(&server, 0)));
    let cfg = RolloutConfig {
        on_parse_failure: ParseFailure::Penalize,
        ..RolloutConfig::with_turns(2)
    };
    let traj = run_poivre(&mut policy, &task(), &cfg).unwrap();
    assert_eq!(traj.failed_turns, vec![0]);
    assert!(traj.points[0].is_empty());
    assert_eq!(traj.distances[0], poivre_core::geometry::MAX_DISTANCE);
    assert_eq!(traj.distances[1], 0.0);
}

#[test]
fn identical_scripts_give_identical_trajectories() {
    let run = || {
        let server = StubServer::start(vec![
            StubReply::Text("[{\"x\": 33.3, \"y\": 44.4}]".into()),
            StubReply::Text("(12.5, 20.25)".into()),
        ])
        .unwrap();
        let mut policy = VlmPolicy::new(Arc::new(client(&server, 0)));
        run_poivre(&mut policy, &task(), &RolloutConfig::with_turns(2)).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn transcript_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let server = StubServer::start(vec![StubReply::Text("[{\"x\":1,\"y\":1}]".into())]).unwrap();
    let cfg = EndpointConfig {
        transcript: Some(path.clone()),
        ..config(&server, 0)
    };
    VlmClient::with_key(cfg, None)
        .unwrap()
        .remote_act(&[gray(4, 4)], "q", 1)
        .unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(line["status"], 200);
    assert_eq!(line["turn"], 1);
}
