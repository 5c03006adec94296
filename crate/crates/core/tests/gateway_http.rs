use std::time::Duration;

use schema_miner::gateway::{
    complete_schema_with_repair, ApiKey, ChatModel, GatewayError, HttpChatClient, ModelConfig, RetryPolicy,
};
use schema_miner::prompt::{PromptEngine, PromptPair, TemplateSet};
use schema_miner::text::CharEstimator;
use schema_miner_testkit::{scripted_chat, ChatReply, MockServer};

fn fast_config(server: &MockServer) -> ModelConfig {
    let mut cfg = ModelConfig::new(format!("{}/v1", server.url()), "mock-model");
    cfg.api_key = ApiKey::new("test-key");
    cfg.retry = RetryPolicy {
        max_tries: 5,
        base_delay: Duration::from_millis(5),
        factor: 2.0,
    };
    cfg.request_timeout = Duration::from_secs(10);
    cfg
}

fn prompt() -> PromptPair {
    PromptEngine::new(TemplateSet::default())
        .render_generate("Atomic layer deposition process specification.")
        .unwrap()
}

const VALID: &str = r#"{"type":"object","properties":{"temperature":{"type":"number"}}}"#;

#[test]
fn raw_text_passes_through() {
    let server = scripted_chat(vec![ChatReply::Content("fixture text".into())]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    let result = client.complete(&prompt()).unwrap();
    assert_eq!(result.raw_text, "fixture text");

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].headers["authorization"], "Bearer test-key");
    let body = reqs[0].json();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["options"]["num_ctx"], 128_000);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], prompt().user);
}

#[test]
fn unauthorized_is_not_retried() {
    let server = scripted_chat(vec![ChatReply::Status(401)]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    let err = client.complete(&prompt()).unwrap_err();
    assert!(matches!(err, GatewayError::AuthFailure { status: 401 }));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn transient_failures_back_off_then_succeed() {
    let server = scripted_chat(vec![
        ChatReply::Status(503),
        ChatReply::Status(503),
        ChatReply::Content("ok".into()),
    ]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    assert_eq!(client.complete(&prompt()).unwrap().raw_text, "ok");
    assert_eq!(server.request_count(), 3);
}

#[test]
fn gives_up_after_max_tries() {
    let server = scripted_chat(vec![ChatReply::Status(429)]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    match client.complete(&prompt()).unwrap_err() {
        GatewayError::EndpointUnreachable { attempts, .. } => assert_eq!(attempts, 5),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.request_count(), 5);
}

#[test]
fn unreachable_host() {
    let server = scripted_chat(vec![ChatReply::Content("x".into())]);
    let mut cfg = fast_config(&server);
    drop(server);
    cfg.retry.max_tries = 2;
    let client = HttpChatClient::new(cfg).unwrap();
    assert!(matches!(
        client.complete(&prompt()),
        Err(GatewayError::EndpointUnreachable { attempts: 2, .. })
    ));
}

#[test]
fn truncated_and_garbage_replies() {
    let server = scripted_chat(vec![ChatReply::Truncated("{\"type\":".into()), ChatReply::Garbage]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    assert!(matches!(client.complete(&prompt()), Err(GatewayError::ResponseTruncated { .. })));
    assert!(matches!(client.complete(&prompt()), Err(GatewayError::ProtocolError(_))));
}

#[test]
fn other_client_errors_are_rejected_without_retry() {
    let server = scripted_chat(vec![ChatReply::Status(400)]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    assert!(matches!(client.complete(&prompt()), Err(GatewayError::Rejected { status: 400, .. })));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn identical_calls_send_identical_bodies() {
    let server = scripted_chat(vec![ChatReply::Content("same".into())]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    let p = prompt();
    let before = p.clone();
    client.complete(&p).unwrap();
    client.complete(&p).unwrap();
    assert_eq!(p, before);
    let reqs = server.requests();
    assert_eq!(reqs[0].body, reqs[1].body);
}

#[test]
fn num_ctx_can_be_disabled() {
    let server = scripted_chat(vec![ChatReply::Content("x".into())]);
    let mut cfg = fast_config(&server);
    cfg.send_num_ctx = false;
    HttpChatClient::new(cfg).unwrap().complete(&prompt()).unwrap();
    assert!(server.requests()[0].json().get("options").is_none());
}

#[test]
fn repair_loop_over_http() {
    let server = scripted_chat(vec![
        ChatReply::Content("Here you go: {\"type\": \"object\", \"properties\": {".into()),
        ChatReply::Content(format!("```json\n{VALID}\n```")),
    ]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    let out = complete_schema_with_repair(&client, &prompt(), &CharEstimator).unwrap();
    assert_eq!(out.attempts, 2);
    assert_eq!(out.transcript.len(), 2);
    let second = server.requests()[1].json();
    let user = second["messages"][1]["content"].as_str().unwrap();
    assert!(user.starts_with(&prompt().user));
    assert!(user.contains("Your previous output failed to parse"));
}

#[test]
fn repair_exhausts_after_configured_attempts() {
    let server = scripted_chat(vec![ChatReply::Content("{not json".into())]);
    let client = HttpChatClient::new(fast_config(&server)).unwrap();
    match complete_schema_with_repair(&client, &prompt(), &CharEstimator) {
        Err(GatewayError::RepairExhausted { transcript, .. }) => assert_eq!(transcript.len(), 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.request_count(), 3);
}
