mod common;

use std::fs;

use common::{chat_bodies, numbered_chat, schema_with, tree_bytes, Workspace};
use schema_miner_testkit::{embedding_server, ols_server, scripted_chat, ChatReply, OlsDoc};
use serde_json::json;

#[test]
fn settings_precedence_dotenv_env_flag() {
    let ws = Workspace::new(1, 0);
    ws.write(".env", "LLM_MODEL=from-dotenv\nDATA_DIR=dotenv-data\nRUNS_DIR=dotenv-runs\nLLM_API_KEY=sk-very-secret\n");
    let out = ws.run_with_env(
        &["config", "--model", "from-flag"],
        &[("LLM_MODEL", "from-env"), ("DATA_DIR", "env-data")],
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    let s = &out.json()["settings"];
    assert_eq!(s["LLM_MODEL"], json!({"value": "from-flag", "source": "flag"}));
    assert_eq!(s["DATA_DIR"], json!({"value": "env-data", "source": "environment"}));
    assert_eq!(s["RUNS_DIR"], json!({"value": "dotenv-runs", "source": "dotenv"}));
    assert_eq!(s["LLM_API_KEY"]["value"], "***");
    assert!(!out.stdout.contains("sk-very-secret") && !out.stderr.contains("sk-very-secret"));

    let out = ws.run_with_env(&["config"], &[("LLM_MODEL", "from-env")]);
    assert_eq!(out.json()["settings"]["LLM_MODEL"]["value"], "from-env");
    let out = ws.run(&["config"]);
    assert_eq!(out.json()["settings"]["LLM_MODEL"]["value"], "from-dotenv");
}

#[test]
fn stage1_writes_generate_snapshot_with_default_model_settings() {
    let ws = Workspace::new(1, 0);
    let chat = numbered_chat();
    ws.env_for(&chat, &[]);
    let out = ws.run(&["stage1", "--run-id", "first"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let line = out.json();
    assert_eq!(line["run_id"], "first");
    assert_eq!(line["status"], "Completed");
    let snap = ws.runs().join("first/Generate/000.schema.json");
    assert!(snap.is_file());
    assert!(fs::read_to_string(snap).unwrap().contains("\"p1\""));

    let bodies = chat_bodies(&chat);
    assert_eq!(bodies.len(), 1);
    assert_eq!(bodies[0]["temperature"], json!(0.3));
    assert_eq!(bodies[0]["options"]["num_ctx"], json!(128000));
    assert_eq!(bodies[0]["model"], "mock-model");
    let auth = chat.requests()[0].headers.get("authorization").cloned().unwrap_or_default();
    assert_eq!(auth, "Bearer sk-test-secret");
    assert!(!out.stderr.contains("sk-test-secret"));
}

#[test]
fn stage2_without_feedback_opens_no_gates() {
    let ws = Workspace::new(3, 0);
    let chat = numbered_chat();
    ws.env_for(&chat, &[]);
    let out = ws.run(&["stage2", "--run-id", "nofb", "--feedback-mode", "none"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let line = out.json();
    assert_eq!(line["status"], "Completed");
    assert_eq!(line["snapshots"].as_array().unwrap().len(), 4);
    assert!(line.get("pending_review").is_none());
    assert!(!out.stderr.contains("review needed"));
    assert!(!ws.runs().join("nofb/pending-review.json").exists());
    assert_eq!(chat_bodies(&chat).len(), 4);
}

#[test]
fn parked_stage2_then_feedback_then_resume() {
    let ws = Workspace::new(2, 0);
    let chat = numbered_chat();
    ws.env_for(&chat, &[]);
    let out = ws.run(&["stage2", "--run-id", "parked", "--feedback-mode", "descriptive", "--cadence", "first", "--park"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let line = out.json();
    assert_eq!(line["status"], "AwaitingFeedback");
    assert_eq!(line["pending_review"]["iteration"], 1);

    let show = ws.run(&["feedback", "show", "--run-id", "parked"]).json();
    assert_eq!(show["ticket"]["stage"], "Refine");
    assert_eq!(show["ticket"]["guiding_questions"].as_array().unwrap().len(), 4);

    // wrong channel for a descriptive-only run
    ws.write("edit.json", &format!(r#"{{"edited_schema": {}}}"#, schema_with(&["x"])));
    let bad = ws.run(&["feedback", "submit", "--run-id", "parked", "--file", "edit.json"]);
    assert_eq!(bad.code, 1);
    assert_eq!(bad.error()["code"], "FeedbackChannelMismatch");
    assert_eq!(bad.error()["run_id"], "parked");

    let ok = ws.run(&["feedback", "submit", "--run-id", "parked", "--descriptive", "Merge p1 into a process block."]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert_eq!(ok.json()["accepted"], true);
    let again = ws.run(&["feedback", "submit", "--run-id", "parked", "--descriptive", "again"]);
    assert_eq!(again.error()["code"], "NoPendingTicket");

    let resumed = ws.run(&["resume", "parked", "--park"]);
    assert_eq!(resumed.code, 0, "{}", resumed.stderr);
    assert_eq!(resumed.json()["status"], "Completed");
    let bodies = chat_bodies(&chat);
    assert_eq!(bodies.len(), 3);
    assert!(common::user_message(&bodies[1]).contains("Merge p1 into a process block."));
}

#[test]
fn usage_and_run_failures_have_distinct_exit_codes() {
    let ws = Workspace::new(1, 0);
    let out = ws.run(&["stage3", "--run-id", "r"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "ConfirmationRequired");

    let out = ws.run(&["stage2", "--feedback-mode", "none", "--cadence", "every"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "BadFeedbackMode");

    let out = ws.run(&["stage1", "--run-id", "r"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "MissingConfig");

    let out = ws.run(&["stage1", "--run-id", "../escape", "--base-url", "http://127.0.0.1:9", "--model", "m"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "InvalidRunId");

    let denied = scripted_chat(vec![ChatReply::Status(401)]);
    ws.env_for(&denied, &[]);
    let out = ws.run(&["stage1", "--run-id", "denied"]);
    assert_eq!(out.code, 1);
    let err = out.error();
    assert_eq!(err["code"], "AuthFailure");
    assert_eq!(err["run_id"], "denied");
    assert_eq!(out.stderr.lines().filter(|l| l.starts_with('{')).count(), 1);
    let status = ws.run(&["status", "denied"]).json();
    assert_eq!(status["run"]["status"], "Failed");

    let out = ws.run(&["resume", "ghost"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "UnknownRun");
}

#[test]
fn every_subcommand_dry_run_is_inert() {
    let ws = Workspace::new(2, 1);
    let chat = numbered_chat();
    ws.env_for(&chat, &[("OLS_BASE_URL", "http://127.0.0.1:9"), ("EMBED_BASE_URL", "http://127.0.0.1:9")]);
    assert_eq!(ws.run(&["stage1", "--run-id", "base"]).code, 0);
    let schema = ws.runs().join("base/Generate/000.schema.json");
    fs::copy(&schema, ws.path("a.json")).unwrap();
    ws.write("b.json", &schema_with(&["q"]));
    ws.write("fb.json", r#"{"descriptive": "fine"}"#);
    let requests = chat.request_count();
    let before = tree_bytes(ws.root.path());

    let commands: Vec<Vec<&str>> = vec![
        vec!["init"],
        vec!["convert"],
        vec!["stage1", "--run-id", "dry"],
        vec!["stage2", "--run-id", "dry", "--feedback-mode", "combined"],
        vec!["stage2", "--run-id", "base"],
        vec!["stage3", "--run-id", "base", "--confirm"],
        vec!["resume", "base"],
        vec!["experiment", "--matrix", "--models", "a,b"],
        vec!["ground", "base/Generate/0"],
        vec!["compare", "a.json", "b.json"],
        vec!["compare", "--runs", "base", "base2"],
        vec!["serve", "--bind", "127.0.0.1:0"],
        vec!["feedback", "show", "--run-id", "base"],
        vec!["status"],
    ];
    for args in &commands {
        let mut full = args.clone();
        full.push("--dry-run");
        let out = ws.run(&full);
        if args[1..].contains(&"base2") {
            assert_eq!(out.code, 2, "{args:?}");
            continue;
        }
        assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
        let line = out.json();
        assert_eq!(line["ok"], true, "{args:?}");
    }
    assert_eq!(chat.request_count(), requests);
    assert_eq!(tree_bytes(ws.root.path()), before);
}

#[test]
fn experiment_matrix_schedules_and_parks() {
    let ws = Workspace::new(2, 0);
    let chat = numbered_chat();
    ws.env_for(&chat, &[]);
    let plan = ws.run(&["experiment", "--matrix", "--models", "m-one,m-two,m-three", "--dry-run"]).json();
    assert_eq!(plan["scheduled"], 21);
    let mut ids: Vec<String> = plan["runs"].as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap().to_string()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 21);

    let out = ws.run(&["experiment", "--matrix", "--models", "solo", "--prefix", "b", "--parallel", "3"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let line = out.json();
    assert_eq!(line["scheduled"], 7);
    assert_eq!(line["completed"], 1);
    assert_eq!(line["awaiting_feedback"], 6);
    let runs = line["runs"].as_array().unwrap();
    let four = runs.iter().find(|r| r["experiment"] == "4").unwrap();
    assert_eq!(four["status"], "Completed");
    assert!(runs.iter().all(|r| r["run_id"].as_str().unwrap().starts_with("b-solo-exp")));
    // 7 Stage 1 calls plus 2 for the ungated run
    assert_eq!(chat_bodies(&chat).len(), 9);
    // a second pass resumes rather than recreating
    let again = ws.run(&["experiment", "--matrix", "--models", "solo", "--prefix", "b"]);
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert_eq!(chat_bodies(&chat).len(), 9);
}

#[test]
fn ground_snapshot_writes_report_beside_it() {
    let ws = Workspace::new(1, 0);
    let chat = scripted_chat(vec![ChatReply::Content(schema_with(&["filmThickness", "growthPerCycle"]))]);
    let ols = ols_server(|q, kind| {
        Some(vec![
            OlsDoc::new(&format!("http://o/{}", q.replace(' ', "_")), q, &[&format!("{q} measured")], "chmo", kind),
            OlsDoc::new("http://o/none", q, &[], "chmo", kind),
        ])
    });
    let emb = embedding_server(|t| vec![t.len() as f64, 1.0]);
    ws.env_for(&chat, &[("OLS_BASE_URL", &ols.url()), ("EMBED_BASE_URL", &emb.url())]);
    assert_eq!(ws.run(&["stage1", "--run-id", "g"]).code, 0);
    let out = ws.run(&["ground", "g/Generate/0", "--kinds", "class"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let line = out.json();
    assert_eq!(line["entries"], 2);
    assert_eq!(line["matched"], 2);
    let path = ws.runs().join("g/Generate/000.grounding.json");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    for e in report["entries"].as_array().unwrap() {
        assert_eq!(e["status"], "matched");
        let c = e["candidates"].as_array().unwrap();
        assert_eq!(c.len(), 1, "descriptionless hit must be dropped");
    }
    let q: Vec<String> = ols.requests().iter().map(|r| r.query["q"].clone()).collect();
    assert!(q.contains(&"film thickness".to_string()));
}

#[test]
fn compare_runs_prints_one_block_per_shared_stage() {
    let ws = Workspace::new(2, 0);
    let chat = numbered_chat();
    ws.env_for(&chat, &[]);
    for id in ["left", "right"] {
        assert_eq!(ws.run(&["stage2", "--run-id", id]).code, 0);
    }
    let out = ws.run(&["compare", "--runs", "left", "right"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.stdout.matches("Stage: ").count(), 2);
    assert!(out.stdout.contains("Stage: Generate (fields: full)"));
    assert!(out.stdout.contains("Stage: Refine (fields: full)"));
    assert!(out.stdout.contains("n/a"));

    let json_out = ws.run(&["compare", "left=left/Refine/2", "right=right/Refine/2", "--format", "json", "--fields", "descriptions"]);
    assert_eq!(json_out.code, 0, "{}", json_out.stderr);
    let r = &json_out.json()["reports"][0];
    assert_eq!(r["fields"], "descriptions");
    assert!(r["cells"]["left"]["right"]["rouge_l"].is_number());
}

#[test]
fn init_scaffolds_once() {
    let ws = Workspace::new(0, 0);
    let out = ws.run(&["init"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    for rel in [
        ".env",
        "data/ontologies.txt",
        "data/templates/prompt_template1.txt",
        "data/templates/prompt_template3.txt",
    ] {
        assert!(ws.path(rel).is_file(), "{rel}");
    }
    assert!(ws.path("data/stage-2/research-papers").is_dir());
    ws.write(".env", "LLM_MODEL=mine\n");
    let out = ws.run(&["init"]);
    assert_eq!(out.json()["skipped"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(ws.path(".env")).unwrap(), "LLM_MODEL=mine\n");
}

#[test]
fn serve_refuses_remote_bind_without_token() {
    let ws = Workspace::new(0, 0);
    let out = ws.run(&["serve", "--bind", "0.0.0.0:0"]);
    assert_eq!(out.code, 2);
    assert_eq!(out.error()["code"], "TokenRequired");
}
