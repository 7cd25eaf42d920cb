//! Command-line behaviors: batch commands, failure isolation, trace
//! artifacts, evaluation, and the interactive chat loop.

mod common;

use std::fs;
use std::io::Write as _;
use std::process::{Command, Stdio};

use common::{base_config, fixture_path, load_fixture_dialogues, warm_cache};
use medigraph_core::clients::CacheMode;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_medigraph")
}

fn write_config(
    tmp: &std::path::Path,
    config: &medigraph_core::config::PipelineConfig,
) -> std::path::PathBuf {
    let path = tmp.join("config.toml");
    fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn extract_matches_golden_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let out = tmp.path().join("extraction.jsonl");

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "extract",
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let produced = fs::read_to_string(&out).unwrap();
    let golden = fs::read_to_string(fixture_path("golden_extraction.jsonl")).unwrap();
    assert_eq!(produced, golden);

    // Summary counts go to stderr.
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("extracted 10 dialogues"), "{stderr}");
}

#[test]
fn missing_lexicon_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(tmp.path());
    config.paths.lexicon = Some(tmp.path().join("nope.json"));
    let config_path = write_config(tmp.path(), &config);

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "extract",
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("lexicon"), "{stderr}");
}

#[test]
fn empty_dialogue_file_is_empty_dump_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("extraction.jsonl");

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "extract",
            "--dialogues",
            empty.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn build_graph_emits_round_trippable_graphs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let out = tmp.path().join("graphs.jsonl");

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "build-graph",
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let body = fs::read_to_string(&out).unwrap();
    assert_eq!(body.lines().count(), 10);
    for line in body.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        let graph: medigraph_core::patient_graph::PatientGraph =
            serde_json::from_value(row["graph"].clone()).unwrap();
        assert!(graph.version() > 0);
        assert!(!graph.concept_nodes().is_empty());
    }
}

#[test]
fn poisoned_cache_isolates_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let dialogues = load_fixture_dialogues("dialogues.jsonl");
    // Warm the cache for all but the last dialogue.
    warm_cache(&config, &dialogues[..9]);

    let mut replay = config.clone();
    replay.clients.cache_mode = CacheMode::Replay;
    let config_path = write_config(tmp.path(), &replay);
    let out = tmp.path().join("predictions.jsonl");

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "recommend",
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    // Handled per-row failures are not fatal.
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let body = fs::read_to_string(&out).unwrap();
    let rows: Vec<serde_json::Value> =
        body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let failures: Vec<&serde_json::Value> =
        rows.iter().filter(|r| r.get("error").is_some()).collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["id"], "d10");
    assert!(failures[0]["error"].as_str().unwrap().contains("replay miss"));
}

#[test]
fn trace_flag_dumps_intermediate_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let dialogues = load_fixture_dialogues("dialogues.jsonl");
    warm_cache(&config, &dialogues);

    let mut replay = config.clone();
    replay.clients.cache_mode = CacheMode::Replay;
    let config_path = write_config(tmp.path(), &replay);
    let out = tmp.path().join("predictions.jsonl");

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "--trace",
            "recommend",
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    for dialogue in &dialogues {
        let trace_path = replay.output.dir.join("trace").join(format!("{}.json", dialogue.id));
        let trace: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&trace_path).unwrap()).unwrap();
        assert!(trace.get("graph").is_some());
        assert!(trace.get("bundle").is_some());
        assert!(trace["assembled_prompt"].as_str().unwrap().contains("Input context"));
    }
}

#[test]
fn evaluate_perfect_and_disjoint_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let dialogues = load_fixture_dialogues("dialogues.jsonl");

    // Perfect: predictions equal to gold.
    let perfect = tmp.path().join("perfect.jsonl");
    let mut body = String::new();
    for d in &dialogues {
        let meds: Vec<&String> = d.gold_medications.as_ref().unwrap().iter().collect();
        body.push_str(&serde_json::json!({"id": d.id, "response": "", "medications": meds, "warnings": []}).to_string());
        body.push('\n');
    }
    fs::write(&perfect, &body).unwrap();
    let report_path = tmp.path().join("report.json");
    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "evaluate",
            "--predictions",
            perfect.to_str().unwrap(),
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["mean_jaccard"], 1.0);
    assert_eq!(report["mean_f1"], 1.0);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("mean over 10 dialogues"), "{stdout}");

    // Disjoint: predictions never overlap gold.
    let disjoint = tmp.path().join("disjoint.jsonl");
    let mut body = String::new();
    for d in &dialogues {
        body.push_str(
            &serde_json::json!({"id": d.id, "response": "", "medications": ["NotARealDrug"], "warnings": []})
                .to_string(),
        );
        body.push('\n');
    }
    fs::write(&disjoint, &body).unwrap();
    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "evaluate",
            "--predictions",
            disjoint.to_str().unwrap(),
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["mean_jaccard"], 0.0);
    assert_eq!(report["mean_f1"], 0.0);
}

#[test]
fn evaluate_rejects_unmatched_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);

    let predictions = tmp.path().join("predictions.jsonl");
    fs::write(
        &predictions,
        r#"{"id":"ghost","response":"","medications":[],"warnings":[]}"#,
    )
    .unwrap();

    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "evaluate",
            "--predictions",
            predictions.to_str().unwrap(),
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ghost"), "{stderr}");
    assert!(stderr.contains("d01"), "{stderr}");
}

#[test]
fn evaluate_mixed_set_matches_independent_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let dialogues = load_fixture_dialogues("dialogues.jsonl");

    // Half right: first gold medication only.
    let mixed = tmp.path().join("mixed.jsonl");
    let mut body = String::new();
    let mut expected_jaccard_sum = 0.0;
    let mut expected_f1_sum = 0.0;
    for d in &dialogues {
        let gold = d.gold_medications.as_ref().unwrap();
        let kept: Vec<&String> = gold.iter().take(1).collect();
        // Independent recomputation with plain arithmetic.
        let intersection = 1.0f64;
        let union = gold.len() as f64;
        let precision = 1.0;
        let recall = 1.0 / gold.len() as f64;
        expected_jaccard_sum += intersection / union;
        expected_f1_sum += 2.0 * precision * recall / (precision + recall);
        body.push_str(
            &serde_json::json!({"id": d.id, "response": "", "medications": kept, "warnings": []})
                .to_string(),
        );
        body.push('\n');
    }
    fs::write(&mixed, &body).unwrap();

    let report_path = tmp.path().join("report.json");
    let output = Command::new(binary())
        .args([
            "--config",
            config_path.to_str().unwrap(),
            "evaluate",
            "--predictions",
            mixed.to_str().unwrap(),
            "--dialogues",
            fixture_path("dialogues.jsonl").to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    let n = dialogues.len() as f64;
    assert!((report["mean_jaccard"].as_f64().unwrap() - expected_jaccard_sum / n).abs() < 1e-12);
    assert!((report["mean_f1"].as_f64().unwrap() - expected_f1_sum / n).abs() < 1e-12);
}

fn run_chat(config_path: &std::path::Path, stdin_text: &str) -> (String, String) {
    run_chat_with(config_path, stdin_text, &[])
}

fn run_chat_with(
    config_path: &std::path::Path,
    stdin_text: &str,
    extra_flags: &[&str],
) -> (String, String) {
    let mut child = Command::new(binary())
        .args(["--config", config_path.to_str().unwrap()])
        .args(extra_flags)
        .arg("chat")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(stdin_text.as_bytes()).unwrap();
    let output = child.wait_with_output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    (
        String::from_utf8(output.stdout).unwrap(),
        String::from_utf8(output.stderr).unwrap(),
    )
}

#[test]
fn chat_replays_a_recorded_session_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(tmp.path());
    let script = "I caught a cold and I have had a cough for a week.\nWhat should I take for the cold?\n";

    config.clients.cache_mode = CacheMode::Record;
    let record_config = write_config(tmp.path(), &config);
    let (recorded_stdout, _) = run_chat(&record_config, script);
    let transcript_path = config.output.dir.join("chat_transcript.jsonl");
    let recorded_transcript = fs::read_to_string(&transcript_path).unwrap();

    config.clients.cache_mode = CacheMode::Replay;
    let replay_config = write_config(tmp.path(), &config);
    let (replayed_stdout, _) = run_chat(&replay_config, script);
    let replayed_transcript = fs::read_to_string(&transcript_path).unwrap();

    assert_eq!(recorded_stdout, replayed_stdout);
    assert_eq!(recorded_transcript, replayed_transcript);
    assert!(replayed_stdout.contains("doctor:"));
    // The recommendation flows from the cold treatments in the KG.
    assert!(replayed_stdout.contains("Aspirin"), "{replayed_stdout}");
}

#[test]
fn chat_trace_shows_version_growth_on_new_facts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = base_config(tmp.path());
    config.clients.cache_mode = CacheMode::Record;
    let config_path = write_config(tmp.path(), &config);
    // The second turn introduces a brand-new concept, so the rebuilt graph
    // must sit at a strictly higher version.
    let script = "I caught a cold and I have had a cough for a week.\n\
                  I also have a headache now, what should I take?\n";
    let (stdout, _) = run_chat_with(&config_path, script, &["--trace"]);
    let versions: Vec<u64> = stdout
        .lines()
        .filter_map(|line| {
            line.strip_prefix("[trace] graph version ")
                .and_then(|rest| rest.split(' ').next())
                .and_then(|v| v.parse().ok())
        })
        .collect();
    assert_eq!(versions.len(), 2, "{stdout}");
    assert!(versions[1] > versions[0], "{versions:?}");
}

#[test]
fn chat_immediate_eof_exits_cleanly_with_empty_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let config = base_config(tmp.path());
    let config_path = write_config(tmp.path(), &config);
    let (stdout, _) = run_chat(&config_path, "");
    assert_eq!(stdout, "");
    let transcript = fs::read_to_string(config.output.dir.join("chat_transcript.jsonl")).unwrap();
    assert_eq!(transcript, "");
}
