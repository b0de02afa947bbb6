mod support;

use std::fs;

use serde_json::Value;
use skillnav_core::taxonomy::TemporalRelation;
use support::*;

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn eval_matches_independent_report() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let out = ok(skillnav(
        &fixtures(),
        &["eval", "--graph", "building.json", "--traces", "traces10.jsonl", "--out", report.to_str().unwrap()],
    ));
    assert!(stdout(&out).contains("run"));
    let got: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let want: Value = serde_json::from_str(&fs::read_to_string(fixture("expected_report.json")).unwrap()).unwrap();
    assert_eq!(got["n"], want["n"]);
    for key in ["mean_ne", "sr", "osr", "spl"] {
        let (g, w) = (got[key].as_f64().unwrap(), want[key].as_f64().unwrap());
        assert!((g - w).abs() <= 1e-9, "{key}: {g} vs {w}");
    }
}

#[test]
fn analyze_labels_temporal_sentences() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.txt");
    let cases = [
        ("Once you enter the hallway, turn left", TemporalRelation::ConditionalImmediacy),
        ("Keep walking until you see the staircase", TemporalRelation::BoundedDuration),
        ("Go forward, then turn right, and finally stop", TemporalRelation::ForwardSequential),
        ("Before turning, make sure you're at the hallway entrance", TemporalRelation::BackwardSequential),
    ];
    fs::write(&input, cases.iter().map(|c| c.0).collect::<Vec<_>>().join("\n")).unwrap();
    let out = ok(skillnav(tmp.path(), &["analyze", "--input", "in.txt"]));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rels = v["relations"].as_array().unwrap();
    assert_eq!(rels.len(), 4);
    for (row, (_, want)) in rels.iter().zip(cases) {
        assert_eq!(row["relations"], serde_json::json!([want.to_string()]), "{row}");
    }
    assert!(v["skills"].is_object() || v["skills"].is_array());
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(skillnav(&fixtures(), &SYNTH_ARGS[..SYNTH_ARGS.len() - 1]));
    let b = ok(skillnav(&fixtures(), &SYNTH_ARGS[..SYNTH_ARGS.len() - 1]));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 5);
    let path = tmp.path().join("x.jsonl");
    let mut args = SYNTH_ARGS.to_vec();
    args.push(path.to_str().unwrap());
    ok(skillnav(&fixtures(), &args));
    assert_eq!(fs::read(path).unwrap(), a.stdout);
}

#[test]
fn bad_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), r#"{"version": 1, "graph": "g.json", "surprise": true}"#).unwrap();
    let out = skillnav(tmp.path(), &["run", "--config", "bad.json"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = skillnav(tmp.path(), &["run", "--config", "missing.json"]);
    assert!(!out.status.success());
}

#[test]
fn reorder_then_route() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("instr.txt"),
        "Turn left before entering the kitchen.\nWalk down the hallway until you reach the stairs.\n",
    )
    .unwrap();
    ok(skillnav(tmp.path(), &["reorder", "--input", "instr.txt", "--out", "plans.jsonl"]));
    let plans = fs::read_to_string(tmp.path().join("plans.jsonl")).unwrap();
    let first: Value = serde_json::from_str(plans.lines().next().unwrap()).unwrap();
    let subs = first["subgoals"].as_array().unwrap();
    assert!(subs.len() >= 2);
    assert!(subs.last().unwrap().as_str().unwrap().starts_with("Turn left"), "{subs:?}");

    let out = ok(skillnav(tmp.path(), &["route", "--plans", "plans.jsonl"]));
    let rows: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(!r["routes"].as_array().unwrap().is_empty());
    }
}

#[test]
fn reorder_replays_recorded_transcript() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("instr.txt");
    fs::write(&input, REORDER_GOLD.iter().map(|c| c.0).collect::<Vec<_>>().join("\n")).unwrap();
    let out = ok(skillnav(
        &fixtures(),
        &[
            "reorder",
            "--input",
            input.to_str().unwrap(),
            "--backend",
            "external",
            "--transcript",
            REORDER_TRANSCRIPT,
        ],
    ));
    let plans: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(plans.len(), 4);
    for (p, (_, gold)) in plans.iter().zip(REORDER_GOLD) {
        let joined: Vec<&str> = p["subgoals"].as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect();
        assert_eq!(joined.join(" "), gold);
    }
}

#[test]
fn gen_graph_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok(skillnav(tmp.path(), &["gen-graph", "--seed", "11"]));
    assert_eq!(a.stdout, fs::read(fixture("building.json")).unwrap());
    let b = ok(skillnav(tmp.path(), &["gen-graph", "--rgg", "30", "--seed", "2"]));
    let v: Value = serde_json::from_slice(&b.stdout).unwrap();
    assert!(v.is_object());
}
