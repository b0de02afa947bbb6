//! Shared helpers for the CLI integration tests: fixture paths, a runner for
//! the built binary, and a deterministic stand-in model server.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skillnav_core::reorder::{parse_subgoals, reorder_rules};
use skillnav_core::router::{keyword_vote, LOCALIZE_KEY_REASONING, LOCALIZE_KEY_SUBGOAL};
use skillnav_core::taxonomy::KeywordLexicon;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

/// Run the CLI with `args` from `cwd`.
pub fn skillnav(cwd: &Path, args: &[&str]) -> Output {
    skillnav_with_endpoint(cwd, args, None)
}

pub fn skillnav_with_endpoint(cwd: &Path, args: &[&str], endpoint: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_skillnav"));
    cmd.current_dir(cwd).args(args).env_remove("SKILLNAV_MODEL_ENDPOINT");
    if let Some(ep) = endpoint {
        cmd.env("SKILLNAV_MODEL_ENDPOINT", ep);
    }
    cmd.output().expect("spawn skillnav")
}

pub fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "skillnav failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The four worked reorder examples with their gold plans.
pub const REORDER_GOLD: [(&str, &str); 4] = [
    (
        "Turn around and walk down the stairs. Stop once you get down them.",
        "Turn around. Walk down the stairs. Stop at the bottom of the stairs.",
    ),
    (
        "Walk toward the dining room but turn left before entering it and go into the open area.",
        "Walk toward the dining room. Stop at the entrance. Turn left. Enter the open area.",
    ),
    (
        "After you leave the laundry room, make a left in the hallway, and go to the bedroom straight ahead. When you are in the doorway of the room go to the doorway of the closet on the left and wait.",
        "Exit the laundry room. Turn left in the hallway. Walk to the bedroom straight ahead. Enter the doorway of the bedroom. Go to the doorway of the closet on the left. Wait there.",
    ),
    (
        "Start moving forward down the corridor. Pass offices on your left and right. Continue going down the hallway until you reach an exit sign on your right and what looks like some lockers in front of you. There will also be a brown door with an exit sign above it in front of you.",
        "Start moving forward down the corridor. Pass the offices on your left and right. Continue walking down the hallway. Reach the exit sign on your right and the lockers in front of you. Stop in front of the brown door with the exit sign above it.",
    ),
];

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.rfind(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

/// Deterministic answers to the three model prompts. The router answer is
/// malformed on the first attempt when no keyword matches, so replays also
/// exercise the repair path.
pub fn fake_model(prompt: &str) -> String {
    if let Some(instr) = between(prompt, "<Original Instruction>:\n\"", "\"\n") {
        return reorder_rules(instr).joined();
    }
    if let Some(reordered) = between(prompt, "<Original Whole Instruction>:\n\"", "\"\n<Previous Sub-Instructions>") {
        let plan = parse_subgoals(reordered);
        let views = prompt
            .split("<Previous Viewpoint Images>:")
            .nth(1)
            .map(|s| s.lines().filter(|l| l.starts_with('[')).count())
            .unwrap_or(0);
        let k = views.saturating_sub(1) / 2;
        let sub = plan.get(k).cloned().unwrap_or_default();
        return serde_json::json!({
            LOCALIZE_KEY_SUBGOAL: sub,
            LOCALIZE_KEY_REASONING: format!("{views} viewpoints seen"),
        })
        .to_string();
    }
    if let Some(sub) = between(prompt, "Sub-instruction to be executed for next step:\n\"", "\"\n") {
        return match keyword_vote(sub, &KeywordLexicon::default()) {
            Some(skill) => format!("*****{}*****", skill.display_name()),
            None if prompt.contains("previous answer was rejected") => "*****Landmark Detection*****".into(),
            None => "I cannot tell from the images.".into(),
        };
    }
    "unrecognized prompt".into()
}

/// Serve `fake_model` over HTTP on a local port; returns the endpoint URL.
pub fn spawn_fake_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = listener.local_addr().expect("addr");
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0u8; len];
                if reader.read_exact(&mut body).is_err() {
                    return;
                }
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                let prompt = req["prompt"].as_str().unwrap_or_default();
                let reply = serde_json::json!({ "text": fake_model(prompt) }).to_string();
                let head = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                    reply.len()
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    format!("http://{addr}/v1/complete")
}

pub const REPLAY_CONFIG: &str = "replay_config.json";
pub const REPLAY_TRANSCRIPT: &str = "replay_transcript.jsonl";
pub const REPLAY_GOLDEN: &str = "replay_traces.golden.jsonl";
pub const REORDER_TRANSCRIPT: &str = "reorder_gold.jsonl";
pub const SYNTH_GOLDEN: &str = "synth_vertical_n5_seed0.golden.jsonl";
pub const SYNTH_ARGS: [&str; 10] = [
    "synth", "--graph", "building.json", "--skill", "vertical", "--n", "5", "--seed", "0", "--out",
];
