//! Temporal reordering: rewrite an instruction as an ordered list of minimal
//! imperative subgoals, either with a deterministic rule engine or through a
//! text-generation model.

use serde::{Deserialize, Serialize};

use crate::model::ModelClient;
use crate::prompts;
use crate::text::words;
use crate::transport::TranscriptMode;

/// Connectives that must not survive in a subgoal.
pub const BANNED_CONNECTIVES: [&str; 4] = ["then", "before", "until", "once"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Rules,
    External,
    ExternalReplayed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalPlan {
    pub subgoals: Vec<String>,
    pub source: PlanSource,
    pub original: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

impl SubgoalPlan {
    pub fn len(&self) -> usize {
        self.subgoals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgoals.is_empty()
    }

    /// Subgoals joined back into one period-separated string.
    pub fn joined(&self) -> String {
        self.subgoals.join(" ")
    }
}

/// First banned connective appearing as a standalone word in `text`.
pub fn banned_connective(text: &str) -> Option<&'static str> {
    let toks = words(text);
    BANNED_CONNECTIVES
        .into_iter()
        .find(|b| toks.iter().any(|t| t == b))
}

const VERBS: &[(&str, &str)] = &[
    ("approach", "approaching"),
    ("ascend", "ascending"),
    ("bear", "bearing"),
    ("climb", "climbing"),
    ("come", "coming"),
    ("continue", "continuing"),
    ("cross", "crossing"),
    ("descend", "descending"),
    ("enter", "entering"),
    ("exit", "exiting"),
    ("face", "facing"),
    ("follow", "following"),
    ("get", "getting"),
    ("go", "going"),
    ("head", "heading"),
    ("keep", "keeping"),
    ("leave", "leaving"),
    ("look", "looking"),
    ("make", "making"),
    ("move", "moving"),
    ("navigate", "navigating"),
    ("pass", "passing"),
    ("pause", "pausing"),
    ("proceed", "proceeding"),
    ("reach", "reaching"),
    ("run", "running"),
    ("stand", "standing"),
    ("start", "starting"),
    ("stay", "staying"),
    ("step", "stepping"),
    ("stop", "stopping"),
    ("take", "taking"),
    ("travel", "traveling"),
    ("turn", "turning"),
    ("veer", "veering"),
    ("wait", "waiting"),
    ("walk", "walking"),
];

const SUBJECTS: &[&str] = &["you", "you'll", "we", "we'll", "please"];
const MODALS: &[&str] = &["will", "should", "can", "must", "may", "would", "need", "want", "to", "also"];
const DETERMINERS: &[&str] = &["the", "a", "an", "this", "that", "these", "those", "your", "another", "some"];
const PRONOUNS: &[&str] = &["it", "them", "there", "that"];
const PARTICLES: &[&str] = &[
    "to", "into", "in", "inside", "at", "toward", "towards", "through", "down", "up", "past", "onto", "out", "of",
    "from", "across", "by", "near", "on", "upon",
];

fn lower(w: &str) -> String {
    w.to_lowercase()
}

fn is_verb(w: &str) -> bool {
    let l = lower(w);
    VERBS.iter().any(|(v, _)| *v == l)
}

fn from_gerund(w: &str) -> Option<&'static str> {
    let l = lower(w);
    VERBS.iter().find(|(_, g)| *g == l).map(|(v, _)| *v)
}

fn gerund(w: &str) -> Option<&'static str> {
    let l = lower(w);
    VERBS.iter().find(|(v, _)| *v == l).map(|(_, g)| *g)
}

fn is_subject(w: &str) -> bool {
    SUBJECTS.contains(&lower(w).as_str())
}

/// Could a clause start with this word?
fn starts_clause(w: Option<&str>) -> bool {
    match w {
        Some(w) => is_verb(w) || from_gerund(w).is_some() || is_subject(w),
        None => false,
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tok {
    word: String,
    comma_after: bool,
}

/// Word tokens with their original casing. Commas are remembered on the
/// preceding word; every other non-word character separates.
fn tokenize(sentence: &str) -> Vec<Tok> {
    let mut out: Vec<Tok> = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<Tok>| {
        let w = cur.trim_matches(|c| c == '\'' || c == '\u{2019}').replace('\u{2019}', "'");
        if !w.is_empty() {
            out.push(Tok {
                word: w,
                comma_after: false,
            });
        }
        cur.clear();
    };
    for c in sentence.chars() {
        if c.is_alphanumeric() || c == '\'' || c == '\u{2019}' {
            cur.push(c);
        } else {
            flush(&mut cur, &mut out);
            if c == ',' {
                if let Some(last) = out.last_mut() {
                    last.comma_after = true;
                }
            }
        }
    }
    flush(&mut cur, &mut out);
    out
}

fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', ';', ':', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Conn {
    Start,
    Then,
    Trigger,
    Before,
    Until,
}

#[derive(Debug)]
struct Segment {
    conn: Conn,
    leading: bool,
    words: Vec<Tok>,
}

/// Connective starting at `i`, with its width in tokens.
fn connective_at(toks: &[Tok], i: usize) -> Option<(Conn, usize)> {
    let w = |k: usize| toks.get(k).map(|t| lower(&t.word));
    let next_starts = |k: usize| starts_clause(toks.get(k).map(|t| t.word.as_str()));
    let here = w(i)?;
    match here.as_str() {
        "as" if w(i + 1).as_deref() == Some("soon") && w(i + 2).as_deref() == Some("as") => Some((Conn::Trigger, 3)),
        "and" if w(i + 1).as_deref() == Some("then") => Some((Conn::Then, 2)),
        "then" | "finally" => Some((Conn::Then, 1)),
        "once" => Some((Conn::Trigger, 1)),
        "after" | "when" | "upon" if next_starts(i + 1) => Some((Conn::Trigger, 1)),
        "before" => Some((Conn::Before, 1)),
        "until" => Some((Conn::Until, 1)),
        "and" | "but" if toks.get(i + 1).is_some_and(|t| is_verb(&t.word)) => Some((Conn::Then, 1)),
        _ => None,
    }
}

fn segment(sentence: &str) -> Vec<Segment> {
    let toks = tokenize(sentence);
    let mut segs: Vec<Segment> = Vec::new();
    let mut cur = Segment {
        conn: Conn::Start,
        leading: false,
        words: Vec::new(),
    };
    let mut i = 0;
    while i < toks.len() {
        if let Some((conn, width)) = connective_at(&toks, i) {
            let at_start = segs.is_empty() && cur.words.is_empty();
            if !cur.words.is_empty() || at_start {
                if !cur.words.is_empty() {
                    segs.push(cur);
                }
                cur = Segment {
                    conn,
                    leading: at_start && conn != Conn::Then,
                    words: Vec::new(),
                };
            } else {
                // connective right after another one: the later one wins
                cur.conn = conn;
            }
            // a comma on the connective itself ("then, walk") is dropped
            i += width;
            continue;
        }
        let tok = toks[i].clone();
        // a leading clause without a comma ends where a fresh imperative starts
        if cur.leading && !cur.words.is_empty() && is_verb(&tok.word) {
            let prev = lower(&cur.words.last().unwrap().word);
            if !is_subject(&prev) && !MODALS.contains(&prev.as_str()) && !cur.words.last().unwrap().comma_after {
                segs.push(std::mem::replace(
                    &mut cur,
                    Segment {
                        conn: Conn::Start,
                        leading: false,
                        words: Vec::new(),
                    },
                ));
            }
        }
        let comma = tok.comma_after;
        cur.words.push(tok);
        if comma {
            let next = toks.get(i + 1).map(|t| t.word.as_str());
            if cur.leading || (is_verb(next.unwrap_or("")) && connective_at(&toks, i + 1).is_none()) {
                cur.words.last_mut().unwrap().comma_after = false;
                let conn = if cur.leading { Conn::Start } else { Conn::Then };
                segs.push(std::mem::replace(
                    &mut cur,
                    Segment {
                        conn,
                        leading: false,
                        words: Vec::new(),
                    },
                ));
            }
        }
        i += 1;
    }
    if !cur.words.is_empty() {
        segs.push(cur);
    }
    segs
}

fn plain_words(toks: &[Tok]) -> Vec<String> {
    let mut out: Vec<String> = toks
        .iter()
        .map(|t| if t.comma_after { format!("{},", t.word) } else { t.word.clone() })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = last.trim_end_matches(',').to_string();
    }
    out
}

/// Drop leading subjects and modals: "you will pass" -> "pass".
fn strip_subject(mut ws: Vec<String>) -> Vec<String> {
    loop {
        let Some(first) = ws.first() else { return ws };
        let l = lower(first.trim_end_matches(','));
        if SUBJECTS.contains(&l.as_str()) || MODALS.contains(&l.as_str()) {
            ws.remove(0);
        } else {
            return ws;
        }
    }
}

fn imperative(ws: Vec<String>) -> Vec<String> {
    let mut ws = strip_subject(ws);
    if let Some(first) = ws.first_mut() {
        let l = lower(first);
        if let Some(v) = from_gerund(&l) {
            *first = v.to_string();
        } else if l == "are" || l == "is" || l == "re" {
            *first = "be".to_string();
        }
    }
    ws
}

fn sentence_of(ws: &[String]) -> Option<String> {
    if ws.is_empty() {
        return None;
    }
    let body = ws.join(" ");
    let body = body.trim_matches(|c: char| c == ',' || c.is_whitespace());
    if body.is_empty() {
        return None;
    }
    Some(format!("{}.", capitalize(body)))
}

/// Object phrase of a clause: what follows its verb and particles.
fn object_of(ws: &[String]) -> Vec<String> {
    let ws = imperative(ws.to_vec());
    let mut k = 0;
    if ws.first().is_some_and(|w| is_verb(w) || lower(w) == "be") {
        k = 1;
    }
    while ws.get(k).is_some_and(|w| PARTICLES.contains(&lower(w).as_str())) {
        k += 1;
    }
    ws[k..].to_vec()
}

fn has_determiner(obj: &[String]) -> bool {
    obj.first().is_some_and(|w| DETERMINERS.contains(&lower(w).as_str()))
}

fn is_pronoun(obj: &[String]) -> bool {
    obj.len() == 1 && PRONOUNS.contains(&lower(&obj[0]).as_str())
}

fn move_toward(a: &[String], antecedent: Option<&Vec<String>>) -> Option<String> {
    let obj = object_of(a);
    let target = if obj.is_empty() || (is_pronoun(&obj) && antecedent.is_none()) {
        let clause = imperative(a.to_vec());
        if clause.is_empty() {
            return None;
        }
        format!("the point where you {}", lower_first(&clause.join(" ")))
    } else if is_pronoun(&obj) {
        antecedent.unwrap().join(" ")
    } else {
        obj.join(" ")
    };
    Some(format!("Move toward {}.", target.trim_end_matches(',')))
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn continue_clause(a: &[String]) -> String {
    let mut ws = strip_subject(a.to_vec());
    if ws.first().is_some_and(|w| matches!(lower(w).as_str(), "keep" | "continue")) {
        ws.remove(0);
        if ws.first().is_some_and(|w| lower(w) == "on") {
            ws.remove(0);
        }
    }
    if let Some(first) = ws.first_mut() {
        if let Some(g) = gerund(first) {
            *first = g.to_string();
        } else {
            *first = lower(first);
        }
    }
    if ws.is_empty() {
        "Continue.".to_string()
    } else {
        format!("Continue {}.", ws.join(" ").trim_end_matches(','))
    }
}

fn reach_clause(b: &[String]) -> Option<String> {
    let ws = imperative(b.to_vec());
    if ws.is_empty() {
        return None;
    }
    let first = lower(&ws[0]);
    if matches!(first.as_str(), "reach" | "get" | "arrive" | "come" | "hit" | "be" | "see" | "find") {
        let mut rest = &ws[1..];
        if rest
            .first()
            .is_some_and(|w| matches!(lower(w).as_str(), "to" | "at" | "in" | "into" | "near" | "by" | "on" | "upon"))
        {
            rest = &rest[1..];
        }
        if !rest.is_empty() {
            return Some(format!("Reach {}.", rest.join(" ").trim_end_matches(',')));
        }
    } else if has_determiner(&ws) || !is_verb(&ws[0]) {
        return Some(format!("Reach {}.", ws.join(" ").trim_end_matches(',')));
    }
    Some(format!("Reach the point where you {}.", lower_first(&ws.join(" "))))
}

/// Deterministic reordering. Always yields at least one subgoal.
pub fn reorder_rules(instruction: &str) -> SubgoalPlan {
    let mut out: Vec<String> = Vec::new();
    let mut antecedent: Option<Vec<String>> = None;
    for sentence in split_sentences(instruction) {
        let segs = segment(sentence);
        // subgoal index where the current sentence begins
        let sentence_start = out.len();
        let mut pending_until: Option<Vec<String>> = None;
        let mut pending_before: Option<String> = None;
        let mut last_main: Option<usize> = None;
        for seg in segs {
            let ws = plain_words(&seg.words);
            if ws.is_empty() {
                continue;
            }
            match (seg.conn, seg.leading) {
                (Conn::Start | Conn::Then, _) => {
                    if let Some(m) = pending_before.take() {
                        out.push(m);
                    }
                    if let Some(b) = pending_until.take() {
                        out.push(continue_clause(&ws));
                        out.extend(reach_clause(&b));
                    } else if let Some(s) = sentence_of(&imperative(ws.clone())) {
                        out.push(s);
                    }
                    last_main = Some(out.len().saturating_sub(1));
                }
                (Conn::Trigger, true) => {
                    out.extend(sentence_of(&imperative(ws.clone())));
                }
                (Conn::Trigger, false) => {
                    if let Some(s) = sentence_of(&imperative(ws.clone())) {
                        // trigger executes before the clause it qualifies
                        let at = last_main.unwrap_or(out.len()).max(sentence_start).min(out.len());
                        out.insert(at, s);
                        last_main = Some((at + 1).min(out.len() - 1));
                    }
                }
                (Conn::Before, leading) => {
                    if let Some(m) = move_toward(&ws, antecedent.as_ref()) {
                        if leading {
                            pending_before = Some(m);
                        } else {
                            let at = last_main.unwrap_or(out.len()).max(sentence_start).min(out.len());
                            out.insert(at, m);
                            last_main = Some((at + 1).min(out.len() - 1));
                        }
                    }
                }
                (Conn::Until, true) => pending_until = Some(ws.clone()),
                (Conn::Until, false) => {
                    match last_main {
                        Some(k) if k < out.len() && k >= sentence_start => {
                            let a = words_of_subgoal(&out[k]);
                            out[k] = continue_clause(&a);
                        }
                        _ => out.push("Continue.".into()),
                    }
                    out.extend(reach_clause(&ws));
                    last_main = None;
                }
            }
            let obj = object_of(&ws);
            if has_determiner(&obj) {
                antecedent = Some(obj);
            }
        }
        out.extend(pending_before.take());
        if let Some(b) = pending_until.take() {
            out.extend(reach_clause(&b));
        }
    }
    if out.is_empty() {
        out.push("Stop.".into());
    }
    SubgoalPlan {
        subgoals: out,
        source: PlanSource::Rules,
        original: instruction.to_string(),
        provenance: Vec::new(),
    }
}

fn words_of_subgoal(s: &str) -> Vec<String> {
    s.trim_end_matches('.').split_whitespace().map(str::to_string).collect()
}

/// Split a model response into period-terminated subgoals.
pub fn parse_subgoals(response: &str) -> Vec<String> {
    response
        .split(['.', '\n'])
        .map(|s| s.trim().trim_matches('"').trim())
        .filter(|s| !s.is_empty())
        .map(|s| format!("{s}."))
        .collect()
}

fn check_plan(subgoals: &[String]) -> Result<(), String> {
    if subgoals.is_empty() {
        return Err("the response contained no steps".into());
    }
    for s in subgoals {
        if let Some(b) = banned_connective(s) {
            return Err(format!("the step \"{s}\" uses the connective \"{b}\""));
        }
    }
    Ok(())
}

/// Reorder through a model; falls back to [`reorder_rules`] when the response
/// is unusable after one repair attempt or the transport fails.
pub fn reorder_external(instruction: &str, client: &ModelClient) -> SubgoalPlan {
    let prompt = prompts::temporal_reorder(instruction);
    let source = if client.mode() == TranscriptMode::Replay {
        PlanSource::ExternalReplayed
    } else {
        PlanSource::External
    };
    let mut provenance = Vec::new();
    let mut attempt = prompt.clone();
    for _ in 0..2 {
        match client.complete(&attempt, &[]) {
            Ok(text) => {
                let subgoals = parse_subgoals(&text);
                match check_plan(&subgoals) {
                    Ok(()) => {
                        return SubgoalPlan {
                            subgoals,
                            source,
                            original: instruction.to_string(),
                            provenance,
                        }
                    }
                    Err(problem) => {
                        provenance.push(format!("rejected response: {problem}"));
                        attempt = prompts::repair_note(&prompt, &problem);
                    }
                }
            }
            Err(e) => provenance.push(format!("transport failure: {e}")),
        }
    }
    tracing::warn!(instruction, "reorder model unusable; using rules");
    provenance.push("warning: fell back to rule engine".into());
    let mut plan = reorder_rules(instruction);
    plan.provenance = provenance;
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(s: &str) -> Vec<String> {
        reorder_rules(s).subgoals
    }

    #[test]
    fn then_keeps_order() {
        assert_eq!(rules("Turn left then walk forward."), ["Turn left.", "Walk forward."]);
    }

    #[test]
    fn before_inverts() {
        assert_eq!(
            rules("Turn left before entering the kitchen."),
            ["Move toward the kitchen.", "Turn left."]
        );
        assert_eq!(
            rules("Before entering the kitchen, turn left."),
            ["Move toward the kitchen.", "Turn left."]
        );
    }

    #[test]
    fn until_expands() {
        assert_eq!(
            rules("Walk straight until you reach the sofa."),
            ["Continue walking straight.", "Reach the sofa."]
        );
    }

    #[test]
    fn triggers_go_first() {
        assert_eq!(rules("Stop once you see the lamp."), ["See the lamp.", "Stop."]);
        assert_eq!(
            rules("After you leave the laundry room, make a left in the hallway."),
            ["Leave the laundry room.", "Make a left in the hallway."]
        );
        assert_eq!(
            rules("As soon as you reach the stairs turn right."),
            ["Reach the stairs.", "Turn right."]
        );
    }

    #[test]
    fn pronoun_resolves_to_earlier_object() {
        assert_eq!(
            rules("Walk toward the dining room but turn left before entering it and go into the open area."),
            [
                "Walk toward the dining room.",
                "Move toward the dining room.",
                "Turn left.",
                "Go into the open area."
            ]
        );
    }

    #[test]
    fn leading_clause_without_comma() {
        assert_eq!(
            rules("When you are in the doorway of the room go to the doorway of the closet on the left and wait."),
            [
                "Be in the doorway of the room.",
                "Go to the doorway of the closet on the left.",
                "Wait."
            ]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(rules("then."), ["Stop."]);
        assert_eq!(rules(""), ["Stop."]);
        assert_eq!(rules("Look around"), ["Look around."]);
    }

    #[test]
    fn idempotent_on_examples() {
        for s in [
            "Turn around and walk down the stairs. Stop once you get down them.",
            "Keep going down the hallway until you get to an exit sign on your right.",
            "Turn left before entering the kitchen.",
        ] {
            let once = reorder_rules(s);
            assert!(once.subgoals.iter().all(|g| banned_connective(g).is_none()), "{once:?}");
            assert_eq!(rules(&once.joined()), once.subgoals);
        }
    }

    #[test]
    fn parse_response() {
        assert_eq!(
            parse_subgoals("Turn around. Walk down the stairs. Stop at the bottom of the stairs."),
            ["Turn around.", "Walk down the stairs.", "Stop at the bottom of the stairs."]
        );
    }

    #[test]
    fn external_falls_back_on_banned_words() {
        let client = ModelClient::from_fn(|_| Ok("Walk then stop.".into()));
        let plan = reorder_external("Walk forward then stop.", &client);
        assert_eq!(plan.source, PlanSource::Rules);
        assert_eq!(plan.subgoals, ["Walk forward.", "Stop."]);
        assert!(plan.provenance.iter().any(|p| p.contains("warning")));

        let client = ModelClient::from_fn(|p| {
            Ok(if p.contains("previous answer was rejected") {
                "Walk forward. Stop.".into()
            } else {
                "Walk forward then stop.".into()
            })
        });
        let plan = reorder_external("Walk forward then stop.", &client);
        assert_eq!(plan.subgoals, ["Walk forward.", "Stop."]);
        assert_eq!(plan.source, PlanSource::External);
    }
}
