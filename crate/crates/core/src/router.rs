//! Two-phase action routing: localize the subgoal to execute next, then pick
//! the one skill agent that executes it.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelClient;
use crate::prompts;
use crate::reorder::SubgoalPlan;
use crate::taxonomy::{KeywordLexicon, Skill};
use crate::text::words;

pub const LOCALIZE_KEY_SUBGOAL: &str = "Sub-instruction to be executed";
pub const LOCALIZE_KEY_REASONING: &str = "Reasoning";
pub const SEQUENTIAL_REASONING: &str = "sequential";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouterError {
    #[error("ledger regression: plan index {index} does not follow {last}")]
    LedgerRegression { index: usize, last: usize },
    #[error("plan index {0} is out of range")]
    OutOfRange(usize),
    #[error("plan has no subgoals")]
    EmptyPlan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub plan_index: usize,
    pub subgoal: String,
}

/// Episode-local router state. The newest ledger entry is the active
/// subgoal until it is marked complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterState {
    pub plan: SubgoalPlan,
    pub ledger: Vec<LedgerEntry>,
    pub traces: Vec<String>,
    pub active_complete: bool,
    pub provenance: Vec<String>,
}

impl RouterState {
    pub fn new(plan: SubgoalPlan) -> Result<Self, RouterError> {
        if plan.subgoals.is_empty() {
            return Err(RouterError::EmptyPlan);
        }
        Ok(Self {
            plan,
            ledger: Vec::new(),
            traces: Vec::new(),
            active_complete: false,
            provenance: Vec::new(),
        })
    }

    pub fn last_index(&self) -> Option<usize> {
        self.ledger.last().map(|e| e.plan_index)
    }

    /// Lowest plan index the localizer may return.
    pub fn floor(&self) -> usize {
        match self.last_index() {
            None => 0,
            Some(l) if self.active_complete => l + 1,
            Some(l) => l,
        }
    }

    /// Mark the active subgoal as done; the next localization moves past it.
    pub fn complete_active(&mut self) {
        if !self.ledger.is_empty() {
            self.active_complete = true;
        }
    }

    pub fn is_last_subgoal(&self, index: usize) -> bool {
        index + 1 >= self.plan.subgoals.len()
    }

    pub fn ledger_indices(&self) -> Vec<usize> {
        self.ledger.iter().map(|e| e.plan_index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizeResult {
    pub subgoal: String,
    pub plan_index: usize,
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localized {
    Subgoal(LocalizeResult),
    /// Every subgoal is done; the episode should stop.
    PlanExhausted { provenance: Vec<String> },
}

#[derive(Debug, Clone)]
pub enum LocalizerBackend {
    Scripted,
    External(ModelClient),
}

pub fn normalize_subgoal(s: &str) -> String {
    let t = s.trim().trim_end_matches('.').trim();
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn overlap(a: &str, b: &str) -> usize {
    let wa = words(a);
    let mut wb = words(b);
    wb.sort();
    wb.dedup();
    wb.iter().filter(|w| wa.contains(w)).count()
}

/// Match a returned sub-instruction to a plan index at or above `floor`.
/// Exact (normalized) match first; an exact match below the floor maps to
/// the floor; otherwise highest token overlap, ties to the lowest index. `None` when no index is available.
pub fn match_plan_entry(plan: &SubgoalPlan, floor: usize, returned: &str) -> Option<usize> {
    let range = floor..plan.subgoals.len();
    if range.is_empty() {
        return None;
    }
    let norm = normalize_subgoal(returned);
    if let Some(k) = range.clone().find(|&k| normalize_subgoal(&plan.subgoals[k]) == norm) {
        return Some(k);
    }
    // a stale answer naming an executed entry has not advanced past the floor
    if plan.subgoals[..floor].iter().any(|s| normalize_subgoal(s) == norm) {
        return Some(floor);
    }
    let mut best = floor;
    let mut best_score = overlap(&plan.subgoals[floor], returned);
    for k in range.skip(1) {
        let s = overlap(&plan.subgoals[k], returned);
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    Some(best)
}

fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parse a localizer response: a JSON object with exactly the two keys,
/// both strings.
pub fn parse_localizer_response(text: &str) -> Result<(String, String), String> {
    let v: serde_json::Value =
        serde_json::from_str(strip_code_fence(text)).map_err(|e| format!("the response is not valid JSON ({e})"))?;
    let obj = v.as_object().ok_or("the response is not a JSON object")?;
    if obj.len() != 2 || !obj.contains_key(LOCALIZE_KEY_SUBGOAL) || !obj.contains_key(LOCALIZE_KEY_REASONING) {
        return Err(format!(
            "the object must have exactly the keys \"{LOCALIZE_KEY_SUBGOAL}\" and \"{LOCALIZE_KEY_REASONING}\""
        ));
    }
    let get = |k: &str| obj[k].as_str().map(str::to_string).ok_or(format!("\"{k}\" must be a string"));
    Ok((get(LOCALIZE_KEY_SUBGOAL)?, get(LOCALIZE_KEY_REASONING)?))
}

fn scripted(state: &RouterState, provenance: Vec<String>) -> Localized {
    let k = state.floor();
    match state.plan.subgoals.get(k) {
        Some(s) => Localized::Subgoal(LocalizeResult {
            subgoal: s.clone(),
            plan_index: k,
            reasoning: SEQUENTIAL_REASONING.into(),
            provenance,
        }),
        None => Localized::PlanExhausted { provenance },
    }
}

/// Phase 1. `history` holds one textual summary per visited viewpoint.
pub fn localize_subgoal(state: &RouterState, history: &[String], backend: &LocalizerBackend) -> Localized {
    let client = match backend {
        LocalizerBackend::Scripted => return scripted(state, Vec::new()),
        LocalizerBackend::External(c) => c,
    };
    let previous: Vec<String> = state.ledger.iter().map(|e| e.subgoal.clone()).collect();
    let prompt = prompts::subgoal_localizer(&state.plan.joined(), &previous, history);
    let mut attempt = prompt.clone();
    let mut provenance = Vec::new();
    for _ in 0..2 {
        let problem = match client.complete(&attempt, &[]) {
            Ok(text) => match parse_localizer_response(&text) {
                Ok((sub, reasoning)) => {
                    if sub.trim().is_empty() {
                        return Localized::PlanExhausted { provenance };
                    }
                    return match match_plan_entry(&state.plan, state.floor(), &sub) {
                        Some(k) => {
                            if normalize_subgoal(&state.plan.subgoals[k]) != normalize_subgoal(&sub) {
                                provenance.push(format!("mapped \"{sub}\" to plan entry {k}"));
                            }
                            Localized::Subgoal(LocalizeResult {
                                subgoal: state.plan.subgoals[k].clone(),
                                plan_index: k,
                                reasoning,
                                provenance,
                            })
                        }
                        None => Localized::PlanExhausted { provenance },
                    };
                }
                Err(p) => p,
            },
            Err(e) => format!("transport failure: {e}"),
        };
        provenance.push(format!("localizer response rejected: {problem}"));
        attempt = prompts::repair_note(&prompt, &problem);
    }
    provenance.push("fell back to sequential localization".into());
    scripted(state, provenance)
}

/// Record a localization. Returns `true` when the ledger grew, `false` when
/// the result re-selects the still-active subgoal.
pub fn update_ledger(state: &mut RouterState, result: &LocalizeResult) -> Result<bool, RouterError> {
    if result.plan_index >= state.plan.subgoals.len() {
        return Err(RouterError::OutOfRange(result.plan_index));
    }
    state.traces.push(result.reasoning.clone());
    match state.last_index() {
        Some(last) if result.plan_index == last && !state.active_complete => Ok(false),
        Some(last) if result.plan_index <= last => Err(RouterError::LedgerRegression {
            index: result.plan_index,
            last,
        }),
        _ => {
            state.ledger.push(LedgerEntry {
                plan_index: result.plan_index,
                subgoal: result.subgoal.clone(),
            });
            state.active_complete = false;
            Ok(true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackUsed {
    None,
    Keyword,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteResult {
    pub skill: Skill,
    pub fallback_used: FallbackUsed,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum RouterBackend {
    Scripted,
    External(ModelClient),
    Random { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct RouteOptions {
    pub default_skill: Skill,
    pub lexicon: KeywordLexicon,
}

impl Default for RouteOptions {
    fn default() -> Self {
        Self {
            default_skill: Skill::LandmarkDetection,
            lexicon: KeywordLexicon::default(),
        }
    }
}

fn skill_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\*{5}([^*]+?)\*{5}").expect("valid pattern"))
}

/// Extract the routed skill from a response. Exactly one distinct routed
/// skill name must appear between five-star markers.
pub fn parse_route_response(bytes: &[u8]) -> Option<Skill> {
    let text = String::from_utf8_lossy(bytes);
    let mut found: Option<Skill> = None;
    for cap in skill_token_re().captures_iter(&text) {
        let Some(skill) = Skill::from_display_name(&cap[1]).filter(|s| s.is_routed()) else {
            continue;
        };
        match found {
            Some(f) if f != skill => return None,
            _ => found = Some(skill),
        }
    }
    found
}

/// Keyword vote over the routed skills; ties go to the earlier skill in
/// canonical order. `None` when no keyword matches.
pub fn keyword_vote(subgoal: &str, lexicon: &KeywordLexicon) -> Option<Skill> {
    let tokens = words(subgoal);
    let mut best: Option<(Skill, usize)> = None;
    for skill in Skill::ROUTED {
        let v = lexicon.skill_votes(skill, &tokens);
        if v > 0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((skill, v));
        }
    }
    best.map(|(s, _)| s)
}

fn keyword_route(subgoal: &str, opts: &RouteOptions, mut provenance: Vec<String>) -> RouteResult {
    match keyword_vote(subgoal, &opts.lexicon) {
        Some(skill) => RouteResult {
            skill,
            fallback_used: FallbackUsed::Keyword,
            provenance,
        },
        None => {
            provenance.push(format!("no skill keywords; default {}", opts.default_skill));
            RouteResult {
                skill: opts.default_skill,
                fallback_used: FallbackUsed::Default,
                provenance,
            }
        }
    }
}

/// Uniform choice over the routed skills, determined by `(seed, t)`.
pub fn random_route(seed: u64, t: u64) -> RouteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t);
    RouteResult {
        skill: Skill::ROUTED[rng.gen_range(0..Skill::ROUTED.len())],
        fallback_used: FallbackUsed::None,
        provenance: Vec::new(),
    }
}

/// Phase 2: pick exactly one routed skill for `subgoal`.
pub fn route_skill(
    original: &str,
    reordered: &str,
    subgoal: &str,
    reasoning: &str,
    t: u64,
    backend: &RouterBackend,
    opts: &RouteOptions,
) -> RouteResult {
    match backend {
        RouterBackend::Random { seed } => random_route(*seed, t),
        RouterBackend::Scripted => {
            let mut r = keyword_route(subgoal, opts, Vec::new());
            if r.fallback_used == FallbackUsed::Keyword {
                r.fallback_used = FallbackUsed::None;
            }
            r
        }
        RouterBackend::External(client) => {
            let prompt = prompts::skill_router(original, reordered, subgoal, reasoning);
            let mut attempt = prompt.clone();
            let mut provenance = Vec::new();
            for _ in 0..2 {
                let problem = match client.complete(&attempt, &[]) {
                    Ok(text) => match parse_route_response(text.as_bytes()) {
                        Some(skill) => {
                            return RouteResult {
                                skill,
                                fallback_used: FallbackUsed::None,
                                provenance,
                            }
                        }
                        None => "the response must contain exactly one skill name as *****SKILL_NAME*****".to_string(),
                    },
                    Err(e) => format!("transport failure: {e}"),
                };
                provenance.push(format!("router response rejected: {problem}"));
                attempt = prompts::repair_note(&prompt, &problem);
            }
            keyword_route(subgoal, opts, provenance)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reorder::PlanSource;
    use crate::transport::TransportError;

    fn plan(items: &[&str]) -> SubgoalPlan {
        SubgoalPlan {
            subgoals: items.iter().map(|s| s.to_string()).collect(),
            source: PlanSource::Rules,
            original: items.join(" "),
            provenance: vec![],
        }
    }

    fn json_reply(sub: &str) -> String {
        serde_json::json!({LOCALIZE_KEY_SUBGOAL: sub, LOCALIZE_KEY_REASONING: "r"}).to_string()
    }

    #[test]
    fn scripted_is_sequential_and_exhausts() {
        let mut st = RouterState::new(plan(&["A.", "B.", "C."])).unwrap();
        let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::Scripted) else {
            panic!()
        };
        assert_eq!((r.plan_index, r.reasoning.as_str()), (0, "sequential"));
        assert!(update_ledger(&mut st, &r).unwrap());
        // still active: same entry, ledger unchanged
        let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::Scripted) else {
            panic!()
        };
        assert_eq!(r.plan_index, 0);
        assert!(!update_ledger(&mut st, &r).unwrap());
        for expect in [1, 2] {
            st.complete_active();
            let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::Scripted) else {
                panic!()
            };
            assert_eq!(r.plan_index, expect);
            update_ledger(&mut st, &r).unwrap();
        }
        st.complete_active();
        assert!(matches!(
            localize_subgoal(&st, &[], &LocalizerBackend::Scripted),
            Localized::PlanExhausted { .. }
        ));
        assert_eq!(st.ledger_indices(), [0, 1, 2]);
    }

    #[test]
    fn ledger_contract() {
        let mut st = RouterState::new(plan(&["A.", "B.", "C."])).unwrap();
        let res = |k: usize| LocalizeResult {
            subgoal: String::new(),
            plan_index: k,
            reasoning: String::new(),
            provenance: vec![],
        };
        update_ledger(&mut st, &res(0)).unwrap();
        update_ledger(&mut st, &res(2)).unwrap();
        assert_eq!(st.ledger_indices(), [0, 2]);
        assert_eq!(
            update_ledger(&mut st, &res(1)),
            Err(RouterError::LedgerRegression { index: 1, last: 2 })
        );
    }

    #[test]
    fn external_exact_and_fuzzy_matching() {
        let p = plan(&[
            "Go through the archway.",
            "Head straight until you enter the room with a pool table.",
            "Step slightly to the left.",
            "Wait there.",
        ]);
        let c = ModelClient::from_fn(|_| Ok(json_reply("Head straight until you enter the room with a pool table.")));
        let st = RouterState::new(p.clone()).unwrap();
        let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::External(c)) else {
            panic!()
        };
        assert_eq!(r.plan_index, 1);
        assert!(r.provenance.is_empty());

        // naming an executed subgoal moves to the nearest later entry
        let mut st = RouterState::new(p).unwrap();
        for k in [0, 1] {
            update_ledger(
                &mut st,
                &LocalizeResult {
                    subgoal: String::new(),
                    plan_index: k,
                    reasoning: String::new(),
                    provenance: vec![],
                },
            )
            .unwrap();
        }
        st.complete_active();
        let c = ModelClient::from_fn(|_| Ok(json_reply("Go through the archway.")));
        let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::External(c)) else {
            panic!()
        };
        assert_eq!(r.plan_index, 2);
        assert!(update_ledger(&mut st, &r).unwrap());
    }

    #[test]
    fn external_garbage_falls_back_to_sequential() {
        let st = RouterState::new(plan(&["A.", "B."])).unwrap();
        let c = ModelClient::from_fn(|_| Ok("```json\n{\"x\": 1}\n```".into()));
        let Localized::Subgoal(r) = localize_subgoal(&st, &[], &LocalizerBackend::External(c)) else {
            panic!()
        };
        assert_eq!(r.plan_index, 0);
        assert_eq!(r.provenance.len(), 3);
        let c = ModelClient::from_fn(|_| Err(TransportError::NotRecorded("k".into())));
        assert!(matches!(
            localize_subgoal(&st, &[], &LocalizerBackend::External(c)),
            Localized::Subgoal(LocalizeResult { plan_index: 0, .. })
        ));
        let c = ModelClient::from_fn(|_| Ok(json_reply("")));
        assert!(matches!(
            localize_subgoal(&st, &[], &LocalizerBackend::External(c)),
            Localized::PlanExhausted { .. }
        ));
    }

    #[test]
    fn parses_fenced_json() {
        let (s, r) = parse_localizer_response(&format!("```json\n{}\n```", json_reply("A."))).unwrap();
        assert_eq!((s.as_str(), r.as_str()), ("A.", "r"));
        assert!(parse_localizer_response("{\"Sub-instruction to be executed\": \"a\"}").is_err());
    }

    #[test]
    fn route_parsing() {
        assert_eq!(parse_route_response(b"*****Landmark Detection*****"), Some(Skill::LandmarkDetection));
        assert_eq!(parse_route_response(b"I think Direction"), None);
        assert_eq!(
            parse_route_response(b"*****Stop and Pause***** or *****Vertical Movement*****"),
            None
        );
        assert_eq!(parse_route_response(b"*****Temporal Order Planning*****"), None);
        assert_eq!(
            parse_route_response(b"*****SKILL_NAME***** *****vertical movement*****"),
            Some(Skill::VerticalMovement)
        );
    }

    #[test]
    fn scripted_routing_by_keywords() {
        let opts = RouteOptions::default();
        let r = route_skill("", "", "Walk down the stairs.", "", 0, &RouterBackend::Scripted, &opts);
        assert_eq!((r.skill, r.fallback_used), (Skill::VerticalMovement, FallbackUsed::None));
        let r = route_skill(
            "",
            "",
            "Head straight until you enter the room with a pool table.",
            "",
            0,
            &RouterBackend::Scripted,
            &opts,
        );
        assert_eq!(r.skill, Skill::LandmarkDetection);
        let r = route_skill("", "", "Proceed.", "", 0, &RouterBackend::Scripted, &opts);
        assert_eq!((r.skill, r.fallback_used), (Skill::LandmarkDetection, FallbackUsed::Default));
    }

    #[test]
    fn external_routing_fallback_chain() {
        let opts = RouteOptions::default();
        let c = ModelClient::from_fn(|_| Ok("I think Direction".into()));
        let r = route_skill("", "", "Turn left.", "", 0, &RouterBackend::External(c), &opts);
        assert_eq!((r.skill, r.fallback_used), (Skill::DirectionAdjustment, FallbackUsed::Keyword));
        assert_eq!(r.provenance.len(), 2);
        let c = ModelClient::from_fn(|_| Ok("*****Landmark Detection*****".into()));
        let r = route_skill("", "", "Turn left.", "", 0, &RouterBackend::External(c), &opts);
        assert_eq!((r.skill, r.fallback_used), (Skill::LandmarkDetection, FallbackUsed::None));
    }

    #[test]
    fn random_route_is_uniform_and_deterministic() {
        let a: Vec<Skill> = (0..50).map(|t| random_route(0, t).skill).collect();
        let b: Vec<Skill> = (0..50).map(|t| random_route(0, t).skill).collect();
        assert_eq!(a, b);
        let mut counts = std::collections::BTreeMap::new();
        for t in 0..10_000 {
            let s = random_route(7, t).skill;
            assert!(s.is_routed());
            *counts.entry(s).or_insert(0usize) += 1;
        }
        for c in counts.values() {
            let f = *c as f64 / 10_000.0;
            assert!((0.18..=0.22).contains(&f), "{counts:?}");
        }
        assert_eq!(counts.len(), 5);
    }
}
