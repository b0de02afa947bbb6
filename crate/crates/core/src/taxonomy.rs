//! Skill and temporal-relation vocabularies plus keyword-based instruction
//! analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{contains_phrase, count_phrase, words};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Navigation skills. Declaration order is the canonical tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    #[serde(rename = "direction")]
    DirectionAdjustment,
    #[serde(rename = "vertical")]
    VerticalMovement,
    #[serde(rename = "stop")]
    StopAndPause,
    #[serde(rename = "landmark")]
    LandmarkDetection,
    #[serde(rename = "region")]
    AreaRegionIdentification,
    #[serde(rename = "temporal")]
    TemporalOrderPlanning,
}

impl Skill {
    pub const ALL: [Skill; 6] = [
        Skill::DirectionAdjustment,
        Skill::VerticalMovement,
        Skill::StopAndPause,
        Skill::LandmarkDetection,
        Skill::AreaRegionIdentification,
        Skill::TemporalOrderPlanning,
    ];

    /// Skills backed by a routed agent; temporal planning is handled by the
    /// reorderer instead.
    pub const ROUTED: [Skill; 5] = [
        Skill::DirectionAdjustment,
        Skill::VerticalMovement,
        Skill::StopAndPause,
        Skill::LandmarkDetection,
        Skill::AreaRegionIdentification,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Skill::DirectionAdjustment => "Direction Adjustment",
            Skill::VerticalMovement => "Vertical Movement",
            Skill::StopAndPause => "Stop and Pause",
            Skill::LandmarkDetection => "Landmark Detection",
            Skill::AreaRegionIdentification => "Area and Region Identification",
            Skill::TemporalOrderPlanning => "Temporal Order Planning",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Skill::DirectionAdjustment => "direction",
            Skill::VerticalMovement => "vertical",
            Skill::StopAndPause => "stop",
            Skill::LandmarkDetection => "landmark",
            Skill::AreaRegionIdentification => "region",
            Skill::TemporalOrderPlanning => "temporal",
        }
    }

    pub fn is_routed(self) -> bool {
        self != Skill::TemporalOrderPlanning
    }

    /// Match a display name case-insensitively, ignoring surrounding whitespace.
    pub fn from_display_name(name: &str) -> Option<Skill> {
        let name = name.trim();
        Skill::ALL
            .into_iter()
            .find(|s| s.display_name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Skill {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Skill::ALL
            .into_iter()
            .find(|k| k.key().eq_ignore_ascii_case(s.trim()))
            .or_else(|| Skill::from_display_name(s))
            .ok_or_else(|| TaxonomyError::UnknownSkill(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalRelation {
    ConditionalImmediacy,
    BoundedDuration,
    ForwardSequential,
    BackwardSequential,
}

impl TemporalRelation {
    pub const ALL: [TemporalRelation; 4] = [
        TemporalRelation::ConditionalImmediacy,
        TemporalRelation::BoundedDuration,
        TemporalRelation::ForwardSequential,
        TemporalRelation::BackwardSequential,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            TemporalRelation::ConditionalImmediacy => "Conditional Immediacy",
            TemporalRelation::BoundedDuration => "Bounded Duration",
            TemporalRelation::ForwardSequential => "Forward Sequential",
            TemporalRelation::BackwardSequential => "Backward Sequential",
        }
    }

    fn from_display_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.display_name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for TemporalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// Keyword sets per skill and cue sets per temporal relation. Entries are
/// stored pre-tokenized so phrase matching is on word boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordLexicon {
    skills: BTreeMap<Skill, Vec<Vec<String>>>,
    relations: BTreeMap<TemporalRelation, Vec<Vec<String>>>,
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl KeywordLexicon {
    pub fn from_json(src: &str) -> Result<Self, TaxonomyError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(src).map_err(|e| TaxonomyError::Lexicon(e.to_string()))?;
        let mut skills = BTreeMap::new();
        let mut relations = BTreeMap::new();
        for (name, entries) in raw {
            if entries.is_empty() {
                return Err(TaxonomyError::Lexicon(format!("{name:?} has an empty keyword set")));
            }
            let mut tokenized = Vec::with_capacity(entries.len());
            for e in &entries {
                if e.to_lowercase() != *e {
                    return Err(TaxonomyError::Lexicon(format!("{name:?} entry {e:?} is not lowercase")));
                }
                let t = words(e);
                if t.is_empty() {
                    return Err(TaxonomyError::Lexicon(format!("{name:?} has a blank entry")));
                }
                tokenized.push(t);
            }
            if let Some(skill) = Skill::from_display_name(&name) {
                skills.insert(skill, tokenized);
            } else if let Some(rel) = TemporalRelation::from_display_name(&name) {
                relations.insert(rel, tokenized);
            } else {
                return Err(TaxonomyError::Lexicon(format!("unknown lexicon key {name:?}")));
            }
        }
        Ok(Self { skills, relations })
    }

    pub fn from_path(path: &Path) -> Result<Self, TaxonomyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn skill_keywords(&self, skill: Skill) -> &[Vec<String>] {
        self.skills.get(&skill).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn relation_cues(&self, rel: TemporalRelation) -> &[Vec<String>] {
        self.relations.get(&rel).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Add a keyword (lowercased) to a skill's set.
    pub fn add_skill_keyword(&mut self, skill: Skill, keyword: &str) {
        let t = words(keyword);
        if !t.is_empty() {
            self.skills.entry(skill).or_default().push(t);
        }
    }

    /// Number of keyword occurrences for `skill` in pre-tokenized text.
    pub fn skill_votes(&self, skill: Skill, tokens: &[String]) -> usize {
        self.skill_keywords(skill)
            .iter()
            .map(|k| count_phrase(tokens, k))
            .sum()
    }
}

/// Multi-label skill detection: a skill is present when any of its keywords
/// occurs on word boundaries.
pub fn detect_skills(instruction: &str, lexicon: &KeywordLexicon) -> BTreeSet<Skill> {
    let tokens = words(instruction);
    Skill::ALL
        .into_iter()
        .filter(|&s| lexicon.skill_keywords(s).iter().any(|k| contains_phrase(&tokens, k)))
        .collect()
}

/// Temporal relations cued in an instruction.
///
/// A cue listed under both sequential relations (`before`, `after`) is
/// assigned by comparing mention order with execution order: `Before A, B`
/// and `B after A` mention the later action first and count as backward;
/// `B before A` and `After A, B` count as forward. A cue without clauses on
/// both sides defaults to forward.
pub fn classify_temporal(instruction: &str, lexicon: &KeywordLexicon) -> BTreeSet<TemporalRelation> {
    use TemporalRelation::*;
    let mut out = BTreeSet::new();
    let sentences = clause_tokens(instruction);
    let fwd = lexicon.relation_cues(ForwardSequential);
    let bwd = lexicon.relation_cues(BackwardSequential);

    for rel in [ConditionalImmediacy, BoundedDuration] {
        if lexicon
            .relation_cues(rel)
            .iter()
            .any(|cue| sentences.iter().any(|s| contains_phrase(&s.tokens, cue)))
        {
            out.insert(rel);
        }
    }
    for cue in fwd.iter().chain(bwd.iter()) {
        let shared = fwd.contains(cue) && bwd.contains(cue);
        for s in &sentences {
            for pos in phrase_positions(&s.tokens, cue) {
                if !shared {
                    out.insert(if fwd.contains(cue) { ForwardSequential } else { BackwardSequential });
                    continue;
                }
                out.insert(shared_cue_relation(s, pos, cue));
            }
        }
    }
    out
}

fn shared_cue_relation(s: &SentenceTokens, pos: usize, cue: &[String]) -> TemporalRelation {
    use TemporalRelation::*;
    let end = pos + cue.len();
    let clause_initial = s.clause_starts.contains(&pos);
    let introduces_earlier = cue.first().map(String::as_str) == Some("after");
    if clause_initial {
        // `Before A, B` / `After A, B`: needs a following clause after a comma.
        let has_main = s.clause_starts.iter().any(|&c| c > end && c < s.tokens.len());
        match (has_main, introduces_earlier) {
            (true, false) => BackwardSequential,
            _ => ForwardSequential,
        }
    } else {
        let has_both = pos > 0 && end < s.tokens.len();
        match (has_both, introduces_earlier) {
            (true, true) => BackwardSequential,
            _ => ForwardSequential,
        }
    }
}

fn phrase_positions(tokens: &[String], phrase: &[String]) -> Vec<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return Vec::new();
    }
    tokens
        .windows(phrase.len())
        .enumerate()
        .filter(|(_, w)| *w == phrase)
        .map(|(i, _)| i)
        .collect()
}

struct SentenceTokens {
    tokens: Vec<String>,
    /// Token indices that begin a clause: sentence start, or just after a
    /// comma (skipping a coordinating `and`/`but`).
    clause_starts: Vec<usize>,
}

fn clause_tokens(text: &str) -> Vec<SentenceTokens> {
    let mut out = Vec::new();
    for sentence in text.split(['.', '!', '?', ';']) {
        let mut tokens = Vec::new();
        let mut clause_starts = Vec::new();
        for (ci, clause) in sentence.split(',').enumerate() {
            let mut w = words(clause);
            if ci > 0 && matches!(w.first().map(String::as_str), Some("and" | "but")) {
                tokens.push(w.remove(0));
            }
            if !w.is_empty() {
                clause_starts.push(tokens.len());
            }
            tokens.extend(w);
        }
        if !tokens.is_empty() {
            out.push(SentenceTokens { tokens, clause_starts });
        }
    }
    out
}

/// Per-skill count of instructions with at least one keyword hit. All six
/// skills are present in the result, zero counts included.
pub fn skill_histogram<S: AsRef<str>>(corpus: &[S], lexicon: &KeywordLexicon) -> BTreeMap<Skill, usize> {
    let mut counts: BTreeMap<Skill, usize> = Skill::ALL.into_iter().map(|s| (s, 0)).collect();
    for text in corpus {
        for s in detect_skills(text.as_ref(), lexicon) {
            *counts.entry(s).or_default() += 1;
        }
    }
    counts
}

/// Bar-chart-ready CSV of a histogram.
pub fn histogram_csv(hist: &BTreeMap<Skill, usize>) -> String {
    let mut out = String::from("skill,count\n");
    for (s, c) in hist {
        out.push_str(&format!("{},{}\n", s.display_name(), c));
    }
    out
}

/// JSON form of a histogram keyed by display name.
pub fn histogram_json(hist: &BTreeMap<Skill, usize>) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = hist
        .iter()
        .map(|(s, c)| (s.display_name().to_string(), serde_json::Value::from(*c)))
        .collect();
    serde_json::Value::Object(map)
}
