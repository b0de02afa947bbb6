//! Skill-specific trajectory synthesis: seeded self-avoiding walks, per-skill
//! acceptance filters, instruction generation and corpus statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NavGraph};
use crate::model::ModelClient;
use crate::prompts;
use crate::taxonomy::Skill;
use crate::text::stat_tokens;

pub const MIN_STEPS: usize = 4;
pub const MAX_STEPS: usize = 7;
pub const GRAMMAR_VERSION: &str = "grammar-v1";
const ATTEMPT_BUDGET: u64 = 1_000_000;
const ATTEMPT_CHUNK: u64 = 2048;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph cannot host any self-avoiding walk of {min}-{max} steps")]
    NoValidWalk { min: usize, max: usize },
    #[error("invalid trajectory: {0}")]
    InvalidSample(String),
    #[error("{skill} filter accepted {accepted} of {attempts} attempts (needed {needed}); most common rejection: {top_reason}")]
    LowAcceptance {
        skill: Skill,
        attempts: u64,
        accepted: usize,
        needed: usize,
        top_reason: String,
    },
    #[error("n must be at least 1")]
    EmptyRequest,
    #[error("invalid length weights: {0}")]
    Weights(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub from: String,
    pub to: String,
    /// Absolute turn relative to the previous step; `None` on the first step.
    pub heading_change_deg: Option<f64>,
    /// Same turn, signed (right positive).
    pub signed_turn_deg: Option<f64>,
    pub elevation_delta_m: f64,
    pub region_from: String,
    pub region_to: String,
    pub landmarks_from: BTreeSet<String>,
    /// Landmarks observed on arrival at `to`.
    pub landmarks_visible: BTreeSet<String>,
}

impl StepEvent {
    pub fn changes_region(&self) -> bool {
        self.region_from != self.region_to
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub nodes: Vec<String>,
    pub events: Vec<StepEvent>,
    pub seed: u64,
}

impl TrajectorySample {
    /// Validate `nodes` as a walk on `graph` and derive its step events.
    pub fn from_nodes(graph: &NavGraph, nodes: Vec<String>, seed: u64) -> Result<Self, SynthError> {
        let steps = nodes.len().saturating_sub(1);
        if !(MIN_STEPS..=MAX_STEPS).contains(&steps) {
            return Err(SynthError::InvalidSample(format!("{steps} steps, expected {MIN_STEPS}-{MAX_STEPS}")));
        }
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if graph.viewpoint(n)?.has_error_region() {
                return Err(SynthError::InvalidSample(format!("node {n} lies in an error region")));
            }
            if !seen.insert(n.as_str()) {
                return Err(SynthError::InvalidSample(format!("node {n} repeats")));
            }
        }
        let mut events = Vec::with_capacity(steps);
        for i in 0..steps {
            let (a, b) = (&nodes[i], &nodes[i + 1]);
            if !graph.is_edge(a, b) {
                return Err(GraphError::NotAnEdge(a.clone(), b.clone()).into());
            }
            let signed = if i == 0 {
                None
            } else {
                Some(graph.signed_heading_change(&nodes[i - 1], a, b)?)
            };
            let (va, vb) = (graph.viewpoint(a)?, graph.viewpoint(b)?);
            events.push(StepEvent {
                from: a.clone(),
                to: b.clone(),
                heading_change_deg: signed.map(f64::abs),
                signed_turn_deg: signed,
                elevation_delta_m: vb.position.z - va.position.z,
                region_from: va.region.clone(),
                region_to: vb.region.clone(),
                landmarks_from: va.landmarks.clone(),
                landmarks_visible: vb.landmarks.clone(),
            });
        }
        Ok(Self { nodes, events, seed })
    }

    pub fn steps(&self) -> usize {
        self.events.len()
    }
}

/// Relative sampling weights for each walk length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthWeights(pub BTreeMap<usize, f64>);

impl Default for LengthWeights {
    fn default() -> Self {
        Self([(4, 0.1), (5, 0.3), (6, 0.3), (7, 0.3)].into_iter().collect())
    }
}

impl LengthWeights {
    fn validate(&self) -> Result<(), SynthError> {
        if self.0.is_empty() {
            return Err(SynthError::Weights("no lengths".into()));
        }
        for (&len, &w) in &self.0 {
            if !(MIN_STEPS..=MAX_STEPS).contains(&len) {
                return Err(SynthError::Weights(format!("length {len} outside {MIN_STEPS}-{MAX_STEPS}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(SynthError::Weights(format!("weight {w} for length {len}")));
            }
        }
        if self.0.values().sum::<f64>() <= 0.0 {
            return Err(SynthError::Weights("weights sum to zero".into()));
        }
        Ok(())
    }
}

/// Per-sample seed derived from a run seed and attempt index (splitmix64).
pub fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    let mut z = seed ^ attempt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Walk sampler over the non-error part of a graph.
pub struct Sampler<'g> {
    graph: &'g NavGraph,
    adjacency: Vec<Vec<usize>>,
    ids: Vec<&'g str>,
    /// For each feasible length, the starts that can host a walk of that length.
    starts: BTreeMap<usize, Vec<usize>>,
    lengths: Vec<usize>,
    weights: Vec<f64>,
}

impl<'g> Sampler<'g> {
    pub fn new(graph: &'g NavGraph, weights: &LengthWeights) -> Result<Self, SynthError> {
        weights.validate()?;
        let ids: Vec<&str> = graph.nodes().iter().map(|n| n.id.as_str()).collect();
        let usable: Vec<bool> = graph.nodes().iter().map(|n| !n.has_error_region()).collect();
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for (i, id) in ids.iter().enumerate() {
            if !usable[i] {
                continue;
            }
            for nb in graph.neighbors(id)? {
                let j = index[nb];
                if usable[j] {
                    adjacency[i].push(j);
                }
            }
        }
        let mut sampler = Self {
            graph,
            adjacency,
            ids,
            starts: BTreeMap::new(),
            lengths: Vec::new(),
            weights: Vec::new(),
        };
        for (&len, &w) in &weights.0 {
            if w <= 0.0 {
                continue;
            }
            let hosts: Vec<usize> = (0..sampler.ids.len())
                .filter(|&s| usable[s] && sampler.walk_exists(s, len))
                .collect();
            if !hosts.is_empty() {
                sampler.starts.insert(len, hosts);
                sampler.lengths.push(len);
                sampler.weights.push(w);
            }
        }
        if sampler.lengths.is_empty() {
            return Err(SynthError::NoValidWalk {
                min: MIN_STEPS,
                max: MAX_STEPS,
            });
        }
        Ok(sampler)
    }

    fn walk_exists(&self, start: usize, len: usize) -> bool {
        let mut on_path = vec![false; self.ids.len()];
        on_path[start] = true;
        let mut path = vec![start];
        self.extend(&mut path, &mut on_path, len, &mut None)
    }

    /// Depth-first extension with backtracking. With an rng, neighbour order
    /// is shuffled at every level.
    fn extend(&self, path: &mut Vec<usize>, on_path: &mut [bool], len: usize, rng: &mut Option<&mut ChaCha8Rng>) -> bool {
        if path.len() == len + 1 {
            return true;
        }
        let last = *path.last().unwrap();
        let mut next: Vec<usize> = self.adjacency[last].iter().copied().filter(|&n| !on_path[n]).collect();
        if let Some(r) = rng.as_deref_mut() {
            next.shuffle(r);
        }
        for n in next {
            path.push(n);
            on_path[n] = true;
            if self.extend(path, on_path, len, rng) {
                return true;
            }
            on_path[n] = false;
            path.pop();
        }
        false
    }

    /// Draw one walk from a sample seed.
    pub fn sample(&self, sample_seed: u64) -> Result<TrajectorySample, SynthError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let total: f64 = self.weights.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut len = *self.lengths.last().unwrap();
        for (l, w) in self.lengths.iter().zip(&self.weights) {
            if pick < *w {
                len = *l;
                break;
            }
            pick -= w;
        }
        let hosts = &self.starts[&len];
        let start = hosts[rng.gen_range(0..hosts.len())];
        let mut on_path = vec![false; self.ids.len()];
        on_path[start] = true;
        let mut path = vec![start];
        let found = self.extend(&mut path, &mut on_path, len, &mut Some(&mut rng));
        debug_assert!(found, "start was pre-checked");
        let nodes = path.into_iter().map(|i| self.ids[i].to_string()).collect();
        TrajectorySample::from_nodes(self.graph, nodes, sample_seed)
    }
}

/// `count` seeded walks; sample `i` uses `attempt_seed(seed, i)`.
pub fn sample_paths(
    graph: &NavGraph,
    seed: u64,
    count: usize,
    weights: &LengthWeights,
) -> Result<Vec<TrajectorySample>, SynthError> {
    let sampler = Sampler::new(graph, weights)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| sampler.sample(attempt_seed(seed, i)))
        .collect()
}

/// A numeric filter setting with the qualitative criterion it stands in for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cited<T> {
    pub value: T,
    pub comment: String,
}

fn cited<T>(value: T, comment: &str) -> Cited<T> {
    Cited {
        value,
        comment: comment.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub turn_min_deg: Cited<f64>,
    pub turn_reversal_deg: Cited<f64>,
    pub min_turns: Cited<usize>,
    pub elevation_min_m: Cited<f64>,
    pub slope_tolerance_m: Cited<f64>,
    pub vertical_tags: Cited<Vec<String>>,
    pub stop_jaccard: Cited<f64>,
    pub pause_tags: Cited<Vec<String>>,
    pub landmark_persistence: Cited<usize>,
    pub min_region_transitions: Cited<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            turn_min_deg: cited(30.0, "the agent should \"cause a reversal or double-turn behavior\"; smaller turns are drift"),
            turn_reversal_deg: cited(150.0, "turns at or above this count as reversals and are rejected"),
            min_turns: cited(2, "double-turn behavior"),
            elevation_min_m: cited(2.0, "\"significant elevation (more than ±2)\""),
            slope_tolerance_m: cited(0.5, "\"impossible to go upstairs and then go downstairs\"; steps beyond this slope must agree in sign"),
            vertical_tags: cited(strings(&["stairs", "staircase", "steps", "elevator", "escalator"]), "vertical landmarks"),
            stop_jaccard: cited(0.8, "the end point is \"very similar to the previous viewpoints\""),
            pause_tags: cited(strings(&["painting", "stairs"]), "pause contexts such as \"in front of a painting, at the foot of stairs\""),
            landmark_persistence: cited(3, "landmarks \"appear persistently in successive views\""),
            min_region_transitions: cited(1, "\"at least one region change\""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reason: String,
}

impl FilterVerdict {
    fn accept() -> Self {
        Self {
            accepted: true,
            reason: "ok".into(),
        }
    }

    fn reject(reason: &str) -> Self {
        Self {
            accepted: false,
            reason: reason.into(),
        }
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn passes_filter(sample: &TrajectorySample, skill: Skill, cfg: &FilterConfig) -> FilterVerdict {
    let ev = &sample.events;
    if ev.is_empty() {
        return FilterVerdict::reject("empty trajectory");
    }
    match skill {
        Skill::DirectionAdjustment => {
            let turns: Vec<f64> = ev.iter().filter_map(|e| e.heading_change_deg).collect();
            if turns.iter().any(|&t| t >= cfg.turn_reversal_deg.value) {
                return FilterVerdict::reject("contains a reversal");
            }
            let significant = turns.iter().filter(|&&t| t >= cfg.turn_min_deg.value).count();
            if significant < cfg.min_turns.value {
                return FilterVerdict::reject("too few significant turns");
            }
            FilterVerdict::accept()
        }
        Skill::VerticalMovement => {
            let tags = &cfg.vertical_tags.value;
            let tagged = |e: &StepEvent| {
                tags.iter()
                    .any(|t| e.landmarks_from.contains(t) || e.landmarks_visible.contains(t))
            };
            if !ev
                .iter()
                .any(|e| e.elevation_delta_m.abs() > cfg.elevation_min_m.value && tagged(e))
            {
                return FilterVerdict::reject("no significant elevation");
            }
            let signs: BTreeSet<bool> = ev
                .iter()
                .filter(|e| e.elevation_delta_m.abs() > cfg.slope_tolerance_m.value)
                .map(|e| e.elevation_delta_m > 0.0)
                .collect();
            if signs.len() > 1 {
                return FilterVerdict::reject("goes both up and down");
            }
            FilterVerdict::accept()
        }
        Skill::StopAndPause => {
            let last = ev.last().unwrap();
            let similar = jaccard(&last.landmarks_visible, &last.landmarks_from) >= cfg.stop_jaccard.value;
            let pause = cfg.pause_tags.value.iter().any(|t| last.landmarks_visible.contains(t));
            if similar || pause {
                FilterVerdict::accept()
            } else {
                FilterVerdict::reject("endpoint is not a distinctive stop")
            }
        }
        Skill::LandmarkDetection => {
            let need = cfg.landmark_persistence.value.max(1);
            let mut runs: BTreeMap<&str, usize> = BTreeMap::new();
            for e in ev {
                runs.retain(|tag, _| e.landmarks_visible.contains(*tag));
                for tag in &e.landmarks_visible {
                    let r = runs.entry(tag.as_str()).or_insert(0);
                    *r += 1;
                    if *r >= need {
                        return FilterVerdict::accept();
                    }
                }
            }
            FilterVerdict::reject("no persistent landmark")
        }
        Skill::AreaRegionIdentification => {
            if ev.iter().any(|e| {
                e.region_from == crate::graph::ERROR_REGION || e.region_to == crate::graph::ERROR_REGION
            }) {
                return FilterVerdict::reject("passes through an error region");
            }
            if ev.iter().filter(|e| e.changes_region()).count() < cfg.min_region_transitions.value {
                return FilterVerdict::reject("no region change");
            }
            FilterVerdict::accept()
        }
        Skill::TemporalOrderPlanning => {
            let dwell = ev.len() / 2;
            if ev[..dwell].iter().any(StepEvent::changes_region) {
                return FilterVerdict::reject("region changes during the opening dwell");
            }
            if !ev[dwell..].iter().any(StepEvent::changes_region) {
                return FilterVerdict::reject("no region change after the dwell");
            }
            FilterVerdict::accept()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Template,
    External,
}

/// Instruction source for a build.
#[derive(Debug, Clone)]
pub enum Generator {
    Template,
    External { client: ModelClient, model_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstruction {
    pub text: String,
    pub generator: GeneratorKind,
    pub provenance: String,
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.gen_range(0..options.len())]
}

fn first_landmark(set: &BTreeSet<String>, skip: &BTreeSet<String>) -> Option<String> {
    set.iter().find(|l| !skip.contains(*l)).or_else(|| set.iter().next()).cloned()
}

fn step_clause(e: &StepEvent, rng: &mut ChaCha8Rng) -> String {
    let mut parts: Vec<String> = Vec::new();
    if e.elevation_delta_m > 2.0 {
        parts.push(pick(rng, &["go up the stairs", "climb the stairs", "head upstairs"]).into());
    } else if e.elevation_delta_m < -2.0 {
        parts.push(pick(rng, &["go down the stairs", "walk downstairs", "descend the stairs"]).into());
    } else if let Some(turn) = e.signed_turn_deg {
        if turn.abs() >= 150.0 {
            parts.push("turn around".into());
        } else if turn >= 30.0 {
            parts.push(pick(rng, &["turn right", "make a right", "bear right"]).into());
        } else if turn <= -30.0 {
            parts.push(pick(rng, &["turn left", "make a left", "bear left"]).into());
        }
    }
    if e.changes_region() {
        let verb = pick(rng, &["enter", "walk into", "step into"]);
        parts.push(format!("{verb} the {}", e.region_to));
    } else if parts.is_empty() {
        match first_landmark(&e.landmarks_visible, &e.landmarks_from) {
            Some(lm) if !e.landmarks_from.contains(&lm) => {
                let verb = pick(rng, &["walk past the", "head toward the", "continue to the"]);
                parts.push(format!("{verb} {lm}"));
            }
            _ => parts.push(pick(rng, &["walk straight ahead", "continue forward", "keep going straight"]).into()),
        }
    }
    parts.join(" and ")
}

fn terminal_clause(sample: &TrajectorySample, skill: Skill, rng: &mut ChaCha8Rng) -> String {
    let last = sample.events.last().unwrap();
    let verb = if skill == Skill::StopAndPause {
        pick(rng, &["stop and wait", "come to a stop", "stop"])
    } else {
        pick(rng, &["stop", "come to a stop"])
    };
    match last.landmarks_visible.iter().next() {
        Some(lm) => format!("{verb} next to the {lm}"),
        None => format!("{verb} in the {}", last.region_to),
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Deterministic grammar instruction for a sample, aiming for 20-30 words.
pub fn template_instruction(sample: &TrajectorySample, skill: Skill) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(sample.seed ^ 0x7E3A_17E5);
    let mut clauses: Vec<String> = Vec::new();
    let mut i = 0;
    if skill == Skill::TemporalOrderPlanning {
        let dwell = sample.events.len() / 2;
        let region = &sample.events[0].region_from;
        clauses.push(format!("stay in the {region} for a few steps"));
        i = dwell;
    }
    for e in &sample.events[i..] {
        let c = step_clause(e, &mut rng);
        if clauses.last() == Some(&c) {
            continue;
        }
        clauses.push(c);
    }
    let terminal = terminal_clause(sample, skill, &mut rng);

    let protected = usize::from(skill == Skill::TemporalOrderPlanning);
    let render = |clauses: &[String], joiner: &str, lead: bool| -> String {
        let mut body = clauses.join(joiner);
        if lead {
            body = format!("starting in the {}, {body}", sample.events[0].region_from);
        }
        capitalize(&format!("{body}, and {terminal}."))
    };
    let too_long = |clauses: &[String], joiner: &str| word_count(&render(clauses, joiner, false)) > 30;
    let mut joiner = ", then ";
    while too_long(&clauses, joiner) {
        let filler = clauses.iter().rposition(|c| {
            c.starts_with("walk straight") || c.starts_with("continue forward") || c.starts_with("keep going")
        });
        match filler {
            Some(k) if clauses.len() > protected + 1 => {
                clauses.remove(k);
            }
            _ => break,
        }
    }
    if too_long(&clauses, joiner) {
        joiner = ", ";
    }
    // shed the earliest clauses, sparing the ones that carry the skill
    while too_long(&clauses, joiner) && clauses.len() > protected + 1 {
        let k = (protected..clauses.len())
            .find(|&k| !emphasizes(&clauses[k], skill))
            .unwrap_or(protected);
        clauses.remove(k);
    }
    let plain = render(&clauses, joiner, false);
    if word_count(&plain) < 20 {
        render(&clauses, joiner, true)
    } else {
        plain
    }
}

fn emphasizes(clause: &str, skill: Skill) -> bool {
    let cues: &[&str] = match skill {
        Skill::DirectionAdjustment => &["left", "right", "around"],
        Skill::VerticalMovement => &["stairs", "upstairs", "downstairs"],
        Skill::LandmarkDetection => &["past", "toward", "continue to"],
        Skill::AreaRegionIdentification | Skill::TemporalOrderPlanning => &["enter", "into"],
        Skill::StopAndPause => &[],
    };
    cues.iter().any(|c| clause.contains(c))
}

/// Symbolic per-frame observation summary used in place of trajectory images.
pub fn observation_summary(sample: &TrajectorySample) -> String {
    let mut lines = Vec::new();
    let first = &sample.events[0];
    lines.push(format!(
        "Frame 1: in the {}; visible: {}",
        first.region_from,
        list_or_none(&first.landmarks_from)
    ));
    for (k, e) in sample.events.iter().enumerate() {
        let mut parts = vec![format!("Frame {}: in the {}", k + 2, e.region_to)];
        if let Some(t) = e.signed_turn_deg {
            if t.abs() >= 30.0 {
                parts.push(format!("turned {} {:.0} degrees", if t > 0.0 { "right" } else { "left" }, t.abs()));
            }
        }
        if e.elevation_delta_m.abs() > 0.5 {
            parts.push(format!("elevation {:+.1} m", e.elevation_delta_m));
        }
        parts.push(format!("visible: {}", list_or_none(&e.landmarks_visible)));
        lines.push(parts.join("; "));
    }
    lines.join("\n")
}

fn list_or_none(set: &BTreeSet<String>) -> String {
    if set.is_empty() {
        "nothing notable".into()
    } else {
        set.iter().cloned().collect::<Vec<_>>().join(", ")
    }
}

/// Check a generated instruction; returns the cleaned text or the problem.
pub fn validate_generated(text: &str, skill: Skill) -> Result<String, String> {
    let t = text.trim().trim_matches('"').trim();
    if t.is_empty() {
        return Err("the response was empty".into());
    }
    if t.contains('\n') {
        return Err("the response must be a single paragraph on one line".into());
    }
    if skill.is_routed() {
        let n = word_count(t);
        if !(20..=30).contains(&n) {
            return Err(format!("the response has {n} words; it must have 20-30 words"));
        }
    }
    Ok(t.to_string())
}

pub fn generate_instruction(sample: &TrajectorySample, skill: Skill, generator: &Generator) -> GeneratedInstruction {
    let fallback = |note: String| GeneratedInstruction {
        text: template_instruction(sample, skill),
        generator: GeneratorKind::Template,
        provenance: note,
    };
    let (client, model_id) = match generator {
        Generator::Template => return fallback(GRAMMAR_VERSION.into()),
        Generator::External { client, model_id } => (client, model_id),
    };
    let obs = observation_summary(sample);
    let prompt = if skill.is_routed() {
        prompts::synthesis_atomic(&obs, skill.display_name())
    } else {
        prompts::synthesis_temporal(&obs)
    };
    let mut attempt_prompt = prompt.clone();
    let mut last_problem = String::new();
    for _ in 0..2 {
        match client.complete(&attempt_prompt, &[]) {
            Ok(text) => match validate_generated(&text, skill) {
                Ok(clean) => {
                    return GeneratedInstruction {
                        text: clean,
                        generator: GeneratorKind::External,
                        provenance: model_id.clone(),
                    }
                }
                Err(problem) => {
                    tracing::debug!(%problem, "generated instruction rejected");
                    attempt_prompt = prompts::repair_note(&prompt, &problem);
                    last_problem = problem;
                }
            },
            Err(e) => {
                tracing::warn!(error = %e, "instruction generator unavailable");
                return fallback(format!("{GRAMMAR_VERSION}; fallback: {e}"));
            }
        }
    }
    fallback(format!("{GRAMMAR_VERSION}; fallback: {last_problem}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instr_count: usize,
    pub vocab_size: usize,
    pub mean_instr_len: f64,
}

impl DatasetStats {
    /// `# Instr, # Vocab, Instr Len` row.
    pub fn to_row(&self, label: &str) -> String {
        format!("{label},{},{},{:.2}", self.instr_count, self.vocab_size, self.mean_instr_len)
    }
}

pub fn dataset_stats<S: AsRef<str>>(instructions: &[S]) -> DatasetStats {
    let mut vocab = BTreeSet::new();
    let mut total = 0usize;
    for s in instructions {
        let toks = stat_tokens(s.as_ref());
        total += toks.len();
        vocab.extend(toks);
    }
    let n = instructions.len();
    DatasetStats {
        instr_count: n,
        vocab_size: vocab.len(),
        mean_instr_len: if n == 0 { 0.0 } else { total as f64 / n as f64 },
    }
}

/// Instructions from an R2R-format file: a JSON array of paths, each with an
/// `"instructions"` list.
pub fn load_r2r_instructions(path: &Path) -> Result<Vec<String>, SynthError> {
    #[derive(Deserialize)]
    struct Item {
        instructions: Vec<String>,
    }
    let items: Vec<Item> = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
        .map_err(|e| SynthError::Format(e.to_string()))?;
    Ok(items.into_iter().flat_map(|i| i.instructions).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetEntry {
    pub trajectory: TrajectorySample,
    pub instruction: String,
    pub skill: Skill,
    pub generator: GeneratorKind,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    path: Vec<String>,
    instruction: String,
    skill: Skill,
    generator: GeneratorKind,
    seed: u64,
}

impl SynthDatasetEntry {
    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(&EntryLine {
            path: self.trajectory.nodes.clone(),
            instruction: self.instruction.clone(),
            skill: self.skill,
            generator: self.generator,
            seed: self.trajectory.seed,
        })
        .expect("serializable entry")
    }
}

/// One line of a dataset file, re-expanded against its graph.
pub fn parse_dataset_line(graph: &NavGraph, line: &str) -> Result<SynthDatasetEntry, SynthError> {
    let l: EntryLine = serde_json::from_str(line).map_err(|e| SynthError::Format(e.to_string()))?;
    if l.instruction.trim().is_empty() {
        return Err(SynthError::Format("empty instruction".into()));
    }
    Ok(SynthDatasetEntry {
        trajectory: TrajectorySample::from_nodes(graph, l.path, l.seed)?,
        instruction: l.instruction,
        skill: l.skill,
        generator: l.generator,
        provenance: String::new(),
    })
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub entries: Vec<SynthDatasetEntry>,
    pub attempts: u64,
    pub acceptance_rate: f64,
    pub rejections: BTreeMap<String, u64>,
}

impl BuildReport {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(out, "{}", e.to_jsonl_line())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    pub weights: LengthWeights,
    pub filters: FilterConfig,
}

/// Rejection-sample `n` trajectories passing the `skill` filter, in attempt
/// order, and attach instructions.
pub fn build_dataset(
    graph: &NavGraph,
    skill: Skill,
    n: usize,
    seed: u64,
    generator: &Generator,
    opts: &BuildOptions,
) -> Result<BuildReport, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyRequest);
    }
    let sampler = Sampler::new(graph, &opts.weights)?;
    let mut accepted: Vec<TrajectorySample> = Vec::with_capacity(n);
    let mut rejections: BTreeMap<String, u64> = BTreeMap::new();
    let mut attempts = 0u64;
    while accepted.len() < n && attempts < ATTEMPT_BUDGET {
        let end = (attempts + ATTEMPT_CHUNK).min(ATTEMPT_BUDGET);
        let batch: Vec<(TrajectorySample, FilterVerdict)> = (attempts..end)
            .into_par_iter()
            .map(|a| {
                let s = sampler.sample(attempt_seed(seed, a))?;
                let v = passes_filter(&s, skill, &opts.filters);
                Ok((s, v))
            })
            .collect::<Result<_, SynthError>>()?;
        for (s, v) in batch {
            attempts += 1;
            if v.accepted {
                accepted.push(s);
                if accepted.len() == n {
                    break;
                }
            } else {
                *rejections.entry(v.reason).or_insert(0) += 1;
            }
        }
    }
    if accepted.len() < n {
        let top_reason = rejections
            .iter()
            .max_by_key(|(_, c)| **c)
            .map(|(r, _)| r.clone())
            .unwrap_or_default();
        return Err(SynthError::LowAcceptance {
            skill,
            attempts,
            accepted: accepted.len(),
            needed: n,
            top_reason,
        });
    }
    let generate = |s: TrajectorySample| {
        let g = generate_instruction(&s, skill, generator);
        SynthDatasetEntry {
            trajectory: s,
            instruction: g.text,
            skill,
            generator: g.generator,
            provenance: g.provenance,
        }
    };
    let entries: Vec<SynthDatasetEntry> = match generator {
        Generator::Template => accepted.into_par_iter().map(generate).collect(),
        // keep live/recorded model calls in a stable order
        Generator::External { .. } => accepted.into_iter().map(generate).collect(),
    };
    Ok(BuildReport {
        entries,
        acceptance_rate: n as f64 / attempts as f64,
        attempts,
        rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LoadOptions, Position, Viewpoint};
    use crate::world;

    fn vp(id: &str, x: f64, y: f64, z: f64, region: &str, lms: &[&str]) -> Viewpoint {
        Viewpoint {
            id: id.into(),
            position: Position::new(x, y, z),
            region: region.into(),
            landmarks: lms.iter().map(|s| s.to_string()).collect(),
            descriptor: None,
        }
    }

    fn chain(nodes: Vec<Viewpoint>) -> NavGraph {
        let edges = nodes
            .windows(2)
            .map(|w| (w[0].id.clone(), w[1].id.clone(), None))
            .collect();
        NavGraph::from_parts(nodes, edges, LoadOptions::default()).unwrap()
    }

    fn sample_of(g: &NavGraph) -> TrajectorySample {
        let ids = g.nodes().iter().map(|n| n.id.clone()).collect();
        TrajectorySample::from_nodes(g, ids, 0).unwrap()
    }

    #[test]
    fn same_seed_same_samples() {
        let g = world::building(3, &Default::default());
        let a = sample_paths(&g, 0, 50, &LengthWeights::default()).unwrap();
        assert_eq!(a, sample_paths(&g, 0, 50, &LengthWeights::default()).unwrap());
        assert_ne!(a, sample_paths(&g, 1, 50, &LengthWeights::default()).unwrap());
    }

    #[test]
    fn lengths_in_range_and_four_is_rarest() {
        let g = world::building(3, &Default::default());
        let s = sample_paths(&g, 0, 1000, &LengthWeights::default()).unwrap();
        let mut hist = BTreeMap::new();
        for t in &s {
            assert!((4..=7).contains(&t.steps()));
            assert!(t.nodes.iter().all(|n| !g.viewpoint(n).unwrap().has_error_region()));
            *hist.entry(t.steps()).or_insert(0) += 1;
        }
        let four = hist[&4];
        assert!(hist.iter().filter(|(k, _)| **k != 4).all(|(_, v)| *v > four), "{hist:?}");
    }

    #[test]
    fn triangle_cannot_host_walks() {
        let g = NavGraph::from_parts(
            vec![
                vp("a", 0.0, 0.0, 0.0, "r", &[]),
                vp("b", 1.0, 0.0, 0.0, "r", &[]),
                vp("c", 0.0, 1.0, 0.0, "r", &[]),
            ],
            vec![
                ("a".into(), "b".into(), None),
                ("b".into(), "c".into(), None),
                ("a".into(), "c".into(), None),
            ],
            LoadOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            sample_paths(&g, 0, 1, &LengthWeights::default()),
            Err(SynthError::NoValidWalk { .. })
        ));
        assert!(matches!(
            build_dataset(&g, Skill::LandmarkDetection, 10, 0, &Generator::Template, &Default::default()),
            Err(SynthError::NoValidWalk { .. })
        ));
    }

    #[test]
    fn flat_walk_fails_vertical() {
        let g = chain(
            (0..6)
                .map(|i| vp(&format!("n{i}"), 0.0, i as f64 * 2.0, if i % 2 == 1 { 0.3 } else { 0.0 }, "hallway", &["stairs"]))
                .collect(),
        );
        let s = sample_of(&g);
        let v = passes_filter(&s, Skill::VerticalMovement, &FilterConfig::default());
        assert!(!v.accepted);
        assert_eq!(v.reason, "no significant elevation");
    }

    #[test]
    fn stair_climb_passes_vertical_but_not_up_and_down() {
        let up = chain(vec![
            vp("a", 0.0, 0.0, 0.0, "hallway", &[]),
            vp("b", 0.0, 2.0, 0.0, "hallway", &["stairs"]),
            vp("c", 0.0, 3.0, 3.5, "stairwell", &["stairs"]),
            vp("d", 0.0, 5.0, 3.5, "hallway", &[]),
            vp("e", 0.0, 7.0, 3.5, "hallway", &[]),
        ]);
        assert!(passes_filter(&sample_of(&up), Skill::VerticalMovement, &FilterConfig::default()).accepted);
        let updown = chain(vec![
            vp("a", 0.0, 0.0, 0.0, "hallway", &[]),
            vp("b", 0.0, 2.0, 0.0, "hallway", &["stairs"]),
            vp("c", 0.0, 3.0, 3.5, "stairwell", &["stairs"]),
            vp("d", 0.0, 4.0, 0.0, "hallway", &["stairs"]),
            vp("e", 0.0, 7.0, 0.0, "hallway", &[]),
        ]);
        let v = passes_filter(&sample_of(&updown), Skill::VerticalMovement, &FilterConfig::default());
        assert!(!v.accepted);
    }

    #[test]
    fn hallway_only_walk_fails_region() {
        let g = chain((0..5).map(|i| vp(&format!("n{i}"), 0.0, i as f64, 0.0, "hallway", &[])).collect());
        assert!(!passes_filter(&sample_of(&g), Skill::AreaRegionIdentification, &FilterConfig::default()).accepted);
    }

    #[test]
    fn temporal_dwell_then_change() {
        let regions = ["hallway", "hallway", "hallway", "hallway", "kitchen", "kitchen", "kitchen"];
        let g = chain(
            regions
                .iter()
                .enumerate()
                .map(|(i, r)| vp(&format!("n{i}"), 0.0, i as f64, 0.0, r, &[]))
                .collect(),
        );
        let s = sample_of(&g);
        assert_eq!(s.steps(), 6);
        assert!(passes_filter(&s, Skill::TemporalOrderPlanning, &FilterConfig::default()).accepted);
        // an early change breaks the dwell
        let early = ["hallway", "kitchen", "kitchen", "kitchen", "bedroom", "bedroom", "bedroom"];
        let g = chain(
            early
                .iter()
                .enumerate()
                .map(|(i, r)| vp(&format!("n{i}"), 0.0, i as f64, 0.0, r, &[]))
                .collect(),
        );
        assert!(!passes_filter(&sample_of(&g), Skill::TemporalOrderPlanning, &FilterConfig::default()).accepted);
    }

    #[test]
    fn direction_needs_two_turns_without_reversal() {
        // zig-zag: right, left, right turns of 90 degrees
        let pts = [(0.0, 0.0), (0.0, 2.0), (2.0, 2.0), (2.0, 4.0), (4.0, 4.0)];
        let g = chain(
            pts.iter()
                .enumerate()
                .map(|(i, (x, y))| vp(&format!("n{i}"), *x, *y, 0.0, "hallway", &[]))
                .collect(),
        );
        assert!(passes_filter(&sample_of(&g), Skill::DirectionAdjustment, &FilterConfig::default()).accepted);
        let straight = chain((0..5).map(|i| vp(&format!("n{i}"), 0.0, i as f64, 0.0, "hallway", &[])).collect());
        let v = passes_filter(&sample_of(&straight), Skill::DirectionAdjustment, &FilterConfig::default());
        assert_eq!(v.reason, "too few significant turns");
    }

    #[test]
    fn stop_and_landmark_rules() {
        let g = chain(vec![
            vp("a", 0.0, 0.0, 0.0, "hall", &["plant"]),
            vp("b", 0.0, 1.0, 0.0, "hall", &["plant", "bench"]),
            vp("c", 0.0, 2.0, 0.0, "hall", &["plant"]),
            vp("d", 0.0, 3.0, 0.0, "hall", &["plant", "lamp"]),
            vp("e", 0.0, 4.0, 0.0, "hall", &["plant", "lamp"]),
        ]);
        let s = sample_of(&g);
        assert!(passes_filter(&s, Skill::LandmarkDetection, &FilterConfig::default()).accepted);
        assert!(passes_filter(&s, Skill::StopAndPause, &FilterConfig::default()).accepted);
        let g = chain(vec![
            vp("a", 0.0, 0.0, 0.0, "hall", &[]),
            vp("b", 0.0, 1.0, 0.0, "hall", &["x"]),
            vp("c", 0.0, 2.0, 0.0, "hall", &["y"]),
            vp("d", 0.0, 3.0, 0.0, "hall", &["x"]),
            vp("e", 0.0, 4.0, 0.0, "hall", &[]),
        ]);
        let s = sample_of(&g);
        assert!(!passes_filter(&s, Skill::LandmarkDetection, &FilterConfig::default()).accepted);
        assert!(!passes_filter(&s, Skill::StopAndPause, &FilterConfig::default()).accepted);
    }

    #[test]
    fn template_ends_with_stop_clause() {
        let g = chain((0..5).map(|i| vp(&format!("n{i}"), 0.0, i as f64 * 2.0, 0.0, "hallway", &[])).collect());
        let text = template_instruction(&sample_of(&g), Skill::LandmarkDetection);
        let last_clause = text.rsplit(", and ").next().unwrap();
        assert!(last_clause.contains("stop"), "{text}");
        assert_eq!(text, template_instruction(&sample_of(&g), Skill::LandmarkDetection));
    }

    #[test]
    fn external_generation_validates_and_falls_back() {
        let g = world::building(3, &Default::default());
        let s = sample_paths(&g, 5, 1, &LengthWeights::default()).unwrap().remove(0);
        let forty = vec!["word"; 40].join(" ");
        let client = ModelClient::from_fn(move |_| Ok(forty.clone()));
        let gen = Generator::External {
            client,
            model_id: "m".into(),
        };
        let out = generate_instruction(&s, Skill::DirectionAdjustment, &gen);
        assert_eq!(out.generator, GeneratorKind::Template);
        assert!(out.provenance.contains("40 words"));
        assert_eq!(out.text, template_instruction(&s, Skill::DirectionAdjustment));

        let good = "Walk down the hallway past the painting and turn left at the doorway, then turn right into the bedroom and stop beside the bed near the window.";
        let client = ModelClient::from_fn(move |_| Ok(good.to_string()));
        let gen = Generator::External {
            client,
            model_id: "m".into(),
        };
        let out = generate_instruction(&s, Skill::DirectionAdjustment, &gen);
        assert_eq!(out.generator, GeneratorKind::External);
        assert_eq!(out.text, good);
    }

    #[test]
    fn stats_basic() {
        let s = dataset_stats(&["go left", "go right"]);
        assert_eq!((s.instr_count, s.vocab_size, s.mean_instr_len), (2, 3, 2.0));
        let e = dataset_stats::<&str>(&[]);
        assert_eq!((e.instr_count, e.vocab_size, e.mean_instr_len), (0, 0, 0.0));
    }

    #[test]
    fn build_is_deterministic_and_sound() {
        let g = world::building(3, &Default::default());
        let a = build_dataset(&g, Skill::StopAndPause, 40, 9, &Generator::Template, &Default::default()).unwrap();
        let b = build_dataset(&g, Skill::StopAndPause, 40, 9, &Generator::Template, &Default::default()).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut fa).unwrap();
        b.write_jsonl(&mut fb).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(a.entries.len(), 40);
        for e in &a.entries {
            assert!(passes_filter(&e.trajectory, e.skill, &FilterConfig::default()).accepted);
            assert!(!e.instruction.is_empty());
        }
        let line = a.entries[0].to_jsonl_line();
        let back = parse_dataset_line(&g, &line).unwrap();
        assert_eq!(back.trajectory, a.entries[0].trajectory);
    }
}
