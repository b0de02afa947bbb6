//! Skill agents behind one decision contract: builtin scripted specialists,
//! a test-only oracle, and remote agents spoken to over JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{ActionDecision, ActionKind, EpisodeError, EpisodeState};
use crate::graph::{signed_turn, GraphError, NavGraph, Panorama, ERROR_REGION};
use crate::taxonomy::Skill;
use crate::text::{contains_phrase, words};
use crate::transport::JsonTransport;

pub const AGENT_PROTOCOL: &str = "skillnav-agent/1";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no agent bound to {0}")]
    Unbound(Skill),
    #[error("{0} is not a routed skill and cannot be bound to an agent")]
    NotRouted(Skill),
    #[error("{0} is already bound; pass replace to rebind")]
    AlreadyBound(Skill),
    #[error("invalid agent request: {0}")]
    InvalidRequest(String),
    #[error("invalid agent response: {0}")]
    InvalidResponse(String),
    #[error("no transport for remote agent {0}")]
    NoTransport(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// A candidate action with the features a policy needs to rank it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub action: ActionKind,
    /// Signed turn from the current heading; 0 for stop.
    pub heading_change_deg: f64,
    pub elevation_delta_m: f64,
    pub region: String,
    pub landmarks: BTreeSet<String>,
    pub distance_m: f64,
    pub visited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoSummary {
    pub visited: Vec<String>,
    pub frontier: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub protocol: String,
    pub instruction: String,
    pub subgoal: String,
    pub current: String,
    pub heading_deg: f64,
    pub panorama: Panorama,
    pub candidates: Vec<CandidateInfo>,
    pub topo: TopoSummary,
    /// Steps already taken while this subgoal was active.
    pub steps_on_subgoal: usize,
    pub last_elevation_delta_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_hint: Option<String>,
}

impl AgentRequest {
    /// Build a request from the live episode state.
    pub fn from_state(
        state: &EpisodeState<'_>,
        instruction: &str,
        subgoal: &str,
        steps_on_subgoal: usize,
        goal_hint: Option<&str>,
    ) -> Result<Self, AgentError> {
        let graph = state.graph();
        let here = graph.viewpoint(&state.current)?;
        let panorama = graph.observe(&state.current)?;
        let mut candidates = Vec::new();
        let from_here = graph.distances_from(&state.current)?;
        for action in state.candidate_actions()? {
            let info = match &action {
                ActionKind::Stop => CandidateInfo {
                    action: action.clone(),
                    heading_change_deg: 0.0,
                    elevation_delta_m: 0.0,
                    region: here.region.clone(),
                    landmarks: here.landmarks.clone(),
                    distance_m: 0.0,
                    visited: true,
                },
                ActionKind::Move(target) => {
                    let vp = graph.viewpoint(target)?;
                    CandidateInfo {
                        action: action.clone(),
                        heading_change_deg: signed_turn(state.heading_deg, graph.bearing(&state.current, target)?),
                        elevation_delta_m: vp.position.z - here.position.z,
                        region: vp.region.clone(),
                        landmarks: vp.landmarks.clone(),
                        distance_m: from_here.distance(target)?,
                        visited: state.topo.is_visited(target),
                    }
                }
            };
            candidates.push(info);
        }
        let last_elevation_delta_m = match state.path.len() {
            n if n >= 2 => {
                here.position.z - graph.viewpoint(&state.path[n - 2])?.position.z
            }
            _ => 0.0,
        };
        Ok(Self {
            protocol: AGENT_PROTOCOL.into(),
            instruction: instruction.into(),
            subgoal: subgoal.into(),
            current: state.current.clone(),
            heading_deg: state.heading_deg,
            panorama,
            candidates,
            topo: TopoSummary {
                visited: state.topo.visited.clone(),
                frontier: state.topo.frontier.iter().cloned().collect(),
            },
            steps_on_subgoal,
            last_elevation_delta_m,
            goal_hint: goal_hint.map(str::to_string),
        })
    }

    fn validate(&self) -> Result<(), AgentError> {
        if !self.candidates.iter().any(|c| c.action == ActionKind::Stop) {
            return Err(AgentError::InvalidRequest("stop is not among the candidates".into()));
        }
        Ok(())
    }

    fn moves(&self) -> impl Iterator<Item = &CandidateInfo> {
        self.candidates.iter().filter(|c| c.action != ActionKind::Stop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub chosen: ActionKind,
    /// Score per candidate key (target id or `"stop"`), each in `[0, 1]`.
    pub scores: BTreeMap<String, f64>,
}

impl AgentResponse {
    pub fn stop_score(&self) -> f64 {
        self.scores.get("stop").copied().unwrap_or(0.0)
    }

    pub fn decision(&self) -> ActionDecision {
        ActionDecision {
            kind: self.chosen.clone(),
            stop_score: self.stop_score(),
        }
    }

    pub fn validate(&self, req: &AgentRequest) -> Result<(), AgentError> {
        if !req.candidates.iter().any(|c| c.action == self.chosen) {
            return Err(AgentError::InvalidResponse(format!("chosen action {} is not a candidate", self.chosen)));
        }
        for c in &req.candidates {
            match self.scores.get(c.action.key()) {
                None => return Err(AgentError::InvalidResponse(format!("no score for {}", c.action.key()))),
                Some(s) if !(0.0..=1.0).contains(s) => {
                    return Err(AgentError::InvalidResponse(format!("score {s} for {} outside [0, 1]", c.action.key())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinPolicy {
    Oracle,
    GreedyLandmark,
    GreedyVertical,
    GreedyDirection,
    GreedyRegion,
    StopSpecialist,
}

impl BuiltinPolicy {
    /// The specialist that serves `skill` by default.
    pub fn for_skill(skill: Skill) -> Option<Self> {
        Some(match skill {
            Skill::DirectionAdjustment => BuiltinPolicy::GreedyDirection,
            Skill::VerticalMovement => BuiltinPolicy::GreedyVertical,
            Skill::StopAndPause => BuiltinPolicy::StopSpecialist,
            Skill::LandmarkDetection => BuiltinPolicy::GreedyLandmark,
            Skill::AreaRegionIdentification => BuiltinPolicy::GreedyRegion,
            Skill::TemporalOrderPlanning => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AgentKind {
    Builtin { policy: BuiltinPolicy },
    Remote { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub skill: Skill,
    pub kind: AgentKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    bindings: BTreeMap<Skill, AgentDescriptor>,
}

impl Registry {
    pub fn register(&mut self, descriptor: AgentDescriptor, replace: bool) -> Result<(), AgentError> {
        if !descriptor.skill.is_routed() {
            return Err(AgentError::NotRouted(descriptor.skill));
        }
        if self.bindings.contains_key(&descriptor.skill) && !replace {
            return Err(AgentError::AlreadyBound(descriptor.skill));
        }
        self.bindings.insert(descriptor.skill, descriptor);
        Ok(())
    }

    pub fn resolve(&self, skill: Skill) -> Result<&AgentDescriptor, AgentError> {
        if !skill.is_routed() {
            return Err(AgentError::NotRouted(skill));
        }
        self.bindings.get(&skill).ok_or(AgentError::Unbound(skill))
    }

    /// Each routed skill bound to its matching builtin specialist.
    pub fn specialists() -> Self {
        Self::from_fn(|s| BuiltinPolicy::for_skill(s).expect("routed skill"))
    }

    /// Every routed skill bound to the same builtin policy.
    pub fn uniform(policy: BuiltinPolicy) -> Self {
        Self::from_fn(|_| policy)
    }

    fn from_fn(f: impl Fn(Skill) -> BuiltinPolicy) -> Self {
        let mut r = Self::default();
        for skill in Skill::ROUTED {
            r.register(
                AgentDescriptor {
                    skill,
                    kind: AgentKind::Builtin { policy: f(skill) },
                },
                false,
            )
            .expect("fresh registry");
        }
        r
    }

    pub fn bindings(&self) -> impl Iterator<Item = &AgentDescriptor> {
        self.bindings.values()
    }
}

/// Registry plus the transports its remote agents use.
#[derive(Clone)]
pub struct AgentSet {
    pub registry: Registry,
    remotes: BTreeMap<String, Arc<dyn JsonTransport>>,
}

impl std::fmt::Debug for AgentSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentSet")
            .field("registry", &self.registry)
            .field("remotes", &self.remotes.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decided {
    pub response: AgentResponse,
    pub provenance: Vec<String>,
}

impl AgentSet {
    pub fn new(registry: Registry) -> Self {
        Self {
            registry,
            remotes: BTreeMap::new(),
        }
    }

    pub fn with_remote(mut self, endpoint: impl Into<String>, transport: Arc<dyn JsonTransport>) -> Self {
        self.remotes.insert(endpoint.into(), transport);
        self
    }

    pub fn remote_endpoints(&self) -> Vec<String> {
        self.registry
            .bindings()
            .filter_map(|d| match &d.kind {
                AgentKind::Remote { endpoint } => Some(endpoint.clone()),
                AgentKind::Builtin { .. } => None,
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn decide(&self, skill: Skill, req: &AgentRequest, graph: &NavGraph) -> Result<Decided, AgentError> {
        req.validate()?;
        match &self.registry.resolve(skill)?.kind {
            AgentKind::Builtin { policy } => Ok(Decided {
                response: decide_builtin(*policy, req, graph)?,
                provenance: Vec::new(),
            }),
            AgentKind::Remote { endpoint } => {
                let transport = self
                    .remotes
                    .get(endpoint)
                    .ok_or_else(|| AgentError::NoTransport(endpoint.clone()))?;
                let body = serde_json::to_value(req).expect("serializable request");
                let mut provenance = Vec::new();
                for _ in 0..2 {
                    let outcome = transport
                        .call(&body)
                        .map_err(|e| e.to_string())
                        .and_then(|v| serde_json::from_value::<AgentResponse>(v).map_err(|e| e.to_string()))
                        .and_then(|r| r.validate(req).map(|_| r).map_err(|e| e.to_string()));
                    match outcome {
                        Ok(response) => return Ok(Decided { response, provenance }),
                        Err(e) => provenance.push(format!("remote agent {endpoint}: {e}")),
                    }
                }
                provenance.push("fell back to greedy-landmark".into());
                Ok(Decided {
                    response: decide_builtin(BuiltinPolicy::GreedyLandmark, req, graph)?,
                    provenance,
                })
            }
        }
    }
}

/// Tags from `inventory` named in `text`, matched on word boundaries.
fn named_tags<'a>(text: &str, inventory: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    let toks = words(text);
    inventory
        .into_iter()
        .filter(|tag| *tag != ERROR_REGION && contains_phrase(&toks, &words(tag)))
        .map(str::to_string)
        .collect()
}

fn has_any(text: &str, cues: &[&str]) -> bool {
    let toks = words(text);
    cues.iter().any(|c| contains_phrase(&toks, &words(c)))
}

fn overlap(set: &BTreeSet<String>, named: &BTreeSet<String>) -> f64 {
    if named.is_empty() {
        return 0.0;
    }
    set.intersection(named).count() as f64 / named.len() as f64
}

/// Highest `score`, then unvisited, then forward-most, then lowest id.
fn best_by<'a>(req: &'a AgentRequest, score: impl Fn(&CandidateInfo) -> f64) -> Option<&'a CandidateInfo> {
    req.moves().min_by(|a, b| {
        score(b)
            .total_cmp(&score(a))
            .then(a.visited.cmp(&b.visited))
            .then(a.heading_change_deg.abs().total_cmp(&b.heading_change_deg.abs()))
            .then(a.action.key().cmp(b.action.key()))
    })
}

fn respond(req: &AgentRequest, chosen: Option<&CandidateInfo>, stop_score: f64, score: impl Fn(&CandidateInfo) -> f64) -> AgentResponse {
    let mut scores = BTreeMap::new();
    for c in req.moves() {
        scores.insert(c.action.key().to_string(), score(c).clamp(0.0, 1.0));
    }
    scores.insert("stop".to_string(), stop_score.clamp(0.0, 1.0));
    AgentResponse {
        chosen: chosen.map(|c| c.action.clone()).unwrap_or(ActionKind::Stop),
        scores,
    }
}

fn stop_now(req: &AgentRequest, stop_score: f64, score: impl Fn(&CandidateInfo) -> f64) -> AgentResponse {
    respond(req, None, stop_score, score)
}

fn forwardness(c: &CandidateInfo) -> f64 {
    1.0 - c.heading_change_deg.abs() / 180.0
}

const TERMINAL_VERBS: &[&str] = &["stop", "wait", "stand", "pause", "halt"];
const UP_CUES: &[&str] = &["up", "upstairs", "climb", "ascend", "above"];
const DOWN_CUES: &[&str] = &["down", "downstairs", "descend", "below"];
const EXIT_CUES: &[&str] = &["exit", "leave", "out of", "outside"];
const VERTICAL_TAGS: &[&str] = &["stairs", "staircase", "steps", "elevator", "escalator"];
/// Elevation change that counts as moving between levels.
const LEVEL_CHANGE_M: f64 = 0.5;

pub fn decide_builtin(policy: BuiltinPolicy, req: &AgentRequest, graph: &NavGraph) -> Result<AgentResponse, AgentError> {
    req.validate()?;
    let sub = req.subgoal.as_str();
    let response = match policy {
        BuiltinPolicy::Oracle => {
            let goal = req
                .goal_hint
                .as_deref()
                .ok_or_else(|| AgentError::InvalidRequest("oracle needs a goal hint".into()))?;
            let to_goal = graph.distances_from(goal)?;
            let here = to_goal.distance(&req.current)?;
            if req.current == goal {
                return Ok(stop_now(req, 1.0, |_| 0.0));
            }
            let cost = |c: &CandidateInfo| c.distance_m + to_goal.distance(c.action.key()).unwrap_or(f64::INFINITY);
            let best = req.moves().min_by(|a, b| cost(a).total_cmp(&cost(b)).then(a.action.key().cmp(b.action.key())));
            respond(req, best, 0.0, |c| if cost(c).is_finite() && cost(c) > 0.0 { (here / cost(c)).min(1.0) } else { 0.0 })
        }
        BuiltinPolicy::GreedyLandmark => {
            let named = named_tags(sub, graph.landmark_inventory());
            let cur = overlap(&req.panorama.landmarks, &named);
            let score = |c: &CandidateInfo| overlap(&c.landmarks, &named);
            let best = best_by(req, score);
            let best_score = best.map(score).unwrap_or(0.0);
            if cur > 0.0 && cur >= best_score {
                stop_now(req, cur, score)
            } else if best_score > 0.0 {
                respond(req, best, cur, score)
            } else {
                respond(req, best_by(req, |_| 0.0), cur, forwardness)
            }
        }
        BuiltinPolicy::GreedyVertical => {
            let up = has_any(sub, UP_CUES);
            let down = has_any(sub, DOWN_CUES);
            let dir = match (up, down) {
                (true, false) => 1.0,
                (false, true) => -1.0,
                _ => 0.0,
            };
            let climb = |dz: f64| if dir == 0.0 { dz.abs() } else { dir * dz };
            let score = |c: &CandidateInfo| (climb(c.elevation_delta_m) / 3.0).clamp(0.0, 1.0);
            let best = best_by(req, |c| climb(c.elevation_delta_m));
            if let Some(b) = best.filter(|b| climb(b.elevation_delta_m) > LEVEL_CHANGE_M) {
                respond(req, Some(b), 0.0, score)
            } else if req.steps_on_subgoal > 0 && climb(req.last_elevation_delta_m) > LEVEL_CHANGE_M {
                stop_now(req, 1.0, score)
            } else {
                let tagged = |c: &CandidateInfo| {
                    if VERTICAL_TAGS.iter().any(|t| c.landmarks.contains(*t)) {
                        1.0
                    } else {
                        0.0
                    }
                };
                respond(req, best_by(req, tagged), 0.0, tagged)
            }
        }
        BuiltinPolicy::GreedyDirection => {
            let toks = words(sub);
            let has = |w: &str| toks.iter().any(|t| t == w);
            let target = if has("around") || has("back") {
                Some(180.0)
            } else if has("left") {
                Some(-90.0)
            } else if has("right") {
                Some(90.0)
            } else {
                None
            };
            let error = |c: &CandidateInfo| match target {
                Some(t) if t >= 180.0 => 180.0 - c.heading_change_deg.abs(),
                Some(t) => signed_turn(t, c.heading_change_deg).abs(),
                None => c.heading_change_deg.abs(),
            };
            let score = |c: &CandidateInfo| 1.0 - error(c) / 180.0;
            if target.is_some() && req.steps_on_subgoal > 0 {
                stop_now(req, 1.0, score)
            } else {
                let best = best_by(req, |c| -error(c));
                match best {
                    Some(b) if error(b) <= 45.0 || target.is_some() => respond(req, Some(b), 0.0, score),
                    // nothing ahead: the straight segment has ended
                    _ => stop_now(req, 0.5, score),
                }
            }
        }
        BuiltinPolicy::GreedyRegion => {
            let named = named_tags(sub, graph.region_inventory());
            let exit = has_any(sub, EXIT_CUES);
            let satisfied = |region: &str| {
                if named.is_empty() {
                    false
                } else if exit {
                    !named.contains(region)
                } else {
                    named.contains(region)
                }
            };
            let score = |c: &CandidateInfo| if satisfied(&c.region) { 1.0 } else { 0.0 };
            if satisfied(&req.panorama.region) {
                stop_now(req, 1.0, score)
            } else {
                let here = req.panorama.region.clone();
                // prefer target regions, then any region change
                let best = best_by(req, |c| score(c) + if c.region != here { 0.5 } else { 0.0 });
                respond(req, best, 0.0, score)
            }
        }
        BuiltinPolicy::StopSpecialist => {
            let mut named = named_tags(sub, graph.landmark_inventory());
            named.extend(named_tags(sub, graph.region_inventory()));
            let here: BTreeSet<String> = req
                .panorama
                .landmarks
                .iter()
                .cloned()
                .chain(std::iter::once(req.panorama.region.clone()))
                .collect();
            let at = |set: &BTreeSet<String>, region: &str| {
                if named.is_empty() {
                    return 1.0;
                }
                named.iter().filter(|n| set.contains(*n) || n.as_str() == region).count() as f64 / named.len() as f64
            };
            let cur = at(&here, &req.panorama.region);
            let score = |c: &CandidateInfo| at(&c.landmarks, &c.region);
            let best = best_by(req, score);
            let best_score = best.map(score).unwrap_or(0.0);
            let terminal = has_any(sub, TERMINAL_VERBS);
            if terminal && (named.is_empty() || cur > 0.0 || best_score <= cur) {
                stop_now(req, cur, score)
            } else if best_score > cur {
                respond(req, best, cur, score)
            } else {
                respond(req, best_by(req, |_| 0.0), cur, forwardness)
            }
        }
    };
    debug_assert!(response.validate(req).is_ok());
    Ok(response)
}
