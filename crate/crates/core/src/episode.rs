//! Single navigation episode: position, history, topological map, action
//! application and the two stop mechanisms (explicit stop and retrospective
//! selection at the step limit).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NavGraph};
use crate::taxonomy::Skill;

pub const DEFAULT_MAX_STEPS: usize = 15;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
    #[error("episode already finished")]
    Finished,
    #[error("episode not finished")]
    NotFinished,
    #[error("illegal action {action}; legal candidates: {}", .legal.join(", "))]
    IllegalAction { action: String, legal: Vec<String> },
    #[error("stop score {0} outside [0, 1]")]
    StopScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpaceMode {
    /// Move to a neighbor of the current node.
    #[default]
    Local,
    /// Jump to any frontier node of the topological map.
    Global,
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    #[serde(default)]
    pub id: String,
    pub start: String,
    pub goal: String,
    pub instruction: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub action_space: ActionSpaceMode,
    #[serde(default)]
    pub seed: u64,
    /// Initial facing; 0 = +y.
    #[serde(default)]
    pub start_heading_deg: f64,
}

impl EpisodeSpec {
    pub fn new(start: impl Into<String>, goal: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            id: String::new(),
            start: start.into(),
            goal: goal.into(),
            instruction: instruction.into(),
            max_steps: DEFAULT_MAX_STEPS,
            action_space: ActionSpaceMode::Local,
            seed: 0,
            start_heading_deg: 0.0,
        }
    }

    pub fn validate(&self, graph: &NavGraph) -> Result<(), EpisodeError> {
        let mut problems = Vec::new();
        for (what, id) in [("start", &self.start), ("goal", &self.goal)] {
            if !graph.contains(id) {
                problems.push(format!("{what} {id:?} not in graph"));
            }
        }
        if self.max_steps == 0 {
            problems.push("max_steps must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EpisodeError::InvalidSpec(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Move(String),
    Stop,
}

impl ActionKind {
    /// Key used in score maps: the target id, or `"stop"`.
    pub fn key(&self) -> &str {
        match self {
            ActionKind::Move(t) => t,
            ActionKind::Stop => "stop",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::Move(t) => write!(f, "move {t}"),
            ActionKind::Stop => f.write_str("stop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub kind: ActionKind,
    /// Agent's stop probability for the node the decision is made at.
    #[serde(default)]
    pub stop_score: f64,
}

impl ActionDecision {
    pub fn stop(stop_score: f64) -> Self {
        Self {
            kind: ActionKind::Stop,
            stop_score,
        }
    }

    pub fn move_to(target: impl Into<String>, stop_score: f64) -> Self {
        Self {
            kind: ActionKind::Move(target.into()),
            stop_score,
        }
    }
}

/// Online topological map: visited nodes in first-visit order and the
/// observed-but-unvisited frontier.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopoMap {
    pub visited: Vec<String>,
    pub frontier: BTreeSet<String>,
    pub first_seen: BTreeMap<String, usize>,
}

impl TopoMap {
    fn visit(&mut self, graph: &NavGraph, node: &str, t: usize) -> Result<(), GraphError> {
        if self.visited.iter().any(|v| v == node) {
            return Ok(());
        }
        self.visited.push(node.to_string());
        self.frontier.remove(node);
        self.first_seen.entry(node.to_string()).or_insert(t);
        for n in graph.neighbors(node)? {
            if !self.visited.iter().any(|v| v == n) {
                self.frontier.insert(n.to_string());
                self.first_seen.entry(n.to_string()).or_insert(t);
            }
        }
        Ok(())
    }

    pub fn is_visited(&self, node: &str) -> bool {
        self.visited.iter().any(|v| v == node)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub node: String,
    pub panorama_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ExplicitStop,
    /// Step limit reached and the endpoint was moved to the best-scored visited node.
    Retrospective,
    /// Step limit reached and the current node already had the best stop score.
    StepLimit,
}

/// Router and agent context attached to a step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub subgoal: Option<String>,
    pub plan_index: Option<usize>,
    pub reasoning_digest: Option<String>,
    pub skill: Option<Skill>,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub subgoal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub skill: Option<Skill>,
    pub action: ActionKind,
    pub stop_score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalizeOptions {
    /// Append the geodesic from the current node to a retrospectively chosen endpoint.
    pub retrospective_append: bool,
}

impl Default for FinalizeOptions {
    fn default() -> Self {
        Self {
            retrospective_append: true,
        }
    }
}

/// Persisted record of one episode, one JSONL line per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub spec: EpisodeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// Evaluated path, including any retrospective append.
    pub path: Vec<String>,
    #[serde(rename = "final")]
    pub final_node: String,
    pub termination: Termination,
    /// Number of trailing path entries added by the retrospective append.
    #[serde(default)]
    pub appended: usize,
    pub steps: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("serializable trace")
    }

    pub fn from_jsonl_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeState<'g> {
    graph: &'g NavGraph,
    pub spec: EpisodeSpec,
    pub t: usize,
    pub current: String,
    pub path: Vec<String>,
    pub topo: TopoMap,
    pub history: Vec<HistoryEntry>,
    pub stop_scores: BTreeMap<String, f64>,
    pub heading_deg: f64,
    pub done: bool,
    termination: Option<Termination>,
    pub steps: Vec<StepRecord>,
}

impl<'g> EpisodeState<'g> {
    pub fn start(graph: &'g NavGraph, spec: EpisodeSpec) -> Result<Self, EpisodeError> {
        spec.validate(graph)?;
        let mut topo = TopoMap::default();
        topo.visit(graph, &spec.start, 0)?;
        let history = vec![HistoryEntry {
            node: spec.start.clone(),
            panorama_digest: graph.observe(&spec.start)?.digest(),
        }];
        Ok(Self {
            graph,
            current: spec.start.clone(),
            path: vec![spec.start.clone()],
            heading_deg: spec.start_heading_deg,
            spec,
            t: 0,
            topo,
            history,
            stop_scores: BTreeMap::new(),
            done: false,
            termination: None,
            steps: Vec::new(),
        })
    }

    pub fn graph(&self) -> &'g NavGraph {
        self.graph
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// Legal actions: neighbors (local) or frontier nodes (global), sorted,
    /// followed by stop.
    pub fn candidate_actions(&self) -> Result<Vec<ActionKind>, EpisodeError> {
        if self.done {
            return Err(EpisodeError::Finished);
        }
        let mut out: Vec<ActionKind> = match self.spec.action_space {
            ActionSpaceMode::Local => self
                .graph
                .neighbors(&self.current)?
                .into_iter()
                .map(|n| ActionKind::Move(n.to_string()))
                .collect(),
            ActionSpaceMode::Global => self.topo.frontier.iter().cloned().map(ActionKind::Move).collect(),
        };
        out.push(ActionKind::Stop);
        Ok(out)
    }

    pub fn step(&mut self, decision: &ActionDecision) -> Result<(), EpisodeError> {
        self.step_with(decision, StepContext::default())
    }

    pub fn step_with(&mut self, decision: &ActionDecision, ctx: StepContext) -> Result<(), EpisodeError> {
        let candidates = self.candidate_actions()?;
        if !candidates.contains(&decision.kind) {
            return Err(EpisodeError::IllegalAction {
                action: decision.kind.to_string(),
                legal: candidates.iter().map(ToString::to_string).collect(),
            });
        }
        if !(0.0..=1.0).contains(&decision.stop_score) {
            return Err(EpisodeError::StopScore(decision.stop_score));
        }
        let score = self.stop_scores.entry(self.current.clone()).or_insert(0.0);
        *score = score.max(decision.stop_score);
        self.steps.push(StepRecord {
            t: self.t,
            subgoal: ctx.subgoal,
            plan_index: ctx.plan_index,
            reasoning: ctx.reasoning_digest,
            skill: ctx.skill,
            action: decision.kind.clone(),
            stop_score: decision.stop_score,
            provenance: ctx.provenance,
        });
        match &decision.kind {
            ActionKind::Stop => {
                self.done = true;
                self.termination = Some(Termination::ExplicitStop);
                return Ok(());
            }
            ActionKind::Move(target) => {
                let hops = match self.spec.action_space {
                    ActionSpaceMode::Local => vec![target.clone()],
                    ActionSpaceMode::Global => {
                        let g = self.graph.geodesic(&self.current, target)?;
                        g.path.into_iter().skip(1).collect()
                    }
                };
                for hop in hops {
                    self.advance(hop)?;
                }
            }
        }
        if self.t >= self.spec.max_steps {
            self.done = true;
            self.termination = Some(Termination::StepLimit);
        }
        Ok(())
    }

    fn advance(&mut self, next: String) -> Result<(), EpisodeError> {
        self.heading_deg = self.graph.bearing(&self.current, &next)?;
        self.t += 1;
        self.topo.visit(self.graph, &next, self.t)?;
        self.history.push(HistoryEntry {
            node: next.clone(),
            panorama_digest: self.graph.observe(&next)?.digest(),
        });
        self.path.push(next.clone());
        self.current = next;
        Ok(())
    }

    /// Node chosen by the retrospective rule: highest recorded stop score
    /// among visited nodes, ties to the earliest visit.
    pub fn retrospective_choice(&self) -> &str {
        let mut best = &self.topo.visited[0];
        let mut best_score = self.stop_scores.get(best).copied().unwrap_or(0.0);
        for v in &self.topo.visited[1..] {
            let s = self.stop_scores.get(v).copied().unwrap_or(0.0);
            if s > best_score {
                best = v;
                best_score = s;
            }
        }
        best
    }

    pub fn finalize(&self, opts: FinalizeOptions) -> Result<EpisodeTrace, EpisodeError> {
        if !self.done {
            return Err(EpisodeError::NotFinished);
        }
        let mut path = self.path.clone();
        let mut appended = 0;
        let (final_node, termination) = match self.termination {
            Some(Termination::ExplicitStop) => (self.current.clone(), Termination::ExplicitStop),
            _ => {
                let choice = self.retrospective_choice().to_string();
                if choice == self.current {
                    (choice, Termination::StepLimit)
                } else {
                    if opts.retrospective_append {
                        let g = self.graph.geodesic(&self.current, &choice)?;
                        appended = g.path.len().saturating_sub(1);
                        path.extend(g.path.into_iter().skip(1));
                    }
                    (choice, Termination::Retrospective)
                }
            }
        };
        Ok(EpisodeTrace {
            spec: self.spec.clone(),
            config_hash: None,
            path,
            final_node,
            termination,
            appended,
            steps: self.steps.clone(),
        })
    }
}
