//! Configured runs: the per-step localize/route/act loop, episode batches
//! and their persisted outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentDescriptor, AgentError, AgentKind, AgentRequest, AgentSet, BuiltinPolicy, Registry};
use crate::episode::{
    ActionDecision, ActionKind, EpisodeError, EpisodeSpec, EpisodeState, EpisodeTrace, FinalizeOptions, StepContext,
};
use crate::graph::{GraphError, LoadOptions, NavGraph};
use crate::metrics::{self, AggregateReport, MetricsError, DEFAULT_SUCCESS_THRESHOLD};
use crate::model::ModelClient;
use crate::reorder::{reorder_external, reorder_rules, SubgoalPlan};
use crate::router::{
    localize_subgoal, route_skill, update_ledger, Localized, LocalizerBackend, RouteOptions, RouteResult,
    RouterBackend, RouterError, RouterState,
};
use crate::synthesis::attempt_seed;
use crate::taxonomy::{KeywordLexicon, Skill, TaxonomyError};
use crate::transport::{content_hash, open_transport, JsonTransport, TranscriptMode, TransportError};

pub const CONFIG_VERSION: u32 = 1;
pub const MODEL_ENDPOINT_ENV: &str = "SKILLNAV_MODEL_ENDPOINT";
/// Prefix for per-skill agent endpoint overrides, e.g. `SKILLNAV_AGENT_VERTICAL_ENDPOINT`.
pub const AGENT_ENDPOINT_ENV_PREFIX: &str = "SKILLNAV_AGENT_";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("episode {episode:?} step {t}: {source}{}", render_provenance(provenance))]
    Step {
        episode: String,
        t: usize,
        #[source]
        source: StepFailure,
        provenance: Vec<String>,
    },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn render_provenance(p: &[String]) -> String {
    if p.is_empty() {
        String::new()
    } else {
        format!(" [{}]", p.join("; "))
    }
}

#[derive(Debug, Error)]
pub enum StepFailure {
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReorderKind {
    #[default]
    Rules,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizerKind {
    #[default]
    Scripted,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    External,
    #[default]
    Scripted,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsConfig {
    /// Bind every routed skill to one builtin; matching specialists otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<BuiltinPolicy>,
    /// Per-skill bindings applied on top.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bind: Vec<AgentDescriptor>,
}

impl AgentsConfig {
    pub fn registry(&self) -> Result<Registry, AgentError> {
        let mut r = match self.uniform {
            Some(p) => Registry::uniform(p),
            None => Registry::specialists(),
        };
        for d in &self.bind {
            r.register(d.clone(), true)?;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptConfig {
    #[serde(default = "default_mode")]
    pub mode: TranscriptMode,
    /// One JSONL transcript shared by every model and remote-agent call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for TranscriptConfig {
    fn default() -> Self {
        Self {
            mode: TranscriptMode::Live,
            path: None,
        }
    }
}

fn default_mode() -> TranscriptMode {
    TranscriptMode::Live
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD
}

fn default_workers() -> usize {
    1
}

fn default_timeout() -> u64 {
    60
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub graph: PathBuf,
    /// JSONL of episode specs.
    pub tasks: PathBuf,
    #[serde(default)]
    pub reorder: ReorderKind,
    #[serde(default)]
    pub localizer: LocalizerKind,
    #[serde(default)]
    pub router: RouterKind,
    #[serde(default)]
    pub agents: AgentsConfig,
    /// Seed for the random router.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub success_threshold_m: f64,
    /// Overrides every task's step budget when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub retrospective_append: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub transcript: TranscriptConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl RunConfig {
    pub fn new(graph: impl Into<PathBuf>, tasks: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({
            "graph": graph.into(),
            "tasks": tasks.into(),
        }))
        .expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Apply endpoint overrides from the environment.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(ep) = get(MODEL_ENDPOINT_ENV) {
            self.model_endpoint = Some(ep);
        }
        for d in &mut self.agents.bind {
            if let AgentKind::Remote { endpoint } = &mut d.kind {
                let var = format!("{AGENT_ENDPOINT_ENV_PREFIX}{}_ENDPOINT", d.skill.key().to_uppercase());
                if let Some(ep) = get(&var) {
                    *endpoint = ep;
                }
            }
        }
    }

    fn uses_model(&self) -> bool {
        self.reorder == ReorderKind::External
            || self.localizer == LocalizerKind::External
            || self.router == RouterKind::External
    }

    fn uses_remote_agents(&self) -> bool {
        self.agents.bind.iter().any(|d| matches!(d.kind, AgentKind::Remote { .. }))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut problems = Vec::new();
        if self.version != CONFIG_VERSION {
            problems.push(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        for (what, p) in [("graph", &self.graph), ("tasks", &self.tasks)] {
            if !p.exists() {
                problems.push(format!("{what} file {} does not exist", p.display()));
            }
        }
        if let Some(l) = &self.lexicon {
            if !l.exists() {
                problems.push(format!("lexicon file {} does not exist", l.display()));
            }
        }
        if self.workers == 0 {
            problems.push("workers must be at least 1".into());
        }
        if !(self.success_threshold_m.is_finite() && self.success_threshold_m >= 0.0) {
            problems.push("success_threshold_m must be a non-negative number".into());
        }
        if let Err(e) = self.agents.registry() {
            problems.push(e.to_string());
        }
        if self.uses_model() || self.uses_remote_agents() {
            match (self.transcript.mode, &self.transcript.path) {
                (TranscriptMode::Replay, None) | (TranscriptMode::Record, None) => {
                    problems.push(format!("{:?} mode needs transcript.path", self.transcript.mode))
                }
                (TranscriptMode::Replay, Some(p)) if !p.exists() => {
                    problems.push(format!("transcript {} does not exist", p.display()))
                }
                _ => {}
            }
            if self.transcript.mode != TranscriptMode::Replay && self.uses_model() && self.model_endpoint.is_none() {
                problems.push(format!("a model endpoint is required (set model_endpoint or {MODEL_ENDPOINT_ENV})"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(problems.join("; ")))
        }
    }

    /// Hash of everything that can change trace content. Output location and
    /// worker count are excluded; input files count by content.
    pub fn hash(&self) -> Result<String, HarnessError> {
        let mut v = serde_json::to_value(self).expect("serializable config");
        let obj = v.as_object_mut().expect("config is an object");
        for k in ["output_dir", "workers", "graph", "tasks", "lexicon", "timeout_s", "model_endpoint"] {
            obj.remove(k);
        }
        if let Some(t) = obj.get_mut("transcript").and_then(|t| t.as_object_mut()) {
            t.remove("path");
        }
        let file_hash = |p: &Path| -> Result<String, HarnessError> { Ok(content_hash(&fs::read_to_string(p)?)) };
        obj.insert("graph_hash".into(), file_hash(&self.graph)?.into());
        obj.insert("tasks_hash".into(), file_hash(&self.tasks)?.into());
        if let Some(l) = &self.lexicon {
            obj.insert("lexicon_hash".into(), file_hash(l)?.into());
        }
        Ok(content_hash(&v))
    }
}

#[derive(Debug, Clone)]
pub enum ReorderBackend {
    Rules,
    External(ModelClient),
}

impl ReorderBackend {
    pub fn plan(&self, instruction: &str) -> SubgoalPlan {
        match self {
            ReorderBackend::Rules => reorder_rules(instruction),
            ReorderBackend::External(c) => reorder_external(instruction, c),
        }
    }
}

/// Every backend an episode needs, already resolved.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub reorder: ReorderBackend,
    pub localizer: LocalizerBackend,
    pub router: RouterBackend,
    pub route_options: RouteOptions,
    pub agents: AgentSet,
    /// Reveal the goal to agents; only the oracle needs it.
    pub goal_hint: bool,
    pub finalize: FinalizeOptions,
    pub config_hash: Option<String>,
}

impl Pipeline {
    /// Rules, sequential localization, keyword routing and the given agents.
    pub fn scripted(registry: Registry) -> Self {
        let goal_hint = needs_goal(&registry);
        Self {
            reorder: ReorderBackend::Rules,
            localizer: LocalizerBackend::Scripted,
            router: RouterBackend::Scripted,
            route_options: RouteOptions::default(),
            agents: AgentSet::new(registry),
            goal_hint,
            finalize: FinalizeOptions::default(),
            config_hash: None,
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let registry = cfg.agents.registry().map_err(|e| HarnessError::Config(e.to_string()))?;
        let timeout = Duration::from_secs(cfg.timeout_s);
        let transcript = cfg.transcript.path.as_deref();
        let client = if cfg.uses_model() {
            let t = open_transport(cfg.transcript.mode, cfg.model_endpoint.as_deref(), transcript, timeout)?;
            Some(ModelClient::new(Arc::from(t)))
        } else {
            None
        };
        let client_for = |what: &str| {
            client
                .clone()
                .ok_or_else(|| HarnessError::Config(format!("{what} needs a model client")))
        };
        let mut agents = AgentSet::new(registry.clone());
        for endpoint in agents.remote_endpoints() {
            let t: Arc<dyn JsonTransport> =
                Arc::from(open_transport(cfg.transcript.mode, Some(&endpoint), transcript, timeout)?);
            agents = agents.with_remote(endpoint, t);
        }
        let mut route_options = RouteOptions::default();
        if let Some(l) = &cfg.lexicon {
            route_options.lexicon = KeywordLexicon::from_path(l)?;
        }
        Ok(Self {
            reorder: match cfg.reorder {
                ReorderKind::Rules => ReorderBackend::Rules,
                ReorderKind::External => ReorderBackend::External(client_for("external reorder")?),
            },
            localizer: match cfg.localizer {
                LocalizerKind::Scripted => LocalizerBackend::Scripted,
                LocalizerKind::External => LocalizerBackend::External(client_for("external localizer")?),
            },
            router: match cfg.router {
                RouterKind::Scripted => RouterBackend::Scripted,
                RouterKind::Random => RouterBackend::Random { seed: cfg.seed },
                RouterKind::External => RouterBackend::External(client_for("external router")?),
            },
            route_options,
            goal_hint: needs_goal(&registry),
            agents,
            finalize: FinalizeOptions {
                retrospective_append: cfg.retrospective_append,
            },
            config_hash: Some(cfg.hash()?),
        })
    }
}

fn needs_goal(registry: &Registry) -> bool {
    registry.bindings().any(|d| {
        d.kind
            == AgentKind::Builtin {
                policy: BuiltinPolicy::Oracle,
            }
    })
}

/// One line per visited viewpoint, in visit order.
fn history_summaries(state: &EpisodeState<'_>) -> Vec<String> {
    let graph = state.graph();
    state
        .history
        .iter()
        .map(|h| match graph.viewpoint(&h.node) {
            Ok(vp) if vp.landmarks.is_empty() => format!("{}: {}", h.node, vp.region),
            Ok(vp) => format!(
                "{}: {}; {}",
                h.node,
                vp.region,
                vp.landmarks.iter().cloned().collect::<Vec<_>>().join(", ")
            ),
            Err(_) => h.node.clone(),
        })
        .collect()
}

/// Per-episode random stream so episodes do not share routing draws.
fn episode_router(backend: &RouterBackend, spec: &EpisodeSpec) -> RouterBackend {
    match backend {
        RouterBackend::Random { seed } => {
            let salt = u64::from_str_radix(&content_hash(&spec.id)[..16], 16).expect("hex digest");
            RouterBackend::Random {
                seed: attempt_seed(*seed ^ salt, spec.seed),
            }
        }
        other => other.clone(),
    }
}

fn digest(reasoning: &str) -> String {
    const MAX: usize = 160;
    if reasoning.chars().count() <= MAX {
        reasoning.to_string()
    } else {
        reasoning.chars().take(MAX).collect::<String>() + "..."
    }
}

/// Run one episode through the full pipeline.
pub fn run_episode(graph: &NavGraph, pipeline: &Pipeline, spec: EpisodeSpec) -> Result<EpisodeTrace, HarnessError> {
    let id = spec.id.clone();
    let fail = |t: usize, provenance: &[String]| {
        let id = id.clone();
        let provenance = provenance.to_vec();
        move |e: StepFailure| HarnessError::Step {
            episode: id,
            t,
            source: e,
            provenance,
        }
    };
    let router_backend = episode_router(&pipeline.router, &spec);
    let plan = pipeline.reorder.plan(&spec.instruction);
    let reordered = plan.joined();
    let mut router = RouterState::new(plan).map_err(|e| fail(0, &[])(e.into()))?;
    let instruction = spec.instruction.clone();
    let goal = spec.goal.clone();
    let mut state = EpisodeState::start(graph, spec).map_err(|e| fail(0, &[])(e.into()))?;
    let mut steps_on_subgoal = 0usize;

    while !state.done {
        let t = state.t;
        let history = history_summaries(&state);
        let mut provenance = router.plan.provenance.clone();
        let mut completions = 0usize;
        let (decision, ctx) = loop {
            let result = match localize_subgoal(&router, &history, &pipeline.localizer) {
                Localized::PlanExhausted { provenance: p } => {
                    provenance.extend(p);
                    provenance.push("plan exhausted; stopping".into());
                    break (
                        ActionDecision::stop(1.0),
                        StepContext {
                            provenance: provenance.clone(),
                            ..StepContext::default()
                        },
                    );
                }
                Localized::Subgoal(r) => r,
            };
            provenance.extend(result.provenance.iter().cloned());
            if update_ledger(&mut router, &result).map_err(|e| fail(t, &provenance)(e.into()))? {
                steps_on_subgoal = 0;
            }
            let route: RouteResult = route_skill(
                &instruction,
                &reordered,
                &result.subgoal,
                &result.reasoning,
                t as u64,
                &router_backend,
                &pipeline.route_options,
            );
            provenance.extend(route.provenance.iter().cloned());
            let hint = pipeline.goal_hint.then_some(goal.as_str());
            let req = AgentRequest::from_state(&state, &instruction, &result.subgoal, steps_on_subgoal, hint)
                .map_err(|e| fail(t, &provenance)(e.into()))?;
            let decided = pipeline
                .agents
                .decide(route.skill, &req, graph)
                .map_err(|e| fail(t, &provenance)(e.into()))?;
            provenance.extend(decided.provenance.iter().cloned());
            let decision = decided.response.decision();
            // a stop before the last subgoal hands over to the next one
            if decision.kind == ActionKind::Stop
                && !router.is_last_subgoal(result.plan_index)
                && completions < router.plan.len()
            {
                router.complete_active();
                completions += 1;
                provenance.push(format!("subgoal {} complete", result.plan_index));
                continue;
            }
            break (
                decision,
                StepContext {
                    subgoal: Some(result.subgoal.clone()),
                    plan_index: Some(result.plan_index),
                    reasoning_digest: Some(digest(&result.reasoning)),
                    skill: Some(route.skill),
                    provenance: provenance.clone(),
                },
            );
        };
        state.step_with(&decision, ctx).map_err(|e| fail(t, &provenance)(e.into()))?;
        steps_on_subgoal += 1;
    }
    let mut trace = state
        .finalize(pipeline.finalize)
        .map_err(|e| fail(state.t, &[])(e.into()))?;
    trace.config_hash = pipeline.config_hash.clone();
    Ok(trace)
}

pub fn read_tasks(path: &Path) -> Result<Vec<EpisodeSpec>, HarnessError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut spec: EpisodeSpec = serde_json::from_str(line).map_err(|e| HarnessError::Input {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        if spec.id.is_empty() {
            spec.id = format!("ep{i:04}");
        }
        out.push(spec);
    }
    Ok(out)
}

pub fn read_traces(path: &Path) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            EpisodeTrace::from_jsonl_line(l).map_err(|e| HarnessError::Input {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub episodes: usize,
    pub steps: usize,
    pub wall_s: f64,
    pub episodes_per_s: f64,
    pub steps_per_s: f64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub traces: Vec<EpisodeTrace>,
    pub timing: Timing,
}

/// Run `specs` on a pool of `workers`; traces come back in submission order.
pub fn run_specs(
    graph: &NavGraph,
    pipeline: &Pipeline,
    specs: Vec<EpisodeSpec>,
    workers: usize,
) -> Result<RunOutput, HarnessError> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let traces: Vec<EpisodeTrace> = pool.install(|| {
        specs
            .into_par_iter()
            .map(|spec| run_episode(graph, pipeline, spec))
            .collect::<Result<_, _>>()
    })?;
    let wall_s = started.elapsed().as_secs_f64();
    let steps = traces.iter().map(|t| t.steps.len()).sum();
    let rate = |n: usize| if wall_s > 0.0 { n as f64 / wall_s } else { 0.0 };
    Ok(RunOutput {
        timing: Timing {
            episodes: traces.len(),
            steps,
            wall_s,
            episodes_per_s: rate(traces.len()),
            steps_per_s: rate(steps),
            workers: workers.max(1),
        },
        traces,
    })
}

pub const TRACES_FILE: &str = "traces.jsonl";
pub const TIMING_FILE: &str = "timing.json";

/// Load inputs, run every task and write `traces.jsonl` and `timing.json`
/// under the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    let pipeline = Pipeline::from_config(cfg)?;
    let graph = NavGraph::load_path(&cfg.graph, LoadOptions::default())?;
    let mut specs = read_tasks(&cfg.tasks)?;
    if let Some(m) = cfg.max_steps {
        for s in &mut specs {
            s.max_steps = m;
        }
    }
    let out = run_specs(&graph, &pipeline, specs, cfg.workers)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_traces(&cfg.output_dir.join(TRACES_FILE), &out.traces)?;
    let timing = serde_json::to_string_pretty(&out.timing).expect("serializable timing");
    fs::write(cfg.output_dir.join(TIMING_FILE), timing + "\n")?;
    tracing::info!(episodes = out.timing.episodes, wall_s = out.timing.wall_s, "run finished");
    Ok(out)
}

pub fn write_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<(), HarnessError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for t in traces {
        f.write_all(t.to_jsonl_line().as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn evaluate_traces(graph: &NavGraph, traces: &[EpisodeTrace], threshold: f64) -> Result<AggregateReport, HarnessError> {
    let results = traces
        .iter()
        .map(|t| metrics::evaluate(t, graph, threshold))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(metrics::aggregate(&results)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedSubgoal {
    pub plan_index: usize,
    pub subgoal: String,
    pub skill: Skill,
    #[serde(flatten)]
    pub route: RouteResultInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResultInfo {
    pub fallback_used: crate::router::FallbackUsed,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

/// Route every subgoal of a plan in order, without an environment.
pub fn route_plan(plan: &SubgoalPlan, backend: &RouterBackend, opts: &RouteOptions) -> Vec<RoutedSubgoal> {
    let reordered = plan.joined();
    plan.subgoals
        .iter()
        .enumerate()
        .map(|(k, sub)| {
            let r = route_skill(&plan.original, &reordered, sub, crate::router::SEQUENTIAL_REASONING, k as u64, backend, opts);
            RoutedSubgoal {
                plan_index: k,
                subgoal: sub.clone(),
                skill: r.skill,
                route: RouteResultInfo {
                    fallback_used: r.fallback_used,
                    provenance: r.provenance,
                },
            }
        })
        .collect()
}
