use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use skillnav_core::graph::{LoadOptions, NavGraph};
use skillnav_core::harness::{self, LocalizerKind, ReorderKind, RouterKind, RunConfig};
use skillnav_core::model::ModelClient;
use skillnav_core::reorder::{reorder_external, reorder_rules, SubgoalPlan};
use skillnav_core::router::{RouteOptions, RouterBackend};
use skillnav_core::synthesis::{build_dataset, dataset_stats, BuildOptions, Generator};
use skillnav_core::taxonomy::{classify_temporal, histogram_json, skill_histogram, KeywordLexicon, Skill};
use skillnav_core::transport::{open_transport, TranscriptMode};
use skillnav_core::world::{building, random_geometric, BuildingParams};

#[derive(Parser)]
#[command(name = "skillnav", version, about = "Skill-routed navigation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a skill-specific trajectory/instruction dataset.
    Synth(SynthArgs),
    /// Rewrite instructions (one per line) into ordered subgoal plans.
    Reorder(ReorderArgs),
    /// Route every subgoal of a plan file to a skill, without an environment.
    Route(RouteArgs),
    /// Run the episodes of a config and write traces.
    Run(RunArgs),
    /// Score traces and print the aggregate report.
    Eval(EvalArgs),
    /// Skill histogram and temporal relations of an instruction file.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic environment graph.
    GenGraph(GenGraphArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Record,
    Replay,
}

impl From<Mode> for TranscriptMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Live => TranscriptMode::Live,
            Mode::Record => TranscriptMode::Record,
            Mode::Replay => TranscriptMode::Replay,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "replay")]
    transcript_mode: Mode,
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Model endpoint; falls back to SKILLNAV_MODEL_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 60)]
    timeout_s: u64,
}

impl ModelArgs {
    fn client(&self) -> Result<ModelClient> {
        let endpoint = self
            .endpoint
            .clone()
            .or_else(|| std::env::var(harness::MODEL_ENDPOINT_ENV).ok());
        let t = open_transport(
            self.transcript_mode.into(),
            endpoint.as_deref(),
            self.transcript.as_deref(),
            Duration::from_secs(self.timeout_s),
        )?;
        Ok(ModelClient::new(Arc::from(t)))
    }
}

#[derive(Args)]
struct GraphSource {
    /// Graph JSON file.
    #[arg(long, conflicts_with = "building_seed")]
    graph: Option<PathBuf>,
    /// Use a generated default building instead of a file.
    #[arg(long)]
    building_seed: Option<u64>,
}

impl GraphSource {
    fn load(&self) -> Result<NavGraph> {
        match (&self.graph, self.building_seed) {
            (Some(p), _) => NavGraph::load_path(p, LoadOptions::default()).with_context(|| format!("loading {}", p.display())),
            (None, Some(s)) => Ok(building(s, &BuildingParams::default())),
            (None, None) => bail!("pass --graph or --building-seed"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Template,
    External,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    source: GraphSource,
    /// Skill key (direction, vertical, stop, landmark, region, temporal).
    #[arg(long)]
    skill: Skill,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "template")]
    generator: GeneratorArg,
    #[arg(long, default_value = "external")]
    model_id: String,
    #[command(flatten)]
    model: ModelArgs,
    /// Output JSONL; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReorderArg {
    Rules,
    External,
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "rules")]
    backend: ReorderArg,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RouterArg {
    Scripted,
    Random,
    External,
}

#[derive(Args)]
struct RouteArgs {
    /// JSONL of subgoal plans, as written by `reorder`.
    #[arg(long)]
    plans: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    router: RouterArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    reorder: Option<ReorderArg>,
    #[arg(long, value_enum)]
    localizer: Option<ReorderArg>,
    #[arg(long, value_enum)]
    router: Option<RouterArg>,
    #[arg(long, value_enum)]
    transcript_mode: Option<Mode>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = skillnav_core::metrics::DEFAULT_SUCCESS_THRESHOLD)]
    threshold: f64,
    /// Write the report JSON here as well as printing the table.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    label: String,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Instructions, one per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random geometric graph with this many nodes instead of a building.
    #[arg(long)]
    rgg: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    side: f64,
    #[arg(long, default_value_t = 5.0)]
    radius: f64,
    #[arg(long)]
    floors: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn lexicon(path: Option<&Path>) -> Result<KeywordLexicon> {
    Ok(match path {
        Some(p) => KeywordLexicon::from_path(p)?,
        None => KeywordLexicon::default(),
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let graph = a.source.load()?;
    let generator = match a.generator {
        GeneratorArg::Template => Generator::Template,
        GeneratorArg::External => Generator::External {
            client: a.model.client()?,
            model_id: a.model_id.clone(),
        },
    };
    let report = build_dataset(&graph, a.skill, a.n, a.seed, &generator, &BuildOptions::default())?;
    let mut out = output(a.out.as_deref())?;
    report.write_jsonl(&mut out)?;
    out.flush()?;
    let stats = dataset_stats(&report.entries.iter().map(|e| e.instruction.as_str()).collect::<Vec<_>>());
    eprintln!(
        "{} entries from {} attempts (acceptance {:.3}); {}",
        report.entries.len(),
        report.attempts,
        report.acceptance_rate,
        stats.to_row(a.skill.key())
    );
    Ok(())
}

fn reorder(a: ReorderArgs) -> Result<()> {
    let client = match a.backend {
        ReorderArg::Rules => None,
        ReorderArg::External => Some(a.model.client()?),
    };
    let mut out = output(a.out.as_deref())?;
    for line in read_lines(&a.input)? {
        let plan = match &client {
            None => reorder_rules(&line),
            Some(c) => reorder_external(&line, c),
        };
        writeln!(out, "{}", serde_json::to_string(&plan)?)?;
    }
    out.flush()?;
    Ok(())
}

fn route(a: RouteArgs) -> Result<()> {
    let backend = match a.router {
        RouterArg::Scripted => RouterBackend::Scripted,
        RouterArg::Random => RouterBackend::Random { seed: a.seed },
        RouterArg::External => RouterBackend::External(a.model.client()?),
    };
    let opts = RouteOptions {
        lexicon: lexicon(a.lexicon.as_deref())?,
        ..RouteOptions::default()
    };
    let mut out = output(a.out.as_deref())?;
    for (i, line) in read_lines(&a.plans)?.into_iter().enumerate() {
        let plan: SubgoalPlan = serde_json::from_str(&line).with_context(|| format!("plan on line {}", i + 1))?;
        let routed = harness::route_plan(&plan, &backend, &opts);
        let v = serde_json::json!({ "original": plan.original, "routes": routed });
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.apply_env();
    if let Some(v) = a.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = a.workers {
        cfg.workers = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.reorder {
        cfg.reorder = match v {
            ReorderArg::Rules => ReorderKind::Rules,
            ReorderArg::External => ReorderKind::External,
        };
    }
    if let Some(v) = a.localizer {
        cfg.localizer = match v {
            ReorderArg::Rules => LocalizerKind::Scripted,
            ReorderArg::External => LocalizerKind::External,
        };
    }
    if let Some(v) = a.router {
        cfg.router = match v {
            RouterArg::Scripted => RouterKind::Scripted,
            RouterArg::Random => RouterKind::Random,
            RouterArg::External => RouterKind::External,
        };
    }
    if let Some(v) = a.transcript_mode {
        cfg.transcript.mode = v.into();
    }
    if let Some(v) = a.transcript {
        cfg.transcript.path = Some(v);
    }
    if let Some(v) = a.max_steps {
        cfg.max_steps = Some(v);
    }
    let out = harness::run(&cfg)?;
    let graph = NavGraph::load_path(&cfg.graph, LoadOptions::default())?;
    let report = harness::evaluate_traces(&graph, &out.traces, cfg.success_threshold_m)?;
    println!("{}", report.to_table("run"));
    eprintln!(
        "{} episodes, {} steps in {:.2} s; traces in {}",
        out.timing.episodes,
        out.timing.steps,
        out.timing.wall_s,
        cfg.output_dir.join(harness::TRACES_FILE).display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let graph = NavGraph::load_path(&a.graph, LoadOptions::default())?;
    let traces = harness::read_traces(&a.traces)?;
    let report = harness::evaluate_traces(&graph, &traces, a.threshold)?;
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!("{}", report.to_table(&a.label));
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let lex = lexicon(a.lexicon.as_deref())?;
    let lines = read_lines(&a.input)?;
    let hist = skill_histogram(&lines, &lex);
    let relations: Vec<_> = lines
        .iter()
        .map(|l| {
            let rels: Vec<String> = classify_temporal(l, &lex).iter().map(|r| r.to_string()).collect();
            serde_json::json!({ "instruction": l, "relations": rels })
        })
        .collect();
    let v = serde_json::json!({ "skills": histogram_json(&hist), "relations": relations });
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn gen_graph(a: GenGraphArgs) -> Result<()> {
    let g = match a.rgg {
        Some(n) => random_geometric(a.seed, n, a.side, a.radius),
        None => {
            let mut p = BuildingParams::default();
            if let Some(f) = a.floors {
                p.floors = f;
            }
            building(a.seed, &p)
        }
    };
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", g.to_json())?;
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Reorder(a) => reorder(a),
        Command::Route(a) => route(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::GenGraph(a) => gen_graph(a),
    }
}
