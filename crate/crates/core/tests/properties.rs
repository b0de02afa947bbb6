use std::sync::OnceLock;

use proptest::prelude::*;
use skillnav_core::agents::{decide_builtin, AgentRequest, BuiltinPolicy};
use skillnav_core::episode::{ActionDecision, ActionKind, ActionSpaceMode, EpisodeSpec, EpisodeState, FinalizeOptions};
use skillnav_core::graph::NavGraph;
use skillnav_core::metrics::evaluate;
use skillnav_core::reorder::{banned_connective, reorder_rules, SubgoalPlan, PlanSource};
use skillnav_core::router::{
    keyword_vote, parse_route_response, route_skill, update_ledger, LocalizeResult, RouteOptions, RouterBackend,
    RouterState,
};
use skillnav_core::synthesis::{
    build_dataset, parse_dataset_line, passes_filter, sample_paths, BuildOptions, FilterConfig, Generator,
    LengthWeights,
};
use skillnav_core::taxonomy::{KeywordLexicon, Skill};
use skillnav_core::world::{building, random_geometric, BuildingParams};

fn house() -> &'static NavGraph {
    static G: OnceLock<NavGraph> = OnceLock::new();
    G.get_or_init(|| {
        building(
            4,
            &BuildingParams {
                floors: 3,
                ..BuildingParams::default()
            },
        )
    })
}

const VERBS: &[&str] = &["walk", "go", "turn", "head", "exit", "enter", "pass", "climb"];
const OBJECTS: &[&str] = &[
    "the kitchen",
    "the stairs",
    "the red sofa",
    "the hallway",
    "the bedroom door",
    "the painting",
    "left",
    "right",
];

fn clause() -> impl Strategy<Value = String> {
    (prop::sample::select(VERBS), prop::sample::select(OBJECTS)).prop_map(|(v, o)| format!("{v} to {o}"))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn gerund(verb: &str) -> String {
    match verb {
        "exit" => "exiting".into(),
        "enter" => "entering".into(),
        v if v.ends_with('e') => format!("{}ing", &v[..v.len() - 1]),
        v => format!("{v}ing"),
    }
}

fn position_of(plan: &[String], needle: &str) -> Option<usize> {
    plan.iter().position(|s| s.to_lowercase().contains(needle))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reorder_output_has_no_banned_connectives(
        clauses in prop::collection::vec(clause(), 1..5),
        joins in prop::collection::vec(prop::sample::select(vec![", then ", " and then ", ". Then ", ", before you ", " until you ", ". Once you ", ", "]), 4),
    ) {
        let mut text = capitalize(&clauses[0]);
        for (c, j) in clauses[1..].iter().zip(&joins) {
            text.push_str(j);
            text.push_str(c);
        }
        text.push('.');
        let plan = reorder_rules(&text);
        prop_assert!(!plan.is_empty());
        for s in &plan.subgoals {
            prop_assert!(banned_connective(s).is_none(), "{s:?} from {text:?}");
            prop_assert!(s.ends_with('.'));
        }
        // already-ordered plans are a fixed point
        let again = reorder_rules(&plan.joined());
        prop_assert_eq!(&again.subgoals, &plan.subgoals);
    }

    #[test]
    fn sequences_keep_mention_order(objs in prop::collection::vec(prop::sample::select(OBJECTS), 2..5)) {
        let mut seen = std::collections::BTreeSet::new();
        let objs: Vec<&str> = objs.into_iter().filter(|o| seen.insert(*o)).collect();
        prop_assume!(objs.len() >= 2);
        let text = objs
            .iter()
            .map(|o| format!("walk to {o}"))
            .collect::<Vec<_>>()
            .join(", then ");
        let plan = reorder_rules(&capitalize(&text));
        let idx: Vec<usize> = objs.iter().map(|o| position_of(&plan.subgoals, o).unwrap()).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]), "{:?}", plan.subgoals);
    }

    #[test]
    fn before_is_inverted(
        first in prop::sample::select(&["turn left", "turn right", "stop", "look up"][..]),
        verb in prop::sample::select(&["enter", "exit", "climb", "pass"][..]),
        obj in prop::sample::select(&["the kitchen", "the stairs", "the dining room", "the lobby"][..]),
    ) {
        let text = format!("{} before {} {obj}.", capitalize(first), gerund(verb));
        let plan = reorder_rules(&text);
        let approach = position_of(&plan.subgoals, obj).unwrap();
        let act = position_of(&plan.subgoals, first).unwrap();
        prop_assert!(approach < act, "{:?}", plan.subgoals);
    }

    #[test]
    fn triggers_run_first(
        cond in prop::sample::select(&["enter the kitchen", "reach the stairs", "see the painting"][..]),
        act in prop::sample::select(&["turn left", "stop", "go up the stairs"][..]),
        cue in prop::sample::select(&["Once you", "As soon as you", "After you"][..]),
    ) {
        let text = format!("{cue} {cond}, {act}.");
        let plan = reorder_rules(&text);
        let c = position_of(&plan.subgoals, cond).unwrap();
        let a = position_of(&plan.subgoals, act).unwrap();
        prop_assert!(c < a, "{:?}", plan.subgoals);
    }

    #[test]
    fn until_expands_to_continue_then_reach(
        verb in prop::sample::select(&["walk", "go", "head"][..]),
        obj in prop::sample::select(&["the kitchen", "the stairs", "the red sofa"][..]),
    ) {
        let text = format!("{} down the hallway until you reach {obj}.", capitalize(verb));
        let plan = reorder_rules(&text);
        let k = position_of(&plan.subgoals, "continue").unwrap();
        prop_assert!(plan.subgoals[k + 1].starts_with("Reach"), "{:?}", plan.subgoals);
    }

    #[test]
    fn route_parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        if let Some(s) = parse_route_response(&bytes) {
            prop_assert!(s.is_routed());
        }
    }

    #[test]
    fn routing_always_names_a_routed_skill(sub in ".{0,80}", t in 0u64..1000, seed in any::<u64>()) {
        let opts = RouteOptions::default();
        for backend in [RouterBackend::Scripted, RouterBackend::Random { seed }] {
            let r = route_skill("x", "x", &sub, "r", t, &backend, &opts);
            prop_assert!(r.skill.is_routed());
        }
        if let Some(s) = keyword_vote(&sub, &KeywordLexicon::default()) {
            prop_assert!(s.is_routed());
        }
    }

    #[test]
    fn ledger_stays_strictly_increasing(ops in prop::collection::vec((0usize..8, any::<bool>()), 1..40)) {
        let plan = SubgoalPlan {
            subgoals: (0..8).map(|i| format!("Step {i}.")).collect(),
            source: PlanSource::Rules,
            original: String::new(),
            provenance: vec![],
        };
        let mut state = RouterState::new(plan).unwrap();
        for (k, complete) in ops {
            let r = LocalizeResult {
                subgoal: format!("Step {k}."),
                plan_index: k,
                reasoning: "r".into(),
                provenance: vec![],
            };
            let before = state.ledger_indices();
            match update_ledger(&mut state, &r) {
                Ok(_) => {}
                Err(_) => prop_assert_eq!(&state.ledger_indices(), &before),
            }
            if complete {
                state.complete_active();
            }
            let idx = state.ledger_indices();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lower_elevation_threshold_accepts_superset(seed in any::<u64>(), lo in 0.5f64..3.0, extra in 0.0f64..3.0) {
        let g = house();
        let low = FilterConfig::default();
        let mut low = low;
        low.elevation_min_m.value = lo;
        let mut high = low.clone();
        high.elevation_min_m.value = lo + extra;
        for s in sample_paths(g, seed, 200, &LengthWeights::default()).unwrap() {
            if passes_filter(&s, Skill::VerticalMovement, &high).accepted {
                prop_assert!(passes_filter(&s, Skill::VerticalMovement, &low).accepted);
            }
        }
    }

    #[test]
    fn dataset_lines_round_trip_and_refilter(seed in any::<u64>(), skill in prop::sample::select(Skill::ALL.to_vec())) {
        let g = house();
        let r = build_dataset(g, skill, 6, seed, &Generator::Template, &BuildOptions::default()).unwrap();
        for e in &r.entries {
            let back = parse_dataset_line(g, &e.to_jsonl_line()).unwrap();
            prop_assert_eq!(&back.trajectory, &e.trajectory);
            prop_assert_eq!(&back.instruction, &e.instruction);
            prop_assert!(passes_filter(&back.trajectory, skill, &FilterConfig::default()).accepted);
        }
    }

    #[test]
    fn geodesics_are_symmetric_and_metric(seed in any::<u64>(), picks in prop::collection::vec(0usize..40, 3)) {
        let g = random_geometric(seed, 40, 20.0, 6.0);
        let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
        let (a, b, c) = (ids[picks[0]], ids[picks[1]], ids[picks[2]]);
        let dab = g.distances_from(a).unwrap().distance(b).unwrap();
        let dba = g.distances_from(b).unwrap().distance(a).unwrap();
        prop_assert!((dab - dba).abs() <= 1e-9 * dab.max(1.0) || (dab.is_infinite() && dba.is_infinite()));
        let dbc = g.distances_from(b).unwrap().distance(c).unwrap();
        let dac = g.distances_from(a).unwrap().distance(c).unwrap();
        if dab.is_finite() && dbc.is_finite() {
            prop_assert!(dac <= dab + dbc + 1e-9);
        }
        if dab.is_finite() {
            let geo = g.geodesic(a, b).unwrap();
            let len: f64 = geo.path.windows(2).map(|w| g.edge_length(&w[0], &w[1]).unwrap()).sum();
            prop_assert!((len - dab).abs() <= 1e-9 * dab.max(1.0));
        }
    }

    #[test]
    fn random_episodes_are_well_formed(seed in any::<u64>(), global in any::<bool>(), budget in 1usize..20) {
        use rand::{Rng, SeedableRng};
        let g = house();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<&str> = g.nodes().iter().filter(|n| n.region != "Error").map(|n| n.id.as_str()).collect();
        let mut spec = EpisodeSpec::new(ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())], "wander");
        spec.max_steps = budget;
        if global {
            spec.action_space = ActionSpaceMode::Global;
        }
        let mut st = EpisodeState::start(g, spec).unwrap();
        while !st.done {
            let cands = st.candidate_actions().unwrap();
            let kind = if rng.gen_bool(0.1) { ActionKind::Stop } else { cands[rng.gen_range(0..cands.len())].clone() };
            st.step(&ActionDecision { kind, stop_score: rng.gen_range(0.0..=1.0) }).unwrap();
        }
        let cap = if global { budget + 200 } else { budget };
        prop_assert!(st.t <= cap);
        let trace = st.finalize(FinalizeOptions { retrospective_append: rng.gen_bool(0.5) }).unwrap();
        for w in trace.path.windows(2) {
            prop_assert!(g.is_edge(&w[0], &w[1]));
        }
        prop_assert!(trace.path.contains(&trace.final_node));
        let r = evaluate(&trace, g, 3.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.spl_term));
        prop_assert!(r.ne >= 0.0);
        prop_assert!(!r.success || r.oracle_success);
    }

    #[test]
    fn builtin_agents_answer_every_state(seed in any::<u64>(), sub in prop::sample::select(&[
        "Turn left.", "Go up the stairs.", "Stop at the painting.", "Walk to the sofa.", "Enter the kitchen.",
        "Exit the bedroom.", "Continue forward.", "Go down the stairs.",
    ][..])) {
        use rand::{Rng, SeedableRng};
        let g = house();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
        let mut spec = EpisodeSpec::new(ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())], sub);
        spec.start_heading_deg = rng.gen_range(0.0..360.0);
        let st = EpisodeState::start(g, spec.clone()).unwrap();
        let req = AgentRequest::from_state(&st, sub, sub, rng.gen_range(0..3), Some(&spec.goal)).unwrap();
        for p in [
            BuiltinPolicy::Oracle,
            BuiltinPolicy::GreedyLandmark,
            BuiltinPolicy::GreedyVertical,
            BuiltinPolicy::GreedyDirection,
            BuiltinPolicy::GreedyRegion,
            BuiltinPolicy::StopSpecialist,
        ] {
            let r = decide_builtin(p, &req, g).unwrap();
            prop_assert!(r.validate(&req).is_ok());
        }
    }
}
