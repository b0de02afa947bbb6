//! Seeded synthetic environments: multi-floor buildings with rooms, a
//! hallway spine, doors and staircases, and random geometric graphs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{LoadOptions, NavGraph, Position, Viewpoint, ERROR_REGION};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildingParams {
    pub floors: usize,
    /// Rooms on each side of the hallway, per floor.
    pub rooms_per_side: usize,
    /// Room width along the hallway, in grid cells.
    pub room_width: usize,
    /// Room depth away from the hallway, in grid cells.
    pub room_depth: usize,
    pub spacing_m: f64,
    pub floor_height_m: f64,
    pub jitter_m: f64,
    /// Room cells relabelled with the scan's "Error" region.
    pub error_cells: usize,
}

impl Default for BuildingParams {
    fn default() -> Self {
        Self {
            floors: 2,
            rooms_per_side: 4,
            room_width: 3,
            room_depth: 3,
            spacing_m: 2.5,
            floor_height_m: 3.5,
            jitter_m: 0.25,
            error_cells: 2,
        }
    }
}

const ROOM_KINDS: &[(&str, &[&str])] = &[
    ("bedroom", &["bed", "lamp", "painting", "window", "dresser", "rug"]),
    ("kitchen", &["counter", "fridge", "sink", "table", "stove", "cabinet"]),
    ("bathroom", &["sink", "toilet", "bathtub", "mirror", "towel rack"]),
    ("living room", &["sofa", "tv", "fireplace", "painting", "lamp", "rug"]),
    ("dining room", &["table", "chairs", "chandelier", "painting", "vase"]),
    ("office", &["desk", "chair", "bookshelf", "computer", "plant"]),
    ("laundry room", &["washer", "dryer", "basket", "shelf"]),
    ("closet", &["shelf", "coats", "boxes"]),
    ("lounge", &["couch", "piano", "plant", "glass doors", "window"]),
];

const HALLWAY_LANDMARKS: &[&str] = &["painting", "plant", "exit sign", "lockers", "bench", "window"];

struct Builder {
    nodes: Vec<Viewpoint>,
    edges: BTreeSet<(String, String)>,
}

impl Builder {
    fn edge(&mut self, a: &str, b: &str) {
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        self.edges.insert(key);
    }
}

fn cell_id(floor: usize, x: i64, y: i64) -> String {
    format!("f{floor}_{x}_{y}")
}

/// Generate a building. Same `(seed, params)` always yields the same graph.
pub fn building(seed: u64, params: &BuildingParams) -> NavGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        nodes: Vec::new(),
        edges: BTreeSet::new(),
    };
    let hall_len = (params.rooms_per_side * params.room_width) as i64;
    let depth = params.room_depth as i64;
    let width = params.room_width as i64;
    let mut room_cells: Vec<String> = Vec::new();

    for floor in 0..params.floors {
        let z = floor as f64 * params.floor_height_m;
        let place = |rng: &mut ChaCha8Rng, x: f64, y: f64| {
            let j = params.jitter_m;
            Position::new(
                x * params.spacing_m + rng.gen_range(-j..=j),
                y * params.spacing_m + rng.gen_range(-j..=j),
                z,
            )
        };

        // hallway spine along y = 0
        for x in 0..hall_len {
            let mut landmarks = BTreeSet::new();
            if rng.gen_bool(0.35) {
                landmarks.insert(HALLWAY_LANDMARKS.choose(&mut rng).unwrap().to_string());
            }
            let id = cell_id(floor, x, 0);
            let position = place(&mut rng, x as f64, 0.0);
            b.nodes.push(Viewpoint {
                id: id.clone(),
                position,
                region: "hallway".into(),
                landmarks,
                descriptor: None,
            });
            if x > 0 {
                b.edge(&cell_id(floor, x - 1, 0), &id);
            }
        }

        // rooms on both sides
        for side in [1i64, -1] {
            for r in 0..params.rooms_per_side as i64 {
                let (kind, pool) = ROOM_KINDS[rng.gen_range(0..ROOM_KINDS.len())];
                let anchors: Vec<&str> = pool.choose_multiple(&mut rng, 2).copied().collect();
                let x0 = r * width;
                for dx in 0..width {
                    for dy in 1..=depth {
                        let (x, y) = (x0 + dx, side * dy);
                        let mut landmarks = BTreeSet::new();
                        // room-wide anchors are visible from most cells
                        for a in &anchors {
                            if rng.gen_bool(0.7) {
                                landmarks.insert(a.to_string());
                            }
                        }
                        if rng.gen_bool(0.3) {
                            landmarks.insert(pool.choose(&mut rng).unwrap().to_string());
                        }
                        let id = cell_id(floor, x, y);
                        let position = place(&mut rng, x as f64, y as f64);
                        b.nodes.push(Viewpoint {
                            id: id.clone(),
                            position,
                            region: kind.into(),
                            landmarks,
                            descriptor: None,
                        });
                        room_cells.push(id.clone());
                        if dx > 0 {
                            b.edge(&cell_id(floor, x - 1, y), &id);
                        }
                        if dy > 1 {
                            b.edge(&cell_id(floor, x, side * (dy - 1)), &id);
                        }
                        if dx > 0 && dy > 1 && rng.gen_bool(0.25) {
                            b.edge(&cell_id(floor, x - 1, side * (dy - 1)), &id);
                        }
                    }
                }
                // one door per room onto the hallway
                let door_x = x0 + rng.gen_range(0..width);
                let inside = cell_id(floor, door_x, side);
                b.edge(&inside, &cell_id(floor, door_x, 0));
                if let Some(vp) = b.nodes.iter_mut().find(|n| n.id == inside) {
                    vp.landmarks.insert("doorway".into());
                }
            }
        }

        // stairwells at both hallway ends
        for (end, x) in [("w", -1i64), ("e", hall_len)] {
            let id = format!("f{floor}_stairs_{end}");
            let position = place(&mut rng, x as f64, 0.4 * floor as f64);
            b.nodes.push(Viewpoint {
                id: id.clone(),
                position,
                region: "stairwell".into(),
                landmarks: ["stairs".to_string()].into_iter().collect(),
                descriptor: None,
            });
            let hall_x = if x < 0 { 0 } else { hall_len - 1 };
            b.edge(&id, &cell_id(floor, hall_x, 0));
            if floor > 0 {
                b.edge(&format!("f{}_stairs_{end}", floor - 1), &id);
            }
        }
    }

    room_cells.shuffle(&mut rng);
    for id in room_cells.iter().take(params.error_cells) {
        if let Some(vp) = b.nodes.iter_mut().find(|n| &n.id == id) {
            vp.region = ERROR_REGION.into();
        }
    }

    let edges = b.edges.into_iter().map(|(a, c)| (a, c, None)).collect();
    NavGraph::from_parts(b.nodes, edges, LoadOptions::default()).expect("generated building is valid")
}

/// Random geometric graph: `n` nodes uniform in a `side` x `side` square,
/// joined when closer than `radius`. Regions and landmarks are drawn from
/// the room pools.
pub fn random_geometric(seed: u64, n: usize, side: f64, radius: f64) -> NavGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let (kind, pool) = ROOM_KINDS[rng.gen_range(0..ROOM_KINDS.len())];
        let k = rng.gen_range(0..3);
        let landmarks = pool.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
        nodes.push(Viewpoint {
            id: format!("n{i:03}"),
            position: Position::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..0.5)),
            region: kind.into(),
            landmarks,
            descriptor: None,
        });
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = nodes[i].position.distance(&nodes[j].position);
            if d > 0.0 && d <= radius {
                edges.push((nodes[i].id.clone(), nodes[j].id.clone(), None));
            }
        }
    }
    NavGraph::from_parts(nodes, edges, LoadOptions::default()).expect("generated graph is valid")
}
