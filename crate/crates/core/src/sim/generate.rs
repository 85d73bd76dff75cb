//! Procedural street scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classes::SemanticClass;
use crate::error::{Error, Result};
use crate::sim::{derive_seed, AgentPose, ObjectKind, SceneObject, SceneSpec, WorldBounds, MAX_AGENTS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_agents: usize,
    /// Half length of the street along x, metres.
    pub half_length: f64,
    /// Half width of the world across the street, metres.
    pub half_width: f64,
    pub height: f64,
    /// Moving and parked vehicles besides the agents.
    pub vehicles: usize,
    /// Distance between consecutive agents along the street, metres.
    pub agent_spacing: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_agents: 3,
            half_length: 40.0,
            half_width: 24.0,
            height: 4.0,
            vehicles: 10,
            agent_spacing: (8.0, 16.0),
        }
    }
}

const ROAD_HALF: f64 = 4.0;
const SIDEWALK: f64 = 2.4;
const CLEARANCE: f64 = 3.5;

fn obj(kind: ObjectKind, class: SemanticClass, lo: [f64; 3], hi: [f64; 3]) -> SceneObject {
    SceneObject {
        kind,
        class,
        center: [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])],
        size: [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]],
        yaw: 0.0,
    }
}

/// A straight street with sidewalks, buildings, street furniture, traffic
/// and `num_agents` agents driving along it. Deterministic in `seed`.
pub fn generate_scene(seed: u64, cfg: &GeneratorConfig) -> Result<SceneSpec> {
    if cfg.num_agents == 0 || cfg.num_agents > MAX_AGENTS {
        return Err(Error::Config(format!(
            "num_agents must be in 1..={MAX_AGENTS}, got {}",
            cfg.num_agents
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "scene", 0));
    let (lx, ly, h) = (cfg.half_length, cfg.half_width, cfg.height);
    let mut objects = vec![
        obj(ObjectKind::Ground, SemanticClass::Terrain, [-lx, -ly, 0.0], [lx, ly, 0.4]),
        obj(ObjectKind::Ground, SemanticClass::Road, [-lx, -ROAD_HALF, 0.0], [lx, ROAD_HALF, 0.4]),
    ];
    if rng.random_bool(0.5) {
        let x = rng.random_range(-0.6 * lx..0.6 * lx);
        objects.push(obj(ObjectKind::Ground, SemanticClass::Road, [x - 3.6, -ly, 0.0], [x + 3.6, ly, 0.4]));
    }
    for side in [-1.0, 1.0] {
        let (a, b) = (side * ROAD_HALF, side * (ROAD_HALF + SIDEWALK));
        objects.push(obj(
            ObjectKind::Slab,
            SemanticClass::Sidewalk,
            [-lx, a.min(b), 0.0],
            [lx, a.max(b), 0.8],
        ));
    }

    // building rows with walls, fences or vegetation in the gaps
    for side in [-1.0, 1.0] {
        let mut x = -lx + rng.random_range(0.0..4.0);
        while x < lx - 4.0 {
            let len = rng.random_range(6.0..16.0f64).min(lx - x);
            let setback = ROAD_HALF + SIDEWALK + rng.random_range(1.0..5.0);
            let depth = rng.random_range(5.0..10.0f64).min(ly - setback);
            let top = rng.random_range(3.0..h);
            let (y0, y1) = (side * setback, side * (setback + depth));
            objects.push(obj(
                ObjectKind::Building,
                SemanticClass::Building,
                [x, y0.min(y1), 0.0],
                [x + len, y0.max(y1), top],
            ));
            x += len;
            let gap = rng.random_range(2.0..7.0f64).min(lx - x);
            if gap > 0.5 {
                let y = side * (ROAD_HALF + SIDEWALK + rng.random_range(0.5..1.5));
                let (class, kind, height, thick) = match rng.random_range(0..3) {
                    0 => (SemanticClass::Wall, ObjectKind::Wall, rng.random_range(1.6..2.8), 0.4),
                    1 => (SemanticClass::Fence, ObjectKind::Wall, rng.random_range(1.0..1.8), 0.2),
                    _ => (SemanticClass::Vegetation, ObjectKind::Building, rng.random_range(1.5..h), 1.6),
                };
                objects.push(obj(
                    kind,
                    class,
                    [x, y - thick / 2.0, 0.0],
                    [x + gap, y + thick / 2.0, height],
                ));
            }
            x += gap;
        }
    }

    // trees and street furniture along the sidewalks
    for side in [-1.0, 1.0] {
        let mut x = -lx + rng.random_range(2.0..8.0);
        while x < lx - 2.0 {
            let y = side * (ROAD_HALF + 0.5);
            match rng.random_range(0..4) {
                0 => {
                    objects.push(obj(ObjectKind::Pole, SemanticClass::Pole, [x - 0.15, y - 0.15, 0.0], [x + 0.15, y + 0.15, 3.6]));
                    objects.push(obj(
                        ObjectKind::Sign,
                        SemanticClass::TrafficSign,
                        [x - 0.4, y - 0.1, 2.4],
                        [x + 0.4, y + 0.1, 3.2],
                    ));
                }
                1 => objects.push(obj(ObjectKind::Pole, SemanticClass::Pole, [x - 0.15, y - 0.15, 0.0], [x + 0.15, y + 0.15, 3.8])),
                2 => {
                    let r = rng.random_range(0.8..1.6);
                    let yc = side * (ROAD_HALF + SIDEWALK - 0.2);
                    objects.push(obj(
                        ObjectKind::Building,
                        SemanticClass::Vegetation,
                        [x - r, yc - r, 0.8],
                        [x + r, yc + r, rng.random_range(2.5..h)],
                    ));
                }
                _ => {
                    let len = rng.random_range(4.0..10.0f64).min(lx - x);
                    let y = side * (ROAD_HALF - 0.2);
                    objects.push(obj(
                        ObjectKind::Wall,
                        SemanticClass::GuardRail,
                        [x, y - 0.15, 0.4],
                        [x + len, y + 0.15, 1.2],
                    ));
                    x += len;
                }
            }
            x += rng.random_range(5.0..12.0);
        }
    }

    // agents drive along the street
    let mut agents = Vec::with_capacity(cfg.num_agents);
    let span: f64 = cfg.agent_spacing.1 * (cfg.num_agents - 1) as f64;
    let mut x = rng.random_range(-0.5 * lx..(0.5 * lx - span).max(-0.5 * lx + 1.0));
    for i in 0..cfg.num_agents {
        let lane = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let heading = if lane > 0.0 { std::f64::consts::PI } else { 0.0 };
        agents.push(AgentPose {
            position: [x, lane * 2.0, 0.0],
            yaw: heading + rng.random_range(-0.05..0.05),
        });
        if i + 1 < cfg.num_agents {
            x += rng.random_range(cfg.agent_spacing.0..cfg.agent_spacing.1);
        }
    }

    // other traffic, kept clear of the agents
    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.vehicles && attempts < 50 * cfg.vehicles.max(1) {
        attempts += 1;
        let lane = [-2.0, 2.0, -5.4, 5.4][rng.random_range(0..4)];
        let x = rng.random_range(-lx + 5.0..lx - 5.0);
        let clear = agents
            .iter()
            .all(|a| (a.position[0] - x).abs() > CLEARANCE + 2.2 || (a.position[1] - lane).abs() > 2.5);
        if !clear {
            continue;
        }
        let (length, height) = if rng.random_bool(0.2) { (8.0, 3.0) } else { (4.4, 1.6) };
        let z0 = if lane.abs() > ROAD_HALF { 0.8 } else { 0.4 };
        objects.push(SceneObject {
            kind: ObjectKind::Vehicle,
            class: SemanticClass::Vehicle,
            center: [x, lane, z0 + height / 2.0],
            size: [length, 1.8, height],
            yaw: rng.random_range(-0.08..0.08),
        });
        placed += 1;
    }

    let spec = SceneSpec {
        seed,
        world: WorldBounds {
            min: [-lx, -ly, 0.0],
            max: [lx, ly, h],
        },
        objects,
        agents,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_valid() {
        let cfg = GeneratorConfig::default();
        let a = generate_scene(42, &cfg).unwrap();
        assert_eq!(a, generate_scene(42, &cfg).unwrap());
        assert_ne!(a, generate_scene(43, &cfg).unwrap());
        assert_eq!(a.agents.len(), 3);
    }

    #[test]
    fn agent_count_is_checked() {
        let cfg = GeneratorConfig {
            num_agents: 8,
            ..Default::default()
        };
        assert!(generate_scene(1, &cfg).is_err());
    }
}
