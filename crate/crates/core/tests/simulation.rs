use gscoop::classes::EMPTY_CLASS;
use gscoop::comms::transform_gaussian;
use gscoop::sim::{
    derive_seed, generate_scene, observe, observe_world, run_episode, AgentPose, EpisodeConfig, GeneratorConfig,
    LearnedState, Mode, ObjectKind, Occlusion, Scene, SceneObject, SceneSpec, Visibility, WorldBounds,
    WorldRaster,
};
use gscoop::{FusionParams, LabelGrid, ObservationModel, Roi, SemanticClass};

fn scenes(n: u64, model: ObservationModel) -> Vec<Scene> {
    let cfg = EpisodeConfig::default();
    (0..n)
        .map(|i| {
            let spec = generate_scene(derive_seed(3, "scene", i), &GeneratorConfig::default()).unwrap();
            Scene::prepare(spec, model, &cfg).unwrap()
        })
        .collect()
}

fn small_model() -> ObservationModel {
    ObservationModel {
        gaussians_per_agent: 2000,
        ..ObservationModel::default()
    }
}

fn recall(pred: &LabelGrid, gt: &LabelGrid) -> f64 {
    let occ = |l: u8| l as usize != EMPTY_CLASS;
    let hit = pred.labels.iter().zip(&gt.labels).filter(|(p, g)| occ(**p) && occ(**g)).count();
    hit as f64 / gt.occupied_count().max(1) as f64
}

#[test]
fn noiseless_observations_sit_in_their_voxel_with_the_true_class() {
    let spec = generate_scene(11, &GeneratorConfig::default()).unwrap();
    let model = ObservationModel {
        gaussians_per_agent: 3000,
        ..ObservationModel::noiseless()
    };
    let raster = WorldRaster::build(&spec, 0.4).unwrap();
    let vis = Visibility::compute(&raster, &spec, &model);
    let obs = observe_world(&spec, &raster, &vis, 0, &model, &Roi::ego_default()).unwrap();
    assert_eq!(obs.len(), 3000);
    for g in &obs {
        let (_, label) = raster.label_at(&g.mean).expect("inside the world");
        assert_eq!(g.dominant_class(), label as usize);
    }
}

#[test]
fn raycast_visibility_is_a_subset_of_unoccluded_visibility() {
    let spec = generate_scene(12, &GeneratorConfig::default()).unwrap();
    let raster = WorldRaster::build(&spec, 0.4).unwrap();
    let ray = Visibility::compute(&raster, &spec, &ObservationModel::default());
    let all = Visibility::compute(
        &raster,
        &spec,
        &ObservationModel {
            occlusion: Occlusion::None,
            ..ObservationModel::default()
        },
    );
    for (r, a) in ray.per_agent.iter().zip(&all.per_agent) {
        assert!(r.iter().zip(a).all(|(r, a)| !*r || *a));
        let (nr, na) = (r.iter().filter(|v| **v).count(), a.iter().filter(|v| **v).count());
        assert!(nr > 0 && nr < na, "raycast {nr}, unoccluded {na}");
    }
}

#[test]
fn vehicle_behind_a_wall_is_only_seen_by_the_agent_in_front_of_it() {
    let wall = SceneObject {
        kind: ObjectKind::Wall,
        class: SemanticClass::Wall,
        center: [5.0, 0.0, 1.5],
        size: [0.4, 10.0, 3.0],
        yaw: 0.0,
    };
    let car = SceneObject {
        kind: ObjectKind::Vehicle,
        class: SemanticClass::Vehicle,
        center: [8.0, 0.0, 0.8],
        size: [4.0, 2.0, 1.6],
        yaw: 0.0,
    };
    let spec = SceneSpec {
        seed: 5,
        world: WorldBounds {
            min: [-20.0, -20.0, 0.0],
            max: [30.0, 20.0, 3.2],
        },
        objects: vec![wall, car],
        agents: vec![
            AgentPose {
                position: [0.0, 0.0, 0.0],
                yaw: 0.0,
            },
            AgentPose {
                position: [15.0, 0.0, 0.0],
                yaw: std::f64::consts::PI,
            },
        ],
    };
    let model = ObservationModel {
        position_noise: 0.0,
        ..ObservationModel::default()
    };
    let scene = Scene::prepare(spec.clone(), model, &EpisodeConfig::default()).unwrap();
    let v = SemanticClass::Vehicle.index();
    assert_eq!(scene.ground_truth.per_agent[0].class_counts()[v], 0);
    assert!(scene.ground_truth.per_agent[1].class_counts()[v] > 0);
    // the collaborative grid of agent 0 includes what agent 1 sees
    assert!(scene.ground_truth.collaborative[0].class_counts()[v] > 0);
    let pose = spec.agents[0].transform();
    assert!(scene.observations[0].iter().all(|g| !spec.objects[1].contains(&pose.apply(&g.mean))));
    assert!(!scene.observations[1].is_empty());
}

#[test]
fn agent_frame_observations_are_the_world_observations_moved() {
    let spec = generate_scene(13, &GeneratorConfig::default()).unwrap();
    let model = small_model();
    let raster = WorldRaster::build(&spec, 0.4).unwrap();
    let vis = Visibility::compute(&raster, &spec, &model);
    let roi = Roi::ego_default();
    for agent in 0..spec.agents.len() {
        let world = observe_world(&spec, &raster, &vis, agent, &model, &roi).unwrap();
        let local = observe(&spec, &raster, &vis, agent, &model, &roi).unwrap();
        let pose = spec.agents[agent].transform();
        for (w, l) in world.iter().zip(&local) {
            let back = transform_gaussian(l, &pose);
            assert!((back.mean - w.mean).norm() < 1e-9);
            assert!((back.covariance() - w.covariance()).norm() < 1e-9);
        }
    }
}

#[test]
fn stacking_never_loses_occupied_voxels() {
    let cfg = EpisodeConfig::default();
    let none = LearnedState::default();
    for scene in scenes(4, small_model()) {
        let single = run_episode(&scene, Mode::Single, &cfg, &none).unwrap();
        let stacked = run_episode(&scene, Mode::ZeroShot, &cfg, &none).unwrap();
        for a in 0..scene.num_agents() {
            let gt = &scene.ground_truth.collaborative[a];
            assert!(recall(&stacked.predictions[a], gt) >= recall(&single.predictions[a], gt));
            let s = &single.predictions[a].labels;
            let z = &stacked.predictions[a].labels;
            assert!(s.iter().zip(z).all(|(s, z)| *s as usize == EMPTY_CLASS || *z as usize != EMPTY_CLASS));
        }
    }
}

#[test]
fn zero_budget_collapses_every_mode_to_single() {
    let cfg = EpisodeConfig {
        budget_bytes: Some(0),
        ..EpisodeConfig::default()
    };
    let learned = LearnedState {
        fusion: Some(FusionParams::init(1)),
        calibration: Some(gscoop::learn::Calibration {
            gain: vec![0.5; 12],
            bias: vec![0.1; 12],
        }),
    };
    for scene in scenes(2, small_model()) {
        let single = run_episode(&scene, Mode::Single, &cfg, &learned).unwrap();
        for mode in [Mode::ZeroShot, Mode::Naive, Mode::Learned] {
            let ep = run_episode(&scene, mode, &cfg, &learned).unwrap();
            assert_eq!(ep.channels, single.channels, "{mode}");
            assert_eq!(ep.stats.bytes_sent(), 0);
            assert_eq!(ep.stats.totals().messages_rejected, (scene.num_agents() * (scene.num_agents() - 1)) as u64);
        }
    }
}

#[test]
fn preparation_is_deterministic() {
    let a = scenes(1, small_model());
    let b = scenes(1, small_model());
    assert_eq!(a[0].spec, b[0].spec);
    assert_eq!(a[0].observations, b[0].observations);
    assert_eq!(a[0].ground_truth.collaborative, b[0].ground_truth.collaborative);
}

#[test]
fn scene_specs_round_trip_through_toml() {
    let spec = generate_scene(99, &GeneratorConfig::default()).unwrap();
    assert_eq!(SceneSpec::from_toml(&spec.to_toml().unwrap()).unwrap(), spec);
}
