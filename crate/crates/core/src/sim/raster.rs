//! World rasterization, DDA ray traversal, visibility and ground truth.

use crate::classes::EMPTY_CLASS;
use crate::error::Result;
use crate::geometry::Vec3;
use crate::grid::{GridGeometry, LabelGrid};
use crate::sim::{ObservationModel, Occlusion, SceneSpec};

/// World-aligned label volume at the ground-truth resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldRaster {
    pub geometry: GridGeometry,
    pub labels: Vec<u8>,
}

impl WorldRaster {
    pub fn build(spec: &SceneSpec, voxel_size: f64) -> Result<Self> {
        spec.validate()?;
        let min = Vec3::from(spec.world.min);
        let max = Vec3::from(spec.world.max);
        let mut dims = [0usize; 3];
        for i in 0..3 {
            dims[i] = ((max[i] - min[i]) / voxel_size - 1e-9).ceil().max(1.0) as usize;
        }
        let geometry = GridGeometry::new(min, voxel_size, dims)?;
        let mut labels = vec![EMPTY_CLASS as u8; geometry.num_voxels()];
        for o in &spec.objects {
            let (lo, hi) = o.bounds();
            let (Some(a), Some(b)) = (clamp_voxel(&geometry, &lo), clamp_voxel(&geometry, &hi)) else {
                continue;
            };
            for x in a[0]..=b[0] {
                for y in a[1]..=b[1] {
                    for z in a[2]..=b[2] {
                        if o.contains(&geometry.center(x, y, z)) {
                            labels[geometry.index(x, y, z)] = o.class as u8;
                        }
                    }
                }
            }
        }
        Ok(WorldRaster { geometry, labels })
    }

    pub fn is_occupied(&self, c: [usize; 3]) -> bool {
        self.labels[self.geometry.index(c[0], c[1], c[2])] as usize != EMPTY_CLASS
    }

    pub fn label_at(&self, p: &Vec3) -> Option<(usize, u8)> {
        let c = self.geometry.voxel_of(p)?;
        let i = self.geometry.index(c[0], c[1], c[2]);
        Some((i, self.labels[i]))
    }

    fn occupied_signed(&self, c: [i64; 3]) -> bool {
        let d = self.geometry.dims;
        if (0..3).any(|i| c[i] < 0 || c[i] >= d[i] as i64) {
            return false;
        }
        self.is_occupied([c[0] as usize, c[1] as usize, c[2] as usize])
    }
}

fn clamp_voxel(g: &GridGeometry, p: &Vec3) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for i in 0..3 {
        let f = ((p[i] - g.origin[i]) / g.voxel_size).floor();
        out[i] = f.clamp(0.0, (g.dims[i] - 1) as f64) as usize;
    }
    Some(out)
}

/// First occupied voxel met walking the segment `from -> to`, ignoring the
/// voxel that contains `from`.
pub fn dda_first_hit(raster: &WorldRaster, from: &Vec3, to: &Vec3) -> Option<[usize; 3]> {
    let g = &raster.geometry;
    let p0 = (from - g.origin) / g.voxel_size;
    let p1 = (to - g.origin) / g.voxel_size;
    let d = p1 - p0;
    let start = [p0.x.floor() as i64, p0.y.floor() as i64, p0.z.floor() as i64];
    let end = [p1.x.floor() as i64, p1.y.floor() as i64, p1.z.floor() as i64];
    let mut cell = start;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        if d[i] > 0.0 {
            step[i] = 1;
            t_max[i] = ((cell[i] + 1) as f64 - p0[i]) / d[i];
            t_delta[i] = 1.0 / d[i];
        } else if d[i] < 0.0 {
            step[i] = -1;
            t_max[i] = (p0[i] - cell[i] as f64) / -d[i];
            t_delta[i] = -1.0 / d[i];
        }
    }
    loop {
        if cell != start && raster.occupied_signed(cell) {
            return Some([cell[0] as usize, cell[1] as usize, cell[2] as usize]);
        }
        if cell == end {
            return None;
        }
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[axis] > 1.0 {
            return None;
        }
        cell[axis] += step[axis];
        t_max[axis] += t_delta[axis];
    }
}

/// Per-agent visibility masks over a [`WorldRaster`].
#[derive(Clone, Debug, PartialEq)]
pub struct Visibility {
    pub per_agent: Vec<Vec<bool>>,
}

impl Visibility {
    /// An occupied voxel within range is visible when some face turned
    /// towards the sensor is free and the segment from the sensor to a point
    /// just inside that face meets no other occupied voxel first.
    pub fn compute(raster: &WorldRaster, spec: &SceneSpec, model: &ObservationModel) -> Self {
        let g = &raster.geometry;
        let per_agent = spec
            .agents
            .iter()
            .map(|agent| {
                let sensor = agent.sensor();
                let mut mask = vec![false; g.num_voxels()];
                for (i, &l) in raster.labels.iter().enumerate() {
                    if l as usize == EMPTY_CLASS {
                        continue;
                    }
                    let c = g.coords(i);
                    let center = g.center(c[0], c[1], c[2]);
                    if (center - sensor).norm() > model.max_range {
                        continue;
                    }
                    mask[i] = match model.occlusion {
                        Occlusion::None => true,
                        Occlusion::Raycast => face_visible(raster, c, &center, &sensor),
                    };
                }
                mask
            })
            .collect();
        Visibility { per_agent }
    }

    pub fn any(&self) -> Vec<bool> {
        let n = self.per_agent.first().map_or(0, Vec::len);
        (0..n).map(|i| self.per_agent.iter().any(|m| m[i])).collect()
    }
}

fn face_visible(raster: &WorldRaster, c: [usize; 3], center: &Vec3, sensor: &Vec3) -> bool {
    let half = 0.5 * raster.geometry.voxel_size;
    let inset = 1e-3 * raster.geometry.voxel_size;
    let ci = [c[0] as i64, c[1] as i64, c[2] as i64];
    for axis in 0..3 {
        for dir in [-1i64, 1] {
            let toward = (sensor[axis] - center[axis]) * dir as f64;
            if toward <= half {
                continue;
            }
            let mut n = ci;
            n[axis] += dir;
            if raster.occupied_signed(n) {
                continue;
            }
            let mut target = *center;
            target[axis] += dir as f64 * (half - inset);
            if dda_first_hit(raster, sensor, &target) == Some(c) {
                return true;
            }
        }
    }
    false
}

/// Labels the agents can see, resampled into each agent's ego grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// What each agent sees itself.
    pub per_agent: Vec<LabelGrid>,
    /// What any agent sees, in each agent's frame.
    pub collaborative: Vec<LabelGrid>,
}

pub fn build_ground_truth(
    spec: &SceneSpec,
    model: &ObservationModel,
    geometry: &GridGeometry,
) -> Result<GroundTruth> {
    let raster = WorldRaster::build(spec, geometry.voxel_size)?;
    let vis = Visibility::compute(&raster, spec, model);
    Ok(ground_truth_from(&raster, &vis, spec, geometry))
}

pub(crate) fn ground_truth_from(
    raster: &WorldRaster,
    vis: &Visibility,
    spec: &SceneSpec,
    geometry: &GridGeometry,
) -> GroundTruth {
    let any = vis.any();
    let mut per_agent = Vec::new();
    let mut collaborative = Vec::new();
    for (a, agent) in spec.agents.iter().enumerate() {
        let pose = agent.transform();
        let mut own = LabelGrid::empty(*geometry);
        let mut all = LabelGrid::empty(*geometry);
        for v in 0..geometry.num_voxels() {
            let w = pose.apply(&geometry.center_of(v));
            if let Some((i, label)) = raster.label_at(&w) {
                if label as usize == EMPTY_CLASS {
                    continue;
                }
                if vis.per_agent[a][i] {
                    own.labels[v] = label;
                }
                if any[i] {
                    all.labels[v] = label;
                }
            }
        }
        per_agent.push(own);
        collaborative.push(all);
    }
    GroundTruth {
        per_agent,
        collaborative,
    }
}

/// Every object voxel of the scene in the frame of `agent`, ignoring
/// visibility.
pub fn rasterize_complete(spec: &SceneSpec, agent: usize, geometry: &GridGeometry) -> Result<LabelGrid> {
    let raster = WorldRaster::build(spec, geometry.voxel_size)?;
    let pose = spec.agents[agent].transform();
    let mut out = LabelGrid::empty(*geometry);
    for v in 0..geometry.num_voxels() {
        if let Some((_, label)) = raster.label_at(&pose.apply(&geometry.center_of(v))) {
            out.labels[v] = label;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::SemanticClass;
    use crate::sim::{AgentPose, ObjectKind, SceneObject, WorldBounds};

    fn scene(objects: Vec<SceneObject>) -> SceneSpec {
        SceneSpec {
            seed: 0,
            world: WorldBounds {
                min: [-20.0, -20.0, 0.0],
                max: [20.0, 20.0, 3.2],
            },
            objects,
            agents: vec![AgentPose {
                position: [0.0, 0.0, 0.0],
                yaw: 0.0,
            }],
        }
    }

    fn cube(center: [f64; 3], size: f64, class: SemanticClass) -> SceneObject {
        SceneObject {
            kind: ObjectKind::Vehicle,
            class,
            center,
            size: [size; 3],
            yaw: 0.0,
        }
    }

    #[test]
    fn empty_scene_has_empty_ground_truth() {
        let gt = build_ground_truth(&scene(vec![]), &ObservationModel::default(), &GridGeometry::ego_default())
            .unwrap();
        assert_eq!(gt.per_agent[0].occupied_count(), 0);
        assert_eq!(gt.collaborative[0].occupied_count(), 0);
    }

    #[test]
    fn aligned_box_voxel_count() {
        let spec = scene(vec![cube([4.4, 4.4, 0.8], 1.6, SemanticClass::Vehicle)]);
        let grid = rasterize_complete(&spec, 0, &GridGeometry::ego_default()).unwrap();
        assert_eq!(grid.class_counts()[SemanticClass::Vehicle.index()], 64);
    }

    #[test]
    fn dda_stops_at_first_occupied_voxel() {
        let spec = scene(vec![cube([5.4, 0.2, 1.8], 0.3, SemanticClass::Wall)]);
        let raster = WorldRaster::build(&spec, 0.4).unwrap();
        let occupied: Vec<usize> = (0..raster.labels.len()).filter(|&i| raster.labels[i] != EMPTY_CLASS as u8).collect();
        assert_eq!(occupied.len(), 1);
        let hit = dda_first_hit(&raster, &Vec3::new(0.1, 0.1, 1.8), &Vec3::new(10.0, 0.3, 1.8));
        let expected = raster.geometry.voxel_of(&Vec3::new(5.4, 0.2, 1.8)).unwrap();
        assert_eq!(hit, Some(expected));
        let miss = dda_first_hit(&raster, &Vec3::new(0.1, 0.1, 1.8), &Vec3::new(0.1, 10.0, 1.8));
        assert_eq!(miss, None);
    }

    #[test]
    fn object_behind_wall_is_invisible() {
        let wall = SceneObject {
            kind: ObjectKind::Wall,
            class: SemanticClass::Wall,
            center: [6.0, 0.0, 1.6],
            size: [0.4, 12.0, 3.2],
            yaw: 0.0,
        };
        let spec = scene(vec![wall, cube([9.0, 0.0, 0.8], 1.6, SemanticClass::Vehicle)]);
        let gt = build_ground_truth(&spec, &ObservationModel::default(), &GridGeometry::ego_default()).unwrap();
        let counts = gt.per_agent[0].class_counts();
        assert_eq!(counts[SemanticClass::Vehicle.index()], 0);
        assert!(counts[SemanticClass::Wall.index()] > 0);
    }
}
