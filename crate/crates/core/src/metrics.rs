//! Occupancy IoU, per-class IoU / mIoU and bird's-eye-view IoU.
//!
//! Counts are accumulated over any number of grid pairs, so dataset-level
//! scores are ratios of summed intersections and unions.

use serde::{Deserialize, Serialize};

use crate::classes::{SemanticClass, EMPTY_CLASS, NUM_SEMANTIC};
use crate::error::{Error, Result};
use crate::grid::LabelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BevCategory {
    Vehicle,
    Road,
    Others,
}

impl BevCategory {
    pub const ALL: [BevCategory; 3] = [BevCategory::Vehicle, BevCategory::Road, BevCategory::Others];

    pub fn name(self) -> &'static str {
        match self {
            BevCategory::Vehicle => "vehicle",
            BevCategory::Road => "road",
            BevCategory::Others => "others",
        }
    }
}

/// Assignment of semantic classes to BEV categories.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMap {
    pub map: [Option<BevCategory>; NUM_SEMANTIC],
}

impl Default for CategoryMap {
    /// Vehicle and road map to their own categories, everything else to
    /// "others".
    fn default() -> Self {
        let mut map = [Some(BevCategory::Others); NUM_SEMANTIC];
        map[SemanticClass::Vehicle.index()] = Some(BevCategory::Vehicle);
        map[SemanticClass::Road.index()] = Some(BevCategory::Road);
        CategoryMap { map }
    }
}

fn check_geometry(pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
    if pred.geometry != gt.geometry || pred.labels.len() != gt.labels.len() {
        return Err(Error::InvalidArgument(
            "prediction and ground truth have different grid geometry".into(),
        ));
    }
    Ok(())
}

fn ratio(inter: u64, union: u64) -> Option<f64> {
    (union > 0).then(|| inter as f64 / union as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IouCounts {
    pub occupied_inter: u64,
    pub occupied_union: u64,
    pub class_inter: [u64; NUM_SEMANTIC],
    pub class_union: [u64; NUM_SEMANTIC],
}

impl IouCounts {
    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        check_geometry(pred, gt)?;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            let (p, g) = (p as usize, g as usize);
            let (po, go) = (p != EMPTY_CLASS, g != EMPTY_CLASS);
            if po && go {
                self.occupied_inter += 1;
            }
            if po || go {
                self.occupied_union += 1;
            }
            if p == g {
                if po {
                    self.class_inter[p] += 1;
                    self.class_union[p] += 1;
                }
            } else {
                if po {
                    self.class_union[p] += 1;
                }
                if go {
                    self.class_union[g] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouCounts) {
        self.occupied_inter += other.occupied_inter;
        self.occupied_union += other.occupied_union;
        for k in 0..NUM_SEMANTIC {
            self.class_inter[k] += other.class_inter[k];
            self.class_union[k] += other.class_union[k];
        }
    }

    pub fn iou(&self) -> Option<f64> {
        ratio(self.occupied_inter, self.occupied_union)
    }

    /// Per semantic class; `None` when the class is absent from both sides.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        (0..NUM_SEMANTIC)
            .map(|k| ratio(self.class_inter[k], self.class_union[k]))
            .collect()
    }

    pub fn miou(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BevCounts {
    pub inter: [u64; 3],
    pub union: [u64; 3],
}

impl BevCounts {
    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid, map: &CategoryMap) -> Result<()> {
        check_geometry(pred, gt)?;
        let pm = bev_masks(pred, map)?;
        let gm = bev_masks(gt, map)?;
        for c in 0..3 {
            for (a, b) in pm[c].iter().zip(&gm[c]) {
                if *a && *b {
                    self.inter[c] += 1;
                }
                if *a || *b {
                    self.union[c] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BevCounts) {
        for c in 0..3 {
            self.inter[c] += other.inter[c];
            self.union[c] += other.union[c];
        }
    }

    pub fn iou(&self, category: BevCategory) -> Option<f64> {
        let c = category as usize;
        ratio(self.inter[c], self.union[c])
    }
}

/// Column-presence masks (`X x Y`, x-major) per BEV category.
pub fn bev_masks(grid: &LabelGrid, map: &CategoryMap) -> Result<[Vec<bool>; 3]> {
    let [nx, ny, nz] = grid.geometry.dims;
    let mut masks = [vec![false; nx * ny], vec![false; nx * ny], vec![false; nx * ny]];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let l = grid.get(x, y, z) as usize;
                if l == EMPTY_CLASS {
                    continue;
                }
                let cat = map
                    .map
                    .get(l)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Config(format!("class {l} has no BEV category")))?;
                masks[cat as usize][x * ny + y] = true;
            }
        }
    }
    Ok(masks)
}

/// Scores for one or more prediction/ground-truth pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou: Option<f64>,
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub bev_vehicle: Option<f64>,
    pub bev_road: Option<f64>,
    pub bev_others: Option<f64>,
}

/// Accumulates counts over many grid pairs.
#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    pub counts: IouCounts,
    pub bev: BevCounts,
    pub map: CategoryMap,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid) -> Result<()> {
        self.counts.add(pred, gt)?;
        self.bev.add(pred, gt, &self.map)
    }

    pub fn merge(&mut self, other: &Evaluator) {
        self.counts.merge(&other.counts);
        self.bev.merge(&other.bev);
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            iou: self.counts.iou(),
            miou: self.counts.miou(),
            per_class_iou: self.counts.per_class(),
            bev_vehicle: self.bev.iou(BevCategory::Vehicle),
            bev_road: self.bev.iou(BevCategory::Road),
            bev_others: self.bev.iou(BevCategory::Others),
        }
    }
}

/// Occupancy IoU, per-class IoU and mIoU for one pair.
pub fn iou_3d(pred: &LabelGrid, gt: &LabelGrid) -> Result<EvalReport> {
    let mut e = Evaluator::new();
    e.add(pred, gt)?;
    Ok(e.report())
}

/// Per-category BEV IoU for one pair.
pub fn bev_iou(pred: &LabelGrid, gt: &LabelGrid, map: &CategoryMap) -> Result<[Option<f64>; 3]> {
    let mut c = BevCounts::default();
    c.add(pred, gt, map)?;
    Ok(BevCategory::ALL.map(|k| c.iou(k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::grid::GridGeometry;

    fn grid(dims: [usize; 3]) -> LabelGrid {
        LabelGrid::empty(GridGeometry::new(Vec3::zeros(), 1.0, dims).unwrap())
    }

    #[test]
    fn identical_grids_score_one() {
        let mut g = grid([2, 2, 2]);
        g.labels[0] = 3;
        g.labels[5] = 7;
        let r = iou_3d(&g, &g).unwrap();
        assert_eq!(r.iou, Some(1.0));
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.per_class_iou[0], None);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let mut gt = grid([2, 2, 2]);
        gt.labels[1] = 4;
        let r = iou_3d(&grid([2, 2, 2]), &gt).unwrap();
        assert_eq!(r.iou, Some(0.0));
        assert_eq!(r.miou, Some(0.0));
    }

    #[test]
    fn geometry_mismatch() {
        assert!(iou_3d(&grid([2, 2, 2]), &grid([2, 2, 3])).is_err());
    }

    #[test]
    fn shifted_vehicle_column_has_zero_bev_iou() {
        let mut a = grid([3, 1, 2]);
        let mut b = grid([3, 1, 2]);
        a.labels[a.geometry.index(0, 0, 1)] = SemanticClass::Vehicle as u8;
        b.labels[b.geometry.index(1, 0, 0)] = SemanticClass::Vehicle as u8;
        let r = bev_iou(&a, &b, &CategoryMap::default()).unwrap();
        assert_eq!(r[0], Some(0.0));
        assert_eq!(bev_iou(&a, &a, &CategoryMap::default()).unwrap()[0], Some(1.0));
    }

    #[test]
    fn unmapped_class_is_a_config_error() {
        let mut a = grid([1, 1, 1]);
        a.labels[0] = 2;
        let mut map = CategoryMap::default();
        map.map[2] = None;
        assert!(matches!(bev_iou(&a, &a, &map), Err(Error::Config(_))));
    }
}
