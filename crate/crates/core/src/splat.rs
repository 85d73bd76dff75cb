//! Gaussian-to-voxel splatting: every primitive adds `a exp(-q/2) c` to the
//! channels of the voxels it touches, evaluated at voxel centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SemanticGaussian;
use crate::geometry::{Mat3, Vec3};
use crate::grid::{ChannelGrid, GridGeometry, LabelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplatConfig {
    /// Mahalanobis radius of the truncation ellipsoid.
    pub truncation_sigma: f64,
    /// Per-channel contributions below this are skipped; it is also the
    /// floor under which a voxel decodes as empty.
    pub min_contribution: f64,
}

impl Default for SplatConfig {
    fn default() -> Self {
        SplatConfig {
            truncation_sigma: 3.0,
            min_contribution: 1e-4,
        }
    }
}

impl SplatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation_sigma must be > 0, got {}",
                self.truncation_sigma
            )));
        }
        if !(self.min_contribution >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "min_contribution must be >= 0, got {}",
                self.min_contribution
            )));
        }
        Ok(())
    }
}

/// Inclusive voxel index box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoxelRange {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelRange {
    pub fn for_each(&self, geometry: &GridGeometry, mut f: impl FnMut(usize, Vec3)) {
        for x in self.lo[0]..=self.hi[0] {
            for y in self.lo[1]..=self.hi[1] {
                for z in self.lo[2]..=self.hi[2] {
                    f(geometry.index(x, y, z), geometry.center(x, y, z));
                }
            }
        }
    }
}

/// Voxels whose boxes intersect the axis-aligned bounds of the truncation
/// ellipsoid `{x : (x-m)^T Σ^-1 (x-m) <= sigma^2}`. The half extent along
/// axis i is `sigma * sqrt(Σ_ii)`.
pub fn footprint(
    covariance: &Mat3,
    mean: &Vec3,
    geometry: &GridGeometry,
    sigma: f64,
) -> Option<VoxelRange> {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for i in 0..3 {
        let half = sigma * covariance[(i, i)].sqrt();
        let a = ((mean[i] - half - geometry.origin[i]) / geometry.voxel_size).floor();
        let b = ((mean[i] + half - geometry.origin[i]) / geometry.voxel_size).floor();
        let max = geometry.dims[i] as f64 - 1.0;
        if !(b >= 0.0) || !(a <= max) {
            return None;
        }
        lo[i] = a.max(0.0) as usize;
        hi[i] = b.min(max) as usize;
    }
    Some(VoxelRange { lo, hi })
}

/// Precomputed evaluation data for one primitive.
pub(crate) struct Kernel<'a> {
    pub gaussian: &'a SemanticGaussian,
    pub precision: Mat3,
    pub range: Option<VoxelRange>,
}

impl<'a> Kernel<'a> {
    pub fn new(g: &'a SemanticGaussian, geometry: &GridGeometry, sigma: f64) -> Result<Self> {
        let precision = g.precision()?;
        let range = footprint(&g.covariance(), &g.mean, geometry, sigma);
        Ok(Kernel {
            gaussian: g,
            precision,
            range,
        })
    }

    pub fn mahalanobis_sq(&self, x: &Vec3) -> f64 {
        let d = x - self.gaussian.mean;
        d.dot(&(self.precision * d))
    }
}

/// Splats `gaussians` into a fresh grid.
pub fn splat<'a, I>(gaussians: I, geometry: &GridGeometry, cfg: &SplatConfig) -> Result<ChannelGrid>
where
    I: IntoIterator<Item = &'a SemanticGaussian>,
{
    let mut grid = ChannelGrid::zeros(*geometry);
    splat_into(&mut grid, gaussians, cfg)?;
    Ok(grid)
}

/// Adds the contributions of `gaussians` to `grid`, in iteration order.
pub fn splat_into<'a, I>(grid: &mut ChannelGrid, gaussians: I, cfg: &SplatConfig) -> Result<()>
where
    I: IntoIterator<Item = &'a SemanticGaussian>,
{
    cfg.validate()?;
    let geometry = grid.geometry;
    let nc = grid.num_classes;
    let mut active = Vec::with_capacity(nc);
    for g in gaussians {
        let kernel = Kernel::new(g, &geometry, cfg.truncation_sigma)?;
        let Some(range) = kernel.range else { continue };
        active.clear();
        active.extend((0..nc).filter(|&k| g.semantics[k] != 0.0));
        if active.is_empty() || g.opacity == 0.0 {
            continue;
        }
        range.for_each(&geometry, |v, center| {
            let w = g.opacity * (-0.5 * kernel.mahalanobis_sq(&center)).exp();
            let cell = &mut grid.data[v * nc..(v + 1) * nc];
            for &k in &active {
                let c = w * g.semantics[k];
                if c >= cfg.min_contribution {
                    cell[k] += c;
                }
            }
        });
    }
    Ok(())
}

/// Argmax decode with the empty-class fallback of `cfg.min_contribution`.
pub fn labels_from_channels(grid: &ChannelGrid, cfg: &SplatConfig) -> LabelGrid {
    grid.labels(cfg.min_contribution)
}
