//! Reverse-mode derivatives through splatting and the fusion module.

use crate::error::{Error, Result};
use crate::fusion::{fuse_scene_traced, FusionConfig, FusionParams, FusionTrace, GaussianGrad};
use crate::gaussian::SemanticGaussian;
use crate::geometry::{Mat3, Vec3};
use crate::grid::GridGeometry;
use crate::splat::{Kernel, SplatConfig};

/// Gradient of a loss w.r.t. each Gaussian's attributes, given the gradient
/// w.r.t. the splatted channels. Mirrors [`crate::splat::splat_into`],
/// including its truncation and per-channel floor.
pub fn splat_backward(
    gaussians: &[SemanticGaussian],
    geometry: &GridGeometry,
    cfg: &SplatConfig,
    d_channels: &[f64],
    num_classes: usize,
) -> Result<Vec<GaussianGrad>> {
    cfg.validate()?;
    if d_channels.len() != geometry.num_voxels() * num_classes {
        return Err(Error::InvalidArgument(format!(
            "channel gradient has {} values, grid needs {}",
            d_channels.len(),
            geometry.num_voxels() * num_classes
        )));
    }
    let mut out = Vec::with_capacity(gaussians.len());
    for g in gaussians {
        let mut d = GaussianGrad::default();
        let kernel = Kernel::new(g, geometry, cfg.truncation_sigma)?;
        let Some(range) = kernel.range else {
            out.push(d);
            continue;
        };
        if g.opacity == 0.0 && g.semantics.iter().all(|c| *c == 0.0) {
            out.push(d);
            continue;
        }
        let r = g.rotation_matrix();
        let inv_s2 = g.scale.map(|s| 1.0 / (s * s));
        // accumulated dL/dq weighted terms
        let mut d_mean = Vec3::zeros();
        let mut d_scale = Vec3::zeros();
        let mut d_rot = Mat3::zeros();
        range.for_each(geometry, |v, center| {
            let e = (-0.5 * kernel.mahalanobis_sq(&center)).exp();
            let w = g.opacity * e;
            let dch = &d_channels[v * num_classes..(v + 1) * num_classes];
            let mut inner = 0.0;
            for k in 0..num_classes {
                let c = g.semantics[k];
                if c == 0.0 || w * c < cfg.min_contribution {
                    continue;
                }
                inner += dch[k] * c;
                d.semantics[k] += w * dch[k];
            }
            if inner == 0.0 {
                return;
            }
            d.opacity += e * inner;
            // dL/dq = -0.5 w inner
            let dq = -0.5 * w * inner;
            let diff = center - g.mean;
            let y = r.transpose() * diff;
            let ys = y.component_mul(&inv_s2);
            d_mean += -2.0 * dq * (r * ys);
            for i in 0..3 {
                d_scale[i] += dq * (-2.0 * y[i] * y[i] * inv_s2[i] / g.scale[i]);
            }
            d_rot += 2.0 * dq * diff * ys.transpose();
        });
        d.mean = d_mean.into();
        d.scale = d_scale.into();
        d.rotation = rotmat_grad_to_quat(g.rotation.to_array(), &d_rot);
        out.push(d);
    }
    Ok(out)
}

/// Chain rule through the unit-quaternion rotation matrix formula.
pub fn rotmat_grad_to_quat(q: [f64; 4], g: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [dw, dx, dy, dz]
}

/// Records a fusion forward pass so gradients can be taken afterwards.
#[derive(Debug, Default)]
pub struct FusionTape {
    trace: Option<FusionTrace>,
}

impl FusionTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        ego: &[SemanticGaussian],
        received: &[SemanticGaussian],
        cfg: &FusionConfig,
        params: &FusionParams,
    ) -> Result<Vec<SemanticGaussian>> {
        let (out, trace) = fuse_scene_traced(ego, received, cfg, params)?;
        self.trace = Some(trace);
        Ok(out)
    }

    /// Gradient w.r.t. `params` from the gradient w.r.t. the fused ego set of
    /// the last [`FusionTape::forward`] call.
    pub fn backward_fusion(&self, params: &FusionParams, d_fused: &[GaussianGrad]) -> Result<FusionParams> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward_fusion called before a recorded forward pass".into()))?;
        trace.backward(params, d_fused)
    }
}
