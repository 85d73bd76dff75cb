//! Ego update rules: residual mean, replaced scale/rotation/opacity, and the
//! confidence-weighted semantic blend.

use crate::classes::{argmax, NUM_CLASSES};
use crate::error::Result;
use crate::fusion::proposal::Proposal;
use crate::gaussian::{SemanticGaussian, Semantics};
use crate::geometry::{Quat, Vec3};

/// Gradient of a scalar w.r.t. the attributes of one Gaussian. The rotation
/// entry is w.r.t. the stored quaternion components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub semantics: Semantics,
}

impl GaussianGrad {
    pub fn is_zero(&self) -> bool {
        self.mean.iter().all(|v| *v == 0.0)
            && self.scale.iter().all(|v| *v == 0.0)
            && self.rotation.iter().all(|v| *v == 0.0)
            && self.opacity == 0.0
            && self.semantics.iter().all(|v| *v == 0.0)
    }
}

/// `max(v / (1^T v + eps))`.
pub fn confidence(v: &[f64], epsilon: f64) -> f64 {
    let total: f64 = v.iter().sum();
    v[argmax(v)] / (total + epsilon)
}

/// Weight of the ego semantics in the blend.
pub fn blend_weight(ego: &[f64], pooled: &[f64], epsilon: f64) -> f64 {
    let a = confidence(ego, epsilon);
    let b = confidence(pooled, epsilon);
    if a + b > 0.0 {
        a / (a + b)
    } else {
        0.5
    }
}

pub fn update_ego(ego: &SemanticGaussian, pooled: &Proposal, epsilon: f64) -> Result<SemanticGaussian> {
    let dm = Vec3::from(pooled.delta_mean);
    let r = Quat::from_array(pooled.rotation);
    let alpha = blend_weight(&ego.semantics, &pooled.semantics, epsilon);
    let mut c = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        c[k] = alpha * ego.semantics[k] + (1.0 - alpha) * pooled.semantics[k];
    }
    SemanticGaussian::new(
        ego.mean + dm,
        Vec3::from(pooled.scale),
        r.scaled(r.canonical_sign()),
        pooled.opacity,
        c,
    )
}

/// Gradient w.r.t. the pooled proposal given the gradient w.r.t. the output
/// of [`update_ego`].
pub fn update_ego_backward(
    ego: &SemanticGaussian,
    pooled: &Proposal,
    epsilon: f64,
    d_out: &GaussianGrad,
) -> Proposal {
    let sign = Quat::from_array(pooled.rotation).canonical_sign();
    let mut d = Proposal::zero();
    d.delta_mean = d_out.mean;
    d.scale = d_out.scale;
    d.rotation = d_out.rotation.map(|x| sign * x);
    d.opacity = d_out.opacity;

    let c = &ego.semantics;
    let cb = &pooled.semantics;
    let a = confidence(c, epsilon);
    let b = confidence(cb, epsilon);
    let alpha = if a + b > 0.0 { a / (a + b) } else { 0.5 };
    let mut d_alpha = 0.0;
    for k in 0..NUM_CLASSES {
        d.semantics[k] = (1.0 - alpha) * d_out.semantics[k];
        d_alpha += d_out.semantics[k] * (c[k] - cb[k]);
    }
    if a + b > 0.0 {
        let d_b = -d_alpha * a / ((a + b) * (a + b));
        let total: f64 = cb.iter().sum::<f64>() + epsilon;
        let top = argmax(cb);
        for k in 0..NUM_CLASSES {
            d.semantics[k] -= d_b * cb[top] / (total * total);
        }
        d.semantics[top] += d_b / total;
    }
    d
}
