//! Proposals produced by the pairwise network, the output activations that
//! map raw network outputs onto valid Gaussian attributes, and pooling.

use serde::Serialize;

use crate::classes::NUM_CLASSES;
use crate::error::Result;
use crate::fusion::features::{EgoFeatures, PairFeatures, RelFeatures};
use crate::fusion::network::{FusionParams, Tensor, PROJ_DIM};
use crate::fusion::Pooling;
use crate::gaussian::Semantics;

pub const PROPOSAL_DIM: usize = 3 + 3 + 4 + 1 + NUM_CLASSES;
pub type RawProposal = [f64; PROPOSAL_DIM];

/// Added to the softplus scale output so proposed scales stay positive.
pub const SCALE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proposal {
    pub delta_mean: [f64; 3],
    pub scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`, not sign-canonicalized.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub semantics: Semantics,
}

impl Proposal {
    pub fn zero() -> Self {
        Proposal {
            delta_mean: [0.0; 3],
            scale: [0.0; 3],
            rotation: [0.0; 4],
            opacity: 0.0,
            semantics: [0.0; NUM_CLASSES],
        }
    }

    /// Output activations applied to a raw 24-vector.
    pub fn from_raw(raw: &RawProposal) -> Self {
        let mut p = Proposal::zero();
        p.delta_mean.copy_from_slice(&raw[0..3]);
        for i in 0..3 {
            p.scale[i] = softplus(raw[3 + i]) + SCALE_FLOOR;
        }
        p.rotation = normalize4(&offset_quat(raw));
        p.opacity = sigmoid(raw[10]);
        for k in 0..NUM_CLASSES {
            p.semantics[k] = softplus(raw[11 + k]);
        }
        p
    }

    /// Pulls `grad` (w.r.t. the activated fields) back to the raw outputs.
    pub fn raw_gradient(raw: &RawProposal, grad: &Proposal) -> RawProposal {
        let mut d = [0.0; PROPOSAL_DIM];
        d[0..3].copy_from_slice(&grad.delta_mean);
        for i in 0..3 {
            d[3 + i] = grad.scale[i] * sigmoid(raw[3 + i]);
        }
        let v = offset_quat(raw);
        let n = norm4(&v);
        if n > 0.0 {
            let r = v.map(|x| x / n);
            let dot: f64 = (0..4).map(|i| r[i] * grad.rotation[i]).sum();
            for i in 0..4 {
                d[6 + i] = (grad.rotation[i] - r[i] * dot) / n;
            }
        }
        let a = sigmoid(raw[10]);
        d[10] = grad.opacity * a * (1.0 - a);
        for k in 0..NUM_CLASSES {
            d[11 + k] = grad.semantics[k] * sigmoid(raw[11 + k]);
        }
        d
    }

    fn add_scaled(&mut self, w: f64, other: &Proposal) {
        for i in 0..3 {
            self.delta_mean[i] += w * other.delta_mean[i];
            self.scale[i] += w * other.scale[i];
        }
        for i in 0..4 {
            self.rotation[i] += w * other.rotation[i];
        }
        self.opacity += w * other.opacity;
        for k in 0..NUM_CLASSES {
            self.semantics[k] += w * other.semantics[k];
        }
    }

    /// Inner product over all fields except rotation.
    fn dot_linear(&self, other: &Proposal) -> f64 {
        let mut s = self.opacity * other.opacity;
        for i in 0..3 {
            s += self.delta_mean[i] * other.delta_mean[i] + self.scale[i] * other.scale[i];
        }
        for k in 0..NUM_CLASSES {
            s += self.semantics[k] * other.semantics[k];
        }
        s
    }
}

/// Single-pair forward pass of the proposal network.
pub fn propose(z: &PairFeatures, params: &FusionParams) -> Result<Proposal> {
    params.validate()?;
    let input = ndarray::Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
    let tape = params.mlp_forward(input);
    let raw: RawProposal = tape.out.row(0).to_vec().try_into().expect("24 outputs");
    Ok(Proposal::from_raw(&raw))
}

/// Pooled proposal plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Pooled {
    pub proposal: Proposal,
    /// Per-proposal sign applied to align its rotation with the first one.
    pub signs: Vec<f64>,
    /// Sign-aligned weighted rotation sum before normalization.
    pub rotation_sum: [f64; 4],
}

/// Weighted average of `proposals`; rotations are sign-aligned to the first
/// proposal, summed and renormalized. Returns `None` for an empty list.
pub fn pool(proposals: &[Proposal], weights: &[f64]) -> Option<Pooled> {
    assert_eq!(proposals.len(), weights.len());
    let first = proposals.first()?;
    let mut out = Proposal::zero();
    let mut signs = Vec::with_capacity(proposals.len());
    for (p, &w) in proposals.iter().zip(weights) {
        let s = if dot4(&p.rotation, &first.rotation) < 0.0 {
            -1.0
        } else {
            1.0
        };
        signs.push(s);
        out.add_scaled(w, &Proposal {
            rotation: p.rotation.map(|x| s * x),
            ..*p
        });
    }
    let rotation_sum = out.rotation;
    out.rotation = normalize4(&rotation_sum);
    Some(Pooled {
        proposal: out,
        signs,
        rotation_sum,
    })
}

/// Gradients of [`pool`] w.r.t. each proposal and each weight, given the
/// gradient `d_pooled` w.r.t. the pooled proposal.
pub fn pool_backward(
    proposals: &[Proposal],
    weights: &[f64],
    pooled: &Pooled,
    d_pooled: &Proposal,
) -> (Vec<Proposal>, Vec<f64>) {
    let v = pooled.rotation_sum;
    let n = norm4(&v);
    let mut dv = [0.0; 4];
    if n > 0.0 {
        let r = v.map(|x| x / n);
        let dot = dot4(&r, &d_pooled.rotation);
        for i in 0..4 {
            dv[i] = (d_pooled.rotation[i] - r[i] * dot) / n;
        }
    }
    let mut d_props = Vec::with_capacity(proposals.len());
    let mut d_weights = Vec::with_capacity(proposals.len());
    for ((p, &w), &s) in proposals.iter().zip(weights).zip(&pooled.signs) {
        let mut d = Proposal::zero();
        d.add_scaled(w, d_pooled);
        d.rotation = dv.map(|x| w * s * x);
        d_props.push(d);
        d_weights.push(d_pooled.dot_linear(p) + s * dot4(&dv, &p.rotation));
    }
    (d_props, d_weights)
}

/// Pooling weights for one neighbourhood.
pub fn pooling_weights(
    mode: Pooling,
    ego: &EgoFeatures,
    rel: &[RelFeatures],
    params: &FusionParams,
) -> Vec<f64> {
    match mode {
        Pooling::Mean => vec![1.0 / rel.len() as f64; rel.len()],
        Pooling::Attention => {
            let q = query(ego, params);
            let logits: Vec<f64> = rel.iter().map(|f| attention_logit(&q, f, params)).collect();
            softmax(&logits)
        }
    }
}

/// `Q f_ego`.
pub fn query(ego: &EgoFeatures, params: &FusionParams) -> [f64; PROJ_DIM] {
    let qm = params.matrix(Tensor::Q);
    let mut q = [0.0; PROJ_DIM];
    for (i, row) in qm.rows().into_iter().enumerate() {
        q[i] = row.iter().zip(ego.iter()).map(|(a, b)| a * b).sum();
    }
    q
}

/// `<q, K f_rel> / sqrt(d)`.
pub fn attention_logit(q: &[f64; PROJ_DIM], rel: &RelFeatures, params: &FusionParams) -> f64 {
    let km = params.matrix(Tensor::K);
    let mut s = 0.0;
    for (i, row) in km.rows().into_iter().enumerate() {
        let key: f64 = row.iter().zip(rel.iter()).map(|(a, b)| a * b).sum();
        s += q[i] * key;
    }
    s / (PROJ_DIM as f64).sqrt()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn offset_quat(raw: &RawProposal) -> [f64; 4] {
    [raw[6] + 1.0, raw[7], raw[8], raw[9]]
}

pub(crate) fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub(crate) fn norm4(a: &[f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

/// Falls back to the identity for a zero vector.
pub(crate) fn normalize4(a: &[f64; 4]) -> [f64; 4] {
    let n = norm4(a);
    if n > 0.0 {
        a.map(|x| x / n)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    }
}
