//! Cross-agent fusion: each ego primitive gathers received primitives within
//! radius ρ, the pairwise network proposes a refined primitive per
//! neighbour, proposals are pooled (mean or attention) and the ego
//! primitive is updated from the pooled proposal.

pub mod features;
pub mod index;
pub mod network;
pub mod proposal;
pub mod update;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SemanticGaussian;

pub use features::{pairwise_features, EGO_DIM, PAIR_DIM, REL_DIM};
pub use index::HashGrid;
pub use network::{FusionParams, InitPriors, MlpTape, Tensor, NUM_PARAMS};
pub use proposal::{pool, pooling_weights, propose, Pooled, Proposal};
pub use update::{blend_weight, confidence, update_ego, GaussianGrad};

use network::PROJ_DIM;
use proposal::{RawProposal, PROPOSAL_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    #[default]
    Attention,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "attention" => Ok(Pooling::Attention),
            other => Err(Error::InvalidArgument(format!("unknown pooling mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub radius_rho: f64,
    pub pooling: Pooling,
    pub epsilon: f64,
    pub max_neighbors: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            radius_rho: 0.4,
            pooling: Pooling::Attention,
            epsilon: 1e-8,
            max_neighbors: 64,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_rho > 0.0 && self.radius_rho.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius_rho must be > 0, got {}",
                self.radius_rho
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_neighbors == 0 {
            return Err(Error::InvalidArgument("max_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Indices of received primitives within `rho` of `ego`, nearest first and
/// truncated to `max_neighbors`.
pub fn neighborhood(ego: &SemanticGaussian, index: &HashGrid, rho: f64, max_neighbors: usize) -> Vec<usize> {
    let mut hits = index.within(&ego.mean, rho);
    hits.truncate(max_neighbors);
    hits.into_iter().map(|(_, i)| i as usize).collect()
}

/// Fuses `received` (already in the ego frame) into `ego`.
pub fn fuse_scene(
    ego: &[SemanticGaussian],
    received: &[SemanticGaussian],
    cfg: &FusionConfig,
    params: &FusionParams,
) -> Result<Vec<SemanticGaussian>> {
    run(ego, received, cfg, params, false).map(|(out, _)| out)
}

/// [`fuse_scene`] that also records what the backward pass needs.
pub fn fuse_scene_traced(
    ego: &[SemanticGaussian],
    received: &[SemanticGaussian],
    cfg: &FusionConfig,
    params: &FusionParams,
) -> Result<(Vec<SemanticGaussian>, FusionTrace)> {
    run(ego, received, cfg, params, true)
}

/// Rows per batched network evaluation.
const CHUNK_PAIRS: usize = 2048;

#[derive(Clone, Debug)]
struct Group {
    ego: usize,
    start: usize,
    len: usize,
}

#[derive(Clone, Debug)]
struct ChunkTrace {
    groups: Vec<Group>,
    tape: MlpTape,
    proposals: Vec<Proposal>,
    weights: Vec<f64>,
    pooled: Vec<Pooled>,
}

/// Forward record of one [`fuse_scene_traced`] call.
#[derive(Clone, Debug)]
pub struct FusionTrace {
    cfg: FusionConfig,
    ego: Vec<SemanticGaussian>,
    chunks: Vec<ChunkTrace>,
}

impl FusionTrace {
    /// Number of ego primitives that had a non-empty neighbourhood.
    pub fn fused_count(&self) -> usize {
        self.chunks.iter().map(|c| c.groups.len()).sum()
    }

    pub fn pair_count(&self) -> usize {
        self.chunks.iter().map(|c| c.proposals.len()).sum()
    }

    /// Gradient w.r.t. `params` given the gradient w.r.t. every fused ego
    /// primitive (same order as the forward output).
    pub fn backward(&self, params: &FusionParams, d_fused: &[GaussianGrad]) -> Result<FusionParams> {
        if d_fused.len() != self.ego.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} Gaussian gradients, got {}",
                self.ego.len(),
                d_fused.len()
            )));
        }
        let mut grads = FusionParams::zeros();
        let inv_sqrt_d = 1.0 / (PROJ_DIM as f64).sqrt();
        for chunk in &self.chunks {
            let rows = chunk.proposals.len();
            let mut d_out = Array2::<f64>::zeros((rows, PROPOSAL_DIM));
            for (gi, group) in chunk.groups.iter().enumerate() {
                let d_g = &d_fused[group.ego];
                if d_g.is_zero() {
                    continue;
                }
                let range = group.start..group.start + group.len;
                let pooled = &chunk.pooled[gi];
                let d_pooled = update::update_ego_backward(
                    &self.ego[group.ego],
                    &pooled.proposal,
                    self.cfg.epsilon,
                    d_g,
                );
                let props = &chunk.proposals[range.clone()];
                let weights = &chunk.weights[range.clone()];
                let (d_props, d_weights) = proposal::pool_backward(props, weights, pooled, &d_pooled);
                for (j, d_p) in d_props.iter().enumerate() {
                    let row = group.start + j;
                    let raw: RawProposal = chunk.tape.out.row(row).to_vec().try_into().unwrap();
                    let d_raw = Proposal::raw_gradient(&raw, d_p);
                    d_out.row_mut(row).assign(&ndarray::ArrayView1::from(&d_raw[..]));
                }
                if self.cfg.pooling == Pooling::Attention {
                    let inner: f64 = weights.iter().zip(&d_weights).map(|(w, d)| w * d).sum();
                    let input = &chunk.tape.input;
                    let ego_feat: Vec<f64> = input.row(group.start).iter().take(EGO_DIM).copied().collect();
                    let ego_arr: [f64; EGO_DIM] = ego_feat.try_into().unwrap();
                    let q = proposal::query(&ego_arr, params);
                    let km = params.matrix(Tensor::K);
                    let mut dq = [0.0; PROJ_DIM];
                    let mut d_k = Array2::<f64>::zeros((PROJ_DIM, REL_DIM));
                    for j in 0..group.len {
                        let dlogit = weights[j] * (d_weights[j] - inner) * inv_sqrt_d;
                        if dlogit == 0.0 {
                            continue;
                        }
                        let rel = input.row(group.start + j);
                        let rel = rel.slice(ndarray::s![EGO_DIM..]);
                        let key = km.dot(&rel);
                        for a in 0..PROJ_DIM {
                            dq[a] += dlogit * key[a];
                            for b in 0..REL_DIM {
                                d_k[(a, b)] += dlogit * q[a] * rel[b];
                            }
                        }
                    }
                    let mut gk = grads.matrix_mut(Tensor::K);
                    gk += &d_k;
                    let mut gq = grads.matrix_mut(Tensor::Q);
                    for a in 0..PROJ_DIM {
                        for b in 0..EGO_DIM {
                            gq[(a, b)] += dq[a] * ego_arr[b];
                        }
                    }
                }
            }
            params.mlp_backward(&chunk.tape, &d_out, &mut grads);
        }
        Ok(grads)
    }
}

fn run(
    ego: &[SemanticGaussian],
    received: &[SemanticGaussian],
    cfg: &FusionConfig,
    params: &FusionParams,
    record: bool,
) -> Result<(Vec<SemanticGaussian>, FusionTrace)> {
    cfg.validate()?;
    params.validate()?;
    let mut out = ego.to_vec();
    let mut trace = FusionTrace {
        cfg: *cfg,
        ego: if record { ego.to_vec() } else { Vec::new() },
        chunks: Vec::new(),
    };
    if received.is_empty() || ego.is_empty() {
        return Ok((out, trace));
    }
    let index = HashGrid::build(received.iter().map(|g| g.mean), cfg.radius_rho);
    let neighbours: Vec<Vec<usize>> = ego
        .iter()
        .map(|g| neighborhood(g, &index, cfg.radius_rho, cfg.max_neighbors))
        .collect();

    let mut k = 0;
    while k < ego.len() {
        let mut groups = Vec::new();
        let mut rows = 0;
        while k < ego.len() && (rows == 0 || rows + neighbours[k].len() <= CHUNK_PAIRS) {
            if !neighbours[k].is_empty() {
                groups.push(Group {
                    ego: k,
                    start: rows,
                    len: neighbours[k].len(),
                });
                rows += neighbours[k].len();
            }
            k += 1;
        }
        if rows == 0 {
            continue;
        }
        let mut input = Array2::<f64>::zeros((rows, PAIR_DIM));
        for g in &groups {
            for (j, &n) in neighbours[g.ego].iter().enumerate() {
                let z = pairwise_features(&ego[g.ego], &received[n]);
                input
                    .row_mut(g.start + j)
                    .assign(&ndarray::ArrayView1::from(&z[..]));
            }
        }
        let tape = params.mlp_forward(input);
        let proposals: Vec<Proposal> = tape
            .out
            .rows()
            .into_iter()
            .map(|r| {
                let raw: RawProposal = r.to_vec().try_into().expect("24 outputs");
                Proposal::from_raw(&raw)
            })
            .collect();
        let mut weights = Vec::with_capacity(rows);
        let mut pooled_all = Vec::with_capacity(groups.len());
        for g in &groups {
            let zrows = tape.input.slice(ndarray::s![g.start..g.start + g.len, ..]);
            let mut ego_feat = [0.0; EGO_DIM];
            for (d, s) in ego_feat.iter_mut().zip(zrows.row(0).iter()) {
                *d = *s;
            }
            let rel: Vec<[f64; REL_DIM]> = zrows
                .rows()
                .into_iter()
                .map(|r| {
                    let mut f = [0.0; REL_DIM];
                    for (d, s) in f.iter_mut().zip(r.iter().skip(EGO_DIM)) {
                        *d = *s;
                    }
                    f
                })
                .collect();
            let w = pooling_weights(cfg.pooling, &ego_feat, &rel, params);
            let pooled = pool(&proposals[g.start..g.start + g.len], &w).expect("non-empty group");
            out[g.ego] = update_ego(&ego[g.ego], &pooled.proposal, cfg.epsilon)?;
            weights.extend(w);
            pooled_all.push(pooled);
        }
        if record {
            trace.chunks.push(ChunkTrace {
                groups,
                tape,
                proposals,
                weights,
                pooled: pooled_all,
            });
        }
    }
    Ok((out, trace))
}
