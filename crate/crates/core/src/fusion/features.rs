//! Pairwise feature assembly for an ego primitive and one neighbour.

use crate::classes::NUM_CLASSES;
use crate::gaussian::SemanticGaussian;

pub const EGO_DIM: usize = 3 + 3 + 4 + 1 + NUM_CLASSES;
pub const REL_DIM: usize = 3 + 3 + 1 + 1 + NUM_CLASSES;
pub const PAIR_DIM: usize = EGO_DIM + REL_DIM;

pub type EgoFeatures = [f64; EGO_DIM];
pub type RelFeatures = [f64; REL_DIM];
pub type PairFeatures = [f64; PAIR_DIM];

/// `[m, s, r, a, c]` with `r` in canonical sign.
pub fn ego_features(g: &SemanticGaussian) -> EgoFeatures {
    let r = g.rotation.scaled(g.rotation.canonical_sign());
    let mut f = [0.0; EGO_DIM];
    f[0..3].copy_from_slice(g.mean.as_slice());
    f[3..6].copy_from_slice(g.scale.as_slice());
    f[6..10].copy_from_slice(&r.to_array());
    f[10] = g.opacity;
    f[11..].copy_from_slice(&g.semantics);
    f
}

/// `[m_j - m_k, s_j - s_k, |<r_j, r_k>|, a_j, c_j]`.
pub fn relative_features(ego: &SemanticGaussian, neighbor: &SemanticGaussian) -> RelFeatures {
    let mut f = [0.0; REL_DIM];
    let dm = neighbor.mean - ego.mean;
    let ds = neighbor.scale - ego.scale;
    f[0..3].copy_from_slice(dm.as_slice());
    f[3..6].copy_from_slice(ds.as_slice());
    f[6] = neighbor.rotation.dot(ego.rotation).abs().min(1.0);
    f[7] = neighbor.opacity;
    f[8..].copy_from_slice(&neighbor.semantics);
    f
}

pub fn pairwise_features(ego: &SemanticGaussian, neighbor: &SemanticGaussian) -> PairFeatures {
    let mut z = [0.0; PAIR_DIM];
    z[..EGO_DIM].copy_from_slice(&ego_features(ego));
    z[EGO_DIM..].copy_from_slice(&relative_features(ego, neighbor));
    z
}
