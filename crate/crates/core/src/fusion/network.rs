//! Learned state of the fusion module: the pairwise proposal MLP
//! (45 -> 128 -> 128 -> 24, ReLU) and the attention projections, plus the
//! FPRM parameter file format.
//!
//! All tensors live in one flat buffer so optimizers can treat the parameter
//! set as a single vector. Tensor order (also the FPRM order): layer-1 W and
//! b, layer-2 W and b, output W and b, Q, K. Weights are `out x in`
//! row-major; biases are stored as `n x 1`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DecodeError, Error, Result};
use crate::fusion::features::{EGO_DIM, PAIR_DIM, REL_DIM};
use crate::fusion::proposal::PROPOSAL_DIM;

pub const HIDDEN: usize = 128;
pub const PROJ_DIM: usize = 32;

pub const FPRM_MAGIC: [u8; 4] = *b"FPRM";
pub const FPRM_VERSION: u32 = 1;
/// Number of MLP layers recorded in the FPRM header.
pub const MLP_LAYERS: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    /// Number of scalars.
    pub const fn size(&self) -> usize {
        self.rows * self.cols
    }
}

pub const TENSORS: [TensorSpec; 8] = [
    TensorSpec { name: "layer1.weight", rows: HIDDEN, cols: PAIR_DIM },
    TensorSpec { name: "layer1.bias", rows: HIDDEN, cols: 1 },
    TensorSpec { name: "layer2.weight", rows: HIDDEN, cols: HIDDEN },
    TensorSpec { name: "layer2.bias", rows: HIDDEN, cols: 1 },
    TensorSpec { name: "out.weight", rows: PROPOSAL_DIM, cols: HIDDEN },
    TensorSpec { name: "out.bias", rows: PROPOSAL_DIM, cols: 1 },
    TensorSpec { name: "attn.q", rows: PROJ_DIM, cols: EGO_DIM },
    TensorSpec { name: "attn.k", rows: PROJ_DIM, cols: REL_DIM },
];

const fn offsets() -> [usize; 9] {
    let mut o = [0usize; 9];
    let mut i = 0;
    while i < 8 {
        o[i + 1] = o[i] + TENSORS[i].size();
        i += 1;
    }
    o
}

const OFFSETS: [usize; 9] = offsets();
pub const NUM_PARAMS: usize = OFFSETS[8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    W1 = 0,
    B1 = 1,
    W2 = 2,
    B2 = 3,
    W3 = 4,
    B3 = 5,
    Q = 6,
    K = 7,
}

/// Output-bias priors used by [`FusionParams::init`]: at initialization
/// every proposal is close to a primitive with these attributes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitPriors {
    pub scale: f64,
    pub opacity: f64,
    pub semantics: f64,
    /// Std of the output layer weights.
    pub out_weight_std: f64,
    /// Std of the attention projections.
    pub attention_std: f64,
}

impl Default for InitPriors {
    fn default() -> Self {
        InitPriors {
            scale: 0.25,
            opacity: 0.8,
            semantics: 0.05,
            out_weight_std: 1e-3,
            attention_std: 0.05,
        }
    }
}

/// Fusion weights, or a gradient with the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    data: Vec<f64>,
}

impl FusionParams {
    pub fn zeros() -> Self {
        FusionParams {
            data: vec![0.0; NUM_PARAMS],
        }
    }

    /// He-initialized hidden layers; near-zero output weights with biases
    /// set from `priors`, so the initial proposals are nearly constant.
    pub fn init(seed: u64) -> Self {
        Self::init_with(seed, &InitPriors::default())
    }

    pub fn init_with(seed: u64, priors: &InitPriors) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = FusionParams::zeros();
        let fill = |p: &mut FusionParams, t: Tensor, std: f64, rng: &mut ChaCha8Rng| {
            let n = Normal::new(0.0, std).expect("finite std");
            for v in p.tensor_mut(t) {
                // stored at f32 precision so FPRM files round-trip exactly
                *v = n.sample(rng) as f32 as f64;
            }
        };
        fill(&mut p, Tensor::W1, (2.0 / PAIR_DIM as f64).sqrt(), &mut rng);
        fill(&mut p, Tensor::W2, (2.0 / HIDDEN as f64).sqrt(), &mut rng);
        fill(&mut p, Tensor::W3, priors.out_weight_std, &mut rng);
        fill(&mut p, Tensor::Q, priors.attention_std, &mut rng);
        fill(&mut p, Tensor::K, priors.attention_std, &mut rng);
        // absolute ego position is in metres over a +-20 m range; damp it
        {
            let mut w1 = p.matrix_mut(Tensor::W1);
            for mut row in w1.rows_mut() {
                for c in 0..3 {
                    row[c] = (row[c] * 0.05) as f32 as f64;
                }
            }
        }
        let b3 = p.tensor_mut(Tensor::B3);
        let scale_raw = inverse_softplus(priors.scale - super::proposal::SCALE_FLOOR);
        let opacity_raw = (priors.opacity / (1.0 - priors.opacity)).ln();
        let sem_raw = inverse_softplus(priors.semantics);
        for (i, v) in b3.iter_mut().enumerate() {
            *v = match i {
                3..=5 => scale_raw,
                10 => opacity_raw,
                11.. => sem_raw,
                _ => 0.0,
            } as f32 as f64;
        }
        p
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        let i = t as usize;
        &self.data[OFFSETS[i]..OFFSETS[i + 1]]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let i = t as usize;
        &mut self.data[OFFSETS[i]..OFFSETS[i + 1]]
    }

    pub fn matrix(&self, t: Tensor) -> ArrayView2<'_, f64> {
        let s = TENSORS[t as usize];
        ArrayView2::from_shape((s.rows, s.cols), self.tensor(t)).expect("tensor shape")
    }

    pub fn matrix_mut(&mut self, t: Tensor) -> ArrayViewMut2<'_, f64> {
        let s = TENSORS[t as usize];
        ArrayViewMut2::from_shape((s.rows, s.cols), self.tensor_mut(t)).expect("tensor shape")
    }

    pub fn vector(&self, t: Tensor) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.tensor(t))
    }

    pub fn vector_mut(&mut self, t: Tensor) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.tensor_mut(t))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != NUM_PARAMS {
            return Err(Error::InvalidParams(format!(
                "expected {NUM_PARAMS} values, got {}",
                self.data.len()
            )));
        }
        for (i, spec) in TENSORS.iter().enumerate() {
            if let Some(pos) = self.data[OFFSETS[i]..OFFSETS[i + 1]]
                .iter()
                .position(|v| !v.is_finite())
            {
                return Err(Error::InvalidParams(format!(
                    "non-finite value in {} at {pos}",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &FusionParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Batched MLP forward pass over the rows of `input` (`n x 45`).
    pub fn mlp_forward(&self, input: Array2<f64>) -> MlpTape {
        let pre1 = affine(&input, self.matrix(Tensor::W1), self.vector(Tensor::B1));
        let h1 = pre1.mapv(relu);
        let pre2 = affine(&h1, self.matrix(Tensor::W2), self.vector(Tensor::B2));
        let h2 = pre2.mapv(relu);
        let out = affine(&h2, self.matrix(Tensor::W3), self.vector(Tensor::B3));
        MlpTape {
            input,
            pre1,
            pre2,
            out,
        }
    }

    /// Accumulates parameter gradients for upstream `d_out` (`n x 24`) into
    /// `grads`.
    pub fn mlp_backward(&self, tape: &MlpTape, d_out: &Array2<f64>, grads: &mut FusionParams) {
        let h2 = tape.pre2.mapv(relu);
        let h1 = tape.pre1.mapv(relu);

        accumulate(grads.matrix_mut(Tensor::W3), &d_out.t().dot(&h2));
        grads.vector_mut(Tensor::B3).scaled_add(1.0, &d_out.sum_axis(Axis(0)));

        let mut d_pre2 = d_out.dot(&self.matrix(Tensor::W3));
        d_pre2.zip_mut_with(&tape.pre2, |d, p| {
            if *p <= 0.0 {
                *d = 0.0
            }
        });
        accumulate(grads.matrix_mut(Tensor::W2), &d_pre2.t().dot(&h1));
        grads.vector_mut(Tensor::B2).scaled_add(1.0, &d_pre2.sum_axis(Axis(0)));

        let mut d_pre1 = d_pre2.dot(&self.matrix(Tensor::W2));
        d_pre1.zip_mut_with(&tape.pre1, |d, p| {
            if *p <= 0.0 {
                *d = 0.0
            }
        });
        accumulate(grads.matrix_mut(Tensor::W1), &d_pre1.t().dot(&tape.input));
        grads.vector_mut(Tensor::B1).scaled_add(1.0, &d_pre1.sum_axis(Axis(0)));
    }

    pub fn to_fprm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * TENSORS.len() + 4 * NUM_PARAMS);
        out.extend_from_slice(&FPRM_MAGIC);
        out.extend_from_slice(&FPRM_VERSION.to_le_bytes());
        out.extend_from_slice(&MLP_LAYERS.to_le_bytes());
        for (i, spec) in TENSORS.iter().enumerate() {
            out.extend_from_slice(&(spec.rows as u32).to_le_bytes());
            out.extend_from_slice(&(spec.cols as u32).to_le_bytes());
            for v in &self.data[OFFSETS[i]..OFFSETS[i + 1]] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_fprm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cursor.take(4)?.try_into().unwrap();
        if magic != FPRM_MAGIC {
            return Err(DecodeError::BadMagic {
                expected: FPRM_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = cursor.u32()?;
        if version != FPRM_VERSION {
            return Err(DecodeError::VersionMismatch {
                expected: FPRM_VERSION,
                found: version,
            }
            .into());
        }
        let layers = cursor.u32()?;
        if layers != MLP_LAYERS {
            return Err(DecodeError::InvalidField {
                field: "layer_count",
                detail: format!("expected {MLP_LAYERS}, found {layers}"),
            }
            .into());
        }
        let mut p = FusionParams::zeros();
        for (i, spec) in TENSORS.iter().enumerate() {
            let rows = cursor.u32()? as usize;
            let cols = cursor.u32()? as usize;
            if (rows, cols) != (spec.rows, spec.cols) {
                return Err(DecodeError::InvalidField {
                    field: spec.name,
                    detail: format!(
                        "shape {rows}x{cols}, expected {}x{}",
                        spec.rows, spec.cols
                    ),
                }
                .into());
            }
            let raw = cursor.take(spec.size() * 4)?;
            for (j, (dst, b)) in p.data[OFFSETS[i]..OFFSETS[i + 1]]
                .iter_mut()
                .zip(raw.chunks_exact(4))
                .enumerate()
            {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                if !v.is_finite() {
                    return Err(DecodeError::NonFinite {
                        field: spec.name,
                        record: j,
                    }
                    .into());
                }
                *dst = v as f64;
            }
        }
        if cursor.pos != bytes.len() {
            return Err(DecodeError::TrailingBytes(bytes.len() - cursor.pos).into());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_fprm_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_fprm_bytes(&std::fs::read(path)?)
    }
}

/// Intermediate values of a batched MLP pass needed for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpTape {
    pub input: Array2<f64>,
    pub pre1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub out: Array2<f64>,
}

fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

fn accumulate(mut dst: ArrayViewMut2<'_, f64>, src: &Array2<f64>) {
    dst += src;
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(DecodeError::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        assert_eq!(
            NUM_PARAMS,
            128 * 45 + 128 + 128 * 128 + 128 + 24 * 128 + 24 + 32 * 24 + 32 * 21
        );
    }

    #[test]
    fn fprm_round_trip_is_exact_for_initialized_params() {
        let p = FusionParams::init(3);
        let bytes = p.to_fprm_bytes();
        assert_eq!(bytes.len(), 12 + 8 * 8 + 4 * NUM_PARAMS);
        assert_eq!(FusionParams::from_fprm_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn fprm_decode_errors() {
        let bytes = FusionParams::zeros().to_fprm_bytes();
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(
            FusionParams::from_fprm_bytes(&bad),
            Err(Error::Decode(DecodeError::BadMagic { .. }))
        ));
        assert!(matches!(
            FusionParams::from_fprm_bytes(&bytes[..100]),
            Err(Error::Decode(DecodeError::Truncated { .. }))
        ));
        let mut bad = bytes.clone();
        bad[16] = 7; // rows of the first tensor
        assert!(matches!(
            FusionParams::from_fprm_bytes(&bad),
            Err(Error::Decode(DecodeError::InvalidField { .. }))
        ));
    }

    #[test]
    fn non_finite_params_are_invalid() {
        let mut p = FusionParams::zeros();
        p.tensor_mut(Tensor::K)[5] = f64::NAN;
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(FusionParams::init(11), FusionParams::init(11));
        assert_ne!(FusionParams::init(11), FusionParams::init(12));
    }
}
