//! Calibration used by the naive mode: a per-class affine map applied to
//! the semantic weights of received primitives before stacking.

use serde::{Deserialize, Serialize};

use crate::classes::NUM_SEMANTIC;
use crate::error::{Error, Result};
use crate::fusion::GaussianGrad;
use crate::gaussian::SemanticGaussian;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::identity()
    }
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration {
            gain: vec![1.0; NUM_SEMANTIC],
            bias: vec![0.0; NUM_SEMANTIC],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain.len() != NUM_SEMANTIC || self.bias.len() != NUM_SEMANTIC {
            return Err(Error::InvalidParams(format!(
                "calibration needs {NUM_SEMANTIC} gains and biases"
            )));
        }
        if !self.gain.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("non-finite calibration value".into()));
        }
        Ok(())
    }

    /// `c_k -> max(0, gain_k c_k + bias_k)` on the semantic classes; the
    /// empty channel is left alone.
    pub fn apply(&self, g: &SemanticGaussian) -> SemanticGaussian {
        let mut out = g.clone();
        for k in 0..NUM_SEMANTIC {
            out.semantics[k] = (self.gain[k] * g.semantics[k] + self.bias[k]).max(0.0);
        }
        out
    }

    /// Gradients w.r.t. `(gain, bias)` from gradients w.r.t. the calibrated
    /// primitives.
    pub fn backward(&self, inputs: &[SemanticGaussian], d_out: &[GaussianGrad]) -> (Vec<f64>, Vec<f64>) {
        let mut d_gain = vec![0.0; NUM_SEMANTIC];
        let mut d_bias = vec![0.0; NUM_SEMANTIC];
        for (g, d) in inputs.iter().zip(d_out) {
            for k in 0..NUM_SEMANTIC {
                if self.gain[k] * g.semantics[k] + self.bias[k] > 0.0 {
                    d_gain[k] += d.semantics[k] * g.semantics[k];
                    d_bias[k] += d.semantics[k];
                }
            }
        }
        (d_gain, d_bias)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Encode(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Calibration = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::one_hot;
    use crate::geometry::{Quat, Vec3};

    #[test]
    fn identity_is_a_no_op() {
        let g = SemanticGaussian::new(Vec3::zeros(), Vec3::repeat(0.3), Quat::IDENTITY, 0.5, one_hot(3, 1.5))
            .unwrap();
        assert_eq!(Calibration::identity().apply(&g), g);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Calibration::identity();
        c.gain[2] = 0.75;
        c.bias[5] = -0.125;
        assert_eq!(Calibration::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
