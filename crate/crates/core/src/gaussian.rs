//! The semantic Gaussian primitive.

use nalgebra::Cholesky;

use crate::classes::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Quat, Vec3};

/// Per-class evidence weights carried by a primitive.
pub type Semantics = [f64; NUM_CLASSES];

/// Covariance condition numbers above this are rejected as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

const CHOLESKY_JITTER: f64 = 1e-12;

/// One anisotropic 3D Gaussian with opacity and per-class semantic weights.
///
/// `scale` holds per-axis standard deviations in the rotated frame, so the
/// covariance is `R diag(s)^2 R^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGaussian {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
    pub semantics: Semantics,
}

impl SemanticGaussian {
    /// Builds a primitive and checks every invariant. The rotation must
    /// already be a canonical unit quaternion.
    pub fn new(
        mean: Vec3,
        scale: Vec3,
        rotation: Quat,
        opacity: f64,
        semantics: Semantics,
    ) -> Result<Self> {
        let g = SemanticGaussian {
            mean,
            scale,
            rotation,
            opacity,
            semantics,
        };
        g.validate()?;
        Ok(g)
    }

    /// Like [`SemanticGaussian::new`], but normalizes and canonicalizes the
    /// rotation first.
    pub fn with_rotation(
        mean: Vec3,
        scale: Vec3,
        rotation: Quat,
        opacity: f64,
        semantics: Semantics,
    ) -> Result<Self> {
        Self::new(mean, scale, rotation.canonicalize()?, opacity, semantics)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !self.mean.iter().all(|v| v.is_finite()) {
            return bad(format!("non-finite mean {:?}", self.mean));
        }
        if !self.scale.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return bad(format!("scale must be positive, got {:?}", self.scale));
        }
        if !self.rotation.is_unit() {
            return bad(format!("rotation norm {}", self.rotation.norm()));
        }
        if !self.rotation.is_canonical() {
            return bad(format!("rotation {:?} is not canonical", self.rotation));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return bad(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if !self.semantics.iter().all(|c| *c >= 0.0 && c.is_finite()) {
            return bad("semantics must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.rotmat_unchecked()
    }

    /// `Σ = R S S^T R^T`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s2 = Mat3::from_diagonal(&self.scale.component_mul(&self.scale));
        let sigma = r * s2 * r.transpose();
        // exact symmetry
        0.5 * (sigma + sigma.transpose())
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.scale.max();
        let min = self.scale.min();
        (max / min).powi(2)
    }

    /// `Σ^-1` through a Cholesky factorization of `Σ`, retried once with a
    /// small diagonal jitter if the plain factorization fails.
    pub fn precision(&self) -> Result<Mat3> {
        let condition = self.condition_number();
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateGaussian {
                condition,
                limit: MAX_CONDITION,
            });
        }
        let sigma = self.covariance();
        let chol = Cholesky::new(sigma)
            .or_else(|| Cholesky::new(sigma + Mat3::identity() * CHOLESKY_JITTER))
            .ok_or(Error::DegenerateGaussian {
                condition,
                limit: MAX_CONDITION,
            })?;
        Ok(chol.inverse())
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &Vec3) -> Result<f64> {
        let d = x - self.mean;
        Ok(d.dot(&(self.precision()? * d)))
    }

    /// Semantic contribution `a exp(-q/2) c` of this primitive at `x`.
    pub fn density(&self, x: &Vec3) -> Result<Semantics> {
        let q = self.mahalanobis_sq(x)?;
        Ok(self.weighted_semantics(q))
    }

    pub(crate) fn weighted_semantics(&self, mahalanobis_sq: f64) -> Semantics {
        let w = if mahalanobis_sq == 0.0 {
            self.opacity
        } else {
            self.opacity * (-0.5 * mahalanobis_sq).exp()
        };
        let mut out = [0.0; NUM_CLASSES];
        for (o, c) in out.iter_mut().zip(&self.semantics) {
            *o = w * c;
        }
        out
    }

    /// Index of the largest semantic weight (lowest index on ties).
    pub fn dominant_class(&self) -> usize {
        crate::classes::argmax(&self.semantics)
    }
}
