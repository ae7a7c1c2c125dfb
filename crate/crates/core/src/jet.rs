//! 1-jets of local diffeomorphisms of the body, in the canonical coordinates
//! `(X^i, Y^j, Y^j_i)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// A 1-jet `j^1_{X,Y} phi`: source point, target point and the gradient
/// `F^j_i = d phi^j / d X^i` (row = target component).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub source: Vector3<f64>,
    pub target: Vector3<f64>,
    pub gradient: Matrix3<f64>,
}

impl Jet {
    pub fn new(source: Vector3<f64>, target: Vector3<f64>, gradient: Matrix3<f64>) -> Self {
        Jet {
            source,
            target,
            gradient,
        }
    }

    pub fn identity(at: Vector3<f64>) -> Self {
        Jet::new(at, at, Matrix3::identity())
    }

    /// `self . other`, defined when `other` ends where `self` starts.
    pub fn compose(&self, other: &Jet) -> Result<Jet> {
        if (self.source - other.target).amax() > 1e-12 {
            return Err(Error::Evaluation(
                "jets are not composable (target/source mismatch)".into(),
            ));
        }
        Ok(Jet::new(
            other.source,
            self.target,
            self.gradient * other.gradient,
        ))
    }

    pub fn inverse(&self) -> Result<Jet> {
        let det = self.gradient.determinant();
        let inv = self.gradient.try_inverse().ok_or(Error::Singular { det })?;
        Ok(Jet::new(self.target, self.source, inv))
    }
}
