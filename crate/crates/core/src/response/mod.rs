//! Constitutive-model contract, built-in models and the `.mdl` language.
//!
//! A model maps a body point `X` and a deformation gradient `F` to a response
//! value in `R^d` (row-major flattening for matrix-valued responses). There is
//! no target-point argument anywhere in the contract: the response of a 1-jet
//! never depends on where the jet lands.

mod builtin;
pub mod dsl;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::numkit::{jacobian_fd, Mat, Tolerances};

pub use builtin::{builtin, stiffness as example1_stiffness, AffineField, BUILTIN_NAMES};

pub type BodyPoint = Vector3<f64>;

/// Smallest `|det F|` accepted by [`ConstitutiveModel::evaluate`].
pub const MIN_DET: f64 = 1e-12;

/// Reference-configuration region occupied by the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    All,
    /// Open cube `(-half, half)^3`.
    Cube {
        half: f64,
    },
    /// Open ball of the given radius about the origin.
    Ball {
        radius: f64,
    },
}

impl Domain {
    pub fn contains(&self, x: &BodyPoint) -> bool {
        if !x.iter().all(|c| c.is_finite()) {
            return false;
        }
        match *self {
            Domain::All => true,
            Domain::Cube { half } => x.iter().all(|c| c.abs() < half),
            Domain::Ball { radius } => x.norm() < radius,
        }
    }

    /// Half-width of an axis-aligned box centred at the origin that contains
    /// the domain, if it is bounded.
    pub fn bounding_half_width(&self) -> Option<f64> {
        match *self {
            Domain::All => None,
            Domain::Cube { half } => Some(half),
            Domain::Ball { radius } => Some(radius),
        }
    }

    /// True when the closed `margin`-ball around `x` stays inside the domain.
    pub fn contains_with_margin(&self, x: &BodyPoint, margin: f64) -> bool {
        match *self {
            Domain::All => self.contains(x),
            Domain::Cube { half } => x.iter().all(|c| c.abs() < half - margin),
            Domain::Ball { radius } => x.norm() < radius - margin,
        }
    }
}

/// Evaluation contract of a mechanical response.
pub trait Response: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>>;

    /// `(dW/dX: d x 3, dW/dF: d x 9)`, with column `3*j + i` of `dW/dF` for
    /// `F^j_i`. `None` when no closed form is registered.
    fn analytic_derivatives(
        &self,
        _x: &BodyPoint,
        _f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        None
    }
}

/// Analytic description of the uniform leaves of a model, when known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafPredicate {
    /// Planes `{X^axis = c}` for `c >= threshold`; everything with
    /// `X^axis < threshold` is a single open leaf.
    Planes { axis: usize, threshold: f64 },
    /// Spheres about `center`; the centre itself is a point leaf.
    Spheres { center: [f64; 3] },
}

impl LeafPredicate {
    /// Distance-like residual of `x` from the leaf through `seed`.
    pub fn residual(&self, seed: &BodyPoint, x: &BodyPoint) -> f64 {
        match *self {
            LeafPredicate::Planes { axis, threshold } => {
                if seed[axis] >= threshold {
                    (x[axis] - seed[axis]).abs()
                } else {
                    (x[axis] - threshold).max(0.0)
                }
            }
            LeafPredicate::Spheres { center } => {
                let c = Vector3::from(center);
                ((x - c).norm() - (seed - c).norm()).abs()
            }
        }
    }

    pub fn leaf_dim(&self, seed: &BodyPoint) -> usize {
        match *self {
            LeafPredicate::Planes { axis, threshold } => {
                if seed[axis] >= threshold {
                    2
                } else {
                    3
                }
            }
            LeafPredicate::Spheres { center } => {
                if (seed - Vector3::from(center)).norm() == 0.0 {
                    0
                } else {
                    2
                }
            }
        }
    }

    pub fn describe(&self, seed: &BodyPoint) -> String {
        match *self {
            LeafPredicate::Planes { axis, threshold } => {
                if seed[axis] >= threshold {
                    format!("plane X{} = {}", axis + 1, seed[axis])
                } else {
                    format!("open region X{} < {}", axis + 1, threshold)
                }
            }
            LeafPredicate::Spheres { center } => {
                let r = (seed - Vector3::from(center)).norm();
                if r == 0.0 {
                    "point".to_string()
                } else {
                    format!("sphere radius {r}")
                }
            }
        }
    }
}

/// A simple material body: response, domain and optional leaf metadata.
#[derive(Clone)]
pub struct ConstitutiveModel {
    name: String,
    params: BTreeMap<String, f64>,
    domain: Domain,
    response: Arc<dyn Response>,
    leaves: Option<LeafPredicate>,
    director: Option<AffineField>,
}

impl fmt::Debug for ConstitutiveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstitutiveModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("domain", &self.domain)
            .field("dim", &self.response.dim())
            .field("leaves", &self.leaves)
            .finish()
    }
}

impl ConstitutiveModel {
    pub fn new(name: impl Into<String>, domain: Domain, response: Arc<dyn Response>) -> Self {
        ConstitutiveModel {
            name: name.into(),
            params: BTreeMap::new(),
            domain,
            response,
            leaves: None,
            director: None,
        }
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_leaves(mut self, leaves: LeafPredicate) -> Self {
        self.leaves = Some(leaves);
        self
    }

    pub fn with_director(mut self, director: AffineField) -> Self {
        self.director = Some(director);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.response.dim()
    }

    pub fn leaves(&self) -> Option<&LeafPredicate> {
        self.leaves.as_ref()
    }

    /// Director field `e(X)` of laminated liquid-crystal models.
    pub fn director(&self) -> Option<&AffineField> {
        self.director.as_ref()
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.response
            .analytic_derivatives(&Vector3::zeros(), &Matrix3::identity())
            .is_some()
    }

    /// Same body with the response multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor != 0.0) {
            return Err(Error::ModelParams(format!(
                "scale factor must be finite and non-zero, got {factor}"
            )));
        }
        let mut out = self.clone();
        out.name = format!("{}*{}", factor, self.name);
        out.response = Arc::new(Scaled {
            inner: self.response.clone(),
            factor,
        });
        Ok(out)
    }

    fn check_point(&self, x: &BodyPoint) -> Result<()> {
        if self.domain.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                point: [x[0], x[1], x[2]],
            })
        }
    }

    /// `W(X, F)` as a vector of length `dim()`.
    pub fn evaluate(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let det = f.determinant();
        if !(det.abs() >= MIN_DET) {
            return Err(Error::Singular { det });
        }
        let w = self.response.eval(x, f)?;
        if w.len() != self.dim() {
            return Err(Error::Evaluation(format!(
                "response returned {} components, expected {}",
                w.len(),
                self.dim()
            )));
        }
        if let Some(c) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("response component {c}")));
        }
        Ok(w)
    }

    pub fn evaluate_mat(&self, x: &BodyPoint, f: &Mat) -> Result<DVector<f64>> {
        if f.rows() != 3 || f.cols() != 3 {
            return Err(Error::Shape {
                rows: 3,
                cols: 3,
                entries: f.rows() * f.cols(),
            });
        }
        let m = Matrix3::from_fn(|r, c| f.get(r, c));
        self.evaluate(x, &m)
    }

    /// Response of a 1-jet. The jet's target point plays no role.
    pub fn evaluate_jet(&self, jet: &Jet) -> Result<DVector<f64>> {
        self.evaluate(&jet.source, &jet.gradient)
    }

    /// `(dW/dX, dW/dF)` from the registered closed form, or by central
    /// differences otherwise.
    pub fn derivatives(
        &self,
        x: &BodyPoint,
        f: &Matrix3<f64>,
        tol: &Tolerances,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        let det = f.determinant();
        if !(det.abs() >= MIN_DET) {
            return Err(Error::Singular { det });
        }
        match self.response.analytic_derivatives(x, f) {
            Some(r) => {
                let (dx, df) = r?;
                if dx.iter().chain(df.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("analytic derivative".into()));
                }
                Ok((dx, df))
            }
            None => self.fd_derivatives(x, f, tol),
        }
    }

    /// Central-difference derivatives, ignoring any analytic contract. Steps
    /// in `X` are halved (at most four times) until every probe lies inside
    /// the domain.
    pub fn fd_derivatives(
        &self,
        x: &BodyPoint,
        f: &Matrix3<f64>,
        tol: &Tolerances,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        let mut step_tol = *tol;
        let mut attempts = 0;
        loop {
            let fits = (0..3).all(|i| {
                let h = step_tol.fd_step(x[i]);
                let mut p = *x;
                p[i] += h;
                let mut m = *x;
                m[i] -= h;
                self.domain.contains(&p) && self.domain.contains(&m)
            });
            if fits {
                break;
            }
            attempts += 1;
            if attempts > 4 {
                return Err(Error::StepOutsideDomain {
                    point: [x[0], x[1], x[2]],
                });
            }
            step_tol.fd_step_rel *= 0.5;
            step_tol.fd_step_abs *= 0.5;
        }
        let dx = jacobian_fd(
            |p| self.evaluate(&Vector3::new(p[0], p[1], p[2]), f),
            x.as_slice(),
            &step_tol,
        )?;
        let flat: Vec<f64> = row_major(f).to_vec();
        let df = jacobian_fd(|p| self.evaluate(x, &from_row_major(p)), &flat, tol)?;
        Ok((dx, df))
    }
}

#[derive(Debug)]
struct Scaled {
    inner: Arc<dyn Response>,
    factor: f64,
}

impl Response for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        Ok(self.inner.eval(x, f)? * self.factor)
    }

    fn analytic_derivatives(
        &self,
        x: &BodyPoint,
        f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        self.inner
            .analytic_derivatives(x, f)
            .map(|r| r.map(|(dx, df)| (dx * self.factor, df * self.factor)))
    }
}

/// Row-major entries of a 3x3 matrix.
pub fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

pub fn from_row_major(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| v[3 * r + c])
}

/// Parse a comma-separated point such as `-0.5,0,0`.
pub fn parse_point(s: &str) -> Result<BodyPoint> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::ModelParams(format!(
            "expected three comma-separated coordinates, got `{s}`"
        )));
    }
    let mut p = [0.0; 3];
    for (slot, part) in p.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|_| Error::ModelParams(format!("bad coordinate `{part}`")))?;
    }
    Ok(Vector3::from(p))
}
