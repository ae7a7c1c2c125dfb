use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{BodyPoint, ConstitutiveModel, Domain, LeafPredicate, Response};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 4] = ["example1", "example2", "det_cal", "identity_cal"];

/// Affine vector field `e(X) = M X + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineField {
    pub m: Matrix3<f64>,
    pub c: Vector3<f64>,
}

impl AffineField {
    pub fn at(&self, x: &BodyPoint) -> Vector3<f64> {
        self.m * x + self.c
    }

    /// True when `e` has a zero inside the open ball of the given radius.
    pub fn vanishes_in_ball(&self, radius: f64) -> bool {
        let pinv = match self.m.pseudo_inverse(1e-14 * self.m.norm().max(1.0)) {
            Ok(p) => p,
            Err(_) => return true,
        };
        let zero = -(pinv * self.c);
        let consistent = self.at(&zero).norm() <= 1e-12 * self.c.norm().max(1.0);
        consistent && zero.norm() < radius
    }
}

/// Build a shipped model by name.
///
/// `example2` accepts `r` (ball radius, default 1), `g1..g3` (diagonal
/// metric, default 1), `m11..m33` and `c1..c3` (director `e = M X + c`,
/// default `M = I`, `c = (r, 0, 0)`). The other models take no parameters.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<ConstitutiveModel> {
    for (k, v) in params {
        if !v.is_finite() {
            return Err(Error::ModelParams(format!("parameter {k} is not finite")));
        }
    }
    let no_params = |params: &BTreeMap<String, f64>| -> Result<()> {
        match params.keys().next() {
            Some(k) => Err(Error::ModelParams(format!(
                "{name} takes no parameter `{k}`"
            ))),
            None => Ok(()),
        }
    };
    match name {
        "example1" => {
            no_params(params)?;
            Ok(
                ConstitutiveModel::new(name, Domain::Cube { half: 1.0 }, Arc::new(Example1))
                    .with_leaves(LeafPredicate::Planes {
                        axis: 0,
                        threshold: 0.0,
                    }),
            )
        }
        "example2" => example2(params),
        "det_cal" => {
            no_params(params)?;
            Ok(ConstitutiveModel::new(name, Domain::All, Arc::new(DetCal)))
        }
        "identity_cal" => {
            no_params(params)?;
            Ok(ConstitutiveModel::new(
                name,
                Domain::All,
                Arc::new(IdentityCal),
            ))
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

fn example2(params: &BTreeMap<String, f64>) -> Result<ConstitutiveModel> {
    let mut known: Vec<String> = vec!["r".into()];
    for i in 1..=3 {
        known.push(format!("g{i}"));
        known.push(format!("c{i}"));
        for j in 1..=3 {
            known.push(format!("m{i}{j}"));
        }
    }
    if let Some(k) = params.keys().find(|k| !known.contains(k)) {
        return Err(Error::ModelParams(format!(
            "example2 has no parameter `{k}`"
        )));
    }
    let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
    let radius = get("r", 1.0);
    if radius <= 0.0 {
        return Err(Error::ModelParams(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let metric = Vector3::new(get("g1", 1.0), get("g2", 1.0), get("g3", 1.0));
    if metric.iter().any(|g| *g <= 0.0) {
        return Err(Error::ModelParams("metric entries must be positive".into()));
    }
    let m = Matrix3::from_fn(|i, j| {
        get(
            &format!("m{}{}", i + 1, j + 1),
            if i == j { 1.0 } else { 0.0 },
        )
    });
    let c = Vector3::new(get("c1", radius), get("c2", 0.0), get("c3", 0.0));
    let director = AffineField { m, c };
    if director.vanishes_in_ball(radius) {
        return Err(Error::ModelParams(
            "director field e vanishes inside the ball".into(),
        ));
    }
    let mut echo = BTreeMap::new();
    echo.insert("r".to_string(), radius);
    for i in 0..3 {
        echo.insert(format!("g{}", i + 1), metric[i]);
        echo.insert(format!("c{}", i + 1), c[i]);
        for j in 0..3 {
            echo.insert(format!("m{}{}", i + 1, j + 1), m[(i, j)]);
        }
    }
    Ok(ConstitutiveModel::new(
        "example2",
        Domain::Ball { radius },
        Arc::new(Example2 { director, metric }),
    )
    .with_params(echo)
    .with_leaves(LeafPredicate::Spheres {
        center: [0.0, 0.0, 0.0],
    })
    .with_director(director))
}

/// Stiffness profile of the piecewise cube: 1 for `x <= 0`, `1 + e^{-1/x}` after.
pub fn stiffness(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (1.0, 0.0)
    } else {
        let e = (-1.0 / x).exp();
        (1.0 + e, e / (x * x))
    }
}

#[derive(Debug)]
struct Example1;

impl Response for Example1 {
    fn dim(&self) -> usize {
        9
    }

    fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        let (s, _) = stiffness(x[0]);
        let c = (f.transpose() * f - Matrix3::identity()) * s;
        Ok(flatten(&c))
    }

    fn analytic_derivatives(
        &self,
        x: &BodyPoint,
        f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        let (s, ds) = stiffness(x[0]);
        let c = f.transpose() * f - Matrix3::identity();
        let mut dx = DMatrix::zeros(9, 3);
        let mut df = DMatrix::zeros(9, 9);
        for j in 0..3 {
            for i in 0..3 {
                let row = 3 * j + i;
                dx[(row, 0)] = ds * c[(j, i)];
                // d(F^k_j F^k_i)/dF^l_m = delta_jm F^l_i + F^l_j delta_im
                for l in 0..3 {
                    for m in 0..3 {
                        let mut v = 0.0;
                        if j == m {
                            v += f[(l, i)];
                        }
                        if i == m {
                            v += f[(l, j)];
                        }
                        df[(row, 3 * l + m)] = s * v;
                    }
                }
            }
        }
        Some(Ok((dx, df)))
    }
}

#[derive(Debug)]
struct Example2 {
    director: AffineField,
    metric: Vector3<f64>,
}

impl Response for Example2 {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        let fe = f * self.director.at(x);
        let r = fe.component_mul(&self.metric).dot(&fe) + x.norm_squared();
        Ok(DVector::from_vec(vec![r, f.determinant()]))
    }

    fn analytic_derivatives(
        &self,
        x: &BodyPoint,
        f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        let e = self.director.at(x);
        let gfe = (f * e).component_mul(&self.metric);
        let det = f.determinant();
        let inv = match f.try_inverse() {
            Some(i) => i,
            None => return Some(Err(Error::Singular { det })),
        };
        let mut dx = DMatrix::zeros(2, 3);
        let fm = f * self.director.m;
        for m in 0..3 {
            dx[(0, m)] = 2.0 * gfe.dot(&fm.column(m)) + 2.0 * x[m];
        }
        let mut df = DMatrix::zeros(2, 9);
        for j in 0..3 {
            for i in 0..3 {
                df[(0, 3 * j + i)] = 2.0 * gfe[j] * e[i];
                df[(1, 3 * j + i)] = det * inv[(i, j)];
            }
        }
        Some(Ok((dx, df)))
    }
}

#[derive(Debug)]
struct DetCal;

impl Response for DetCal {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, _x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, f.determinant()))
    }

    fn analytic_derivatives(
        &self,
        _x: &BodyPoint,
        f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        // cofactor matrix, dependent only on F
        let cof = Matrix3::from_fn(|j, i| {
            let rows: Vec<usize> = (0..3).filter(|&r| r != j).collect();
            let cols: Vec<usize> = (0..3).filter(|&c| c != i).collect();
            let minor = f[(rows[0], cols[0])] * f[(rows[1], cols[1])]
                - f[(rows[0], cols[1])] * f[(rows[1], cols[0])];
            if (i + j) % 2 == 0 {
                minor
            } else {
                -minor
            }
        });
        let df = DMatrix::from_row_slice(1, 9, &super::row_major(&cof));
        Some(Ok((DMatrix::zeros(1, 3), df)))
    }
}

#[derive(Debug)]
struct IdentityCal;

impl Response for IdentityCal {
    fn dim(&self) -> usize {
        9
    }

    fn eval(&self, _x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        Ok(flatten(f))
    }

    fn analytic_derivatives(
        &self,
        _x: &BodyPoint,
        _f: &Matrix3<f64>,
    ) -> Option<Result<(DMatrix<f64>, DMatrix<f64>)>> {
        Some(Ok((DMatrix::zeros(9, 3), DMatrix::identity(9, 9))))
    }
}

fn flatten(m: &Matrix3<f64>) -> DVector<f64> {
    DVector::from_row_slice(&super::row_major(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tolerances;
    use approx::assert_relative_eq;

    fn none() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn example1_vanishes_at_identity() {
        let m = builtin("example1", &none()).unwrap();
        let w = m
            .evaluate(&Vector3::new(-0.5, 0.0, 0.0), &Matrix3::identity())
            .unwrap();
        assert_eq!(w.len(), 9);
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn example1_at_half_with_double_gradient() {
        let m = builtin("example1", &none()).unwrap();
        let w = m
            .evaluate(&Vector3::new(0.5, 0.0, 0.0), &(Matrix3::identity() * 2.0))
            .unwrap();
        let s = 1.0 + (-2.0f64).exp();
        for j in 0..3 {
            for i in 0..3 {
                let want = if i == j { 3.0 * s } else { 0.0 };
                assert_relative_eq!(w[3 * j + i], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn example1_stiffness_is_one_on_the_left() {
        for x in [-0.99, -0.5, -1e-9, 0.0] {
            assert_eq!(stiffness(x).0, 1.0);
        }
    }

    #[test]
    fn example1_stiffness_is_c1_across_zero() {
        let h = 1e-3;
        assert!((stiffness(h).0 - stiffness(-h).0).abs() <= 2e-10);
        let slope = (stiffness(h).0 - stiffness(-h).0) / (2.0 * h);
        assert!(slope.abs() <= 1e-8);
    }

    #[test]
    fn example1_x_derivatives() {
        let m = builtin("example1", &none()).unwrap();
        let tol = Tolerances::default();
        let f = Matrix3::new(1.0, 0.2, 0.0, 0.1, 1.5, 0.3, 0.0, -0.4, 0.8);
        let (dx, _) = m
            .derivatives(&Vector3::new(-0.5, 0.0, 0.0), &f, &tol)
            .unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        let (dx, _) = m
            .derivatives(&Vector3::new(0.5, 0.1, 0.0), &f, &tol)
            .unwrap();
        assert!(dx
            .column(1)
            .iter()
            .chain(dx.column(2).iter())
            .all(|v| *v == 0.0));
        assert!(dx.column(0).amax() > 0.0);
    }

    #[test]
    fn det_cal_gradient_at_identity_is_identity() {
        let m = builtin("det_cal", &none()).unwrap();
        let (dx, df) = m
            .derivatives(
                &Vector3::zeros(),
                &Matrix3::identity(),
                &Tolerances::default(),
            )
            .unwrap();
        assert_eq!(dx.amax(), 0.0);
        assert_eq!(
            df.as_slice(),
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn identity_cal_returns_flattened_gradient() {
        let m = builtin("identity_cal", &none()).unwrap();
        let f = Matrix3::new(1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 5.0, 6.0, 0.0);
        let w = m.evaluate(&Vector3::zeros(), &f).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.0, 3.0, 0.0, 1.0, 4.0, 5.0, 6.0, 0.0]);
    }

    #[test]
    fn example2_at_origin() {
        for r in [1.0, 0.5] {
            let mut p = none();
            p.insert("r".into(), r);
            let m = builtin("example2", &p).unwrap();
            let w = m.evaluate(&Vector3::zeros(), &Matrix3::identity()).unwrap();
            assert_relative_eq!(w[0], r * r, epsilon = 1e-15);
            assert_relative_eq!(w[1], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn example2_leaf_is_a_sphere() {
        let m = builtin("example2", &none()).unwrap();
        let leaves = m.leaves().unwrap();
        assert_eq!(
            leaves.describe(&Vector3::new(0.3, 0.0, 0.0)),
            "sphere radius 0.3"
        );
    }

    #[test]
    fn example2_rejects_vanishing_director() {
        let mut p = none();
        p.insert("c1".into(), 0.5);
        assert!(matches!(
            builtin("example2", &p),
            Err(Error::ModelParams(_))
        ));
        let mut p = none();
        p.insert("m11".into(), 0.0);
        p.insert("c1".into(), 0.0);
        p.insert("c2".into(), 2.0);
        // e = (0, X2 + 2, X3) never vanishes in the unit ball
        assert!(builtin("example2", &p).is_ok());
        let mut p = none();
        p.insert("q".into(), 1.0);
        assert!(builtin("example2", &p).is_err());
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(
            builtin("example3", &none()),
            Err(Error::UnknownModel(_))
        ));
        let mut p = none();
        p.insert("r".into(), 1.0);
        assert!(builtin("det_cal", &p).is_err());
    }

    #[test]
    fn analytic_and_fd_derivatives_agree() {
        let tol = Tolerances::default();
        let fs = [
            Matrix3::identity(),
            Matrix3::new(1.0, 0.2, 0.0, 0.1, 1.5, 0.3, 0.0, -0.4, 0.8),
            Matrix3::new(-1.2, 0.5, 0.3, 0.9, 0.1, -1.1, 0.4, 1.7, 0.6),
        ];
        let xs = [
            Vector3::new(-0.5, 0.0, 0.0),
            Vector3::new(0.3, 0.2, 0.1),
            Vector3::new(0.6, -0.2, 0.4),
        ];
        for name in BUILTIN_NAMES {
            let m = builtin(name, &none()).unwrap();
            for x in &xs {
                for f in &fs {
                    let (ax, af) = m.derivatives(x, f, &tol).unwrap();
                    let (nx, nf) = m.fd_derivatives(x, f, &tol).unwrap();
                    assert!((ax - nx).amax() < 1e-5, "{name} dX at {x:?}");
                    assert!((af - nf).amax() < 1e-5, "{name} dF at {x:?}");
                }
            }
        }
    }

    #[test]
    fn fd_shrinks_near_the_boundary() {
        let m = builtin("example1", &none()).unwrap();
        let x = Vector3::new(1.0 - 1e-7, 0.0, 0.0);
        assert!(m
            .fd_derivatives(&x, &Matrix3::identity(), &Tolerances::default())
            .is_ok());
        let x = Vector3::new(1.0 - 1e-9, 0.0, 0.0);
        assert!(matches!(
            m.fd_derivatives(&x, &Matrix3::identity(), &Tolerances::default()),
            Err(Error::StepOutsideDomain { .. })
        ));
    }
}
