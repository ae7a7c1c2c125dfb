//! Chart tests for homogeneity along the leaves of the body-material
//! foliation.
//!
//! A chart declares its first `leafwise` coordinates as leaf coordinates. It
//! is homogeneous when, for points `Y, Z` on the same leaf, the translation
//! jet `Dpsi(Z)^-1 Dpsi(Y)` is a material isomorphism. Three sub-tests are
//! run: tangency of the leaf coordinate directions (foliated), the finite
//! translation-jet test, and the derivative test `d W~ / d x^L = 0`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distribution::{
    anchors, finite_or_null, is_material_isomorphism, material_fibre, point_key, FibreMode,
    SamplerConfig,
};
use crate::error::{Error, Result};
use crate::foliation::{leaf_trace, TraceConfig};
use crate::numkit::Tolerances;
use crate::response::dsl::{compile_source, Compiled, Context};
use crate::response::{row_major, BodyPoint, ConstitutiveModel, LeafPredicate};

/// Tangency tolerance of the leaf coordinate directions (radians).
pub const ANGLE_TOL: f64 = 1e-5;
/// Allowed `|inverse(forward(X)) - X|`.
pub const ROUNDTRIP_TOL: f64 = 1e-10;
/// Smallest accepted `|det Dpsi|`.
pub const MIN_CHART_DET: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionVar {
    X(usize),
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundOp {
    Ge,
    Gt,
    Le,
    Lt,
}

impl BoundOp {
    fn symbol(self) -> &'static str {
        match self {
            BoundOp::Ge => ">=",
            BoundOp::Gt => ">",
            BoundOp::Le => "<=",
            BoundOp::Lt => "<",
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            BoundOp::Ge => a >= b,
            BoundOp::Gt => a > b,
            BoundOp::Le => a <= b,
            BoundOp::Lt => a < b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub var: RegionVar,
    pub op: BoundOp,
    pub value: f64,
}

/// Conjunction of coordinate bounds, written like `x1>=0.1,r<=0.8`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Region {
    pub bounds: Vec<Bound>,
}

impl Region {
    pub fn all() -> Self {
        Region::default()
    }

    pub fn contains(&self, x: &BodyPoint) -> bool {
        self.bounds.iter().all(|b| {
            let v = match b.var {
                RegionVar::X(k) => x[k],
                RegionVar::R => x.norm(),
            };
            b.op.holds(v, b.value)
        })
    }

    /// Half-width of a centred box holding the region, if the bounds imply one.
    fn half_width(&self) -> Option<f64> {
        let mut lim = [None::<f64>; 3];
        let mut r = None::<f64>;
        for b in &self.bounds {
            let upper = matches!(b.op, BoundOp::Le | BoundOp::Lt);
            match b.var {
                RegionVar::R if upper => r = Some(r.map_or(b.value, |v| v.min(b.value))),
                RegionVar::X(k) => {
                    let e = lim[k].get_or_insert(0.0);
                    *e = e.max(b.value.abs());
                }
                _ => {}
            }
        }
        if let Some(r) = r {
            return Some(r);
        }
        if lim.iter().all(|l| l.is_some()) {
            return lim.iter().flatten().copied().reduce(f64::max);
        }
        None
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bounds = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let lower = item.to_ascii_lowercase();
            let (var, rest) = if let Some(r) = lower.strip_prefix('r') {
                (RegionVar::R, r)
            } else if let Some(r) = lower.strip_prefix('x') {
                let k = r.chars().next().and_then(|c| c.to_digit(10));
                match k {
                    Some(k @ 1..=3) => (RegionVar::X(k as usize - 1), &r[1..]),
                    _ => return Err(Error::Chart(format!("bad region variable in `{item}`"))),
                }
            } else {
                return Err(Error::Chart(format!(
                    "region bound `{item}` must start with x1, x2, x3 or r"
                )));
            };
            let rest = rest.trim_start();
            let (op, num) = [BoundOp::Ge, BoundOp::Le, BoundOp::Gt, BoundOp::Lt]
                .into_iter()
                .find_map(|op| rest.strip_prefix(op.symbol()).map(|n| (op, n)))
                .ok_or_else(|| Error::Chart(format!("missing comparison in `{item}`")))?;
            let value: f64 = num
                .trim()
                .parse()
                .map_err(|_| Error::Chart(format!("bad number in `{item}`")))?;
            if !value.is_finite() {
                return Err(Error::Chart(format!("bad number in `{item}`")));
            }
            bounds.push(Bound { var, op, value });
        }
        Ok(Region { bounds })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .bounds
            .iter()
            .map(|b| {
                let var = match b.var {
                    RegionVar::X(k) => format!("x{}", k + 1),
                    RegionVar::R => "r".to_string(),
                };
                format!("{var}{}{}", b.op.symbol(), b.value)
            })
            .collect();
        f.write_str(&items.join(","))
    }
}

#[derive(Debug, Clone)]
pub enum ChartKind {
    /// `psi(X) = (X^a1, X^a2, X^a3)`.
    Identity { axes: [usize; 3] },
    /// `psi(X) = (theta, phi, |X|)`, polar angle from the `X^3` axis.
    SphericalCap,
    /// Forward and inverse maps given as chart-language sources.
    Dsl {
        name: String,
        program: Arc<Compiled>,
    },
}

/// Coordinate chart over a region, optionally followed by an affine map.
#[derive(Debug, Clone)]
pub struct Chart {
    kind: ChartKind,
    post: Option<(Matrix3<f64>, Vector3<f64>, Matrix3<f64>)>,
    region: Region,
    leafwise: usize,
}

impl Chart {
    pub fn identity(axes: [usize; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &a in &axes {
            if a > 2 || seen[a] {
                return Err(Error::Chart(format!(
                    "identity axes must be a permutation of 1,2,3, got {:?}",
                    axes.map(|a| a + 1)
                )));
            }
            seen[a] = true;
        }
        Ok(Chart {
            kind: ChartKind::Identity { axes },
            post: None,
            region: Region::all(),
            leafwise: 0,
        })
    }

    /// `psi(X) = A X + b`.
    pub fn affine(a: Matrix3<f64>, b: Vector3<f64>) -> Result<Self> {
        Chart::identity([0, 1, 2])?.then_affine(a, b)
    }

    /// Spherical coordinates on the default cap `r in [0.2, 0.8], x1 >= 0.15`,
    /// which keeps away from the origin and the polar axis.
    pub fn spherical_cap() -> Self {
        Chart {
            kind: ChartKind::SphericalCap,
            post: None,
            region: "r>=0.2,r<=0.8,x1>=0.15".parse().expect("valid literal"),
            leafwise: 0,
        }
    }

    pub fn from_dsl(src: &str, name: &str) -> Result<Self> {
        let program = compile_source(src, Context::Chart)?;
        Ok(Chart {
            kind: ChartKind::Dsl {
                name: name.to_string(),
                program: Arc::new(program),
            },
            post: None,
            region: Region::all(),
            leafwise: 0,
        })
    }

    /// Postcompose with `x -> A x + b`.
    pub fn then_affine(mut self, a: Matrix3<f64>, b: Vector3<f64>) -> Result<Self> {
        let det = a.determinant();
        let inv = a
            .try_inverse()
            .filter(|_| det.abs() >= MIN_CHART_DET)
            .ok_or(Error::Singular { det })?;
        self.post = Some(match self.post {
            None => (a, b, inv),
            Some((a0, b0, inv0)) => (a * a0, a * b0 + b, inv0 * inv),
        });
        Ok(self)
    }

    pub fn with_region(mut self, region: Region) -> Self {
        self.region = region;
        self
    }

    pub fn with_leafwise(mut self, p: usize) -> Result<Self> {
        if p > 3 {
            return Err(Error::Chart(format!(
                "leafwise count must be 0..3, got {p}"
            )));
        }
        self.leafwise = p;
        Ok(self)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn leafwise(&self) -> usize {
        self.leafwise
    }

    pub fn kind(&self) -> &ChartKind {
        &self.kind
    }

    pub fn describe(&self) -> String {
        let base = match &self.kind {
            ChartKind::Identity { axes } => {
                format!("identity({},{},{})", axes[0] + 1, axes[1] + 1, axes[2] + 1)
            }
            ChartKind::SphericalCap => "spherical_cap".to_string(),
            ChartKind::Dsl { name, .. } => format!("dsl:{name}"),
        };
        if self.post.is_some() {
            format!("affine({base})")
        } else {
            base
        }
    }

    fn base_forward(&self, x: &BodyPoint) -> Result<Vector3<f64>> {
        match &self.kind {
            ChartKind::Identity { axes } => Ok(Vector3::new(x[axes[0]], x[axes[1]], x[axes[2]])),
            ChartKind::SphericalCap => {
                let (r, rho) = polar_radii(x)?;
                Ok(Vector3::new(rho.atan2(x[2]), x[1].atan2(x[0]), r))
            }
            ChartKind::Dsl { program, .. } => dsl_map(program, x, "forward"),
        }
    }

    fn base_inverse(&self, y: &Vector3<f64>) -> Result<BodyPoint> {
        match &self.kind {
            ChartKind::Identity { axes } => {
                let mut x = Vector3::zeros();
                for k in 0..3 {
                    x[axes[k]] = y[k];
                }
                Ok(x)
            }
            ChartKind::SphericalCap => {
                let (th, ph, r) = (y[0], y[1], y[2]);
                Ok(Vector3::new(
                    r * th.sin() * ph.cos(),
                    r * th.sin() * ph.sin(),
                    r * th.cos(),
                ))
            }
            ChartKind::Dsl { program, .. } => dsl_map(program, y, "inverse"),
        }
    }

    fn base_jacobian(&self, x: &BodyPoint) -> Result<Matrix3<f64>> {
        match &self.kind {
            ChartKind::Identity { axes } => {
                Ok(Matrix3::from_fn(
                    |k, m| if axes[k] == m { 1.0 } else { 0.0 },
                ))
            }
            ChartKind::SphericalCap => {
                let (r, rho) = polar_radii(x)?;
                let (r2, q2) = (r * r, rho * rho);
                Ok(Matrix3::new(
                    x[0] * x[2] / (r2 * rho),
                    x[1] * x[2] / (r2 * rho),
                    -rho / r2,
                    -x[1] / q2,
                    x[0] / q2,
                    0.0,
                    x[0] / r,
                    x[1] / r,
                    x[2] / r,
                ))
            }
            ChartKind::Dsl { .. } => {
                let mut jac = Matrix3::zeros();
                for m in 0..3 {
                    let h = 1e-5 * x[m].abs().max(1.0);
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[m] += h;
                    xm[m] -= h;
                    let col = (self.base_forward(&xp)? - self.base_forward(&xm)?) / (2.0 * h);
                    jac.set_column(m, &col);
                }
                Ok(jac)
            }
        }
    }

    pub fn forward(&self, x: &BodyPoint) -> Result<Vector3<f64>> {
        let y = self.base_forward(x)?;
        Ok(match &self.post {
            Some((a, b, _)) => a * y + b,
            None => y,
        })
    }

    pub fn inverse(&self, y: &Vector3<f64>) -> Result<BodyPoint> {
        let y = match &self.post {
            Some((_, b, inv)) => inv * (y - b),
            None => *y,
        };
        self.base_inverse(&y)
    }

    /// `Dpsi(X)`, rows indexed by chart coordinate.
    pub fn jacobian(&self, x: &BodyPoint) -> Result<Matrix3<f64>> {
        let j = self.base_jacobian(x)?;
        Ok(match &self.post {
            Some((a, _, _)) => a * j,
            None => j,
        })
    }

    /// Round trip and Jacobian checks at one point.
    pub fn validate_at(&self, x: &BodyPoint) -> Result<()> {
        let back = self.inverse(&self.forward(x)?)?;
        let err = (back - x).amax();
        if !(err <= ROUNDTRIP_TOL * x.amax().max(1.0)) {
            return Err(Error::Chart(format!(
                "inverse(forward(X)) misses X by {err:e} at {:?}",
                x.as_slice()
            )));
        }
        let det = self.jacobian(x)?.determinant();
        if !(det.abs() >= MIN_CHART_DET) {
            return Err(Error::Chart(format!(
                "chart Jacobian is singular (det {det:e}) at {:?}",
                x.as_slice()
            )));
        }
        Ok(())
    }

    /// Derivative at `Y` of `psi^-1 o translate(psi(Z) - psi(Y)) o psi`.
    pub fn translation_jet(&self, y: &BodyPoint, z: &BodyPoint) -> Result<Matrix3<f64>> {
        let jz = self.jacobian(z)?;
        let det = jz.determinant();
        let inv = jz
            .try_inverse()
            .filter(|_| det.abs() >= MIN_CHART_DET)
            .ok_or(Error::Singular { det })?;
        Ok(inv * self.jacobian(y)?)
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "chart": self.describe(),
            "region": self.region.to_string(),
            "leafwise": self.leafwise,
        });
        if let Some((a, b, _)) = &self.post {
            v["post_matrix"] = json!(row_major(a));
            v["post_offset"] = json!([b[0], b[1], b[2]]);
        }
        v
    }
}

fn polar_radii(x: &BodyPoint) -> Result<(f64, f64)> {
    let r = x.norm();
    let rho = x[0].hypot(x[1]);
    if !(rho > 0.0) {
        return Err(Error::Chart(format!(
            "spherical chart is singular on the polar axis at {:?}",
            x.as_slice()
        )));
    }
    Ok((r, rho))
}

fn dsl_map(program: &Compiled, x: &Vector3<f64>, prefix: &str) -> Result<Vector3<f64>> {
    let names = [
        format!("{prefix}1"),
        format!("{prefix}2"),
        format!("{prefix}3"),
    ];
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let vals = program.eval(x, &Matrix3::identity(), &refs)?;
    let mut out = Vector3::zeros();
    for (k, v) in vals.iter().enumerate() {
        out[k] = v
            .scalar()
            .ok_or_else(|| Error::Chart(format!("{} is not scalar", names[k])))?;
    }
    Ok(out)
}

/// Canonical axes ordered by their angle to the body-material distribution
/// at `x`, so that leaf directions come first. Ties keep index order.
pub fn identity_axes_for(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<[usize; 3]> {
    let fibre = material_fibre(model, x, sampler, tol, FibreMode::Pointwise)?;
    let mut axes = [0usize, 1, 2];
    let angles: Vec<f64> = (0..3)
        .map(|k| angle_to_span(&fibre.base_basis, &Vector3::ith(k, 1.0)))
        .collect();
    // quantize so round-off does not reorder equally aligned axes
    axes.sort_by_key(|&k| (angles[k] / 1e-9).round() as i64);
    Ok(axes)
}

/// Angle between `v` and the span of the orthonormal columns of `basis`.
pub fn angle_to_span(basis: &DMatrix<f64>, v: &Vector3<f64>) -> f64 {
    let n = v.norm();
    if basis.ncols() == 0 || n == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let u = v / n;
    let coeff = basis.transpose() * u;
    let proj = basis * coeff;
    let p = Vector3::new(proj[0], proj[1], proj[2]);
    (u - p).norm().atan2(p.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafOracle {
    /// Analytic leaves when the model registers them, traced otherwise.
    Auto,
    Analytic,
    Traced,
}

impl FromStr for LeafOracle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LeafOracle::Auto),
            "analytic" => Ok(LeafOracle::Analytic),
            "traced" => Ok(LeafOracle::Traced),
            other => Err(Error::Chart(format!("unknown leaf oracle `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogConfig {
    pub n_pairs: usize,
    pub n_samples: usize,
    pub oracle: LeafOracle,
    pub trace_steps: usize,
    pub trace_h: f64,
}

impl Default for HomogConfig {
    fn default() -> Self {
        HomogConfig {
            n_pairs: 16,
            n_samples: 16,
            oracle: LeafOracle::Auto,
            trace_steps: 25,
            trace_h: 0.01,
        }
    }
}

impl HomogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.n_samples == 0 {
            return Err(Error::Chart(
                "n_pairs and n_samples must be positive".into(),
            ));
        }
        if !(self.trace_h > 0.0 && self.trace_h <= crate::foliation::MAX_STEP)
            || self.trace_steps == 0
        {
            return Err(Error::Chart(
                "trace step must lie in (0, 0.05] with steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn sampling_half_width(model: &ConstitutiveModel, chart: &Chart) -> f64 {
    match (
        model.domain().bounding_half_width(),
        chart.region.half_width(),
    ) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => 1.0,
    }
}

fn in_region(model: &ConstitutiveModel, chart: &Chart, x: &BodyPoint) -> bool {
    model.domain().contains(x) && chart.region.contains(x)
}

/// Deterministic sample of points of `region ∩ domain` at which the chart is
/// valid. Fails when the region misses the domain.
pub fn region_samples(
    model: &ConstitutiveModel,
    chart: &Chart,
    n: usize,
    seed: u64,
) -> Result<Vec<BodyPoint>> {
    let hw = sampling_half_width(model, chart);
    let mut rng = ChaCha8Rng::seed_from_u64(point_key(seed ^ 0x5EED_C4A7, &[]));
    let mut out = Vec::with_capacity(n);
    for _ in 0..1000 * n {
        let x = Vector3::<f64>::from_fn(|_, _| rng.random_range(-hw..=hw));
        if in_region(model, chart, &x) {
            chart.validate_at(&x)?;
            out.push(x);
            if out.len() == n {
                break;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Chart(format!(
            "chart region `{}` does not meet the model domain",
            chart.region
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LeafPairs {
    pub pairs: Vec<(BodyPoint, BodyPoint)>,
    pub skipped: usize,
    pub oracle: &'static str,
}

/// Pairs `(Y, Z)` in the chart region with `Z` on the leaf through `Y`.
pub fn leaf_pairs(
    model: &ConstitutiveModel,
    chart: &Chart,
    cfg: &HomogConfig,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<LeafPairs> {
    let ys = region_samples(model, chart, cfg.n_pairs, sampler.seed ^ 0x9A1B)?;
    let hw = sampling_half_width(model, chart);
    let analytic = match cfg.oracle {
        LeafOracle::Traced => None,
        LeafOracle::Auto => model.leaves().copied(),
        LeafOracle::Analytic => Some(*model.leaves().ok_or_else(|| {
            Error::Chart(format!("model {} has no analytic leaves", model.name()))
        })?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(point_key(sampler.seed ^ 0x7A12, &[]));
    if let Some(pred) = analytic {
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for y in ys {
            match analytic_partner(&pred, model, chart, &y, hw, &mut rng) {
                Some(z) => pairs.push((y, z)),
                None => skipped += 1,
            }
        }
        return Ok(LeafPairs {
            pairs,
            skipped,
            oracle: "analytic",
        });
    }
    let hints: Vec<Vector3<f64>> = ys
        .iter()
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0)))
        .collect();
    let trace_cfg = TraceConfig {
        steps: cfg.trace_steps,
        h: cfg.trace_h,
        mode: FibreMode::Pointwise,
    };
    let found: Vec<Option<(BodyPoint, BodyPoint)>> = ys
        .par_iter()
        .zip(hints.par_iter())
        .map(|(y, hint)| {
            let grade = material_fibre(model, y, sampler, tol, FibreMode::Pointwise)
                .ok()?
                .grade;
            if grade == 0 {
                return Some((*y, *y));
            }
            let t = leaf_trace(model, y, hint, &trace_cfg, sampler, tol).ok()?;
            t.points
                .iter()
                .skip(1)
                .rev()
                .find(|p| chart.region.contains(p))
                .map(|z| (*y, *z))
        })
        .collect();
    let skipped = found.iter().filter(|p| p.is_none()).count();
    Ok(LeafPairs {
        pairs: found.into_iter().flatten().collect(),
        skipped,
        oracle: "traced",
    })
}

fn analytic_partner(
    pred: &LeafPredicate,
    model: &ConstitutiveModel,
    chart: &Chart,
    y: &BodyPoint,
    hw: f64,
    rng: &mut ChaCha8Rng,
) -> Option<BodyPoint> {
    if pred.leaf_dim(y) == 0 {
        return Some(*y);
    }
    for _ in 0..1000 {
        let z = match *pred {
            LeafPredicate::Spheres { center } => {
                let c = Vector3::from(center);
                let u = Vector3::<f64>::from_fn(|_, _| rng.random_range(-1.0..=1.0));
                let n = u.norm();
                if !(n > 1e-3 && n <= 1.0) {
                    continue;
                }
                c + u * ((y - c).norm() / n)
            }
            LeafPredicate::Planes { axis, threshold } => {
                let mut z = Vector3::<f64>::from_fn(|_, _| rng.random_range(-hw..=hw));
                if y[axis] >= threshold {
                    z[axis] = y[axis];
                } else if z[axis] >= threshold {
                    continue;
                }
                z
            }
        };
        if in_region(model, chart, &z) {
            return Some(z);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Passed,
    Failed,
    /// Not run: the chart cannot be foliated on the region, or no pairs.
    Aborted,
    /// No leafwise coordinates.
    Vacuous,
}

#[derive(Debug, Clone)]
pub struct SubTest {
    pub status: TestStatus,
    pub worst: f64,
    pub threshold: f64,
    pub witness: Option<Value>,
    pub evaluations: usize,
}

impl SubTest {
    fn fixed(status: TestStatus, threshold: f64) -> Self {
        SubTest {
            status,
            worst: if status == TestStatus::Vacuous {
                0.0
            } else {
                f64::NAN
            },
            threshold,
            witness: None,
            evaluations: 0,
        }
    }

    fn from_worst(worst: Option<(f64, Value)>, threshold: f64, evaluations: usize) -> Self {
        let (w, witness) = worst.map_or((0.0, None), |(w, v)| (w, Some(v)));
        SubTest {
            status: if w <= threshold {
                TestStatus::Passed
            } else {
                TestStatus::Failed
            },
            worst: w,
            threshold,
            witness,
            evaluations,
        }
    }

    pub fn pass(&self) -> bool {
        matches!(self.status, TestStatus::Passed | TestStatus::Vacuous)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "pass": self.pass(),
            "status": self.status,
            "worst": finite_or_null(self.worst),
            "threshold": self.threshold,
            "witness": self.witness.clone().unwrap_or(Value::Null),
            "evaluations": self.evaluations,
        })
    }
}

/// Largest residual, first index wins on ties.
fn worst_of(items: Vec<(f64, Value)>) -> Option<(f64, Value)> {
    let mut best: Option<(f64, Value)> = None;
    for (r, w) in items {
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, w));
        }
    }
    best
}

fn v3(v: &Vector3<f64>) -> Value {
    json!([v[0], v[1], v[2]])
}

#[derive(Debug, Clone)]
pub struct HomogeneityReport {
    pub homogeneous: bool,
    pub foliated: SubTest,
    pub translation: SubTest,
    pub chart_invariance: SubTest,
    pub min_grade: Option<usize>,
    pub pairs: usize,
    pub skipped_pairs: usize,
    pub oracle: &'static str,
    /// Largest change of a transversal chart coordinate along sampled leaf pairs.
    pub transversal_drift: f64,
    /// Largest second derivative of the chart over the region samples.
    pub chart_hessian_max: f64,
    pub warnings: Vec<String>,
    pub params: Value,
}

impl HomogeneityReport {
    pub fn to_json(&self) -> Value {
        json!({
            "homogeneous": self.homogeneous,
            "foliated": self.foliated.to_json(),
            "translation": self.translation.to_json(),
            "chart_invariance": self.chart_invariance.to_json(),
            "diagnostics": {
                "min_grade": self.min_grade,
                "pairs": self.pairs,
                "skipped_pairs": self.skipped_pairs,
                "leaf_oracle": self.oracle,
                "transversal_drift": finite_or_null(self.transversal_drift),
                "chart_hessian_max": finite_or_null(self.chart_hessian_max),
            },
            "warnings": self.warnings,
            "params": self.params,
        })
    }
}

/// `max |d/dx^L W(psi^-1(x), Ft Dpsi(psi^-1(x)))|` at `psi(X)` by central
/// differences. The step `1e-5 max(1, |x^L|)` is halved up to four times to
/// stay in the region and domain.
pub fn chart_invariance_residual(
    model: &ConstitutiveModel,
    chart: &Chart,
    x: &BodyPoint,
    f_tilde: &Matrix3<f64>,
    l: usize,
) -> Result<f64> {
    if l >= chart.leafwise {
        return Err(Error::Chart(format!(
            "coordinate {} is not leafwise (leafwise count {})",
            l + 1,
            chart.leafwise
        )));
    }
    let centre = chart.forward(x)?;
    let h0 = 1e-5 * centre[l].abs().max(1.0);
    for attempt in 0..5 {
        let h = h0 / f64::from(1u32 << attempt);
        let mut plus = centre;
        let mut minus = centre;
        plus[l] += h;
        minus[l] -= h;
        let xp = chart.inverse(&plus)?;
        let xm = chart.inverse(&minus)?;
        if !(in_region(model, chart, &xp) && in_region(model, chart, &xm)) {
            continue;
        }
        let wp = model.evaluate(&xp, &(f_tilde * chart.jacobian(&xp)?))?;
        let wm = model.evaluate(&xm, &(f_tilde * chart.jacobian(&xm)?))?;
        return Ok(((wp - wm) / (2.0 * h)).amax());
    }
    Err(Error::StepOutsideDomain {
        point: [x[0], x[1], x[2]],
    })
}

fn hessian_max(model: &ConstitutiveModel, chart: &Chart, x: &BodyPoint) -> Result<Option<f64>> {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for m in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[m] += h;
        xm[m] -= h;
        if !(in_region(model, chart, &xp) && in_region(model, chart, &xm)) {
            return Ok(None);
        }
        let d = (chart.jacobian(&xp)? - chart.jacobian(&xm)?) / (2.0 * h);
        worst = worst.max(d.amax());
    }
    Ok(Some(worst))
}

/// Run the foliated, translation-jet and derivative tests of `chart`.
pub fn homogeneity_check(
    model: &ConstitutiveModel,
    chart: &Chart,
    cfg: &HomogConfig,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<HomogeneityReport> {
    tol.validate()?;
    sampler.validate()?;
    cfg.validate()?;
    let params = json!({
        "model": model.name(),
        "chart": chart.to_json(),
        "homog": cfg,
    });
    let samples = region_samples(model, chart, cfg.n_samples, sampler.seed)?;
    let p = chart.leafwise;
    if p == 0 {
        return Ok(HomogeneityReport {
            homogeneous: true,
            foliated: SubTest::fixed(TestStatus::Vacuous, ANGLE_TOL),
            translation: SubTest::fixed(TestStatus::Vacuous, tol.residual_tol),
            chart_invariance: SubTest::fixed(TestStatus::Vacuous, tol.residual_tol),
            min_grade: None,
            pairs: 0,
            skipped_pairs: 0,
            oracle: "none",
            transversal_drift: 0.0,
            chart_hessian_max: 0.0,
            warnings: vec![
                "leafwise count is 0: every body is homogeneous in zero leaf directions".into(),
            ],
            params,
        });
    }
    let mut warnings = Vec::new();

    let fibres = samples
        .par_iter()
        .map(|x| material_fibre(model, x, sampler, tol, FibreMode::Pointwise))
        .collect::<Result<Vec<_>>>()?;
    let min_grade = fibres
        .iter()
        .map(|f| f.grade)
        .min()
        .expect("samples non-empty");
    let foliable = p <= min_grade;
    if !foliable {
        warnings.push(format!(
            "leafwise count {p} exceeds the smallest sampled grade {min_grade}; \
             foliated and chart-invariance tests aborted"
        ));
    }

    let foliated = if foliable {
        let items = samples
            .iter()
            .zip(&fibres)
            .map(|(x, fib)| {
                let inv = chart
                    .jacobian(x)?
                    .try_inverse()
                    .ok_or(Error::Chart("singular chart Jacobian".into()))?;
                Ok((0..p)
                    .map(|l| {
                        let a = angle_to_span(&fib.base_basis, &inv.column(l).into_owned());
                        (a, json!({"point": v3(x), "coordinate": l + 1, "angle": a}))
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<_> = items.into_iter().flatten().collect();
        let n = items.len();
        SubTest::from_worst(worst_of(items), ANGLE_TOL, n)
    } else {
        SubTest::fixed(TestStatus::Aborted, ANGLE_TOL)
    };

    let lp = leaf_pairs(model, chart, cfg, sampler, tol)?;
    if lp.skipped > 0 {
        warnings.push(format!("{} leaf pairs could not be formed", lp.skipped));
    }
    let translation = if lp.pairs.is_empty() {
        warnings.push("no leaf pairs: translation test aborted".into());
        SubTest::fixed(TestStatus::Aborted, tol.residual_tol)
    } else {
        let items = lp
            .pairs
            .par_iter()
            .map(|(y, z)| {
                let pj = chart.translation_jet(y, z)?;
                let iso = is_material_isomorphism(model, y, z, &pj, sampler, tol)?;
                Ok((
                    iso.residual,
                    json!({
                        "y": v3(y),
                        "z": v3(z),
                        "P": row_major(&pj),
                        "F": row_major(&iso.witness),
                    }),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        SubTest::from_worst(worst_of(items), tol.residual_tol, lp.pairs.len())
    };

    let chart_invariance = if foliable {
        let anchors = anchors();
        let items = samples
            .par_iter()
            .map(|x| {
                let mut out = Vec::new();
                for (k, ft) in anchors.iter().enumerate() {
                    for l in 0..p {
                        match chart_invariance_residual(model, chart, x, ft, l) {
                            Ok(r) => out.push((
                                r,
                                json!({"point": v3(x), "anchor": k, "coordinate": l + 1}),
                            )),
                            Err(Error::StepOutsideDomain { .. }) => {}
                            Err(e) => return Err(e),
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<_> = items.into_iter().flatten().collect();
        if items.is_empty() {
            warnings.push("every chart-invariance stencil left the region".into());
            SubTest::fixed(TestStatus::Aborted, tol.residual_tol)
        } else {
            let n = items.len();
            SubTest::from_worst(worst_of(items), tol.residual_tol, n)
        }
    } else {
        SubTest::fixed(TestStatus::Aborted, tol.residual_tol)
    };

    let mut transversal_drift: f64 = 0.0;
    for (y, z) in &lp.pairs {
        let d = chart.forward(z)? - chart.forward(y)?;
        for k in p..3 {
            transversal_drift = transversal_drift.max(d[k].abs());
        }
    }
    let mut chart_hessian_max: f64 = 0.0;
    for x in &samples {
        if let Some(h) = hessian_max(model, chart, x)? {
            chart_hessian_max = chart_hessian_max.max(h);
        }
    }

    Ok(HomogeneityReport {
        homogeneous: foliated.pass() && translation.pass(),
        foliated,
        translation,
        chart_invariance,
        min_grade: Some(min_grade),
        pairs: lp.pairs.len(),
        skipped_pairs: lp.skipped,
        oracle: lp.oracle,
        transversal_drift,
        chart_hessian_max,
        warnings,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::builtin;
    use std::collections::BTreeMap;

    fn model(name: &str) -> ConstitutiveModel {
        builtin(name, &BTreeMap::new()).unwrap()
    }

    fn ex1_chart() -> Chart {
        Chart::identity([1, 2, 0])
            .unwrap()
            .with_region("x1>=0.1".parse().unwrap())
            .with_leafwise(2)
            .unwrap()
    }

    fn check(m: &ConstitutiveModel, c: &Chart) -> HomogeneityReport {
        homogeneity_check(
            m,
            c,
            &HomogConfig::default(),
            &SamplerConfig::default(),
            &Tolerances::default(),
        )
        .unwrap()
    }

    #[test]
    fn region_round_trip() {
        let r: Region = "x1>=0.1, r<0.8,X3<=-0.5".parse().unwrap();
        assert_eq!(r.to_string(), "x1>=0.1,r<0.8,x3<=-0.5");
        assert!(!r.contains(&Vector3::new(0.2, 0.0, 0.0)));
        assert!(r.contains(&Vector3::new(0.2, 0.0, -0.6)));
        assert!("y>=1".parse::<Region>().is_err());
        assert!("x4>=1".parse::<Region>().is_err());
        assert!("x1=1".parse::<Region>().is_err());
        assert!("".parse::<Region>().unwrap().bounds.is_empty());
    }

    #[test]
    fn translation_jet_trivial_cases() {
        let y = Vector3::new(0.3, 0.2, 0.1);
        let z = Vector3::new(0.1, -0.4, 0.5);
        let id = Chart::identity([0, 1, 2]).unwrap();
        assert_eq!(id.translation_jet(&y, &z).unwrap(), Matrix3::identity());
        let stretch = Chart::affine(
            Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)),
            Vector3::zeros(),
        )
        .unwrap();
        assert!((stretch.translation_jet(&y, &z).unwrap() - Matrix3::identity()).amax() < 1e-15);
        let cap = Chart::spherical_cap();
        assert!((cap.translation_jet(&y, &y).unwrap() - Matrix3::identity()).amax() < 1e-14);
    }

    #[test]
    fn spherical_cap_is_consistent() {
        let cap = Chart::spherical_cap();
        let x = Vector3::new(0.3, 0.2, 0.1);
        cap.validate_at(&x).unwrap();
        let y = cap.forward(&x).unwrap();
        assert!((y[2] - x.norm()).abs() < 1e-15);
        let tol = Tolerances::default();
        let fd = crate::numkit::jacobian_fd(
            |v| {
                Ok(nalgebra::DVector::from_column_slice(
                    cap.forward(&Vector3::from_column_slice(v))
                        .unwrap()
                        .as_slice(),
                ))
            },
            x.as_slice(),
            &tol,
        )
        .unwrap();
        let j = cap.jacobian(&x).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert!((fd[(r, c)] - j[(r, c)]).abs() < 1e-6);
            }
        }
        assert!(cap.validate_at(&Vector3::new(0.0, 0.0, 0.5)).is_err());
    }

    #[test]
    fn dsl_chart_matches_builtin_affine() {
        let src = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/shear_chart.chart"
        ))
        .unwrap();
        let c = Chart::from_dsl(&src, "shear").unwrap();
        let a = Matrix3::new(1.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let x = Vector3::new(0.3, -0.2, 0.7);
        c.validate_at(&x).unwrap();
        assert!((c.jacobian(&x).unwrap() - a).amax() < 1e-9);
        assert!((c.forward(&x).unwrap() - a * x).amax() < 1e-15);
    }

    #[test]
    fn chart_rejects_bad_inputs() {
        assert!(Chart::identity([0, 0, 1]).is_err());
        assert!(Chart::affine(Matrix3::zeros(), Vector3::zeros()).is_err());
        assert!(Chart::identity([0, 1, 2])
            .unwrap()
            .with_leafwise(4)
            .is_err());
        let c = Chart::identity([0, 1, 2])
            .unwrap()
            .with_region("x1>=5".parse().unwrap())
            .with_leafwise(1)
            .unwrap();
        assert!(matches!(
            homogeneity_check(
                &model("example1"),
                &c,
                &HomogConfig::default(),
                &SamplerConfig::default(),
                &Tolerances::default()
            ),
            Err(Error::Chart(_))
        ));
    }

    #[test]
    fn example1_identity_chart_is_homogeneous() {
        let r = check(&model("example1"), &ex1_chart());
        assert!(r.homogeneous);
        for t in [&r.foliated, &r.translation, &r.chart_invariance] {
            assert_eq!(t.status, TestStatus::Passed);
            assert!(t.worst <= 1e-7);
        }
        assert_eq!(r.min_grade, Some(2));
        assert_eq!(r.transversal_drift, 0.0);
    }

    #[test]
    fn example1_pairs_share_the_plane() {
        let lp = leaf_pairs(
            &model("example1"),
            &ex1_chart(),
            &HomogConfig::default(),
            &SamplerConfig::default(),
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(lp.pairs.len(), 16);
        for (y, z) in &lp.pairs {
            assert_eq!(y[0], z[0]);
        }
    }

    #[test]
    fn example1_sheared_chart_is_accepted() {
        let src = "forward1 = X2 + X1^2\nforward2 = X3\nforward3 = X1\n\
                   inverse1 = X3\ninverse2 = X1 - X3^2\ninverse3 = X2\n";
        let c = Chart::from_dsl(src, "shear1")
            .unwrap()
            .with_region("x1>=0.1".parse().unwrap())
            .with_leafwise(2)
            .unwrap();
        let r = check(&model("example1"), &c);
        assert!(r.homogeneous, "{:?}", r.to_json());
        assert!(r.chart_hessian_max > 1.0);
    }

    #[test]
    fn example2_spherical_cap_is_not_homogeneous() {
        let c = Chart::spherical_cap().with_leafwise(2).unwrap();
        let r = check(&model("example2"), &c);
        assert!(!r.homogeneous);
        assert_eq!(r.translation.status, TestStatus::Failed);
        assert!(r.translation.witness.is_some());
        assert_eq!(r.foliated.status, TestStatus::Passed);
        assert!(r.transversal_drift < 1e-12);
        for (y, z) in leaf_pairs(
            &model("example2"),
            &c,
            &HomogConfig::default(),
            &SamplerConfig::default(),
            &Tolerances::default(),
        )
        .unwrap()
        .pairs
        {
            assert!((y.norm() - z.norm()).abs() <= 1e-6);
        }
    }

    #[test]
    fn traced_oracle_pairs_stay_on_spheres() {
        let c = Chart::spherical_cap().with_leafwise(2).unwrap();
        let cfg = HomogConfig {
            n_pairs: 4,
            oracle: LeafOracle::Traced,
            ..Default::default()
        };
        let lp = leaf_pairs(
            &model("example2"),
            &c,
            &cfg,
            &SamplerConfig::default(),
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(lp.oracle, "traced");
        assert!(!lp.pairs.is_empty());
        for (y, z) in &lp.pairs {
            assert!((y.norm() - z.norm()).abs() <= 1e-4);
            assert!((y - z).norm() > 0.01);
        }
    }

    #[test]
    fn grade_zero_point_pairs_with_itself() {
        let pred = LeafPredicate::Spheres { center: [0.0; 3] };
        let m = model("example2");
        let c = Chart::identity([0, 1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = analytic_partner(&pred, &m, &c, &Vector3::zeros(), 1.0, &mut rng);
        assert_eq!(z, Some(Vector3::zeros()));
    }

    #[test]
    fn chart_invariance_examples() {
        let m = model("example1");
        let x = Vector3::new(0.5, 0.1, -0.2);
        let two = Matrix3::identity() * 2.0;
        let r = chart_invariance_residual(&m, &ex1_chart(), &x, &two, 0).unwrap();
        assert!(r <= 1e-9);
        let across = Chart::identity([0, 1, 2])
            .unwrap()
            .with_region("x1>=0.1".parse().unwrap())
            .with_leafwise(1)
            .unwrap();
        let r = chart_invariance_residual(&m, &across, &x, &two, 0).unwrap();
        assert!(r >= 1e-3);
        let want = 3.0 * 4.0 * (-2.0f64).exp();
        assert!((r - want).abs() < 1e-6);
        let dc = model("det_cal");
        let all = Chart::identity([0, 1, 2])
            .unwrap()
            .with_leafwise(3)
            .unwrap();
        assert_eq!(
            chart_invariance_residual(&dc, &all, &x, &Matrix3::identity(), 2).unwrap(),
            0.0
        );
        assert!(chart_invariance_residual(&m, &across, &x, &two, 1).is_err());
    }

    #[test]
    fn too_many_leafwise_coordinates_abort() {
        let c = Chart::identity([1, 2, 0])
            .unwrap()
            .with_region("x1>=0.1".parse().unwrap())
            .with_leafwise(3)
            .unwrap();
        let r = check(&model("example1"), &c);
        assert_eq!(r.foliated.status, TestStatus::Aborted);
        assert_eq!(r.chart_invariance.status, TestStatus::Aborted);
        assert!(!r.homogeneous);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn zero_leafwise_is_vacuous() {
        let c = Chart::spherical_cap();
        let r = check(&model("example2"), &c);
        assert!(r.homogeneous);
        assert_eq!(r.translation.status, TestStatus::Vacuous);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn auto_axes_put_leaf_directions_first() {
        let axes = identity_axes_for(
            &model("example1"),
            &Vector3::new(0.5, 0.0, 0.0),
            &SamplerConfig::default(),
            &Tolerances::default(),
        )
        .unwrap();
        assert_eq!(axes, [1, 2, 0]);
    }
}
