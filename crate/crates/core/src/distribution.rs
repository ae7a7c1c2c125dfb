//! Admissibility systems, material-distribution fibres, grades of uniformity
//! and symmetry algebras.
//!
//! A germ candidate at `X` is a 12-vector `(dX^1, dX^2, dX^3, dP^1_1, dP^1_2,
//! ..., dP^3_3)`. It is admissible when the derivative of `W` along the
//! left-invariant field it generates vanishes for every deformation gradient
//! `F`; that condition is linear in the candidate and is sampled over `F`.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numkit::{nullspace_detailed, range_basis, FullSvd, Mat, NullSpace, Tolerances};
use crate::response::{BodyPoint, ConstitutiveModel};

/// Length of a germ candidate.
pub const GERM_LEN: usize = 12;

/// Deformation gradients included in every sample set.
pub fn anchors() -> [Matrix3<f64>; 3] {
    [
        Matrix3::identity(),
        Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0)),
        Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 0.5)),
    ]
}

/// A germ candidate split into its base and fibre parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GermCandidate {
    pub delta_x: Vector3<f64>,
    pub delta_p: Matrix3<f64>,
}

impl GermCandidate {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != GERM_LEN {
            return Err(Error::Shape {
                rows: GERM_LEN,
                cols: 1,
                entries: v.len(),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("germ candidate".into()));
        }
        Ok(GermCandidate {
            delta_x: Vector3::new(v[0], v[1], v[2]),
            delta_p: Matrix3::from_fn(|l, i| v[3 + 3 * l + i]),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = self.delta_x.iter().copied().collect::<Vec<_>>();
        out.extend(crate::response::row_major(&self.delta_p));
        out
    }
}

/// How deformation gradients are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub k_init: usize,
    pub k_max: usize,
    pub det_min: f64,
    pub cond_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 0,
            k_init: 8,
            k_max: 128,
            det_min: 0.1,
            cond_max: 50.0,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        SamplerConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_init < 4 {
            return Err(Error::Sampler(format!(
                "k_init must be >= 4, got {}",
                self.k_init
            )));
        }
        if self.k_max < 2 * self.k_init {
            return Err(Error::Sampler(format!(
                "k_max must be >= 2*k_init, got {} < {}",
                self.k_max,
                2 * self.k_init
            )));
        }
        if !(self.det_min > 0.0 && self.cond_max >= 1.0) {
            return Err(Error::Sampler(
                "det_min must be positive and cond_max >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream key derived from the seed and a list of points, so results do not
/// depend on evaluation order.
pub fn point_key(seed: u64, points: &[&BodyPoint]) -> u64 {
    let mut h = splitmix(seed);
    for p in points {
        for c in p.iter() {
            // +0.0 folds -0.0 onto 0.0
            h = splitmix(h ^ (c + 0.0).to_bits());
        }
    }
    h
}

/// Rejection sampler for well-conditioned deformation gradients.
#[derive(Debug, Clone)]
pub struct FSampler {
    rng: ChaCha8Rng,
    det_min: f64,
    cond_max: f64,
}

impl FSampler {
    pub fn new(cfg: &SamplerConfig, key: u64) -> Self {
        FSampler {
            rng: ChaCha8Rng::seed_from_u64(key),
            det_min: cfg.det_min,
            cond_max: cfg.cond_max,
        }
    }

    pub fn draw(&mut self) -> Result<Matrix3<f64>> {
        for _ in 0..10_000 {
            let f = Matrix3::<f64>::from_fn(|_, _| self.rng.random_range(-2.0..=2.0));
            if f.determinant().abs() < self.det_min {
                continue;
            }
            let sv = f.singular_values();
            let cond = sv.max() / sv.min();
            if cond <= self.cond_max {
                return Ok(f);
            }
        }
        Err(Error::Sampler(
            "no deformation gradient satisfied det_min/cond_max".into(),
        ))
    }

    pub fn draw_n(&mut self, n: usize) -> Result<Vec<Matrix3<f64>>> {
        (0..n).map(|_| self.draw()).collect()
    }
}

/// Admissibility block `B(F)` (`d x 12`) at `X`.
///
/// `B (dX, dP) = sum_m dX^m dW/dX^m + sum_{l,i} (sum_j dW/dF^j_i F^j_l) dP^l_i`.
pub fn admissibility_block(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    f: &Mat,
    tol: &Tolerances,
) -> Result<Mat> {
    if f.rows() != 3 || f.cols() != 3 {
        return Err(Error::Shape {
            rows: 3,
            cols: 3,
            entries: f.rows() * f.cols(),
        });
    }
    let m = Matrix3::from_fn(|r, c| f.get(r, c));
    Mat::from_dmatrix(block(model, x, &m, tol)?)
}

pub(crate) fn block(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    f: &Matrix3<f64>,
    tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    let (dx, df) = model.derivatives(x, f, tol)?;
    let d = model.dim();
    let mut b = DMatrix::zeros(d, GERM_LEN);
    b.columns_mut(0, 3).copy_from(&dx);
    for c in 0..d {
        for l in 0..3 {
            for i in 0..3 {
                let mut s = 0.0;
                for j in 0..3 {
                    s += df[(c, 3 * j + i)] * f[(j, l)];
                }
                b[(c, 3 + 3 * l + i)] = s;
            }
        }
    }
    Ok(b)
}

/// Pointwise fibres, or fibres of first-order germs of admissible fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FibreMode {
    Pointwise,
    /// `rho`: cloud radius, `cloud`: number of sphere directions.
    Germ1 {
        rho: f64,
        cloud: usize,
    },
}

impl FibreMode {
    pub fn germ1() -> Self {
        FibreMode::Germ1 {
            rho: 1e-2,
            cloud: 20,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FibreMode::Pointwise => "pointwise",
            FibreMode::Germ1 { .. } => "germ1",
        }
    }
}

/// Solution of the admissibility system at one body point.
#[derive(Debug, Clone)]
pub struct FibreResult {
    pub point: BodyPoint,
    pub mode: FibreMode,
    /// `12 x dim`, orthonormal columns.
    pub fibre_basis: DMatrix<f64>,
    /// `3 x grade`, orthonormal columns.
    pub base_basis: DMatrix<f64>,
    pub grade: usize,
    /// Symmetry-algebra basis, one `dP` per entry.
    pub sym_basis: Vec<Matrix3<f64>>,
    pub samples_used: usize,
    pub rank_gap: f64,
    /// Worst held-out residual over the fibre basis (max-norm).
    pub residual: f64,
    pub validated: bool,
    /// Null dimension after each sampling round.
    pub history: Vec<usize>,
}

impl FibreResult {
    pub fn fibre_dim(&self) -> usize {
        self.fibre_basis.ncols()
    }

    pub fn sym_dim(&self) -> usize {
        self.sym_basis.len()
    }

    pub fn to_json(&self) -> Value {
        let cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.column_iter()
                .map(|c| c.iter().copied().collect())
                .collect()
        };
        let mut mode = json!({ "name": self.mode.name() });
        if let FibreMode::Germ1 { rho, cloud } = self.mode {
            mode["rho"] = json!(rho);
            mode["cloud"] = json!(cloud);
        }
        json!({
            "point": [self.point[0], self.point[1], self.point[2]],
            "grade": self.grade,
            "fibre_dim": self.fibre_dim(),
            "sym_dim": self.sym_dim(),
            "rank_gap": finite_or_null(self.rank_gap),
            "mode": self.mode.name(),
            "mode_params": mode,
            "base_basis": cols(&self.base_basis),
            "fibre_basis": cols(&self.fibre_basis),
            "sym_basis": self.sym_basis.iter()
                .map(|m| crate::response::row_major(m).to_vec())
                .collect::<Vec<_>>(),
            "samples_used": self.samples_used,
            "residual": finite_or_null(self.residual),
            "validated": self.validated,
            "history": self.history,
        })
    }
}

pub(crate) fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// A linear system in some unknown vector, assembled one `F` at a time.
trait System {
    fn unknowns(&self) -> usize;
    fn rows(&self, f: &Matrix3<f64>) -> Result<DMatrix<f64>>;
}

struct PointSystem<'a> {
    model: &'a ConstitutiveModel,
    x: BodyPoint,
    tol: Tolerances,
}

impl System for PointSystem<'_> {
    fn unknowns(&self) -> usize {
        GERM_LEN
    }

    fn rows(&self, f: &Matrix3<f64>) -> Result<DMatrix<f64>> {
        block(self.model, &self.x, f, &self.tol)
    }
}

/// Unknowns `(dX0, dP0, A, Q)`: the germ is `dX(X+s) = dX0 + A s`,
/// `dP(X+s) = dP0 + Q s`. Rows force the admissibility expression to vanish
/// at `s = 0` together with its gradient in `s`.
struct GermSystem<'a> {
    model: &'a ConstitutiveModel,
    x: BodyPoint,
    tol: Tolerances,
    offsets: Vec<Vector3<f64>>,
    /// `3 x offsets.len()`: least-squares weights of the gradient.
    grad_weights: DMatrix<f64>,
}

const GERM1_LEN: usize = 48;

impl System for GermSystem<'_> {
    fn unknowns(&self) -> usize {
        GERM1_LEN
    }

    fn rows(&self, f: &Matrix3<f64>) -> Result<DMatrix<f64>> {
        let d = self.model.dim();
        let mut out = DMatrix::zeros(4 * d, GERM1_LEN);
        let centre = block(self.model, &self.x, f, &self.tol)?;
        out.view_mut((0, 0), (d, GERM_LEN)).copy_from(&centre);
        for (p, s) in self.offsets.iter().enumerate() {
            let b = if s.iter().all(|c| *c == 0.0) {
                centre.clone()
            } else {
                block(self.model, &(self.x + s), f, &self.tol)?
            };
            for k in 0..3 {
                let w = self.grad_weights[(k, p)];
                if w == 0.0 {
                    continue;
                }
                let r0 = d * (k + 1);
                for c in 0..d {
                    for col in 0..GERM_LEN {
                        out[(r0 + c, col)] += w * b[(c, col)];
                    }
                    // A_{m,q} at 12 + 3m + q
                    for m in 0..3 {
                        for q in 0..3 {
                            out[(r0 + c, 12 + 3 * m + q)] += w * b[(c, m)] * s[q];
                        }
                    }
                    // Q_{(l,i),q} at 21 + 3(3l + i) + q
                    for li in 0..9 {
                        for q in 0..3 {
                            out[(r0 + c, 21 + 3 * li + q)] += w * b[(c, 3 + li)] * s[q];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Fibonacci points on the unit sphere.
pub fn fibonacci_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn monomials(max_degree: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        for a in (0..=deg).rev() {
            for b in (0..=deg - a).rev() {
                out.push([a, b, deg - a - b]);
            }
        }
    }
    out
}

impl<'a> GermSystem<'a> {
    fn new(
        model: &'a ConstitutiveModel,
        x: BodyPoint,
        tol: Tolerances,
        rho: f64,
        cloud: usize,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) || cloud < 8 {
            return Err(Error::Sampler(format!(
                "germ1 needs rho > 0 and at least 8 cloud directions (rho = {rho}, cloud = {cloud})"
            )));
        }
        let dirs = fibonacci_directions(cloud);
        let mut rho_eff = rho;
        let mut shrinks = 0;
        let unit: Vec<Vector3<f64>> = loop {
            let pts: Vec<Vector3<f64>> = dirs
                .iter()
                .flat_map(|u| [*u, -*u, *u * 0.5, -*u * 0.5])
                .collect();
            if pts
                .iter()
                .all(|t| model.domain().contains(&(x + t * rho_eff)))
            {
                break pts;
            }
            shrinks += 1;
            if shrinks > 4 {
                return Err(Error::StepOutsideDomain {
                    point: [x[0], x[1], x[2]],
                });
            }
            rho_eff *= 0.5;
        };
        let monos = monomials(4);
        let mut vander = DMatrix::zeros(unit.len() + 1, monos.len());
        let all: Vec<Vector3<f64>> = std::iter::once(Vector3::zeros())
            .chain(unit.iter().copied())
            .collect();
        for (p, t) in all.iter().enumerate() {
            for (j, e) in monos.iter().enumerate() {
                vander[(p, j)] =
                    t[0].powi(e[0] as i32) * t[1].powi(e[1] as i32) * t[2].powi(e[2] as i32);
            }
        }
        let svd = FullSvd::new(&vander)?;
        let smin = svd.sigma.last().copied().unwrap_or(0.0);
        if !(smin > 1e-10 * svd.sigma_max()) {
            return Err(Error::Sampler(
                "germ1 cloud does not determine the fit".into(),
            ));
        }
        // pinv = V diag(1/sigma) U^T
        let mut scaled_u = svd.u.clone();
        for (k, s) in svd.sigma.iter().enumerate() {
            scaled_u.column_mut(k).scale_mut(1.0 / s);
        }
        let pinv = &svd.v * scaled_u.transpose();
        let mut grad_weights = DMatrix::zeros(3, all.len());
        for k in 0..3 {
            let mut e = [0u32; 3];
            e[k] = 1;
            let j = monos.iter().position(|m| *m == e).expect("linear monomial");
            for p in 0..all.len() {
                grad_weights[(k, p)] = pinv[(j, p)] / rho_eff;
            }
        }
        // offsets[0] is the centre itself
        let offsets = all.iter().map(|t| t * rho_eff).collect();
        Ok(GermSystem {
            model,
            x,
            tol,
            offsets,
            grad_weights,
        })
    }
}

struct Solved {
    null: NullSpace,
    samples_used: usize,
    history: Vec<usize>,
    residual: f64,
}

fn solve<S: System>(sys: &S, cfg: &SamplerConfig, key: u64, rank_rel: f64) -> Result<Solved> {
    let mut sampler = FSampler::new(cfg, key);
    let mut stack = DMatrix::<f64>::zeros(0, sys.unknowns());
    let append = |stack: &mut DMatrix<f64>, f: &Matrix3<f64>| -> Result<()> {
        let r = sys.rows(f)?;
        let old = stack.nrows();
        let mut grown = DMatrix::zeros(old + r.nrows(), sys.unknowns());
        grown.rows_mut(0, old).copy_from(stack);
        grown.rows_mut(old, r.nrows()).copy_from(&r);
        *stack = grown;
        Ok(())
    };
    for f in anchors() {
        append(&mut stack, &f)?;
    }
    let mut k = 0;
    let mut history = Vec::new();
    let mut target = cfg.k_init;
    let null = loop {
        if target > cfg.k_max {
            return Err(Error::Instability { history });
        }
        for f in sampler.draw_n(target - k)? {
            append(&mut stack, &f)?;
        }
        k = target;
        let ns = nullspace_detailed(&stack, rank_rel)?;
        history.push(ns.dim());
        let n = history.len();
        if n >= 2 && history[n - 1] == history[n - 2] {
            break ns;
        }
        target *= 2;
    };
    let held_out = sampler.draw_n(k)?;
    let mut residual: f64 = 0.0;
    if null.dim() > 0 {
        for f in &held_out {
            let r = sys.rows(f)?;
            residual = residual.max((r * &null.basis).amax());
        }
    }
    Ok(Solved {
        null,
        samples_used: anchors().len() + k,
        history,
        residual,
    })
}

/// Base basis, grade, symmetry algebra and rank gap.
type Projection = (DMatrix<f64>, usize, Vec<Matrix3<f64>>, f64);

/// Grade, base basis and symmetry algebra of an orthonormal fibre basis.
fn project(fibre: &DMatrix<f64>, rank_rel: f64) -> Result<Projection> {
    let dim = fibre.ncols();
    if dim == 0 {
        return Ok((DMatrix::zeros(3, 0), 0, Vec::new(), f64::INFINITY));
    }
    let dx = fibre.rows(0, 3).into_owned();
    let svd = FullSvd::new(&dx)?;
    let grade = svd.rank_above(rank_rel).min(3).min(dim);
    let base = svd.u.columns(0, grade).into_owned();
    let coeffs = svd.v.columns(grade, dim - grade);
    let sym_vecs = fibre.rows(3, 9) * coeffs;
    let sym = sym_vecs
        .column_iter()
        .map(|c| Matrix3::from_fn(|l, i| c[3 * l + i]))
        .collect();
    let gap = crate::numkit::rank_gap(&svd.sigma, rank_rel);
    Ok((base, grade, sym, gap))
}

/// Fibre of the material distribution at `X`.
pub fn material_fibre(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    sampler: &SamplerConfig,
    tol: &Tolerances,
    mode: FibreMode,
) -> Result<FibreResult> {
    tol.validate()?;
    sampler.validate()?;
    if !model.domain().contains(x) {
        return Err(Error::Domain {
            point: [x[0], x[1], x[2]],
        });
    }
    let key = point_key(sampler.seed, &[x]);
    let (fibre, system_gap, solved) = match mode {
        FibreMode::Pointwise => {
            let sys = PointSystem {
                model,
                x: *x,
                tol: *tol,
            };
            let solved = solve(&sys, sampler, key, tol.rank_rel)?;
            (solved.null.basis.clone(), solved.null.gap, solved)
        }
        FibreMode::Germ1 { rho, cloud } => {
            let sys = GermSystem::new(model, *x, *tol, rho, cloud)?;
            let solved = solve(&sys, sampler, key, tol.rank_rel)?;
            let top = solved.null.basis.rows(0, GERM_LEN).into_owned();
            let (fibre, gap) = if top.ncols() == 0 {
                (DMatrix::zeros(GERM_LEN, 0), f64::INFINITY)
            } else {
                let (basis, svd) = range_basis(&top, tol.rank_rel)?;
                (basis, crate::numkit::rank_gap(&svd.sigma, tol.rank_rel))
            };
            (fibre, solved.null.gap.min(gap), solved)
        }
    };
    let (base_basis, grade, sym_basis, base_gap) = project(&fibre, tol.rank_rel)?;
    Ok(FibreResult {
        point: *x,
        mode,
        fibre_basis: fibre,
        base_basis,
        grade,
        sym_basis,
        samples_used: solved.samples_used,
        rank_gap: system_gap.min(base_gap),
        residual: solved.residual,
        validated: solved.residual <= tol.residual_tol,
        history: solved.history,
    })
}

/// Symmetry algebra at `X` (pointwise fibre elements with `dX = 0`).
pub fn symmetry_algebra(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<Vec<Matrix3<f64>>> {
    Ok(material_fibre(model, x, sampler, tol, FibreMode::Pointwise)?.sym_basis)
}

/// Outcome of a material-isomorphism test.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoCheck {
    pub residual: f64,
    pub verdict: bool,
    /// Deformation gradient attaining the residual.
    pub witness: Matrix3<f64>,
    pub samples: usize,
}

/// Checks `W(X, F P) = W(Y, F)` over the anchors and sampled `F`.
pub fn is_material_isomorphism(
    model: &ConstitutiveModel,
    x: &BodyPoint,
    y: &BodyPoint,
    p: &Matrix3<f64>,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<IsoCheck> {
    tol.validate()?;
    sampler.validate()?;
    let det = p.determinant();
    if !(det.abs() >= crate::response::MIN_DET) {
        return Err(Error::Singular { det });
    }
    let mut fs = anchors().to_vec();
    let mut rng = FSampler::new(sampler, point_key(sampler.seed, &[x, y]));
    fs.extend(rng.draw_n(sampler.k_init)?);
    let mut worst = (0.0, fs[0]);
    for f in &fs {
        let a = model.evaluate(x, &(f * p))?;
        let b = model.evaluate(y, f)?;
        let r = (a - b).amax();
        if r > worst.0 {
            worst = (r, *f);
        }
    }
    Ok(IsoCheck {
        residual: worst.0,
        verdict: worst.0 <= tol.residual_tol,
        witness: worst.1,
        samples: fs.len(),
    })
}
