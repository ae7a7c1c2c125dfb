//! Leaves of the body-material foliation and grade maps over grids.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distribution::{finite_or_null, material_fibre, FibreMode, FibreResult, SamplerConfig};
use crate::error::{Error, Result};
use crate::numkit::{rk4_step, Tolerances};
use crate::output::{grade_color, SvgCanvas};
use crate::response::{BodyPoint, ConstitutiveModel};

/// Largest accepted trace step.
pub const MAX_STEP: f64 = 0.05;
/// Below this projected length the previous direction is treated as lost.
pub const TIE_EPS: f64 = 1e-6;
/// Grade-map nodes whose rank gap is below this are tolerance-sensitive.
pub const SENSITIVE_GAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    DomainExit,
    GradeDrop { grade: usize },
    Failed { message: String },
}

/// A traced piece of leaf.
#[derive(Debug, Clone)]
pub struct LeafTrace {
    pub seed: BodyPoint,
    pub points: Vec<BodyPoint>,
    pub grades: Vec<usize>,
    /// Unit field direction used at each point.
    pub directions: Vec<Vector3<f64>>,
    pub step: f64,
    pub mode: FibreMode,
    pub stop: StopReason,
    /// Largest leaf-predicate residual along the trace, when the model
    /// registers one.
    pub drift: Option<f64>,
    /// Indices of points where the sign convention picked the direction.
    pub tie_breaks: Vec<usize>,
}

impl LeafTrace {
    pub fn last_direction(&self) -> Option<Vector3<f64>> {
        self.directions.last().copied()
    }

    pub fn to_json(&self) -> Value {
        let v3 = |v: &Vector3<f64>| json!([v[0], v[1], v[2]]);
        json!({
            "seed": v3(&self.seed),
            "step": self.step,
            "mode": self.mode.name(),
            "stop": self.stop,
            "drift": self.drift.map(finite_or_null).unwrap_or(Value::Null),
            "tie_breaks": self.tie_breaks,
            "points": self.points.iter().zip(&self.grades).enumerate().map(|(k, (p, g))| {
                json!({"step": k, "x": p[0], "y": p[1], "z": p[2], "grade": g})
            }).collect::<Vec<_>>(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,x,y,z,grade\n");
        for (k, (p, g)) in self.points.iter().zip(&self.grades).enumerate() {
            out.push_str(&format!(
                "{k},{:.16e},{:.16e},{:.16e},{g}\n",
                p[0], p[1], p[2]
            ));
        }
        out
    }

    /// Orthographic projection onto axes `(a, b)`.
    pub fn to_svg(&self, axes: (usize, usize), half_width: f64) -> String {
        let mut c = SvgCanvas::new([-half_width; 2], [half_width; 2]);
        let pts: Vec<[f64; 2]> = self.points.iter().map(|p| [p[axes.0], p[axes.1]]).collect();
        c.polyline(&pts, "#888888");
        for (p, g) in pts.iter().zip(&self.grades) {
            c.dot(*p, 2.0, grade_color(*g as i64));
        }
        c.label(&format!("leaf trace, axes X{} X{}", axes.0 + 1, axes.1 + 1));
        c.finish()
    }
}

/// Direction closest to `d` within the span of `basis`, unit length. Falls
/// back to the first basis column, signed so its first non-zero entry is
/// positive, when `d` is (nearly) orthogonal to the span.
fn align(basis: &DMatrix<f64>, d: &Vector3<f64>) -> Option<(Vector3<f64>, bool)> {
    if basis.ncols() == 0 {
        return None;
    }
    let coeff = basis.transpose() * d;
    let proj = basis * coeff;
    let p = Vector3::new(proj[0], proj[1], proj[2]);
    let n = p.norm();
    if n >= TIE_EPS * d.norm().max(1.0) {
        return Some((p / n, false));
    }
    let col = basis.column(0);
    let mut v = Vector3::new(col[0], col[1], col[2]);
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            v = -v;
        }
    }
    Some((v.normalize(), true))
}

/// Settings of a leaf trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub steps: usize,
    pub h: f64,
    pub mode: FibreMode,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            steps: 200,
            h: 0.01,
            mode: FibreMode::Pointwise,
        }
    }
}

/// Follow the body-material distribution from `seed`, starting along the
/// direction of the distribution closest to `hint`.
pub fn leaf_trace(
    model: &ConstitutiveModel,
    seed: &BodyPoint,
    hint: &Vector3<f64>,
    cfg: &TraceConfig,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<LeafTrace> {
    if !(cfg.h > 0.0 && cfg.h <= MAX_STEP) {
        return Err(Error::Trace(format!(
            "step must lie in (0, {MAX_STEP}], got {}",
            cfg.h
        )));
    }
    if !(hint.norm() > 0.0 && hint.iter().all(|c| c.is_finite())) {
        return Err(Error::Trace(
            "direction hint must be a non-zero vector".into(),
        ));
    }
    let fibre = |x: &BodyPoint| material_fibre(model, x, sampler, tol, cfg.mode);
    let first = fibre(seed)?;
    if first.grade < 1 {
        return Err(Error::Trace(format!(
            "grade at the seed is {}, the leaf is a point",
            first.grade
        )));
    }
    let (mut dir, tie) = align(&first.base_basis, hint).expect("grade >= 1");
    let mut trace = LeafTrace {
        seed: *seed,
        points: vec![*seed],
        grades: vec![first.grade],
        directions: vec![dir],
        step: cfg.h,
        mode: cfg.mode,
        stop: StopReason::Completed,
        drift: None,
        tie_breaks: if tie { vec![0] } else { Vec::new() },
    };
    let mut x = *seed;
    for _ in 0..cfg.steps {
        let field = |y: &Vector3<f64>| -> Result<Vector3<f64>> {
            let r: FibreResult = fibre(y)?;
            align(&r.base_basis, &dir)
                .map(|(v, _)| v)
                .ok_or_else(|| Error::Trace("grade dropped to 0 inside a step".into()))
        };
        let next = match rk4_step(field, &x, cfg.h) {
            Ok(p) => p,
            Err(Error::Domain { .. }) | Err(Error::StepOutsideDomain { .. }) => {
                trace.stop = StopReason::DomainExit;
                break;
            }
            Err(e) => {
                trace.stop = StopReason::Failed {
                    message: e.to_string(),
                };
                break;
            }
        };
        if !model.domain().contains(&next) {
            trace.stop = StopReason::DomainExit;
            break;
        }
        let r = match fibre(&next) {
            Ok(r) => r,
            Err(Error::StepOutsideDomain { .. }) => {
                trace.stop = StopReason::DomainExit;
                break;
            }
            Err(e) => {
                trace.stop = StopReason::Failed {
                    message: e.to_string(),
                };
                break;
            }
        };
        if r.grade < 1 {
            trace.stop = StopReason::GradeDrop { grade: r.grade };
            break;
        }
        let (d, tie) = align(&r.base_basis, &dir).expect("grade >= 1");
        if tie {
            trace.tie_breaks.push(trace.points.len());
        }
        dir = d;
        x = next;
        trace.points.push(x);
        trace.grades.push(r.grade);
        trace.directions.push(dir);
    }
    if let Some(pred) = model.leaves() {
        trace.drift = Some(
            trace
                .points
                .iter()
                .map(|p| pred.residual(seed, p))
                .fold(0.0, f64::max),
        );
    }
    Ok(trace)
}

/// Axis-aligned grid `lo + i (hi - lo) / (n - 1)`, optionally restricted to a
/// ball about the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
    pub ball: Option<f64>,
}

pub const MAX_NODES: usize = 1_000_000;

impl GridSpec {
    pub fn cube(lo: f64, hi: f64, n: usize) -> Self {
        GridSpec {
            lo: [lo; 3],
            hi: [hi; 3],
            n: [n; 3],
            ball: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.contains(&0) {
            return Err(Error::Grid("every axis needs at least one node".into()));
        }
        let total = self.n.iter().try_fold(1usize, |acc, &k| acc.checked_mul(k));
        match total {
            Some(t) if t <= MAX_NODES => {}
            _ => return Err(Error::Grid(format!("grid exceeds {MAX_NODES} nodes"))),
        }
        for k in 0..3 {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite()) || self.hi[k] < self.lo[k] {
                return Err(Error::Grid(format!("bad bounds on axis {}", k + 1)));
            }
        }
        if let Some(r) = self.ball {
            if !(r > 0.0) {
                return Err(Error::Grid("ball radius must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if self.n[axis] == 1 {
            self.lo[axis]
        } else {
            self.lo[axis] + i as f64 * (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
        }
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if self.n[axis] <= 1 {
            0.0
        } else {
            (self.hi[axis] - self.lo[axis]) / (self.n[axis] - 1) as f64
        }
    }

    /// Node index with the first axis fastest.
    pub fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.n[0] * (i[1] + self.n[1] * i[2])
    }

    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        [i, j, k]
    }

    pub fn point(&self, idx: usize) -> BodyPoint {
        let [i, j, k] = self.unindex(idx);
        Vector3::new(self.coord(0, i), self.coord(1, j), self.coord(2, k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeStatus {
    Ok,
    /// Outside the grid ball or the model domain.
    Skipped,
    Failed {
        message: String,
    },
}

/// Grades over a grid with stratum labels.
#[derive(Debug, Clone)]
pub struct GradeField {
    pub spec: GridSpec,
    pub mode: FibreMode,
    /// `-1` for skipped or failed nodes.
    pub grades: Vec<i8>,
    pub rank_gaps: Vec<f64>,
    /// `-1` for nodes without a grade.
    pub strata: Vec<i64>,
    pub status: Vec<NodeStatus>,
    /// Nodes whose held-out validation failed.
    pub unvalidated: Vec<usize>,
}

/// Grade of every grid node.
pub fn grade_map(
    model: &ConstitutiveModel,
    spec: &GridSpec,
    mode: FibreMode,
    sampler: &SamplerConfig,
    tol: &Tolerances,
) -> Result<GradeField> {
    spec.validate()?;
    tol.validate()?;
    sampler.validate()?;
    let nodes: Vec<(i8, f64, NodeStatus, bool)> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let x = spec.point(idx);
            let in_ball = spec.ball.is_none_or(|r| x.norm() <= r);
            if !in_ball || !model.domain().contains(&x) {
                return (-1, f64::NAN, NodeStatus::Skipped, true);
            }
            match material_fibre(model, &x, sampler, tol, mode) {
                Ok(r) => (r.grade as i8, r.rank_gap, NodeStatus::Ok, r.validated),
                Err(e) => (
                    -1,
                    f64::NAN,
                    NodeStatus::Failed {
                        message: e.to_string(),
                    },
                    true,
                ),
            }
        })
        .collect();
    let mut field = GradeField {
        spec: *spec,
        mode,
        grades: Vec::with_capacity(nodes.len()),
        rank_gaps: Vec::with_capacity(nodes.len()),
        strata: Vec::new(),
        status: Vec::with_capacity(nodes.len()),
        unvalidated: Vec::new(),
    };
    for (idx, (g, gap, st, ok)) in nodes.into_iter().enumerate() {
        field.grades.push(g);
        field.rank_gaps.push(gap);
        field.status.push(st);
        if !ok {
            field.unvalidated.push(idx);
        }
    }
    field.strata = label_strata(spec, &field.grades);
    Ok(field)
}

/// 6-connected components of equal grade; unknown nodes get `-1`.
pub fn label_strata(spec: &GridSpec, grades: &[i8]) -> Vec<i64> {
    let mut labels = vec![-1i64; grades.len()];
    let mut next = 0i64;
    let mut stack = Vec::new();
    for start in 0..grades.len() {
        if grades[start] < 0 || labels[start] >= 0 {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let ijk = spec.unindex(idx);
            for axis in 0..3 {
                for delta in [-1i64, 1] {
                    let c = ijk[axis] as i64 + delta;
                    if c < 0 || c >= spec.n[axis] as i64 {
                        continue;
                    }
                    let mut nb = ijk;
                    nb[axis] = c as usize;
                    let j = spec.index(nb);
                    if labels[j] < 0 && grades[j] == grades[start] {
                        labels[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// Summary of a grade field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub counts: BTreeMap<i8, usize>,
    /// Node count times cell volume (degenerate axes contribute a factor 1).
    pub volumes: BTreeMap<i8, f64>,
    pub strata: usize,
    pub unknown: usize,
    pub tolerance_sensitive: usize,
    pub unvalidated: usize,
}

pub fn regularity_report(field: &GradeField) -> RegularityReport {
    let cell: f64 = (0..3)
        .map(|a| {
            let s = field.spec.spacing(a);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .product();
    let mut counts = BTreeMap::new();
    for g in field.grades.iter().filter(|g| **g >= 0) {
        *counts.entry(*g).or_insert(0usize) += 1;
    }
    let volumes = counts.iter().map(|(g, c)| (*g, *c as f64 * cell)).collect();
    let strata = field
        .strata
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    RegularityReport {
        regular: counts.len() == 1,
        unknown: field.grades.iter().filter(|g| **g < 0).count(),
        tolerance_sensitive: field
            .rank_gaps
            .iter()
            .zip(&field.grades)
            .filter(|(gap, g)| **g >= 0 && **gap < SENSITIVE_GAP)
            .count(),
        unvalidated: field.unvalidated.len(),
        counts,
        volumes,
        strata,
    }
}

impl GradeField {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,grade,rank_gap,stratum\n");
        for idx in 0..self.grades.len() {
            let p = self.spec.point(idx);
            let gap = self.rank_gaps[idx];
            let gap = if gap.is_finite() {
                format!("{gap:.16e}")
            } else if gap.is_nan() {
                String::new()
            } else {
                "inf".to_string()
            };
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{},{},{}\n",
                p[0], p[1], p[2], self.grades[idx], gap, self.strata[idx]
            ));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let report = regularity_report(self);
        let nodes: Vec<Value> = (0..self.grades.len())
            .map(|idx| {
                let p = self.spec.point(idx);
                let mut n = json!({
                    "x": p[0], "y": p[1], "z": p[2],
                    "grade": self.grades[idx],
                    "rank_gap": finite_or_null(self.rank_gaps[idx]),
                    "stratum": self.strata[idx],
                });
                if self.grades[idx] >= 0 && self.rank_gaps[idx] < SENSITIVE_GAP {
                    n["tolerance_sensitive"] = json!(true);
                }
                if let NodeStatus::Failed { message } = &self.status[idx] {
                    n["error"] = json!(message);
                }
                n
            })
            .collect();
        json!({
            "grid": self.spec,
            "mode": self.mode.name(),
            "report": report,
            "nodes": nodes,
        })
    }

    /// Slice through the node plane `axis = value` (nearest node plane).
    pub fn slice_svg(&self, axis: usize, value: f64) -> Result<String> {
        if axis > 2 {
            return Err(Error::Grid(format!(
                "slice axis must be 1..3, got {}",
                axis + 1
            )));
        }
        let plane = (0..self.spec.n[axis])
            .min_by(|&a, &b| {
                let da = (self.spec.coord(axis, a) - value).abs();
                let db = (self.spec.coord(axis, b) - value).abs();
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("n >= 1");
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let pad = |k: usize| {
            let s = self.spec.spacing(k);
            if s > 0.0 {
                s / 2.0
            } else {
                0.5
            }
        };
        let lo = [self.spec.lo[a] - pad(a), self.spec.lo[b] - pad(b)];
        let hi = [self.spec.hi[a] + pad(a), self.spec.hi[b] + pad(b)];
        let mut c = SvgCanvas::new(lo, hi);
        for idx in 0..self.grades.len() {
            let ijk = self.spec.unindex(idx);
            if ijk[axis] != plane {
                continue;
            }
            let p = self.spec.point(idx);
            c.cell(
                [p[a], p[b]],
                2.0 * pad(a),
                2.0 * pad(b),
                grade_color(self.grades[idx] as i64),
            );
        }
        c.label(&format!(
            "grade slice X{} = {}",
            axis + 1,
            self.spec.coord(axis, plane)
        ));
        Ok(c.finish())
    }
}
