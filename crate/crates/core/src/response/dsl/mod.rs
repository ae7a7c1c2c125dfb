//! The `.mdl` expression language.
//!
//! ```text
//! # Example 1 of the piecewise cube
//! domain cube 1
//! let s = if(X1 <= 0, 1, 1 + exp(-1/X1))
//! response = s * (F' * F - I)
//! ```
//!
//! Values have one of three kinds (scalar, vector3, matrix3), checked before
//! any evaluation. `let` bindings are evaluated in order on every call; `if`
//! only evaluates the selected branch.

mod ast;
mod lexer;
mod parser;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::Serialize;

pub use ast::{BinOp, CmpOp, DomainDecl, Expr, ExprKind, Program, Stmt};
pub use lexer::Pos;
pub use parser::parse_program;

use super::{row_major, BodyPoint, ConstitutiveModel, Domain, Response};
use crate::error::{Error, Result};
use lexer::err;

pub const MAX_SOURCE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Scalar,
    Vector3,
    Matrix3,
}

impl Kind {
    /// Number of scalar components.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(self) -> usize {
        match self {
            Kind::Scalar => 1,
            Kind::Vector3 => 3,
            Kind::Matrix3 => 9,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Scalar => "scalar",
            Kind::Vector3 => "vector3",
            Kind::Matrix3 => "matrix3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    S(f64),
    V(Vector3<f64>),
    M(Matrix3<f64>),
}

impl Value {
    fn kind(&self) -> Kind {
        match self {
            Value::S(_) => Kind::Scalar,
            Value::V(_) => Kind::Vector3,
            Value::M(_) => Kind::Matrix3,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Value::S(s) => s.is_finite(),
            Value::V(v) => v.iter().all(|c| c.is_finite()),
            Value::M(m) => m.iter().all(|c| c.is_finite()),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        match self {
            Value::S(s) => vec![*s],
            Value::V(v) => v.iter().copied().collect(),
            Value::M(m) => row_major(m).to_vec(),
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Value::S(s) => Some(*s),
            _ => None,
        }
    }
}

/// Where a program is used; decides the admissible inputs and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    /// One `response` output; inputs `X1 X2 X3 X F I`.
    Model,
    /// Scalar outputs `forward1..3` and `inverse1..3`; no `F`.
    Chart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Det,
    Tr,
    Inv,
    Exp,
    Log,
    Sqrt,
    Abs,
    Norm2,
    Dot,
    Cross,
    Outer,
    Vec3,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "det" => Func::Det,
            "tr" => Func::Tr,
            "inv" => Func::Inv,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "norm2" => Func::Norm2,
            "dot" => Func::Dot,
            "cross" => Func::Cross,
            "outer" => Func::Outer,
            "vec" => Func::Vec3,
            _ => return None,
        })
    }

    fn signature(self) -> (&'static [Kind], Kind) {
        use Kind::*;
        match self {
            Func::Det | Func::Tr => (&[Matrix3], Scalar),
            Func::Inv => (&[Matrix3], Matrix3),
            Func::Exp | Func::Log | Func::Sqrt | Func::Abs => (&[Scalar], Scalar),
            Func::Norm2 => (&[Vector3], Scalar),
            Func::Dot => (&[Vector3, Vector3], Scalar),
            Func::Cross => (&[Vector3, Vector3], Vector3),
            Func::Outer => (&[Vector3, Vector3], Matrix3),
            Func::Vec3 => (&[Scalar, Scalar, Scalar], Vector3),
        }
    }
}

const RESERVED: [&str; 10] = [
    "X1", "X2", "X3", "X", "F", "I", "if", "param", "let", "domain",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Input {
    X1,
    X2,
    X3,
    X,
    F,
    I,
}

#[derive(Debug, Clone)]
enum Op {
    Const(Value),
    Input(Input),
    Let(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Transpose(Box<Node>),
    Call(Func, Vec<Node>),
    If(CmpOp, Box<[Node; 4]>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    kind: Kind,
    pos: Pos,
}

/// A kind-checked program ready for evaluation.
#[derive(Debug, Clone)]
pub struct Compiled {
    source: Program,
    params: BTreeMap<String, f64>,
    domain: Domain,
    lets: Vec<Node>,
    outputs: Vec<(String, Node)>,
}

fn type_err(pos: Pos, msg: String) -> Error {
    err(pos, format!("type error: {msg}"))
}

struct Scope<'a> {
    ctx: Context,
    params: &'a BTreeMap<String, f64>,
    lets: &'a BTreeMap<String, (usize, Kind)>,
}

impl Scope<'_> {
    fn node(&self, e: &Expr) -> Result<Node> {
        let pos = e.pos;
        let (op, kind) = match &e.kind {
            ExprKind::Num(v) => (Op::Const(Value::S(*v)), Kind::Scalar),
            ExprKind::Ident(name) => self.ident(name, pos)?,
            ExprKind::Neg(inner) => {
                let n = self.node(inner)?;
                let k = n.kind;
                (Op::Neg(Box::new(n)), k)
            }
            ExprKind::Binary(op, lhs, rhs) => {
                let (a, b) = (self.node(lhs)?, self.node(rhs)?);
                let k = binary_kind(*op, a.kind, b.kind).ok_or_else(|| {
                    let sym = match op {
                        BinOp::Add => "+",
                        BinOp::Sub => "-",
                        BinOp::Mul => "*",
                        BinOp::Div => "/",
                    };
                    type_err(
                        pos,
                        format!("cannot apply `{sym}` to {} and {}", a.kind, b.kind),
                    )
                })?;
                (Op::Bin(*op, Box::new(a), Box::new(b)), k)
            }
            ExprKind::Pow(base, n) => {
                let b = self.node(base)?;
                if b.kind == Kind::Vector3 {
                    return Err(type_err(pos, "cannot raise a vector3 to a power".into()));
                }
                let k = b.kind;
                (Op::Pow(Box::new(b), *n), k)
            }
            ExprKind::Transpose(inner) => {
                let n = self.node(inner)?;
                if n.kind == Kind::Vector3 {
                    return Err(type_err(pos, "cannot transpose a vector3".into()));
                }
                let k = n.kind;
                (Op::Transpose(Box::new(n)), k)
            }
            ExprKind::Call(name, args) => {
                let func = Func::lookup(name)
                    .ok_or_else(|| err(pos, format!("unknown function `{name}`")))?;
                let (want, out) = func.signature();
                if want.len() != args.len() {
                    return Err(type_err(
                        pos,
                        format!(
                            "{name} takes {} argument(s), got {}",
                            want.len(),
                            args.len()
                        ),
                    ));
                }
                let mut nodes = Vec::with_capacity(args.len());
                for (a, k) in args.iter().zip(want) {
                    let n = self.node(a)?;
                    if n.kind != *k {
                        return Err(type_err(
                            a.pos,
                            format!("{name} expects {k}, got {}", n.kind),
                        ));
                    }
                    nodes.push(n);
                }
                (Op::Call(func, nodes), out)
            }
            ExprKind::If {
                op,
                lhs,
                rhs,
                then,
                otherwise,
            } => {
                let l = self.node(lhs)?;
                let r = self.node(rhs)?;
                if l.kind != Kind::Scalar || r.kind != Kind::Scalar {
                    return Err(type_err(pos, "if condition must compare scalars".into()));
                }
                let t = self.node(then)?;
                let o = self.node(otherwise)?;
                if t.kind != o.kind {
                    return Err(type_err(
                        pos,
                        format!("if branches differ: {} vs {}", t.kind, o.kind),
                    ));
                }
                let k = t.kind;
                (Op::If(*op, Box::new([l, r, t, o])), k)
            }
        };
        Ok(Node { op, kind, pos })
    }

    fn ident(&self, name: &str, pos: Pos) -> Result<(Op, Kind)> {
        let input = match name {
            "X1" => Some((Input::X1, Kind::Scalar)),
            "X2" => Some((Input::X2, Kind::Scalar)),
            "X3" => Some((Input::X3, Kind::Scalar)),
            "X" => Some((Input::X, Kind::Vector3)),
            "F" if self.ctx == Context::Model => Some((Input::F, Kind::Matrix3)),
            "I" => Some((Input::I, Kind::Matrix3)),
            _ => None,
        };
        if let Some((i, k)) = input {
            return Ok((Op::Input(i), k));
        }
        if let Some(v) = self.params.get(name) {
            return Ok((Op::Const(Value::S(*v)), Kind::Scalar));
        }
        if let Some((slot, k)) = self.lets.get(name) {
            return Ok((Op::Let(*slot), *k));
        }
        Err(err(pos, format!("unknown identifier `{name}`")))
    }
}

fn binary_kind(op: BinOp, a: Kind, b: Kind) -> Option<Kind> {
    use Kind::*;
    match op {
        BinOp::Add | BinOp::Sub => (a == b).then_some(a),
        BinOp::Mul => match (a, b) {
            (Scalar, k) | (k, Scalar) => Some(k),
            (Matrix3, Matrix3) => Some(Matrix3),
            (Matrix3, Vector3) => Some(Vector3),
            _ => None,
        },
        BinOp::Div => (b == Scalar).then_some(a),
    }
}

fn chart_outputs() -> [&'static str; 6] {
    [
        "forward1", "forward2", "forward3", "inverse1", "inverse2", "inverse3",
    ]
}

/// Kind-check a parsed program for the given context.
pub fn compile(program: &Program, ctx: Context) -> Result<Compiled> {
    let mut params = BTreeMap::new();
    let mut lets: BTreeMap<String, (usize, Kind)> = BTreeMap::new();
    let mut let_nodes = Vec::new();
    let mut outputs: Vec<(String, Node)> = Vec::new();
    let mut domain = None;
    let taken =
        |name: &str, params: &BTreeMap<String, f64>, lets: &BTreeMap<String, (usize, Kind)>| {
            RESERVED.contains(&name)
                || Func::lookup(name).is_some()
                || params.contains_key(name)
                || lets.contains_key(name)
        };
    for stmt in &program.stmts {
        match stmt {
            Stmt::Param { name, value, pos } => {
                if taken(name, &params, &lets) {
                    return Err(err(*pos, format!("name `{name}` is already in use")));
                }
                params.insert(name.clone(), *value);
            }
            Stmt::Let { name, expr, pos } => {
                if taken(name, &params, &lets) {
                    return Err(err(*pos, format!("name `{name}` is already in use")));
                }
                let node = Scope {
                    ctx,
                    params: &params,
                    lets: &lets,
                }
                .node(expr)?;
                lets.insert(name.clone(), (let_nodes.len(), node.kind));
                let_nodes.push(node);
            }
            Stmt::Output { name, expr, pos } => {
                let allowed = match ctx {
                    Context::Model => name == "response",
                    Context::Chart => chart_outputs().contains(&name.as_str()),
                };
                if !allowed {
                    return Err(err(*pos, format!("unknown statement or output `{name}`")));
                }
                if outputs.iter().any(|(n, _)| n == name) {
                    return Err(err(*pos, format!("`{name}` is defined twice")));
                }
                let node = Scope {
                    ctx,
                    params: &params,
                    lets: &lets,
                }
                .node(expr)?;
                if ctx == Context::Chart && node.kind != Kind::Scalar {
                    return Err(type_err(
                        *pos,
                        format!("{name} must be scalar, got {}", node.kind),
                    ));
                }
                outputs.push((name.clone(), node));
            }
            Stmt::Domain { decl, pos } => {
                if domain.is_some() {
                    return Err(err(*pos, "domain declared twice"));
                }
                domain = Some(match *decl {
                    DomainDecl::Cube(h) if h > 0.0 => Domain::Cube { half: h },
                    DomainDecl::Ball(r) if r > 0.0 => Domain::Ball { radius: r },
                    _ => return Err(err(*pos, "domain size must be positive")),
                });
            }
        }
    }
    let required: Vec<&str> = match ctx {
        Context::Model => vec!["response"],
        Context::Chart => chart_outputs().to_vec(),
    };
    let end = Pos {
        line: program_end_line(program),
        col: 1,
    };
    for r in &required {
        if !outputs.iter().any(|(n, _)| n == r) {
            return Err(err(end, format!("missing `{r} = ...` statement")));
        }
    }
    Ok(Compiled {
        source: program.clone(),
        params,
        domain: domain.unwrap_or(Domain::All),
        lets: let_nodes,
        outputs,
    })
}

fn program_end_line(p: &Program) -> usize {
    p.stmts
        .last()
        .map(|s| match s {
            Stmt::Param { pos, .. }
            | Stmt::Let { pos, .. }
            | Stmt::Output { pos, .. }
            | Stmt::Domain { pos, .. } => pos.line,
        })
        .unwrap_or(1)
}

fn eval_err(pos: Pos, msg: &str) -> Error {
    Error::Evaluation(format!("{msg} at {}:{}", pos.line, pos.col))
}

fn mat_pow(m: &Matrix3<f64>, n: i32, pos: Pos) -> Result<Matrix3<f64>> {
    let base = if n < 0 {
        m.try_inverse()
            .ok_or_else(|| eval_err(pos, "negative power of a singular matrix"))?
    } else {
        *m
    };
    let mut out = Matrix3::identity();
    for _ in 0..n.unsigned_abs() {
        out *= base;
    }
    Ok(out)
}

struct Env<'a> {
    x: &'a BodyPoint,
    f: &'a Matrix3<f64>,
    lets: Vec<Value>,
}

impl Env<'_> {
    fn eval(&self, n: &Node) -> Result<Value> {
        let v = self.eval_raw(n)?;
        if !v.is_finite() {
            return Err(eval_err(n.pos, "non-finite value"));
        }
        Ok(v)
    }

    fn eval_raw(&self, n: &Node) -> Result<Value> {
        use Value::*;
        Ok(match &n.op {
            Op::Const(v) => *v,
            Op::Input(i) => match i {
                Input::X1 => S(self.x[0]),
                Input::X2 => S(self.x[1]),
                Input::X3 => S(self.x[2]),
                Input::X => V(*self.x),
                Input::F => M(*self.f),
                Input::I => M(Matrix3::identity()),
            },
            Op::Let(slot) => self.lets[*slot],
            Op::Neg(a) => match self.eval(a)? {
                S(s) => S(-s),
                V(v) => V(-v),
                M(m) => M(-m),
            },
            Op::Bin(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match (op, a, b) {
                    (BinOp::Add, S(x), S(y)) => S(x + y),
                    (BinOp::Add, V(x), V(y)) => V(x + y),
                    (BinOp::Add, M(x), M(y)) => M(x + y),
                    (BinOp::Sub, S(x), S(y)) => S(x - y),
                    (BinOp::Sub, V(x), V(y)) => V(x - y),
                    (BinOp::Sub, M(x), M(y)) => M(x - y),
                    (BinOp::Mul, S(x), S(y)) => S(x * y),
                    (BinOp::Mul, S(s), V(v)) | (BinOp::Mul, V(v), S(s)) => V(v * s),
                    (BinOp::Mul, S(s), M(m)) | (BinOp::Mul, M(m), S(s)) => M(m * s),
                    (BinOp::Mul, M(x), M(y)) => M(x * y),
                    (BinOp::Mul, M(m), V(v)) => V(m * v),
                    (BinOp::Div, a, S(s)) => {
                        if s == 0.0 {
                            return Err(eval_err(n.pos, "division by zero"));
                        }
                        match a {
                            S(x) => S(x / s),
                            V(v) => V(v / s),
                            M(m) => M(m / s),
                        }
                    }
                    _ => return Err(eval_err(n.pos, "kind mismatch")),
                }
            }
            Op::Pow(a, k) => match self.eval(a)? {
                S(s) => {
                    if s == 0.0 && *k < 0 {
                        return Err(eval_err(n.pos, "division by zero"));
                    }
                    S(s.powi(*k))
                }
                M(m) => M(mat_pow(&m, *k, n.pos)?),
                V(_) => return Err(eval_err(n.pos, "kind mismatch")),
            },
            Op::Transpose(a) => match self.eval(a)? {
                M(m) => M(m.transpose()),
                other => other,
            },
            Op::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                call(*func, &vals, n.pos)?
            }
            Op::If(cmp, parts) => {
                let [l, r, t, o] = parts.as_ref();
                let (a, b) = match (self.eval(l)?, self.eval(r)?) {
                    (S(a), S(b)) => (a, b),
                    _ => return Err(eval_err(n.pos, "kind mismatch")),
                };
                if cmp.holds(a, b) {
                    self.eval(t)?
                } else {
                    self.eval(o)?
                }
            }
        })
    }
}

fn call(func: Func, a: &[Value], pos: Pos) -> Result<Value> {
    use Value::*;
    Ok(match (func, a) {
        (Func::Det, [M(m)]) => S(m.determinant()),
        (Func::Tr, [M(m)]) => S(m.trace()),
        (Func::Inv, [M(m)]) => M(m
            .try_inverse()
            .ok_or_else(|| eval_err(pos, "inverse of a singular matrix"))?),
        (Func::Exp, [S(x)]) => S(x.exp()),
        (Func::Log, [S(x)]) => {
            if *x <= 0.0 {
                return Err(eval_err(pos, "log of a non-positive number"));
            }
            S(x.ln())
        }
        (Func::Sqrt, [S(x)]) => {
            if *x < 0.0 {
                return Err(eval_err(pos, "sqrt of a negative number"));
            }
            S(x.sqrt())
        }
        (Func::Abs, [S(x)]) => S(x.abs()),
        (Func::Norm2, [V(v)]) => S(v.norm()),
        (Func::Dot, [V(u), V(v)]) => S(u.dot(v)),
        (Func::Cross, [V(u), V(v)]) => V(u.cross(v)),
        (Func::Outer, [V(u), V(v)]) => M(u * v.transpose()),
        (Func::Vec3, [S(a), S(b), S(c)]) => V(Vector3::new(*a, *b, *c)),
        _ => return Err(eval_err(pos, "kind mismatch")),
    })
}

impl Compiled {
    pub fn source(&self) -> &Program {
        &self.source
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn output_kind(&self, name: &str) -> Option<Kind> {
        self.outputs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, n)| n.kind)
    }

    /// Evaluate the named outputs at `(x, f)`.
    pub fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>, names: &[&str]) -> Result<Vec<Value>> {
        let mut env = Env {
            x,
            f,
            lets: Vec::with_capacity(self.lets.len()),
        };
        for node in &self.lets {
            let v = env.eval(node)?;
            env.lets.push(v);
        }
        names
            .iter()
            .map(|name| {
                let (_, node) = self
                    .outputs
                    .iter()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| Error::Evaluation(format!("no output `{name}`")))?;
                let v = env.eval(node)?;
                debug_assert_eq!(v.kind(), node.kind);
                Ok(v)
            })
            .collect()
    }
}

fn check_size(src: &str) -> Result<()> {
    if src.len() > MAX_SOURCE_BYTES {
        return Err(Error::Parse {
            line: 1,
            col: 1,
            msg: format!("source is {} bytes, limit is {MAX_SOURCE_BYTES}", src.len()),
        });
    }
    Ok(())
}

/// Parse and kind-check `src` in the given context.
pub fn compile_source(src: &str, ctx: Context) -> Result<Compiled> {
    check_size(src)?;
    compile(&parse_program(src)?, ctx)
}

/// Canonical rendering of a source text.
pub fn pretty(src: &str) -> Result<String> {
    check_size(src)?;
    Ok(parse_program(src)?.to_string())
}

#[derive(Debug)]
struct DslResponse {
    program: Arc<Compiled>,
    kind: Kind,
}

impl Response for DslResponse {
    fn dim(&self) -> usize {
        self.kind.len()
    }

    fn eval(&self, x: &BodyPoint, f: &Matrix3<f64>) -> Result<DVector<f64>> {
        let v = self.program.eval(x, f, &["response"])?;
        Ok(DVector::from_vec(v[0].flatten()))
    }
}

/// Build a model from `.mdl` text.
pub fn parse_model(src: &str) -> Result<ConstitutiveModel> {
    parse_model_named(src, "mdl")
}

pub fn parse_model_named(src: &str, name: &str) -> Result<ConstitutiveModel> {
    let program = Arc::new(compile_source(src, Context::Model)?);
    let kind = program.output_kind("response").expect("checked by compile");
    let domain = program.domain();
    let params = program.params().clone();
    Ok(
        ConstitutiveModel::new(name, domain, Arc::new(DslResponse { program, kind }))
            .with_params(params),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::builtin;
    use approx::assert_relative_eq;

    fn eval1(src: &str, x: [f64; 3], f: Matrix3<f64>) -> Result<Vec<f64>> {
        let m = parse_model(src)?;
        Ok(m.evaluate(&Vector3::from(x), &f)?.iter().copied().collect())
    }

    #[test]
    fn strain_vanishes_at_identity() {
        let w = eval1("response = F' * F - I", [0.0; 3], Matrix3::identity()).unwrap();
        assert_eq!(w, vec![0.0; 9]);
    }

    #[test]
    fn determinant_of_diagonal() {
        let f = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(eval1("response = det(F)", [0.0; 3], f).unwrap(), vec![6.0]);
    }

    #[test]
    fn matches_builtin_example1() {
        use rand::{Rng, SeedableRng};
        let src = "response = if(X1 <= 0, 1, 1 + exp(-1/X1)) * (F'*F - I)";
        let dsl = parse_model(src).unwrap();
        let reference = builtin("example1", &BTreeMap::new()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let x = Vector3::<f64>::from_fn(|_, _| rng.random_range(-0.99..0.99));
            let f = Matrix3::<f64>::from_fn(|_, _| rng.random_range(-2.0..2.0));
            if f.determinant().abs() < 1e-3 {
                continue;
            }
            let a = dsl.evaluate(&x, &f).unwrap();
            let b = reference.evaluate(&x, &f).unwrap();
            assert!((a - b).amax() <= 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn lazy_if_avoids_overflow() {
        let src = "response = if(X1 <= 0, 1, 1 + exp(-1/X1))";
        for x1 in [-0.5, 1e-12] {
            let w = eval1(src, [x1, 0.0, 0.0], Matrix3::identity()).unwrap();
            assert!(w[0].is_finite());
            assert_relative_eq!(w[0], 1.0);
        }
        // the unselected branch would divide by zero
        let w = eval1(
            "response = if(X1 == 0, 0, 1 / X1)",
            [0.0; 3],
            Matrix3::identity(),
        );
        assert_eq!(w.unwrap(), vec![0.0]);
    }

    #[test]
    fn division_by_zero_is_an_evaluation_error() {
        let m = parse_model("response = 1 / X1").unwrap();
        assert!(matches!(
            m.evaluate(&Vector3::zeros(), &Matrix3::identity()),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn type_errors_carry_positions() {
        match parse_model("param a = 2\nresponse = a + F") {
            Err(Error::Parse { line, col, msg }) => {
                assert_eq!((line, col), (2, 14));
                assert!(msg.contains("type error"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_model("response = X * X"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_model("response = det(X)"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_identifiers_and_functions() {
        match parse_model("response = Y + 1") {
            Err(Error::Parse { msg, line, col }) => {
                assert!(msg.contains("unknown identifier"));
                assert_eq!((line, col), (1, 12));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_model("response = foo(X1)").is_err());
        assert!(parse_model("let a = 1").is_err());
        assert!(parse_model("response = 1\nresponse = 2").is_err());
        assert!(parse_model("let X = 1\nresponse = X").is_err());
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "response = (1",
            "response = 1 +",
            "response = if(X1, 1, 2)",
            "response 1",
            "response = 2^0.5",
        ] {
            assert!(
                matches!(parse_model(bad), Err(Error::Parse { .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn params_lets_and_functions() {
        let src = "\
param k = 2.5
let v = F * X
let n = norm2(v)
response = k * n^2 + dot(v, v) - tr(outer(v, v)) + abs(-1) + sqrt(4) + log(1)
";
        let f = Matrix3::new(1.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let x = [0.1, 0.2, 0.3];
        let v = f * Vector3::from(x);
        let want = 2.5 * v.norm_squared() + 3.0;
        assert_relative_eq!(eval1(src, x, f).unwrap()[0], want, epsilon = 1e-14);
    }

    #[test]
    fn vectors_and_matrix_powers() {
        let f = Matrix3::new(2.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 3.0);
        let w = eval1("response = F^2 * inv(F)", [0.0; 3], f).unwrap();
        assert!(w
            .iter()
            .zip(row_major(&f).iter())
            .all(|(a, b)| (a - b).abs() < 1e-14));
        let w = eval1("response = F^-1 - inv(F)", [0.0; 3], f).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-15));
        let w = eval1("response = cross(vec(1, 0, 0), vec(0, 1, 0))", [0.0; 3], f).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn precedence_follows_the_grammar() {
        let at = |src: &str| eval1(src, [2.0, 0.0, 0.0], Matrix3::identity()).unwrap()[0];
        assert_eq!(at("response = 1 + 2 * 3"), 7.0);
        assert_eq!(at("response = 8 / 2 / 2"), 2.0);
        assert_eq!(at("response = 10 - 3 - 2"), 5.0);
        assert_eq!(at("response = -X1^2"), 4.0);
        assert_eq!(at("response = -(X1^2)"), -4.0);
    }

    #[test]
    fn pretty_printing_is_a_fixed_point() {
        let src = "\
# comment
param a = -1.5
domain cube 1
let s = if(X1 <= 0, 1, 1 + exp(-1/X1))
let q = -(X1^2) - -X2 + (X1 - X2) - dot((F * F')' * X, X) + 1e-7 * X3
response = s * (F'*F - I) * a / (2 * a) * q
";
        let once = pretty(src).unwrap();
        assert_eq!(pretty(&once).unwrap(), once);
        let a = parse_model(src).unwrap();
        let b = parse_model(&once).unwrap();
        let x = Vector3::new(0.3, -0.2, 0.1);
        let f = Matrix3::new(1.0, 0.2, 0.0, 0.1, 1.5, 0.3, 0.0, -0.4, 0.8);
        assert_eq!(a.evaluate(&x, &f).unwrap(), b.evaluate(&x, &f).unwrap());
    }

    #[test]
    fn dsl_domain_is_respected() {
        let m = parse_model("domain ball 0.5\nresponse = det(F)").unwrap();
        assert_eq!(m.domain(), Domain::Ball { radius: 0.5 });
        assert!(m
            .evaluate(&Vector3::new(0.6, 0.0, 0.0), &Matrix3::identity())
            .is_err());
    }

    #[test]
    fn oversized_source_is_rejected() {
        let src = format!("response = 1\n{}", "#".repeat(MAX_SOURCE_BYTES));
        assert!(matches!(parse_model(&src), Err(Error::Parse { .. })));
    }

    #[test]
    fn chart_programs() {
        let src = "\
forward1 = X1 + X2
forward2 = X2
forward3 = X3
inverse1 = X1 - X2
inverse2 = X2
inverse3 = X3
";
        let c = compile_source(src, Context::Chart).unwrap();
        let v = c
            .eval(
                &Vector3::new(1.0, 2.0, 3.0),
                &Matrix3::identity(),
                &["forward1", "inverse1"],
            )
            .unwrap();
        assert_eq!(v, vec![Value::S(3.0), Value::S(-1.0)]);
        assert!(compile_source("forward1 = X1", Context::Chart).is_err());
        assert!(compile_source(
            &src.replace("X3\ninverse1", "det(F)\ninverse1"),
            Context::Chart
        )
        .is_err());
    }
}
