use std::fmt;

use super::lexer::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Eq => "==",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Le => a <= b,
            CmpOp::Lt => a < b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
            CmpOp::Eq => a == b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Ident(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Transpose(Box<Expr>),
    Call(String, Vec<Expr>),
    If {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainDecl {
    Cube(f64),
    Ball(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Param { name: String, value: f64, pos: Pos },
    Let { name: String, expr: Expr, pos: Pos },
    Output { name: String, expr: Expr, pos: Pos },
    Domain { decl: DomainDecl, pos: Pos },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub stmts: Vec<Stmt>,
}

// Binding strength of the grammar levels, loosest first.
const SUM: u8 = 0;
const PRODUCT: u8 = 1;
const FACTOR: u8 = 2;
const UNARY: u8 = 3;
const POSTFIX: u8 = 4;

fn level(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => SUM,
        ExprKind::Binary(..) => PRODUCT,
        ExprKind::Pow(..) => FACTOR,
        ExprKind::Neg(_) => UNARY,
        _ => POSTFIX,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if level(e) < min {
        write!(f, "(")?;
        write!(f, "{e}")?;
        write!(f, ")")
    } else {
        write!(f, "{e}")
    }
}

pub fn format_number(v: f64) -> String {
    format!("{v:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Num(v) => write!(f, "{}", format_number(*v)),
            ExprKind::Ident(name) => write!(f, "{name}"),
            ExprKind::Neg(inner) => {
                write!(f, "-")?;
                write_at(f, inner, UNARY)
            }
            ExprKind::Binary(op, lhs, rhs) => {
                let (sym, lmin, rmin) = match op {
                    BinOp::Add => (" + ", SUM, PRODUCT),
                    BinOp::Sub => (" - ", SUM, PRODUCT),
                    BinOp::Mul => (" * ", PRODUCT, FACTOR),
                    BinOp::Div => (" / ", PRODUCT, FACTOR),
                };
                write_at(f, lhs, lmin)?;
                write!(f, "{sym}")?;
                write_at(f, rhs, rmin)
            }
            ExprKind::Pow(base, n) => {
                write_at(f, base, UNARY)?;
                write!(f, "^{n}")
            }
            ExprKind::Transpose(inner) => {
                write_at(f, inner, POSTFIX)?;
                write!(f, "'")
            }
            ExprKind::Call(name, args) => {
                write!(f, "{name}(")?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            ExprKind::If {
                op,
                lhs,
                rhs,
                then,
                otherwise,
            } => write!(f, "if({lhs} {} {rhs}, {then}, {otherwise})", op.symbol()),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stmts {
            match s {
                Stmt::Param { name, value, .. } => {
                    writeln!(f, "param {name} = {}", format_number(*value))?
                }
                Stmt::Let { name, expr, .. } => writeln!(f, "let {name} = {expr}")?,
                Stmt::Output { name, expr, .. } => writeln!(f, "{name} = {expr}")?,
                Stmt::Domain { decl, .. } => match decl {
                    DomainDecl::Cube(h) => writeln!(f, "domain cube {}", format_number(*h))?,
                    DomainDecl::Ball(r) => writeln!(f, "domain ball {}", format_number(*r))?,
                },
            }
        }
        Ok(())
    }
}
