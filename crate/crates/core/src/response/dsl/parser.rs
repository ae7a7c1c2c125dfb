use super::ast::{BinOp, CmpOp, DomainDecl, Expr, ExprKind, Program, Stmt};
use super::lexer::{err, lex, Pos, Tok};
use crate::error::Result;

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

/// Parse DSL text into a syntax tree (no kind checking).
pub fn parse_program(src: &str) -> Result<Program> {
    let mut p = Parser {
        toks: lex(src)?,
        at: 0,
    };
    let mut prog = Program::default();
    loop {
        while p.peek() == &Tok::Newline {
            p.bump();
        }
        if p.peek() == &Tok::Eof {
            break;
        }
        prog.stmts.push(p.statement()?);
        match p.peek() {
            Tok::Newline => {
                p.bump();
            }
            _ => return Err(err(p.pos(), "expected end of line")),
        }
    }
    Ok(prog)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Pos> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            Err(err(self.pos(), format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos)> {
        match self.bump() {
            (Tok::Ident(s), pos) => Ok((s, pos)),
            (_, pos) => Err(err(pos, format!("expected {what}"))),
        }
    }

    fn signed_number(&mut self) -> Result<f64> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            (Tok::Num(v), _) => Ok(if neg { -v } else { v }),
            (_, pos) => Err(err(pos, "expected a number")),
        }
    }

    fn statement(&mut self) -> Result<Stmt> {
        let (head, pos) = self.ident("a statement")?;
        match head.as_str() {
            "param" => {
                let (name, _) = self.ident("parameter name")?;
                self.expect(Tok::Assign, "`=`")?;
                let value = self.signed_number()?;
                Ok(Stmt::Param { name, value, pos })
            }
            "let" => {
                let (name, _) = self.ident("binding name")?;
                self.expect(Tok::Assign, "`=`")?;
                let expr = self.expr()?;
                Ok(Stmt::Let { name, expr, pos })
            }
            "domain" => {
                let (kind, kpos) = self.ident("`cube` or `ball`")?;
                let value = self.signed_number()?;
                let decl = match kind.as_str() {
                    "cube" => DomainDecl::Cube(value),
                    "ball" => DomainDecl::Ball(value),
                    _ => return Err(err(kpos, "expected `cube` or `ball`")),
                };
                Ok(Stmt::Domain { decl, pos })
            }
            _ => {
                self.expect(Tok::Assign, "`=`")?;
                let expr = self.expr()?;
                Ok(Stmt::Output {
                    name: head,
                    expr,
                    pos,
                })
            }
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let pos = self.bump().1;
            let rhs = self.term()?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let pos = self.bump().1;
            let rhs = self.factor()?;
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                pos,
            };
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        let pos = self.bump().1;
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let n = match self.bump() {
            (Tok::Num(v), npos) => {
                if v.fract() != 0.0 || v > 64.0 {
                    return Err(err(npos, "exponent must be an integer in 0..=64"));
                }
                v as i32
            }
            (_, npos) => return Err(err(npos, "expected integer exponent")),
        };
        Ok(Expr {
            kind: ExprKind::Pow(Box::new(base), if neg { -n } else { n }),
            pos,
        })
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            let pos = self.bump().1;
            let inner = self.unary()?;
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                pos,
            });
        }
        let mut e = self.atom()?;
        while *self.peek() == Tok::Quote {
            let pos = self.bump().1;
            e = Expr {
                kind: ExprKind::Transpose(Box::new(e)),
                pos,
            };
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.bump() {
            (Tok::Num(v), pos) => Ok(Expr {
                kind: ExprKind::Num(v),
                pos,
            }),
            (Tok::LParen, _) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            (Tok::Ident(name), pos) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr {
                        kind: ExprKind::Ident(name),
                        pos,
                    });
                }
                self.bump();
                if name == "if" {
                    return self.if_rest(pos);
                }
                let mut args = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                Ok(Expr {
                    kind: ExprKind::Call(name, args),
                    pos,
                })
            }
            (Tok::Eof | Tok::Newline, pos) => Err(err(pos, "unexpected end of line")),
            (t, pos) => Err(err(pos, format!("unexpected token {t:?}"))),
        }
    }

    fn if_rest(&mut self, pos: Pos) -> Result<Expr> {
        let lhs = self.expr()?;
        let op = match self.peek() {
            Tok::Le => CmpOp::Le,
            Tok::Lt => CmpOp::Lt,
            Tok::Ge => CmpOp::Ge,
            Tok::Gt => CmpOp::Gt,
            Tok::EqEq => CmpOp::Eq,
            _ => return Err(err(self.pos(), "expected a comparison in if condition")),
        };
        self.bump();
        let rhs = self.expr()?;
        self.expect(Tok::Comma, "`,`")?;
        let then = self.expr()?;
        self.expect(Tok::Comma, "`,`")?;
        let otherwise = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr {
            kind: ExprKind::If {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                then: Box::new(then),
                otherwise: Box::new(otherwise),
            },
            pos,
        })
    }
}
