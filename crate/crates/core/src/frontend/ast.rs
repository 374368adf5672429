use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::OpKind;

/// Line/column of a token, 1-based.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Program location of a statement or expression. Assigned depth-first in
/// source order from one counter, so ids depend only on the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoopId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Where an operation ran: the producing site plus the lexically enclosing
/// loops, outermost first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceLoc {
    pub site: SiteId,
    pub loop_path: Vec<LoopId>,
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.site)?;
        for l in &self.loop_path {
            write!(f, "/{l}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub prologue: Vec<Stmt>,
    pub step_count: u64,
    pub step_body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub id: SiteId,
    pub pos: Pos,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    VarDecl { name: String, value: Expr },
    Let { name: String, value: Expr },
    Assign { name: String, value: Expr },
    Print(Expr),
    If { cond: Expr, then: Vec<Stmt>, elifs: Vec<(Expr, Vec<Stmt>)>, els: Option<Vec<Stmt>> },
    While { loop_id: LoopId, cond: Expr, body: Vec<Stmt> },
    For { loop_id: LoopId, var: String, count: Expr, body: Vec<Stmt> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub id: SiteId,
    pub pos: Pos,
    pub kind: ExprKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Op { kind: OpKind, args: Vec<Expr> },
    Input { name: String, shape: Option<Box<Expr>> },
    Native { name: String, args: Vec<Expr> },
    Item(Box<Expr>),
    Num(f64),
    Str(String),
    Bool(bool),
    List(Vec<Expr>),
    Ident(String),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnOp, expr: Box<Expr> },
}

impl Program {
    /// Clears every recorded position, for structural comparisons.
    pub fn without_positions(&self) -> Program {
        fn stmts(list: &[Stmt]) -> Vec<Stmt> {
            list.iter().map(stmt).collect()
        }
        fn stmt(s: &Stmt) -> Stmt {
            let kind = match &s.kind {
                StmtKind::VarDecl { name, value } => StmtKind::VarDecl { name: name.clone(), value: expr(value) },
                StmtKind::Let { name, value } => StmtKind::Let { name: name.clone(), value: expr(value) },
                StmtKind::Assign { name, value } => StmtKind::Assign { name: name.clone(), value: expr(value) },
                StmtKind::Print(e) => StmtKind::Print(expr(e)),
                StmtKind::If { cond, then, elifs, els } => StmtKind::If {
                    cond: expr(cond),
                    then: stmts(then),
                    elifs: elifs.iter().map(|(c, b)| (expr(c), stmts(b))).collect(),
                    els: els.as_ref().map(|b| stmts(b)),
                },
                StmtKind::While { loop_id, cond, body } => {
                    StmtKind::While { loop_id: *loop_id, cond: expr(cond), body: stmts(body) }
                }
                StmtKind::For { loop_id, var, count, body } => StmtKind::For {
                    loop_id: *loop_id,
                    var: var.clone(),
                    count: expr(count),
                    body: stmts(body),
                },
            };
            Stmt { id: s.id, pos: Pos::default(), kind }
        }
        fn expr(e: &Expr) -> Expr {
            let kind = match &e.kind {
                ExprKind::Op { kind, args } => ExprKind::Op { kind: *kind, args: args.iter().map(expr).collect() },
                ExprKind::Input { name, shape } => {
                    ExprKind::Input { name: name.clone(), shape: shape.as_ref().map(|s| Box::new(expr(s))) }
                }
                ExprKind::Native { name, args } => {
                    ExprKind::Native { name: name.clone(), args: args.iter().map(expr).collect() }
                }
                ExprKind::Item(inner) => ExprKind::Item(Box::new(expr(inner))),
                ExprKind::List(items) => ExprKind::List(items.iter().map(expr).collect()),
                ExprKind::Binary { op, lhs, rhs } => {
                    ExprKind::Binary { op: *op, lhs: Box::new(expr(lhs)), rhs: Box::new(expr(rhs)) }
                }
                ExprKind::Unary { op, expr: inner } => ExprKind::Unary { op: *op, expr: Box::new(expr(inner)) },
                other => other.clone(),
            };
            Expr { id: e.id, pos: Pos::default(), kind }
        }
        Program { prologue: stmts(&self.prologue), step_count: self.step_count, step_body: stmts(&self.step_body) }
    }

    /// Every op-call expression in the program, in source order.
    pub fn op_sites(&self) -> Vec<(SiteId, OpKind)> {
        let mut out = Vec::new();
        for s in self.prologue.iter().chain(&self.step_body) {
            s.visit_exprs(&mut |e| {
                if let ExprKind::Op { kind, .. } = &e.kind {
                    out.push((e.id, *kind));
                }
            });
        }
        out
    }

    pub fn loop_ids(&self) -> Vec<LoopId> {
        let mut out = Vec::new();
        for s in &self.step_body {
            s.visit_stmts(&mut |s| match &s.kind {
                StmtKind::While { loop_id, .. } | StmtKind::For { loop_id, .. } => out.push(*loop_id),
                _ => {}
            });
        }
        out
    }
}

impl Stmt {
    pub fn visit_stmts(&self, f: &mut dyn FnMut(&Stmt)) {
        f(self);
        for b in self.blocks() {
            for s in b {
                s.visit_stmts(f);
            }
        }
    }

    fn blocks(&self) -> Vec<&Vec<Stmt>> {
        match &self.kind {
            StmtKind::If { then, elifs, els, .. } => {
                let mut v = vec![then];
                v.extend(elifs.iter().map(|(_, b)| b));
                v.extend(els.iter());
                v
            }
            StmtKind::While { body, .. } | StmtKind::For { body, .. } => vec![body],
            _ => Vec::new(),
        }
    }

    pub fn visit_exprs(&self, f: &mut dyn FnMut(&Expr)) {
        self.visit_stmts(&mut |s| match &s.kind {
            StmtKind::VarDecl { value, .. } | StmtKind::Let { value, .. } | StmtKind::Assign { value, .. } => {
                value.visit(f)
            }
            StmtKind::Print(e) => e.visit(f),
            StmtKind::If { cond, elifs, .. } => {
                cond.visit(f);
                for (c, _) in elifs {
                    c.visit(f);
                }
            }
            StmtKind::While { cond, .. } => cond.visit(f),
            StmtKind::For { count, .. } => count.visit(f),
        });
    }
}

impl Expr {
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Op { args, .. } | ExprKind::Native { args, .. } | ExprKind::List(args) => {
                for a in args {
                    a.visit(f);
                }
            }
            ExprKind::Input { shape: Some(s), .. } => s.visit(f),
            ExprKind::Item(e) | ExprKind::Unary { expr: e, .. } => e.visit(f),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            _ => {}
        }
    }
}
