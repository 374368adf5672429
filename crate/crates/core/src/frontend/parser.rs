use crate::tensor::OpKind;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{native_arity, FrontendError};

/// Parses and validates a program. Site and loop ids are assigned
/// depth-first in source order after parsing.
pub fn parse(source: &str) -> Result<Program, FrontendError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, i: 0, depth: 0 };
    let mut program = p.program()?;
    number(&mut program);
    validate(&program)?;
    Ok(program)
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    depth: usize,
}

const UNSET: SiteId = SiteId(u32::MAX);

impl Parser {
    fn skip_newlines_if_nested(&mut self) {
        if self.depth > 0 {
            while matches!(self.tokens.get(self.i), Some(Token { tok: Tok::Newline, .. })) {
                self.i += 1;
            }
        }
    }

    fn peek(&mut self) -> Option<&Tok> {
        self.skip_newlines_if_nested();
        self.tokens.get(self.i).map(|t| &t.tok)
    }

    fn pos(&mut self) -> Pos {
        self.skip_newlines_if_nested();
        self.tokens
            .get(self.i)
            .map(|t| t.pos)
            .or_else(|| self.tokens.last().map(|t| Pos { line: t.pos.line, col: t.pos.col + 1 }))
            .unwrap_or(Pos { line: 1, col: 1 })
    }

    fn next(&mut self) -> Option<Token> {
        self.skip_newlines_if_nested();
        let t = self.tokens.get(self.i).cloned();
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn error<T>(&mut self, msg: impl Into<String>) -> Result<T, FrontendError> {
        let pos = self.pos();
        Err(FrontendError::Parse { pos, msg: msg.into() })
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, FrontendError> {
        let pos = self.pos();
        match self.next() {
            Some(t) if t.tok == want => Ok(pos),
            Some(t) => Err(FrontendError::Parse { pos, msg: format!("expected {want}, found {}", t.tok) }),
            None => Err(FrontendError::Parse { pos, msg: format!("expected {want}, found end of input") }),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if self.peek() == Some(want) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        let pos = self.pos();
        match self.next() {
            Some(Token { tok: Tok::Ident(s), .. }) => Ok(s),
            Some(t) => Err(FrontendError::Parse { pos, msg: format!("expected identifier, found {}", t.tok) }),
            None => Err(FrontendError::Parse { pos, msg: "expected identifier, found end of input".into() }),
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.tokens.get(self.i).map(|t| &t.tok), Some(Tok::Newline | Tok::Semi)) {
            self.i += 1;
        }
    }

    fn end_simple_stmt(&mut self) -> Result<(), FrontendError> {
        match self.tokens.get(self.i).map(|t| &t.tok) {
            None | Some(Tok::Newline | Tok::Semi | Tok::RBrace) => Ok(()),
            Some(t) => {
                let msg = format!("expected end of statement, found {t}");
                self.error(msg)
            }
        }
    }

    fn program(&mut self) -> Result<Program, FrontendError> {
        let mut prologue = Vec::new();
        let mut steps: Option<(u64, Vec<Stmt>)> = None;
        loop {
            self.skip_separators();
            let Some(tok) = self.tokens.get(self.i).map(|t| t.tok.clone()) else { break };
            if tok == Tok::Steps {
                let pos = self.pos();
                self.i += 1;
                let count = match self.next() {
                    Some(Token { tok: Tok::Int(n), .. }) if n > 0 => n,
                    _ => return Err(FrontendError::Parse { pos, msg: "`steps` needs a positive integer".into() }),
                };
                let body = self.block()?;
                if steps.is_some() {
                    return Err(FrontendError::Validation { pos, msg: "duplicate `steps` block".into() });
                }
                steps = Some((count, body));
                continue;
            }
            if steps.is_some() {
                return self.error(format!("unexpected {tok} after the steps block"));
            }
            match tok {
                Tok::If | Tok::While | Tok::For => {
                    return self.error("control flow is only allowed inside the steps block");
                }
                _ => prologue.push(self.stmt()?),
            }
        }
        let Some((step_count, step_body)) = steps else {
            let pos = self.pos();
            return Err(FrontendError::Validation { pos, msg: "missing `steps N { ... }` block".into() });
        };
        Ok(Program { prologue, step_count, step_body })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        let saved = self.depth;
        self.depth = 0;
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        loop {
            self.skip_separators();
            match self.tokens.get(self.i).map(|t| &t.tok) {
                Some(Tok::RBrace) => {
                    self.i += 1;
                    break;
                }
                None => return self.error("unterminated block"),
                _ => out.push(self.stmt()?),
            }
        }
        self.depth = saved;
        Ok(out)
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        let pos = self.pos();
        let tok = self.peek().cloned();
        let kind = match tok {
            Some(Tok::Var) | Some(Tok::Let) => {
                self.i += 1;
                let name = self.ident()?;
                self.expect(Tok::Assign)?;
                let value = self.expr()?;
                self.end_simple_stmt()?;
                if tok == Some(Tok::Var) {
                    StmtKind::VarDecl { name, value }
                } else {
                    StmtKind::Let { name, value }
                }
            }
            Some(Tok::Print) => {
                self.i += 1;
                self.expect(Tok::LParen)?;
                self.depth += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.depth -= 1;
                self.end_simple_stmt()?;
                StmtKind::Print(e)
            }
            Some(Tok::If) => {
                self.i += 1;
                let cond = self.expr()?;
                let then = self.block()?;
                let mut elifs = Vec::new();
                let mut els = None;
                loop {
                    let save = self.i;
                    while matches!(self.tokens.get(self.i).map(|t| &t.tok), Some(Tok::Newline)) {
                        self.i += 1;
                    }
                    match self.tokens.get(self.i).map(|t| &t.tok) {
                        Some(Tok::Elif) => {
                            self.i += 1;
                            let c = self.expr()?;
                            let b = self.block()?;
                            elifs.push((c, b));
                        }
                        Some(Tok::Else) => {
                            self.i += 1;
                            els = Some(self.block()?);
                            break;
                        }
                        _ => {
                            self.i = save;
                            break;
                        }
                    }
                }
                StmtKind::If { cond, then, elifs, els }
            }
            Some(Tok::While) => {
                self.i += 1;
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { loop_id: LoopId(0), cond, body }
            }
            Some(Tok::For) => {
                self.i += 1;
                let var = self.ident()?;
                self.expect(Tok::In)?;
                self.expect(Tok::Range)?;
                self.expect(Tok::LParen)?;
                self.depth += 1;
                let count = self.expr()?;
                self.expect(Tok::RParen)?;
                self.depth -= 1;
                let body = self.block()?;
                StmtKind::For { loop_id: LoopId(0), var, count, body }
            }
            Some(Tok::Ident(_)) => {
                let name = self.ident()?;
                self.expect(Tok::Assign)?;
                let value = self.expr()?;
                self.end_simple_stmt()?;
                StmtKind::Assign { name, value }
            }
            Some(t) => return self.error(format!("expected a statement, found {t}")),
            None => return self.error("expected a statement, found end of input"),
        };
        Ok(Stmt { id: UNSET, pos, kind })
    }

    fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.or_expr()
    }

    fn binary(&mut self, op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        let pos = lhs.pos;
        Expr { id: UNSET, pos, kind: ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) } }
    }

    fn or_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.and_expr()?;
        while self.eat(&Tok::Or) {
            let rhs = self.and_expr()?;
            lhs = self.binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.not_expr()?;
        while self.eat(&Tok::And) {
            let rhs = self.not_expr()?;
            lhs = self.binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, FrontendError> {
        let pos = self.pos();
        if self.eat(&Tok::Not) {
            let inner = self.not_expr()?;
            return Ok(Expr { id: UNSET, pos, kind: ExprKind::Unary { op: UnOp::Not, expr: Box::new(inner) } });
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.add_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Lt) => BinOp::Lt,
                Some(Tok::Gt) => BinOp::Gt,
                Some(Tok::Le) => BinOp::Le,
                Some(Tok::Ge) => BinOp::Ge,
                Some(Tok::EqEq) => BinOp::Eq,
                Some(Tok::NotEq) => BinOp::Ne,
                _ => return Ok(lhs),
            };
            self.i += 1;
            let rhs = self.add_expr()?;
            lhs = self.binary(op, lhs, rhs);
        }
    }

    fn add_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.i += 1;
            let rhs = self.mul_expr()?;
            lhs = self.binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.i += 1;
            let rhs = self.unary_expr()?;
            lhs = self.binary(op, lhs, rhs);
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, FrontendError> {
        let pos = self.pos();
        if self.eat(&Tok::Minus) {
            let inner = self.unary_expr()?;
            return Ok(Expr { id: UNSET, pos, kind: ExprKind::Unary { op: UnOp::Neg, expr: Box::new(inner) } });
        }
        self.primary()
    }

    fn args(&mut self) -> Result<Vec<Expr>, FrontendError> {
        self.expect(Tok::LParen)?;
        self.depth += 1;
        let mut out = Vec::new();
        if !self.eat(&Tok::RParen) {
            loop {
                out.push(self.expr()?);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        self.depth -= 1;
        Ok(out)
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        let pos = self.pos();
        let Some(tok) = self.next() else {
            return self.error("expected an expression, found end of input");
        };
        let kind = match tok.tok {
            Tok::Int(v) => ExprKind::Num(v as f64),
            Tok::Float(v) => ExprKind::Num(v),
            Tok::Str(s) => ExprKind::Str(s),
            Tok::True => ExprKind::Bool(true),
            Tok::False => ExprKind::Bool(false),
            Tok::LParen => {
                self.depth += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.depth -= 1;
                return Ok(e);
            }
            Tok::LBracket => {
                self.depth += 1;
                let mut items = Vec::new();
                if !self.eat(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if self.eat(&Tok::RBracket) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                self.depth -= 1;
                ExprKind::List(items)
            }
            Tok::Input => {
                let mut args = self.args()?;
                let name = match args.first().map(|a| &a.kind) {
                    Some(ExprKind::Str(s)) if args.len() <= 2 => s.clone(),
                    _ => {
                        return Err(FrontendError::Validation {
                            pos,
                            msg: "`input` takes a string name and an optional shape list".into(),
                        })
                    }
                };
                let shape = if args.len() == 2 { Some(Box::new(args.remove(1))) } else { None };
                ExprKind::Input { name, shape }
            }
            Tok::Native => {
                let name = self.ident()?;
                let args = self.args()?;
                ExprKind::Native { name, args }
            }
            Tok::Item => {
                let mut args = self.args()?;
                if args.len() != 1 {
                    return Err(FrontendError::Validation { pos, msg: "`item` takes exactly one argument".into() });
                }
                ExprKind::Item(Box::new(args.remove(0)))
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    let Some(kind) = OpKind::from_call_name(&name) else {
                        return Err(FrontendError::Validation { pos, msg: format!("unknown operation `{name}`") });
                    };
                    let args = self.args()?;
                    ExprKind::Op { kind, args }
                } else {
                    ExprKind::Ident(name)
                }
            }
            other => {
                return Err(FrontendError::Parse { pos, msg: format!("expected an expression, found {other}") })
            }
        };
        Ok(Expr { id: UNSET, pos, kind })
    }
}

fn number(program: &mut Program) {
    struct Counter {
        site: u32,
        lp: u32,
    }
    fn stmts(list: &mut [Stmt], c: &mut Counter) {
        for s in list {
            stmt(s, c);
        }
    }
    fn stmt(s: &mut Stmt, c: &mut Counter) {
        s.id = SiteId(c.site);
        c.site += 1;
        match &mut s.kind {
            StmtKind::VarDecl { value, .. } | StmtKind::Let { value, .. } | StmtKind::Assign { value, .. } => {
                expr(value, c)
            }
            StmtKind::Print(e) => expr(e, c),
            StmtKind::If { cond, then, elifs, els } => {
                expr(cond, c);
                stmts(then, c);
                for (ec, b) in elifs {
                    expr(ec, c);
                    stmts(b, c);
                }
                if let Some(b) = els {
                    stmts(b, c);
                }
            }
            StmtKind::While { loop_id, cond, body } => {
                *loop_id = LoopId(c.lp);
                c.lp += 1;
                expr(cond, c);
                stmts(body, c);
            }
            StmtKind::For { loop_id, count, body, .. } => {
                *loop_id = LoopId(c.lp);
                c.lp += 1;
                expr(count, c);
                stmts(body, c);
            }
        }
    }
    fn expr(e: &mut Expr, c: &mut Counter) {
        e.id = SiteId(c.site);
        c.site += 1;
        match &mut e.kind {
            ExprKind::Op { args, .. } | ExprKind::Native { args, .. } | ExprKind::List(args) => {
                for a in args {
                    expr(a, c);
                }
            }
            ExprKind::Input { shape: Some(s), .. } => expr(s, c),
            ExprKind::Item(inner) | ExprKind::Unary { expr: inner, .. } => expr(inner, c),
            ExprKind::Binary { lhs, rhs, .. } => {
                expr(lhs, c);
                expr(rhs, c);
            }
            _ => {}
        }
    }
    let mut c = Counter { site: 0, lp: 0 };
    stmts(&mut program.prologue, &mut c);
    stmts(&mut program.step_body, &mut c);
}

struct Scopes {
    vars: Vec<String>,
    frames: Vec<Vec<String>>,
}

impl Scopes {
    fn declared(&self, name: &str) -> bool {
        self.vars.iter().any(|v| v == name) || self.frames.iter().any(|f| f.iter().any(|n| n == name))
    }
}

fn validate(program: &Program) -> Result<(), FrontendError> {
    let mut scopes = Scopes { vars: Vec::new(), frames: vec![Vec::new()] };
    for s in &program.prologue {
        validate_stmt(s, &mut scopes, true)?;
    }
    scopes.frames.push(Vec::new());
    for s in &program.step_body {
        validate_stmt(s, &mut scopes, false)?;
    }
    Ok(())
}

fn validate_block(list: &[Stmt], scopes: &mut Scopes) -> Result<(), FrontendError> {
    scopes.frames.push(Vec::new());
    for s in list {
        validate_stmt(s, scopes, false)?;
    }
    scopes.frames.pop();
    Ok(())
}

fn validate_stmt(s: &Stmt, scopes: &mut Scopes, prologue: bool) -> Result<(), FrontendError> {
    let err = |msg: String| Err(FrontendError::Validation { pos: s.pos, msg });
    match &s.kind {
        StmtKind::VarDecl { name, value } => {
            if !prologue {
                return err(format!("`var {name}` is only allowed in the prologue"));
            }
            validate_expr(value, scopes)?;
            if scopes.declared(name) {
                return err(format!("`{name}` is already declared"));
            }
            scopes.vars.push(name.clone());
        }
        StmtKind::Let { name, value } => {
            validate_expr(value, scopes)?;
            if scopes.vars.contains(name) {
                return err(format!("`{name}` is a variable and cannot be redeclared with let"));
            }
            scopes.frames.last_mut().expect("scope").push(name.clone());
        }
        StmtKind::Assign { name, value } => {
            validate_expr(value, scopes)?;
            if !scopes.declared(name) {
                return err(format!("assignment to undeclared name `{name}`"));
            }
        }
        StmtKind::Print(e) => validate_expr(e, scopes)?,
        StmtKind::If { cond, then, elifs, els } => {
            validate_expr(cond, scopes)?;
            validate_block(then, scopes)?;
            for (c, b) in elifs {
                validate_expr(c, scopes)?;
                validate_block(b, scopes)?;
            }
            if let Some(b) = els {
                validate_block(b, scopes)?;
            }
        }
        StmtKind::While { cond, body, .. } => {
            validate_expr(cond, scopes)?;
            validate_block(body, scopes)?;
        }
        StmtKind::For { var, count, body, .. } => {
            validate_expr(count, scopes)?;
            scopes.frames.push(vec![var.clone()]);
            let r = validate_block(body, scopes);
            scopes.frames.pop();
            r?;
        }
    }
    Ok(())
}

fn validate_expr(e: &Expr, scopes: &Scopes) -> Result<(), FrontendError> {
    let err = |msg: String| Err(FrontendError::Validation { pos: e.pos, msg });
    match &e.kind {
        ExprKind::Op { kind, args } => {
            let ok = match kind {
                OpKind::Transpose => (1..=2).contains(&args.len()),
                OpKind::Reshape | OpKind::Fill => args.len() == 2,
                k => args.len() == k.arity(),
            };
            if !ok {
                return err(format!(
                    "wrong number of arguments to `{}`: {}",
                    kind.call_name().unwrap_or(kind.name()),
                    args.len()
                ));
            }
            for a in args {
                validate_expr(a, scopes)?;
            }
        }
        ExprKind::Native { name, args } => {
            match native_arity(name) {
                None => return err(format!("unknown native `{name}`")),
                Some(n) if n != args.len() => {
                    return err(format!("native `{name}` takes {n} argument(s), got {}", args.len()))
                }
                _ => {}
            }
            for a in args {
                validate_expr(a, scopes)?;
            }
        }
        ExprKind::Input { shape, .. } => {
            if let Some(s) = shape {
                validate_expr(s, scopes)?;
            }
        }
        ExprKind::Item(inner) | ExprKind::Unary { expr: inner, .. } => validate_expr(inner, scopes)?,
        ExprKind::List(items) => {
            for a in items {
                validate_expr(a, scopes)?;
            }
        }
        ExprKind::Binary { lhs, rhs, .. } => {
            validate_expr(lhs, scopes)?;
            validate_expr(rhs, scopes)?;
        }
        ExprKind::Ident(name) => {
            if !scopes.declared(name) {
                return err(format!("use of undeclared name `{name}`"));
            }
        }
        ExprKind::Num(_) | ExprKind::Str(_) | ExprKind::Bool(_) => {}
    }
    Ok(())
}
