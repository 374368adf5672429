use std::fmt::{self, Write};

use super::ast::*;

/// Canonical source rendering. Binary expressions are fully parenthesized
/// so that re-parsing yields the same tree.
impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for s in &self.prologue {
            write_stmt(&mut out, s, 0);
        }
        let _ = writeln!(out, "steps {} {{", self.step_count);
        for s in &self.step_body {
            write_stmt(&mut out, s, 1);
        }
        out.push_str("}\n");
        f.write_str(&out)
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, body: &[Stmt], level: usize) {
    out.push_str("{\n");
    for s in body {
        write_stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

fn write_stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match &s.kind {
        StmtKind::VarDecl { name, value } => {
            let _ = write!(out, "var {name} = {}", ExprDisplay(value));
        }
        StmtKind::Let { name, value } => {
            let _ = write!(out, "let {name} = {}", ExprDisplay(value));
        }
        StmtKind::Assign { name, value } => {
            let _ = write!(out, "{name} = {}", ExprDisplay(value));
        }
        StmtKind::Print(e) => {
            let _ = write!(out, "print({})", ExprDisplay(e));
        }
        StmtKind::If { cond, then, elifs, els } => {
            let _ = write!(out, "if {} ", ExprDisplay(cond));
            write_block(out, then, level);
            for (c, b) in elifs {
                let _ = write!(out, " elif {} ", ExprDisplay(c));
                write_block(out, b, level);
            }
            if let Some(b) = els {
                out.push_str(" else ");
                write_block(out, b, level);
            }
        }
        StmtKind::While { cond, body, .. } => {
            let _ = write!(out, "while {} ", ExprDisplay(cond));
            write_block(out, body, level);
        }
        StmtKind::For { var, count, body, .. } => {
            let _ = write!(out, "for {var} in range({}) ", ExprDisplay(count));
            write_block(out, body, level);
        }
    }
    out.push('\n');
}

pub struct ExprDisplay<'a>(pub &'a Expr);

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Expr]) -> fmt::Result {
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{}", ExprDisplay(a))?;
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            ExprKind::Op { kind, args } => {
                write!(f, "{}(", kind.call_name().unwrap_or(kind.name()))?;
                write_list(f, args)?;
                f.write_str(")")
            }
            ExprKind::Input { name, shape } => {
                write!(f, "input(\"{}\"", escape(name))?;
                if let Some(s) = shape {
                    write!(f, ", {}", ExprDisplay(s))?;
                }
                f.write_str(")")
            }
            ExprKind::Native { name, args } => {
                write!(f, "native {name}(")?;
                write_list(f, args)?;
                f.write_str(")")
            }
            ExprKind::Item(e) => write!(f, "item({})", ExprDisplay(e)),
            ExprKind::Num(v) => {
                if v.is_finite() {
                    write!(f, "{v:?}")
                } else {
                    write!(f, "{v}")
                }
            }
            ExprKind::Str(s) => write!(f, "\"{}\"", escape(s)),
            ExprKind::Bool(b) => write!(f, "{b}"),
            ExprKind::List(items) => {
                f.write_str("[")?;
                write_list(f, items)?;
                f.write_str("]")
            }
            ExprKind::Ident(n) => f.write_str(n),
            ExprKind::Binary { op, lhs, rhs } => {
                write!(f, "({} {} {})", ExprDisplay(lhs), op.symbol(), ExprDisplay(rhs))
            }
            ExprKind::Unary { op: UnOp::Neg, expr } => write!(f, "-{}", ExprDisplay(expr)),
            ExprKind::Unary { op: UnOp::Not, expr } => write!(f, "not {}", ExprDisplay(expr)),
        }
    }
}
