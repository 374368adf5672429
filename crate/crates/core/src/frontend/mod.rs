//! Lexer, parser and validator for the imperative tensor language.
//!
//! A program is a prologue (run once) followed by exactly one
//! `steps N { ... }` block whose body is the per-iteration training step:
//!
//! ```text
//! var w = fill([2, 2], 0.5)
//! steps 10 {
//!     let x = input("x", [2, 2])
//!     let y = relu(matmul(x, w))
//!     if item(sum(y)) > 1 { w = sub(w, mul(y, 0.01)) }
//!     print(item(mean(y)))
//! }
//! ```

mod ast;
mod lexer;
mod parser;
mod printer;

use thiserror::Error;

pub use ast::*;
pub use lexer::{tokenize, Tok, Token};
pub use parser::parse;
pub use printer::ExprDisplay;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("lex error at {pos}: {msg}")]
    Lex { pos: Pos, msg: String },
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: Pos, msg: String },
    #[error("validation error at {pos}: {msg}")]
    Validation { pos: Pos, msg: String },
}

/// Built-in host functions callable with `native name(args)`.
pub const NATIVES: &[(&str, usize)] =
    &[("coin", 1), ("choice", 2), ("clip", 3), ("len", 1), ("spin", 1), ("step", 0)];

pub fn native_arity(name: &str) -> Option<usize> {
    NATIVES.iter().find(|(n, _)| *n == name).map(|&(_, a)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::OpKind;

    pub(crate) const TWO_PATHS: &str = r#"
let rval = 0.5
steps 2 {
    let x = input("x", [2, 2])
    let x2 = x
    let n = 1
    if native coin(0) {
        let x1 = add(x, rval)
        x2 = relu(x1)
        n = 2
    } else {
        x2 = relu(x)
    }
    let x3 = sigmoid(x2)
    print(item(x3))
    for i in range(n) {
        x3 = neg(x3)
    }
}
"#;

    #[test]
    fn minimal_program() {
        let p = parse("steps 1 { print(1) }").unwrap();
        assert!(p.prologue.is_empty());
        assert_eq!(p.step_count, 1);
        assert_eq!(p.step_body.len(), 1);
        assert!(matches!(p.step_body[0].kind, StmtKind::Print(_)));
    }

    #[test]
    fn duplicate_steps_block() {
        assert!(matches!(parse("steps 1 { } steps 2 { }"), Err(FrontendError::Validation { .. })));
    }

    #[test]
    fn missing_steps_block() {
        assert!(matches!(parse("let x = 1"), Err(FrontendError::Validation { .. })));
    }

    #[test]
    fn validation_errors() {
        let cases = [
            "steps 1 { var w = 1 }",
            "steps 1 { y = 1 }",
            "steps 1 { let y = conv(1) }",
            "steps 1 { let y = native nope(1) }",
            "steps 1 { let y = matmul(1) }",
            "steps 1 { let y = native coin() }",
            "steps 1 { print(z) }",
            "steps 1 { if true { let a = 1 } a = 2 }",
        ];
        for src in cases {
            assert!(matches!(parse(src), Err(FrontendError::Validation { .. })), "{src}");
        }
    }

    #[test]
    fn syntax_errors() {
        for src in ["steps 1 { let = 1 }", "steps 1 { print(1 }", "steps 0 { }", "steps 1 { let x = 1 2 }"] {
            assert!(matches!(parse(src), Err(FrontendError::Parse { .. })), "{src}");
        }
    }

    #[test]
    fn branchy_program_structure() {
        let p = parse(TWO_PATHS).unwrap();
        let ifs = p.step_body.iter().filter(|s| matches!(s.kind, StmtKind::If { .. })).count();
        assert_eq!(ifs, 1);
        assert_eq!(p.loop_ids(), vec![LoopId(0)]);
        let ops: Vec<OpKind> = p.op_sites().into_iter().map(|(_, k)| k).collect();
        assert_eq!(ops, vec![OpKind::Add, OpKind::Relu, OpKind::Relu, OpKind::Sigmoid, OpKind::Neg]);
    }

    #[test]
    fn ids_are_unique_and_stable() {
        let a = parse(TWO_PATHS).unwrap();
        let b = parse(TWO_PATHS).unwrap();
        assert_eq!(a, b);
        let mut ids = Vec::new();
        for s in a.prologue.iter().chain(&a.step_body) {
            s.visit_stmts(&mut |s| ids.push(s.id));
            s.visit_exprs(&mut |e| ids.push(e.id));
        }
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn print_parse_fixpoint() {
        let p = parse(TWO_PATHS).unwrap();
        let printed = p.to_string();
        let q = parse(&printed).unwrap();
        assert_eq!(p.without_positions(), q.without_positions());
        assert_eq!(printed, q.to_string());
    }

    #[test]
    fn precedence_and_newlines_in_parens() {
        let p = parse("let a = 1 + 2 * 3 < 10 and not false\nlet b = add(\n  1,\n  2)\nsteps 1 { }").unwrap();
        let printed = p.to_string();
        assert!(printed.contains("let a = (((1.0 + (2.0 * 3.0)) < 10.0) and not false)"), "{printed}");
    }

    #[test]
    fn elif_else_chain() {
        let src = "steps 1 { let a = 1\n if a < 0 { print(0) }\n elif a < 2 { print(1) }\n else { print(2) } }";
        let p = parse(src).unwrap();
        match &p.step_body[1].kind {
            StmtKind::If { elifs, els, .. } => {
                assert_eq!(elifs.len(), 1);
                assert!(els.is_some());
            }
            other => panic!("{other:?}"),
        }
    }
}
