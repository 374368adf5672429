use std::collections::HashMap;
use std::sync::Arc;

use crate::frontend::{BinOp, Expr, ExprKind, LoopId, Pos, Program, SourceLoc, Stmt, StmtKind, UnOp};
use crate::tensor::{AttrValue, Attrs, OpKind, Tensor};

use super::natives::eval_native;
use super::trace::TraceEvent;
use super::{format_num, ExecState, RunError, RunErrorKind, TensorVal, Value};

/// What the evaluator needs from an execution mode.
pub trait Backend {
    /// Invokes a tensor operation. Inputs without a handle are external
    /// values (feeds); their slot is `(loc.site, position)`.
    fn op(&mut self, kind: OpKind, attrs: Attrs, loc: SourceLoc, inputs: &[TensorVal]) -> Result<TensorVal, RunErrorKind>;
    /// Tensor data for host use; may block on the graph runner.
    fn materialize(&mut self, t: &TensorVal) -> Result<Arc<Tensor>, RunErrorKind>;
    fn marker(&mut self, ev: TraceEvent) -> Result<(), RunErrorKind>;
    fn print(&mut self, line: String);
    /// Prologue `var` declarations.
    fn declare_var(&mut self, name: &str, value: Tensor) -> Result<(), RunErrorKind>;
}

type R<T> = Result<T, RunError>;

struct Interp<'a> {
    state: &'a mut ExecState,
    backend: &'a mut dyn Backend,
    scopes: Vec<HashMap<String, Value>>,
    step: Option<u64>,
}

fn at(pos: Pos, step: Option<u64>) -> impl Fn(RunErrorKind) -> RunError {
    move |kind| RunError { step, phase: None, pos: Some(pos), kind }
}

pub(super) fn run_prologue(state: &mut ExecState, program: &Program, backend: &mut dyn Backend) -> R<HashMap<String, Value>> {
    let mut it = Interp { state, backend, scopes: vec![HashMap::new()], step: None };
    let mut lp = Vec::new();
    for s in &program.prologue {
        it.exec(s, &mut lp)?;
    }
    Ok(it.scopes.pop().expect("prologue scope"))
}

pub(super) fn run_step(state: &mut ExecState, program: &Program, backend: &mut dyn Backend) -> R<()> {
    let env = state.prologue_env.clone();
    let step = Some(state.step);
    let mut it = Interp { state, backend, scopes: vec![env], step };
    let mut lp = Vec::new();
    it.exec_block(&program.step_body, &mut lp)
}

impl Interp<'_> {
    fn err(&self, pos: Pos) -> impl Fn(RunErrorKind) -> RunError {
        at(pos, self.step)
    }

    fn exec_block(&mut self, stmts: &[Stmt], lp: &mut Vec<LoopId>) -> R<()> {
        self.scopes.push(HashMap::new());
        let r = stmts.iter().try_for_each(|s| self.exec(s, lp));
        self.scopes.pop();
        r
    }

    fn lookup(&self, name: &str) -> Option<&Value> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn lookup_mut(&mut self, name: &str) -> Option<&mut Value> {
        self.scopes.iter_mut().rev().find_map(|s| s.get_mut(name))
    }

    fn cond(&mut self, e: &Expr, lp: &[LoopId]) -> R<bool> {
        match self.eval(e, lp)? {
            Value::Bool(b) => Ok(b),
            other => Err(self.err(e.pos)(RunErrorKind::NonBoolCondition(other.type_name()))),
        }
    }

    fn exec(&mut self, s: &Stmt, lp: &mut Vec<LoopId>) -> R<()> {
        let err = self.err(s.pos);
        match &s.kind {
            StmtKind::VarDecl { name, value } => {
                let v = self.eval(value, lp)?;
                let t = self.tensor_operand(v).map_err(&err)?;
                let data = self.backend.materialize(&t).map_err(&err)?;
                self.backend.declare_var(name, data.as_ref().clone()).map_err(&err)?;
            }
            StmtKind::Let { name, value } => {
                let v = self.eval(value, lp)?;
                self.scopes.last_mut().expect("scope").insert(name.clone(), v);
            }
            StmtKind::Assign { name, value } => {
                let v = self.eval(value, lp)?;
                if let Some(slot) = self.lookup_mut(name) {
                    *slot = v;
                } else if self.state.var_names.contains(name) {
                    let t = self.tensor_operand(v).map_err(&err)?;
                    let attrs = Attrs::new().with("var_name", AttrValue::Str(name.clone()));
                    let loc = SourceLoc { site: s.id, loop_path: lp.clone() };
                    self.backend.op(OpKind::AssignVar, attrs, loc, &[t]).map_err(&err)?;
                } else {
                    return Err(err(RunErrorKind::Type(format!("assignment to undeclared `{name}`"))));
                }
            }
            StmtKind::Print(e) => {
                let v = self.eval(e, lp)?;
                let line = self.render(v).map_err(&err)?;
                self.backend.print(line);
            }
            StmtKind::If { cond, then, elifs, els } => {
                if self.cond(cond, lp)? {
                    return self.exec_block(then, lp);
                }
                for (c, body) in elifs {
                    if self.cond(c, lp)? {
                        return self.exec_block(body, lp);
                    }
                }
                if let Some(body) = els {
                    self.exec_block(body, lp)?;
                }
            }
            StmtKind::While { loop_id, cond, body } => {
                self.backend.marker(TraceEvent::LoopEnter(*loop_id)).map_err(&err)?;
                lp.push(*loop_id);
                // every condition evaluation opens an iteration, so ops in
                // the condition belong to the loop body
                loop {
                    self.backend.marker(TraceEvent::LoopIterStart(*loop_id)).map_err(&err)?;
                    if !self.cond(cond, lp)? {
                        break;
                    }
                    self.exec_block(body, lp)?;
                }
                lp.pop();
                self.backend.marker(TraceEvent::LoopExit(*loop_id)).map_err(&err)?;
            }
            StmtKind::For { loop_id, var, count, body } => {
                let n = match self.eval(count, lp)? {
                    Value::Num(x) if x >= 0.0 && x.fract() == 0.0 && x.is_finite() => x as u64,
                    other => {
                        return Err(err(RunErrorKind::Type(format!(
                            "range() needs a non-negative integer, got {}",
                            self.describe(&other)
                        ))))
                    }
                };
                self.backend.marker(TraceEvent::LoopEnter(*loop_id)).map_err(&err)?;
                lp.push(*loop_id);
                for i in 0..n {
                    self.backend.marker(TraceEvent::LoopIterStart(*loop_id)).map_err(&err)?;
                    self.scopes.push(HashMap::from([(var.clone(), Value::Num(i as f64))]));
                    let r = self.exec_block(body, lp);
                    self.scopes.pop();
                    r?;
                }
                lp.pop();
                self.backend.marker(TraceEvent::LoopExit(*loop_id)).map_err(&err)?;
            }
        }
        Ok(())
    }

    fn describe(&self, v: &Value) -> String {
        match v {
            Value::Num(x) => format_num(*x),
            other => other.type_name().to_string(),
        }
    }

    /// Lifts host numbers and lists to constant tensors.
    fn tensor_operand(&self, v: Value) -> Result<TensorVal, RunErrorKind> {
        match v {
            Value::Tensor(t) => Ok(t),
            Value::Num(x) => Ok(TensorVal::constant(Tensor::scalar(x))),
            Value::List(xs) => Ok(TensorVal::constant(Tensor::vector(xs))),
            other => Err(RunErrorKind::Type(format!("a {} cannot be a tensor operand", other.type_name()))),
        }
    }

    fn render(&mut self, v: Value) -> Result<String, RunErrorKind> {
        Ok(match v {
            Value::Num(x) => format_num(x),
            Value::Bool(b) => b.to_string(),
            Value::Str(s) => s,
            Value::List(xs) => format!("[{}]", xs.iter().map(|&x| format_num(x)).collect::<Vec<_>>().join(", ")),
            Value::Tensor(t) => self.backend.materialize(&t)?.to_string(),
        })
    }

    /// Host view of a tensor for natives and `item`.
    fn host(&mut self, v: Value) -> Result<Value, RunErrorKind> {
        match v {
            Value::Tensor(t) => {
                let data = self.backend.materialize(&t)?;
                Ok(if data.data().len() == 1 { Value::Num(data.data()[0]) } else { Value::List(data.data().to_vec()) })
            }
            other => Ok(other),
        }
    }

    fn host_list(&self, v: &Value, what: &str) -> Result<Vec<usize>, RunErrorKind> {
        let xs = match v {
            Value::List(xs) => xs.clone(),
            Value::Num(x) => vec![*x],
            other => return Err(RunErrorKind::Type(format!("{what} must be a list, got {}", other.type_name()))),
        };
        xs.iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 && x.is_finite() {
                    Ok(x as usize)
                } else {
                    Err(RunErrorKind::Type(format!("{what} entries must be non-negative integers, got {x}")))
                }
            })
            .collect()
    }

    fn eval(&mut self, e: &Expr, lp: &[LoopId]) -> R<Value> {
        let err = self.err(e.pos);
        match &e.kind {
            ExprKind::Num(x) => Ok(Value::Num(*x)),
            ExprKind::Str(s) => Ok(Value::Str(s.clone())),
            ExprKind::Bool(b) => Ok(Value::Bool(*b)),
            ExprKind::List(items) => {
                let mut xs = Vec::with_capacity(items.len());
                for item in items {
                    match self.eval(item, lp)? {
                        Value::Num(x) => xs.push(x),
                        other => return Err(err(RunErrorKind::Type(format!("list of {}", other.type_name())))),
                    }
                }
                Ok(Value::List(xs))
            }
            ExprKind::Ident(name) => {
                if let Some(v) = self.lookup(name) {
                    return Ok(v.clone());
                }
                if self.state.var_names.contains(name) {
                    let attrs = Attrs::new().with("var_name", AttrValue::Str(name.clone()));
                    let loc = SourceLoc { site: e.id, loop_path: lp.to_vec() };
                    return self.backend.op(OpKind::ReadVar, attrs, loc, &[]).map(Value::Tensor).map_err(&err);
                }
                Err(err(RunErrorKind::Type(format!("unknown name `{name}`"))))
            }
            ExprKind::Op { kind, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, lp)?);
                }
                let mut attrs = Attrs::new();
                let tensor_args = match kind {
                    OpKind::Transpose => {
                        if let Some(p) = vals.get(1) {
                            attrs.insert("perm", AttrValue::Shape(self.host_list(p, "perm").map_err(&err)?));
                        }
                        vals.truncate(1);
                        vals
                    }
                    OpKind::Reshape => {
                        let target = self.host_list(&vals[1], "reshape target").map_err(&err)?;
                        attrs.insert("target_shape", AttrValue::Shape(target));
                        vals.truncate(1);
                        vals
                    }
                    OpKind::Fill => {
                        let shape = self.host_list(&vals[0], "fill shape").map_err(&err)?;
                        let value = match &vals[1] {
                            Value::Num(x) => *x,
                            other => {
                                return Err(err(RunErrorKind::Type(format!(
                                    "fill value must be a number, got {}",
                                    other.type_name()
                                ))))
                            }
                        };
                        attrs.insert("shape", AttrValue::Shape(shape));
                        attrs.insert("value", AttrValue::Float(value));
                        Vec::new()
                    }
                    _ => vals,
                };
                let inputs = tensor_args
                    .into_iter()
                    .map(|v| self.tensor_operand(v))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(&err)?;
                let loc = SourceLoc { site: e.id, loop_path: lp.to_vec() };
                self.backend.op(*kind, attrs, loc, &inputs).map(Value::Tensor).map_err(&err)
            }
            ExprKind::Input { name, shape } => {
                let shape = match shape {
                    Some(s) => {
                        let v = self.eval(s, lp)?;
                        Some(self.host_list(&v, "input shape").map_err(&err)?)
                    }
                    None => None,
                };
                let t = self.state.dataset.next(name, shape.as_ref()).map_err(&err)?;
                Ok(Value::Tensor(TensorVal::constant(t)))
            }
            ExprKind::Native { name, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    let v = self.eval(a, lp)?;
                    let v = match v {
                        // natives see tensors as flat host lists
                        Value::Tensor(t) => Value::List(self.backend.materialize(&t).map_err(&err)?.data().to_vec()),
                        other => other,
                    };
                    vals.push(v);
                }
                let step = self.step.unwrap_or(0);
                eval_native(name, &vals, step, &mut self.state.natives).map_err(&err)
            }
            ExprKind::Item(inner) => {
                let v = self.eval(inner, lp)?;
                self.host(v).map_err(&err)
            }
            ExprKind::Unary { op, expr } => {
                let v = self.eval(expr, lp)?;
                match (op, v) {
                    (UnOp::Neg, Value::Num(x)) => Ok(Value::Num(-x)),
                    (UnOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
                    (_, v) => Err(err(host_type_error(&v))),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs, lp)?;
                if let (BinOp::And | BinOp::Or, Value::Bool(b)) = (op, &l) {
                    if (*op == BinOp::And && !b) || (*op == BinOp::Or && *b) {
                        return Ok(Value::Bool(*b));
                    }
                    return match self.eval(rhs, lp)? {
                        Value::Bool(r) => Ok(Value::Bool(r)),
                        other => Err(err(host_type_error(&other))),
                    };
                }
                let r = self.eval(rhs, lp)?;
                binary(*op, l, r).map_err(&err)
            }
        }
    }
}

fn host_type_error(v: &Value) -> RunErrorKind {
    match v {
        Value::Tensor(_) => RunErrorKind::Type("tensor used in a host expression; use item(...)".into()),
        other => RunErrorKind::Type(format!("unexpected {}", other.type_name())),
    }
}

fn binary(op: BinOp, l: Value, r: Value) -> Result<Value, RunErrorKind> {
    use Value::*;
    Ok(match (op, l, r) {
        (_, Tensor(_), _) | (_, _, Tensor(_)) => {
            return Err(RunErrorKind::Type("tensor used in a host expression; use item(...)".into()))
        }
        (BinOp::Add, Num(a), Num(b)) => Num(a + b),
        (BinOp::Add, Str(a), Str(b)) => Str(a + &b),
        (BinOp::Sub, Num(a), Num(b)) => Num(a - b),
        (BinOp::Mul, Num(a), Num(b)) => Num(a * b),
        (BinOp::Div, Num(a), Num(b)) => Num(a / b),
        (BinOp::Lt, Num(a), Num(b)) => Bool(a < b),
        (BinOp::Gt, Num(a), Num(b)) => Bool(a > b),
        (BinOp::Le, Num(a), Num(b)) => Bool(a <= b),
        (BinOp::Ge, Num(a), Num(b)) => Bool(a >= b),
        (BinOp::Eq | BinOp::Ne, a, b) => {
            let eq = match (&a, &b) {
                (Num(x), Num(y)) => x == y,
                (Bool(x), Bool(y)) => x == y,
                (Str(x), Str(y)) => x == y,
                (List(x), List(y)) => x == y,
                _ => {
                    return Err(RunErrorKind::Type(format!("cannot compare {} with {}", a.type_name(), b.type_name())))
                }
            };
            Bool(if op == BinOp::Eq { eq } else { !eq })
        }
        (op, a, b) => {
            return Err(RunErrorKind::Type(format!(
                "`{}` is not defined for {} and {}",
                op.symbol(),
                a.type_name(),
                b.type_name()
            )))
        }
    })
}
