//! Dense `f64` tensors, the closed operation set, shape inference and the
//! deterministic reference kernels shared by every execution mode.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Shape = Vec<usize>;

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major dense tensor. Equality is bitwise on the element data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, ShapeError> {
        if num_elements(&shape) != data.len() {
            return Err(ShapeError::ShapeMismatch(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                num_elements(&shape),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self { shape: vec![values.len()], data: values }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        let n = num_elements(&shape);
        Self { shape, data: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for Tensor {}

/// Formats as nested brackets using the shortest round-trip decimal of
/// each element.
impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rec(f: &mut fmt::Formatter<'_>, shape: &[usize], data: &[f64]) -> fmt::Result {
            match shape.split_first() {
                None => write!(f, "{}", data[0]),
                Some((&n, rest)) => {
                    let stride = num_elements(rest);
                    f.write_str("[")?;
                    for i in 0..n {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        rec(f, rest, &data[i * stride..(i + 1) * stride])?;
                    }
                    f.write_str("]")
                }
            }
        }
        rec(f, &self.shape, &self.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Neg,
    Relu,
    Sigmoid,
    Sum,
    Mean,
    Transpose,
    Reshape,
    Fill,
    ReadVar,
    AssignVar,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Neg,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Fill,
        OpKind::ReadVar,
        OpKind::AssignVar,
    ];

    /// Number of tensor inputs.
    pub fn arity(self) -> usize {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            OpKind::Fill | OpKind::ReadVar => 0,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "MatMul",
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Neg => "Neg",
            OpKind::Relu => "Relu",
            OpKind::Sigmoid => "Sigmoid",
            OpKind::Sum => "Sum",
            OpKind::Mean => "Mean",
            OpKind::Transpose => "Transpose",
            OpKind::Reshape => "Reshape",
            OpKind::Fill => "Fill",
            OpKind::ReadVar => "ReadVar",
            OpKind::AssignVar => "AssignVar",
        }
    }

    /// Source-language spelling for the kinds a program can call directly.
    pub fn from_call_name(name: &str) -> Option<OpKind> {
        Some(match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "neg" => OpKind::Neg,
            "relu" => OpKind::Relu,
            "sigmoid" => OpKind::Sigmoid,
            "sum" => OpKind::Sum,
            "mean" => OpKind::Mean,
            "transpose" => OpKind::Transpose,
            "reshape" => OpKind::Reshape,
            "fill" => OpKind::Fill,
            _ => return None,
        })
    }

    pub fn call_name(self) -> Option<&'static str> {
        Some(match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Neg => "neg",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Fill => "fill",
            OpKind::ReadVar | OpKind::AssignVar => return None,
        })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Static attribute value. Floats compare and hash by bit pattern.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Str(String),
    Shape(Shape),
}

impl AttrValue {
    fn rank(&self) -> u8 {
        match self {
            AttrValue::Int(_) => 0,
            AttrValue::Float(_) => 1,
            AttrValue::Str(_) => 2,
            AttrValue::Shape(_) => 3,
        }
    }
}

impl PartialEq for AttrValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for AttrValue {}

impl PartialOrd for AttrValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AttrValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (AttrValue::Int(a), AttrValue::Int(b)) => a.cmp(b),
            (AttrValue::Float(a), AttrValue::Float(b)) => a.to_bits().cmp(&b.to_bits()),
            (AttrValue::Str(a), AttrValue::Str(b)) => a.cmp(b),
            (AttrValue::Shape(a), AttrValue::Shape(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for AttrValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            AttrValue::Int(v) => v.hash(state),
            AttrValue::Float(v) => v.to_bits().hash(state),
            AttrValue::Str(v) => v.hash(state),
            AttrValue::Shape(v) => v.hash(state),
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Int(v) => write!(f, "{v}"),
            AttrValue::Float(v) => write!(f, "{v}"),
            AttrValue::Str(v) => write!(f, "{v}"),
            AttrValue::Shape(v) => write!(f, "{v:?}"),
        }
    }
}

/// Ordered attribute map; equality is equality of the sorted key/value
/// sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attrs(BTreeMap<String, AttrValue>);

impl Attrs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: AttrValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn insert(&mut self, key: &str, value: AttrValue) {
        self.0.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&AttrValue> {
        self.0.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &AttrValue)> {
        self.0.iter()
    }

    pub fn shape(&self, key: &str) -> Result<&[usize], ShapeError> {
        match self.0.get(key) {
            Some(AttrValue::Shape(s)) => Ok(s),
            _ => Err(ShapeError::BadAttrs(format!("missing shape attribute `{key}`"))),
        }
    }

    pub fn float(&self, key: &str) -> Result<f64, ShapeError> {
        match self.0.get(key) {
            Some(AttrValue::Float(v)) => Ok(*v),
            Some(AttrValue::Int(v)) => Ok(*v as f64),
            _ => Err(ShapeError::BadAttrs(format!("missing float attribute `{key}`"))),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str, ShapeError> {
        match self.0.get(key) {
            Some(AttrValue::Str(v)) => Ok(v),
            _ => Err(ShapeError::BadAttrs(format!("missing string attribute `{key}`"))),
        }
    }
}

impl fmt::Display for Attrs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{kind} expects {expected} input(s), got {got}")]
    Arity { kind: OpKind, expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad attributes: {0}")]
    BadAttrs(String),
    #[error("unknown variable `{0}`")]
    UnknownVar(String),
}

/// Per-kind synthetic latency, in microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindCost {
    #[serde(default)]
    pub base_us: f64,
    #[serde(default)]
    pub per_element_us: f64,
}

/// Synthetic kernel cost table. Unlisted kinds cost nothing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostConfig {
    pub kinds: BTreeMap<OpKind, KindCost>,
}

impl CostConfig {
    pub fn with(mut self, kind: OpKind, base_us: f64, per_element_us: f64) -> Self {
        self.kinds.insert(kind, KindCost { base_us, per_element_us });
        self
    }

    pub fn is_zero(&self) -> bool {
        self.kinds.values().all(|c| c.base_us == 0.0 && c.per_element_us == 0.0)
    }
}

pub fn kernel_cost(kind: OpKind, output_shapes: &[Shape], cost: &CostConfig) -> Duration {
    let Some(c) = cost.kinds.get(&kind) else {
        return Duration::ZERO;
    };
    let elements: usize = output_shapes.iter().map(|s| num_elements(s)).sum();
    let us = c.base_us + c.per_element_us * elements as f64;
    if us <= 0.0 {
        Duration::ZERO
    } else {
        Duration::from_nanos((us * 1000.0).round() as u64)
    }
}

/// Blocks the calling thread for an emulated device latency.
pub fn emulate_latency(d: Duration) {
    if !d.is_zero() {
        tighten_timer_slack();
        std::thread::sleep(d);
    }
}

/// Linux pads every sleep by the thread's timer slack (50µs by default),
/// which is a quarter of a typical emulated kernel. Drop it to 1ns, once
/// per thread.
#[cfg(target_os = "linux")]
fn tighten_timer_slack() {
    thread_local!(static DONE: std::cell::Cell<bool> = const { std::cell::Cell::new(false) });
    DONE.with(|done| {
        if !done.replace(true) {
            // best effort: on failure sleeps are just less precise
            unsafe { libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong) };
        }
    });
}

#[cfg(not(target_os = "linux"))]
fn tighten_timer_slack() {}

/// Variable store access for the stateful kinds.
pub trait VarAccess {
    fn read_var(&self, name: &str) -> Option<Tensor>;
    fn write_var(&mut self, name: &str, value: Tensor);
}

impl VarAccess for BTreeMap<String, Tensor> {
    fn read_var(&self, name: &str) -> Option<Tensor> {
        self.get(name).cloned()
    }

    fn write_var(&mut self, name: &str, value: Tensor) {
        self.insert(name.to_string(), value);
    }
}

fn check_arity(kind: OpKind, got: usize) -> Result<(), ShapeError> {
    if kind.arity() != got {
        return Err(ShapeError::Arity { kind, expected: kind.arity(), got });
    }
    Ok(())
}

fn transpose_perm(attrs: &Attrs, rank: usize) -> Result<Vec<usize>, ShapeError> {
    let perm: Vec<usize> = match attrs.get("perm") {
        Some(AttrValue::Shape(p)) => p.clone(),
        Some(_) => return Err(ShapeError::BadAttrs("`perm` must be a list".into())),
        None => (0..rank).rev().collect(),
    };
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(ShapeError::BadAttrs(format!("perm {perm:?} is not a permutation of rank {rank}")));
    }
    for &p in &perm {
        if p >= rank || seen[p] {
            return Err(ShapeError::BadAttrs(format!("perm {perm:?} is not a permutation of rank {rank}")));
        }
        seen[p] = true;
    }
    Ok(perm)
}

fn broadcast_shape(kind: OpKind, a: &[usize], b: &[usize]) -> Result<Shape, ShapeError> {
    if a == b {
        Ok(a.to_vec())
    } else if a.is_empty() {
        Ok(b.to_vec())
    } else if b.is_empty() {
        Ok(a.to_vec())
    } else {
        Err(ShapeError::ShapeMismatch(format!("{kind}: {a:?} vs {b:?}")))
    }
}

/// Output shapes for every kind except `ReadVar`, whose shape lives in the
/// variable store (see [`infer_shape_in`]).
pub fn infer_shape(kind: OpKind, attrs: &Attrs, input_shapes: &[Shape]) -> Result<Vec<Shape>, ShapeError> {
    infer_shape_in(kind, attrs, input_shapes, &|_| None)
}

/// Shape inference with a lookup for variable shapes.
pub fn infer_shape_in(
    kind: OpKind,
    attrs: &Attrs,
    input_shapes: &[Shape],
    var_shape: &dyn Fn(&str) -> Option<Shape>,
) -> Result<Vec<Shape>, ShapeError> {
    check_arity(kind, input_shapes.len())?;
    let out = match kind {
        OpKind::MatMul => {
            let (a, b) = (&input_shapes[0], &input_shapes[1]);
            if a.len() != 2 || b.len() != 2 {
                return Err(ShapeError::ShapeMismatch(format!("MatMul needs rank-2 operands, got {a:?} and {b:?}")));
            }
            if a[1] != b[0] {
                return Err(ShapeError::ShapeMismatch(format!("MatMul inner dimensions differ: {a:?} x {b:?}")));
            }
            vec![a[0], b[1]]
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => broadcast_shape(kind, &input_shapes[0], &input_shapes[1])?,
        OpKind::Neg | OpKind::Relu | OpKind::Sigmoid | OpKind::AssignVar => input_shapes[0].clone(),
        OpKind::Sum | OpKind::Mean => Vec::new(),
        OpKind::Transpose => {
            let s = &input_shapes[0];
            let perm = transpose_perm(attrs, s.len())?;
            perm.iter().map(|&p| s[p]).collect()
        }
        OpKind::Reshape => {
            let target = attrs.shape("target_shape")?;
            if num_elements(target) != num_elements(&input_shapes[0]) {
                return Err(ShapeError::BadAttrs(format!(
                    "cannot reshape {:?} into {:?}",
                    input_shapes[0], target
                )));
            }
            target.to_vec()
        }
        OpKind::Fill => {
            attrs.float("value")?;
            attrs.shape("shape")?.to_vec()
        }
        OpKind::ReadVar => {
            let name = attrs.str("var_name")?;
            var_shape(name).ok_or_else(|| ShapeError::UnknownVar(name.to_string()))?
        }
    };
    if kind == OpKind::AssignVar {
        attrs.str("var_name")?;
    }
    Ok(vec![out])
}

fn elementwise(a: &Tensor, b: &Tensor, shape: Shape, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = if a.shape == b.shape {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else if a.rank() == 0 {
        let x = a.data[0];
        b.data.iter().map(|&y| f(x, y)).collect()
    } else {
        let y = b.data[0];
        a.data.iter().map(|&x| f(x, y)).collect()
    };
    Tensor { shape, data }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            let brow = &b.data[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    Tensor { shape: vec![m, n], data: out }
}

fn transpose(x: &Tensor, perm: &[usize], out_shape: Shape) -> Tensor {
    let rank = x.rank();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * x.shape[d + 1];
    }
    let total = x.data.len();
    let mut data = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        let offset: usize = (0..rank).map(|d| idx[d] * in_strides[perm[d]]).sum();
        data.push(x.data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor { shape: out_shape, data }
}

/// Runs one kernel. Summation orders are fixed (row-major accumulation,
/// i-k-j matmul), so identical inputs give bitwise-identical outputs. When
/// the cost table assigns latency to `kind`, the call also sleeps for it.
pub fn execute_kernel(
    kind: OpKind,
    attrs: &Attrs,
    inputs: &[&Tensor],
    cost: &CostConfig,
    vars: &mut dyn VarAccess,
) -> Result<Vec<Tensor>, ShapeError> {
    let shapes: Vec<Shape> = inputs.iter().map(|t| t.shape.clone()).collect();
    let lookup = |name: &str| vars.read_var(name).map(|t| t.shape);
    let out_shapes = infer_shape_in(kind, attrs, &shapes, &lookup)?;
    let shape = out_shapes[0].clone();
    let out = match kind {
        OpKind::MatMul => matmul(inputs[0], inputs[1]),
        OpKind::Add => elementwise(inputs[0], inputs[1], shape, |a, b| a + b),
        OpKind::Sub => elementwise(inputs[0], inputs[1], shape, |a, b| a - b),
        OpKind::Mul => elementwise(inputs[0], inputs[1], shape, |a, b| a * b),
        OpKind::Neg => Tensor { shape, data: inputs[0].data.iter().map(|x| -x).collect() },
        OpKind::Relu => Tensor { shape, data: inputs[0].data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect() },
        OpKind::Sigmoid => Tensor { shape, data: inputs[0].data.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect() },
        OpKind::Sum | OpKind::Mean => {
            let mut acc = 0.0;
            for &x in &inputs[0].data {
                acc += x;
            }
            if kind == OpKind::Mean {
                acc /= inputs[0].data.len() as f64;
            }
            Tensor::scalar(acc)
        }
        OpKind::Transpose => {
            let perm = transpose_perm(attrs, inputs[0].rank())?;
            transpose(inputs[0], &perm, shape)
        }
        OpKind::Reshape => Tensor { shape, data: inputs[0].data.clone() },
        OpKind::Fill => Tensor::full(shape, attrs.float("value")?),
        OpKind::ReadVar => {
            let name = attrs.str("var_name")?;
            vars.read_var(name).ok_or_else(|| ShapeError::UnknownVar(name.to_string()))?
        }
        OpKind::AssignVar => {
            let value = inputs[0].clone();
            vars.write_var(attrs.str("var_name")?, value.clone());
            value
        }
    };
    emulate_latency(kernel_cost(kind, &out_shapes, cost));
    Ok(vec![out])
}
