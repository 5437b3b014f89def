//! The differentiation tape: a flat record of primitive scalar operations.

use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math;

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Tanh(u32),
    Softplus(u32),
    Max(u32, u32),
    /// Fused `a * b + c`; the workhorse of dot products.
    MulAdd(u32, u32, u32),
}

#[derive(Clone, Copy)]
struct Node {
    op: Op,
    val: f64,
}

#[derive(Default)]
struct TapeData {
    nodes: Vec<Node>,
    /// Node indices of registered inputs, in registration order.
    inputs: Vec<u32>,
}

/// Reverse-mode differentiation record.
///
/// Values are computed eagerly as the expression is built; `gradient` runs a
/// single backward sweep. One tape per evaluation; tapes are not shared
/// across threads.
pub struct Tape {
    data: RefCell<TapeData>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapeError {
    /// A node's value is NaN or infinite; carries the node index.
    NonFinite { node: usize },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::NonFinite { node } => {
                write!(f, "non-finite intermediate value at tape node {node}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TapeError {}

impl Tape {
    pub fn new() -> Self {
        Tape {
            data: RefCell::new(TapeData::default()),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Tape::new();
        tape.data.borrow_mut().nodes.reserve(nodes);
        tape
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes but keep the allocation for reuse.
    pub fn clear(&self) {
        let mut d = self.data.borrow_mut();
        d.nodes.clear();
        d.inputs.clear();
    }

    fn push(&self, op: Op, val: f64) -> Var<'_> {
        let mut d = self.data.borrow_mut();
        let idx = d.nodes.len() as u32;
        d.nodes.push(Node { op, val });
        Var { tape: self, idx }
    }

    /// Register a differentiable input (a parameter slot).
    pub fn input(&self, value: f64) -> Var<'_> {
        let v = self.push(Op::Input, value);
        self.data.borrow_mut().inputs.push(v.idx);
        v
    }

    /// Record a constant (no gradient flows into it).
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, value)
    }

    /// Gradient of `output` with respect to every registered input, in
    /// registration order. Fails if any node holds a non-finite value.
    pub fn gradient(&self, output: Var<'_>) -> Result<Vec<f64>, TapeError> {
        assert!(
            core::ptr::eq(output.tape, self),
            "output var belongs to a different tape"
        );
        let d = self.data.borrow();
        for (i, n) in d.nodes.iter().enumerate() {
            if !n.val.is_finite() {
                return Err(TapeError::NonFinite { node: i });
            }
        }
        let mut adj = alloc::vec![0.0f64; d.nodes.len()];
        adj[output.idx as usize] = 1.0;
        for i in (0..d.nodes.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let nodes = &d.nodes;
            match nodes[i].op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] += g;
                }
                Op::Sub(a, b) => {
                    adj[a as usize] += g;
                    adj[b as usize] -= g;
                }
                Op::Mul(a, b) => {
                    adj[a as usize] += g * nodes[b as usize].val;
                    adj[b as usize] += g * nodes[a as usize].val;
                }
                Op::Div(a, b) => {
                    let bv = nodes[b as usize].val;
                    adj[a as usize] += g / bv;
                    adj[b as usize] -= g * nodes[i].val / bv;
                }
                Op::Neg(a) => adj[a as usize] -= g,
                Op::Exp(a) => adj[a as usize] += g * nodes[i].val,
                Op::Ln(a) => adj[a as usize] += g / nodes[a as usize].val,
                Op::Tanh(a) => {
                    let y = nodes[i].val;
                    adj[a as usize] += g * (1.0 - y * y);
                }
                Op::Softplus(a) => {
                    adj[a as usize] += g * math::sigmoid(nodes[a as usize].val);
                }
                Op::Max(a, b) => {
                    if nodes[a as usize].val >= nodes[b as usize].val {
                        adj[a as usize] += g;
                    } else {
                        adj[b as usize] += g;
                    }
                }
                Op::MulAdd(a, b, c) => {
                    adj[a as usize] += g * nodes[b as usize].val;
                    adj[b as usize] += g * nodes[a as usize].val;
                    adj[c as usize] += g;
                }
            }
        }
        Ok(d.inputs.iter().map(|&i| adj[i as usize]).collect())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// A value recorded on a [`Tape`]. Copyable handle, 12 bytes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl<'t> Var<'t> {
    fn val(&self) -> f64 {
        self.tape.data.borrow().nodes[self.idx as usize].val
    }

    fn unary(self, op: fn(u32) -> Op, f: fn(f64) -> f64) -> Var<'t> {
        let v = f(self.val());
        self.tape.push(op(self.idx), v)
    }

    fn binary(self, rhs: Var<'t>, op: fn(u32, u32) -> Op, f: fn(f64, f64) -> f64) -> Var<'t> {
        debug_assert!(core::ptr::eq(self.tape, rhs.tape));
        let v = f(self.val(), rhs.val());
        self.tape.push(op(self.idx, rhs.idx), v)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add, |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub, |a, b| a - b)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul, |a, b| a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Div, |a, b| a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |a| -a)
    }
}

/// The scalar abstraction the model is written against.
///
/// `f64` gives the plain forward pass; [`Var`] records the same computation
/// on a tape for reverse-mode gradients.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant in the same computation context as `self`.
    fn lit(&self, v: f64) -> Self;
    /// The primal value. Only for data-dependent control flow and reporting.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn softplus(self) -> Self;
    fn max(self, other: Self) -> Self;
    /// `self * b + c`.
    fn mul_add(self, b: Self, c: Self) -> Self;
}

impl Scalar for f64 {
    #[inline(always)]
    fn lit(&self, v: f64) -> f64 {
        v
    }
    #[inline(always)]
    fn value(&self) -> f64 {
        *self
    }
    #[inline(always)]
    fn exp(self) -> f64 {
        math::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> f64 {
        math::ln(self)
    }
    #[inline(always)]
    fn tanh(self) -> f64 {
        math::tanh(self)
    }
    #[inline(always)]
    fn softplus(self) -> f64 {
        math::softplus(self)
    }
    #[inline(always)]
    fn max(self, other: f64) -> f64 {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline(always)]
    fn mul_add(self, b: f64, c: f64) -> f64 {
        self * b + c
    }
}

impl<'t> Scalar for Var<'t> {
    fn lit(&self, v: f64) -> Var<'t> {
        self.tape.constant(v)
    }
    fn value(&self) -> f64 {
        self.val()
    }
    fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, math::exp)
    }
    fn ln(self) -> Var<'t> {
        self.unary(Op::Ln, math::ln)
    }
    fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh, math::tanh)
    }
    fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus, math::softplus)
    }
    fn max(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::Max, |a, b| if a >= b { a } else { b })
    }
    fn mul_add(self, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        debug_assert!(core::ptr::eq(self.tape, b.tape) && core::ptr::eq(self.tape, c.tape));
        let v = self.val() * b.val() + c.val();
        self.tape.push(Op::MulAdd(self.idx, b.idx, c.idx), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.input(3.0);
        let y = x * x;
        assert_eq!(y.value(), 9.0);
        let g = t.gradient(y).unwrap();
        assert_eq!(g, alloc::vec![6.0]);
    }

    #[test]
    fn softplus_gradient_at_zero_is_half() {
        let t = Tape::new();
        let x = t.input(0.0);
        let y = x.softplus();
        assert!((y.value() - core::f64::consts::LN_2).abs() < 1e-15);
        let g = t.gradient(y).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixed_expression_matches_finite_differences() {
        let f = |a: f64, b: f64| (a * b).tanh() + (a / b).exp().ln().softplus() - (-a).max(b);
        let (a0, b0) = (0.7, 1.3);
        let t = Tape::new();
        let a = t.input(a0);
        let b = t.input(b0);
        let y = (a * b).tanh() + (a / b).exp().ln().softplus() - (-a).max(b);
        let g = t.gradient(y).unwrap();
        let h = 1e-6;
        let ga = (f(a0 + h, b0) - f(a0 - h, b0)) / (2.0 * h);
        let gb = (f(a0, b0 + h) - f(a0, b0 - h)) / (2.0 * h);
        assert!((g[0] - ga).abs() < 1e-8, "{} vs {}", g[0], ga);
        assert!((g[1] - gb).abs() < 1e-8, "{} vs {}", g[1], gb);
        assert!((y.value() - f(a0, b0)).abs() < 1e-14);
    }

    #[test]
    fn mul_add_gradients() {
        let t = Tape::new();
        let a = t.input(2.0);
        let b = t.input(5.0);
        let c = t.input(-1.0);
        let y = a.mul_add(b, c);
        assert_eq!(y.value(), 9.0);
        let g = t.gradient(y).unwrap();
        assert_eq!(g, alloc::vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn non_finite_reports_node_index() {
        let t = Tape::new();
        let x = t.input(0.0);
        let y = x.ln(); // -inf at node 1
        match t.gradient(y) {
            Err(TapeError::NonFinite { node }) => assert_eq!(node, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn tape_reuse_after_clear() {
        let t = Tape::new();
        let x = t.input(1.0);
        let _ = x * x;
        assert_eq!(t.len(), 2);
        t.clear();
        assert!(t.is_empty());
        let x = t.input(4.0);
        let y = x * x;
        assert_eq!(t.gradient(y).unwrap(), alloc::vec![8.0]);
    }

    #[test]
    fn deterministic_evaluation() {
        let run = || {
            let t = Tape::new();
            let x = t.input(0.123_456_789);
            let mut acc = x;
            for _ in 0..50 {
                acc = (acc * x).tanh().softplus();
            }
            (acc.value(), t.gradient(acc).unwrap()[0])
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(g1.to_bits(), g2.to_bits());
    }
}
