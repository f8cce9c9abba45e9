//! Scalar reverse-mode tape.
//!
//! Every [`Var`] is a node holding its forward value and the local partials
//! to its parents. [`Tape::gradient`] sweeps the nodes once in reverse
//! creation order, so results are deterministic.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Default)]
struct Inner {
    /// `edges[ranges[i]..ranges[i + 1]]` are node `i`'s parents.
    ranges: Vec<usize>,
    edges: Vec<(u32, f64)>,
    ops: Vec<&'static str>,
    branch: u64,
    first_bad: Option<(usize, &'static str)>,
}

#[derive(Debug)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                ranges: vec![0],
                branch: 0xCBF2_9CE4_8422_2325,
                ..Default::default()
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, val: f64, op: &'static str, parents: &[(Var<'_>, f64)]) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.ops.len();
        for (p, d) in parents {
            inner.edges.push((p.idx, *d));
        }
        let end = inner.edges.len();
        inner.ranges.push(end);
        inner.ops.push(op);
        if !val.is_finite() && inner.first_bad.is_none() {
            inner.first_bad = Some((idx, op));
        }
        Var {
            tape: self,
            idx: idx as u32,
            val,
        }
    }

    /// New independent input.
    pub fn var(&self, val: f64) -> Var<'_> {
        self.push(val, "input", &[])
    }

    pub fn vars(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|v| self.var(*v)).collect()
    }

    pub fn constant(&self, val: f64) -> Var<'_> {
        self.push(val, "const", &[])
    }

    /// Node with caller-supplied local partials, for fused operations.
    pub fn custom<'t>(&'t self, val: f64, op: &'static str, parents: &[(Var<'t>, f64)]) -> Var<'t> {
        self.push(val, op, parents)
    }

    /// Mixes a discrete decision into the branch signature.
    pub fn record_branch(&self, tag: u64) {
        let mut inner = self.inner.borrow_mut();
        inner.branch = (inner.branch ^ tag).wrapping_mul(FNV_PRIME);
    }

    /// Hash of every branch taken so far.
    pub fn signature(&self) -> u64 {
        self.inner.borrow().branch
    }

    /// Op name of the first node whose value was not finite.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.inner.borrow().first_bad.map(|(_, op)| op)
    }

    /// Adjoints of every node with respect to `out`, indexed by node.
    pub fn gradient(&self, out: Var<'_>) -> Vec<f64> {
        let inner = self.inner.borrow();
        let n = inner.ops.len();
        let mut adj = vec![0.0; n];
        adj[out.idx as usize] = 1.0;
        for i in (0..=out.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, d) in &inner.edges[inner.ranges[i]..inner.ranges[i + 1]] {
                adj[p as usize] += a * d;
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    /// Node position on the tape; indexes [`Tape::gradient`].
    pub fn index(self) -> usize {
        self.idx as usize
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, val: f64, op: &'static str, d: f64) -> Self {
        self.tape.push(val, op, &[(self, d)])
    }

    fn binary(self, other: Self, val: f64, op: &'static str, da: f64, db: f64) -> Self {
        self.tape.push(val, op, &[(self, da), (other, db)])
    }
}

/// Arithmetic shared by `f64` and [`Var`], so loss terms are written once
/// and either evaluated or differentiated.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, v: f64) -> Self;
    /// `|x|` with derivative `sign(x)` and `sign(0) = 0`.
    fn abs(self) -> Self;
    fn square(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    /// Ordered sum of a non-empty slice.
    fn sum(xs: &[Self]) -> Self;
    /// `Σ w_i x_i` over a non-empty slice.
    fn weighted_sum(xs: &[Self], w: &[f64]) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, v: f64) -> Self {
        v
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn square(self) -> Self {
        self * self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn weighted_sum(xs: &[Self], w: &[f64]) -> Self {
        xs.iter().zip(w).map(|(x, w)| x * w).sum()
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.val
    }
    fn lift(self, v: f64) -> Self {
        self.tape.constant(v)
    }
    fn abs(self) -> Self {
        let s = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.tape.record_branch(s as i64 as u64);
        self.unary(self.val.abs(), "abs", s)
    }
    fn square(self) -> Self {
        self.unary(self.val * self.val, "square", 2.0 * self.val)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, "exp", e)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, "sqrt", 0.5 / s)
    }
    fn sum(xs: &[Self]) -> Self {
        let tape = xs[0].tape;
        let parents: Vec<_> = xs.iter().map(|x| (*x, 1.0)).collect();
        tape.push(xs.iter().map(|x| x.val).sum(), "sum", &parents)
    }
    fn weighted_sum(xs: &[Self], w: &[f64]) -> Self {
        let tape = xs[0].tape;
        let parents: Vec<_> = xs.iter().zip(w).map(|(x, w)| (*x, *w)).collect();
        let val = xs.iter().zip(w).map(|(x, w)| x.val * w).sum();
        tape.push(val, "weighted_sum", &parents)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.val + o.val, "add", 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.val - o.val, "sub", 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.val * o.val, "mul", o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        self.binary(o, q, "div", 1.0 / o.val, -q / o.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, "neg", -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.unary(self.val + c, "add_const", 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.unary(self.val - c, "sub_const", 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.unary(self.val * c, "mul_const", c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.unary(self.val / c, "div_const", 1.0 / c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let t = Tape::new();
        let x = t.var(3.0);
        let y = t.var(-2.0);
        let f = x * y + x.square() - y / x;
        let g = t.gradient(f);
        assert_eq!(f.value(), -6.0 + 9.0 + 2.0 / 3.0);
        assert!((g[x.index()] - (-2.0 + 6.0 + y.value() / 9.0)).abs() < 1e-15);
        assert!((g[y.index()] - (3.0 - 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn abs_at_zero_has_zero_slope() {
        let t = Tape::new();
        let x = t.var(0.0);
        let f = x.abs();
        assert_eq!(t.gradient(f)[x.index()], 0.0);
    }

    #[test]
    fn branch_signature_tracks_sign() {
        let sig = |v: f64| {
            let t = Tape::new();
            let _ = t.var(v).abs();
            t.signature()
        };
        assert_eq!(sig(1.0), sig(2.0));
        assert_ne!(sig(1.0), sig(-1.0));
    }

    #[test]
    fn first_non_finite_names_the_op() {
        let t = Tape::new();
        let x = t.var(-1.0);
        let y = x.sqrt();
        let _ = y * 2.0;
        assert_eq!(t.first_non_finite(), Some("sqrt"));
    }

    #[test]
    fn weighted_sum_matches_expansion() {
        let t = Tape::new();
        let xs = t.vars(&[1.0, 2.0, 3.0]);
        let f = Real::weighted_sum(&xs, &[0.5, -1.0, 2.0]);
        assert_eq!(f.value(), 4.5);
        let g = t.gradient(f);
        assert_eq!([g[xs[0].index()], g[xs[1].index()], g[xs[2].index()]], [0.5, -1.0, 2.0]);
    }
}
