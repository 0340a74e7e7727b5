//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records every operation executed through [`Var`] handles.
//! Calling [`Tape::backward`] walks the record in reverse and produces
//! gradients for every node; [`Tape::backward_into`] additionally
//! accumulates parameter gradients into a [`ParamStore`].
//!
//! ```
//! use aprnet_core::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::scalar(3.0).with_grad());
//! let loss = x.mul(x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap()[0], 6.0);
//! ```

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::spectral;
use crate::spline::{dense_basis, SplineGrid, MAX_ORDER};
use crate::tensor::{
    broadcast_shape, broadcast_strides, check_perm, for_each_broadcast, gemm_nn, gemm_nt, gemm_tn,
    inverse_perm, numel, permute, reduce_to_shape, split_axis, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary<T> {
    Neg,
    Sigmoid,
    Tanh,
    Cos,
    Sin,
    Sqrt,
    Reciprocal,
    Exp,
    Scale(T),
    AddScalar(T),
    /// `sign(x)·max(|x|, floor)`; zero gradient inside the floored band.
    FloorMagnitude(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    /// Biased (divide-by-n) variance.
    Var,
}

enum Op<T: Real> {
    Leaf,
    Param(ParamId),
    Binary(Binary, usize, usize),
    Unary(Unary<T>, usize),
    Atan2(usize, usize),
    MatMul(usize, usize),
    Reduce {
        input: usize,
        kind: Reduce,
        axis: usize,
    },
    SumAll(usize),
    Transpose(usize, Vec<usize>),
    Reshape(usize),
    SliceFirst(usize, usize),
    Rfft {
        input: usize,
        axis: usize,
    },
    Irfft {
        re: usize,
        im: usize,
        axis: usize,
    },
    Basis {
        input: usize,
        derivs: Vec<T>,
    },
    Spline(Box<SplineSave<T>>),
    Conv1d(usize, usize),
    Softmax(usize),
}

/// Saved state of a fused spline contraction.
struct SplineSave<T> {
    x: usize,
    coeffs: usize,
    order: usize,
    nb: usize,
    /// Coefficients laid out `[in, nb, out]`.
    ct: Vec<T>,
    /// First active basis per (row, input); `usize::MAX` when out of range.
    first: Vec<usize>,
    values: Vec<T>,
    derivs: Vec<T>,
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass. Confined to one thread.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    out_of_range: Cell<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            out_of_range: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spline inputs that fell outside their grid on this tape.
    pub fn out_of_range_count(&self) -> usize {
        self.out_of_range.get()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        let mut value = value;
        value.requires_grad = requires_grad;
        value.grad = None;
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records `t`; it participates in differentiation when `t.requires_grad`.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    /// Records a parameter from `store`; backward_into routes its gradient back.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        let t = store.get(id);
        let rg = t.requires_grad;
        let value = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: rg,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradient of a scalar `loss` w.r.t. every node on the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backward_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`backward`](Self::backward) and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var<'_, T>, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        let nodes = self.nodes.borrow();
        for (node, g) in nodes.iter().zip(&grads.grads) {
            if let (Op::Param(pid), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*pid, g);
            }
        }
        Ok(grads)
    }

    pub(crate) fn rfft_packed(&self, x: Var<'_, T>, axis: usize) -> Result<Var<'_, T>> {
        let v = self.value_ref(x.id);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                axis,
                rank: shape.len(),
            });
        }
        if shape[axis] < 2 {
            return Err(Error::Argument(format!(
                "FFT axis needs extent >= 2, got {}",
                shape[axis]
            )));
        }
        let (re, mut im) = spectral::rfft_raw(v.data(), &shape, axis);
        drop(v);
        let mut out_shape = vec![2];
        out_shape.extend_from_slice(&shape);
        out_shape[axis + 1] = spectral::num_bins(shape[axis]);
        let mut data = re;
        data.append(&mut im);
        let rg = self.rg(x.id);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Rfft { input: x.id, axis },
            rg,
        ))
    }

    pub(crate) fn irfft(
        &self,
        re: Var<'_, T>,
        im: Var<'_, T>,
        n: usize,
        axis: usize,
    ) -> Result<Var<'_, T>> {
        let (rv, iv) = (self.value_ref(re.id), self.value_ref(im.id));
        let shape = rv.shape().to_vec();
        if shape != iv.shape() {
            return Err(Error::shape(&shape, iv.shape(), "irfft re/im"));
        }
        if axis >= shape.len() {
            return Err(Error::Index {
                axis,
                rank: shape.len(),
            });
        }
        if n < 2 || shape[axis] != spectral::num_bins(n) {
            return Err(Error::shape(
                &shape,
                &[spectral::num_bins(n)],
                "irfft bin count vs source length",
            ));
        }
        let data = spectral::irfft_raw(rv.data(), iv.data(), &shape, axis, n);
        drop((rv, iv));
        let mut out_shape = shape;
        out_shape[axis] = n;
        let rg = self.rg(re.id) || self.rg(im.id);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Irfft {
                re: re.id,
                im: im.id,
                axis,
            },
            rg,
        ))
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], id: usize, g: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn backward_node<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Binary(kind, a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let shape = out.shape();
            let (ga, gb): (Vec<T>, Vec<T>) = match kind {
                Binary::Add => (g.to_vec(), g.to_vec()),
                Binary::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                Binary::Mul => {
                    let sa = broadcast_strides(va.shape(), shape);
                    let sb = broadcast_strides(vb.shape(), shape);
                    let mut ga = vec![T::zero(); g.len()];
                    let mut gb = vec![T::zero(); g.len()];
                    let (da, db) = (va.data(), vb.data());
                    for_each_broadcast(shape, &sa, &sb, |k, ia, ib| {
                        ga[k] = g[k] * db[ib];
                        gb[k] = g[k] * da[ia];
                    });
                    (ga, gb)
                }
            };
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, reduce_to_shape(&ga, shape, va.shape()));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, reduce_to_shape(&gb, shape, vb.shape()));
            }
        }
        Op::Unary(kind, a) => {
            let x = nodes[*a].value.data();
            let y = out.data();
            let gx: Vec<T> = match *kind {
                Unary::Neg => g.iter().map(|&v| -v).collect(),
                Unary::Sigmoid => zip_map(g, y, |gv, s| gv * s * (T::one() - s)),
                Unary::Tanh => zip_map(g, y, |gv, t| gv * (T::one() - t * t)),
                Unary::Cos => zip_map(g, x, |gv, xv| -gv * xv.sin()),
                Unary::Sin => zip_map(g, x, |gv, xv| gv * xv.cos()),
                Unary::Sqrt => zip_map(g, y, |gv, r| gv / (r + r)),
                Unary::Reciprocal => zip_map(g, y, |gv, r| -gv * r * r),
                Unary::Exp => zip_map(g, y, |gv, e| gv * e),
                Unary::Scale(c) => g.iter().map(|&v| v * c).collect(),
                Unary::AddScalar(_) => g.to_vec(),
                Unary::FloorMagnitude(f) => {
                    zip_map(g, x, |gv, xv| if xv.abs() >= f { gv } else { T::zero() })
                }
            };
            accumulate(nodes, grads, *a, gx);
        }
        Op::Atan2(y, x) => {
            // d atan2(y, x) = (x dy - y dx) / (x² + y²)
            let (vy, vx) = (nodes[*y].value.data(), nodes[*x].value.data());
            let eps2 = T::c(spectral::AMP_EPS * spectral::AMP_EPS);
            let mut gy = vec![T::zero(); g.len()];
            let mut gx = vec![T::zero(); g.len()];
            for k in 0..g.len() {
                let r2 = vx[k] * vx[k] + vy[k] * vy[k] + eps2;
                gy[k] = g[k] * vx[k] / r2;
                gx[k] = -g[k] * vy[k] / r2;
            }
            accumulate(nodes, grads, *y, gy);
            accumulate(nodes, grads, *x, gx);
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            let k = vb.shape()[0];
            let n = vb.shape()[1];
            let m = va.len() / k;
            if nodes[*a].requires_grad {
                let mut ga = vec![T::zero(); m * k];
                gemm_nt(g, vb.data(), &mut ga, m, k, n);
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![T::zero(); k * n];
                gemm_tn(va.data(), g, &mut gb, m, k, n);
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Reduce { input, kind, axis } => {
            let x = &nodes[*input].value;
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut gx = vec![T::zero(); x.len()];
            let nf = T::c(n as f64);
            for o in 0..outer {
                for i in 0..inner {
                    let gv = g[o * inner + i];
                    let at = |t: usize| (o * n + t) * inner + i;
                    match kind {
                        Reduce::Sum => (0..n).for_each(|t| gx[at(t)] = gv),
                        Reduce::Mean => (0..n).for_each(|t| gx[at(t)] = gv / nf),
                        Reduce::Var => {
                            let d = x.data();
                            let mean = (0..n).map(|t| d[at(t)]).sum::<T>() / nf;
                            let two = T::c(2.0);
                            (0..n).for_each(|t| gx[at(t)] = gv * two * (d[at(t)] - mean) / nf);
                        }
                    }
                }
            }
            accumulate(nodes, grads, *input, gx);
        }
        Op::SumAll(a) => {
            let n = nodes[*a].value.len();
            accumulate(nodes, grads, *a, vec![g[0]; n]);
        }
        Op::Transpose(a, perm) => {
            let inv = inverse_perm(perm);
            accumulate(nodes, grads, *a, permute(g, out.shape(), &inv));
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g.to_vec()),
        Op::SliceFirst(a, index) => {
            let src = &nodes[*a].value;
            let chunk = out.len();
            let mut gx = vec![T::zero(); src.len()];
            gx[index * chunk..(index + 1) * chunk].copy_from_slice(g);
            accumulate(nodes, grads, *a, gx);
        }
        Op::Rfft { input, axis } => {
            let n = nodes[*input].value.shape()[*axis];
            let half = out.len() / 2;
            let bin_shape = &out.shape()[1..];
            let gx = spectral::rfft_adjoint(&g[..half], &g[half..], bin_shape, *axis, n);
            accumulate(nodes, grads, *input, gx);
        }
        Op::Irfft { re, im, axis } => {
            let (gre, gim) = spectral::irfft_adjoint(g, out.shape(), *axis);
            accumulate(nodes, grads, *re, gre);
            accumulate(nodes, grads, *im, gim);
        }
        Op::Basis { input, derivs } => {
            let nb = out.shape()[out.rank() - 1];
            let gx = (0..nodes[*input].value.len())
                .map(|i| crate::tensor::dot(&g[i * nb..(i + 1) * nb], &derivs[i * nb..(i + 1) * nb]))
                .collect();
            accumulate(nodes, grads, *input, gx);
        }
        Op::Spline(save) => spline_backward(nodes, save, g, grads, out.shape()),
        Op::Conv1d(x, kernel) => {
            let (vx, vk) = (&nodes[*x].value, &nodes[*kernel].value);
            let n = vx.shape()[vx.rank() - 1];
            let w = vk.len();
            let h = w / 2;
            let kd = vk.data();
            let xd = vx.data();
            let mut gx = vec![T::zero(); vx.len()];
            let mut gk = vec![T::zero(); w];
            for (row, grow) in g.chunks(n).enumerate() {
                let xrow = &xd[row * n..(row + 1) * n];
                let gxrow = &mut gx[row * n..(row + 1) * n];
                for i in 0..n {
                    for j in 0..w {
                        let src = i + j;
                        if src < h || src - h >= n {
                            continue;
                        }
                        gxrow[src - h] += kd[j] * grow[i];
                        gk[j] += xrow[src - h] * grow[i];
                    }
                }
            }
            accumulate(nodes, grads, *x, gx);
            accumulate(nodes, grads, *kernel, gk);
        }
        Op::Softmax(a) => {
            let n = out.shape()[out.rank() - 1];
            let s = out.data();
            let mut gx = vec![T::zero(); s.len()];
            for r in 0..s.len() / n {
                let (sr, gr) = (&s[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                let inner = crate::tensor::dot(sr, gr);
                for j in 0..n {
                    gx[r * n + j] = sr[j] * (gr[j] - inner);
                }
            }
            accumulate(nodes, grads, *a, gx);
        }
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn spline_backward<T: Real>(
    nodes: &[Node<T>],
    save: &SplineSave<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
    out_shape: &[usize],
) {
    let out_dim = out_shape[out_shape.len() - 1];
    let rows = g.len() / out_dim;
    let in_dim = save.first.len() / rows;
    let (order, nb) = (save.order, save.nb);
    let want_x = nodes[save.x].requires_grad;
    let want_c = nodes[save.coeffs].requires_grad;
    let mut gx = vec![T::zero(); if want_x { rows * in_dim } else { 0 }];
    let mut gct = vec![T::zero(); if want_c { save.ct.len() } else { 0 }];
    for m in 0..rows {
        let grow = &g[m * out_dim..(m + 1) * out_dim];
        for i in 0..in_dim {
            let slot = m * in_dim + i;
            let first = save.first[slot];
            if first == usize::MAX {
                continue;
            }
            for r in 0..order {
                let base = (i * nb + first + r) * out_dim;
                if want_x {
                    let d = save.derivs[slot * order + r];
                    if d != T::zero() {
                        gx[slot] += d * crate::tensor::dot(grow, &save.ct[base..base + out_dim]);
                    }
                }
                if want_c {
                    let b = save.values[slot * order + r];
                    for (c, &gv) in gct[base..base + out_dim].iter_mut().zip(grow) {
                        *c += b * gv;
                    }
                }
            }
        }
    }
    if want_x {
        accumulate(nodes, grads, save.x, gx);
    }
    if want_c {
        // [in, nb, out] -> [out, in, nb]
        accumulate(nodes, grads, save.coeffs, permute(&gct, &[in_dim, nb, out_dim], &[2, 0, 1]));
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor<T> {
        let v = self.tape.value_ref(self.id);
        Tensor::from_parts(v.shape().to_vec(), v.data().to_vec())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    pub fn value_len(&self) -> usize {
        self.tape.value_ref(self.id).len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes cannot be combined"
        );
    }

    fn binary(self, other: Var<'t, T>, kind: Binary) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let tape = self.tape;
        let (va, vb) = (tape.value_ref(self.id), tape.value_ref(other.id));
        let f = |a: T, b: T| match kind {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        };
        let (shape, data) = if va.shape() == vb.shape() {
            let d = va.data().iter().zip(vb.data()).map(|(&a, &b)| f(a, b)).collect();
            (va.shape().to_vec(), d)
        } else {
            let shape = broadcast_shape(va.shape(), vb.shape())?;
            let sa = broadcast_strides(va.shape(), &shape);
            let sb = broadcast_strides(vb.shape(), &shape);
            let mut d = vec![T::zero(); numel(&shape)];
            let (da, db) = (va.data(), vb.data());
            for_each_broadcast(&shape, &sa, &sb, |k, ia, ib| d[k] = f(da[ia], db[ib]));
            (shape, d)
        };
        drop((va, vb));
        let rg = tape.rg(self.id) || tape.rg(other.id);
        Ok(tape.push(
            Tensor::from_parts(shape, data),
            Op::Binary(kind, self.id, other.id),
            rg,
        ))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn unary(self, kind: Unary<T>) -> Var<'t, T> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        let f = |x: T| -> T {
            match kind {
                Unary::Neg => -x,
                Unary::Sigmoid => {
                    if x >= T::zero() {
                        T::one() / (T::one() + (-x).exp())
                    } else {
                        let e = x.exp();
                        e / (T::one() + e)
                    }
                }
                Unary::Tanh => x.tanh(),
                Unary::Cos => x.cos(),
                Unary::Sin => x.sin(),
                Unary::Sqrt => x.sqrt(),
                Unary::Reciprocal => T::one() / x,
                Unary::Exp => x.exp(),
                Unary::Scale(c) => x * c,
                Unary::AddScalar(c) => x + c,
                Unary::FloorMagnitude(fl) => {
                    if x.abs() >= fl {
                        x
                    } else if x < T::zero() {
                        -fl
                    } else {
                        fl
                    }
                }
            }
        };
        let out = v.map(f);
        drop(v);
        let rg = tape.rg(self.id);
        tape.push(out, Op::Unary(kind, self.id), rg)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.unary(Unary::Neg)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(Unary::Tanh)
    }

    pub fn cos(self) -> Var<'t, T> {
        self.unary(Unary::Cos)
    }

    pub fn sin(self) -> Var<'t, T> {
        self.unary(Unary::Sin)
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(Unary::Sqrt)
    }

    pub fn reciprocal(self) -> Var<'t, T> {
        self.unary(Unary::Reciprocal)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(Unary::Exp)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.unary(Unary::Scale(c))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(Unary::AddScalar(c))
    }

    pub fn floor_magnitude(self, floor: T) -> Var<'t, T> {
        self.unary(Unary::FloorMagnitude(floor))
    }

    /// `x·σ(x)`
    pub fn silu(self) -> Result<Var<'t, T>> {
        self.mul(self.sigmoid())
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.mul(self)
    }

    /// Elementwise `atan2(self, x)`; defined as 0 with zero gradient at the origin.
    pub fn atan2(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&x);
        let tape = self.tape;
        let (vy, vx) = (tape.value_ref(self.id), tape.value_ref(x.id));
        if vy.shape() != vx.shape() {
            return Err(Error::shape(vy.shape(), vx.shape(), "atan2"));
        }
        let data = vy.data().iter().zip(vx.data()).map(|(&y, &x)| y.atan2(x)).collect();
        let shape = vy.shape().to_vec();
        drop((vy, vx));
        let rg = tape.rg(self.id) || tape.rg(x.id);
        Ok(tape.push(Tensor::from_parts(shape, data), Op::Atan2(self.id, x.id), rg))
    }

    /// `[.., m, k] x [k, n] -> [.., m, n]` for rank-2 or rank-3 left operands.
    pub fn matmul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&b);
        let tape = self.tape;
        let (va, vb) = (tape.value_ref(self.id), tape.value_ref(b.id));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if !(sa.len() == 2 || sa.len() == 3) || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape(&sa, &sb, "matmul"));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = va.len() / k;
        let mut out = vec![T::zero(); m * n];
        gemm_nn(va.data(), vb.data(), &mut out, m, k, n);
        drop((va, vb));
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = tape.rg(self.id) || tape.rg(b.id);
        Ok(tape.push(Tensor::from_parts(shape, out), Op::MatMul(self.id, b.id), rg))
    }

    pub fn reduce(self, kind: Reduce, axis: usize, keep_axis: bool) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                axis,
                rank: shape.len(),
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let d = v.data();
        let nf = T::c(n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for t in 0..n {
                let row = &d[(o * n + t) * inner..(o * n + t + 1) * inner];
                for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
        if kind != Reduce::Sum {
            out.iter_mut().for_each(|s| *s = *s / nf);
        }
        if kind == Reduce::Var {
            let mean = out.clone();
            out.iter_mut().for_each(|s| *s = T::zero());
            for o in 0..outer {
                for t in 0..n {
                    let row = &d[(o * n + t) * inner..(o * n + t + 1) * inner];
                    let mrow = &mean[o * inner..(o + 1) * inner];
                    for ((acc, &x), &mu) in out[o * inner..(o + 1) * inner].iter_mut().zip(row).zip(mrow) {
                        *acc += (x - mu) * (x - mu);
                    }
                }
            }
            out.iter_mut().for_each(|s| *s = *s / nf);
        }
        drop(v);
        let mut out_shape = shape;
        if keep_axis {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let rg = tape.rg(self.id);
        Ok(tape.push(
            Tensor::from_parts(out_shape, out),
            Op::Reduce {
                input: self.id,
                kind,
                axis,
            },
            rg,
        ))
    }

    pub fn sum(self, axis: usize, keep_axis: bool) -> Result<Var<'t, T>> {
        self.reduce(Reduce::Sum, axis, keep_axis)
    }

    pub fn mean(self, axis: usize, keep_axis: bool) -> Result<Var<'t, T>> {
        self.reduce(Reduce::Mean, axis, keep_axis)
    }

    pub fn var(self, axis: usize, keep_axis: bool) -> Result<Var<'t, T>> {
        self.reduce(Reduce::Var, axis, keep_axis)
    }

    /// Sum of every element as a rank-0 scalar.
    pub fn sum_all(self) -> Var<'t, T> {
        let tape = self.tape;
        let s = tape.value_ref(self.id).data().iter().copied().sum::<T>();
        let rg = tape.rg(self.id);
        tape.push(Tensor::scalar(s), Op::SumAll(self.id), rg)
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.tape.value_ref(self.id).len();
        self.sum_all().scale(T::one() / T::c(n as f64))
    }

    pub fn transpose(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        check_perm(perm, v.rank())?;
        let out = Tensor::from_parts(
            perm.iter().map(|&p| v.shape()[p]).collect(),
            permute(v.data(), v.shape(), perm),
        );
        drop(v);
        let rg = tape.rg(self.id);
        Ok(tape.push(out, Op::Transpose(self.id, perm.to_vec()), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let out = tape.value_ref(self.id).reshape(shape)?;
        let rg = tape.rg(self.id);
        Ok(tape.push(out, Op::Reshape(self.id), rg))
    }

    /// Sub-tensor at `index` along the first axis (axis removed).
    pub fn slice_first(self, index: usize) -> Result<Var<'t, T>> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        if v.rank() == 0 || index >= v.shape()[0] {
            return Err(Error::Index {
                axis: index,
                rank: v.rank(),
            });
        }
        let shape = v.shape()[1..].to_vec();
        let chunk = numel(&shape);
        let out = Tensor::from_parts(shape, v.data()[index * chunk..(index + 1) * chunk].to_vec());
        drop(v);
        let rg = tape.rg(self.id);
        Ok(tape.push(out, Op::SliceFirst(self.id, index), rg))
    }

    /// Dense B-spline basis values `[.., nb]` at every element.
    pub fn bspline_basis(self, grid: &SplineGrid) -> Var<'t, T> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        let nb = grid.num_basis();
        let mut out = vec![T::zero(); v.len() * nb];
        let mut derivs = vec![T::zero(); v.len() * nb];
        let missed = dense_basis(grid, v.data(), &mut out, Some(&mut derivs));
        tape.out_of_range.set(tape.out_of_range.get() + missed);
        let mut shape = v.shape().to_vec();
        shape.push(nb);
        drop(v);
        let rg = tape.rg(self.id);
        let op = Op::Basis {
            input: self.id,
            derivs: if rg { derivs } else { Vec::new() },
        };
        tape.push(Tensor::from_parts(shape, out), op, rg)
    }

    /// Fused `out[m, j] = Σ_i Σ_k coeffs[j, i, k] · B_k(x[m, i])` using only the
    /// active bases of each input.
    pub fn spline_contract(self, coeffs: Var<'t, T>, grid: &SplineGrid) -> Result<Var<'t, T>> {
        self.same_tape(&coeffs);
        let tape = self.tape;
        let (vx, vc) = (tape.value_ref(self.id), tape.value_ref(coeffs.id));
        let (sx, sc) = (vx.shape().to_vec(), vc.shape().to_vec());
        let nb = grid.num_basis();
        if sc.len() != 3 || sx.is_empty() || sx[sx.len() - 1] != sc[1] || sc[2] != nb {
            return Err(Error::shape(&sx, &sc, "spline contraction"));
        }
        let (out_dim, in_dim) = (sc[0], sc[1]);
        let rows = vx.len() / in_dim;
        let order = grid.degree() + 1;
        let ct = permute(vc.data(), &sc, &[1, 2, 0]);
        let mut first = vec![usize::MAX; rows * in_dim];
        let mut values = vec![T::zero(); rows * in_dim * order];
        let mut derivs = vec![T::zero(); rows * in_dim * order];
        let mut out = vec![T::zero(); rows * out_dim];
        let mut vb = [T::zero(); MAX_ORDER];
        let mut db = [T::zero(); MAX_ORDER];
        let mut missed = 0;
        let xd = vx.data();
        for m in 0..rows {
            let orow = &mut out[m * out_dim..(m + 1) * out_dim];
            for i in 0..in_dim {
                let slot = m * in_dim + i;
                let Some(f) = grid.eval_local(xd[slot], &mut vb, &mut db) else {
                    missed += 1;
                    continue;
                };
                first[slot] = f;
                values[slot * order..(slot + 1) * order].copy_from_slice(&vb[..order]);
                derivs[slot * order..(slot + 1) * order].copy_from_slice(&db[..order]);
                for r in 0..order {
                    let base = (i * nb + f + r) * out_dim;
                    let b = vb[r];
                    for (o, &c) in orow.iter_mut().zip(&ct[base..base + out_dim]) {
                        *o += b * c;
                    }
                }
            }
        }
        drop((vx, vc));
        tape.out_of_range.set(tape.out_of_range.get() + missed);
        let mut shape = sx;
        *shape.last_mut().unwrap() = out_dim;
        let rg = tape.rg(self.id) || tape.rg(coeffs.id);
        let save = SplineSave {
            x: self.id,
            coeffs: coeffs.id,
            order,
            nb,
            ct,
            first,
            values,
            derivs,
        };
        Ok(tape.push(Tensor::from_parts(shape, out), Op::Spline(Box::new(save)), rg))
    }

    /// Zero-padded "same" 1-D convolution along the last axis with an odd-width kernel.
    pub fn conv1d_same(self, kernel: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&kernel);
        let tape = self.tape;
        let (vx, vk) = (tape.value_ref(self.id), tape.value_ref(kernel.id));
        if vk.rank() != 1 || vk.len() % 2 == 0 {
            return Err(Error::Argument(format!(
                "conv1d kernel must be rank-1 with odd width, got {:?}",
                vk.shape()
            )));
        }
        let n = *vx.shape().last().ok_or_else(|| Error::Argument("conv1d on a scalar".into()))?;
        let (w, h) = (vk.len(), vk.len() / 2);
        let kd = vk.data();
        let mut out = vec![T::zero(); vx.len()];
        for (row, xrow) in vx.data().chunks(n).enumerate() {
            let orow = &mut out[row * n..(row + 1) * n];
            for i in 0..n {
                let mut s = T::zero();
                for j in 0..w {
                    let src = i + j;
                    if src >= h && src - h < n {
                        s += kd[j] * xrow[src - h];
                    }
                }
                orow[i] = s;
            }
        }
        let shape = vx.shape().to_vec();
        drop((vx, vk));
        let rg = tape.rg(self.id) || tape.rg(kernel.id);
        Ok(tape.push(Tensor::from_parts(shape, out), Op::Conv1d(self.id, kernel.id), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t, T> {
        let tape = self.tape;
        let v = tape.value_ref(self.id);
        let n = v.shape().last().copied().unwrap_or(1);
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            row.iter_mut().for_each(|x| *x = *x / s);
        }
        let shape = v.shape().to_vec();
        drop(v);
        let rg = tape.rg(self.id);
        tape.push(Tensor::from_parts(shape, out), Op::Softmax(self.id), rg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn mul_and_sigmoid() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[2.0, 3.0]));
        let b = tape.constant(t(&[2], &[4.0, 5.0]));
        assert_eq!(a.mul(b).unwrap().value().data(), &[8.0, 15.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        assert_eq!(z.sigmoid().value().data(), &[0.5]);
    }

    #[test]
    fn matmul_identity_and_dot() {
        let tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(i2.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(r.matmul(c).unwrap().value().data(), &[11.0]);
        assert!(matches!(m.matmul(r), Err(Error::Shape { .. })));
    }

    #[test]
    fn reductions() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert_eq!(x.mean(0, false).unwrap().value().data(), &[2.0]);
        let c = tape.constant(t(&[3], &[1.0, 1.0, 1.0]));
        assert_eq!(c.var(0, false).unwrap().value().data(), &[0.0]);
        assert!(matches!(x.sum(1, false), Err(Error::Index { .. })));
        let kept = tape.constant(t(&[2, 3], &[1.0; 6])).sum(1, true).unwrap();
        assert_eq!(kept.shape(), vec![2, 1]);
    }

    #[test]
    fn sum_backward_is_one() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[4], &[0.3, -1.0, 2.0, 5.0]).with_grad());
        let s = x.sum(0, false).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_grad_and_constant_loss() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_grad());
        let g = tape.backward(x.square().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);

        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let loss = c.mul(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(loss).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_shape_error_names_both() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4]"), "{err}");
    }

    #[test]
    fn transpose_values() {
        let tape = Tape::<f64>::new();
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mt = m.transpose(&[1, 0]).unwrap();
        assert_eq!(mt.value().data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(mt.transpose(&[1, 0]).unwrap().value(), m.value());
        assert!(matches!(m.transpose(&[1, 1]), Err(Error::Argument(_))));
    }

    #[test]
    fn backward_into_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", t(&[2], &[1.0, -2.0]));
        for _ in 0..2 {
            let tape = Tape::new();
            let w = tape.param(&store, id);
            let loss = w.square().unwrap().sum_all();
            tape.backward_into(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad.as_deref().unwrap(), &[4.0, -8.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad.as_deref().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_param_gets_no_grad() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", t(&[1], &[2.0]));
        store.set_frozen(id, true);
        let tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = w.square().unwrap().sum_all();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_deref().unwrap(), &[0.0]);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        let k = tape.constant(Tensor::zeros(&[2]));
        assert!(x.conv1d_same(k).is_err());
    }

    #[test]
    fn floor_magnitude_keeps_sign() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[4], &[0.0, -1e-6, 2e-6, 0.5]));
        let y = x.floor_magnitude(1e-4).value();
        assert_eq!(y.data(), &[1e-4, -1e-4, 1e-4, 0.5]);
    }
}
