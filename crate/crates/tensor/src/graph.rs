//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and records its inputs on the tape.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! for every node that (transitively) depends on a leaf created with
//! `requires_grad`.

use crate::gemm::{gemm, MatRef};
use crate::kernels::{self, conv, norm, warp};
use crate::{Exec, Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Upsample2x(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<T>, rstd: Vec<T> },
    Silu(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    CenterPlanes(Var),
    Concat(Vec<Var>),
    Modulate { x: Var, scale: Var, shift: Var },
    Linear { x: Var, w: Var, b: Var },
    Warp { src: Var, flow: Var },
    L1Mean(Var, Var),
}

fn center_planes<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = t.dims4();
    let mut out = t.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        let mean = plane.iter().fold(T::zero(), |a, &v| a + v) / T::of((h * w) as f64);
        for v in plane {
            *v = *v - mean;
        }
    }
    out
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    exec: Exec,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new(Exec::default())
    }
}

impl<T: Float> Graph<T> {
    pub fn new(exec: Exec) -> Self {
        Graph { nodes: Vec::new(), exec }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Copies `v` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.input(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let y = conv::conv2d_forward(
            self.exec,
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        self.push(y, Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let y = kernels::upsample2x_forward(self.exec, self.value(x));
        let ng = self.any_grad(&[x]);
        self.push(y, Op::Upsample2x(x), ng)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let out = norm::group_norm_forward(
            self.exec,
            self.value(x),
            self.value(gamma),
            self.value(beta),
            groups,
            1e-5,
        );
        let ng = self.any_grad(&[x, gamma, beta]);
        self.push(
            out.y,
            Op::GroupNorm { x, gamma, beta, groups, mean: out.mean, rstd: out.rstd },
            ng,
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v / (T::one() + (-v).exp()));
        let ng = self.any_grad(&[x]);
        self.push(y, Op::Silu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        let ng = self.any_grad(&[x]);
        self.push(y, Op::Tanh(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let ng = self.any_grad(&[a, b]);
        self.push(y, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "shape mismatch in sub");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let y = Tensor::from_vec(va.shape(), data);
        let ng = self.any_grad(&[a, b]);
        self.push(y, Op::Sub(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).map(|v| v * s);
        let ng = self.any_grad(&[x]);
        self.push(y, Op::Scale(x, s), ng)
    }

    /// Subtracts from every `H x W` plane its own mean.
    pub fn center_planes(&mut self, x: Var) -> Var {
        let y = center_planes(self.value(x));
        let ng = self.any_grad(&[x]);
        self.push(y, Op::CenterPlanes(x), ng)
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let mut ctot = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4();
            assert_eq!((pn, ph, pw), (n, h, w), "concat of mismatched tensors");
            ctot += pc;
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * ctot * hw);
        for i in 0..n {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[i * c * hw..(i + 1) * c * hw]);
            }
        }
        let y = Tensor::from_vec(&[n, ctot, h, w], data);
        let ng = self.any_grad(parts);
        self.push(y, Op::Concat(parts.to_vec()), ng)
    }

    /// Feature-wise affine modulation `x * (1 + scale) + shift` with
    /// `scale, shift: [N, C]` broadcast over the spatial axes.
    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        assert_eq!(self.shape(scale), [n, c], "modulation scale shape");
        assert_eq!(self.shape(shift), [n, c], "modulation shift shape");
        let hw = h * w;
        let (xv, sv, tv) = (self.value(x), self.value(scale), self.value(shift));
        let mut y = Tensor::zeros(xv.shape());
        for (nc, out) in y.data_mut().chunks_mut(hw).enumerate() {
            let a = T::one() + sv.data()[nc];
            let b = tv.data()[nc];
            for (o, &v) in out.iter_mut().zip(&xv.data()[nc * hw..(nc + 1) * hw]) {
                *o = v * a + b;
            }
        }
        let ng = self.any_grad(&[x, scale, shift]);
        self.push(y, Op::Modulate { x, scale, shift }, ng)
    }

    /// Dense layer `x w^T + b` for `x: [N, Din]`, `w: [Dout, Din]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, din) = self.value(x).dims2();
        let (dout, wdin) = self.value(w).dims2();
        assert_eq!(din, wdin, "linear input width");
        assert_eq!(self.shape(b), [dout]);
        let mut y = Tensor::zeros(&[n, dout]);
        gemm(
            self.exec,
            MatRef::row_major(self.value(x).data(), n, din),
            MatRef::transposed(self.value(w).data(), din, dout),
            T::zero(),
            y.data_mut(),
        );
        let bd = self.value(b).data();
        for row in y.data_mut().chunks_mut(dout) {
            for (v, &bb) in row.iter_mut().zip(bd) {
                *v = *v + bb;
            }
        }
        let ng = self.any_grad(&[x, w, b]);
        self.push(y, Op::Linear { x, w, b }, ng)
    }

    /// Bilinear backward warp with border clamping, see [`kernels::warp`].
    pub fn warp(&mut self, src: Var, flow: Var) -> Var {
        let y = warp::warp_forward(self.exec, self.value(src), self.value(flow));
        let ng = self.any_grad(&[src, flow]);
        self.push(y, Op::Warp { src, flow }, ng)
    }

    /// Mean absolute difference, as a one-element tensor.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "shape mismatch in l1_mean");
        let s: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let y = Tensor::scalar(s / T::of(va.len() as f64));
        let ng = self.any_grad(&[a, b]);
        self.push(y, Op::L1Mean(a, b), ng)
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
                continue;
            }
            self.backprop_node(i, &gout, &mut grads);
        }
        Grads { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let exec = self.exec;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let cg = conv::conv2d_backward(
                    exec,
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.wants(*x),
                );
                if let Some(dx) = cg.dx {
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, cg.dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        accumulate(grads, *b, cg.db);
                    }
                }
            }
            Op::Upsample2x(x) => {
                let dx = kernels::upsample2x_backward(exec, self.shape(*x), g);
                accumulate(grads, *x, dx);
            }
            Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                let gg = norm::group_norm_backward(
                    exec,
                    self.value(*x),
                    self.value(*gamma),
                    self.value(*beta),
                    *groups,
                    mean,
                    rstd,
                    g,
                );
                if self.wants(*x) {
                    accumulate(grads, *x, gg.dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, gg.dgamma);
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, gg.dbeta);
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| {
                        let s = T::one() / (T::one() + (-v).exp());
                        d * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
            Op::Tanh(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&y, &d)| d * (T::one() - y * y))
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(node.value.shape(), data));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                accumulate(grads, *x, g.map(|v| v * s));
            }
            // the projection is symmetric, so it is its own adjoint
            Op::CenterPlanes(x) => accumulate(grads, *x, center_planes(g)),
            Op::Concat(parts) => {
                let (n, ctot, h, w) = node.value.dims4();
                let hw = h * w;
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.wants(p) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let base = (s * ctot + off) * hw;
                            d.extend_from_slice(&g.data()[base..base + c * hw]);
                        }
                        accumulate(grads, p, Tensor::from_vec(&[n, c, h, w], d));
                    }
                    off += c;
                }
            }
            Op::Modulate { x, scale, shift } => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4();
                let hw = h * w;
                let sv = self.value(*scale);
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for (nc, out) in dx.data_mut().chunks_mut(hw).enumerate() {
                        let a = T::one() + sv.data()[nc];
                        for (o, &d) in out.iter_mut().zip(&g.data()[nc * hw..(nc + 1) * hw]) {
                            *o = d * a;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*scale) || self.wants(*shift) {
                    let mut ds = Tensor::zeros(&[n, c]);
                    let mut dt = Tensor::zeros(&[n, c]);
                    for nc in 0..n * c {
                        let gs = &g.data()[nc * hw..(nc + 1) * hw];
                        let xs = &xv.data()[nc * hw..(nc + 1) * hw];
                        ds.data_mut()[nc] = gs.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                        dt.data_mut()[nc] = gs.iter().copied().sum();
                    }
                    if self.wants(*scale) {
                        accumulate(grads, *scale, ds);
                    }
                    if self.wants(*shift) {
                        accumulate(grads, *shift, dt);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = self.value(*x).dims2();
                let dout = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(&[n, din]);
                    gemm(
                        exec,
                        MatRef::row_major(g.data(), n, dout),
                        MatRef::row_major(self.value(*w).data(), dout, din),
                        T::zero(),
                        dx.data_mut(),
                    );
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(&[dout, din]);
                    gemm(
                        exec,
                        MatRef::transposed(g.data(), dout, n),
                        MatRef::row_major(self.value(*x).data(), n, din),
                        T::zero(),
                        dw.data_mut(),
                    );
                    accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let mut db = Tensor::zeros(&[dout]);
                    for row in g.data().chunks(dout) {
                        for (a, &v) in db.data_mut().iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Warp { src, flow } => {
                let wg = warp::warp_backward(exec, self.value(*src), self.value(*flow), g);
                if self.wants(*src) {
                    accumulate(grads, *src, wg.dsrc);
                }
                if self.wants(*flow) {
                    accumulate(grads, *flow, wg.dflow);
                }
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.item() / T::of(va.len() as f64);
                let sign: Vec<T> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let ga = Tensor::from_vec(va.shape(), sign);
                if self.wants(*b) {
                    accumulate(grads, *b, ga.map(|v| -v));
                }
                if self.wants(*a) {
                    accumulate(grads, *a, ga);
                }
            }
        }
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
