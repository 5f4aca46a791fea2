//! Recorded forward pass with reverse-mode differentiation.
//!
//! Every op appends a node holding its output value plus whatever the
//! backward rule needs. Parameters are read from a [`ParamStore`]; `backward`
//! accumulates into the store's gradient buffers. A tape can be
//! differentiated once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::kernels::{conv_backward, conv_forward, ConvShape};
use crate::nn::{BatchNormIds, ConvGeom, ParamId, ParamStore, Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probabilities are clamped to this floor inside the log of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, running statistics updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Store<'a, F> {
    Owned(ParamStore<F>),
    Shared(&'a ParamStore<F>),
    Exclusive(&'a mut ParamStore<F>),
}

impl<F> Store<'_, F> {
    fn get(&self) -> &ParamStore<F> {
        match self {
            Store::Owned(s) => s,
            Store::Shared(s) => s,
            Store::Exclusive(s) => s,
        }
    }

    fn get_mut(&mut self) -> Option<&mut ParamStore<F>> {
        match self {
            Store::Owned(s) => Some(s),
            Store::Shared(_) => None,
            Store::Exclusive(s) => Some(s),
        }
    }
}

enum Op<F> {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        shape: ConvShape,
        col: Vec<F>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Gap {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    ChannelScale {
        x: Var,
        q: Var,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<f64>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Tape<'a, F: Real> {
    store: Store<'a, F>,
    nodes: Vec<Node<F>>,
    mode: Mode,
    grads: Option<Vec<Option<Vec<F>>>>,
}

/// `(outer, len, inner)` such that `shape = outer x len x inner` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(msg: alloc::string::String) -> Error {
    Error::Shape(msg)
}

impl<'a, F: Real> Tape<'a, F> {
    /// Tape over a mutable store; required for training.
    pub fn new(store: &'a mut ParamStore<F>, mode: Mode) -> Self {
        Self::with_store(Store::Exclusive(store), mode)
    }

    /// Read-only tape for inference. Batch-norm statistics are not updated and
    /// `backward` is unavailable.
    pub fn inference(store: &'a ParamStore<F>) -> Self {
        Self::with_store(Store::Shared(store), Mode::Eval)
    }

    /// Tape without parameters; operands are leaves.
    pub fn standalone(mode: Mode) -> Tape<'static, F> {
        Tape::with_store(Store::Owned(ParamStore::new()), mode)
    }

    fn with_store(store: Store<'a, F>, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            mode,
            grads: None,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store.get()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.store.get().get(id).value,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is kept and readable through [`Tape::grad`].
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.store.get().get(id).trainable;
        self.push(Tensor::default(), Op::Param(id), trainable)
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    /// Cross-correlation with bias. `x: [B, C, H, W]` with `w: [O, C, kh, kw]`,
    /// or `x: [B, C, T]` with `w: [O, C, k]` (the geometry's width terms must
    /// then be unit).
    pub fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let one_d = xs.len() == 3;
        let (batch, cin, h, width) = match xs[..] {
            [b, c, h, w] => (b, c, h, w),
            [b, c, t] => (b, c, t, 1),
            _ => return Err(shape_err(format!("conv input of rank {}", xs.len()))),
        };
        let (cout, wc, kh, kw) = match ws[..] {
            [o, c, kh, kw] if !one_d => (o, c, kh, kw),
            [o, c, k] if one_d => (o, c, k, 1),
            _ => return Err(shape_err(format!("conv weight {ws:?} for input {xs:?}"))),
        };
        if wc != cin || kh != geom.kh || kw != geom.kw {
            return Err(shape_err(format!(
                "conv weight {ws:?} does not match {cin} channels and {geom:?}"
            )));
        }
        if self.value(b).len() != cout {
            return Err(shape_err(format!(
                "conv bias of {} for {cout} outputs",
                self.value(b).len()
            )));
        }
        let (ho, wo) = geom.out_dims(h, width).ok_or_else(|| {
            shape_err(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{width}"
            ))
        })?;
        let shape = ConvShape {
            batch,
            cin,
            h,
            w: width,
            cout,
            ho,
            wo,
            geom,
        };
        let (out, col) = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &shape,
        );
        let out_shape: Vec<usize> = if one_d {
            vec![batch, cout, ho]
        } else {
            vec![batch, cout, ho, wo]
        };
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                shape,
                col,
            },
            needs,
        ))
    }

    /// Batch norm over axis 1. `running` holds the running-statistics buffers;
    /// without them eval mode falls back to mean 0, variance 1.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(ParamId, ParamId)>,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err(format!("batch norm input {xs:?}")));
        }
        let (batch, channels, inner) = split_axis(&xs, 1);
        if self.value(gamma).len() != channels || self.value(beta).len() != channels {
            return Err(shape_err(format!(
                "batch norm affine size for {channels} channels"
            )));
        }
        let batch_stats = self.mode == Mode::Train;
        let count = batch * inner;
        let mut mean = vec![0.0f64; channels];
        let mut var = vec![1.0f64; channels];
        {
            let data = self.value(x).data();
            if batch_stats {
                for c in 0..channels {
                    let mut s = 0.0;
                    for b in 0..batch {
                        s += data[(b * channels + c) * inner..][..inner]
                            .iter()
                            .map(|v| v.f64())
                            .sum::<f64>();
                    }
                    let m = s / count as f64;
                    let mut ss = 0.0;
                    for b in 0..batch {
                        ss += data[(b * channels + c) * inner..][..inner]
                            .iter()
                            .map(|v| {
                                let d = v.f64() - m;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[c] = m;
                    var[c] = ss / count as f64;
                }
            } else if let Some((rm, rv)) = running {
                let st = self.store.get();
                for c in 0..channels {
                    mean[c] = st.get(rm).value.data()[c].f64();
                    var[c] = st.get(rv).value.data()[c].f64();
                }
            }
        }
        if batch_stats {
            if let Some((rm, rv)) = running {
                let st = self.store.get_mut().ok_or_else(|| {
                    Error::InvalidArgument("train-mode batch norm on a read-only store".into())
                })?;
                let unbias = if count > 1 {
                    count as f64 / (count - 1) as f64
                } else {
                    1.0
                };
                for c in 0..channels {
                    let m = &mut st.get_mut(rm).value.data_mut()[c];
                    *m = F::of((1.0 - BN_MOMENTUM) * m.f64() + BN_MOMENTUM * mean[c]);
                    let v = &mut st.get_mut(rv).value.data_mut()[c];
                    *v = F::of((1.0 - BN_MOMENTUM) * v.f64() + BN_MOMENTUM * var[c] * unbias);
                }
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let data = self.value(x).data();
        let mut xhat = vec![F::zero(); data.len()];
        let mut out = vec![F::zero(); data.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * inner;
                for i in off..off + inner {
                    let h = (data[i].f64() - mean[c]) * inv_std[c];
                    xhat[i] = F::of(h);
                    out[i] = F::of(g[c].f64() * h + bt[c].f64());
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::from_vec(&xs, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        ))
    }

    pub fn batch_norm_ids(&mut self, x: Var, ids: &BatchNormIds) -> Result<Var> {
        let gamma = self.param(ids.gamma);
        let beta = self.param(ids.beta);
        self.batch_norm(x, gamma, beta, Some((ids.running_mean, ids.running_var)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.max(F::zero())).collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(shape_err(format!("softmax axis {axis} of {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![F::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len)
                    .map(|l| src[idx(l)])
                    .fold(F::neg_infinity(), F::max);
                let mut sum = 0.0f64;
                for l in 0..len {
                    let e = (src[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    sum += e.f64();
                }
                for l in 0..len {
                    out[idx(l)] = F::of(out[idx(l)].f64() / sum);
                }
            }
        }
        let value = Tensor::from_vec(t.shape(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Softmax { x, axis }, needs))
    }

    /// Global average pool over every axis after the channel axis.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 3 {
            return Err(shape_err(format!("global pool of {:?}", t.shape())));
        }
        let (bc, inner) = (
            t.shape()[0] * t.shape()[1],
            t.shape()[2..].iter().product::<usize>(),
        );
        let out: Vec<F> = (0..bc)
            .map(|i| {
                let s: f64 = t.data()[i * inner..(i + 1) * inner]
                    .iter()
                    .map(|v| v.f64())
                    .sum();
                F::of(s / inner as f64)
            })
            .collect();
        let value = Tensor::from_vec(&t.shape()[..2], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Gap { x }, needs))
    }

    /// `x: [B, D]`, `w: [O, D]`, `b: [O]` to `[B, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (batch, d, o) = match (&xs[..], &ws[..]) {
            ([batch, d], [o, wd]) if d == wd => (*batch, *d, *o),
            _ => return Err(shape_err(format!("linear of {xs:?} with weight {ws:?}"))),
        };
        if self.value(b).len() != o {
            return Err(shape_err(format!("linear bias for {o} outputs")));
        }
        let mut out = vec![F::zero(); batch * o];
        F::gemm(
            batch,
            d,
            o,
            self.value(x).data(),
            (d, 1),
            self.value(w).data(),
            (1, d),
            &mut out,
            (o, 1),
            false,
        );
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::from_vec(&[batch, o], out)?,
            Op::Linear { x, w, b },
            needs,
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(format!(
                    "concat of {base:?} and {s:?} along {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start + len > t.shape()[axis] {
            return Err(shape_err(format!(
                "slice {start}..{} along {axis} of {:?}",
                start + len,
                t.shape()
            )));
        }
        let (outer, full, inner) = split_axis(t.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&t.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::Slice { x, axis, start },
            needs,
        ))
    }

    /// Scales each `(batch, channel)` plane of `x` by the matching entry of
    /// `q`, which holds `B * C` values (e.g. shape `[B, C, 1]`).
    pub fn channel_scale(&mut self, x: Var, q: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() < 2 {
            return Err(shape_err(format!("channel scale of {:?}", xt.shape())));
        }
        let bc = xt.shape()[0] * xt.shape()[1];
        let qt = self.value(q);
        if qt.len() != bc || qt.shape()[..2] != xt.shape()[..2] {
            return Err(shape_err(format!(
                "weights {:?} for features {:?}",
                qt.shape(),
                xt.shape()
            )));
        }
        let inner = xt.len() / bc.max(1);
        let mut out = xt.data().to_vec();
        for (i, plane) in out.chunks_mut(inner.max(1)).enumerate().take(bc) {
            let s = qt.data()[i];
            plane.iter_mut().for_each(|v| *v *= s);
        }
        let value = Tensor::from_vec(xt.shape(), out)?;
        let needs = self.needs(x) || self.needs(q);
        Ok(self.push(value, Op::ChannelScale { x, q }, needs))
    }

    /// Mean over the batch of `-sum_l t_l ln p_l` with label-smoothed targets
    /// `t = (1 - eps) * onehot + eps / L`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], smoothing: f64) -> Result<Var> {
        let t = self.value(probs);
        let (batch, classes) = match t.shape() {
            [b, l] => (*b, *l),
            s => return Err(shape_err(format!("cross entropy of {s:?}"))),
        };
        if labels.len() != batch || labels.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidArgument(format!(
                "{} labels for batch {batch} over {classes} classes",
                labels.len()
            )));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing {smoothing}"
            )));
        }
        let mut targets = vec![smoothing / classes as f64; batch * classes];
        for (b, &y) in labels.iter().enumerate() {
            targets[b * classes + y] += 1.0 - smoothing;
        }
        let loss: f64 = t
            .data()
            .iter()
            .zip(&targets)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, w)| -w * p.f64().max(PROB_FLOOR).ln())
            .sum::<f64>()
            / batch as f64;
        let needs = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(F::of(loss)),
            Op::CrossEntropy { probs, targets },
            needs,
        ))
    }

    /// Gradient of `v` from the last `backward`, for leaves and intermediates.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Reverse pass from a scalar. Parameter gradients are added to the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!("backward from {:?}", self.shape(loss))));
        }
        self.backward_with(loss, &[F::one()])
    }

    /// Vector-Jacobian product: reverse pass seeded with `seed` as the
    /// gradient of `out`.
    pub fn backward_with(&mut self, out: Var, seed: &[F]) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        if self.value(out).len() != seed.len() {
            return Err(shape_err(format!(
                "seed of {} for output {:?}",
                seed.len(),
                self.shape(out)
            )));
        }
        let loss = out;
        if matches!(self.store, Store::Shared(_)) {
            return Err(Error::InvalidArgument(
                "backward on a read-only tape".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed.to_vec());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let store = self.store.get_mut().expect("checked above");
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[i]) {
                if node.needs_grad {
                    for (acc, v) in store.get_mut(*id).grad.iter_mut().zip(g) {
                        *acc += *v;
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        fn acc<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, d: Vec<F>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(d).for_each(|(a, b)| *a += b),
                slot => *slot = Some(d),
            }
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv {
                x,
                w,
                b,
                shape,
                col,
            } => {
                let mut dw = self
                    .needs(*w)
                    .then(|| vec![F::zero(); self.value(*w).len()]);
                let mut db = self.needs(*b).then(|| vec![F::zero(); shape.cout]);
                let dx = conv_backward(
                    g,
                    self.value(*w).data(),
                    col,
                    shape,
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    self.needs(*x),
                );
                if let Some(d) = dw {
                    acc(grads, *w, d);
                }
                if let Some(d) = db {
                    acc(grads, *b, d);
                }
                if let Some(d) = dx {
                    acc(grads, *x, d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (batch, channels, inner) = split_axis(xs, 1);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; channels];
                let mut dbeta = vec![0.0f64; channels];
                let mut dx = vec![F::zero(); g.len()];
                let count = (batch * inner) as f64;
                for c in 0..channels {
                    let planes = || (0..batch).map(move |b| (b * channels + c) * inner);
                    let (mut s1, mut s2) = (0.0f64, 0.0f64);
                    for off in planes() {
                        for j in off..off + inner {
                            let gj = g[j].f64();
                            dbeta[c] += gj;
                            dgamma[c] += gj * xhat[j].f64();
                            let dxh = gj * gam[c].f64();
                            s1 += dxh;
                            s2 += dxh * xhat[j].f64();
                        }
                    }
                    for off in planes() {
                        for j in off..off + inner {
                            let dxh = g[j].f64() * gam[c].f64();
                            dx[j] = F::of(if *batch_stats {
                                inv_std[c] / count * (count * dxh - s1 - xhat[j].f64() * s2)
                            } else {
                                dxh * inv_std[c]
                            });
                        }
                    }
                }
                if self.needs(*x) {
                    acc(grads, *x, dx);
                }
                if self.needs(*gamma) {
                    acc(grads, *gamma, dgamma.into_iter().map(F::of).collect());
                }
                if self.needs(*beta) {
                    acc(grads, *beta, dbeta.into_iter().map(F::of).collect());
                }
            }
            Op::Relu { x } => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gy)| if y > F::zero() { gy } else { F::zero() })
                    .collect();
                acc(grads, *x, d);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut d = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for k in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + k;
                        let dot: f64 = (0..len).map(|l| g[idx(l)].f64() * y[idx(l)].f64()).sum();
                        for l in 0..len {
                            d[idx(l)] = F::of(y[idx(l)].f64() * (g[idx(l)].f64() - dot));
                        }
                    }
                }
                acc(grads, *x, d);
            }
            Op::Gap { x } => {
                let xs = self.shape(*x);
                let inner: usize = xs[2..].iter().product();
                let scale = F::of(1.0 / inner as f64);
                let d = g
                    .iter()
                    .flat_map(|&gv| core::iter::repeat_n(gv * scale, inner))
                    .collect();
                acc(grads, *x, d);
            }
            Op::Linear { x, w, b } => {
                let (batch, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if self.needs(*w) {
                    let mut dw = vec![F::zero(); o * d];
                    F::gemm(
                        o,
                        batch,
                        d,
                        g,
                        (1, o),
                        self.value(*x).data(),
                        (d, 1),
                        &mut dw,
                        (d, 1),
                        false,
                    );
                    acc(grads, *w, dw);
                }
                if self.needs(*b) {
                    let db = (0..o)
                        .map(|j| F::of((0..batch).map(|r| g[r * o + j].f64()).sum()))
                        .collect();
                    acc(grads, *b, db);
                }
                if self.needs(*x) {
                    let mut dx = vec![F::zero(); batch * d];
                    F::gemm(
                        batch,
                        o,
                        d,
                        g,
                        (o, 1),
                        self.value(*w).data(),
                        (d, 1),
                        &mut dx,
                        (d, 1),
                        false,
                    );
                    acc(grads, *x, dx);
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&g[(o * total + offset) * inner..][..len * inner]);
                        }
                        acc(grads, v, d);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, full, inner) = split_axis(xs, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![F::zero(); outer * full * inner];
                for o in 0..outer {
                    d[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                acc(grads, *x, d);
            }
            Op::ChannelScale { x, q } => {
                let xt = self.value(*x);
                let qd = self.value(*q).data();
                let bc = qd.len();
                let inner = xt.len() / bc.max(1);
                if self.needs(*x) {
                    let mut d = g.to_vec();
                    for (i, plane) in d.chunks_mut(inner.max(1)).enumerate().take(bc) {
                        plane.iter_mut().for_each(|v| *v *= qd[i]);
                    }
                    acc(grads, *x, d);
                }
                if self.needs(*q) {
                    let d = (0..bc)
                        .map(|i| {
                            let s: f64 = xt.data()[i * inner..(i + 1) * inner]
                                .iter()
                                .zip(&g[i * inner..(i + 1) * inner])
                                .map(|(a, b)| a.f64() * b.f64())
                                .sum();
                            F::of(s)
                        })
                        .collect();
                    acc(grads, *q, d);
                }
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let batch = p.shape()[0] as f64;
                let scale = g[0].f64();
                let d = p
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&pv, &t)| {
                        let pv = pv.f64();
                        F::of(if pv > PROB_FLOOR {
                            -scale * t / (batch * pv)
                        } else {
                            0.0
                        })
                    })
                    .collect();
                acc(grads, *probs, d);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_op;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in 0..12 {
            for _ in 0..20 {
                let err = check_op::<f64>(kind, &mut rng, 1e-6);
                assert!(err < 1e-6, "kind {kind}: error {err}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in 0..12 {
            for _ in 0..20 {
                let err = check_op::<f32>(kind, &mut rng, 1e-2);
                assert!(err < 1e-3, "kind {kind}: error {err}");
            }
        }
    }

    #[test]
    fn uniform_probabilities_give_ln_classes() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let p = tape.input(Tensor::full(&[4, 21], 1.0 / 21.0));
        let loss = tape.cross_entropy(p, &[0, 3, 20, 7], 0.1).unwrap();
        assert!((tape.value(loss).data()[0] - 3.044522).abs() < 1e-6);
    }

    #[test]
    fn smoothed_loss_single_sample() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let p = tape.input(Tensor::from_vec(&[1, 2], vec![0.9, 0.1]).unwrap());
        let loss = tape.cross_entropy(p, &[0], 0.1).unwrap();
        let expect = -(0.95 * 0.9f64.ln() + 0.05 * 0.1f64.ln());
        assert!((tape.value(loss).data()[0] - expect).abs() < 1e-12);
        assert!((expect - 0.215222).abs() < 1e-6);
    }

    #[test]
    fn perfect_onehot_prediction_has_zero_loss() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let p = tape.input(Tensor::from_vec(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(p, &[1, 0], 0.0).unwrap();
        assert!(tape.value(loss).data()[0].abs() <= 1e-12);
    }

    #[test]
    fn softmax_shift_invariance_and_uniform() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.input(Tensor::from_vec(&[2, 3], vec![0.1, -2.0, 4.0, 1.0, 1.0, 1.0]).unwrap());
        let y = tape
            .input(Tensor::from_vec(&[2, 3], vec![100.1, 98.0, 104.0, -5.0, -5.0, -5.0]).unwrap());
        let (a, b) = (tape.softmax(x, 1).unwrap(), tape.softmax(y, 1).unwrap());
        for (u, v) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(tape.value(a).data()[3..]
            .iter()
            .all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn batch_norm_examples() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.input(
            Tensor::from_vec(&[4, 2, 1], vec![2.0, -1.0, 2.0, 0.5, 2.0, 3.0, 2.0, 7.0]).unwrap(),
        );
        let g = tape.input(Tensor::full(&[2], 1.5));
        let b = tape.input(Tensor::from_vec(&[2], vec![0.25, -0.5]).unwrap());
        let y = tape.batch_norm(x, g, b, None).unwrap();
        let v = tape.value(y).data();
        // constant channel collapses onto the shift
        assert!((0..4).all(|i| (v[2 * i] - 0.25).abs() < 1e-12));
        let mean: f64 = (0..4).map(|i| v[2 * i + 1]).sum::<f64>() / 4.0;
        assert!((mean + 0.5).abs() < 1e-6);
    }

    #[test]
    fn linear_weight_grad_is_outer_product() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.input(Tensor::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.leaf(Tensor::from_vec(&[2, 3], vec![0.3; 6]).unwrap());
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, b).unwrap();
        tape.backward_with(y, &[1.0, 1.0]).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![0.5, 1.0]).unwrap());
        let d = tape.detach(x);
        let y = tape.concat(&[x, d], 1).unwrap();
        tape.backward_with(y, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0]);
        assert!(tape.grad(d).is_none());
    }

    #[test]
    fn softmax_example() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![0.0, 3.0f64.ln()]).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn loss_floor_keeps_zero_probability_finite() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let p = tape.leaf(Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap());
        let loss = tape.cross_entropy(p, &[0], 0.0).unwrap();
        let v = tape.value(loss).data()[0];
        assert!((v + PROB_FLOOR.ln()).abs() < 1e-9);
        tape.backward(loss).unwrap();
        assert!(tape.grad(p).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::<f64>::standalone(Mode::Train);
        let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap());
        let p = tape.softmax(x, 1).unwrap();
        let loss = tape.cross_entropy(p, &[1], 0.0).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn running_stats_update_in_train_only() {
        let mut store = ParamStore::<f64>::new();
        let g = store.add("g", Tensor::full(&[1], 1.0), true);
        let b = store.add("b", Tensor::zeros(&[1]), true);
        let rm = store.add("rm", Tensor::zeros(&[1]), false);
        let rv = store.add("rv", Tensor::full(&[1], 1.0), false);
        let ids = BatchNormIds {
            gamma: g,
            beta: b,
            running_mean: rm,
            running_var: rv,
        };
        {
            let mut tape = Tape::new(&mut store, Mode::Train);
            let x = tape.input(Tensor::from_vec(&[2, 1, 1], vec![1.0, 3.0]).unwrap());
            tape.batch_norm_ids(x, &ids).unwrap();
        }
        assert!((store.get(rm).value.data()[0] - 0.2).abs() < 1e-12);
        // unbiased variance 2, 0.9 * 1 + 0.1 * 2
        assert!((store.get(rv).value.data()[0] - 1.1).abs() < 1e-12);
        let before = store.clone();
        let mut tape = Tape::inference(&store);
        let x = tape.input(Tensor::from_vec(&[1, 1, 1], vec![0.2]).unwrap());
        let y = tape.batch_norm_ids(x, &ids).unwrap();
        assert!(tape.value(y).data()[0].abs() < 1e-12);
        drop(tape);
        assert_eq!(before, store);
    }
}
