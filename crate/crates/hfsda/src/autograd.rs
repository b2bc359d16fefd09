//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a per-forward-pass tape: every operation appends a node
//! holding its value and a closure that routes the output gradient to the
//! operation's parents. Parameters enter a graph as leaves; after
//! [`Graph::backward`] their gradients are read back by node id.
//!
//! Graphs are cheap, single-use and single-threaded. Concurrent inference
//! builds one graph per call over shared immutable parameters.

use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::{Error, Result};

/// Dense dynamic-rank tensor used throughout the graph.
pub type Arr = ArrayD<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Tid(pub(crate) usize);

type BackFn = Box<dyn Fn(&Arr, &mut GradSink)>;

struct Node {
    value: Rc<Arr>,
    back: Option<BackFn>,
    needs_grad: bool,
}

/// Accumulates gradient contributions into per-node slots during backward.
pub struct GradSink<'a> {
    slots: &'a mut Vec<Option<Arr>>,
    mask: &'a [bool],
}

impl GradSink<'_> {
    /// Add `g` to the gradient slot of `t` (no-op for nodes outside the
    /// differentiable subgraph).
    pub fn add(&mut self, t: Tid, g: Arr) {
        if !self.mask[t.0] {
            return;
        }
        match &mut self.slots[t.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    pub fn get(&self, t: Tid) -> Option<&Arr> {
        self.grads.get(t.0).and_then(|g| g.as_ref())
    }
}

/// Numpy-style broadcast shape of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::Dimension(format!(
                "cannot broadcast shapes {:?} and {:?}",
                a, b
            )));
        }
    }
    Ok(out)
}

/// Sum `g` down to `target` shape, inverting a broadcast.
fn reduce_to_shape(g: &Arr, target: &[usize]) -> Arr {
    let mut out = g.clone();
    // Collapse leading axes that were prepended by broadcasting.
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    // Sum over axes that were expanded from size 1.
    for (ax, (&got, &want)) in out.shape().to_vec().iter().zip(target.iter()).enumerate() {
        if want == 1 && got != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn broadcast_zip(a: &Arr, b: &Arr, f: impl Fn(f64, f64) -> f64) -> Result<Arr> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let av = a.broadcast(IxDyn(&shape)).ok_or_else(|| {
        Error::Dimension(format!("broadcast of {:?} to {:?} failed", a.shape(), shape))
    })?;
    let bv = b.broadcast(IxDyn(&shape)).ok_or_else(|| {
        Error::Dimension(format!("broadcast of {:?} to {:?} failed", b.shape(), shape))
    })?;
    let mut out = Arr::zeros(IxDyn(&shape));
    ndarray::Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    Ok(out)
}

fn as2(a: &Arr) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<ndarray::Ix2>().expect("expected rank-2 tensor")
}

/// Single-use reverse-mode tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: Tid) -> &Arr {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tid) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    fn push(&mut self, value: Arr, needs_grad: bool, back: Option<BackFn>) -> Tid {
        self.nodes.push(Node { value: Rc::new(value), back, needs_grad });
        Tid(self.nodes.len() - 1)
    }

    fn needs(&self, t: Tid) -> bool {
        self.nodes[t.0].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Arr) -> Tid {
        self.push(value, false, None)
    }

    /// Differentiable leaf (shares storage with the caller).
    pub fn leaf(&mut self, value: Rc<Arr>) -> Tid {
        self.nodes.push(Node { value, back: None, needs_grad: true });
        Tid(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf sharing storage with the caller; downstream
    /// ops skip backward bookkeeping entirely.
    pub fn frozen_leaf(&mut self, value: Rc<Arr>) -> Tid {
        self.nodes.push(Node { value, back: None, needs_grad: false });
        Tid(self.nodes.len() - 1)
    }

    /// Differentiable leaf from an owned array.
    pub fn var(&mut self, value: Arr) -> Tid {
        self.push(value, true, None)
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Tid {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x + y).unwrap();
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let needs = self.needs(a) || self.needs(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to_shape(g, &sa));
                sink.add(b, reduce_to_shape(g, &sb));
            })),
        )
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Tid {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x - y).unwrap();
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let needs = self.needs(a) || self.needs(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                sink.add(a, reduce_to_shape(g, &sa));
                sink.add(b, reduce_to_shape(&g.mapv(|v| -v), &sb));
            })),
        )
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Tid {
        let out = broadcast_zip(self.value(a), self.value(b), |x, y| x * y).unwrap();
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (Rc::clone(&self.nodes[a.0].value), Rc::clone(&self.nodes[b.0].value));
        let needs = self.needs(a) || self.needs(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let ga = broadcast_zip(g, &vb, |x, y| x * y).unwrap();
                sink.add(a, reduce_to_shape(&ga, &sa));
                let gb = broadcast_zip(g, &va, |x, y| x * y).unwrap();
                sink.add(b, reduce_to_shape(&gb, &sb));
            })),
        )
    }

    pub fn neg(&mut self, a: Tid) -> Tid {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Tid, c: f64) -> Tid {
        let out = self.value(a).mapv(|v| v * c);
        let needs = self.needs(a);
        self.push(out, needs, Some(Box::new(move |g, sink| sink.add(a, g.mapv(|v| v * c)))))
    }

    pub fn add_scalar(&mut self, a: Tid, c: f64) -> Tid {
        let out = self.value(a).mapv(|v| v + c);
        let needs = self.needs(a);
        self.push(out, needs, Some(Box::new(move |g, sink| sink.add(a, g.clone()))))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Tid {
        let out = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        let (va, vb) = (Rc::clone(&self.nodes[a.0].value), Rc::clone(&self.nodes[b.0].value));
        let needs = self.needs(a) || self.needs(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let g2 = as2(g);
                sink.add(a, g2.dot(&as2(&vb).t()).into_dyn());
                sink.add(b, as2(&va).t().dot(&g2).into_dyn());
            })),
        )
    }

    pub fn sum_all(&mut self, a: Tid) -> Tid {
        let s = self.value(a).sum();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(
            ndarray::arr0(s).into_dyn(),
            needs,
            Some(Box::new(move |g, sink| {
                let gv = g[[]];
                sink.add(a, Arr::from_elem(IxDyn(&shape), gv));
            })),
        )
    }

    pub fn mean_all(&mut self, a: Tid) -> Tid {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis (the axis is removed).
    pub fn sum_axis(&mut self, a: Tid, ax: usize) -> Tid {
        let out = self.value(a).sum_axis(Axis(ax));
        let dim = self.shape(a)[ax];
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let expanded = g
                    .clone()
                    .insert_axis(Axis(ax))
                    .broadcast({
                        let mut s = g.shape().to_vec();
                        s.insert(ax, dim);
                        IxDyn(&s)
                    })
                    .unwrap()
                    .to_owned();
                sink.add(a, expanded);
            })),
        )
    }

    /// Mean over one axis (the axis is removed).
    pub fn mean_axis(&mut self, a: Tid, ax: usize) -> Tid {
        let n = self.shape(a)[ax] as f64;
        let s = self.sum_axis(a, ax);
        self.scale(s, 1.0 / n)
    }

    /// Column means of a 2-D tensor with the addends of each column summed
    /// in sorted order. The canonical summation order makes the result
    /// bitwise invariant under any permutation of the rows, which ordinary
    /// index-order summation cannot guarantee for floating point. Output
    /// shape `(1, D)`; backward is the uniform mean gradient.
    pub fn mean_rows_sorted(&mut self, a: Tid) -> Tid {
        let v = self.value(a);
        assert_eq!(v.ndim(), 2, "mean_rows_sorted expects (T, D)");
        let (t, d) = (v.shape()[0], v.shape()[1]);
        let mut out = Arr::zeros(IxDyn(&[1, d]));
        let mut column = vec![0.0f64; t];
        for j in 0..d {
            for i in 0..t {
                column[i] = v[[i, j]];
            }
            column.sort_by(f64::total_cmp);
            out[[0, j]] = column.iter().sum::<f64>() / t as f64;
        }
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros(IxDyn(&[t, d]));
                for j in 0..d {
                    let gv = g[[0, j]] / t as f64;
                    for i in 0..t {
                        gi[[i, j]] = gv;
                    }
                }
                sink.add(a, gi);
            })),
        )
    }

    /// Max over one axis (the axis is removed). Ties resolve to the first
    /// index, so backward routes gradient to exactly one element per lane.
    pub fn max_axis(&mut self, a: Tid, ax: usize) -> Tid {
        let v = self.value(a);
        let out_shape: Vec<usize> =
            v.shape().iter().enumerate().filter(|(i, _)| *i != ax).map(|(_, &d)| d).collect();
        let mut out = Arr::zeros(IxDyn(&out_shape));
        let mut argmax: Vec<usize> = Vec::with_capacity(out.len());
        for (lane, target) in v.lanes(Axis(ax)).into_iter().zip(out.iter_mut()) {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0usize;
            for (i, &x) in lane.iter().enumerate() {
                if x > best {
                    best = x;
                    best_i = i;
                }
            }
            *target = best;
            argmax.push(best_i);
        }
        let in_shape = v.shape().to_vec();
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros(IxDyn(&in_shape));
                for ((mut lane, &gv), &ai) in
                    gi.lanes_mut(Axis(ax)).into_iter().zip(g.iter()).zip(argmax.iter())
                {
                    lane[ai] = gv;
                }
                sink.add(a, gi);
            })),
        )
    }

    pub fn sigmoid(&mut self, a: Tid) -> Tid {
        let out = self.value(a).mapv(sigmoid_scalar);
        let needs = self.needs(a);
        let t = self.push(out, needs, None);
        let y = Rc::clone(&self.nodes[t.0].value);
        self.nodes[t.0].back = Some(Box::new(move |g, sink| {
            let gi = ndarray::Zip::from(g).and(&*y).map_collect(|&gv, &yv| gv * yv * (1.0 - yv));
            sink.add(a, gi);
        }));
        t
    }

    pub fn relu(&mut self, a: Tid) -> Tid {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let va = Rc::clone(&self.nodes[a.0].value);
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let gi =
                    ndarray::Zip::from(g).and(&*va).map_collect(|&gv, &x| if x > 0.0 { gv } else { 0.0 });
                sink.add(a, gi);
            })),
        )
    }

    /// Swish / SiLU: `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Tid) -> Tid {
        let out = self.value(a).mapv(|v| v * sigmoid_scalar(v));
        let va = Rc::clone(&self.nodes[a.0].value);
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let gi = ndarray::Zip::from(g).and(&*va).map_collect(|&gv, &x| {
                    let s = sigmoid_scalar(x);
                    gv * (s + x * s * (1.0 - s))
                });
                sink.add(a, gi);
            })),
        )
    }

    /// Elementwise power; inputs must stay strictly positive for fractional
    /// exponents (used as `powf(x, -0.5)` on variance + eps).
    pub fn powf(&mut self, a: Tid, p: f64) -> Tid {
        let out = self.value(a).mapv(|v| v.powf(p));
        let va = Rc::clone(&self.nodes[a.0].value);
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let gi = ndarray::Zip::from(g)
                    .and(&*va)
                    .map_collect(|&gv, &x| gv * p * x.powf(p - 1.0));
                sink.add(a, gi);
            })),
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_lastdim(&mut self, a: Tid) -> Tid {
        let v = self.value(a);
        let last = v.ndim() - 1;
        let mut out = v.clone();
        for mut lane in out.lanes_mut(Axis(last)) {
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in lane.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in lane.iter_mut() {
                *x /= z;
            }
        }
        let needs = self.needs(a);
        let t = self.push(out, needs, None);
        let y = Rc::clone(&self.nodes[t.0].value);
        self.nodes[t.0].back = Some(Box::new(move |g, sink| {
            let mut gi = g.clone();
            for (mut glane, ylane) in
                gi.lanes_mut(Axis(last)).into_iter().zip(y.lanes(Axis(last)))
            {
                let dot: f64 = glane.iter().zip(ylane.iter()).map(|(&gv, &yv)| gv * yv).sum();
                for (gv, &yv) in glane.iter_mut().zip(ylane.iter()) {
                    *gv = yv * (*gv - dot);
                }
            }
            sink.add(a, gi);
        }));
        t
    }

    pub fn reshape(&mut self, a: Tid, shape: &[usize]) -> Tid {
        let out = self
            .value(a)
            .clone()
            .into_shape(IxDyn(shape))
            .unwrap_or_else(|_| panic!("reshape {:?} -> {:?}", self.shape(a), shape));
        let orig = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let back = g.clone().into_shape(IxDyn(&orig)).expect("reshape backward");
                sink.add(a, back);
            })),
        )
    }

    /// Permute axes; `perm[i]` names the source axis placed at position `i`.
    pub fn permute(&mut self, a: Tid, perm: &[usize]) -> Tid {
        let out = self.value(a).clone().permuted_axes(IxDyn(perm)).as_standard_layout().to_owned();
        let mut inverse = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let back = g.clone().permuted_axes(IxDyn(&inverse)).as_standard_layout().to_owned();
                sink.add(a, back);
            })),
        )
    }

    /// Contiguous slice `[start, end)` along one axis.
    pub fn slice_axis(&mut self, a: Tid, ax: usize, start: usize, end: usize) -> Tid {
        let out = self
            .value(a)
            .slice_axis(Axis(ax), ndarray::Slice::from(start..end))
            .to_owned();
        let in_shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros(IxDyn(&in_shape));
                gi.slice_axis_mut(Axis(ax), ndarray::Slice::from(start..end)).assign(g);
                sink.add(a, gi);
            })),
        )
    }

    /// Concatenate along one axis.
    pub fn concat(&mut self, parts: &[Tid], ax: usize) -> Tid {
        let views: Vec<_> = parts.iter().map(|&t| self.value(t).view()).collect();
        let out = ndarray::concatenate(Axis(ax), &views).expect("concat shapes");
        let sizes: Vec<usize> = parts.iter().map(|&t| self.shape(t)[ax]).collect();
        let parts = parts.to_vec();
        let needs = parts.iter().any(|&t| self.needs(t));
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let mut offset = 0usize;
                for (&t, &sz) in parts.iter().zip(sizes.iter()) {
                    let piece = g
                        .slice_axis(Axis(ax), ndarray::Slice::from(offset..offset + sz))
                        .to_owned();
                    sink.add(t, piece);
                    offset += sz;
                }
            })),
        )
    }

    /// 2-D convolution of a `(c_in, H, W)` map with a `(c_out, c_in, kh, kw)`
    /// kernel; zero padding, unit dilation. im2col forward, col2im backward.
    pub fn conv2d(&mut self, x: Tid, k: Tid, stride: usize, pad: (usize, usize)) -> Tid {
        let xv = self.value(x);
        let kv = self.value(k);
        let (c_in, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (c_out, kc, kh, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
        assert_eq!(c_in, kc, "conv2d channel mismatch");
        let (ph, pw) = pad;
        assert!(
            h + 2 * ph >= kh && w + 2 * pw >= kw,
            "conv2d: kernel larger than padded input"
        );
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (w + 2 * pw - kw) / stride + 1;

        let col = im2col(&xv.view(), kh, kw, stride, ph, pw, ho, wo);
        let kmat = kv.clone().into_shape(IxDyn(&[c_out, c_in * kh * kw])).unwrap();
        let y = as2(&kmat).dot(&as2(&col));
        let out = y.into_dyn().into_shape(IxDyn(&[c_out, ho, wo])).unwrap();

        let col = Rc::new(col);
        let kv = Rc::clone(&self.nodes[k.0].value);
        let needs = self.needs(x) || self.needs(k);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let g2 = g.clone().into_shape(IxDyn(&[c_out, ho * wo])).unwrap();
                // dK = g2 . col^T
                let kmat2 = (*kv).clone().into_shape(IxDyn(&[c_out, c_in * kh * kw])).unwrap();
                let dk = as2(&g2).dot(&as2(&col).t());
                sink.add(
                    k,
                    dk.into_dyn().into_shape(IxDyn(&[c_out, c_in, kh, kw])).unwrap(),
                );
                // dX = col2im(K^T . g2)
                let dcol = as2(&kmat2).t().dot(&as2(&g2)).into_dyn();
                let dx = col2im(&dcol, c_in, h, w, kh, kw, stride, ph, pw, ho, wo);
                sink.add(x, dx);
            })),
        )
    }

    /// Overlap-add of `(frames, frame_len)` rows at the given hop into a
    /// vector of length `out_len`.
    pub fn overlap_add(&mut self, frames: Tid, hop: usize, out_len: usize) -> Tid {
        let fv = self.value(frames);
        let (n_frames, frame_len) = (fv.shape()[0], fv.shape()[1]);
        let mut out = Arr::zeros(IxDyn(&[out_len]));
        for t in 0..n_frames {
            let base = t * hop;
            for n in 0..frame_len {
                if base + n < out_len {
                    out[[base + n]] += fv[[t, n]];
                }
            }
        }
        let needs = self.needs(frames);
        self.push(
            out,
            needs,
            Some(Box::new(move |g, sink| {
                let mut gi = Arr::zeros(IxDyn(&[n_frames, frame_len]));
                for t in 0..n_frames {
                    let base = t * hop;
                    for n in 0..frame_len {
                        if base + n < out_len {
                            gi[[t, n]] = g[[base + n]];
                        }
                    }
                }
                sink.add(frames, gi);
            })),
        )
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// `1/(1-p)`; identity when `mask` is `None`.
    pub fn dropout(&mut self, a: Tid, mask: Option<Arr>) -> Tid {
        match mask {
            None => a,
            Some(m) => {
                let mc = self.constant(m);
                self.mul(a, mc)
            }
        }
    }

    /// Mean smooth-L1 (Huber) distance between two same-shape tensors.
    pub fn smooth_l1_mean(&mut self, pred: Tid, target: Tid, beta: f64) -> Tid {
        assert!(beta > 0.0, "smooth_l1 beta must be positive");
        assert_eq!(self.shape(pred), self.shape(target), "smooth_l1 shape mismatch");
        let p = self.value(pred);
        let t = self.value(target);
        let n = p.len() as f64;
        let mut acc = 0.0;
        for (&a, &b) in p.iter().zip(t.iter()) {
            let d = (a - b).abs();
            acc += if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
        }
        let vp = Rc::clone(&self.nodes[pred.0].value);
        let vt = Rc::clone(&self.nodes[target.0].value);
        let needs = self.needs(pred) || self.needs(target);
        self.push(
            ndarray::arr0(acc / n).into_dyn(),
            needs,
            Some(Box::new(move |g, sink| {
                let gv = g[[]] / n;
                let gp = ndarray::Zip::from(&*vp).and(&*vt).map_collect(|&a, &b| {
                    let d = a - b;
                    gv * if d.abs() < beta { d / beta } else { d.signum() }
                });
                sink.add(target, gp.mapv(|v| -v));
                sink.add(pred, gp);
            })),
        )
    }

    /// Run reverse-mode accumulation from a scalar node.
    pub fn backward(&self, loss: Tid) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward requires a scalar loss");
        let mask: Vec<bool> = self.nodes.iter().map(|n| n.needs_grad).collect();
        let mut slots: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(Arr::from_elem(self.value(loss).raw_dim(), 1.0));
        for i in (0..=loss.0).rev() {
            if slots[i].is_none() || !mask[i] {
                continue;
            }
            if let Some(back) = &self.nodes[i].back {
                let g = slots[i].clone().unwrap();
                let mut sink = GradSink { slots: &mut slots, mask: &mask };
                back(&g, &mut sink);
            }
        }
        Gradients { grads: slots }
    }

    // ----- composite helpers -----

    /// `x @ w + b` for `(T, D_in) @ (D_in, D_out) + (D_out,)`.
    pub fn linear(&mut self, x: Tid, w: Tid, b: Tid) -> Tid {
        let m = self.matmul(x, w);
        self.add(m, b)
    }

    /// Layer normalization over the last axis with learned gain/shift.
    pub fn layer_norm(&mut self, x: Tid, gamma: Tid, beta: Tid, eps: f64) -> Tid {
        let last = self.shape(x).len() - 1;
        let d = self.shape(x)[last];
        let mu = self.mean_axis(x, last);
        let mu_shape: Vec<usize> = {
            let mut s = self.shape(x).to_vec();
            s[last] = 1;
            s
        };
        let mu = self.reshape(mu, &mu_shape);
        let centered = self.sub(x, mu);
        let sq = self.mul(centered, centered);
        let var = self.mean_axis(sq, last);
        let var = self.reshape(var, &mu_shape);
        let var_eps = self.add_scalar(var, eps);
        let rstd = self.powf(var_eps, -0.5);
        let normed = self.mul(centered, rstd);
        let scaled = self.mul(normed, gamma);
        let _ = d;
        self.add(scaled, beta)
    }
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn im2col(
    x: &ndarray::ArrayViewD<'_, f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
) -> Arr {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut col = Arr::zeros(IxDyn(&[c_in * kh * kw, ho * wo]));
    for c in 0..c_in {
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (c * kh + dy) * kw + dx;
                for oy in 0..ho {
                    let iy = (oy * stride + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + dx) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * wo + ox]] = x[[c, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &Arr,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
) -> Arr {
    let mut dx = Arr::zeros(IxDyn(&[c_in, h, w]));
    for c in 0..c_in {
        for dy in 0..kh {
            for dxk in 0..kw {
                let row = (c * kh + dy) * kw + dxk;
                for oy in 0..ho {
                    let iy = (oy * stride + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + dxk) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[c, iy as usize, ix as usize]] += dcol[[row, oy * wo + ox]];
                    }
                }
            }
        }
    }
    dx
}
