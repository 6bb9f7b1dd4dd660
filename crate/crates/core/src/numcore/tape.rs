//! Reverse-mode differentiation over a linear tape of coarse operations.
//!
//! Forward calls evaluate eagerly and append a node; [`Tape::backward`] walks
//! the nodes in reverse and accumulates parameter gradients into the
//! [`ParamStore`] the parameters were read from. Gradients accumulate across
//! calls; the caller zeroes them.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::{numel, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
        count: usize,
    },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Upsample(Var),
    DivRows { a: Var, d: Var, floor: T },
    NormalizeRows { x: Var, norms: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Geometry of a 2-D convolution over an `H×W×C` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }
    fn patch(&self) -> usize {
        self.k * self.k * self.in_c
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Split `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(dim_err!("{op}: shapes differ: {:?} vs {:?}", a, b));
    }
    Ok(())
}

/// Bilinear sampling table for one axis (half-pixel centers, edge clamped).
fn bilinear_table(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Read a parameter; repeated reads within one tape share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn param_named(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = self.value(a);
        let vb = self.value(b);
        let out = va.matmul(vb)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// `x[..., j] + bias[j]` along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let vb = self.value(bias);
        let n = *vx.shape().last().unwrap_or(&1);
        if vb.shape() != [n] {
            return Err(dim_err!(
                "add_bias: bias {:?} does not match last axis of {:?}",
                vb.shape(),
                vx.shape()
            ));
        }
        let b = vb.data();
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let out = Tensor::new(vx.shape(), data)?;
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(dim_err!(
                "softmax axis {axis} out of range for shape {:?}",
                vx.shape()
            ));
        }
        let out = softmax_values(vx, axis);
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[P×K]`, skipping rows labelled `ignore`. With no scored rows the
    /// loss is 0 and so is its gradient.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var> {
        let vl = self.value(logits);
        let (p, k) = vl.dims2()?;
        if labels.len() != p {
            return Err(dim_err!(
                "cross_entropy: {} labels for {} logit rows",
                labels.len(),
                p
            ));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= k && Some(l) != ignore {
                return Err(Error::Data(format!(
                    "cross_entropy: pixel {i} has label {l}, outside [0, {k})"
                )));
            }
        }
        let probs = softmax_values(vl, 1).into_data();
        let mut total = 0.0f64;
        let mut count = 0usize;
        let data = vl.data();
        for (i, &l) in labels.iter().enumerate() {
            if Some(l) == ignore {
                continue;
            }
            let row = &data[i * k..(i + 1) * k];
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m.as_f64()
                + row
                    .iter()
                    .map(|&v| (v - m).as_f64().exp())
                    .sum::<f64>()
                    .ln();
            total += lse - row[l].as_f64();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let out = Tensor::scalar(T::lit(loss));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::lit(1.0 / n as f64))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(dim_err!(
                "sum_axis {axis} out of range for {:?}",
                vx.shape()
            ));
        }
        let (outer, len, inner) = axis_split(vx.shape(), axis);
        let mut out = vec![T::zero(); outer * inner];
        let d = vx.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Convolution of an `H×W×C_in` map with a `k×k×C_in×C_out` kernel.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let vi = self.value(input);
        let vw = self.value(weight);
        let (in_h, in_w, in_c) = match vi.shape()[..] {
            [h, w, c] => (h, w, c),
            _ => return Err(dim_err!("conv2d input must be H×W×C, got {:?}", vi.shape())),
        };
        let (k, out_c) = match vw.shape()[..] {
            [kh, kw, ci, co] if kh == kw && ci == in_c => (kh, co),
            _ => {
                return Err(dim_err!(
                    "conv2d kernel {:?} incompatible with input {:?}",
                    vw.shape(),
                    vi.shape()
                ))
            }
        };
        if stride == 0 || in_h + 2 * pad < k || in_w + 2 * pad < k {
            return Err(dim_err!(
                "conv2d: kernel {k} stride {stride} pad {pad} does not fit {:?}",
                vi.shape()
            ));
        }
        let geom = ConvGeom {
            in_h,
            in_w,
            in_c,
            k,
            out_c,
            stride,
            pad,
        };
        let (oh, ow, patch) = (geom.out_h(), geom.out_w(), geom.patch());
        let cols = im2col(vi.data(), &geom);
        let mut out = vec![T::zero(); oh * ow * out_c];
        T::gemm(
            oh * ow,
            patch,
            out_c,
            &cols,
            (patch as isize, 1),
            vw.data(),
            (out_c as isize, 1),
            T::zero(),
            &mut out,
        );
        let out = Tensor::new(&[oh, ow, out_c], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                geom,
                cols,
            },
            &[input, weight],
        ))
    }

    /// Bilinear resize of an `h×w×c` map to `out_h×out_w×c` (half-pixel
    /// centers, no corner alignment). Only upscaling is accepted.
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let vx = self.value(x);
        let (h, w, c) = match vx.shape()[..] {
            [h, w, c] => (h, w, c),
            _ => return Err(dim_err!("upsample input must be H×W×C, got {:?}", vx.shape())),
        };
        if out_h < h || out_w < w {
            return Err(Error::Usage(format!(
                "upsample_bilinear cannot downscale {h}×{w} to {out_h}×{out_w}"
            )));
        }
        let ty = bilinear_table(h, out_h);
        let tx = bilinear_table(w, out_w);
        let d = vx.data();
        let mut out = vec![T::zero(); out_h * out_w * c];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let weights = [
                    ((y0, x0), (1.0 - ly) * (1.0 - lx)),
                    ((y0, x1), (1.0 - ly) * lx),
                    ((y1, x0), ly * (1.0 - lx)),
                    ((y1, x1), ly * lx),
                ];
                let dst = &mut out[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
                for ((yy, xx), wgt) in weights {
                    if wgt == 0.0 {
                        continue;
                    }
                    let wgt = T::lit(wgt);
                    let src = &d[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o += wgt * s;
                    }
                }
            }
        }
        let out = Tensor::new(&[out_h, out_w, c], out)?;
        Ok(self.push(out, Op::Upsample(x), &[x]))
    }

    /// `a[i, :] / max(d[i], floor)` for `a[N×C]`, `d[N]`.
    pub fn div_rows(&mut self, a: Var, d: Var, floor: T) -> Result<Var> {
        let va = self.value(a);
        let vd = self.value(d);
        let (n, c) = va.dims2()?;
        if vd.shape() != [n] {
            return Err(dim_err!(
                "div_rows: divisor {:?} does not match rows of {:?}",
                vd.shape(),
                va.shape()
            ));
        }
        let mut out = va.data().to_vec();
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            let den = vd.data()[i].max(floor);
            row.iter_mut().for_each(|x| *x /= den);
        }
        let out = Tensor::new(&[n, c], out)?;
        Ok(self.push(out, Op::DivRows { a, d, floor }, &[a, d]))
    }

    /// Scale each row of `x[N×D]` to unit Euclidean norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (n, dd) = vx.dims2()?;
        let mut out = vx.data().to_vec();
        let mut norms = Vec::with_capacity(n);
        for row in out.chunks_exact_mut(dd) {
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if nrm > T::zero() {
                row.iter_mut().for_each(|v| *v /= nrm);
            }
            norms.push(nrm);
        }
        let out = Tensor::new(&[n, dd], out)?;
        Ok(self.push(out, Op::NormalizeRows { x, norms }, &[x]))
    }

    /// Accumulate `d loss / d parameter` into `store` for every parameter read
    /// by this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, store)?;
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                for (acc, gi) in p.grad.data_mut().iter_mut().zip(&g) {
                    *acc += *gi;
                }
            }
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.dims2()?;
                let n = vb.shape()[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        &g,
                        (n as isize, 1),
                        vb.data(),
                        (1, n as isize),
                        T::zero(),
                        &mut da,
                    );
                    accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        va.data(),
                        (1, k as isize),
                        &g,
                        (n as isize, 1),
                        T::zero(),
                        &mut db,
                    );
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2()?;
                // g is c×r
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                if self.needs(*a) {
                    accumulate(grads, *a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.iter().map(|&x| x * *c).collect());
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); n];
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    accumulate(grads, *b, gb);
                }
                if self.needs(*x) {
                    accumulate(grads, *x, g);
                }
            }
            Op::Relu(x) => {
                let out = node.value.data();
                let gx = g
                    .iter()
                    .zip(out)
                    .map(|(&gi, &o)| if o > T::zero() { gi } else { T::zero() })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum::<T>();
                        for l in 0..len {
                            gx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                ignore,
                probs,
                count,
            } => {
                let k = self.value(*logits).shape()[1];
                let mut gx = vec![T::zero(); probs.len()];
                if *count > 0 {
                    let scale = g[0] / T::lit(*count as f64);
                    for (i, &l) in labels.iter().enumerate() {
                        if Some(l) == *ignore {
                            continue;
                        }
                        for j in 0..k {
                            let onehot = if j == l { T::one() } else { T::zero() };
                            gx[i * k + j] = (probs[i * k + j] - onehot) * scale;
                        }
                    }
                }
                accumulate(grads, *logits, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.value(*x).shape(), *axis);
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Conv2d {
                input,
                weight,
                geom,
                cols,
            } => {
                let p = geom.out_h() * geom.out_w();
                let patch = geom.patch();
                let co = geom.out_c;
                if self.needs(*weight) {
                    let mut gw = vec![T::zero(); patch * co];
                    T::gemm(
                        patch,
                        p,
                        co,
                        cols,
                        (1, patch as isize),
                        &g,
                        (co as isize, 1),
                        T::zero(),
                        &mut gw,
                    );
                    accumulate(grads, *weight, gw);
                }
                if self.needs(*input) {
                    let mut gcols = vec![T::zero(); p * patch];
                    T::gemm(
                        p,
                        co,
                        patch,
                        &g,
                        (co as isize, 1),
                        self.value(*weight).data(),
                        (1, co as isize),
                        T::zero(),
                        &mut gcols,
                    );
                    accumulate(grads, *input, col2im(&gcols, geom));
                }
            }
            Op::Upsample(x) => {
                let (h, w, c) = match self.value(*x).shape()[..] {
                    [h, w, c] => (h, w, c),
                    _ => unreachable!(),
                };
                let (oh, ow) = (node.value.shape()[0], node.value.shape()[1]);
                let ty = bilinear_table(h, oh);
                let tx = bilinear_table(w, ow);
                let mut gx = vec![T::zero(); h * w * c];
                for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                        let src = &g[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
                        for ((yy, xx), wgt) in [
                            ((y0, x0), (1.0 - ly) * (1.0 - lx)),
                            ((y0, x1), (1.0 - ly) * lx),
                            ((y1, x0), ly * (1.0 - lx)),
                            ((y1, x1), ly * lx),
                        ] {
                            if wgt == 0.0 {
                                continue;
                            }
                            let wgt = T::lit(wgt);
                            let dst = &mut gx[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                            for (o, &s) in dst.iter_mut().zip(src) {
                                *o += wgt * s;
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::DivRows { a, d, floor } => {
                let va = self.value(*a);
                let vd = self.value(*d).data();
                let (n, c) = va.dims2()?;
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for (i, row) in ga.chunks_exact_mut(c).enumerate() {
                        let den = vd[i].max(*floor);
                        row.iter_mut().for_each(|x| *x /= den);
                    }
                    accumulate(grads, *a, ga);
                }
                if self.needs(*d) {
                    let mut gd = vec![T::zero(); n];
                    for i in 0..n {
                        if vd[i] > *floor {
                            let den = vd[i];
                            let s = (0..c)
                                .map(|j| g[i * c + j] * va.data()[i * c + j])
                                .sum::<T>();
                            gd[i] = -s / (den * den);
                        }
                    }
                    accumulate(grads, *d, gd);
                }
            }
            Op::NormalizeRows { x, norms } => {
                let y = node.value.data();
                let dd = node.value.shape()[1];
                let mut gx = vec![T::zero(); y.len()];
                for (i, &nrm) in norms.iter().enumerate() {
                    if nrm <= T::zero() {
                        continue;
                    }
                    let r = i * dd..(i + 1) * dd;
                    let dot = r.clone().map(|j| g[j] * y[j]).sum::<T>();
                    for j in r {
                        gx[j] = (g[j] - y[j] * dot) / nrm;
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_values<T: Real>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let d = x.data();
    let mut out = vec![T::zero(); d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |l: usize| (o * len + l) * inner + i;
            let m = (0..len).fold(T::neg_infinity(), |a, l| a.max(d[idx(l)]));
            let mut s = T::zero();
            for l in 0..len {
                let e = (d[idx(l)] - m).exp();
                out[idx(l)] = e;
                s += e;
            }
            for l in 0..len {
                out[idx(l)] /= s;
            }
        }
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

fn im2col<T: Real>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    let mut cols = vec![T::zero(); oh * ow * patch];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let dst = (ky * g.k + kx) * g.in_c;
                    row[dst..dst + g.in_c].copy_from_slice(&input[src..src + g.in_c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow, patch) = (g.out_h(), g.out_w(), g.patch());
    let mut out = vec![T::zero(); g.in_h * g.in_w * g.in_c];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &cols[(oy * ow + ox) * patch..(oy * ow + ox + 1) * patch];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let src = (ky * g.k + kx) * g.in_c;
                    for c in 0..g.in_c {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}
