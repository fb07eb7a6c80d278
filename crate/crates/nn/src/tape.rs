//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes from the seed
//! back to the first, so every node is visited after all of its consumers,
//! and gradients reaching a node from several consumers are summed.

use crate::element::{gemm, Element, View};
use crate::error::{shape_err, Result};
use crate::tensor::{image_dims, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axes a layer normalization averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxes {
    /// Over channels, separately at every voxel.
    Channels,
    /// Over channels and all voxels of a sample.
    Sample,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    Conv3 {
        x: Var,
        w: Var,
        b: Var,
        padded: Vec<T>,
    },
    Conv1 {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axes: NormAxes,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Upsample {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Gate {
        alpha: Var,
        x: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Geometry of a zero-padded (one voxel per side) volume.
#[derive(Debug, Clone, Copy)]
struct Padded {
    dims: [usize; 3],
    sy: usize,
    sz: usize,
    vp: usize,
    /// Flat padded index of the first interior voxel.
    p0: usize,
    /// Contiguous padded range covering every interior voxel.
    span: usize,
}

impl Padded {
    fn new(dims: [usize; 3]) -> Self {
        let [d, h, w] = dims;
        let sy = w + 2;
        let sz = (h + 2) * sy;
        let p0 = sz + sy + 1;
        let p1 = d * sz + h * sy + w + 1;
        Padded {
            dims,
            sy,
            sz,
            vp: (d + 2) * sz,
            p0,
            span: p1 - p0,
        }
    }

    /// Offset of interior voxel (d, h, w) inside the span.
    #[inline]
    fn span_index(&self, d: usize, h: usize, w: usize) -> usize {
        d * self.sz + h * self.sy + w
    }

    /// Start of the span shifted by kernel tap (kd, kh, kw).
    #[inline]
    fn tap_start(&self, tap: usize) -> usize {
        let (kd, kh, kw) = (tap / 9, (tap / 3) % 3, tap % 3);
        kd * self.sz + kh * self.sy + kw
    }

    fn pad_into<T: Element>(&self, src: &[T], dst: &mut [T]) {
        let [d, h, w] = self.dims;
        for z in 0..d {
            for y in 0..h {
                let s = (z * h + y) * w;
                let t = self.p0 + self.span_index(z, y, 0);
                dst[t..t + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }

    fn unpad_add<T: Element>(&self, src: &[T], dst: &mut [T]) {
        let [d, h, w] = self.dims;
        for z in 0..d {
            for y in 0..h {
                let s = self.p0 + self.span_index(z, y, 0);
                let t = (z * h + y) * w;
                for x in 0..w {
                    dst[t + x] += src[s + x];
                }
            }
        }
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn gelu_cdf<T: Element>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Input whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input treated as constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// 3×3×3 cross-correlation with zero padding 1.
    /// `x: [N, C, D, H, W]`, `w: [F, C, 3, 3, 3]`, `b: [F]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, c, dims) = image_dims("conv3d", self.value(x).shape())?;
        let ws = self.value(w).shape();
        if ws.len() != 5 || ws[1] != c || ws[2..] != [3, 3, 3] {
            return Err(shape_err(
                "conv3d",
                format!("weight {ws:?} does not match input channels {c} with a 3x3x3 kernel"),
            ));
        }
        let f = ws[0];
        if self.value(b).shape() != [f] {
            return Err(shape_err(
                "conv3d",
                format!("bias {:?} does not match {f} filters", self.value(b).shape()),
            ));
        }
        let g = Padded::new(dims);
        let vol = dims[0] * dims[1] * dims[2];
        let mut padded = vec![T::zero(); n * c * g.vp];
        let mut out = vec![T::zero(); n * f * vol];
        let mut acc = vec![T::zero(); f * g.span];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for s in 0..n {
                let pad = &mut padded[s * c * g.vp..(s + 1) * c * g.vp];
                for ch in 0..c {
                    let src = &xv[(s * c + ch) * vol..(s * c + ch + 1) * vol];
                    g.pad_into(src, &mut pad[ch * g.vp..(ch + 1) * g.vp]);
                }
                for fi in 0..f {
                    acc[fi * g.span..(fi + 1) * g.span].fill(bv[fi]);
                }
                for tap in 0..27 {
                    gemm(
                        f,
                        c,
                        g.span,
                        wv,
                        View::new(tap, c * 27, 27),
                        pad,
                        View::new(g.tap_start(tap), g.vp, 1),
                        T::one(),
                        &mut acc,
                        View::new(0, g.span, 1),
                    );
                }
                let [d, h, wd] = dims;
                for fi in 0..f {
                    let dst = &mut out[(s * f + fi) * vol..(s * f + fi + 1) * vol];
                    let src = &acc[fi * g.span..(fi + 1) * g.span];
                    for z in 0..d {
                        for y in 0..h {
                            let si = g.span_index(z, y, 0);
                            let di = (z * h + y) * wd;
                            dst[di..di + wd].copy_from_slice(&src[si..si + wd]);
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, f, dims[0], dims[1], dims[2]], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Conv3 { x, w, b, padded }, ng))
    }

    /// Pointwise (1×1×1) convolution. `w: [F, C]`, `b: [F]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, c, dims) = image_dims("conv1x1", self.value(x).shape())?;
        let ws = self.value(w).shape();
        if ws.len() != 2 || ws[1] != c {
            return Err(shape_err(
                "conv1x1",
                format!("weight {ws:?} does not match input channels {c}"),
            ));
        }
        let f = ws[0];
        if self.value(b).shape() != [f] {
            return Err(shape_err(
                "conv1x1",
                format!("bias {:?} does not match {f} filters", self.value(b).shape()),
            ));
        }
        let vol = dims[0] * dims[1] * dims[2];
        let mut out = vec![T::zero(); n * f * vol];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for s in 0..n {
                let o = &mut out[s * f * vol..(s + 1) * f * vol];
                for fi in 0..f {
                    o[fi * vol..(fi + 1) * vol].fill(bv[fi]);
                }
                gemm(
                    f,
                    c,
                    vol,
                    wv,
                    View::new(0, c, 1),
                    xv,
                    View::new(s * c * vol, vol, 1),
                    T::one(),
                    o,
                    View::new(0, vol, 1),
                );
            }
        }
        let value = Tensor::new(vec![n, f, dims[0], dims[1], dims[2]], out)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Conv1 { x, w, b }, ng))
    }

    /// 2×2×2 max pooling with stride 2; ties go to the first element in
    /// layout order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, [d, h, w]) = image_dims("maxpool2", self.value(x).shape())?;
        if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(
                "maxpool2",
                format!("spatial dims {:?} must be even", [d, h, w]),
            ));
        }
        let (od, oh, ow) = (d / 2, h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * xx;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = base + ((2 * z + dz) * h + 2 * y + dy) * w + 2 * xx + dx;
                                    if xv[i] > xv[best] {
                                        best = i;
                                    }
                                }
                            }
                        }
                        out.push(xv[best]);
                        argmax.push(best as u32);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, od, oh, ow], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, ng))
    }

    /// `x Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * gelu_cdf(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(&[x]);
        self.push(value, Op::Gelu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(&[x]);
        self.push(value, Op::Sigmoid { x }, ng)
    }

    /// Normalizes to zero mean and unit variance over `axes`, then applies
    /// per-channel scale `gamma: [C]` and shift `beta: [C]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axes: NormAxes) -> Result<Var> {
        let (n, c, dims) = image_dims("layer_norm", self.value(x).shape())?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(shape_err(
                    "layer_norm",
                    format!("{name} {:?} does not match {c} channels", self.value(v).shape()),
                ));
            }
        }
        let vol = dims[0] * dims[1] * dims[2];
        let groups = match axes {
            NormAxes::Channels => vol,
            NormAxes::Sample => 1,
        };
        let count = T::of(match axes {
            NormAxes::Channels => c,
            NormAxes::Sample => c * vol,
        } as f64);
        let group = |i: usize| if groups == 1 { 0 } else { i };
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); n * groups];
        let mut out = vec![T::zero(); xv.len()];
        let eps = T::of(LAYER_NORM_EPS);
        for s in 0..n {
            let xs = &xv[s * c * vol..(s + 1) * c * vol];
            let mut mean = vec![T::zero(); groups];
            for ch in 0..c {
                for i in 0..vol {
                    mean[group(i)] += xs[ch * vol + i];
                }
            }
            for m in &mut mean {
                *m = *m / count;
            }
            let mut var = vec![T::zero(); groups];
            for ch in 0..c {
                for i in 0..vol {
                    let dlt = xs[ch * vol + i] - mean[group(i)];
                    var[group(i)] += dlt * dlt;
                }
            }
            let istd = &mut inv_std[s * groups..(s + 1) * groups];
            for (is, v) in istd.iter_mut().zip(&var) {
                *is = T::one() / (*v / count + eps).sqrt();
            }
            for ch in 0..c {
                for i in 0..vol {
                    let at = (s * c + ch) * vol + i;
                    let xh = (xs[ch * vol + i] - mean[group(i)]) * istd[group(i)];
                    xhat[at] = xh;
                    out[at] = gv[ch] * xh + bv[ch];
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axes,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, ca, da) = image_dims("concat", self.value(a).shape())?;
        let (nb, cb, db) = image_dims("concat", self.value(b).shape())?;
        if na != nb || da != db {
            return Err(shape_err(
                "concat",
                format!(
                    "{:?} and {:?} differ outside the channel axis",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let vol = da[0] * da[1] * da[2];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for s in 0..na {
            out.extend_from_slice(&av[s * ca * vol..(s + 1) * ca * vol]);
            out.extend_from_slice(&bv[s * cb * vol..(s + 1) * cb * vol]);
        }
        let value = Tensor::new(vec![na, ca + cb, da[0], da[1], da[2]], out)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, ng))
    }

    /// Nearest-neighbour upsampling by 2 on every spatial axis.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, [d, h, w]) = image_dims("upsample2", self.value(x).shape())?;
        let xv = self.value(x).data();
        let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * c * od * oh * ow);
        for plane in 0..n * c {
            let base = plane * d * h * w;
            for z in 0..od {
                for y in 0..oh {
                    let row = base + ((z / 2) * h + y / 2) * w;
                    for xx in 0..ow {
                        out.push(xv[row + xx / 2]);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, od, oh, ow], out)?;
        let ng = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample { x }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    /// `alpha ⊙ x` with a one-channel `alpha: [N, 1, S]` broadcast over the
    /// channels of `x: [N, C, S]`.
    pub fn gate(&mut self, alpha: Var, x: Var) -> Result<Var> {
        let (na, ca, da) = image_dims("gate", self.value(alpha).shape())?;
        let (n, c, dims) = image_dims("gate", self.value(x).shape())?;
        if na != n || ca != 1 || da != dims {
            return Err(shape_err(
                "gate",
                format!(
                    "alpha {:?} must be [N, 1, ...] matching {:?}",
                    self.value(alpha).shape(),
                    self.value(x).shape()
                ),
            ));
        }
        let vol = dims[0] * dims[1] * dims[2];
        let av = self.value(alpha).data();
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let at = (s * c + ch) * vol;
                for i in 0..vol {
                    out[at + i] = av[s * vol + i] * xv[at + i];
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(&[alpha, x]);
        Ok(self.push(value, Op::Gate { alpha, x }, ng))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| v * s).collect()).expect("same shape");
        let ng = self.needs(&[x]);
        self.push(value, Op::Scale { x, s }, ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(shape_err(
                "mse",
                format!(
                    "prediction {:?} vs target {:?}",
                    self.value(pred).shape(),
                    target.shape()
                ),
            ));
        }
        let n = T::of(target.len() as f64);
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (*p - *t) * (*p - *t))
            .sum::<T>()
            / n;
        let ng = self.needs(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// Gradients of a scalar node.
    pub fn backward(self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!(
                    "seed node has shape {:?}; use backward_with for non-scalars",
                    self.value(loss).shape()
                ),
            ));
        }
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        self.backward_with(loss, seed)
    }

    /// Vector-Jacobian product: propagates `cotangent` from `output` to
    /// every node that requires a gradient.
    pub fn backward_with(self, output: Var, cotangent: Tensor<T>) -> Result<Grads<T>> {
        if self.value(output).shape() != cotangent.shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "cotangent {:?} vs output {:?}",
                    cotangent.shape(),
                    self.value(output).shape()
                ),
            ));
        }
        let Tape { mut nodes } = self;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(cotangent);
        for i in (0..=output.0).rev() {
            if !nodes[i].needs_grad {
                continue;
            }
            let op = std::mem::replace(&mut nodes[i].op, Op::Leaf);
            if matches!(op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            let value = std::mem::replace(&mut nodes[i].value, Tensor::scalar(T::zero()));
            let want = |v: &Var| nodes[v.0].needs_grad;
            match op {
                Op::Leaf => unreachable!(),
                Op::Conv3 { x, w, b, padded } => {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let (n, c, dims) = image_dims("conv3d", &xs)?;
                    let wt = &nodes[w.0].value;
                    let f = wt.shape()[0];
                    let g = Padded::new(dims);
                    let vol = dims[0] * dims[1] * dims[2];
                    let mut dpad = vec![T::zero(); f * g.span];
                    let mut dw = vec![T::zero(); wt.len()];
                    let mut db = vec![T::zero(); f];
                    let mut dx = want(&x).then(|| vec![T::zero(); n * c * vol]);
                    let mut dxp = vec![T::zero(); if dx.is_some() { c * g.vp } else { 0 }];
                    let [d, h, wd] = dims;
                    for s in 0..n {
                        for fi in 0..f {
                            let src = &dy.data()[(s * f + fi) * vol..(s * f + fi + 1) * vol];
                            let dst = &mut dpad[fi * g.span..(fi + 1) * g.span];
                            for z in 0..d {
                                for y in 0..h {
                                    let si = (z * h + y) * wd;
                                    let di = g.span_index(z, y, 0);
                                    dst[di..di + wd].copy_from_slice(&src[si..si + wd]);
                                }
                            }
                            db[fi] += src.iter().copied().sum::<T>();
                        }
                        let pad = &padded[s * c * g.vp..(s + 1) * c * g.vp];
                        if want(&w) {
                            for tap in 0..27 {
                                gemm(
                                    f,
                                    g.span,
                                    c,
                                    &dpad,
                                    View::new(0, g.span, 1),
                                    pad,
                                    View::new(g.tap_start(tap), 1, g.vp),
                                    T::one(),
                                    &mut dw,
                                    View::new(tap, c * 27, 27),
                                );
                            }
                        }
                        if let Some(dx) = dx.as_mut() {
                            dxp.fill(T::zero());
                            for tap in 0..27 {
                                gemm(
                                    c,
                                    f,
                                    g.span,
                                    wt.data(),
                                    View::new(tap, 27, c * 27),
                                    &dpad,
                                    View::new(0, g.span, 1),
                                    T::one(),
                                    &mut dxp,
                                    View::new(g.tap_start(tap), g.vp, 1),
                                );
                            }
                            for ch in 0..c {
                                g.unpad_add(
                                    &dxp[ch * g.vp..(ch + 1) * g.vp],
                                    &mut dx[(s * c + ch) * vol..(s * c + ch + 1) * vol],
                                );
                            }
                        }
                    }
                    let wshape = wt.shape().to_vec();
                    if want(&w) {
                        accumulate(&mut grads, w, Tensor::new(wshape, dw)?);
                    }
                    if want(&b) {
                        accumulate(&mut grads, b, Tensor::new(vec![f], db)?);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, x, Tensor::new(xs, dx)?);
                    }
                }
                Op::Conv1 { x, w, b } => {
                    let xt = &nodes[x.0].value;
                    let (n, c, dims) = image_dims("conv1x1", xt.shape())?;
                    let wt = &nodes[w.0].value;
                    let f = wt.shape()[0];
                    let vol = dims[0] * dims[1] * dims[2];
                    if want(&w) {
                        let mut dw = vec![T::zero(); f * c];
                        for s in 0..n {
                            gemm(
                                f,
                                vol,
                                c,
                                dy.data(),
                                View::new(s * f * vol, vol, 1),
                                xt.data(),
                                View::new(s * c * vol, 1, vol),
                                T::one(),
                                &mut dw,
                                View::new(0, c, 1),
                            );
                        }
                        accumulate(&mut grads, w, Tensor::new(vec![f, c], dw)?);
                    }
                    if want(&b) {
                        let mut db = vec![T::zero(); f];
                        for s in 0..n {
                            for (fi, slot) in db.iter_mut().enumerate() {
                                *slot += dy.data()[(s * f + fi) * vol..(s * f + fi + 1) * vol]
                                    .iter()
                                    .copied()
                                    .sum::<T>();
                            }
                        }
                        accumulate(&mut grads, b, Tensor::new(vec![f], db)?);
                    }
                    if want(&x) {
                        let mut dx = vec![T::zero(); n * c * vol];
                        for s in 0..n {
                            gemm(
                                c,
                                f,
                                vol,
                                wt.data(),
                                View::new(0, 1, c),
                                dy.data(),
                                View::new(s * f * vol, vol, 1),
                                T::zero(),
                                &mut dx,
                                View::new(s * c * vol, vol, 1),
                            );
                        }
                        let shape = xt.shape().to_vec();
                        accumulate(&mut grads, x, Tensor::new(shape, dx)?);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    let mut dx = Tensor::zeros(&shape);
                    for (g, &at) in dy.data().iter().zip(&argmax) {
                        dx.data_mut()[at as usize] += *g;
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Gelu { x } => {
                    let xt = &nodes[x.0].value;
                    let norm = T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    let data = xt
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&v, &g)| g * (gelu_cdf(v) + v * norm * (-(v * v) * T::of(0.5)).exp()))
                        .collect();
                    let shape = xt.shape().to_vec();
                    accumulate(&mut grads, x, Tensor::new(shape, data)?);
                }
                Op::Sigmoid { x } => {
                    let data = value
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&y, &g)| g * y * (T::one() - y))
                        .collect();
                    accumulate(&mut grads, x, Tensor::new(value.shape().to_vec(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    axes,
                    xhat,
                    inv_std,
                } => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    let (n, c, dims) = image_dims("layer_norm", &shape)?;
                    let vol = dims[0] * dims[1] * dims[2];
                    let gv = nodes[gamma.0].value.data();
                    let (groups, count) = match axes {
                        NormAxes::Channels => (vol, c),
                        NormAxes::Sample => (1, c * vol),
                    };
                    let group = |i: usize| if groups == 1 { 0 } else { i };
                    let count = T::of(count as f64);
                    let g = dy.data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let mut dx = vec![T::zero(); g.len()];
                    for s in 0..n {
                        let mut s1 = vec![T::zero(); groups];
                        let mut s2 = vec![T::zero(); groups];
                        for ch in 0..c {
                            for i in 0..vol {
                                let at = (s * c + ch) * vol + i;
                                dgamma[ch] += g[at] * xhat[at];
                                dbeta[ch] += g[at];
                                let dxh = g[at] * gv[ch];
                                s1[group(i)] += dxh;
                                s2[group(i)] += dxh * xhat[at];
                            }
                        }
                        for ch in 0..c {
                            for i in 0..vol {
                                let at = (s * c + ch) * vol + i;
                                let k = group(i);
                                let dxh = g[at] * gv[ch];
                                dx[at] = inv_std[s * groups + k] / count * (count * dxh - s1[k] - xhat[at] * s2[k]);
                            }
                        }
                    }
                    if want(&gamma) {
                        accumulate(&mut grads, gamma, Tensor::new(vec![c], dgamma)?);
                    }
                    if want(&beta) {
                        accumulate(&mut grads, beta, Tensor::new(vec![c], dbeta)?);
                    }
                    if want(&x) {
                        accumulate(&mut grads, x, Tensor::new(shape, dx)?);
                    }
                }
                Op::Concat { a, b } => {
                    let sa = nodes[a.0].value.shape().to_vec();
                    let sb = nodes[b.0].value.shape().to_vec();
                    let vol = sa[2] * sa[3] * sa[4];
                    let (ca, cb) = (sa[1], sb[1]);
                    let mut da = Vec::with_capacity(sa.iter().product());
                    let mut dbv = Vec::with_capacity(sb.iter().product());
                    for s in 0..sa[0] {
                        let base = s * (ca + cb) * vol;
                        da.extend_from_slice(&dy.data()[base..base + ca * vol]);
                        dbv.extend_from_slice(&dy.data()[base + ca * vol..base + (ca + cb) * vol]);
                    }
                    if want(&a) {
                        accumulate(&mut grads, a, Tensor::new(sa, da)?);
                    }
                    if want(&b) {
                        accumulate(&mut grads, b, Tensor::new(sb, dbv)?);
                    }
                }
                Op::Upsample { x } => {
                    let shape = nodes[x.0].value.shape().to_vec();
                    let (n, c, [d, h, w]) = image_dims("upsample2", &shape)?;
                    let mut dx = vec![T::zero(); n * c * d * h * w];
                    let (oh, ow) = (2 * h, 2 * w);
                    let g = dy.data();
                    for plane in 0..n * c {
                        let ib = plane * d * h * w;
                        let ob = plane * 8 * d * h * w;
                        for z in 0..2 * d {
                            for y in 0..oh {
                                let row = ib + ((z / 2) * h + y / 2) * w;
                                let orow = ob + (z * oh + y) * ow;
                                for xx in 0..ow {
                                    dx[row + xx / 2] += g[orow + xx];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, Tensor::new(shape, dx)?);
                }
                Op::Add { a, b } => {
                    if want(&a) {
                        accumulate(&mut grads, a, dy.clone());
                    }
                    if want(&b) {
                        accumulate(&mut grads, b, dy);
                    }
                }
                Op::Gate { alpha, x } => {
                    let at = &nodes[alpha.0].value;
                    let xt = &nodes[x.0].value;
                    let (n, c, dims) = image_dims("gate", xt.shape())?;
                    let vol = dims[0] * dims[1] * dims[2];
                    let g = dy.data();
                    if want(&alpha) {
                        let mut da = vec![T::zero(); n * vol];
                        for s in 0..n {
                            for ch in 0..c {
                                let base = (s * c + ch) * vol;
                                for i in 0..vol {
                                    da[s * vol + i] += g[base + i] * xt.data()[base + i];
                                }
                            }
                        }
                        let shape = at.shape().to_vec();
                        accumulate(&mut grads, alpha, Tensor::new(shape, da)?);
                    }
                    if want(&x) {
                        let mut dx = vec![T::zero(); g.len()];
                        for s in 0..n {
                            for ch in 0..c {
                                let base = (s * c + ch) * vol;
                                for i in 0..vol {
                                    dx[base + i] = g[base + i] * at.data()[s * vol + i];
                                }
                            }
                        }
                        let shape = xt.shape().to_vec();
                        accumulate(&mut grads, x, Tensor::new(shape, dx)?);
                    }
                }
                Op::Scale { x, s } => {
                    let data = dy.data().iter().map(|&g| g * s).collect();
                    accumulate(&mut grads, x, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::Mse { pred, target } => {
                    let p = &nodes[pred.0].value;
                    let k = dy.item() * T::of(2.0 / target.len() as f64);
                    let data = p.data().iter().zip(&target).map(|(a, t)| k * (*a - *t)).collect();
                    let shape = p.shape().to_vec();
                    accumulate(&mut grads, pred, Tensor::new(shape, data)?);
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of `v`, or zeros of `shape` when nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.take(v).unwrap_or_else(|| Tensor::zeros(shape))
    }
}
