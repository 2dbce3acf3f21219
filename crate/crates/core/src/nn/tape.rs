//! Reverse-mode gradient tape over [`Tensor`] operations.
//!
//! Nodes are appended in evaluation order; [`Tape::backward`] walks them in
//! reverse, accumulating cotangents. Only nodes that depend on a leaf
//! created with `requires_grad` receive gradients.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    Relu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    AvgPool2(Var),
    Upsample2(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Output size of a stride-1 convolution along one axis.
fn conv_out(len: usize, k: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v + 1).filter(|&v| v > 0)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is propagated to it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Cross-correlation with `w: (cout, cin, k, k)`, bias `b: (1, cout, 1, 1)`,
    /// stride 1 and zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let y = conv2d_forward(self.value(x), self.value(w), self.value(b), pad)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, pad }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(sigmoid);
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid(x), needs)
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?)
            .shape();
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(Error::Shape(format!("concat of {first:?} with {s:?}")));
            }
            channels += s[1];
        }
        let shape = [first[0], channels, first[2], first[3]];
        let mut out = Tensor::zeros(shape);
        let plane = first[2] * first[3];
        for n in 0..first[0] {
            let dst = out.item_mut(n);
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.item(n);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
            debug_assert_eq!(off, channels * plane);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), needs))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let y = avg_pool2(self.value(x))?;
        let needs = self.needs(x);
        Ok(self.push(y, Op::AvgPool2(x), needs))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let y = upsample2(self.value(x));
        let needs = self.needs(x);
        self.push(y, Op::Upsample2(x), needs)
    }

    /// Propagates the cotangent `seed` of node `out` back through the tape.
    pub fn backward(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::Shape(format!(
                "seed {:?} for output {:?}",
                seed.shape(),
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d = *d * y * (T::one() - y);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let [nb, _, h, w] = g.shape();
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).channels();
                        if self.needs(p) {
                            let mut dp = Tensor::zeros([nb, c, h, w]);
                            for n in 0..nb {
                                let src = &g.item(n)[off * h * w..(off + c) * h * w];
                                dp.item_mut(n).copy_from_slice(src);
                            }
                            accumulate(&mut grads, p, dp);
                        }
                        off += c;
                    }
                }
                Op::AvgPool2(x) => {
                    let dx = avg_pool2_backward(&g, self.value(*x).shape());
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample2(x) => {
                    let dx = upsample2_backward(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Conv2d { x, w, b, pad } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = conv2d_backward(xv, wv, &g, *pad, self.needs(*x));
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    // Branches keep exp() from overflowing for large |v|.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Zero-padded copy of one CHW image. Each channel plane is `hp·wp + k - 1`
/// long so that every shifted window below stays in bounds.
struct Padded<T> {
    data: Vec<T>,
    wp: usize,
    plane: usize,
}

impl<T: Real> Padded<T> {
    fn new(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Self {
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let plane = hp * wp + k - 1;
        let mut data = vec![T::zero(); c * plane];
        for ci in 0..c {
            for y in 0..h {
                let dst = ci * plane + (y + pad) * wp + pad;
                data[dst..dst + w].copy_from_slice(&x[(ci * h + y) * w..(ci * h + y + 1) * w]);
            }
        }
        Self { data, wp, plane }
    }
}

/// Eager convolution; see [`Tape::conv2d`].
///
/// A k×k convolution is evaluated as k² GEMMs against shifted views of the
/// padded input. Outputs are computed on rows of padded width `wp`; the
/// trailing `wp - ow` columns of each row are scratch and discarded.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let [nb, cin, h, wd] = x.shape();
    let [cout, wcin, kh, kw] = w.shape();
    if wcin != cin || kh != kw {
        return Err(Error::Shape(format!(
            "conv input {:?} with kernel {:?}",
            x.shape(),
            w.shape()
        )));
    }
    if b.shape() != [1, cout, 1, 1] {
        return Err(Error::Shape(format!("bias {:?} for {cout} output channels", b.shape())));
    }
    let k = kh;
    let (oh, ow) = match (conv_out(h, k, pad), conv_out(wd, k, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return Err(Error::Shape(format!("kernel {k} with pad {pad} on {h}x{wd}"))),
    };
    let mut y = Tensor::zeros([nb, cout, oh, ow]);
    let kk = (cin * k * k) as isize;
    if k == 1 && pad == 0 {
        let cols = oh * ow;
        for n in 0..nb {
            let out = y.item_mut(n);
            for (co, plane) in out.chunks_mut(cols).enumerate() {
                plane.fill(b.data()[co]);
            }
            T::gemm(
                cout,
                cin,
                cols,
                T::one(),
                w.data(),
                kk,
                1,
                x.item(n),
                cols as isize,
                1,
                T::one(),
                out,
                cols as isize,
                1,
            );
        }
        return Ok(y);
    }
    let mut wide = Vec::new();
    for n in 0..nb {
        let xp = Padded::new(x.item(n), cin, h, wd, k, pad);
        let cols = oh * xp.wp;
        wide.clear();
        for co in 0..cout {
            wide.extend(std::iter::repeat_n(b.data()[co], cols));
        }
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let off = ky * xp.wp + kx;
                T::gemm(
                    cout,
                    cin,
                    cols,
                    T::one(),
                    &w.data()[tap..],
                    kk,
                    (k * k) as isize,
                    &xp.data[off..],
                    xp.plane as isize,
                    1,
                    T::one(),
                    &mut wide,
                    cols as isize,
                    1,
                );
            }
        }
        let out = y.item_mut(n);
        for co in 0..cout {
            for oy in 0..oh {
                let src = &wide[co * cols + oy * xp.wp..co * cols + oy * xp.wp + ow];
                out[(co * oh + oy) * ow..(co * oh + oy + 1) * ow].copy_from_slice(src);
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dw, db)`; `dx` only when requested.
fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    pad: usize,
    want_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [nb, cin, h, wd] = x.shape();
    let [cout, _, k, _] = w.shape();
    let [_, _, oh, ow] = dy.shape();
    let kk = (cin * k * k) as isize;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, cout, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    for n in 0..nb {
        let g = dy.item(n);
        for (co, plane) in g.chunks(oh * ow).enumerate() {
            db.data_mut()[co] += plane.iter().copied().sum::<T>();
        }
    }
    if k == 1 && pad == 0 {
        let cols = oh * ow;
        for n in 0..nb {
            let g = dy.item(n);
            // dw += dy · xᵀ
            T::gemm(
                cout,
                cols,
                cin,
                T::one(),
                g,
                cols as isize,
                1,
                x.item(n),
                1,
                cols as isize,
                T::one(),
                dw.data_mut(),
                kk,
                1,
            );
            if let Some(dx) = dx.as_mut() {
                // dx = wᵀ · dy
                T::gemm(
                    cin,
                    cout,
                    cols,
                    T::one(),
                    w.data(),
                    1,
                    kk,
                    g,
                    cols as isize,
                    1,
                    T::zero(),
                    dx.item_mut(n),
                    cols as isize,
                    1,
                );
            }
        }
        return (dx, dw, db);
    }
    for n in 0..nb {
        let xp = Padded::new(x.item(n), cin, h, wd, k, pad);
        let cols = oh * xp.wp;
        // Output gradient on the padded-width grid, scratch columns zeroed.
        let mut gwide = vec![T::zero(); cout * cols];
        let g = dy.item(n);
        for co in 0..cout {
            for oy in 0..oh {
                gwide[co * cols + oy * xp.wp..co * cols + oy * xp.wp + ow]
                    .copy_from_slice(&g[(co * oh + oy) * ow..(co * oh + oy + 1) * ow]);
            }
        }
        let mut dxp = want_dx.then(|| vec![T::zero(); xp.data.len()]);
        for ky in 0..k {
            for kx in 0..k {
                let tap = ky * k + kx;
                let off = ky * xp.wp + kx;
                // dw[:, :, ky, kx] += gwide · shifted(x)ᵀ
                T::gemm(
                    cout,
                    cols,
                    cin,
                    T::one(),
                    &gwide,
                    cols as isize,
                    1,
                    &xp.data[off..],
                    1,
                    xp.plane as isize,
                    T::one(),
                    &mut dw.data_mut()[tap..],
                    kk,
                    (k * k) as isize,
                );
                if let Some(dxp) = dxp.as_mut() {
                    // shifted(dx) += w[:, :, ky, kx]ᵀ · gwide
                    T::gemm(
                        cin,
                        cout,
                        cols,
                        T::one(),
                        &w.data()[tap..],
                        (k * k) as isize,
                        kk,
                        &gwide,
                        cols as isize,
                        1,
                        T::one(),
                        &mut dxp[off..],
                        xp.plane as isize,
                        1,
                    );
                }
            }
        }
        if let (Some(dx), Some(dxp)) = (dx.as_mut(), dxp) {
            let out = dx.item_mut(n);
            for ci in 0..cin {
                for yy in 0..h {
                    let src = ci * xp.plane + (yy + pad) * xp.wp + pad;
                    out[(ci * h + yy) * wd..(ci * h + yy + 1) * wd].copy_from_slice(&dxp[src..src + wd]);
                }
            }
        }
    }
    (dx, dw, db)
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [nb, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "average pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut y = Tensor::zeros([nb, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                dst[oy * ow + ox] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Ok(y)
}

fn avg_pool2_backward<T: Real>(dy: &Tensor<T>, x_shape: [usize; 4]) -> Tensor<T> {
    let [_, _, h, w] = x_shape;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(x_shape);
    for (src, dst) in dy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    dx
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [nb, c, h, w] = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros([nb, c, oh, ow]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(oh * ow)) {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[oy * ow + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    y
}

fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let [nb, c, oh, ow] = dy.shape();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([nb, c, h, w]);
    for (src, dst) in dy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[(oy / 2) * w + ox / 2] += src[oy * ow + ox];
            }
        }
    }
    dx
}
