use crate::conv::{self, ConvGeometry};
use crate::{Real, Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Abs(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeometry },
    AddBias(Var, Var),
    MulChannel(Var, Var),
    /// Output is the standardized input; `inv_std` is per channel.
    BatchNorm { x: Var, inv_std: Vec<T> },
    Upsample2x(Var),
    ConcatChannels(Vec<Var>),
    WeightedChannelSum(Var, Vec<T>),
    Warp { image: Var, flow: Var },
    DiffX(Var),
    DiffY(Var),
    Mean(Var),
    MaskedMean { x: Var, mask: Tensor<T>, count: T },
    SpectralScale { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics produced by [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
}

/// Append-only reverse-mode tape. Build a graph per forward pass, call
/// [`Graph::backward`] on a scalar node, then drop it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients from one backward pass.
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

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

struct Bilinear<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
}

fn bilinear_coords<T: Real>(px: usize, py: usize, u: T, v: T, height: usize, width: usize) -> Option<(Bilinear<T>, bool)> {
    let sx = T::of(px as f64) - u;
    let sy = T::of(py as f64) - v;
    if !sx.is_finite() || !sy.is_finite() {
        return None;
    }
    let valid = sx >= T::zero()
        && sy >= T::zero()
        && sx <= T::of((width - 1) as f64)
        && sy <= T::of((height - 1) as f64);
    // Far out-of-range samples read nothing but zeros.
    let limit = T::of(1e9);
    if sx.abs() > limit || sy.abs() > limit {
        return Some((Bilinear { x0: -2, y0: -2, fx: T::zero(), fy: T::zero() }, false));
    }
    let fx0 = sx.floor();
    let fy0 = sy.floor();
    Some((
        Bilinear { x0: fx0.to_isize().unwrap(), y0: fy0.to_isize().unwrap(), fx: sx - fx0, fy: sy - fy0 },
        valid,
    ))
}

#[inline]
fn fetch<T: Real>(plane: &[T], height: usize, width: usize, y: isize, x: isize) -> T {
    if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
        T::zero()
    } else {
        plane[y as usize * width + x as usize]
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; [`Gradients::get`] returns its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.abs());
        let rg = self.rg(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Square-kernel convolution, no bias. `w` is `[out, in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let geom = ConvGeometry { stride, pad };
        let value = conv::conv2d_forward(self.value(x), self.value(w), geom);
        let rg = self.rg(x) || self.rg(w);
        self.push(value, Op::Conv2d { x, w, geom }, rg)
    }

    /// Adds a `[1, C, 1, 1]` bias to every position.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.shape(x);
        assert_eq!(self.shape(b), [1, xs[1], 1, 1], "bias shape");
        let plane = xs[2] * xs[3];
        let bias = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for n in 0..xs[0] {
            for (c, chunk) in value.sample_mut(n).chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bias[c]);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(value, Op::AddBias(x, b), rg)
    }

    /// Multiplies channel `c` by `g[c]`, `g` shaped `[1, C, 1, 1]`.
    pub fn mul_channel(&mut self, x: Var, g: Var) -> Var {
        let xs = self.shape(x);
        assert_eq!(self.shape(g), [1, xs[1], 1, 1], "channel scale shape");
        let plane = xs[2] * xs[3];
        let gain = self.value(g).data().to_vec();
        let mut value = self.value(x).clone();
        for n in 0..xs[0] {
            for (c, chunk) in value.sample_mut(n).chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v *= gain[c]);
            }
        }
        let rg = self.rg(x) || self.rg(g);
        self.push(value, Op::MulChannel(x, g), rg)
    }

    /// Standardizes each channel with the statistics of the current batch.
    pub fn batch_norm(&mut self, x: Var, eps: T) -> (Var, BatchStats<T>) {
        let xs = self.shape(x);
        let [n, c, h, w] = xs;
        let plane = h * w;
        let count = T::of((n * plane) as f64);
        let input = self.value(x);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for i in 0..n {
            for (ch, chunk) in input.sample(i).chunks(plane).enumerate() {
                mean[ch] += chunk.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);
        for i in 0..n {
            for (ch, chunk) in input.sample(i).chunks(plane).enumerate() {
                var[ch] += chunk.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / count);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut value = input.clone();
        for i in 0..n {
            for (ch, chunk) in value.sample_mut(i).chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv_std[ch]);
            }
        }
        let rg = self.rg(x);
        let out = self.push(value, Op::BatchNorm { x, inv_std }, rg);
        (out, BatchStats { mean, var })
    }

    /// Nearest-neighbour upsampling by a factor of two in both spatial axes.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let input = self.value(x);
        let value = Tensor::from_fn([n, c, 2 * h, 2 * w], |[i, ch, y, xx]| input.at(i, ch, y / 2, xx / 2));
        let rg = self.rg(x);
        self.push(value, Op::Upsample2x(x), rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_channels(&tensors);
        let rg = parts.iter().any(|&v| self.rg(v));
        self.push(value, Op::ConcatChannels(parts.to_vec()), rg)
    }

    /// `out[n, 0] = sum_c weights[c] * x[n, c]`.
    pub fn weighted_channel_sum(&mut self, x: Var, weights: Vec<T>) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert_eq!(weights.len(), c, "one weight per channel");
        let plane = h * w;
        let input = self.value(x);
        let mut value = Tensor::zeros([n, 1, h, w]);
        for i in 0..n {
            let src = input.sample(i);
            let dst = value.sample_mut(i);
            for (ch, &wt) in weights.iter().enumerate() {
                for (d, &s) in dst.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                    *d += wt * s;
                }
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::WeightedChannelSum(x, weights), rg)
    }

    /// Backward bilinear warp: `out(p) = image(p - flow(p))`, with flow channel 0
    /// the horizontal and channel 1 the vertical displacement in pixels.
    /// Samples falling outside the image read zeros. Also returns the
    /// `[N, 1, H, W]` validity mask (1 where the sample point lies inside the image).
    pub fn warp(&mut self, image: Var, flow: Var) -> (Var, Tensor<T>) {
        let [n, c, h, w] = self.shape(image);
        assert_eq!(self.shape(flow), [n, 2, h, w], "flow must be [N, 2, H, W] matching the image");
        let img = self.value(image);
        let fl = self.value(flow);
        let plane = h * w;
        let mut value = Tensor::zeros([n, c, h, w]);
        let mut mask = Tensor::zeros([n, 1, h, w]);
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let Some((b, valid)) = bilinear_coords(x, y, fl.at(i, 0, y, x), fl.at(i, 1, y, x), h, w) else {
                        continue;
                    };
                    if valid {
                        mask.set(i, 0, y, x, T::one());
                    }
                    let (one, fx, fy) = (T::one(), b.fx, b.fy);
                    for ch in 0..c {
                        let src = &img.sample(i)[ch * plane..(ch + 1) * plane];
                        let v00 = fetch(src, h, w, b.y0, b.x0);
                        let v01 = fetch(src, h, w, b.y0, b.x0 + 1);
                        let v10 = fetch(src, h, w, b.y0 + 1, b.x0);
                        let v11 = fetch(src, h, w, b.y0 + 1, b.x0 + 1);
                        let val = (one - fy) * ((one - fx) * v00 + fx * v01) + fy * ((one - fx) * v10 + fx * v11);
                        value.set(i, ch, y, x, val);
                    }
                }
            }
        }
        let rg = self.rg(image) || self.rg(flow);
        (self.push(value, Op::Warp { image, flow }, rg), mask)
    }

    /// Forward difference along width: `out[.., x] = in[.., x + 1] - in[.., x]`.
    pub fn diff_x(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert!(w >= 2, "diff_x needs width >= 2");
        let input = self.value(x);
        let value = Tensor::from_fn([n, c, h, w - 1], |[i, ch, y, xx]| input.at(i, ch, y, xx + 1) - input.at(i, ch, y, xx));
        let rg = self.rg(x);
        self.push(value, Op::DiffX(x), rg)
    }

    /// Forward difference along height.
    pub fn diff_y(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        assert!(h >= 2, "diff_y needs height >= 2");
        let input = self.value(x);
        let value = Tensor::from_fn([n, c, h - 1, w], |[i, ch, y, xx]| input.at(i, ch, y + 1, xx) - input.at(i, ch, y, xx));
        let rg = self.rg(x);
        self.push(value, Op::DiffY(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean of `x` over entries where `mask` is nonzero. The mask may have a
    /// single channel, in which case it is broadcast over channels. Returns 0
    /// when the mask is empty.
    pub fn masked_mean(&mut self, x: Var, mask: &Tensor<T>) -> Var {
        let xs = self.shape(x);
        let ms = mask.shape();
        let full_mask = if ms == xs {
            mask.clone()
        } else {
            assert!(ms[1] == 1 && [ms[0], ms[2], ms[3]] == [xs[0], xs[2], xs[3]], "mask shape {ms:?} vs {xs:?}");
            Tensor::from_fn(xs, |[n, _, h, w]| mask.at(n, 0, h, w))
        };
        let count = full_mask.data().iter().filter(|m| **m != T::zero()).count();
        let count = T::of(count as f64);
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(full_mask.data())
            .filter(|(_, m)| **m != T::zero())
            .map(|(v, _)| *v)
            .sum();
        let mean = if count > T::zero() { total / count } else { T::zero() };
        let rg = self.rg(x);
        self.push(Tensor::scalar(mean), Op::MaskedMean { x, mask: full_mask, count }, rg)
    }

    /// `w / sigma` with `sigma = u^T W v`, treating `w` as an
    /// `out x (in*k*k)` matrix and `u`, `v` as constants.
    pub fn spectral_scale(&mut self, w: Var, u: &[T], v: &[T]) -> Var {
        let ws = self.shape(w);
        let rows = ws[0];
        let cols = ws[1] * ws[2] * ws[3];
        assert_eq!(u.len(), rows, "left singular vector length");
        assert_eq!(v.len(), cols, "right singular vector length");
        let data = self.value(w).data();
        let mut sigma = T::zero();
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            let dot: T = row.iter().zip(v).map(|(&a, &b)| a * b).sum();
            sigma += u[r] * dot;
        }
        let value = self.value(w).map(|x| x / sigma);
        let rg = self.rg(w);
        self.push(value, Op::SpectralScale { w, u: u.to_vec(), v: v.to_vec(), sigma }, rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |gr, x| if x > T::zero() { gr } else { T::zero() }));
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                accumulate(grads, *a, g.zip_map(self.value(*a), |gr, x| if x > T::zero() { gr } else { gr * slope }));
            }
            Op::Abs(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |gr, x| if x == T::zero() { T::zero() } else { gr * x.signum() }));
            }
            Op::Conv2d { x, w, geom } => {
                let (gx, gw) = conv::conv2d_backward(self.value(*x), self.value(*w), g, *geom, self.rg(*x), self.rg(*w));
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    accumulate(grads, *w, gw);
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.rg(*b) {
                    let [n, c, h, w] = g.shape();
                    let mut gb = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, chunk) in g.sample(i).chunks(h * w).enumerate() {
                            gb[ch] += chunk.iter().copied().sum::<T>();
                        }
                    }
                    accumulate(grads, *b, Tensor::from_vec([1, c, 1, 1], gb));
                }
            }
            Op::MulChannel(x, gain) => {
                let [n, c, h, w] = g.shape();
                let plane = h * w;
                if self.rg(*x) {
                    let gv = self.value(*gain).data();
                    let mut gx = g.clone();
                    for i in 0..n {
                        for (ch, chunk) in gx.sample_mut(i).chunks_mut(plane).enumerate() {
                            chunk.iter_mut().for_each(|v| *v *= gv[ch]);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                if self.rg(*gain) {
                    let xv = self.value(*x);
                    let mut gg = vec![T::zero(); c];
                    for i in 0..n {
                        for (ch, (gc, xc)) in g.sample(i).chunks(plane).zip(xv.sample(i).chunks(plane)).enumerate() {
                            gg[ch] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                    accumulate(grads, *gain, Tensor::from_vec([1, c, 1, 1], gg));
                }
            }
            Op::BatchNorm { x, inv_std } => {
                let [n, c, h, w] = g.shape();
                let plane = h * w;
                let count = T::of((n * plane) as f64);
                let xhat = &node.value;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for i in 0..n {
                    for (ch, (gc, xc)) in g.sample(i).chunks(plane).zip(xhat.sample(i).chunks(plane)).enumerate() {
                        sum_g[ch] += gc.iter().copied().sum::<T>();
                        sum_gx[ch] += gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
                let mut gx = Tensor::zeros(g.shape());
                for i in 0..n {
                    let gs = g.sample(i);
                    let xs = xhat.sample(i);
                    let out = gx.sample_mut(i);
                    for ch in 0..c {
                        let k = inv_std[ch] / count;
                        for p in ch * plane..(ch + 1) * plane {
                            out[p] = k * (count * gs[p] - sum_g[ch] - xs[p] * sum_gx[ch]);
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Upsample2x(x) => {
                let [n, c, h, w] = self.shape(*x);
                let mut gx = Tensor::zeros([n, c, h, w]);
                for i in 0..n {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                let v = gx.at(i, ch, y / 2, xx / 2) + g.at(i, ch, y, xx);
                                gx.set(i, ch, y / 2, xx / 2, v);
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatChannels(parts) => {
                let [n, _, h, w] = g.shape();
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p)[1];
                    if self.rg(p) {
                        let mut gp = Tensor::zeros([n, pc, h, w]);
                        for i in 0..n {
                            gp.sample_mut(i).copy_from_slice(&g.sample(i)[offset * plane..(offset + pc) * plane]);
                        }
                        accumulate(grads, p, gp);
                    }
                    offset += pc;
                }
            }
            Op::WeightedChannelSum(x, weights) => {
                let [n, c, h, w] = self.shape(*x);
                let plane = h * w;
                let mut gx = Tensor::zeros([n, c, h, w]);
                for i in 0..n {
                    let gs = g.sample(i);
                    let out = gx.sample_mut(i);
                    for (ch, &wt) in weights.iter().enumerate() {
                        for (o, &gv) in out[ch * plane..(ch + 1) * plane].iter_mut().zip(gs) {
                            *o = wt * gv;
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Warp { image, flow } => {
                let [n, c, h, w] = self.shape(*image);
                let plane = h * w;
                let img = self.value(*image);
                let fl = self.value(*flow);
                let mut gi = self.rg(*image).then(|| Tensor::zeros([n, c, h, w]));
                let mut gf = self.rg(*flow).then(|| Tensor::zeros([n, 2, h, w]));
                let one = T::one();
                for i in 0..n {
                    for y in 0..h {
                        for x in 0..w {
                            let Some((b, _)) = bilinear_coords(x, y, fl.at(i, 0, y, x), fl.at(i, 1, y, x), h, w) else {
                                continue;
                            };
                            let (fx, fy) = (b.fx, b.fy);
                            let mut dfx = T::zero();
                            let mut dfy = T::zero();
                            for ch in 0..c {
                                let go = g.at(i, ch, y, x);
                                if go == T::zero() {
                                    continue;
                                }
                                let src = &img.sample(i)[ch * plane..(ch + 1) * plane];
                                let v00 = fetch(src, h, w, b.y0, b.x0);
                                let v01 = fetch(src, h, w, b.y0, b.x0 + 1);
                                let v10 = fetch(src, h, w, b.y0 + 1, b.x0);
                                let v11 = fetch(src, h, w, b.y0 + 1, b.x0 + 1);
                                dfx += go * ((one - fy) * (v01 - v00) + fy * (v11 - v10));
                                dfy += go * ((one - fx) * (v10 - v00) + fx * (v11 - v01));
                                if let Some(gi) = gi.as_mut() {
                                    let dst = &mut gi.sample_mut(i)[ch * plane..(ch + 1) * plane];
                                    let corners = [
                                        (b.y0, b.x0, (one - fy) * (one - fx)),
                                        (b.y0, b.x0 + 1, (one - fy) * fx),
                                        (b.y0 + 1, b.x0, fy * (one - fx)),
                                        (b.y0 + 1, b.x0 + 1, fy * fx),
                                    ];
                                    for (yy, xx, wt) in corners {
                                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                                            dst[yy as usize * w + xx as usize] += go * wt;
                                        }
                                    }
                                }
                            }
                            if let Some(gf) = gf.as_mut() {
                                // sample point = p - flow
                                gf.set(i, 0, y, x, -dfx);
                                gf.set(i, 1, y, x, -dfy);
                            }
                        }
                    }
                }
                if let Some(gi) = gi {
                    accumulate(grads, *image, gi);
                }
                if let Some(gf) = gf {
                    accumulate(grads, *flow, gf);
                }
            }
            Op::DiffX(x) => {
                let shape = self.shape(*x);
                let [n, c, h, w] = g.shape();
                let mut gx = Tensor::zeros(shape);
                for i in 0..n {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                let gv = g.at(i, ch, y, xx);
                                let o1 = gx.offset(i, ch, y, xx + 1);
                                let o0 = gx.offset(i, ch, y, xx);
                                gx.data_mut()[o1] += gv;
                                gx.data_mut()[o0] -= gv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::DiffY(x) => {
                let shape = self.shape(*x);
                let [n, c, h, w] = g.shape();
                let mut gx = Tensor::zeros(shape);
                for i in 0..n {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                let gv = g.at(i, ch, y, xx);
                                let o1 = gx.offset(i, ch, y + 1, xx);
                                let o0 = gx.offset(i, ch, y, xx);
                                gx.data_mut()[o1] += gv;
                                gx.data_mut()[o0] -= gv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let shape = self.shape(*x);
                let scale = g.item() / T::of(crate::tensor::numel(shape) as f64);
                accumulate(grads, *x, Tensor::full(shape, scale));
            }
            Op::MaskedMean { x, mask, count } => {
                if *count > T::zero() {
                    let scale = g.item() / *count;
                    accumulate(grads, *x, mask.map(|m| if m != T::zero() { scale } else { T::zero() }));
                }
            }
            Op::SpectralScale { w, u, v, sigma } => {
                let ws = self.shape(*w);
                let cols = ws[1] * ws[2] * ws[3];
                let wv = self.value(*w);
                let inner: T = g.data().iter().zip(wv.data()).map(|(&a, &b)| a * b).sum();
                let coef = inner / (*sigma * *sigma);
                let mut gw = g.map(|x| x / *sigma);
                for (r, &ur) in u.iter().enumerate() {
                    let row = &mut gw.data_mut()[r * cols..(r + 1) * cols];
                    for (dst, &vc) in row.iter_mut().zip(v) {
                        *dst -= coef * ur * vc;
                    }
                }
                accumulate(grads, *w, gw);
            }
        }
    }
}
