//! The four networks: generator, discriminator, flow and reconstruction.
//!
//! The generator, flow and reconstruction networks share one U-Net layout:
//!
//! ```text
//! head     conv3x3 s1  in -> c0                    (+BN, ReLU)
//! down i   conv3x3 s2  c(i-1) -> c(i), c(i)=c0*2^i  (+BN, ReLU)   i = 1..L
//! res      x + BN(conv(ReLU(BN(conv(x)))))        then ReLU, at c(L)
//! up i     upsample x2, concat skip c(i-1), conv3x3 -> c(i-1) (+BN, ReLU)
//! out      conv1x1 c0 -> out                       (ReLU for the generator)
//! ```
//!
//! Spectral normalization, when enabled, wraps the head and downsampling
//! convolutions. The discriminator is a PatchGAN: `num_layers` 4x4 stride-2
//! convolutions with leaky ReLU between them and no normalization.

pub mod checkpoint;
pub mod spectral;

use eventgan_grad::{Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::EventVolume;
use crate::frame::Frame;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const LEAKY_SLOPE: f64 = 0.2;
/// Power iterations run when a network is created, so the first forward
/// already divides by a good estimate.
const SPECTRAL_WARMUP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics and power iterations advance.
    Train,
    /// Running statistics; nothing is updated.
    Eval,
    /// Batch statistics without updating any state.
    BatchStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub num_encoder_levels: usize,
    pub num_residual_blocks: usize,
    pub num_bins: usize,
    pub use_spectral_norm_encoder: bool,
    pub use_batch_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            num_encoder_levels: 4,
            num_residual_blocks: 2,
            num_bins: 9,
            use_spectral_norm_encoder: true,
            use_batch_norm: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub num_layers: usize,
    pub base_channels: usize,
    pub num_bins: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { num_layers: 4, base_channels: 64, num_bins: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowNetConfig {
    pub base_channels: usize,
    pub num_encoder_levels: usize,
    pub num_residual_blocks: usize,
    pub num_bins: usize,
    pub use_batch_norm: bool,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        Self { base_channels: 32, num_encoder_levels: 4, num_residual_blocks: 2, num_bins: 9, use_batch_norm: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconNetConfig {
    pub base_channels: usize,
    pub num_encoder_levels: usize,
    pub num_residual_blocks: usize,
    pub use_batch_norm: bool,
}

impl Default for ReconNetConfig {
    fn default() -> Self {
        Self { base_channels: 32, num_encoder_levels: 4, num_residual_blocks: 2, use_batch_norm: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetConfig {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
    Flow(FlowNetConfig),
    Recon(ReconNetConfig),
}

impl NetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            NetConfig::Generator(_) => "generator",
            NetConfig::Discriminator(_) => "discriminator",
            NetConfig::Flow(_) => "flow",
            NetConfig::Recon(_) => "recon",
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            NetConfig::Generator(_) => 2,
            NetConfig::Discriminator(c) => 2 * c.num_bins + 2,
            NetConfig::Flow(c) => 2 * c.num_bins,
            NetConfig::Recon(_) => 2,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            NetConfig::Generator(c) => 2 * c.num_bins,
            NetConfig::Discriminator(_) => 1,
            NetConfig::Flow(_) => 2,
            NetConfig::Recon(_) => 1,
        }
    }

    /// Spatial dimensions must be multiples of this.
    pub fn divisor(&self) -> usize {
        match self {
            NetConfig::Discriminator(c) => 1 << c.num_layers,
            _ => 1 << self.unet().map_or(0, |u| u.levels),
        }
    }

    fn unet(&self) -> Option<UNetSpec> {
        let (base, levels, res, sn, bn, relu) = match self {
            NetConfig::Generator(c) => (
                c.base_channels,
                c.num_encoder_levels,
                c.num_residual_blocks,
                c.use_spectral_norm_encoder,
                c.use_batch_norm,
                true,
            ),
            NetConfig::Flow(c) => (c.base_channels, c.num_encoder_levels, c.num_residual_blocks, false, c.use_batch_norm, false),
            NetConfig::Recon(c) => (c.base_channels, c.num_encoder_levels, c.num_residual_blocks, false, c.use_batch_norm, false),
            NetConfig::Discriminator(_) => return None,
        };
        Some(UNetSpec {
            in_channels: self.in_channels(),
            out_channels: self.out_channels(),
            base,
            levels,
            res,
            spectral: sn,
            batch_norm: bn,
            relu_out: relu,
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("{} config: {m}", self.name())));
        match self {
            NetConfig::Discriminator(c) => {
                if c.num_layers < 2 || c.base_channels == 0 || c.num_bins == 0 {
                    return bad("need num_layers >= 2, base_channels >= 1 and num_bins >= 1".into());
                }
            }
            _ => {
                let u = self.unet().unwrap();
                if u.base == 0 || u.levels == 0 || u.levels > 8 {
                    return bad("need base_channels >= 1 and 1 <= num_encoder_levels <= 8".into());
                }
                if self.in_channels() == 0 || self.out_channels() == 0 {
                    return bad("num_bins must be >= 1".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct UNetSpec {
    in_channels: usize,
    out_channels: usize,
    base: usize,
    levels: usize,
    res: usize,
    spectral: bool,
    batch_norm: bool,
    relu_out: bool,
}

/// Named tensors, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

#[derive(Clone, Debug)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
    /// Buffer indices of the power-iteration vectors `u`, `v`.
    spectral: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv: Conv,
    norm: Option<Norm>,
}

#[derive(Clone, Debug)]
struct UNetLayers {
    head: Block,
    down: Vec<Block>,
    res: Vec<(Block, Block)>,
    up: Vec<Block>,
    out: Conv,
    relu_out: bool,
}

#[derive(Clone, Debug)]
enum Layers {
    UNet(UNetLayers),
    Discriminator(Vec<Conv>),
}

struct Builder<T> {
    params: ParamSet<T>,
    buffers: ParamSet<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool, spectral: bool) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn([cout, cin, k, k], |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * std)
        });
        let spectral = spectral.then(|| {
            let seed = self.params.len() as u64 * 7919 + 17;
            let mut u: Vec<T> = spectral::init_vector(cout, seed);
            let mut v = vec![T::zero(); cin * k * k];
            for _ in 0..SPECTRAL_WARMUP {
                spectral::power_iteration_step(w.data(), cout, cin * k * k, &mut u, &mut v);
            }
            let ui = self.buffers.push(format!("{name}.sn_u"), Tensor::from_vec([1, 1, 1, cout], u));
            let vi = self.buffers.push(format!("{name}.sn_v"), Tensor::from_vec([1, 1, 1, cin * k * k], v));
            (ui, vi)
        });
        let weight = self.params.push(format!("{name}.weight"), w);
        let bias = bias.then(|| self.params.push(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1])));
        Conv { weight, bias, stride, pad, spectral }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.params.push(format!("{name}.gamma"), Tensor::full([1, c, 1, 1], T::one())),
            beta: self.params.push(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1])),
            running_mean: self.buffers.push(format!("{name}.running_mean"), Tensor::zeros([1, c, 1, 1])),
            running_var: self.buffers.push(format!("{name}.running_var"), Tensor::full([1, c, 1, 1], T::one())),
        }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, stride: usize, spec: &UNetSpec, spectral: bool) -> Block {
        let conv = self.conv(&format!("{name}.conv"), cin, cout, 3, stride, 1, !spec.batch_norm, spectral);
        let norm = spec.batch_norm.then(|| self.norm(&format!("{name}.bn"), cout));
        Block { conv, norm }
    }
}

fn build<T: Real>(config: &NetConfig, seed: u64) -> (ParamSet<T>, ParamSet<T>, Layers) {
    let mut b = Builder { params: ParamSet::new(), buffers: ParamSet::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let layers = match (config, config.unet()) {
        (NetConfig::Discriminator(c), _) => {
            let mut convs = Vec::new();
            let mut cin = config.in_channels();
            for i in 0..c.num_layers {
                let cout = if i + 1 == c.num_layers { 1 } else { c.base_channels << i };
                convs.push(b.conv(&format!("layer{i}"), cin, cout, 4, 2, 1, true, false));
                cin = cout;
            }
            Layers::Discriminator(convs)
        }
        (_, Some(spec)) => {
            let ch = |i: usize| spec.base << i;
            let head = b.block("head", spec.in_channels, ch(0), 1, &spec, spec.spectral);
            let down = (1..=spec.levels).map(|i| b.block(&format!("down{i}"), ch(i - 1), ch(i), 2, &spec, spec.spectral)).collect();
            let res = (0..spec.res)
                .map(|r| {
                    let a = b.block(&format!("res{r}.a"), ch(spec.levels), ch(spec.levels), 1, &spec, false);
                    let c = b.block(&format!("res{r}.b"), ch(spec.levels), ch(spec.levels), 1, &spec, false);
                    (a, c)
                })
                .collect();
            let up = (1..=spec.levels)
                .rev()
                .map(|i| b.block(&format!("up{i}"), ch(i) + ch(i - 1), ch(i - 1), 1, &spec, false))
                .collect();
            let out = b.conv("out", ch(0), spec.out_channels, 1, 1, 0, true, false);
            Layers::UNet(UNetLayers { head, down, res, up, out, relu_out: spec.relu_out })
        }
        _ => unreachable!("every non-discriminator config is a U-Net"),
    };
    (b.params, b.buffers, layers)
}

/// Output of [`Net::forward`]: the result node and the graph nodes the
/// parameters were bound to, in [`ParamSet`] order.
pub struct Forward {
    pub out: Var,
    pub params: Vec<Var>,
}

/// A network: configuration, parameters and non-trainable state.
#[derive(Clone, Debug)]
pub struct Net<T> {
    config: NetConfig,
    params: ParamSet<T>,
    buffers: ParamSet<T>,
    layers: Layers,
    frozen: bool,
}

impl<T: Real> Net<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, buffers, layers) = build(&config, seed);
        Ok(Self { config, params, buffers, layers, frozen: false })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.buffers
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the parameters as fixed; training refuses to update them.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Checks an input `[N, C, H, W]` against the configuration.
    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.config.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "{} expects {} input channels, got {c}",
                self.config.name(),
                self.config.in_channels()
            )));
        }
        let d = self.config.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::IndivisibleInput {
                height: h,
                width: w,
                divisor: d,
                padded_height: h.div_ceil(d).max(1) * d,
                padded_width: w.div_ceil(d).max(1) * d,
            });
        }
        Ok(())
    }

    /// Runs the network on `x`. Parameters become trainable leaves when
    /// `trainable`, otherwise constants (gradients still reach `x`).
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, trainable: bool) -> Result<Forward> {
        self.check_input(g.shape(x))?;
        let params: Vec<Var> = self
            .params
            .tensors()
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let mut cx = Ctx { g, vars: &params, buffers: &mut self.buffers, mode };
        let out = match &self.layers {
            Layers::UNet(l) => cx.unet(l, x),
            Layers::Discriminator(convs) => cx.discriminator(convs, x),
        };
        Ok(Forward { out, params })
    }

    /// Inference without gradients.
    pub fn infer(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let f = self.forward(&mut g, xv, mode, false)?;
        Ok(g.value(f.out).clone())
    }

    /// Largest singular value of each spectrally normalized weight after
    /// normalization, estimated with `iterations` fresh power iterations.
    pub fn normalized_spectral_norms(&self, iterations: usize) -> Vec<f64> {
        let convs: Vec<&Conv> = match &self.layers {
            Layers::UNet(l) => std::iter::once(&l.head).chain(&l.down).map(|b| &b.conv).collect(),
            Layers::Discriminator(c) => c.iter().collect(),
        };
        convs
            .into_iter()
            .filter_map(|c| {
                let (ui, vi) = c.spectral?;
                let w = self.params.get(c.weight);
                let [o, i, k, _] = w.shape();
                let cols = i * k * k;
                let (u, v) = (self.buffers.get(ui).data(), self.buffers.get(vi).data());
                let sigma: T = w.data().chunks(cols).zip(u).map(|(row, &ur)| ur * row.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>()).sum();
                let scaled: Vec<T> = w.data().iter().map(|&x| x / sigma).collect();
                Some(spectral::estimate_sigma(&scaled, o, cols, iterations, 3).as_f64())
            })
            .collect()
    }
}

struct Ctx<'a, T> {
    g: &'a mut Graph<T>,
    vars: &'a [Var],
    buffers: &'a mut ParamSet<T>,
    mode: Mode,
}

impl<T: Real> Ctx<'_, T> {
    fn conv(&mut self, c: &Conv, x: Var) -> Var {
        let mut w = self.vars[c.weight];
        if let Some((ui, vi)) = c.spectral {
            if self.mode == Mode::Train {
                let [o, i, k, _] = self.g.shape(w);
                let mut u = self.buffers.tensors[ui].data().to_vec();
                let mut v = self.buffers.tensors[vi].data().to_vec();
                spectral::power_iteration_step(self.g.value(w).data(), o, i * k * k, &mut u, &mut v);
                self.buffers.tensors[ui].data_mut().copy_from_slice(&u);
                self.buffers.tensors[vi].data_mut().copy_from_slice(&v);
            }
            let (u, v) = (self.buffers.tensors[ui].data().to_vec(), self.buffers.tensors[vi].data().to_vec());
            w = self.g.spectral_scale(w, &u, &v);
        }
        let y = self.g.conv2d(x, w, c.stride, c.pad);
        match c.bias {
            Some(b) => self.g.add_bias(y, self.vars[b]),
            None => y,
        }
    }

    fn norm(&mut self, n: &Norm, x: Var) -> Var {
        let xhat = if self.mode == Mode::Eval {
            let mean = self.buffers.get(n.running_mean);
            let var = self.buffers.get(n.running_var);
            let eps = T::of(BN_EPS);
            let scale = var.map(|v| T::one() / (v + eps).sqrt());
            let shift = mean.zip_map(&scale, |m, s| -m * s);
            let sv = self.g.constant(scale);
            let bv = self.g.constant(shift);
            let y = self.g.mul_channel(x, sv);
            self.g.add_bias(y, bv)
        } else {
            let [nb, _, h, w] = self.g.shape(x);
            let (y, stats) = self.g.batch_norm(x, T::of(BN_EPS));
            if self.mode == Mode::Train {
                let count = (nb * h * w) as f64;
                let unbias = T::of(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                let m = T::of(BN_MOMENTUM);
                let keep = T::one() - m;
                for (r, s) in self.buffers.tensors[n.running_mean].data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + m * *s;
                }
                for (r, s) in self.buffers.tensors[n.running_var].data_mut().iter_mut().zip(&stats.var) {
                    *r = keep * *r + m * *s * unbias;
                }
            }
            y
        };
        let y = self.g.mul_channel(xhat, self.vars[n.gamma]);
        self.g.add_bias(y, self.vars[n.beta])
    }

    fn block(&mut self, b: &Block, x: Var, relu: bool) -> Var {
        let mut y = self.conv(&b.conv, x);
        if let Some(n) = &b.norm {
            y = self.norm(n, y);
        }
        if relu {
            self.g.relu(y)
        } else {
            y
        }
    }

    fn unet(&mut self, l: &UNetLayers, x: Var) -> Var {
        let mut skips = vec![self.block(&l.head, x, true)];
        for b in &l.down {
            let y = self.block(b, *skips.last().unwrap(), true);
            skips.push(y);
        }
        let mut y = skips.pop().unwrap();
        for (a, b) in &l.res {
            let h = self.block(a, y, true);
            let h = self.block(b, h, false);
            let s = self.g.add(y, h);
            y = self.g.relu(s);
        }
        for b in &l.up {
            let skip = skips.pop().unwrap();
            let upsampled = self.g.upsample2x(y);
            let cat = self.g.concat_channels(&[upsampled, skip]);
            y = self.block(b, cat, true);
        }
        let out = self.conv(&l.out, y);
        if l.relu_out {
            self.g.relu(out)
        } else {
            out
        }
    }

    fn discriminator(&mut self, convs: &[Conv], x: Var) -> Var {
        let mut y = x;
        for (i, c) in convs.iter().enumerate() {
            y = self.conv(c, y);
            if i + 1 < convs.len() {
                y = self.g.leaky_relu(y, T::of(LEAKY_SLOPE));
            }
        }
        y
    }
}

fn expect_kind<T>(net: &Net<T>, kind: &'static str) -> Result<()> {
    if net.config.name() != kind {
        return Err(Error::InvalidArgument(format!("expected a {kind} network, got {}", net.config.name())));
    }
    Ok(())
}

fn image_pair(i0: &Frame, i1: &Frame) -> Result<Tensor<f32>> {
    if !i0.same_shape(i1) {
        return Err(Error::ShapeMismatch(format!(
            "images are {}x{} and {}x{}",
            i0.width(),
            i0.height(),
            i1.width(),
            i1.height()
        )));
    }
    Ok(Tensor::concat_channels(&[&i0.to_tensor(), &i1.to_tensor()]))
}

/// Generated (unnormalized) event volume for one image pair, in inference mode.
pub fn generator_forward(net: &mut Net<f32>, i0: &Frame, i1: &Frame) -> Result<EventVolume> {
    expect_kind(net, "generator")?;
    let out = net.infer(image_pair(i0, i1)?, Mode::Eval)?;
    EventVolume::from_tensor(&out, false)
}

/// Patch score map `[1, 1, H / 2^L, W / 2^L]`.
pub fn discriminator_forward(net: &mut Net<f32>, volume: &EventVolume, i0: &Frame, i1: &Frame) -> Result<Tensor<f32>> {
    expect_kind(net, "discriminator")?;
    if volume.width() != i0.width() || volume.height() != i0.height() {
        return Err(Error::ShapeMismatch("volume and images are not aligned".into()));
    }
    let x = Tensor::concat_channels(&[&volume.to_tensor(), &image_pair(i0, i1)?]);
    net.infer(x, Mode::Eval)
}

/// Per-pixel flow `[1, 2, H, W]` (channel 0 = x displacement in pixels).
pub fn flow_net_forward(net: &mut Net<f32>, volume: &EventVolume) -> Result<Tensor<f32>> {
    expect_kind(net, "flow")?;
    net.infer(volume.to_tensor(), Mode::Eval)
}

/// Predicted next image from the previous one and the time-collapsed events.
pub fn recon_net_forward(net: &mut Net<f32>, i0: &Frame, collapsed: &Frame) -> Result<Frame> {
    expect_kind(net, "recon")?;
    let out = net.infer(image_pair(i0, collapsed)?, Mode::Eval)?;
    Frame::from_vec(i0.width(), i0.height(), out.into_data())
}
