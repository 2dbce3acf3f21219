//! Dense U-net: an encoder/decoder whose convolution stacks are densely
//! connected blocks, joined by skip connections at matching resolutions.
//!
//! Layout for `n_stages = S`:
//!
//! ```text
//! stem 3×3 ─ [dense block ─ down]×S ─ dense block ─ [up ─ concat skip ─ dense block]×S ─ 1×1 ─ sigmoid
//! ```
//!
//! A dense block runs `convs_per_block` 3×3 conv+ReLU layers; each consumes
//! the concatenation of the block input and every earlier layer output, and
//! the block returns that full concatenation (`C + convs·growth` channels).
//! Transitions down are a 1×1 conv to `⌈θ·C⌉` channels followed by 2×2 average
//! pooling; transitions up are nearest ×2 upsampling with a 1×1 conv to
//! `⌈θ·C⌉` channels, concatenated with the encoder skip.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Number of output channels: one sigmoid map each for PG, CZ and PZ.
pub const OUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub n_stages: usize,
    pub convs_per_block: usize,
    pub kernel: usize,
    pub growth: usize,
    pub stem_channels: usize,
    pub compression: f64,
}

impl ArchConfig {
    /// Desk-scale default: stem 16, growth 8, three stages.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels: OUT_CHANNELS,
            n_stages: 3,
            convs_per_block: 4,
            kernel: 3,
            growth: 8,
            stem_channels: 16,
            compression: 0.5,
        }
    }

    /// Full-size preset: stem 32, growth 16, four stages.
    pub fn paper_scale(in_channels: usize) -> Self {
        Self {
            n_stages: 4,
            growth: 16,
            stem_channels: 32,
            ..Self::desk(in_channels)
        }
    }

    /// Small preset for quick experiments and gradient checks.
    pub fn tiny(in_channels: usize) -> Self {
        Self {
            n_stages: 2,
            growth: 2,
            stem_channels: 4,
            ..Self::desk(in_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=6).contains(&self.in_channels) {
            return bad(format!("in_channels must be 1..=6, got {}", self.in_channels));
        }
        if self.out_channels != OUT_CHANNELS {
            return bad(format!(
                "out_channels must be {OUT_CHANNELS}, got {}",
                self.out_channels
            ));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.convs_per_block == 0 || self.growth == 0 || self.stem_channels == 0 {
            return bad("block sizes must be positive".into());
        }
        if self.n_stages > 8 {
            return bad(format!("n_stages {} is unreasonably deep", self.n_stages));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression must lie in (0, 1], got {}", self.compression));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.n_stages
    }

    pub fn compress(&self, channels: usize) -> usize {
        ((self.compression * channels as f64).ceil() as usize).max(1)
    }

    pub fn block_out(&self, channels: usize) -> usize {
        channels + self.convs_per_block * self.growth
    }

    /// Closed-form channel bookkeeping of every stage.
    pub fn plan(&self) -> ChannelPlan {
        let mut c = self.stem_channels;
        let mut encoder = Vec::with_capacity(self.n_stages);
        for _ in 0..self.n_stages {
            let out = self.block_out(c);
            let down = self.compress(out);
            encoder.push(EncoderStage {
                block_in: c,
                block_out: out,
                down_out: down,
            });
            c = down;
        }
        let bottleneck = (c, self.block_out(c));
        c = bottleneck.1;
        let mut decoder = Vec::with_capacity(self.n_stages);
        for stage in encoder.iter().rev() {
            let up_out = self.compress(c);
            let block_in = up_out + stage.block_out;
            let block_out = self.block_out(block_in);
            decoder.push(DecoderStage {
                up_in: c,
                up_out,
                skip: stage.block_out,
                block_in,
                block_out,
            });
            c = block_out;
        }
        ChannelPlan {
            stem: (self.in_channels, self.stem_channels),
            encoder,
            bottleneck,
            decoder,
            head: (c, self.out_channels),
        }
    }

    /// Shapes `(cout, cin, k)` of every convolution in parameter order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let plan = self.plan();
        let k = self.kernel;
        let mut shapes = vec![(plan.stem.1, plan.stem.0, k)];
        let block = |shapes: &mut Vec<_>, cin: usize| {
            for j in 0..self.convs_per_block {
                shapes.push((self.growth, cin + j * self.growth, k));
            }
        };
        for s in &plan.encoder {
            block(&mut shapes, s.block_in);
            shapes.push((s.down_out, s.block_out, 1));
        }
        block(&mut shapes, plan.bottleneck.0);
        for s in &plan.decoder {
            shapes.push((s.up_out, s.up_in, 1));
            block(&mut shapes, s.block_in);
        }
        shapes.push((plan.head.1, plan.head.0, 1));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.conv_shapes().iter().map(|&(o, i, k)| o * i * k * k + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderStage {
    pub block_in: usize,
    pub block_out: usize,
    pub down_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderStage {
    pub up_in: usize,
    pub up_out: usize,
    pub skip: usize,
    pub block_in: usize,
    pub block_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPlan {
    pub stem: (usize, usize),
    pub encoder: Vec<EncoderStage>,
    pub bottleneck: (usize, usize),
    pub decoder: Vec<DecoderStage>,
    pub head: (usize, usize),
}

/// Kernel `(cout, cin, k, k)` and bias `(1, cout, 1, 1)` of one convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// All weights of a Dense U-net, in the order given by
/// [`ArchConfig::conv_shapes`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    arch: ArchConfig,
    convs: Vec<ConvParams<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let convs = arch
            .conv_shapes()
            .into_iter()
            .map(|(o, i, k)| ConvParams {
                w: Tensor::zeros([o, i, k, k]),
                b: Tensor::zeros([1, o, 1, 1]),
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            convs,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn convs(&self) -> &[ConvParams<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.convs
    }

    pub fn num_params(&self) -> usize {
        self.convs.iter().map(|c| c.w.len() + c.b.len()).sum()
    }

    /// Every parameter tensor in order (kernel then bias per convolution).
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.convs.iter().flat_map(|c| [&c.w, &c.b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.convs.iter_mut().flat_map(|c| [&mut c.w, &mut c.b])
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    w: c.w.cast(),
                    b: c.b.cast(),
                })
                .collect(),
        }
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let m = self.arch.spatial_multiple();
        if c != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {c}",
                self.arch.in_channels
            )));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "spatial dims {h}x{w} must be positive multiples of {m}"
            )));
        }
        Ok(())
    }
}

/// He-normal initialisation: kernels ~ N(0, 2/fan_in), biases zero.
pub fn init_params(arch: &ArchConfig, rng: &mut RngState) -> Result<NetworkParams<f32>> {
    let mut net = NetworkParams::<f32>::zeros(arch)?;
    for conv in net.convs_mut() {
        let [_, cin, k, _] = conv.w.shape();
        let sd = (2.0 / (cin * k * k) as f64).sqrt();
        for v in conv.w.data_mut() {
            *v = (rng.normal() * sd) as f32;
        }
    }
    Ok(net)
}

/// Tape handles of one convolution's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

fn conv(tape: &mut Tape<impl Real>, x: Var, p: ConvVars) -> Result<Var> {
    let k = tape.value(p.w).shape()[2];
    tape.conv2d(x, p.w, p.b, k / 2)
}

/// Densely connected block; returns the concatenation of `x` and every layer output.
pub fn dense_block<T: Real>(tape: &mut Tape<T>, x: Var, layers: &[ConvVars]) -> Result<Var> {
    let mut features = vec![x];
    for &p in layers {
        let input = if features.len() == 1 {
            x
        } else {
            tape.concat(&features)?
        };
        let y = conv(tape, input, p)?;
        features.push(tape.relu(y));
    }
    if features.len() == 1 {
        Ok(x)
    } else {
        tape.concat(&features)
    }
}

/// 1×1 compression followed by 2×2 average pooling.
pub fn transition_down<T: Real>(tape: &mut Tape<T>, x: Var, p: ConvVars) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("transition down needs even dims, got {h}x{w}")));
    }
    let y = conv(tape, x, p)?;
    tape.avg_pool2(y)
}

/// Nearest ×2 upsampling and 1×1 conv, concatenated with `skip`.
///
/// The pointwise conv runs before the upsampling; the two commute exactly
/// and this order does a quarter of the arithmetic.
pub fn transition_up<T: Real>(tape: &mut Tape<T>, x: Var, skip: Var, p: ConvVars) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).shape();
    let [_, _, sh, sw] = tape.value(skip).shape();
    if sh != 2 * h || sw != 2 * w {
        return Err(Error::Shape(format!("skip {sh}x{sw} is not twice the input {h}x{w}")));
    }
    let y = conv(tape, x, p)?;
    let up = tape.upsample2(y);
    tape.concat(&[up, skip])
}

/// Registers the parameters on `tape` as trainable leaves.
pub fn register_params<T: Real>(tape: &mut Tape<T>, net: &NetworkParams<T>) -> Vec<ConvVars> {
    net.convs()
        .iter()
        .map(|c| ConvVars {
            w: tape.param(c.w.clone()),
            b: tape.param(c.b.clone()),
        })
        .collect()
}

/// Builds the network graph and returns the pre-sigmoid logits.
pub fn build_logits<T: Real>(tape: &mut Tape<T>, net: &NetworkParams<T>, vars: &[ConvVars], x: Var) -> Result<Var> {
    net.check_input(tape.value(x))?;
    let arch = net.arch();
    let n = arch.convs_per_block;
    let mut it = vars.iter().copied();
    let mut take = |count: usize| -> Vec<ConvVars> { it.by_ref().take(count).collect() };

    let stem = take(1)[0];
    let y = conv(tape, x, stem)?;
    let mut h = tape.relu(y);
    let mut skips = Vec::with_capacity(arch.n_stages);
    for _ in 0..arch.n_stages {
        let block = take(n);
        h = dense_block(tape, h, &block)?;
        skips.push(h);
        let down = take(1)[0];
        h = transition_down(tape, h, down)?;
    }
    let block = take(n);
    h = dense_block(tape, h, &block)?;
    for skip in skips.into_iter().rev() {
        let up = take(1)[0];
        h = transition_up(tape, h, skip, up)?;
        let block = take(n);
        h = dense_block(tape, h, &block)?;
    }
    let head = take(1)[0];
    conv(tape, h, head)
}

/// Per-pixel sigmoid probabilities `(batch, 3, H, W)` for PG, CZ and PZ.
pub fn forward<T: Real>(net: &NetworkParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = net
        .convs()
        .iter()
        .map(|c| ConvVars {
            w: tape.constant(c.w.clone()),
            b: tape.constant(c.b.clone()),
        })
        .collect::<Vec<_>>();
    let logits = build_logits(&mut tape, net, &vars, xv)?;
    Ok(tape.value(logits).map(super::tape::sigmoid))
}

/// Runs the network on `x`, lets `head` turn the logits into a scalar loss
/// and its cotangent, and back-propagates to every parameter.
pub fn value_and_grad<T: Real>(
    net: &NetworkParams<T>,
    x: &Tensor<T>,
    head: impl FnOnce(&Tensor<T>) -> Result<(f64, Tensor<T>)>,
) -> Result<(f64, NetworkParams<T>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = register_params(&mut tape, net);
    let logits = build_logits(&mut tape, net, &vars, xv)?;
    let (loss, seed) = head(tape.value(logits))?;
    let mut grads = tape.backward(logits, seed)?;
    let mut out = NetworkParams::zeros(net.arch())?;
    for (slot, v) in out.convs_mut().iter_mut().zip(&vars) {
        if let Some(g) = grads.take(v.w) {
            slot.w = g;
        }
        if let Some(g) = grads.take(v.b) {
            slot.b = g;
        }
    }
    Ok((loss, out))
}
