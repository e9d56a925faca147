//! Multi-stream convolutional networks, the recurrent layer and temporal
//! pooling, assembled into the shared-weight pair model.
//!
//! A frame `[H, W, input_channels]` goes through four convolution blocks
//! (`Conv1`..`Conv4`). Each block is a same-padded convolution followed by
//! `tanh`; blocks 1-3 then halve the spatial extent with the stream's
//! downsampler (a strided-convolution stream instead runs its convolution at
//! stride 2). Streams run independently up to the fusion layer, their maps
//! are fused, and the remaining blocks form a single shared trunk. A 1x1
//! convolution to `embedding_dim` and a global spatial average give the
//! frame embedding; there is no fully connected layer.

mod params;
mod temporal;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use params::ParamStore;
pub use temporal::{RnnVars, TemporalPool};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::layers::{ConvGeometry, PoolKind, PoolParams};
use crate::tensor::Tensor;

/// Number of convolution blocks.
pub const NUM_BLOCKS: usize = 4;
/// Blocks `1..=DOWNSAMPLING_BLOCKS` halve the spatial extent.
pub const DOWNSAMPLING_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Downsampler {
    MaxPool,
    AvgPool,
    StridedConv,
    DilatedMax,
    DilatedAvg,
}

impl Downsampler {
    pub const ALL: [Downsampler; 5] = [
        Self::MaxPool,
        Self::AvgPool,
        Self::StridedConv,
        Self::DilatedMax,
        Self::DilatedAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MaxPool => "max_pool",
            Self::AvgPool => "avg_pool",
            Self::StridedConv => "strided_conv",
            Self::DilatedMax => "dilated_max",
            Self::DilatedAvg => "dilated_avg",
        }
    }

    /// Label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::MaxPool => "MaxPool",
            Self::AvgPool => "AverPool",
            Self::StridedConv => "2 stride",
            Self::DilatedMax => "DilatedMax",
            Self::DilatedAvg => "DilatedAver",
        }
    }

    /// Window 2, stride 2; the dilated kinds use dilation 2. Padded so the
    /// output is `ceil(extent / 2)` like the strided convolution.
    pub fn pool_params(self, h: usize, w: usize) -> Option<PoolParams> {
        let (kind, dilation) = match self {
            Self::MaxPool => (PoolKind::Max, 1),
            Self::AvgPool => (PoolKind::Average, 1),
            Self::DilatedMax => (PoolKind::DilatedMax, 2),
            Self::DilatedAvg => (PoolKind::DilatedAverage, 2),
            Self::StridedConv => return None,
        };
        let p = PoolParams::new(kind, 2, 2, dilation).expect("static pooling parameters");
        Some(p.covering(h, w))
    }
}

impl fmt::Display for Downsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Downsampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown downsampler `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub downsampler: Downsampler,
    /// Input is first average-pooled by this factor (multi-scale streams).
    pub scale: usize,
    /// `(block, downsampler)` replacements for individual blocks.
    pub overrides: Vec<(usize, Downsampler)>,
}

impl StreamSpec {
    pub fn new(downsampler: Downsampler) -> Self {
        Self {
            downsampler,
            scale: 1,
            overrides: Vec::new(),
        }
    }

    pub fn scaled(downsampler: Downsampler, scale: usize) -> Self {
        Self {
            scale,
            ..Self::new(downsampler)
        }
    }

    pub fn downsampler_at(&self, block: usize) -> Downsampler {
        self.overrides
            .iter()
            .rev()
            .find(|(b, _)| *b == block)
            .map_or(self.downsampler, |(_, d)| *d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Streams fused once at `fusion_layer`.
    Baseline,
    /// Two streams at scales 1 and 2, fused after every block up to
    /// `fusion_layer`; the fused maps form a ladder down the shared trunk.
    TwoStreamMultiscale,
    /// Streams at scales 1, 2 and 4, upsampled to a common extent and fused
    /// once at `fusion_layer`.
    ThreeStreamMultiscale,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::TwoStreamMultiscale => "two_stream_multiscale",
            Self::ThreeStreamMultiscale => "three_stream_multiscale",
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Baseline, Self::TwoStreamMultiscale, Self::ThreeStreamMultiscale]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub streams: Vec<StreamSpec>,
    pub fusion_kind: FusionKind,
    /// 1-based block index (`Conv1`..`Conv4`).
    pub fusion_layer: usize,
    /// Output channels of `Conv1`..`Conv4`.
    pub channels: [usize; NUM_BLOCKS],
    /// Square kernel size of the block convolutions (odd).
    pub kernel: usize,
    pub embedding_dim: usize,
    pub rnn_hidden: usize,
    pub temporal_pool: TemporalPool,
    pub input_channels: usize,
    /// `(height, width)` used to validate the wiring at build time.
    pub input_extent: (usize, usize),
    /// Downsampler of shared blocks after the fusion point.
    pub trunk_downsampler: Downsampler,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl NetworkConfig {
    /// Max-pool, average-pool and strided-convolution streams, width fusion
    /// at `Conv3`.
    pub fn baseline() -> Self {
        Self {
            architecture: Architecture::Baseline,
            streams: vec![
                StreamSpec::new(Downsampler::MaxPool),
                StreamSpec::new(Downsampler::AvgPool),
                StreamSpec::new(Downsampler::StridedConv),
            ],
            fusion_kind: FusionKind::Width,
            fusion_layer: 3,
            channels: [16, 32, 32, 64],
            kernel: 5,
            embedding_dim: 128,
            rnn_hidden: 128,
            temporal_pool: TemporalPool::Mean,
            input_channels: 5,
            input_extent: (32, 32),
            trunk_downsampler: Downsampler::MaxPool,
        }
    }

    pub fn two_stream_multiscale() -> Self {
        Self {
            architecture: Architecture::TwoStreamMultiscale,
            streams: vec![
                StreamSpec::scaled(Downsampler::MaxPool, 1),
                StreamSpec::scaled(Downsampler::MaxPool, 2),
            ],
            ..Self::baseline()
        }
    }

    pub fn three_stream_multiscale() -> Self {
        Self {
            architecture: Architecture::ThreeStreamMultiscale,
            streams: vec![
                StreamSpec::scaled(Downsampler::MaxPool, 1),
                StreamSpec::scaled(Downsampler::MaxPool, 2),
                StreamSpec::scaled(Downsampler::MaxPool, 4),
            ],
            ..Self::baseline()
        }
    }

    /// Shrinks widths and extent so training runs in minutes on one core.
    pub fn desk_scale(mut self) -> Self {
        self.channels = [8, 8, 16, 16];
        self.kernel = 3;
        self.embedding_dim = 32;
        self.rnn_hidden = 32;
        self.input_extent = (16, 16);
        self
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Self::baseline()),
            "two_stream_multiscale" => Ok(Self::two_stream_multiscale()),
            "three_stream_multiscale" => Ok(Self::three_stream_multiscale()),
            "desk" | "baseline_desk" => Ok(Self::baseline().desk_scale()),
            "two_stream_multiscale_desk" => Ok(Self::two_stream_multiscale().desk_scale()),
            "three_stream_multiscale_desk" => {
                let mut c = Self::three_stream_multiscale().desk_scale();
                c.input_extent = (32, 32);
                Ok(c)
            }
            _ => Err(Error::Config(format!("unknown network preset `{name}`"))),
        }
    }

    /// Human-readable stream list, e.g. `MaxPool + 2 stride`.
    pub fn stream_label(&self) -> String {
        self.streams
            .iter()
            .map(|s| s.downsampler.label())
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=4).contains(&self.streams.len()) {
            return bad(format!("1 to 4 streams supported, got {}", self.streams.len()));
        }
        if !(1..=NUM_BLOCKS).contains(&self.fusion_layer) {
            return bad(format!("fusion layer must be Conv1..Conv4, got {}", self.fusion_layer));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.channels.contains(&0)
            || self.embedding_dim == 0
            || self.rnn_hidden == 0
            || self.input_channels == 0
            || self.input_extent.0 == 0
            || self.input_extent.1 == 0
        {
            return bad("widths and extents must be positive".into());
        }
        for (s, spec) in self.streams.iter().enumerate() {
            if spec.scale == 0 {
                return bad(format!("stream {s} has scale 0"));
            }
            if let Some((b, _)) = spec.overrides.iter().find(|(b, _)| !(1..=NUM_BLOCKS).contains(b)) {
                return bad(format!("stream {s} overrides nonexistent block {b}"));
            }
        }
        if self.architecture == Architecture::TwoStreamMultiscale && self.streams.len() != 2 {
            return bad(format!(
                "two_stream_multiscale needs exactly 2 streams, got {}",
                self.streams.len()
            ));
        }
        Ok(())
    }

    /// Blocks each stream runs before the shared trunk takes over.
    fn stream_blocks(&self) -> usize {
        if self.streams.len() == 1 {
            NUM_BLOCKS
        } else {
            self.fusion_layer
        }
    }

    fn block_in_channels(&self, block: usize) -> usize {
        if block == 1 {
            self.input_channels
        } else {
            self.channels[block - 2]
        }
    }
}

/// Graph handles of every parameter, in [`ParamStore`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps leaves created by the caller, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    params: ParamStore,
}

fn conv_name(prefix: &str, block: usize) -> String {
    format!("{prefix}.conv{block}")
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-a..a))
}

impl Network {
    /// Initializes parameters from `seed` and checks that every fusion point
    /// receives compatible maps at the configured input extent.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = config.kernel;
        let mut add_conv = |params: &mut ParamStore, name: String, cout: usize, cin: usize, ksize: usize| {
            let w = xavier(&mut rng, &[cout, cin, ksize, ksize], cin * ksize * ksize, cout * ksize * ksize)?;
            params.insert(format!("{name}.weight"), w)?;
            params.insert(format!("{name}.bias"), Tensor::zeros([cout])?)?;
            Ok::<_, Error>(())
        };

        let arity = config.streams.len();
        let stream_blocks = config.stream_blocks();
        for s in 0..arity {
            for b in 1..=stream_blocks {
                add_conv(
                    &mut params,
                    conv_name(&format!("stream{s}"), b),
                    config.channels[b - 1],
                    config.block_in_channels(b),
                    k,
                )?;
            }
        }
        if arity > 1 {
            let levels: Vec<usize> = match config.architecture {
                Architecture::TwoStreamMultiscale => (1..=config.fusion_layer).collect(),
                _ => vec![config.fusion_layer],
            };
            for &level in &levels {
                if config.fusion_kind == FusionKind::Channel {
                    let c = config.channels[level - 1];
                    add_conv(&mut params, format!("fusion{level}.proj"), c, arity * c, 1)?;
                }
                if config.architecture == Architecture::TwoStreamMultiscale && level > 1 {
                    add_conv(
                        &mut params,
                        conv_name("trunk", level),
                        config.channels[level - 1],
                        config.channels[level - 2],
                        k,
                    )?;
                }
            }
            for b in config.fusion_layer + 1..=NUM_BLOCKS {
                add_conv(
                    &mut params,
                    conv_name("trunk", b),
                    config.channels[b - 1],
                    config.channels[b - 2],
                    k,
                )?;
            }
        }
        add_conv(
            &mut params,
            "head".into(),
            config.embedding_dim,
            config.channels[NUM_BLOCKS - 1],
            1,
        )?;

        let (e, h) = (config.embedding_dim, config.rnn_hidden);
        params.insert("rnn.input_weights", xavier(&mut rng, &[h, e], e, h)?)?;
        params.insert("rnn.recurrent_weights", xavier(&mut rng, &[h, h], h, h)?)?;
        params.insert("rnn.bias", Tensor::zeros([h])?)?;
        if config.temporal_pool == TemporalPool::Attentive {
            params.insert("attention.matrix", xavier(&mut rng, &[h, h], h, h)?)?;
        }

        let net = Self { config, params };
        net.check_wiring()?;
        Ok(net)
    }

    fn check_wiring(&self) -> Result<()> {
        let (h, w) = self.config.input_extent;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let frame = g.constant(Tensor::zeros([h, w, self.config.input_channels])?);
        self.frame_embedding(&mut g, &bound, frame).map(|_| ())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.params.write_archive(std::io::BufWriter::new(file))
    }

    /// Overwrites the parameters with a checkpoint of the same architecture.
    pub fn load_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        let stored = ParamStore::read_archive(std::io::BufReader::new(file))?;
        self.params.load_from(&stored)
    }

    /// Size of the pooled sequence feature.
    pub fn feature_dim(&self) -> usize {
        self.config.rnn_hidden
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    fn var(&self, bound: &BoundParams, name: &str) -> Var {
        let k = self
            .params
            .position(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from a built network"));
        bound.vars[k]
    }

    fn conv(&self, g: &mut Graph, bound: &BoundParams, name: &str, x: Var, geo: ConvGeometry) -> Result<Var> {
        let w = self.var(bound, &format!("{name}.weight"));
        let b = self.var(bound, &format!("{name}.bias"));
        g.conv2d(x, w, b, geo)
    }

    /// Convolution, `tanh`, then the downsampler when `block` downsamples.
    fn block(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        name: &str,
        block: usize,
        x: Var,
        down: Downsampler,
    ) -> Result<Var> {
        let k = self.config.kernel;
        let downsamples = block <= DOWNSAMPLING_BLOCKS;
        let stride = if downsamples && down == Downsampler::StridedConv { 2 } else { 1 };
        let y = self.conv(g, bound, name, x, ConvGeometry::same(k, stride))?;
        let y = g.tanh(y);
        if !downsamples {
            return Ok(y);
        }
        let (h, w, _) = g.value(y).hwc()?;
        match down.pool_params(h, w) {
            Some(p) => g.pool2d(y, &p),
            None => Ok(y),
        }
    }

    /// Brings every map to the extent of the largest one by zero-padding
    /// upsampling.
    fn align(&self, g: &mut Graph, maps: &[Var], layer: usize) -> Result<Vec<Var>> {
        let shapes: Vec<Vec<usize>> = maps.iter().map(|&m| g.shape(m).to_vec()).collect();
        let target = (0..maps.len())
            .max_by_key(|&s| (shapes[s][0] * shapes[s][1], usize::MAX - s))
            .expect("at least one stream");
        let (th, tw, tc) = (shapes[target][0], shapes[target][1], shapes[target][2]);
        let mut out = Vec::with_capacity(maps.len());
        for (s, (&m, shape)) in maps.iter().zip(&shapes).enumerate() {
            let (h, w, c) = (shape[0], shape[1], shape[2]);
            if (h, w, c) == (th, tw, tc) {
                out.push(m);
                continue;
            }
            let factor = th / h;
            if c != tc || th % h != 0 || tw % w != 0 || tw / w != factor {
                return Err(Error::Config(format!(
                    "stream {s} reaches Conv{layer} as {shape:?}, which cannot be aligned with \
                     stream {target} at {:?}",
                    shapes[target]
                )));
            }
            out.push(g.upsample_zero_pad(m, factor)?);
        }
        Ok(out)
    }

    fn fuse_at(&self, g: &mut Graph, bound: &BoundParams, maps: &[Var], layer: usize) -> Result<Var> {
        let aligned = self.align(g, maps, layer)?;
        let fused = g.fuse(self.config.fusion_kind, &aligned)?;
        if self.config.fusion_kind == FusionKind::Channel {
            self.conv(g, bound, &format!("fusion{layer}.proj"), fused, ConvGeometry::default())
        } else {
            Ok(fused)
        }
    }

    fn stream_input(&self, g: &mut Graph, frame: Var, scale: usize) -> Result<Var> {
        Ok(g.multiscale_branch(frame, &[scale])?[0])
    }

    /// Per-frame embedding `[embedding_dim]` of one `[H, W, input_channels]`
    /// frame.
    pub fn frame_embedding(&self, g: &mut Graph, bound: &BoundParams, frame: Var) -> Result<Var> {
        let cfg = &self.config;
        let (_, _, c) = g.value(frame).hwc()?;
        if c != cfg.input_channels {
            return Err(Error::shape(
                "frame_embedding",
                format!("frame has {c} channels, network expects {}", cfg.input_channels),
            ));
        }
        let arity = cfg.streams.len();
        let mut xs = Vec::with_capacity(arity);
        for spec in &cfg.streams {
            xs.push(self.stream_input(g, frame, spec.scale)?);
        }

        let mut trunk: Option<Var> = None;
        for b in 1..=cfg.stream_blocks() {
            for (s, spec) in cfg.streams.iter().enumerate() {
                xs[s] = self.block(g, bound, &conv_name(&format!("stream{s}"), b), b, xs[s], spec.downsampler_at(b))?;
            }
            if arity == 1 {
                continue;
            }
            match cfg.architecture {
                Architecture::TwoStreamMultiscale => {
                    let fused = self.fuse_at(g, bound, &xs, b)?;
                    trunk = Some(match trunk {
                        None => fused,
                        Some(t) => {
                            let down = self.block(g, bound, &conv_name("trunk", b), b, t, cfg.trunk_downsampler)?;
                            if g.shape(down) != g.shape(fused) {
                                return Err(Error::Config(format!(
                                    "trunk reaches Conv{b} as {:?} but the fused streams are {:?}",
                                    g.shape(down),
                                    g.shape(fused)
                                )));
                            }
                            g.add(down, fused)?
                        }
                    });
                }
                _ if b == cfg.fusion_layer => trunk = Some(self.fuse_at(g, bound, &xs, b)?),
                _ => {}
            }
        }

        let mut y = trunk.unwrap_or(xs[0]);
        if arity > 1 {
            for b in cfg.fusion_layer + 1..=NUM_BLOCKS {
                y = self.block(g, bound, &conv_name("trunk", b), b, y, cfg.trunk_downsampler)?;
            }
        }
        let y = self.conv(g, bound, "head", y, ConvGeometry::default())?;
        g.global_avg_pool(y)
    }

    fn rnn_vars(&self, bound: &BoundParams) -> RnnVars {
        RnnVars {
            input_weights: self.var(bound, "rnn.input_weights"),
            recurrent_weights: self.var(bound, "rnn.recurrent_weights"),
            bias: self.var(bound, "rnn.bias"),
        }
    }

    /// Recurrent outputs `[T, rnn_hidden]` for a sequence of frames; the
    /// state starts at zero for every call.
    pub fn forward_sequence(&self, g: &mut Graph, bound: &BoundParams, frames: &[Var]) -> Result<Var> {
        let first = *frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("sequence has no frames".into()))?;
        let shape = g.shape(first).to_vec();
        let mut embeddings = Vec::with_capacity(frames.len());
        for (t, &f) in frames.iter().enumerate() {
            if g.shape(f) != shape.as_slice() {
                return Err(Error::shape(
                    "forward_sequence",
                    format!("frame {t} is {:?}, frame 0 is {shape:?}", g.shape(f)),
                ));
            }
            embeddings.push(self.frame_embedding(g, bound, f)?);
        }
        g.rnn_sequence(&self.rnn_vars(bound), &embeddings)
    }

    /// Pools a probe/gallery pair of recurrent output sequences with the
    /// configured temporal pooling.
    pub fn pool_pair(&self, g: &mut Graph, bound: &BoundParams, p: Var, q: Var) -> Result<(Var, Var)> {
        let attention = (self.config.temporal_pool == TemporalPool::Attentive)
            .then(|| self.var(bound, "attention.matrix"));
        g.temporal_pool(self.config.temporal_pool, p, q, attention)
    }

    /// Recurrent outputs `[T, rnn_hidden]` without recording gradients.
    pub fn sequence_features(&self, frames: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
        let out = self.forward_sequence(&mut g, &bound, &vars)?;
        Ok(g.value(out).clone())
    }

    /// Pooled features of two recurrent output sequences, without gradients.
    pub fn pool_features(&self, p: &Tensor, q: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let attention = match self.config.temporal_pool {
            TemporalPool::Attentive => {
                let u = self.params.get("attention.matrix").expect("attentive network").clone();
                Some(g.constant(u))
            }
            TemporalPool::Mean => None,
        };
        let (pv, qv) = (g.constant(p.clone()), g.constant(q.clone()));
        let (a, b) = g.temporal_pool(self.config.temporal_pool, pv, qv, attention)?;
        Ok((g.value(a).clone(), g.value(b).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(mut cfg: NetworkConfig) -> NetworkConfig {
        cfg.channels = [3, 3, 4, 4];
        cfg.kernel = 3;
        cfg.embedding_dim = 6;
        cfg.rnn_hidden = 5;
        cfg.input_extent = (16, 16);
        cfg
    }

    fn frame(h: usize, w: usize, seed: f64) -> Tensor {
        Tensor::from_fn([h, w, 5], |i| ((i as f64 + seed) * 0.731).sin()).unwrap()
    }

    fn pre_fusion_shapes(net: &Network, layer: usize) -> Vec<Vec<usize>> {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let (h, w) = net.config.input_extent;
        let f = g.constant(frame(h, w, 0.0));
        net.config
            .streams
            .iter()
            .enumerate()
            .map(|(s, spec)| {
                let mut x = net.stream_input(&mut g, f, spec.scale).unwrap();
                for b in 1..=layer {
                    x = net
                        .block(&mut g, &bound, &conv_name(&format!("stream{s}"), b), b, x, spec.downsampler_at(b))
                        .unwrap();
                }
                g.shape(x).to_vec()
            })
            .collect()
    }

    #[test]
    fn baseline_width_fusion_shapes() {
        let net = Network::build(tiny(NetworkConfig::baseline()), 1).unwrap();
        let shapes = pre_fusion_shapes(&net, 3);
        assert_eq!(shapes, vec![vec![2, 2, 4]; 3]);
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let maps: Vec<Var> = (0..3).map(|_| g.constant(Tensor::zeros([2, 2, 4]).unwrap())).collect();
        let fused = net.fuse_at(&mut g, &bound, &maps, 3).unwrap();
        assert_eq!(g.shape(fused), &[2, 6, 4]);
    }

    #[test]
    fn single_stream_has_no_fusion() {
        let mut cfg = tiny(NetworkConfig::baseline());
        cfg.streams.truncate(1);
        let net = Network::build(cfg, 2).unwrap();
        assert!(net.params().names().iter().all(|n| !n.starts_with("trunk") && !n.starts_with("fusion")));
        assert!(net.params().get("stream0.conv4.weight").is_some());
        let feats = net.sequence_features(&[frame(16, 16, 1.0)]).unwrap();
        assert_eq!(feats.shape(), &[1, 5]);
    }

    #[test]
    fn two_stream_multiscale_has_three_fusion_points() {
        let mut cfg = tiny(NetworkConfig::two_stream_multiscale());
        cfg.fusion_kind = FusionKind::Channel;
        let net = Network::build(cfg, 3).unwrap();
        let projections = net
            .params()
            .names()
            .iter()
            .filter(|n| n.starts_with("fusion") && n.ends_with(".weight"))
            .count();
        assert_eq!(projections, 3);
        let width = Network::build(tiny(NetworkConfig::two_stream_multiscale()), 3).unwrap();
        let feats = width.sequence_features(&[frame(16, 16, 0.5)]).unwrap();
        assert_eq!(feats.shape(), &[1, 5]);
    }

    #[test]
    fn three_stream_multiscale_upsamples_before_fusion() {
        let mut cfg = tiny(NetworkConfig::three_stream_multiscale());
        cfg.input_extent = (32, 32);
        let net = Network::build(cfg, 4).unwrap();
        let shapes = pre_fusion_shapes(&net, 3);
        assert_eq!(shapes, vec![vec![4, 4, 4], vec![2, 2, 4], vec![1, 1, 4]]);
        net.sequence_features(&[frame(32, 32, 0.0)]).unwrap();
    }

    #[test]
    fn incompatible_fusion_names_the_stream() {
        let mut cfg = tiny(NetworkConfig::three_stream_multiscale());
        cfg.streams[1].scale = 1;
        cfg.streams[2].scale = 3;
        cfg.input_extent = (40, 40);
        let err = Network::build(cfg, 5).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)), "{msg}");
        assert!(msg.contains("stream 2") && msg.contains("Conv3"), "{msg}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(NetworkConfig::baseline());
        cfg.fusion_layer = 5;
        assert!(Network::build(cfg, 0).is_err());
        let mut cfg = tiny(NetworkConfig::baseline());
        cfg.streams.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(NetworkConfig::two_stream_multiscale());
        cfg.streams.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(NetworkConfig::baseline());
        cfg.kernel = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = Network::build(tiny(NetworkConfig::baseline()), 9).unwrap();
        let b = Network::build(tiny(NetworkConfig::baseline()), 9).unwrap();
        let c = Network::build(tiny(NetworkConfig::baseline()), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn zero_recurrence_gives_identical_outputs_for_identical_frames() {
        let mut net = Network::build(tiny(NetworkConfig::baseline()), 6).unwrap();
        net.params_mut()
            .get_mut("rnn.recurrent_weights")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let f = frame(16, 16, 2.0);
        let out = net.sequence_features(&[f.clone(), f.clone(), f]).unwrap();
        let rows: Vec<&[f64]> = out.data().chunks(5).collect();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[1], rows[2]);
    }

    #[test]
    fn frame_shape_drift_rejected() {
        let net = Network::build(tiny(NetworkConfig::baseline()), 7).unwrap();
        let err = net.sequence_features(&[frame(16, 16, 0.0), frame(16, 12, 0.0)]);
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert!(net.sequence_features(&[]).is_err());
    }

    #[test]
    fn full_pipeline_matches_finite_differences() {
        use crate::autodiff::{check_gradients, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
        let mut cfg = tiny(NetworkConfig::baseline());
        cfg.channels = [2, 2, 2, 2];
        cfg.embedding_dim = 3;
        cfg.rnn_hidden = 3;
        cfg.input_extent = (12, 12);
        cfg.temporal_pool = TemporalPool::Attentive;
        let net = Network::build(cfg, 11).unwrap();
        let n = net.params().len();
        let mut inputs = net.params().tensors().to_vec();
        for t in 0..2 {
            inputs.push(frame(12, 12, t as f64));
        }
        let report = check_gradients(
            |g, v| {
                let bound = BoundParams::from_vars(v[..n].to_vec());
                let seq = net.forward_sequence(g, &bound, &v[n..])?;
                let (a, b) = net.pool_pair(g, &bound, seq, seq)?;
                let d = g.sub(a, b)?;
                let s = g.add(a, d)?;
                let sq = g.mul(s, s)?;
                Ok(g.sum(sq))
            },
            &inputs,
            GRAD_CHECK_EPS,
        )
        .unwrap();
        assert!(report.passed(GRAD_CHECK_TOL), "{report:?}");
    }

    #[test]
    fn stream_overrides_apply_per_block() {
        let mut spec = StreamSpec::new(Downsampler::MaxPool);
        spec.overrides.push((2, Downsampler::DilatedAvg));
        assert_eq!(spec.downsampler_at(1), Downsampler::MaxPool);
        assert_eq!(spec.downsampler_at(2), Downsampler::DilatedAvg);
    }
}
