//! Toy generator: region-wise style encoder with a grouped conv-block, pose
//! encoder, and a coarse-to-fine decoder modulated by SAWN / M-SAWN at
//! every scale.
//!
//! Level 0 is full resolution; level `k` is downsampled by `2^k`. The
//! decoder runs from the coarsest level to level 0.

mod decoder;
mod generator;
mod pose;
mod style;

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normalize::{ModulationMaps, DEFAULT_EPS};
use crate::params::{push_conv, push_conv_mut, ParamSet, Slot};
use crate::synth::{NUM_PARTS, NUM_SCALES};
use crate::tensor::{self, ConvKernel, Shape4, Tensor4};

pub use decoder::{decode, decode_backward, DecodeCache, Intermediates};
pub use generator::{
    backward, forward, forward_backward, forward_full, stpr_inputs, ForwardCache, ForwardMode,
    ForwardOutput, GeneratorInput, StyleSource,
};
pub use pose::{encode_pose, PoseFeatures};
pub use style::{derive_maps, extract_region_styles, stpr_mix, StyleParams};

/// Where the modulation maps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StyleMode {
    /// Region-wise style encoder followed by the grouped conv-block.
    Encoder,
    /// λ/β are trainable maps with no encoder.
    FreeMaps,
}

impl StyleMode {
    pub fn name(self) -> &'static str {
        match self {
            StyleMode::Encoder => "encoder",
            StyleMode::FreeMaps => "free",
        }
    }
}

impl FromStr for StyleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(StyleMode::Encoder),
            "free" | "free_maps" => Ok(StyleMode::FreeMaps),
            _ => Err(Error::Config(format!("unknown style mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub scales: usize,
    pub parts: usize,
    /// Decoder / pose feature width per level (level 0 first). Each must be
    /// divisible by `parts`.
    pub channels: Vec<usize>,
    /// Per-part style code width per level.
    pub style_channels: Vec<usize>,
    pub style_mode: StyleMode,
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            scales: NUM_SCALES,
            parts: NUM_PARTS,
            channels: alloc::vec![12, 16, 32],
            style_channels: alloc::vec![4, 4, 4],
            style_mode: StyleMode::Encoder,
            eps: DEFAULT_EPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0
            || self.channels.len() != self.scales
            || self.style_channels.len() != self.scales
        {
            return Err(Error::Config(format!(
                "need one channel width per scale ({} scales, {} widths, {} style widths)",
                self.scales,
                self.channels.len(),
                self.style_channels.len()
            )));
        }
        if self.parts == 0 {
            return Err(Error::Config("part count must be positive".into()));
        }
        if let Some(c) = self
            .channels
            .iter()
            .find(|&&c| c == 0 || c % self.parts != 0)
        {
            return Err(Error::Config(format!(
                "width {c} not a positive multiple of {} parts",
                self.parts
            )));
        }
        if self.style_channels.contains(&0) {
            return Err(Error::Config("style widths must be positive".into()));
        }
        let d = 1usize << (self.scales - 1);
        if !self.height.is_multiple_of(d) || !self.width.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "{}x{} not divisible by 2^{}",
                self.height,
                self.width,
                self.scales - 1
            )));
        }
        Ok(())
    }

    pub fn level_hw(&self, k: usize) -> (usize, usize) {
        (self.height >> k, self.width >> k)
    }

    /// Shape of the activations (and modulation maps) at level `k`.
    pub fn level_shape(&self, k: usize) -> Shape4 {
        let (h, w) = self.level_hw(k);
        Shape4::new(1, self.channels[k], h, w)
    }

    /// λ (and β) channels owned by each part at level `k`.
    pub fn group_width(&self, k: usize) -> usize {
        self.channels[k] / self.parts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Shared per-part style encoder, one conv per level; biases stay zero.
    pub style_enc: Vec<ConvKernel>,
    /// `[level][part]`: part code → λ rows then β rows for that part's group.
    pub style_block: Vec<Vec<ConvKernel>>,
    /// Trainable maps, only in [`StyleMode::FreeMaps`].
    pub free_maps: Vec<ModulationMaps>,
    pub pose_enc: Vec<ConvKernel>,
    pub dec: Vec<ConvKernel>,
    pub out: ConvKernel,
}

impl ModelParams {
    /// Seeded initialization. λ starts near one and β near zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.scales;
        let (style_enc, style_block, free_maps) = match cfg.style_mode {
            StyleMode::Encoder => {
                let enc = (0..n)
                    .map(|k| {
                        let cin = if k == 0 { 3 } else { cfg.style_channels[k - 1] };
                        ConvKernel::random(cfg.style_channels[k], cin, &mut rng)
                    })
                    .collect();
                let block = (0..n)
                    .map(|k| {
                        let g = cfg.group_width(k);
                        (0..cfg.parts)
                            .map(|_| {
                                let mut kk =
                                    ConvKernel::random(2 * g, cfg.style_channels[k], &mut rng);
                                kk.weight.scale_assign(0.1);
                                for b in &mut kk.bias[..g] {
                                    *b = 1.0;
                                }
                                kk
                            })
                            .collect()
                    })
                    .collect();
                (enc, block, Vec::new())
            }
            StyleMode::FreeMaps => {
                let maps = (0..n)
                    .map(|k| {
                        let s = cfg.level_shape(k);
                        ModulationMaps {
                            lambda: Tensor4::full(s, 1.0),
                            beta: Tensor4::zeros(s),
                        }
                    })
                    .collect();
                (Vec::new(), Vec::new(), maps)
            }
        };
        let pose_enc = (0..n)
            .map(|k| {
                let cin = if k == 0 { 1 } else { cfg.channels[k - 1] };
                ConvKernel::random(cfg.channels[k], cin, &mut rng)
            })
            .collect();
        let dec = (0..n)
            .map(|k| {
                let cin = if k + 1 == n {
                    cfg.channels[k]
                } else {
                    cfg.channels[k + 1]
                };
                ConvKernel::random(cfg.channels[k], cin, &mut rng)
            })
            .collect();
        let mut out = ConvKernel::random(3, cfg.channels[0], &mut rng);
        out.weight.scale_assign(0.5);
        Ok(ModelParams {
            style_enc,
            style_block,
            free_maps,
            pose_enc,
            dec,
            out,
        })
    }

    /// Same layout, all zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let z = |k: &ConvKernel| ConvKernel::zeros(k.c_out(), k.c_in());
        ModelParams {
            style_enc: self.style_enc.iter().map(z).collect(),
            style_block: self
                .style_block
                .iter()
                .map(|v| v.iter().map(z).collect())
                .collect(),
            free_maps: self
                .free_maps
                .iter()
                .map(|m| ModulationMaps {
                    lambda: Tensor4::zeros(m.lambda.shape()),
                    beta: Tensor4::zeros(m.beta.shape()),
                })
                .collect(),
            pose_enc: self.pose_enc.iter().map(z).collect(),
            dec: self.dec.iter().map(z).collect(),
            out: z(&self.out),
        }
    }

    /// `self += other` slot by slot.
    pub fn accumulate(&mut self, other: &ModelParams) {
        let src: Vec<Vec<f64>> = other.slots().into_iter().map(|s| s.data.to_vec()).collect();
        for (dst, s) in self.slots_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slot in self.slots_mut() {
            for v in slot {
                *v *= s;
            }
        }
    }

    /// Slot names belonging to the style and pose encoders.
    pub fn is_encoder_slot(name: &str) -> bool {
        name.starts_with("style_enc")
            || name.starts_with("style_block")
            || name.starts_with("pose_enc")
    }
}

impl ParamSet for ModelParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (k, c) in self.style_enc.iter().enumerate() {
            push_conv(&mut out, format!("style_enc.{k}"), c, false);
        }
        for (k, blocks) in self.style_block.iter().enumerate() {
            for (j, c) in blocks.iter().enumerate() {
                push_conv(&mut out, format!("style_block.{k}.{j}"), c, true);
            }
        }
        for (k, m) in self.free_maps.iter().enumerate() {
            out.push(Slot {
                name: format!("free_maps.{k}.lambda"),
                shape: m.lambda.shape(),
                data: m.lambda.data(),
            });
            out.push(Slot {
                name: format!("free_maps.{k}.beta"),
                shape: m.beta.shape(),
                data: m.beta.data(),
            });
        }
        for (k, c) in self.pose_enc.iter().enumerate() {
            push_conv(&mut out, format!("pose_enc.{k}"), c, true);
        }
        for (k, c) in self.dec.iter().enumerate() {
            push_conv(&mut out, format!("dec.{k}"), c, true);
        }
        push_conv(&mut out, "out".into(), &self.out, true);
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for c in &mut self.style_enc {
            push_conv_mut(&mut out, c, false);
        }
        for blocks in &mut self.style_block {
            for c in blocks {
                push_conv_mut(&mut out, c, true);
            }
        }
        for m in &mut self.free_maps {
            out.push(m.lambda.data_mut());
            out.push(m.beta.data_mut());
        }
        for c in &mut self.pose_enc {
            push_conv_mut(&mut out, c, true);
        }
        for c in &mut self.dec {
            push_conv_mut(&mut out, c, true);
        }
        push_conv_mut(&mut out, &mut self.out, true);
        out
    }
}

/// `relu(conv(x))`.
pub(crate) fn conv_relu(x: &Tensor4, k: &ConvKernel) -> Result<Tensor4> {
    Ok(tensor::relu(&tensor::conv2d(x, k)?))
}

/// Backward through `relu(conv(x))` given the post-activation output;
/// accumulates kernel gradients into `grad`.
pub(crate) fn conv_relu_backward(
    x: &Tensor4,
    k: &ConvKernel,
    post: &Tensor4,
    g_post: &Tensor4,
    grad: &mut ConvKernel,
    need_input: bool,
) -> Option<Tensor4> {
    let mut g = g_post.clone();
    for (gv, &p) in g.data_mut().iter_mut().zip(post.data()) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
    conv_backward(x, k, &g, grad, need_input)
}

/// Backward through `conv(x)`; accumulates kernel gradients into `grad`.
pub(crate) fn conv_backward(
    x: &Tensor4,
    k: &ConvKernel,
    g: &Tensor4,
    grad: &mut ConvKernel,
    need_input: bool,
) -> Option<Tensor4> {
    let (gx, gw, gb) = tensor::conv2d_backward(x, k, g, need_input);
    for (d, v) in grad.weight.data_mut().iter_mut().zip(gw.data()) {
        *d += v;
    }
    for (d, v) in grad.bias.iter_mut().zip(gb) {
        *d += v;
    }
    gx
}
