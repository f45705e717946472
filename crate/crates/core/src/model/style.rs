use alloc::vec::Vec;

use super::{conv_backward, conv_relu, conv_relu_backward, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::normalize::ModulationMaps;
use crate::synth::Part;
use crate::tensor::{self, Tensor4};

/// Per-scale concatenated part codes and the λ/β maps derived from them.
///
/// Code block `j` at level `k` occupies channels
/// `[j·c_k, (j+1)·c_k)` with `c_k = style_channels[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleParams {
    pub codes: Vec<Tensor4>,
    pub maps: Vec<ModulationMaps>,
}

/// Style encoder activations for one masked part.
#[derive(Debug, Clone)]
pub(crate) struct PartEncoding {
    /// Input to each level's conv.
    inputs: Vec<Tensor4>,
    /// Post-ReLU code at each level.
    pub(crate) codes: Vec<Tensor4>,
}

pub(crate) fn encode_part(
    x_part: &Tensor4,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<PartEncoding> {
    let mut inputs = Vec::with_capacity(cfg.scales);
    let mut codes: Vec<Tensor4> = Vec::with_capacity(cfg.scales);
    for k in 0..cfg.scales {
        let input = if k == 0 {
            x_part.clone()
        } else {
            tensor::avgpool2x(&codes[k - 1])?
        };
        codes.push(conv_relu(&input, &params.style_enc[k])?);
        inputs.push(input);
    }
    Ok(PartEncoding { inputs, codes })
}

pub(crate) fn encode_part_backward(
    enc: &PartEncoding,
    params: &ModelParams,
    mut g_codes: Vec<Tensor4>,
    grads: &mut ModelParams,
) {
    for k in (0..g_codes.len()).rev() {
        let gx = conv_relu_backward(
            &enc.inputs[k],
            &params.style_enc[k],
            &enc.codes[k],
            &g_codes[k],
            &mut grads.style_enc[k],
            k > 0,
        );
        if let Some(gx) = gx {
            let up = tensor::avgpool2x_backward(&gx);
            g_codes[k - 1]
                .add_assign(&up)
                .expect("matching code shapes");
        }
    }
}

fn check_parts(params: &ModelParams, cfg: &ModelConfig, n: usize) -> Result<()> {
    if params.style_enc.len() != cfg.scales
        || params.style_block.iter().any(|b| b.len() != cfg.parts)
    {
        return Err(Error::Config(
            "parameters were not built for encoder style mode".into(),
        ));
    }
    if n != cfg.parts {
        return Err(Error::Config(alloc::format!(
            "{n} part masks for a model with {} parts",
            cfg.parts
        )));
    }
    Ok(())
}

/// Concatenate per-part codes, one tensor per level.
pub(crate) fn concat_codes(parts: &[&PartEncoding], scales: usize) -> Result<Vec<Tensor4>> {
    (0..scales)
        .map(|k| {
            let level: Vec<&Tensor4> = parts.iter().map(|p| &p.codes[k]).collect();
            Tensor4::concat_channels(&level)
        })
        .collect()
}

/// Grouped conv-block: part `j`'s code block feeds only λ/β channels
/// `[j·g, (j+1)·g)` with `g = channels[k] / parts`.
pub fn derive_maps(
    codes: &[Tensor4],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<ModulationMaps>> {
    (0..cfg.scales)
        .map(|k| {
            let s = cfg.level_shape(k);
            let g = cfg.group_width(k);
            let cs = cfg.style_channels[k];
            let mut lambda = Tensor4::zeros(s);
            let mut beta = Tensor4::zeros(s);
            for j in 0..cfg.parts {
                let block = codes[k].channel_slice(j * cs, cs)?;
                let o = tensor::conv2d(&block, &params.style_block[k][j])?;
                lambda.write_channels(j * g, &o.channel_slice(0, g)?)?;
                beta.write_channels(j * g, &o.channel_slice(g, g)?)?;
            }
            Ok(ModulationMaps { lambda, beta })
        })
        .collect()
}

/// Returns per-level code gradients.
pub(crate) fn derive_maps_backward(
    codes: &[Tensor4],
    params: &ModelParams,
    cfg: &ModelConfig,
    g_maps: &[(Tensor4, Tensor4)],
    grads: &mut ModelParams,
) -> Result<Vec<Tensor4>> {
    (0..cfg.scales)
        .map(|k| {
            let g = cfg.group_width(k);
            let cs = cfg.style_channels[k];
            let (gl, gb) = &g_maps[k];
            let mut g_code = Tensor4::zeros(codes[k].shape());
            for j in 0..cfg.parts {
                let block = codes[k].channel_slice(j * cs, cs)?;
                let go = Tensor4::concat_channels(&[
                    &gl.channel_slice(j * g, g)?,
                    &gb.channel_slice(j * g, g)?,
                ])?;
                let gx = conv_backward(
                    &block,
                    &params.style_block[k][j],
                    &go,
                    &mut grads.style_block[k][j],
                    true,
                )
                .expect("input gradient requested");
                g_code.write_channels(j * cs, &gx)?;
            }
            Ok(g_code)
        })
        .collect()
}

/// Encode every part `x_s ⊙ M^j` with the shared encoder, concatenate the
/// codes per scale and derive λ/β through the grouped conv-block.
pub fn extract_region_styles(
    x_s: &Tensor4,
    masks: &[Tensor4],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<StyleParams> {
    check_parts(params, cfg, masks.len())?;
    let encs = masks
        .iter()
        .map(|m| encode_part(&tensor::mul(x_s, m)?, params, cfg))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PartEncoding> = encs.iter().collect();
    let codes = concat_codes(&refs, cfg.scales)?;
    let maps = derive_maps(&codes, params, cfg)?;
    Ok(StyleParams { codes, maps })
}

/// Replace code block `part` at every scale with the reference's block and
/// re-derive λ/β.
pub fn stpr_mix(
    src: &StyleParams,
    reference: &StyleParams,
    part: usize,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<StyleParams> {
    if part >= cfg.parts {
        return Err(Error::Contract {
            op: "stpr_mix",
            detail: alloc::format!("part {part} out of range for {} parts", cfg.parts),
        });
    }
    if src.codes.len() != cfg.scales || reference.codes.len() != cfg.scales {
        return Err(Error::Config(
            "style params built for a different scale count".into(),
        ));
    }
    let mut codes = src.codes.clone();
    for (k, code) in codes.iter_mut().enumerate() {
        tensor::ensure_same("stpr_mix", code.shape(), reference.codes[k].shape())?;
        let cs = cfg.style_channels[k];
        code.write_channels(part * cs, &reference.codes[k].channel_slice(part * cs, cs)?)?;
    }
    let maps = derive_maps(&codes, params, cfg)?;
    Ok(StyleParams { codes, maps })
}

impl StyleParams {
    /// Code block for `part` at level `k`.
    pub fn block(&self, k: usize, part: Part, cfg: &ModelConfig) -> Result<Tensor4> {
        let cs = cfg.style_channels[k];
        self.codes[k].channel_slice(part.index() * cs, cs)
    }
}
