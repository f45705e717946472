use alloc::vec::Vec;

use super::decoder::{decode, decode_backward, DecodeCache, Intermediates};
use super::pose::{encode_pose, encode_pose_backward, PoseFeatures};
use super::style::{
    concat_codes, derive_maps, derive_maps_backward, encode_part, encode_part_backward,
    PartEncoding,
};
use super::{ModelConfig, ModelParams, StyleMode};
use crate::error::{Error, Result};
use crate::normalize::{ModulationMaps, NormVariant};
use crate::synth::{
    derive_occlusion, flow_pyramid, gen_flow, mask_pyramid, FlowPyramid, Part, SynthScene,
};
use crate::tensor::{self, Tensor4};

/// One masked image feeding the style encoder for a single part.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSource {
    pub masked: Tensor4,
}

/// Everything a forward pass consumes besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorInput {
    pub pose: Tensor4,
    /// One per part, in part order. Ignored in free-map mode.
    pub style: Vec<StyleSource>,
    pub pyramid: FlowPyramid,
    /// Binary region mask per level; routes decoding through M-SAWN.
    pub region: Option<Vec<Tensor4>>,
}

impl GeneratorInput {
    /// Styles from `x_s`, pose `p_t`, ground-truth pyramid.
    pub fn pose_transfer(scene: &SynthScene) -> Result<Self> {
        Ok(GeneratorInput {
            pose: scene.p_t.clone(),
            style: masked_parts(&scene.x_s, &scene.region_masks_s.masks)?,
            pyramid: scene.pyramid()?,
            region: None,
        })
    }
}

fn masked_parts(image: &Tensor4, masks: &[Tensor4]) -> Result<Vec<StyleSource>> {
    masks
        .iter()
        .map(|m| {
            Ok(StyleSource {
                masked: tensor::mul(image, m)?,
            })
        })
        .collect()
}

/// Inputs for reconstructing `x_s` in its own pose with `part`'s style
/// taken from the target-pose image (`reference`, defaulting to `x_t`),
/// warped back by the inverse motion and confined to `M_s^part` by M-SAWN.
pub fn stpr_inputs(
    scene: &SynthScene,
    part: Part,
    reference: Option<&Tensor4>,
) -> Result<GeneratorInput> {
    let j = part.index();
    let reference = reference.unwrap_or(&scene.x_t);
    tensor::ensure_same("stpr_inputs", scene.x_t.shape(), reference.shape())?;
    let mut style = masked_parts(&scene.x_s, &scene.region_masks_s.masks)?;
    style[j] = StyleSource {
        masked: tensor::mul(reference, &scene.region_masks_t.masks[j])?,
    };
    let (h, w) = (scene.spec.height, scene.spec.width);
    let inv = gen_flow(&scene.spec.motion.inverse()?, h, w)?;
    let occ = derive_occlusion(&inv)?;
    Ok(GeneratorInput {
        pose: scene.p_s.clone(),
        style,
        pyramid: flow_pyramid(&inv, &occ, scene.spec.scales)?,
        region: Some(mask_pyramid(
            &scene.region_masks_s.masks[j],
            scene.spec.scales,
        )?),
    })
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    parts: Vec<PartEncoding>,
    codes: Vec<Tensor4>,
    maps: Vec<ModulationMaps>,
    pose: PoseFeatures,
    decode: DecodeCache,
}

impl ForwardCache {
    pub fn intermediates(&self) -> Intermediates {
        self.decode.intermediates()
    }

    pub fn maps(&self) -> &[ModulationMaps] {
        &self.maps
    }
}

/// Generated image and the cache [`backward`] needs.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: &GeneratorInput,
    variant: NormVariant,
) -> Result<(Tensor4, ForwardCache)> {
    let (parts, codes, maps) = match cfg.style_mode {
        StyleMode::Encoder => {
            if input.style.len() != cfg.parts {
                return Err(Error::Config(alloc::format!(
                    "{} style sources for a model with {} parts",
                    input.style.len(),
                    cfg.parts
                )));
            }
            let parts = input
                .style
                .iter()
                .map(|s| encode_part(&s.masked, params, cfg))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PartEncoding> = parts.iter().collect();
            let codes = concat_codes(&refs, cfg.scales)?;
            let maps = derive_maps(&codes, params, cfg)?;
            (parts, codes, maps)
        }
        StyleMode::FreeMaps => {
            if params.free_maps.len() != cfg.scales {
                return Err(Error::Config(
                    "parameters were not built for free-map mode".into(),
                ));
            }
            (Vec::new(), Vec::new(), params.free_maps.clone())
        }
    };
    let pose = encode_pose(&input.pose, params, cfg)?;
    let (image, decode_cache) = decode(
        &pose,
        &maps,
        &input.pyramid,
        input.region.as_deref(),
        variant,
        params,
        cfg,
    )?;
    Ok((
        image,
        ForwardCache {
            parts,
            codes,
            maps,
            pose,
            decode: decode_cache,
        },
    ))
}

/// Parameter gradients for the cotangent `g_image` on the generated image.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: &GeneratorInput,
    variant: NormVariant,
    cache: &ForwardCache,
    g_image: &Tensor4,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    let (g_pose, g_maps) = decode_backward(
        &cache.decode,
        &cache.maps,
        &input.pyramid,
        input.region.as_deref(),
        variant,
        params,
        cfg,
        g_image,
        &mut grads,
    )?;
    encode_pose_backward(&cache.pose, params, g_pose, &mut grads);
    match cfg.style_mode {
        StyleMode::Encoder => {
            let g_codes = derive_maps_backward(&cache.codes, params, cfg, &g_maps, &mut grads)?;
            for (j, enc) in cache.parts.iter().enumerate() {
                let g_part = (0..cfg.scales)
                    .map(|k| {
                        let cs = cfg.style_channels[k];
                        g_codes[k].channel_slice(j * cs, cs)
                    })
                    .collect::<Result<Vec<_>>>()?;
                encode_part_backward(enc, params, g_part, &mut grads);
            }
        }
        StyleMode::FreeMaps => {
            for (dst, (gl, gb)) in grads.free_maps.iter_mut().zip(g_maps) {
                dst.lambda = gl;
                dst.beta = gb;
            }
        }
    }
    Ok(grads)
}

/// Forward, then backward with the cotangent produced by `loss`, which maps
/// the generated image to `(loss value, d loss / d image)`.
pub fn forward_backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: &GeneratorInput,
    variant: NormVariant,
    loss: impl FnOnce(&Tensor4) -> Result<(f64, Tensor4)>,
) -> Result<(Tensor4, f64, ModelParams)> {
    let (image, cache) = forward(params, cfg, input, variant)?;
    let (value, g) = loss(&image)?;
    let grads = backward(params, cfg, input, variant, &cache, &g)?;
    Ok((image, value, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    PoseTransfer,
    /// Reconstruct `x_s` with `part`'s style swapped in from `x_t`.
    Stpr {
        part: Part,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub image: Tensor4,
    pub target: Tensor4,
    pub intermediates: Intermediates,
    pub input: GeneratorInput,
}

pub fn forward_full(
    scene: &SynthScene,
    params: &ModelParams,
    cfg: &ModelConfig,
    variant: NormVariant,
    mode: ForwardMode,
) -> Result<ForwardOutput> {
    let (input, target) = match mode {
        ForwardMode::PoseTransfer => (GeneratorInput::pose_transfer(scene)?, scene.x_t.clone()),
        ForwardMode::Stpr { part } => (stpr_inputs(scene, part, None)?, scene.x_s.clone()),
    };
    let (image, cache) = forward(params, cfg, &input, variant)?;
    Ok(ForwardOutput {
        image,
        target,
        intermediates: cache.intermediates(),
        input,
    })
}
