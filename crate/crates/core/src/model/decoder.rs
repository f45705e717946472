use alloc::vec::Vec;

use super::{conv_backward, ModelConfig, ModelParams, PoseFeatures};
use crate::error::{Error, Result};
use crate::normalize::{msawn, sawn, sawn_backward, ModulationMaps, NormVariant, OcclusionMask};
use crate::synth::FlowPyramid;
use crate::tensor::{self, Tensor4};

/// Per-level activations before and after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    pub pre_norm: Vec<Tensor4>,
    pub post_norm: Vec<Tensor4>,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    conv_in: Vec<Tensor4>,
    pre_norm: Vec<Tensor4>,
    post_norm: Vec<Tensor4>,
    last: Tensor4,
    /// `tanh` of the output logits.
    tanh: Tensor4,
}

impl DecodeCache {
    pub fn intermediates(&self) -> Intermediates {
        Intermediates {
            pre_norm: self.pre_norm.clone(),
            post_norm: self.post_norm.clone(),
        }
    }
}

fn check_scales(
    cfg: &ModelConfig,
    pose: &PoseFeatures,
    maps: &[ModulationMaps],
    pyr: &FlowPyramid,
) -> Result<()> {
    let n = cfg.scales;
    if pose.feats.len() != n || maps.len() != n || pyr.len() != n {
        return Err(Error::shape(
            "decode",
            alloc::format!(
                "scale mismatch: {n} configured, {} pose, {} style, {} flow levels",
                pose.feats.len(),
                maps.len(),
                pyr.len()
            ),
        ));
    }
    for k in 0..n {
        let s = cfg.level_shape(k);
        tensor::ensure_same("decode", s, maps[k].lambda.shape())?;
        tensor::ensure_same("decode", s, pose.feats[k].shape())?;
        tensor::ensure_same("decode", s.with_c(2), pyr.levels[k].flow.shape())?;
    }
    Ok(())
}

/// Coarse-to-fine: `conv → + pose skip → SAWN (or M-SAWN) → ReLU →
/// upsample`, then a 3-channel projection squashed to `[0, 1]` by
/// `(tanh + 1) / 2`.
#[allow(clippy::too_many_arguments)]
pub fn decode(
    pose: &PoseFeatures,
    maps: &[ModulationMaps],
    pyr: &FlowPyramid,
    region: Option<&[Tensor4]>,
    variant: NormVariant,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Tensor4, DecodeCache)> {
    check_scales(cfg, pose, maps, pyr)?;
    let n = cfg.scales;
    let mut conv_in = alloc::vec![Tensor4::zeros(cfg.level_shape(0)); n];
    let mut pre_norm = conv_in.clone();
    let mut post_norm = conv_in.clone();
    let mut next = Some(pose.feats[n - 1].clone());
    let mut last = None;
    for k in (0..n).rev() {
        let h = next.take().expect("decoder input for every level");
        let a = tensor::conv2d(&h, &params.dec[k])?;
        let z = tensor::add(&a, &pose.feats[k])?;
        let lvl = &pyr.levels[k];
        let occ = OcclusionMask::new(lvl.occ.clone())?;
        let nrm = match region {
            Some(r) => msawn(&z, &maps[k], &lvl.flow, &occ, &r[k], variant, cfg.eps)?,
            None => sawn(&z, &maps[k], &lvl.flow, &occ, variant, cfg.eps)?,
        };
        let r = tensor::relu(&nrm);
        conv_in[k] = h;
        pre_norm[k] = z;
        post_norm[k] = nrm;
        if k > 0 {
            next = Some(tensor::upsample_nearest2x(&r));
        } else {
            last = Some(r);
        }
    }
    let last = last.expect("at least one scale");
    let tanh = tensor::conv2d(&last, &params.out)?.map(libm::tanh);
    let image = tanh.map(|t| 0.5 * (t + 1.0));
    Ok((
        image,
        DecodeCache {
            conv_in,
            pre_norm,
            post_norm,
            last,
            tanh,
        },
    ))
}

/// Gradients w.r.t. pose features and (λ, β) per level; parameter
/// gradients are accumulated into `grads`.
#[allow(clippy::too_many_arguments)]
pub fn decode_backward(
    cache: &DecodeCache,
    maps: &[ModulationMaps],
    pyr: &FlowPyramid,
    region: Option<&[Tensor4]>,
    variant: NormVariant,
    params: &ModelParams,
    cfg: &ModelConfig,
    g_image: &Tensor4,
    grads: &mut ModelParams,
) -> Result<(Vec<Tensor4>, Vec<(Tensor4, Tensor4)>)> {
    let n = cfg.scales;
    let mut g_logits = g_image.clone();
    for (g, &t) in g_logits.data_mut().iter_mut().zip(cache.tanh.data()) {
        *g *= 0.5 * (1.0 - t * t);
    }
    let mut g_r = conv_backward(&cache.last, &params.out, &g_logits, &mut grads.out, true)
        .expect("input gradient requested");
    let mut g_pose: Vec<Tensor4> = (0..n).map(|k| Tensor4::zeros(cfg.level_shape(k))).collect();
    let mut g_maps: Vec<(Tensor4, Tensor4)> = Vec::with_capacity(n);
    for k in 0..n {
        for (g, &v) in g_r.data_mut().iter_mut().zip(cache.post_norm[k].data()) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        let lvl = &pyr.levels[k];
        let occ = OcclusionMask::new(lvl.occ.clone())?;
        let ng = sawn_backward(
            &cache.pre_norm[k],
            &maps[k],
            &lvl.flow,
            &occ,
            region.map(|r| &r[k]),
            variant,
            cfg.eps,
            &g_r,
            false,
        )?;
        g_pose[k].add_assign(&ng.h)?;
        g_maps.push((ng.lambda, ng.beta));
        let g_in = conv_backward(
            &cache.conv_in[k],
            &params.dec[k],
            &ng.h,
            &mut grads.dec[k],
            true,
        )
        .expect("input gradient requested");
        if k + 1 < n {
            g_r = tensor::upsample_nearest2x_backward(&g_in);
        } else {
            g_pose[k].add_assign(&g_in)?;
        }
    }
    Ok((g_pose, g_maps))
}
