//! Instance statistics, AdaIN, spatially-adaptive IN, warped modulation
//! (SAWN / SAWS) and the region-restricted M-SAWN, with adjoints.
//!
//! Modulation is always applied as `scale * h_norm + bias` in that order so
//! that the degenerate cases of the warped variants reproduce the plain
//! spatially-adaptive output bit for bit.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{self, ensure_same, Shape4, Tensor4};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-(sample, channel) mean and standard deviation, both `(B, C, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub mu: Tensor4,
    pub sigma: Tensor4,
    pub eps: f64,
}

impl InstanceStats {
    /// `sqrt(sigma² + eps)`, the divisor used when normalizing.
    #[inline]
    pub fn divisor(&self, b: usize, c: usize) -> f64 {
        let s = self.sigma.at(b, c, 0, 0);
        libm::sqrt(s * s + self.eps)
    }
}

pub fn instance_stats(h: &Tensor4, eps: f64) -> InstanceStats {
    let s = h.shape();
    let n = s.plane() as f64;
    let vs = Shape4::new(s.b, s.c, 1, 1);
    let mut mu = Tensor4::zeros(vs);
    let mut sigma = Tensor4::zeros(vs);
    for b in 0..s.b {
        for c in 0..s.c {
            let p = h.plane(b, c);
            let m = p.iter().sum::<f64>() / n;
            // Centered second moment; algebraically mean(h²) − μ².
            let var = p.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mu.set(b, c, 0, 0, m);
            sigma.set(b, c, 0, 0, libm::sqrt(var.max(0.0)));
        }
    }
    InstanceStats { mu, sigma, eps }
}

/// `(h − μ) / sqrt(σ² + eps)` per (sample, channel).
pub fn normalized(h: &Tensor4, stats: &InstanceStats) -> Tensor4 {
    let s = h.shape();
    let mut out = h.clone();
    for b in 0..s.b {
        for c in 0..s.c {
            let m = stats.mu.at(b, c, 0, 0);
            let d = stats.divisor(b, c);
            for v in out.plane_mut(b, c) {
                *v = (*v - m) / d;
            }
        }
    }
    out
}

/// Adjoint of [`normalized`] (statistics included) given `h_norm`.
fn normalized_backward(h_norm: &Tensor4, stats: &InstanceStats, g: &Tensor4) -> Tensor4 {
    let s = h_norm.shape();
    let n = s.plane() as f64;
    let mut out = Tensor4::zeros(s);
    for b in 0..s.b {
        for c in 0..s.c {
            let d = stats.divisor(b, c);
            let gp = g.plane(b, c);
            let hp = h_norm.plane(b, c);
            let mean_g = gp.iter().sum::<f64>() / n;
            let mean_gh = gp.iter().zip(hp).map(|(a, b)| a * b).sum::<f64>() / n;
            for ((o, &gv), &hv) in out.plane_mut(b, c).iter_mut().zip(gp).zip(hp) {
                *o = (gv - mean_g - hv * mean_gh) / d;
            }
        }
    }
    out
}

/// Adjoint of [`instance_stats`] for cotangents on `mu` and `sigma`.
pub fn instance_stats_backward(
    h: &Tensor4,
    stats: &InstanceStats,
    g_mu: &Tensor4,
    g_sigma: &Tensor4,
) -> Tensor4 {
    let s = h.shape();
    let n = s.plane() as f64;
    let mut out = Tensor4::zeros(s);
    for b in 0..s.b {
        for c in 0..s.c {
            let m = stats.mu.at(b, c, 0, 0);
            let sd = stats.sigma.at(b, c, 0, 0);
            let gm = g_mu.at(b, c, 0, 0) / n;
            let gs = if sd > 0.0 {
                g_sigma.at(b, c, 0, 0) / (n * sd)
            } else {
                0.0
            };
            for (o, &v) in out.plane_mut(b, c).iter_mut().zip(h.plane(b, c)) {
                *o = gm + gs * (v - m);
            }
        }
    }
    out
}

/// Spatially-varying scale and bias maps, shaped like the activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationMaps {
    pub lambda: Tensor4,
    pub beta: Tensor4,
}

impl ModulationMaps {
    pub fn new(lambda: Tensor4, beta: Tensor4) -> Result<Self> {
        ensure_same("ModulationMaps::new", lambda.shape(), beta.shape())?;
        Ok(ModulationMaps { lambda, beta })
    }

    /// Spatially constant maps from `(B, C, 1, 1)` vectors.
    pub fn constant(lambda_vec: &Tensor4, beta_vec: &Tensor4, h: usize, w: usize) -> Result<Self> {
        ensure_same(
            "ModulationMaps::constant",
            lambda_vec.shape(),
            beta_vec.shape(),
        )?;
        let vs = lambda_vec.shape();
        let shape = vs.with_hw(h, w);
        Ok(ModulationMaps {
            lambda: Tensor4::from_fn(shape, |b, c, _, _| lambda_vec.at(b, c, 0, 0)),
            beta: Tensor4::from_fn(shape, |b, c, _, _| beta_vec.at(b, c, 0, 0)),
        })
    }

    pub fn shape(&self) -> Shape4 {
        self.lambda.shape()
    }
}

/// Single-channel occlusion mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask(Tensor4);

impl OcclusionMask {
    pub fn new(m: Tensor4) -> Result<Self> {
        if m.shape().c != 1 {
            return Err(Error::shape(
                "OcclusionMask::new",
                alloc::format!("expected 1 channel, got {}", m.shape()),
            ));
        }
        if let Some(i) = m.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract(
                "OcclusionMask::new",
                alloc::format!("value {} at index {i} outside [0, 1]", m.data()[i]),
            ));
        }
        Ok(OcclusionMask(m))
    }

    pub fn ones(shape: Shape4) -> Self {
        OcclusionMask(Tensor4::full(shape.with_c(1), 1.0))
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }
}

fn check_region(region: &Tensor4, h: Shape4) -> Result<()> {
    if region.shape() != h.with_c(1) {
        return Err(Error::Dimension {
            op: "msawn",
            lhs: h,
            rhs: region.shape(),
        });
    }
    if let Some(i) = region.data().iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::contract(
            "msawn",
            alloc::format!("region mask not binary at index {i}"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormVariant {
    /// No warping, no blending.
    San,
    /// Warp the scale only; bias stays unwarped.
    Saws,
    /// Warp scale and bias; blend the warped scale with the activations.
    Sawn,
}

impl NormVariant {
    pub const ALL: [NormVariant; 3] = [NormVariant::San, NormVariant::Saws, NormVariant::Sawn];

    pub fn name(&self) -> &'static str {
        match self {
            NormVariant::San => "san",
            NormVariant::Saws => "saws",
            NormVariant::Sawn => "sawn",
        }
    }
}

impl fmt::Display for NormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "san" => Ok(NormVariant::San),
            "saws" => Ok(NormVariant::Saws),
            "sawn" => Ok(NormVariant::Sawn),
            _ => Err(Error::Config(alloc::format!("unknown variant `{s}`"))),
        }
    }
}

/// `λ(b,c) · h_norm + β(b,c)` with `(B, C, 1, 1)` scale and bias.
pub fn adain(h: &Tensor4, lambda_vec: &Tensor4, beta_vec: &Tensor4, eps: f64) -> Result<Tensor4> {
    let s = h.shape();
    let vs = Shape4::new(s.b, s.c, 1, 1);
    ensure_same("adain", vs, lambda_vec.shape())?;
    ensure_same("adain", vs, beta_vec.shape())?;
    let stats = instance_stats(h, eps);
    let mut out = normalized(h, &stats);
    for b in 0..s.b {
        for c in 0..s.c {
            let l = lambda_vec.at(b, c, 0, 0);
            let be = beta_vec.at(b, c, 0, 0);
            for v in out.plane_mut(b, c) {
                *v = l * *v + be;
            }
        }
    }
    Ok(out)
}

/// `λ ⊙ h_norm + β` with per-pixel maps.
pub fn sain(h: &Tensor4, maps: &ModulationMaps, eps: f64) -> Result<Tensor4> {
    ensure_same("sain", h.shape(), maps.lambda.shape())?;
    ensure_same("sain", h.shape(), maps.beta.shape())?;
    let hn = normalized(h, &instance_stats(h, eps));
    Ok(modulate(&maps.lambda, &hn, &maps.beta))
}

fn modulate(scale: &Tensor4, hn: &Tensor4, bias: &Tensor4) -> Tensor4 {
    let data = scale
        .data()
        .iter()
        .zip(hn.data())
        .zip(bias.data())
        .map(|((s, n), b)| s * n + b)
        .collect();
    Tensor4::from_raw(hn.shape(), data)
}

/// Bilinear warp of both maps by `flow` (`(B, 2, H, W)`, channels dy, dx).
pub fn warp_modulation(maps: &ModulationMaps, flow: &Tensor4) -> Result<ModulationMaps> {
    Ok(ModulationMaps {
        lambda: tensor::bilinear_sample(&maps.lambda, flow)?,
        beta: tensor::bilinear_sample(&maps.beta, flow)?,
    })
}

/// Everything the modulated output and its adjoint need.
struct SawnParts {
    stats: InstanceStats,
    h_norm: Tensor4,
    /// Warped λ (SAWS/SAWN) or λ itself (SAN).
    lambda_used: Tensor4,
    /// Effective scale: `lerp(λ̂, h, m)` for the warped variants, λ for SAN.
    scale: Tensor4,
    bias: Tensor4,
}

fn sawn_parts(
    h: &Tensor4,
    maps: &ModulationMaps,
    flow: &Tensor4,
    occ: &OcclusionMask,
    variant: NormVariant,
    eps: f64,
) -> Result<SawnParts> {
    let s = h.shape();
    ensure_same("sawn", s, maps.lambda.shape())?;
    ensure_same("sawn", s, maps.beta.shape())?;
    ensure_same("sawn", s.with_c(1), occ.tensor().shape())?;
    ensure_same("sawn", s.with_c(2), flow.shape())?;
    let stats = instance_stats(h, eps);
    let h_norm = normalized(h, &stats);
    let (lambda_used, scale, bias) = match variant {
        NormVariant::San => (maps.lambda.clone(), maps.lambda.clone(), maps.beta.clone()),
        NormVariant::Saws => {
            let lh = tensor::bilinear_sample(&maps.lambda, flow)?;
            let sc = tensor::lerp(&lh, h, occ.tensor())?;
            (lh, sc, maps.beta.clone())
        }
        NormVariant::Sawn => {
            let lh = tensor::bilinear_sample(&maps.lambda, flow)?;
            let sc = tensor::lerp(&lh, h, occ.tensor())?;
            let bh = tensor::bilinear_sample(&maps.beta, flow)?;
            (lh, sc, bh)
        }
    };
    Ok(SawnParts {
        stats,
        h_norm,
        lambda_used,
        scale,
        bias,
    })
}

/// Warped normalization. For [`NormVariant::Sawn`]:
/// `(λ̂ ⊙ m + h ⊙ (1 − m)) ⊙ h_norm + β̂` where `λ̂, β̂` are the maps
/// bilinearly warped by `flow` and `m` is broadcast over channels.
/// [`NormVariant::Saws`] keeps `β` unwarped; [`NormVariant::San`] is [`sain`].
pub fn sawn(
    h: &Tensor4,
    maps: &ModulationMaps,
    flow: &Tensor4,
    occ: &OcclusionMask,
    variant: NormVariant,
    eps: f64,
) -> Result<Tensor4> {
    let p = sawn_parts(h, maps, flow, occ, variant, eps)?;
    Ok(modulate(&p.scale, &p.h_norm, &p.bias))
}

/// Region-restricted SAWN: the warped branch inside `region`, the plain
/// `λ ⊙ h_norm + β` branch outside.
#[allow(clippy::too_many_arguments)]
pub fn msawn(
    h: &Tensor4,
    maps: &ModulationMaps,
    flow: &Tensor4,
    occ: &OcclusionMask,
    region: &Tensor4,
    variant: NormVariant,
    eps: f64,
) -> Result<Tensor4> {
    check_region(region, h.shape())?;
    let p = sawn_parts(h, maps, flow, occ, variant, eps)?;
    let warped = modulate(&p.scale, &p.h_norm, &p.bias);
    let plain = modulate(&maps.lambda, &p.h_norm, &maps.beta);
    tensor::lerp(&warped, &plain, region)
}

/// Gradients of SAWN / M-SAWN w.r.t. its differentiable inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormGrads {
    pub h: Tensor4,
    pub lambda: Tensor4,
    pub beta: Tensor4,
    pub flow: Tensor4,
    pub occ: Tensor4,
}

/// Adjoint of [`sawn`], or of [`msawn`] when `region` is given.
/// `need_flow = false` skips the flow gradient (returned as zeros).
#[allow(clippy::too_many_arguments)]
pub fn sawn_backward(
    h: &Tensor4,
    maps: &ModulationMaps,
    flow: &Tensor4,
    occ: &OcclusionMask,
    region: Option<&Tensor4>,
    variant: NormVariant,
    eps: f64,
    grad_out: &Tensor4,
    need_flow: bool,
) -> Result<NormGrads> {
    let s = h.shape();
    ensure_same("sawn_backward", s, grad_out.shape())?;
    if let Some(r) = region {
        check_region(r, s)?;
    }
    let p = sawn_parts(h, maps, flow, occ, variant, eps)?;
    let plane = s.plane();

    // Split the cotangent between the warped and plain branches.
    let (g_w, g_nw) = match region {
        None => (grad_out.clone(), None),
        Some(r) => {
            let mut gw = grad_out.clone();
            let mut gnw = grad_out.clone();
            for b in 0..s.b {
                let rp = r.plane(b, 0);
                for c in 0..s.c {
                    for ((a, n), &m) in gw
                        .plane_mut(b, c)
                        .iter_mut()
                        .zip(gnw.plane_mut(b, c).iter_mut())
                        .zip(rp)
                    {
                        *a *= m;
                        *n *= 1.0 - m;
                    }
                }
            }
            (gw, Some(gnw))
        }
    };

    let mut g_hn = Tensor4::zeros(s);
    let mut g_scale = Tensor4::zeros(s);
    for i in 0..s.len() {
        g_scale.data_mut()[i] = g_w.data()[i] * p.h_norm.data()[i];
        g_hn.data_mut()[i] = g_w.data()[i] * p.scale.data()[i];
    }
    let g_bias = g_w;

    let mut g_lambda;
    let mut g_beta;
    let mut g_h_direct = Tensor4::zeros(s);
    let mut g_occ = Tensor4::zeros(s.with_c(1));
    let mut g_flow = Tensor4::zeros(s.with_c(2));
    match variant {
        NormVariant::San => {
            g_lambda = g_scale;
            g_beta = g_bias;
        }
        NormVariant::Saws | NormVariant::Sawn => {
            let m = occ.tensor();
            let mut g_lh = Tensor4::zeros(s);
            for b in 0..s.b {
                let mp = m.plane(b, 0);
                for c in 0..s.c {
                    let base = (b * s.c + c) * plane;
                    let go = g_occ.plane_mut(b, 0);
                    for k in 0..plane {
                        let gs = g_scale.data()[base + k];
                        let mv = mp[k];
                        g_lh.data_mut()[base + k] = gs * mv;
                        g_h_direct.data_mut()[base + k] = gs * (1.0 - mv);
                        go[k] += gs * (p.lambda_used.data()[base + k] - h.data()[base + k]);
                    }
                }
            }
            let (gl, gf) = tensor::bilinear_sample_backward(&maps.lambda, flow, &g_lh, need_flow);
            g_lambda = gl;
            if let Some(gf) = gf {
                g_flow.add_assign(&gf)?;
            }
            if variant == NormVariant::Sawn {
                let (gb, gf) =
                    tensor::bilinear_sample_backward(&maps.beta, flow, &g_bias, need_flow);
                g_beta = gb;
                if let Some(gf) = gf {
                    g_flow.add_assign(&gf)?;
                }
            } else {
                g_beta = g_bias;
            }
        }
    }

    if let Some(gnw) = g_nw {
        for i in 0..s.len() {
            let gv = gnw.data()[i];
            g_lambda.data_mut()[i] += gv * p.h_norm.data()[i];
            g_beta.data_mut()[i] += gv;
            g_hn.data_mut()[i] += gv * maps.lambda.data()[i];
        }
    }

    let mut g_h = normalized_backward(&p.h_norm, &p.stats, &g_hn);
    g_h.add_assign(&g_h_direct)?;
    Ok(NormGrads {
        h: g_h,
        lambda: g_lambda,
        beta: g_beta,
        flow: g_flow,
        occ: g_occ,
    })
}

/// Normalization ops with a registered adjoint.
///
/// Input conventions: `InstanceStats [h]` → output `(B, 2C, 1, 1)` holding
/// μ then σ; `AdaIn [h, λ, β]` with `(B, C, 1, 1)` vectors; `Sain [h, λ, β]`;
/// `WarpModulation [λ, β, flow]` → λ̂ and β̂ concatenated on channels;
/// `Sawn [h, λ, β, flow, m]`; `Msawn [h, λ, β, flow, m, region]` where the
/// region is not differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOp {
    InstanceStats,
    AdaIn,
    Sain,
    WarpModulation,
    Sawn(NormVariant),
    Msawn(NormVariant),
}

impl NormOp {
    pub const ALL: [NormOp; 10] = [
        NormOp::InstanceStats,
        NormOp::AdaIn,
        NormOp::Sain,
        NormOp::WarpModulation,
        NormOp::Sawn(NormVariant::San),
        NormOp::Sawn(NormVariant::Saws),
        NormOp::Sawn(NormVariant::Sawn),
        NormOp::Msawn(NormVariant::San),
        NormOp::Msawn(NormVariant::Saws),
        NormOp::Msawn(NormVariant::Sawn),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NormOp::InstanceStats => "instance_stats",
            NormOp::AdaIn => "adain",
            NormOp::Sain => "sain",
            NormOp::WarpModulation => "warp_modulation",
            NormOp::Sawn(NormVariant::San) => "sawn_san",
            NormOp::Sawn(NormVariant::Saws) => "sawn_saws",
            NormOp::Sawn(NormVariant::Sawn) => "sawn",
            NormOp::Msawn(NormVariant::San) => "msawn_san",
            NormOp::Msawn(NormVariant::Saws) => "msawn_saws",
            NormOp::Msawn(NormVariant::Sawn) => "msawn",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            NormOp::InstanceStats => 1,
            NormOp::AdaIn | NormOp::Sain | NormOp::WarpModulation => 3,
            NormOp::Sawn(_) => 5,
            NormOp::Msawn(_) => 6,
        }
    }

    /// Number of leading inputs that receive a gradient.
    pub fn differentiable(&self) -> usize {
        match self {
            NormOp::Msawn(_) => 5,
            _ => self.arity(),
        }
    }
}

impl FromStr for NormOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

fn arity_check(op: NormOp, n: usize) -> Result<()> {
    if n == op.arity() {
        Ok(())
    } else {
        Err(Error::contract(
            op.name(),
            alloc::format!("expected {} inputs, got {n}", op.arity()),
        ))
    }
}

pub fn normalize_forward(op: NormOp, inputs: &[&Tensor4], eps: f64) -> Result<Tensor4> {
    arity_check(op, inputs.len())?;
    let maps = || ModulationMaps::new(inputs[1].clone(), inputs[2].clone());
    match op {
        NormOp::InstanceStats => {
            let st = instance_stats(inputs[0], eps);
            Tensor4::concat_channels(&[&st.mu, &st.sigma])
        }
        NormOp::AdaIn => adain(inputs[0], inputs[1], inputs[2], eps),
        NormOp::Sain => sain(inputs[0], &maps()?, eps),
        NormOp::WarpModulation => {
            let m = warp_modulation(
                &ModulationMaps::new(inputs[0].clone(), inputs[1].clone())?,
                inputs[2],
            )?;
            Tensor4::concat_channels(&[&m.lambda, &m.beta])
        }
        NormOp::Sawn(v) => sawn(
            inputs[0],
            &maps()?,
            inputs[3],
            &OcclusionMask::new(inputs[4].clone())?,
            v,
            eps,
        ),
        NormOp::Msawn(v) => msawn(
            inputs[0],
            &maps()?,
            inputs[3],
            &OcclusionMask::new(inputs[4].clone())?,
            inputs[5],
            v,
            eps,
        ),
    }
}

/// Vector–Jacobian product: gradients for the first
/// [`NormOp::differentiable`] inputs, in order.
pub fn normalize_vjp(
    op: NormOp,
    inputs: &[&Tensor4],
    grad_out: &Tensor4,
    eps: f64,
) -> Result<Vec<Tensor4>> {
    arity_check(op, inputs.len())?;
    match op {
        NormOp::InstanceStats => {
            let h = inputs[0];
            let s = h.shape();
            ensure_same(
                "instance_stats",
                Shape4::new(s.b, 2 * s.c, 1, 1),
                grad_out.shape(),
            )?;
            let st = instance_stats(h, eps);
            let g_mu = grad_out.channel_slice(0, s.c)?;
            let g_sigma = grad_out.channel_slice(s.c, s.c)?;
            Ok(vec![instance_stats_backward(h, &st, &g_mu, &g_sigma)])
        }
        NormOp::AdaIn => {
            let (h, l, be) = (inputs[0], inputs[1], inputs[2]);
            let s = h.shape();
            ensure_same("adain", s, grad_out.shape())?;
            ensure_same("adain", Shape4::new(s.b, s.c, 1, 1), l.shape())?;
            ensure_same("adain", l.shape(), be.shape())?;
            let st = instance_stats(h, eps);
            let hn = normalized(h, &st);
            let mut g_l = Tensor4::zeros(l.shape());
            let mut g_b = Tensor4::zeros(l.shape());
            let mut g_hn = Tensor4::zeros(s);
            for b in 0..s.b {
                for c in 0..s.c {
                    let lv = l.at(b, c, 0, 0);
                    let gp = grad_out.plane(b, c);
                    g_l.set(
                        b,
                        c,
                        0,
                        0,
                        gp.iter().zip(hn.plane(b, c)).map(|(g, n)| g * n).sum(),
                    );
                    g_b.set(b, c, 0, 0, gp.iter().sum());
                    for (o, &gv) in g_hn.plane_mut(b, c).iter_mut().zip(gp) {
                        *o = gv * lv;
                    }
                }
            }
            Ok(vec![normalized_backward(&hn, &st, &g_hn), g_l, g_b])
        }
        NormOp::Sain => {
            let maps = ModulationMaps::new(inputs[1].clone(), inputs[2].clone())?;
            let s = inputs[0].shape();
            let zero_flow = Tensor4::zeros(s.with_c(2));
            let g = sawn_backward(
                inputs[0],
                &maps,
                &zero_flow,
                &OcclusionMask::ones(s),
                None,
                NormVariant::San,
                eps,
                grad_out,
                false,
            )?;
            Ok(vec![g.h, g.lambda, g.beta])
        }
        NormOp::WarpModulation => {
            let (l, be, flow) = (inputs[0], inputs[1], inputs[2]);
            let c = l.shape().c;
            ensure_same("warp_modulation", l.shape().with_c(2 * c), grad_out.shape())?;
            let gl_out = grad_out.channel_slice(0, c)?;
            let gb_out = grad_out.channel_slice(c, c)?;
            let (gl, gf1) = tensor::bilinear_sample_backward(l, flow, &gl_out, true);
            let (gb, gf2) = tensor::bilinear_sample_backward(be, flow, &gb_out, true);
            let mut gf = gf1.expect("flow gradient requested");
            gf.add_assign(&gf2.expect("flow gradient requested"))?;
            Ok(vec![gl, gb, gf])
        }
        NormOp::Sawn(v) | NormOp::Msawn(v) => {
            let maps = ModulationMaps::new(inputs[1].clone(), inputs[2].clone())?;
            let occ = OcclusionMask::new(inputs[4].clone())?;
            let region = if let NormOp::Msawn(_) = op {
                Some(inputs[5])
            } else {
                None
            };
            let g = sawn_backward(
                inputs[0], &maps, inputs[3], &occ, region, v, eps, grad_out, true,
            )?;
            Ok(vec![g.h, g.lambda, g.beta, g.flow, g.occ])
        }
    }
}
