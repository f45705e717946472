use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{conv_relu, conv_relu_backward};
use crate::params::{push_conv, push_conv_mut, ParamSet, Slot};
use crate::tensor::{self, ensure_same, ConvKernel, Shape4, Tensor4};

/// Mean absolute difference.
pub fn l1_loss(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    ensure_same("l1_loss", a.shape(), b.shape())?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Subgradient of [`l1_loss`] w.r.t. `a` (zero where `a == b`).
pub fn l1_loss_grad(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    ensure_same("l1_loss", a.shape(), b.shape())?;
    let n = a.data().len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| sign(x - y) / n)
        .collect();
    Tensor4::new(a.shape(), data)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mask_support(op: &'static str, a: &Tensor4, mask: &Tensor4) -> Result<f64> {
    let s = a.shape();
    if mask.shape() != s.with_c(1) && mask.shape() != s {
        return Err(Error::Dimension {
            op,
            lhs: s,
            rhs: mask.shape(),
        });
    }
    let per_channel = if mask.shape().c == 1 { s.c as f64 } else { 1.0 };
    let support = mask.sum() * per_channel;
    if support <= 0.0 {
        return Err(Error::contract(op, "mask has empty support"));
    }
    Ok(support)
}

/// `Σ mask·|a − b| / Σ mask` over all channels; `mask` may be single-channel.
pub fn masked_l1(a: &Tensor4, b: &Tensor4, mask: &Tensor4) -> Result<f64> {
    ensure_same("masked_l1", a.shape(), b.shape())?;
    let support = mask_support("masked_l1", a, mask)?;
    let diff = tensor::sub(a, b)?.map(f64::abs);
    Ok(tensor::mul(&diff, mask)?.sum() / support)
}

pub fn masked_l1_grad(a: &Tensor4, b: &Tensor4, mask: &Tensor4) -> Result<Tensor4> {
    ensure_same("masked_l1", a.shape(), b.shape())?;
    let support = mask_support("masked_l1", a, mask)?;
    let sgn = tensor::sub(a, b)?.map(|d| sign(d) / support);
    tensor::mul(&sgn, mask)
}

/// Frozen random conv stack standing in for a pretrained feature network:
/// `relu(conv)` at full resolution, then 2×2 pooling and a second
/// `relu(conv)`. No biases, so the features are positively homogeneous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureProjector {
    pub levels: Vec<ConvKernel>,
}

pub(crate) struct ProjectorCache {
    inputs: Vec<Tensor4>,
    feats: Vec<Tensor4>,
}

impl FeatureProjector {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureProjector {
            levels: alloc::vec![
                ConvKernel::random(8, 3, &mut rng),
                ConvKernel::random(16, 8, &mut rng)
            ],
        }
    }

    pub fn project(&self, x: &Tensor4) -> Result<Vec<Tensor4>> {
        Ok(self.forward(x)?.feats)
    }

    fn forward(&self, x: &Tensor4) -> Result<ProjectorCache> {
        let mut inputs = Vec::new();
        let mut feats: Vec<Tensor4> = Vec::new();
        for (i, k) in self.levels.iter().enumerate() {
            let input = if i == 0 {
                x.clone()
            } else {
                tensor::avgpool2x(&feats[i - 1])?
            };
            feats.push(conv_relu(&input, k)?);
            inputs.push(input);
        }
        Ok(ProjectorCache { inputs, feats })
    }

    fn backward(&self, cache: &ProjectorCache, mut g_feats: Vec<Tensor4>) -> Tensor4 {
        let mut scratch: Vec<ConvKernel> = self
            .levels
            .iter()
            .map(|k| ConvKernel::zeros(k.c_out(), k.c_in()))
            .collect();
        let mut g_x = None;
        for i in (0..self.levels.len()).rev() {
            let gx = conv_relu_backward(
                &cache.inputs[i],
                &self.levels[i],
                &cache.feats[i],
                &g_feats[i],
                &mut scratch[i],
                true,
            )
            .expect("input gradient requested");
            if i > 0 {
                let up = tensor::avgpool2x_backward(&gx);
                g_feats[i - 1]
                    .add_assign(&up)
                    .expect("matching feature shapes");
            } else {
                g_x = Some(gx);
            }
        }
        g_x.expect("at least one level")
    }
}

impl ParamSet for FeatureProjector {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (i, k) in self.levels.iter().enumerate() {
            push_conv(&mut out, alloc::format!("projector.{i}"), k, false);
        }
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for k in &mut self.levels {
            push_conv_mut(&mut out, k, false);
        }
        out
    }
}

/// Channel Gram matrix per batch item, `G[c][c'] = Σ_p F_c F_c' / (C·H·W)`,
/// returned as a `(B, 1, C, C)` tensor.
pub fn gram(f: &Tensor4) -> Tensor4 {
    let s = f.shape();
    let norm = (s.c * s.plane()) as f64;
    let mut g = Tensor4::zeros(Shape4::new(s.b, 1, s.c, s.c));
    for b in 0..s.b {
        for i in 0..s.c {
            for j in i..s.c {
                let v = f
                    .plane(b, i)
                    .iter()
                    .zip(f.plane(b, j))
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / norm;
                g.set(b, 0, i, j, v);
                g.set(b, 0, j, i, v);
            }
        }
    }
    g
}

fn gram_loss_and_grad(fa: &Tensor4, fb: &Tensor4) -> (f64, Tensor4) {
    let s = fa.shape();
    let norm = (s.c * s.plane()) as f64;
    let (ga, gb) = (gram(fa), gram(fb));
    let mut loss = 0.0;
    let mut g = Tensor4::zeros(s);
    for b in 0..s.b {
        for i in 0..s.c {
            for j in 0..s.c {
                let d = ga.at(b, 0, i, j) - gb.at(b, 0, i, j);
                loss += d * d;
                // dL/dF_i = Σ_j 2 D_ij · 2 F_j / N  (D symmetric)
                let coeff = 4.0 * d / norm;
                if coeff != 0.0 {
                    let src = fa.plane(b, j).to_vec();
                    for (o, v) in g.plane_mut(b, i).iter_mut().zip(src) {
                        *o += coeff * v;
                    }
                }
            }
        }
    }
    let bn = s.b as f64;
    g.scale_assign(1.0 / bn);
    (loss / bn, g)
}

/// Sum over projector levels of the squared Frobenius distance between
/// Gram matrices, averaged over the batch.
pub fn gram_style_loss(a: &Tensor4, b: &Tensor4, proj: &FeatureProjector) -> Result<f64> {
    Ok(style_loss_and_grad(a, b, proj)?.0)
}

pub fn style_loss_and_grad(
    a: &Tensor4,
    b: &Tensor4,
    proj: &FeatureProjector,
) -> Result<(f64, Tensor4)> {
    ensure_same("gram_style_loss", a.shape(), b.shape())?;
    let ca = proj.forward(a)?;
    let fb = proj.project(b)?;
    let mut total = 0.0;
    let mut g_feats = Vec::new();
    for (fa, fb) in ca.feats.iter().zip(&fb) {
        let (l, g) = gram_loss_and_grad(fa, fb);
        total += l;
        g_feats.push(g);
    }
    Ok((total, proj.backward(&ca, g_feats)))
}

/// Sum over projector levels of the mean squared feature difference.
pub fn content_loss(a: &Tensor4, b: &Tensor4, proj: &FeatureProjector) -> Result<f64> {
    Ok(content_loss_and_grad(a, b, proj)?.0)
}

pub fn content_loss_and_grad(
    a: &Tensor4,
    b: &Tensor4,
    proj: &FeatureProjector,
) -> Result<(f64, Tensor4)> {
    ensure_same("content_loss", a.shape(), b.shape())?;
    let ca = proj.forward(a)?;
    let fb = proj.project(b)?;
    let mut total = 0.0;
    let mut g_feats = Vec::new();
    for (fa, fb) in ca.feats.iter().zip(&fb) {
        let n = fa.data().len() as f64;
        let diff = tensor::sub(fa, fb)?;
        total += diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        g_feats.push(tensor::scale(&diff, 2.0 / n));
    }
    Ok((total, proj.backward(&ca, g_feats)))
}

/// Weights of the adversarial, L1 reconstruction, style and content terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 2.0,
            lambda2: 5.0,
            lambda3: 0.5,
            lambda4: 0.0025,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(alloc::format!(
                    "loss weight {name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub adv: f64,
    pub recon: f64,
    pub style: f64,
    pub content: f64,
}

impl LossTerms {
    pub fn add(&mut self, o: &LossTerms) {
        self.adv += o.adv;
        self.recon += o.recon;
        self.style += o.style;
        self.content += o.content;
    }

    pub fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            adv: self.adv * s,
            recon: self.recon * s,
            style: self.style * s,
            content: self.content * s,
        }
    }
}

/// `λ1·adv + λ2·recon + λ3·style + λ4·content`.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("adv", terms.adv),
        ("recon", terms.recon),
        ("style", terms.style),
        ("content", terms.content),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name });
        }
    }
    Ok(w.lambda1 * terms.adv
        + w.lambda2 * terms.recon
        + w.lambda3 * terms.style
        + w.lambda4 * terms.content)
}
