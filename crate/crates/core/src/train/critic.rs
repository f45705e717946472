use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{conv_backward, conv_relu, conv_relu_backward};
use crate::params::{push_conv, push_conv_mut, ParamSet, Slot};
use crate::tensor::{self, ConvKernel, Tensor4};

/// Patch critic: three `conv → 2×2 pool` layers (ReLU on the first two),
/// emitting one score per 8×8 patch.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub layers: Vec<ConvKernel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvSide {
    Critic,
    Generator,
}

pub(crate) struct CriticCache {
    inputs: Vec<Tensor4>,
    acts: Vec<Tensor4>,
}

impl CriticParams {
    pub fn init(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CriticParams {
            layers: alloc::vec![
                ConvKernel::random(width, 3, &mut rng),
                ConvKernel::random(2 * width, width, &mut rng),
                ConvKernel::random(1, 2 * width, &mut rng),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        CriticParams {
            layers: self
                .layers
                .iter()
                .map(|k| ConvKernel::zeros(k.c_out(), k.c_in()))
                .collect(),
        }
    }

    /// Patch score map.
    pub fn score(&self, x: &Tensor4) -> Result<Tensor4> {
        let cache = self.forward(x)?;
        tensor::avgpool2x(cache.acts.last().expect("three layers"))
    }

    pub(crate) fn forward(&self, x: &Tensor4) -> Result<CriticCache> {
        let mut inputs = Vec::new();
        let mut acts: Vec<Tensor4> = Vec::new();
        let last = self.layers.len() - 1;
        for (i, k) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                x.clone()
            } else {
                tensor::avgpool2x(&acts[i - 1])?
            };
            let a = if i == last {
                tensor::conv2d(&input, k)?
            } else {
                conv_relu(&input, k)?
            };
            acts.push(a);
            inputs.push(input);
        }
        Ok(CriticCache { inputs, acts })
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when asked.
    pub(crate) fn backward(
        &self,
        cache: &CriticCache,
        g_score: &Tensor4,
        grads: &mut CriticParams,
        need_input: bool,
    ) -> Option<Tensor4> {
        let last = self.layers.len() - 1;
        let mut g = tensor::avgpool2x_backward(g_score);
        for i in (0..=last).rev() {
            let need = i > 0 || need_input;
            let gx = if i == last {
                conv_backward(
                    &cache.inputs[i],
                    &self.layers[i],
                    &g,
                    &mut grads.layers[i],
                    need,
                )
            } else {
                conv_relu_backward(
                    &cache.inputs[i],
                    &self.layers[i],
                    &cache.acts[i],
                    &g,
                    &mut grads.layers[i],
                    need,
                )
            };
            match gx {
                Some(gx) if i > 0 => g = tensor::avgpool2x_backward(&gx),
                other => return other,
            }
        }
        None
    }
}

impl ParamSet for CriticParams {
    fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        for (i, k) in self.layers.iter().enumerate() {
            push_conv(&mut out, alloc::format!("critic.{i}"), k, true);
        }
        out
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for k in &mut self.layers {
            push_conv_mut(&mut out, k, true);
        }
        out
    }
}

fn lsq(score: &Tensor4, target: f64) -> (f64, Tensor4) {
    let n = score.data().len() as f64;
    let v = score
        .data()
        .iter()
        .map(|d| (d - target) * (d - target))
        .sum::<f64>()
        / n;
    (v, score.map(|d| 2.0 * (d - target) / n))
}

/// Least-squares adversarial loss. Critic side:
/// `mean((D(real) − 1)²) + mean(D(fake)²)`; generator side:
/// `mean((D(fake) − 1)²)`.
pub fn adv_loss(
    critic: &CriticParams,
    real: &Tensor4,
    fake: &Tensor4,
    side: AdvSide,
) -> Result<f64> {
    tensor::ensure_same("adv_loss", real.shape(), fake.shape())?;
    let fake_score = critic.score(fake)?;
    Ok(match side {
        AdvSide::Generator => lsq(&fake_score, 1.0).0,
        AdvSide::Critic => lsq(&critic.score(real)?, 1.0).0 + lsq(&fake_score, 0.0).0,
    })
}

/// Critic-side loss and its parameter gradients.
pub fn critic_loss_and_grad(
    critic: &CriticParams,
    real: &Tensor4,
    fake: &Tensor4,
) -> Result<(f64, CriticParams)> {
    tensor::ensure_same("adv_loss", real.shape(), fake.shape())?;
    let mut grads = critic.zeros_like();
    let mut total = 0.0;
    for (x, target) in [(real, 1.0), (fake, 0.0)] {
        let cache = critic.forward(x)?;
        let score = tensor::avgpool2x(cache.acts.last().expect("three layers"))?;
        let (v, g) = lsq(&score, target);
        total += v;
        critic.backward(&cache, &g, &mut grads, false);
    }
    Ok((total, grads))
}

/// Generator-side loss and its gradient w.r.t. `fake`.
pub fn generator_adv_loss_and_grad(
    critic: &CriticParams,
    fake: &Tensor4,
) -> Result<(f64, Tensor4)> {
    let cache = critic.forward(fake)?;
    let score = tensor::avgpool2x(cache.acts.last().expect("three layers"))?;
    let (v, g) = lsq(&score, 1.0);
    let mut scratch = critic.zeros_like();
    let gx = critic
        .backward(&cache, &g, &mut scratch, true)
        .expect("input gradient requested");
    Ok((v, gx))
}
