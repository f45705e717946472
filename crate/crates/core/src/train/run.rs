use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, adam_step_masked, OptimState, DEFAULT_LR};
use super::critic::{critic_loss_and_grad, generator_adv_loss_and_grad, CriticParams};
use super::exec::Executor;
use super::losses::{
    content_loss_and_grad, l1_loss, l1_loss_grad, masked_l1, style_loss_and_grad, total_loss,
    FeatureProjector, LossTerms, LossWeights,
};
use super::mix_seed;
use crate::error::{Error, Result};
use crate::model::{
    backward, forward, stpr_inputs, GeneratorInput, ModelConfig, ModelParams, StyleMode,
};
use crate::normalize::NormVariant;
use crate::params::ParamSet;
use crate::synth::{Appearance, Motion, Part, SceneSpec, SynthScene};
use crate::tensor::{self, Tensor4};

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_STPR: u64 = 3;
const STREAM_STPR_EVAL: u64 = 4;
const STREAM_REFERENCE: u64 = 5;

/// How each scene's motion is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionSource {
    /// Rotation about the centre plus a shift, drawn per scene.
    Random {
        max_shift: f64,
        max_deg: f64,
    },
    Fixed(Motion),
}

impl MotionSource {
    fn draw(&self, seed: u64) -> Motion {
        match *self {
            MotionSource::Random { max_shift, max_deg } => {
                Motion::random(&mut ChaCha8Rng::seed_from_u64(seed), max_shift, max_deg)
            }
            MotionSource::Fixed(m) => m,
        }
    }
}

/// Where training and held-out scenes come from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub scene: SceneSpec,
    pub train_motion: MotionSource,
    pub eval_motion: MotionSource,
    /// Every scene shares one appearance (free-map models need this).
    pub fixed_appearance: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        let m = MotionSource::Random {
            max_shift: 4.0,
            max_deg: 15.0,
        };
        DataSpec {
            scene: SceneSpec::default(),
            train_motion: m,
            eval_motion: m,
            fixed_appearance: false,
        }
    }
}

impl DataSpec {
    fn scene(&self, seed: u64, stream: u64, idx: u64, motion: &MotionSource) -> Result<SynthScene> {
        let scene_seed = mix_seed(seed, stream, idx);
        let app_seed = if self.fixed_appearance {
            mix_seed(seed, 0, 0)
        } else {
            scene_seed
        };
        let spec = self
            .scene
            .with_motion(motion.draw(mix_seed(scene_seed, 7, 0)));
        SynthScene::render(scene_seed, &spec, &Appearance::sample(app_seed, &spec)?)
    }

    /// Every training scene is the same one.
    fn degenerate(&self) -> bool {
        self.fixed_appearance && matches!(self.train_motion, MotionSource::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub data: DataSpec,
    pub model: ModelConfig,
    pub variant: NormVariant,
    pub adversarial: bool,
    pub weights: LossWeights,
    pub critic_width: usize,
    pub eval_scenes: usize,
    /// A batch loss above this aborts the run.
    pub max_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 300,
            batch: 4,
            lr: DEFAULT_LR,
            data: DataSpec::default(),
            model: ModelConfig::default(),
            variant: NormVariant::Sawn,
            adversarial: true,
            weights: LossWeights::default(),
            critic_width: 8,
            eval_scenes: 8,
            max_loss: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.scene.validate()?;
        self.weights.validate()?;
        if self.model.height != self.data.scene.height
            || self.model.width != self.data.scene.width
            || self.model.scales != self.data.scene.scales
        {
            return Err(Error::Config("model and scene geometry differ".into()));
        }
        if self.batch == 0 || self.eval_scenes == 0 {
            return Err(Error::Config(
                "batch and eval_scenes must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "bad learning rate {}",
                self.lr
            )));
        }
        if self.adversarial && self.critic_width == 0 {
            return Err(Error::Config("critic_width must be positive".into()));
        }
        Ok(())
    }

    fn projector(&self) -> FeatureProjector {
        FeatureProjector::new(mix_seed(self.seed, 0xFEA7, 0))
    }
}

/// Losses at one step. Row 0 is measured before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub terms: LossTerms,
    pub total: f64,
    /// Held-out metric, present on the first and last rows: pose-transfer
    /// L1 when training, non-target L1 when finetuning part replacement.
    pub heldout_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub rows: Vec<StepMetrics>,
}

impl TrainTrace {
    pub fn initial_heldout(&self) -> Option<f64> {
        self.rows.first().and_then(|r| r.heldout_l1)
    }

    pub fn final_heldout(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.heldout_l1)
    }
}

/// A failed run with everything recorded up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct Aborted {
    pub error: Error,
    pub trace: TrainTrace,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} recorded steps)",
            self.error,
            self.trace.rows.len()
        )
    }
}

impl core::error::Error for Aborted {}

impl From<Error> for Aborted {
    fn from(error: Error) -> Self {
        Aborted {
            error,
            trace: TrainTrace::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub critic: Option<CriticParams>,
    pub projector: FeatureProjector,
    pub trace: TrainTrace,
}

struct Sample {
    input: GeneratorInput,
    target: Tensor4,
}

struct SampleGrads {
    terms: LossTerms,
    grads: ModelParams,
    critic: Option<CriticParams>,
}

struct Objective<'a> {
    model: &'a ModelConfig,
    variant: NormVariant,
    weights: LossWeights,
    projector: &'a FeatureProjector,
}

impl Objective<'_> {
    /// Loss terms and the weighted image cotangent.
    fn image_terms(
        &self,
        image: &Tensor4,
        target: &Tensor4,
        critic: Option<&CriticParams>,
    ) -> Result<(LossTerms, Tensor4)> {
        let w = &self.weights;
        let mut terms = LossTerms {
            recon: l1_loss(image, target)?,
            ..LossTerms::default()
        };
        let mut g = tensor::scale(&l1_loss_grad(image, target)?, w.lambda2);
        if w.lambda3 > 0.0 {
            let (v, gs) = style_loss_and_grad(image, target, self.projector)?;
            terms.style = v;
            g.add_assign(&tensor::scale(&gs, w.lambda3))?;
        }
        if w.lambda4 > 0.0 {
            let (v, gc) = content_loss_and_grad(image, target, self.projector)?;
            terms.content = v;
            g.add_assign(&tensor::scale(&gc, w.lambda4))?;
        }
        if let Some(c) = critic {
            let (v, ga) = generator_adv_loss_and_grad(c, image)?;
            terms.adv = v;
            g.add_assign(&tensor::scale(&ga, w.lambda1))?;
        }
        Ok((terms, g))
    }

    fn terms(
        &self,
        params: &ModelParams,
        s: &Sample,
        critic: Option<&CriticParams>,
    ) -> Result<LossTerms> {
        let (image, _) = forward(params, self.model, &s.input, self.variant)?;
        Ok(self.image_terms(&image, &s.target, critic)?.0)
    }

    fn grads(
        &self,
        params: &ModelParams,
        s: &Sample,
        critic: Option<&CriticParams>,
    ) -> Result<SampleGrads> {
        let (image, cache) = forward(params, self.model, &s.input, self.variant)?;
        let (terms, g) = self.image_terms(&image, &s.target, critic)?;
        let grads = backward(params, self.model, &s.input, self.variant, &cache, &g)?;
        let critic = match critic {
            Some(c) => Some(critic_loss_and_grad(c, &s.target, &image)?.1),
            None => None,
        };
        Ok(SampleGrads {
            terms,
            grads,
            critic,
        })
    }
}

struct Loop<'a, E: Executor> {
    cfg: &'a TrainConfig,
    steps: usize,
    lr: f64,
    exec: &'a E,
    objective: Objective<'a>,
    /// Number of distinct samples per step, and the sampler.
    per_step: usize,
    sample: &'a (dyn Fn(usize, usize) -> Result<Sample> + Sync),
    heldout: &'a (dyn Fn(&ModelParams) -> Result<f64> + Sync),
    trainable: Option<Vec<bool>>,
}

impl<E: Executor> Loop<'_, E> {
    fn run(
        &self,
        params: &mut ModelParams,
        critic: &mut Option<CriticParams>,
        trace: &mut TrainTrace,
    ) -> Result<()> {
        let n = self.per_step;
        let w = &self.cfg.weights;
        let mut opt = OptimState::new(params, self.lr);
        let mut copt = critic.as_ref().map(|c| OptimState::new(c, self.lr));

        let initial = {
            let (p, c) = (&*params, critic.as_ref());
            let all = self
                .exec
                .map(n, &|i| self.objective.terms(p, &(self.sample)(0, i)?, c));
            mean_terms(all)?
        };
        trace.rows.push(StepMetrics {
            step: 0,
            terms: initial,
            total: total_loss(&initial, w)?,
            heldout_l1: Some((self.heldout)(params)?),
        });

        for step in 1..=self.steps {
            let results = {
                let (p, c) = (&*params, critic.as_ref());
                self.exec
                    .map(n, &|i| self.objective.grads(p, &(self.sample)(step, i)?, c))
            };
            let mut terms = LossTerms::default();
            let mut grads = params.zeros_like();
            let mut cgrads = critic.as_ref().map(CriticParams::zeros_like);
            for r in results {
                let r = r?;
                terms.add(&r.terms);
                grads.accumulate(&r.grads);
                if let (Some(acc), Some(g)) = (cgrads.as_mut(), r.critic.as_ref()) {
                    accumulate(acc, g);
                }
            }
            let inv = 1.0 / n as f64;
            let terms = terms.scaled(inv);
            let total = total_loss(&terms, w)?;
            if total > self.cfg.max_loss {
                return Err(Error::Diverged { step, loss: total });
            }
            grads.scale(inv);
            adam_step_masked(params, &grads, &mut opt, self.trainable.as_deref())?;
            if let (Some(c), Some(g), Some(o)) = (critic.as_mut(), cgrads.as_mut(), copt.as_mut()) {
                scale(g, inv);
                adam_step(c, g, o)?;
            }
            let heldout_l1 = if step == self.steps {
                Some((self.heldout)(params)?)
            } else {
                None
            };
            trace.rows.push(StepMetrics {
                step,
                terms,
                total,
                heldout_l1,
            });
        }
        Ok(())
    }
}

fn mean_terms(all: Vec<Result<LossTerms>>) -> Result<LossTerms> {
    let n = all.len() as f64;
    let mut acc = LossTerms::default();
    for t in all {
        acc.add(&t?);
    }
    Ok(acc.scaled(1.0 / n))
}

fn accumulate(dst: &mut dyn ParamSet, src: &dyn ParamSet) {
    let src: Vec<Vec<f64>> = src.slots().iter().map(|s| s.data.to_vec()).collect();
    for (d, s) in dst.slots_mut().into_iter().zip(src) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}

fn scale(dst: &mut dyn ParamSet, s: f64) {
    for d in dst.slots_mut() {
        for a in d {
            *a *= s;
        }
    }
}

/// Held-out pose-transfer scene `i`.
pub fn eval_scene(cfg: &TrainConfig, i: usize) -> Result<SynthScene> {
    cfg.data
        .scene(cfg.seed, STREAM_EVAL, i as u64, &cfg.data.eval_motion)
}

/// Mean held-out pose-transfer L1 over `cfg.eval_scenes` scenes drawn from
/// the evaluation stream.
pub fn evaluate_pose_transfer<E: Executor>(
    params: &ModelParams,
    cfg: &TrainConfig,
    exec: &E,
) -> Result<f64> {
    let all = exec.map(cfg.eval_scenes, &|i| {
        let scene = eval_scene(cfg, i)?;
        let input = GeneratorInput::pose_transfer(&scene)?;
        let (image, _) = forward(params, &cfg.model, &input, cfg.variant)?;
        l1_loss(&image, &scene.x_t)
    });
    let mut sum = 0.0;
    for v in &all {
        sum += v.clone()?;
    }
    Ok(sum / all.len() as f64)
}

/// Seed-derived initial parameters for `cfg`.
pub fn initial_params(cfg: &TrainConfig) -> Result<ModelParams> {
    ModelParams::init(&cfg.model, mix_seed(cfg.seed, 0x1417, 0))
}

/// Optimizes a freshly initialized model (and critic, when adversarial) on
/// pose transfer between scene pairs.
pub fn train_pose_transfer<E: Executor>(
    cfg: &TrainConfig,
    exec: &E,
) -> core::result::Result<TrainOutcome, Aborted> {
    cfg.validate()?;
    train_pose_transfer_from(initial_params(cfg)?, cfg, None, exec)
}

/// As [`train_pose_transfer`], starting from `params` and updating only
/// slots with `trainable[i] == true` when a mask is given.
pub fn train_pose_transfer_from<E: Executor>(
    mut params: ModelParams,
    cfg: &TrainConfig,
    trainable: Option<Vec<bool>>,
    exec: &E,
) -> core::result::Result<TrainOutcome, Aborted> {
    cfg.validate()?;
    if trainable
        .as_ref()
        .is_some_and(|t| t.len() != params.slots().len())
    {
        return Err(
            Error::Config("trainable mask does not match the parameter layout".into()).into(),
        );
    }
    let projector = cfg.projector();
    let mut critic = cfg
        .adversarial
        .then(|| CriticParams::init(cfg.critic_width, mix_seed(cfg.seed, 0xC41C, 0)));
    let per_step = if cfg.data.degenerate() { 1 } else { cfg.batch };
    let sample = |step: usize, i: usize| -> Result<Sample> {
        let idx = if cfg.data.degenerate() {
            0
        } else {
            (step * cfg.batch + i) as u64
        };
        let scene = cfg
            .data
            .scene(cfg.seed, STREAM_TRAIN, idx, &cfg.data.train_motion)?;
        Ok(Sample {
            input: GeneratorInput::pose_transfer(&scene)?,
            target: scene.x_t,
        })
    };
    let heldout = |p: &ModelParams| evaluate_pose_transfer(p, cfg, exec);
    let lp = Loop {
        cfg,
        steps: cfg.steps,
        lr: cfg.lr,
        exec,
        objective: Objective {
            model: &cfg.model,
            variant: cfg.variant,
            weights: cfg.weights,
            projector: &projector,
        },
        per_step,
        sample: &sample,
        heldout: &heldout,
        trainable,
    };
    let mut trace = TrainTrace::default();
    match lp.run(&mut params, &mut critic, &mut trace) {
        Ok(()) => Ok(TrainOutcome {
            params,
            critic,
            projector,
            trace,
        }),
        Err(error) => Err(Aborted { error, trace }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StprConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Only the decoder and output layers are updated.
    pub freeze_encoders: bool,
    /// Replace each part with itself under identity motion: plain
    /// reconstruction through the part-replacement path.
    pub self_replacement: bool,
    pub eval_scenes: usize,
}

impl Default for StprConfig {
    fn default() -> Self {
        StprConfig {
            steps: 100,
            batch: 4,
            lr: DEFAULT_LR,
            freeze_encoders: false,
            self_replacement: false,
            eval_scenes: 8,
        }
    }
}

/// Part-replacement quality on held-out scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StprMetrics {
    /// L1 inside the replaced region against the source rendered with the
    /// reference's texture for that part.
    pub target_l1: f64,
    /// L1 outside the replaced region against the untouched source.
    pub nontarget_l1: f64,
}

#[derive(Debug, Clone)]
pub struct StprOutcome {
    pub params: ModelParams,
    pub trace: TrainTrace,
    pub before: StprMetrics,
    pub after: StprMetrics,
    /// Held-out pose-transfer L1 before and after the finetune.
    pub heldout_before: f64,
    pub heldout_after: f64,
}

const EDIT_PARTS: [Part; 3] = [Part::Top, Part::Pants, Part::Hair];

/// Scene, replaced part, reference image and ground truth for held-out
/// part-replacement example `i`.
pub fn stpr_eval_case(cfg: &TrainConfig, i: usize) -> Result<(SynthScene, Part, Tensor4, Tensor4)> {
    let part = EDIT_PARTS[i % EDIT_PARTS.len()];
    let scene_seed = mix_seed(cfg.seed, STREAM_STPR_EVAL, i as u64);
    let spec = cfg
        .data
        .scene
        .with_motion(cfg.data.eval_motion.draw(mix_seed(scene_seed, 7, 0)));
    let own = Appearance::sample(scene_seed, &spec)?;
    let other = Appearance::sample(mix_seed(cfg.seed, STREAM_REFERENCE, i as u64), &spec)?;
    let scene = SynthScene::render(scene_seed, &spec, &own)?;
    let swapped = SynthScene::render(scene_seed, &spec, &own.with_part_texture_from(part, &other))?;
    Ok((scene, part, swapped.x_t, swapped.x_s))
}

/// Mean target / non-target L1 of part replacement on held-out scenes.
pub fn evaluate_stpr<E: Executor>(
    params: &ModelParams,
    cfg: &TrainConfig,
    n: usize,
    exec: &E,
) -> Result<StprMetrics> {
    let all = exec.map(n, &|i| {
        let (scene, part, reference, truth) = stpr_eval_case(cfg, i)?;
        let input = stpr_inputs(&scene, part, Some(&reference))?;
        let (image, _) = forward(params, &cfg.model, &input, cfg.variant)?;
        let m = scene.region_masks_s.mask(part);
        let outside = m.map(|v| 1.0 - v);
        Ok((
            masked_l1(&image, &truth, m)?,
            masked_l1(&image, &scene.x_s, &outside)?,
        ))
    });
    let (mut t, mut o) = (0.0, 0.0);
    for r in &all {
        let (a, b): (f64, f64) = r.clone()?;
        t += a;
        o += b;
    }
    let n = all.len() as f64;
    Ok(StprMetrics {
        target_l1: t / n,
        nontarget_l1: o / n,
    })
}

/// Finetunes by reconstructing `x_s` with one random part's style taken
/// from `x_t`, warped back by the inverse motion and routed through M-SAWN.
pub fn finetune_stpr<E: Executor>(
    pretrained: &ModelParams,
    critic: Option<&CriticParams>,
    cfg: &TrainConfig,
    stpr: &StprConfig,
    exec: &E,
) -> core::result::Result<StprOutcome, Aborted> {
    cfg.validate()?;
    if cfg.model.style_mode != StyleMode::Encoder {
        return Err(Error::Config("part replacement needs the style encoder".into()).into());
    }
    if stpr.batch == 0 || stpr.eval_scenes == 0 {
        return Err(Error::Config("batch and eval_scenes must be positive".into()).into());
    }
    let mut params = pretrained.clone();
    let before = evaluate_stpr(&params, cfg, stpr.eval_scenes, exec)?;
    let heldout_before = evaluate_pose_transfer(&params, cfg, exec)?;
    let projector = cfg.projector();
    let mut critic =
        if cfg.adversarial {
            Some(critic.cloned().unwrap_or_else(|| {
                CriticParams::init(cfg.critic_width, mix_seed(cfg.seed, 0xC41C, 0))
            }))
        } else {
            None
        };
    let sample = |step: usize, i: usize| -> Result<Sample> {
        let idx = (step * stpr.batch + i) as u64;
        let seed = mix_seed(cfg.seed, STREAM_STPR, idx);
        let motion = if stpr.self_replacement {
            MotionSource::Fixed(Motion::Identity)
        } else {
            cfg.data.train_motion
        };
        let scene = cfg.data.scene(cfg.seed, STREAM_STPR, idx, &motion)?;
        let part = EDIT_PARTS[ChaCha8Rng::seed_from_u64(seed).random_range(0..EDIT_PARTS.len())];
        Ok(Sample {
            input: stpr_inputs(&scene, part, None)?,
            target: scene.x_s,
        })
    };
    let heldout = |p: &ModelParams| Ok(evaluate_stpr(p, cfg, stpr.eval_scenes, exec)?.nontarget_l1);
    let trainable = stpr.freeze_encoders.then(|| {
        params
            .slots()
            .iter()
            .map(|s| !ModelParams::is_encoder_slot(&s.name))
            .collect()
    });
    let lp = Loop {
        cfg,
        steps: stpr.steps,
        lr: stpr.lr,
        exec,
        objective: Objective {
            model: &cfg.model,
            variant: cfg.variant,
            weights: cfg.weights,
            projector: &projector,
        },
        per_step: stpr.batch,
        sample: &sample,
        heldout: &heldout,
        trainable,
    };
    let mut trace = TrainTrace::default();
    if let Err(error) = lp.run(&mut params, &mut critic, &mut trace) {
        return Err(Aborted { error, trace });
    }
    let after = evaluate_stpr(&params, cfg, stpr.eval_scenes, exec)?;
    let heldout_after = evaluate_pose_transfer(&params, cfg, exec)?;
    Ok(StprOutcome {
        params,
        trace,
        before,
        after,
        heldout_before,
        heldout_after,
    })
}
