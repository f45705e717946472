use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use warpnorm_core::model::{ModelConfig, ModelParams, StyleMode};
use warpnorm_core::normalize::NormVariant;
use warpnorm_core::params::{ParamSet, Slot};
use warpnorm_core::synth::SceneSpec;
use warpnorm_core::train::{
    ablate, adam_step, adam_step_masked, adv_loss, content_loss, critic_loss_and_grad,
    finetune_stpr, gram, gram_style_loss, l1_loss, masked_l1, total_loss, train_pose_transfer,
    AblationConfig, AblationTask, AdvSide, CriticParams, DataSpec, EvalSplit, FeatureProjector,
    LossTerms, LossWeights, OptimState, Sequential, StprConfig, TrainConfig, BETA1, BETA2,
};
use warpnorm_core::{ConvKernel, Error, Shape4, Tensor4};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: Shape4, data: &[f64]) -> Tensor4 {
    Tensor4::new(shape, data.to_vec()).unwrap()
}

/// 32×32 scenes and a narrow model, so a run takes well under a second.
fn small_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        lr: 3e-3,
        adversarial: false,
        eval_scenes: 2,
        data: DataSpec {
            scene: SceneSpec {
                height: 32,
                width: 32,
                ..SceneSpec::default()
            },
            ..DataSpec::default()
        },
        model: ModelConfig {
            height: 32,
            width: 32,
            channels: vec![4, 8, 8],
            style_channels: vec![2, 2, 2],
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn l1_oracles() {
    let s = Shape4::new(1, 1, 1, 2);
    let a = t(s, &[0.0, 2.0]);
    assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
    assert_eq!(l1_loss(&a, &t(s, &[1.0, 0.0])).unwrap(), 1.5);
}

#[test]
fn masked_l1_with_full_mask_is_l1() {
    let s = Shape4::new(2, 3, 4, 4);
    let a = Tensor4::randn(s, 1.0, &mut rng(1));
    let b = Tensor4::randn(s, 1.0, &mut rng(2));
    let want = l1_loss(&a, &b).unwrap();
    assert_abs_diff_eq!(
        masked_l1(&a, &b, &Tensor4::full(s.with_c(1), 1.0)).unwrap(),
        want,
        epsilon = 1e-14
    );
    assert_abs_diff_eq!(
        masked_l1(&a, &b, &Tensor4::full(s, 1.0)).unwrap(),
        want,
        epsilon = 1e-14
    );
}

#[test]
fn masked_l1_averages_over_support_only() {
    let s = Shape4::new(1, 1, 1, 4);
    let a = t(s, &[1.0, 5.0, 0.0, 0.0]);
    let b = t(s, &[0.0, 0.0, 0.0, 0.0]);
    assert_eq!(
        masked_l1(&a, &b, &t(s, &[1.0, 0.0, 0.0, 0.0])).unwrap(),
        1.0
    );
    assert_eq!(
        masked_l1(&a, &b, &t(s, &[1.0, 1.0, 0.0, 0.0])).unwrap(),
        3.0
    );
}

#[test]
fn empty_mask_is_a_contract_error() {
    let s = Shape4::new(1, 3, 4, 4);
    let a = Tensor4::zeros(s);
    let err = masked_l1(&a, &a, &Tensor4::zeros(s.with_c(1))).unwrap_err();
    assert!(matches!(err, Error::Contract { .. }));
}

#[test]
fn gram_hand_case() {
    // Channels [1,2,3,4] and [0,1,0,1] over a 2×2 grid; N = C·H·W = 8.
    let f = t(
        Shape4::new(1, 2, 2, 2),
        &[1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, 1.0],
    );
    let g = gram(&f);
    assert_eq!(g.shape(), Shape4::new(1, 1, 2, 2));
    assert_abs_diff_eq!(g.at(0, 0, 0, 0), 30.0 / 8.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g.at(0, 0, 0, 1), 6.0 / 8.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g.at(0, 0, 1, 0), 6.0 / 8.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g.at(0, 0, 1, 1), 2.0 / 8.0, epsilon = 1e-15);
}

#[test]
fn gram_ignores_spatial_permutation() {
    let s = Shape4::new(1, 3, 4, 4);
    let f = Tensor4::randn(s, 1.0, &mut rng(3));
    // Same pixel permutation applied to every channel.
    let perm: Vec<usize> = (0..16).map(|i| (i * 7 + 3) % 16).collect();
    let p = Tensor4::from_fn(s, |b, c, y, x| {
        let src = perm[y * 4 + x];
        f.at(b, c, src / 4, src % 4)
    });
    let (ga, gb) = (gram(&f), gram(&p));
    for (a, b) in ga.data().iter().zip(gb.data()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-13);
    }
}

#[test]
fn style_and_content_losses_vanish_on_identical_inputs() {
    let proj = FeatureProjector::new(4);
    let a = Tensor4::uniform(Shape4::new(2, 3, 8, 8), 0.0, 1.0, &mut rng(5));
    assert_eq!(gram_style_loss(&a, &a, &proj).unwrap(), 0.0);
    assert_eq!(content_loss(&a, &a, &proj).unwrap(), 0.0);
    let b = Tensor4::uniform(a.shape(), 0.0, 1.0, &mut rng(6));
    assert!(gram_style_loss(&a, &b, &proj).unwrap() > 0.0);
    assert!(content_loss(&a, &b, &proj).unwrap() > 0.0);
}

#[test]
fn content_loss_is_quadratically_homogeneous() {
    let proj = FeatureProjector::new(7);
    let a = Tensor4::uniform(Shape4::new(1, 3, 8, 8), 0.0, 1.0, &mut rng(8));
    let zero = Tensor4::zeros(a.shape());
    let two_a = a.map(|v| 2.0 * v);
    let base = content_loss(&a, &zero, &proj).unwrap();
    assert_abs_diff_eq!(
        content_loss(&two_a, &zero, &proj).unwrap(),
        4.0 * base,
        epsilon = 1e-12 * base.max(1.0)
    );
}

#[test]
fn content_loss_matches_direct_evaluation() {
    let proj = FeatureProjector::new(9);
    let a = Tensor4::uniform(Shape4::new(1, 3, 8, 8), 0.0, 1.0, &mut rng(10));
    let b = Tensor4::uniform(a.shape(), 0.0, 1.0, &mut rng(11));
    let (fa, fb) = (proj.project(&a).unwrap(), proj.project(&b).unwrap());
    assert_eq!(fa.len(), 2);
    let want: f64 = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| {
            let n = x.data().len() as f64;
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                / n
        })
        .sum();
    assert_abs_diff_eq!(content_loss(&a, &b, &proj).unwrap(), want, epsilon = 1e-14);
}

fn constant_critic(value: f64) -> CriticParams {
    let mut c = CriticParams::init(4, 0);
    for k in &mut c.layers {
        *k = ConvKernel::zeros(k.c_out(), k.c_in());
    }
    c.layers[2].bias[0] = value;
    c
}

#[test]
fn critic_scores_are_patch_maps() {
    let c = CriticParams::init(4, 1);
    let score = c
        .score(&Tensor4::uniform(
            Shape4::new(1, 3, 32, 32),
            0.0,
            1.0,
            &mut rng(12),
        ))
        .unwrap();
    assert_eq!(score.shape(), Shape4::new(1, 1, 4, 4));
    assert!(score.is_finite());
}

#[test]
fn constant_critic_losses() {
    let s = Shape4::new(1, 3, 16, 16);
    let real = Tensor4::uniform(s, 0.0, 1.0, &mut rng(13));
    let fake = real.clone();
    assert_abs_diff_eq!(
        adv_loss(&constant_critic(0.5), &real, &fake, AdvSide::Critic).unwrap(),
        0.5,
        epsilon = 1e-15
    );
    for c in [-0.5, 0.0, 0.3, 0.7, 1.0, 2.0] {
        assert!(adv_loss(&constant_critic(c), &real, &fake, AdvSide::Critic).unwrap() >= 0.5);
    }
    assert_eq!(
        adv_loss(&constant_critic(1.0), &real, &fake, AdvSide::Generator).unwrap(),
        0.0
    );
    assert!(adv_loss(&constant_critic(0.9), &real, &fake, AdvSide::Generator).unwrap() > 0.0);
    let random = CriticParams::init(4, 2);
    let other = Tensor4::uniform(s, 0.0, 1.0, &mut rng(14));
    for side in [AdvSide::Critic, AdvSide::Generator] {
        assert!(adv_loss(&random, &real, &other, side).unwrap().is_finite());
    }
    let (l, g) = critic_loss_and_grad(&random, &real, &other).unwrap();
    assert_abs_diff_eq!(
        l,
        adv_loss(&random, &real, &other, AdvSide::Critic).unwrap(),
        epsilon = 1e-14
    );
    assert_eq!(g.slots().len(), random.slots().len());
}

#[test]
fn total_loss_weights() {
    let w = LossWeights::default();
    let zero = LossTerms::default();
    assert_eq!(total_loss(&zero, &w).unwrap(), 0.0);
    let ones = LossTerms {
        adv: 1.0,
        recon: 1.0,
        style: 1.0,
        content: 1.0,
    };
    assert_abs_diff_eq!(total_loss(&ones, &w).unwrap(), 7.5025, epsilon = 1e-12);
    let none = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        lambda4: 0.0,
    };
    assert_eq!(
        total_loss(
            &LossTerms {
                adv: 3.0,
                recon: 9.0,
                style: 2.0,
                content: 5.0
            },
            &none
        )
        .unwrap(),
        0.0
    );
}

#[test]
fn total_loss_is_linear_in_each_term() {
    let w = LossWeights::default();
    let base = LossTerms {
        adv: 0.3,
        recon: 0.7,
        style: 1.1,
        content: 2.3,
    };
    let b = total_loss(&base, &w).unwrap();
    let bumps = [
        (
            LossTerms {
                adv: base.adv + 1.0,
                ..base
            },
            w.lambda1,
        ),
        (
            LossTerms {
                recon: base.recon + 1.0,
                ..base
            },
            w.lambda2,
        ),
        (
            LossTerms {
                style: base.style + 1.0,
                ..base
            },
            w.lambda3,
        ),
        (
            LossTerms {
                content: base.content + 1.0,
                ..base
            },
            w.lambda4,
        ),
    ];
    for (terms, coeff) in bumps {
        assert_abs_diff_eq!(total_loss(&terms, &w).unwrap() - b, coeff, epsilon = 1e-12);
    }
}

#[test]
fn nan_term_is_named() {
    let terms = LossTerms {
        style: f64::NAN,
        ..LossTerms::default()
    };
    assert_eq!(
        total_loss(&terms, &LossWeights::default()).unwrap_err(),
        Error::NonFiniteLoss { term: "style" }
    );
}

/// One scalar parameter, for hand-stepped optimizer checks.
struct Scalar(Vec<f64>);

impl ParamSet for Scalar {
    fn slots(&self) -> Vec<Slot<'_>> {
        vec![Slot {
            name: "x".into(),
            shape: Shape4::new(1, 1, 1, self.0.len()),
            data: &self.0,
        }]
    }

    fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

#[test]
fn adam_zero_grad_keeps_params() {
    let mut p = Scalar(vec![1.5, -2.0]);
    let mut st = OptimState::new(&p, 0.1);
    adam_step(&mut p, &Scalar(vec![0.0, 0.0]), &mut st).unwrap();
    assert_eq!(p.0, vec![1.5, -2.0]);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_matches_hand_stepped_scalar() {
    let lr = 0.01;
    let grads = [0.3, -1.2, 0.05];
    let mut p = Scalar(vec![1.0]);
    let mut st = OptimState::new(&p, lr);
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (i, g) in grads.iter().enumerate() {
        adam_step(&mut p, &Scalar(vec![*g]), &mut st).unwrap();
        let k = (i + 1) as i32;
        m = BETA1 * m + (1.0 - BETA1) * g;
        v = BETA2 * v + (1.0 - BETA2) * g * g;
        let mh = m / (1.0 - BETA1.powi(k));
        let vh = v / (1.0 - BETA2.powi(k));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        assert_abs_diff_eq!(p.0[0], x, epsilon = 1e-15);
    }
    // The first update has magnitude lr whatever the gradient scale.
    let mut q = Scalar(vec![0.0]);
    let mut st = OptimState::new(&q, lr);
    adam_step(&mut q, &Scalar(vec![250.0]), &mut st).unwrap();
    assert_abs_diff_eq!(q.0[0], -lr, epsilon = 1e-12);
}

#[test]
fn adam_zero_lr_and_determinism() {
    let g = Scalar(vec![0.4, -0.1, 2.0]);
    let mut p = Scalar(vec![1.0, 2.0, 3.0]);
    let mut st = OptimState::new(&p, 0.0);
    adam_step(&mut p, &g, &mut st).unwrap();
    assert_eq!(p.0, vec![1.0, 2.0, 3.0]);

    let run = || {
        let mut p = Scalar(vec![1.0, 2.0, 3.0]);
        let mut st = OptimState::new(&p, 0.05);
        adam_step(&mut p, &g, &mut st).unwrap();
        adam_step(&mut p, &g, &mut st).unwrap();
        (p.0, st)
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_rejects_non_finite_and_honours_mask() {
    let mut p = Scalar(vec![1.0, 2.0]);
    let mut st = OptimState::new(&p, 0.1);
    let err = adam_step(&mut p, &Scalar(vec![0.0, f64::INFINITY]), &mut st).unwrap_err();
    assert_eq!(err, Error::NonFinite { index: 1 });
    assert_eq!(p.0, vec![1.0, 2.0]);

    adam_step_masked(&mut p, &Scalar(vec![1.0, 1.0]), &mut st, Some(&[false])).unwrap();
    assert_eq!(p.0, vec![1.0, 2.0]);
}

#[test]
fn zero_steps_yield_initial_metrics_only() {
    let out = train_pose_transfer(&small_cfg(0), &Sequential).unwrap();
    assert_eq!(out.trace.rows.len(), 1);
    assert_eq!(out.trace.rows[0].step, 0);
    assert!(out.trace.initial_heldout().is_some());
}

#[test]
fn training_reduces_heldout_l1_and_is_deterministic() {
    let cfg = small_cfg(40);
    let a = train_pose_transfer(&cfg, &Sequential).unwrap();
    let b = train_pose_transfer(&cfg, &Sequential).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace.rows.len(), 41);
    let (first, last) = (
        a.trace.initial_heldout().unwrap(),
        a.trace.final_heldout().unwrap(),
    );
    assert!(last < first, "held-out L1 {first} -> {last}");
}

#[test]
fn adversarial_training_leaves_projector_frozen() {
    let cfg = TrainConfig {
        adversarial: true,
        critic_width: 4,
        ..small_cfg(3)
    };
    let out = train_pose_transfer(&cfg, &Sequential).unwrap();
    assert_eq!(
        out.projector,
        FeatureProjector::new(warpnorm_core::train::mix_seed(cfg.seed, 0xFEA7, 0))
    );
    assert!(out.critic.is_some());
    assert!(out.trace.rows.iter().skip(1).all(|r| r.terms.adv > 0.0));
}

#[test]
fn divergence_aborts_with_trace() {
    let cfg = TrainConfig {
        max_loss: 1e-6,
        ..small_cfg(5)
    };
    let aborted = train_pose_transfer(&cfg, &Sequential).unwrap_err();
    assert!(
        matches!(aborted.error, Error::Diverged { .. }),
        "{}",
        aborted.error
    );
    assert!(!aborted.trace.rows.is_empty());
}

#[test]
fn mismatched_geometry_is_a_config_error() {
    let cfg = TrainConfig {
        model: ModelConfig::default(),
        ..small_cfg(1)
    };
    assert!(matches!(
        train_pose_transfer(&cfg, &Sequential).unwrap_err().error,
        Error::Config(_)
    ));
}

#[test]
fn self_replacement_keeps_heldout_reconstruction() {
    let cfg = small_cfg(40);
    let pre = train_pose_transfer(&cfg, &Sequential).unwrap();
    let stpr = StprConfig {
        steps: 10,
        batch: 2,
        lr: 1e-4,
        self_replacement: true,
        eval_scenes: 2,
        ..StprConfig::default()
    };
    let out = finetune_stpr(&pre.params, None, &cfg, &stpr, &Sequential).unwrap();
    let rel = (out.heldout_after - out.heldout_before).abs() / out.heldout_before;
    assert!(
        rel < 0.05,
        "held-out {} -> {}",
        out.heldout_before,
        out.heldout_after
    );
    assert_eq!(out.trace.rows.len(), 11);
}

#[test]
fn frozen_encoders_stay_put_during_finetune() {
    let cfg = small_cfg(2);
    let pre = train_pose_transfer(&cfg, &Sequential).unwrap();
    let stpr = StprConfig {
        steps: 3,
        batch: 1,
        lr: 1e-3,
        freeze_encoders: true,
        eval_scenes: 1,
        ..StprConfig::default()
    };
    let out = finetune_stpr(&pre.params, None, &cfg, &stpr, &Sequential).unwrap();
    assert_eq!(out.params.style_enc, pre.params.style_enc);
    assert_eq!(out.params.pose_enc, pre.params.pose_enc);
    assert_ne!(out.params.dec, pre.params.dec);
}

#[test]
fn finetune_needs_the_style_encoder() {
    let mut cfg = small_cfg(0);
    cfg.model.style_mode = StyleMode::FreeMaps;
    let params = ModelParams::init(&cfg.model, 0).unwrap();
    let err = finetune_stpr(&params, None, &cfg, &StprConfig::default(), &Sequential).unwrap_err();
    assert!(matches!(err.error, Error::Config(_)));
}

#[test]
fn variants_share_initial_state() {
    let a = train_pose_transfer(
        &TrainConfig {
            variant: NormVariant::San,
            ..small_cfg(0)
        },
        &Sequential,
    )
    .unwrap();
    let b = train_pose_transfer(&small_cfg(0), &Sequential).unwrap();
    assert_eq!(a.params, b.params);
}

fn tiny_ablation() -> AblationConfig {
    AblationConfig {
        steps: 3,
        batch: 2,
        scene: SceneSpec {
            height: 32,
            width: 32,
            ..SceneSpec::default()
        },
        channels: vec![4, 8, 8],
        style_channels: vec![2, 2, 2],
        eval_scenes: 2,
        ..AblationConfig::default()
    }
}

#[test]
fn ablation_grid_rows_and_determinism() {
    let cfg = tiny_ablation();
    let report = ablate(&cfg, &Sequential).unwrap();
    // Identity and misaligned free maps, generalization F1 + F2, encoder misaligned.
    assert_eq!(report.rows.len(), 3 * (1 + 1 + 2 + 1));
    for v in NormVariant::ALL {
        assert!(report
            .final_l1(
                StyleMode::FreeMaps,
                AblationTask::Misaligned,
                EvalSplit::Heldout,
                v
            )
            .is_some());
        assert!(report
            .final_l1(
                StyleMode::FreeMaps,
                AblationTask::Generalization,
                EvalSplit::F2,
                v
            )
            .is_some());
        assert!(report
            .final_l1(
                StyleMode::Encoder,
                AblationTask::Misaligned,
                EvalSplit::Heldout,
                v
            )
            .is_some());
    }
    assert!(report.generalization_ratio().is_some());
    assert_eq!(report.rows, ablate(&cfg, &Sequential).unwrap().rows);

    let without = ablate(
        &AblationConfig {
            encoder_mode: false,
            ..cfg
        },
        &Sequential,
    )
    .unwrap();
    assert_eq!(without.rows.len(), 12);
}

#[test]
fn identity_task_ties_across_variants() {
    let cfg = AblationConfig {
        encoder_mode: false,
        steps: 10,
        ..tiny_ablation()
    };
    let report = ablate(&cfg, &Sequential).unwrap();
    let l: Vec<f64> = NormVariant::ALL
        .iter()
        .map(|&v| {
            report
                .final_l1(
                    StyleMode::FreeMaps,
                    AblationTask::Identity,
                    EvalSplit::Heldout,
                    v,
                )
                .unwrap()
        })
        .collect();
    assert!(
        l.iter().all(|x| (x - l[0]).abs() <= 1e-9 * l[0].max(1.0)),
        "{l:?}"
    );
}
