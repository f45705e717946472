//! Losses, optimizer and the experiment procedures: pose-transfer training,
//! part-replacement finetuning, and the normalization ablation.

mod ablate;
mod adam;
mod critic;
mod exec;
mod losses;
mod run;

pub use ablate::{
    ablate, AblationConfig, AblationReport, AblationRow, AblationTask, EvalSplit, OrderingCheck,
    TrainedCell,
};
pub use adam::{adam_step, adam_step_masked, OptimState, ADAM_EPS, BETA1, BETA2, DEFAULT_LR};
pub use critic::{
    adv_loss, critic_loss_and_grad, generator_adv_loss_and_grad, AdvSide, CriticParams,
};
pub use exec::{Executor, Sequential};
pub use losses::{
    content_loss, content_loss_and_grad, gram, gram_style_loss, l1_loss, l1_loss_grad, masked_l1,
    masked_l1_grad, style_loss_and_grad, total_loss, FeatureProjector, LossTerms, LossWeights,
};
pub use run::{
    eval_scene, evaluate_pose_transfer, evaluate_stpr, finetune_stpr, initial_params,
    stpr_eval_case, train_pose_transfer, train_pose_transfer_from, Aborted, DataSpec, MotionSource,
    StepMetrics, StprConfig, StprMetrics, StprOutcome, TrainConfig, TrainOutcome, TrainTrace,
};

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
