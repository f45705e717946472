use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::exec::Executor;
use super::losses::LossWeights;
use super::run::{
    evaluate_pose_transfer, initial_params, train_pose_transfer_from, Aborted, DataSpec,
    MotionSource, TrainConfig,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, StyleMode};
use crate::normalize::NormVariant;
use crate::params::ParamSet;
use crate::synth::{Motion, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationTask {
    /// No motion: the three variants coincide.
    Identity,
    /// A fresh random motion per scene, evaluated on unseen motions.
    Misaligned,
    /// Fit under one motion, evaluated under it and under another.
    Generalization,
}

impl AblationTask {
    pub fn name(self) -> &'static str {
        match self {
            AblationTask::Identity => "identity",
            AblationTask::Misaligned => "misaligned",
            AblationTask::Generalization => "generalization",
        }
    }
}

impl fmt::Display for AblationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(AblationTask::Identity),
            "misaligned" => Ok(AblationTask::Misaligned),
            "generalization" => Ok(AblationTask::Generalization),
            _ => Err(Error::Config(alloc::format!("unknown ablation task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    Heldout,
    F1,
    F2,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Heldout => "heldout",
            EvalSplit::F1 => "f1",
            EvalSplit::F2 => "f2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    /// Learning rate for free-map runs.
    pub lr: f64,
    pub encoder_lr: f64,
    pub scene: SceneSpec,
    pub channels: Vec<usize>,
    pub style_channels: Vec<usize>,
    pub weights: LossWeights,
    pub max_shift: f64,
    pub max_deg: f64,
    pub eval_scenes: usize,
    pub f1: Motion,
    pub f2: Motion,
    /// Also train the three variants with the style encoder.
    pub encoder_mode: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seed: 0,
            steps: 300,
            batch: 4,
            lr: 5e-3,
            encoder_lr: 1e-3,
            scene: SceneSpec::default(),
            channels: alloc::vec![8, 16, 32],
            style_channels: alloc::vec![4, 4, 4],
            weights: LossWeights::default(),
            max_shift: 4.0,
            max_deg: 15.0,
            eval_scenes: 8,
            f1: Motion::Translate { dy: 2.0, dx: -3.0 },
            f2: Motion::Translate { dy: -3.0, dx: 2.0 },
            encoder_mode: true,
        }
    }
}

impl AblationConfig {
    /// Training config for one cell of the ablation grid.
    pub fn train_config(
        &self,
        mode: StyleMode,
        task: AblationTask,
        variant: NormVariant,
    ) -> TrainConfig {
        let random = MotionSource::Random {
            max_shift: self.max_shift,
            max_deg: self.max_deg,
        };
        let (train_motion, eval_motion) = match task {
            AblationTask::Identity => (
                MotionSource::Fixed(Motion::Identity),
                MotionSource::Fixed(Motion::Identity),
            ),
            AblationTask::Misaligned => (random, random),
            AblationTask::Generalization => {
                (MotionSource::Fixed(self.f1), MotionSource::Fixed(self.f1))
            }
        };
        let fixed_appearance = mode == StyleMode::FreeMaps;
        let single_scene = fixed_appearance && task != AblationTask::Misaligned;
        TrainConfig {
            seed: self.seed,
            steps: self.steps,
            batch: self.batch,
            lr: if mode == StyleMode::FreeMaps {
                self.lr
            } else {
                self.encoder_lr
            },
            data: DataSpec {
                scene: self.scene.clone(),
                train_motion,
                eval_motion,
                fixed_appearance,
            },
            model: ModelConfig {
                height: self.scene.height,
                width: self.scene.width,
                scales: self.scene.scales,
                channels: self.channels.clone(),
                style_channels: self.style_channels.clone(),
                style_mode: mode,
                ..ModelConfig::default()
            },
            variant,
            adversarial: false,
            weights: self.weights,
            critic_width: 8,
            eval_scenes: if single_scene { 1 } else { self.eval_scenes },
            max_loss: 1e3,
        }
    }

    pub fn cells(&self) -> Vec<(StyleMode, AblationTask)> {
        let mut cells = alloc::vec![
            (StyleMode::FreeMaps, AblationTask::Identity),
            (StyleMode::FreeMaps, AblationTask::Misaligned),
            (StyleMode::FreeMaps, AblationTask::Generalization),
        ];
        if self.encoder_mode {
            cells.push((StyleMode::Encoder, AblationTask::Misaligned));
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub mode: StyleMode,
    pub task: AblationTask,
    pub split: EvalSplit,
    pub variant: NormVariant,
    pub initial_l1: f64,
    pub final_l1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub mode: StyleMode,
    pub task: AblationTask,
    pub variant: NormVariant,
    pub cfg: TrainConfig,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Default)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub trained: Vec<TrainedCell>,
}

impl AblationReport {
    pub fn final_l1(
        &self,
        mode: StyleMode,
        task: AblationTask,
        split: EvalSplit,
        variant: NormVariant,
    ) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.task == task && r.split == split && r.variant == variant)
            .map(|r| r.final_l1)
    }

    pub fn trained(
        &self,
        mode: StyleMode,
        task: AblationTask,
        variant: NormVariant,
    ) -> Option<&TrainedCell> {
        self.trained
            .iter()
            .find(|c| c.mode == mode && c.task == task && c.variant == variant)
    }

    fn triple(&self, task: AblationTask, split: EvalSplit) -> Option<[f64; 3]> {
        let get = |v| self.final_l1(StyleMode::FreeMaps, task, split, v);
        Some([
            get(NormVariant::San)?,
            get(NormVariant::Saws)?,
            get(NormVariant::Sawn)?,
        ])
    }

    /// Misaligned free-map task: SAWN beats SAN by `margin` (relative) and
    /// SAWS lies between them up to `slack` on either side.
    pub fn ordering(&self, margin: f64, slack: f64) -> Option<OrderingCheck> {
        let [san, saws, sawn] = self.triple(AblationTask::Misaligned, EvalSplit::Heldout)?;
        let rel = (san - sawn) / san;
        Some(OrderingCheck {
            san,
            saws,
            sawn,
            relative_margin: rel,
            margin_ok: rel >= margin,
            saws_between: saws >= sawn * (1.0 - slack) && saws <= san * (1.0 + slack),
        })
    }

    /// Ratio `L1(SAWN) / L1(SAN)` under the unseen motion.
    pub fn generalization_ratio(&self) -> Option<f64> {
        let [san, _, sawn] = self.triple(AblationTask::Generalization, EvalSplit::F2)?;
        Some(sawn / san)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCheck {
    pub san: f64,
    pub saws: f64,
    pub sawn: f64,
    pub relative_margin: f64,
    pub margin_ok: bool,
    pub saws_between: bool,
}

impl OrderingCheck {
    pub fn pass(&self) -> bool {
        self.margin_ok && self.saws_between
    }
}

/// Trains SAN, SAWS and SAWN on identical data and budgets for every
/// cell of the grid and collects held-out errors.
///
/// The generalization cell starts from the network trained on the
/// misaligned task, resets the free maps and refits only them under `f1`;
/// the rest of the network stays frozen.
pub fn ablate<E: Executor>(
    cfg: &AblationConfig,
    exec: &E,
) -> core::result::Result<AblationReport, Aborted> {
    let mut report = AblationReport::default();
    for (mode, task) in cfg.cells() {
        for variant in NormVariant::ALL {
            let tc = cfg.train_config(mode, task, variant);
            let (start, trainable) = if task == AblationTask::Generalization {
                let base = report
                    .trained(StyleMode::FreeMaps, AblationTask::Misaligned, variant)
                    .ok_or_else(|| {
                        Error::Config("generalization needs the misaligned free-map run".into())
                    })?;
                let mut p = base.params.clone();
                let fresh = initial_params(&tc)?;
                p.free_maps = fresh.free_maps;
                let mask = p
                    .slots()
                    .iter()
                    .map(|s| s.name.starts_with("free_maps"))
                    .collect();
                (p, Some(mask))
            } else {
                (initial_params(&tc)?, None)
            };
            let out = train_pose_transfer_from(start.clone(), &tc, trainable, exec)?;
            let split = if task == AblationTask::Generalization {
                EvalSplit::F1
            } else {
                EvalSplit::Heldout
            };
            report.rows.push(AblationRow {
                mode,
                task,
                split,
                variant,
                initial_l1: out.trace.initial_heldout().unwrap_or(f64::NAN),
                final_l1: out.trace.final_heldout().unwrap_or(f64::NAN),
            });
            if task == AblationTask::Generalization {
                let mut unseen = tc.clone();
                unseen.data.eval_motion = MotionSource::Fixed(cfg.f2);
                report.rows.push(AblationRow {
                    mode,
                    task,
                    split: EvalSplit::F2,
                    variant,
                    initial_l1: evaluate_pose_transfer(&start, &unseen, exec)?,
                    final_l1: evaluate_pose_transfer(&out.params, &unseen, exec)?,
                });
            }
            report.trained.push(TrainedCell {
                mode,
                task,
                variant,
                cfg: tc,
                params: out.params,
            });
        }
    }
    Ok(report)
}
