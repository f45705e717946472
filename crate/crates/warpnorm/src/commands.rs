//! The subcommands, callable without going through argument parsing.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use warpnorm_core::gradcheck::{check_vjp, OpId};
use warpnorm_core::model::{
    forward, stpr_inputs, GeneratorInput, ModelConfig, ModelParams, StyleMode,
};
use warpnorm_core::normalize::NormVariant;
use warpnorm_core::synth::{gen_scene, Motion, SceneSpec};
use warpnorm_core::tensor::bilinear_sample;
use warpnorm_core::train::{
    ablate as run_ablation, eval_scene, finetune_stpr, stpr_eval_case, train_pose_transfer,
    AblationReport, AblationTask, Executor, OrderingCheck, StprOutcome,
};
use warpnorm_core::Tensor4;

use crate::checkpoint;
use crate::config::{AblationRun, KvFile, StprRun};
use crate::error::{CliError, Result};
use crate::image::{encode_pgm, encode_ppm, flow_to_rgb, hstack};
use crate::manifest::RunManifest;
use crate::metrics::{ablation_csv, stpr_csv, trace_csv};

/// Relative margin SAWN must hold over SAN on the misaligned task.
pub const ORDERING_MARGIN: f64 = 0.2;
/// Slack allowed around SAWS on either side.
pub const ORDERING_SLACK: f64 = 0.05;
/// Upper bound on `L1(SAWN) / L1(SAN)` under the unseen motion.
pub const GENERALIZATION_RATIO: f64 = 0.5;
/// Minimum relative drop of the target-region L1 after finetuning.
pub const STPR_TARGET_DROP: f64 = 0.1;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(CliError::io(out))
}

/// Parses op names; an unknown one is a usage error listing the valid ops.
pub fn parse_ops(names: &[String]) -> Result<Vec<OpId>> {
    if names.is_empty() {
        return Ok(OpId::all());
    }
    names
        .iter()
        .map(|n| {
            OpId::from_str(n).map_err(|_| {
                CliError::Usage(format!(
                    "unknown op `{n}`; valid ops: {}",
                    OpId::names().join(", ")
                ))
            })
        })
        .collect()
}

/// Runs the gradient checks and prints one row per (op, seed). Returns
/// whether everything passed.
pub fn gradcheck(ops: &[String], seeds: u64, tol: f64, log: &mut dyn Write) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(CliError::Usage(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let ops = parse_ops(ops)?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let (mut passed, mut total) = (0, 0);
    for op in ops {
        for r in check_vjp(op, None, &seeds, tol)? {
            let _ = writeln!(log, "{r}");
            total += 1;
            passed += usize::from(r.pass);
        }
    }
    let _ = writeln!(log, "{passed}/{total} checks passed");
    Ok(passed == total)
}

#[derive(Debug, Clone)]
pub struct AblateOutcome {
    pub report: AblationReport,
    pub ordering: Option<OrderingCheck>,
    pub generalization_ratio: Option<f64>,
    pub secs: f64,
}

impl AblateOutcome {
    pub fn ordering_pass(&self) -> bool {
        self.ordering.is_some_and(|o| o.pass())
    }

    pub fn generalization_pass(&self) -> bool {
        self.generalization_ratio
            .is_some_and(|r| r <= GENERALIZATION_RATIO)
    }

    pub fn pass(&self) -> bool {
        self.ordering_pass() && self.generalization_pass()
    }
}

fn load_kv(config: Option<&Path>) -> Result<KvFile> {
    config.map_or_else(|| Ok(KvFile::empty()), KvFile::load)
}

/// Trains the three variants per cell, writes `ablation.csv`, comparison
/// grids `grid_<i>.ppm` (source, SAN, SAWS, SAWN, target) and the manifest.
pub fn ablate<E: Executor>(
    config: Option<&Path>,
    out: &Path,
    exec: &E,
    log: &mut dyn Write,
) -> Result<AblateOutcome> {
    let run = AblationRun::from_kv(&load_kv(config)?)?;
    create_dir(out)?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("ablate", config, run.ablation.seed, out);
    manifest.write_artifact("config.txt", run.to_kv().as_bytes())?;
    let report = run_ablation(&run.ablation, exec)?;
    let secs = start.elapsed().as_secs_f64();
    manifest.write_artifact("ablation.csv", ablation_csv(&report).as_bytes())?;
    for i in 0..run.grid_scenes {
        let grid = ablation_grid(&report, i)?;
        manifest.write_artifact(&format!("grid_{i}.ppm"), &encode_ppm(&grid)?)?;
    }
    let ordering = report.ordering(ORDERING_MARGIN, ORDERING_SLACK);
    let generalization_ratio = report.generalization_ratio();
    if let Some(o) = ordering {
        let _ = writeln!(
            log,
            "misaligned held-out L1: SAN {:.5}  SAWS {:.5}  SAWN {:.5}  margin {:.1}%  {}",
            o.san,
            o.saws,
            o.sawn,
            100.0 * o.relative_margin,
            verdict(o.pass())
        );
    }
    if let Some(r) = generalization_ratio {
        let _ = writeln!(
            log,
            "unseen-motion L1 ratio SAWN/SAN {r:.3} (bound {GENERALIZATION_RATIO})  {}",
            verdict(r <= GENERALIZATION_RATIO)
        );
    }
    let _ = writeln!(log, "ablation finished in {secs:.1}s");
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.finish()?;
    Ok(AblateOutcome {
        report,
        ordering,
        generalization_ratio,
        secs,
    })
}

fn ablation_grid(report: &AblationReport, i: usize) -> Result<Tensor4> {
    let cell = |v| {
        report
            .trained(StyleMode::FreeMaps, AblationTask::Misaligned, v)
            .ok_or_else(|| {
                CliError::Format("ablation report lacks the misaligned free-map runs".into())
            })
    };
    let scene = eval_scene(&cell(NormVariant::San)?.cfg, i)?;
    let input = GeneratorInput::pose_transfer(&scene)?;
    let mut panels = vec![scene.x_s.clone()];
    for v in NormVariant::ALL {
        let c = cell(v)?;
        panels.push(forward(&c.params, &c.cfg.model, &input, v)?.0);
    }
    panels.push(scene.x_t);
    hstack(&panels)
}

#[derive(Debug, Clone)]
pub struct StprRunOutcome {
    pub outcome: StprOutcome,
    pub secs: f64,
}

impl StprRunOutcome {
    pub fn nontarget_pass(&self) -> bool {
        self.outcome.after.nontarget_l1 <= self.outcome.before.nontarget_l1
    }

    pub fn target_pass(&self) -> bool {
        self.outcome.after.target_l1 <= (1.0 - STPR_TARGET_DROP) * self.outcome.before.target_l1
    }

    pub fn pass(&self) -> bool {
        self.nontarget_pass() && self.target_pass()
    }
}

/// Pretrains on pose transfer, finetunes with part replacement, and writes
/// traces, `stpr.csv`, checkpoints and before/after pairs
/// `pair_<i>.ppm` (source, reference, before, after, expected).
pub fn stpr<E: Executor>(
    config: Option<&Path>,
    out: &Path,
    exec: &E,
    log: &mut dyn Write,
) -> Result<StprRunOutcome> {
    let run = StprRun::from_kv(&load_kv(config)?)?;
    create_dir(out)?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("stpr", config, run.train.seed, out);
    manifest.write_artifact("config.txt", run.to_kv().as_bytes())?;
    let pre = train_pose_transfer(&run.train, exec)?;
    manifest.write_artifact("pretrain_trace.csv", trace_csv(&pre.trace).as_bytes())?;
    manifest.write_artifact("pretrained.ckpt", &checkpoint::encode(&pre.params))?;
    let outcome = finetune_stpr(
        &pre.params,
        pre.critic.as_ref(),
        &run.train,
        &run.stpr,
        exec,
    )?;
    manifest.write_artifact("finetune_trace.csv", trace_csv(&outcome.trace).as_bytes())?;
    manifest.write_artifact("finetuned.ckpt", &checkpoint::encode(&outcome.params))?;
    manifest.write_artifact("stpr.csv", stpr_csv(&outcome).as_bytes())?;
    for i in 0..run.pairs {
        let (scene, part, reference, truth) = stpr_eval_case(&run.train, i)?;
        let input = stpr_inputs(&scene, part, Some(&reference))?;
        let before = forward(&pre.params, &run.train.model, &input, run.train.variant)?.0;
        let after = forward(&outcome.params, &run.train.model, &input, run.train.variant)?.0;
        let grid = hstack(&[scene.x_s.clone(), reference, before, after, truth])?;
        manifest.write_artifact(
            &format!("pair_{i}_{}.ppm", part.name()),
            &encode_ppm(&grid)?,
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    let res = StprRunOutcome { outcome, secs };
    let (b, a) = (&res.outcome.before, &res.outcome.after);
    let _ = writeln!(
        log,
        "target-region L1 {:.5} -> {:.5} ({:+.1}%)  {}",
        b.target_l1,
        a.target_l1,
        100.0 * (a.target_l1 / b.target_l1 - 1.0),
        verdict(res.target_pass())
    );
    let _ = writeln!(
        log,
        "non-target L1 {:.5} -> {:.5} (x{:.3})  {}",
        b.nontarget_l1,
        a.nontarget_l1,
        a.nontarget_l1 / b.nontarget_l1,
        verdict(res.nontarget_pass())
    );
    let _ = writeln!(log, "pretrain + finetune finished in {secs:.1}s");
    manifest.wall_clock_secs = secs;
    manifest.finish()?;
    Ok(res)
}

/// Panels written by [`visualize`], in strip order.
pub const VISUALIZE_PANELS: [&str; 6] = [
    "input.ppm",
    "flow.ppm",
    "warped.ppm",
    "occlusion.pgm",
    "generated.ppm",
    "target.ppm",
];

/// Dumps one scene's source, flow colouring, pixel-warped source,
/// occlusion, generated image and target, plus all six as `panels.ppm`.
pub fn visualize(
    scene_seed: u64,
    motion: &str,
    checkpoint_path: Option<&Path>,
    variant: NormVariant,
    out: &Path,
) -> Result<()> {
    let motion = Motion::from_str(motion).map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SceneSpec::default().with_motion(motion);
    let scene = gen_scene(scene_seed, &spec)?;
    let cfg = ModelConfig::default();
    let mut params = ModelParams::init(&cfg, 0)?;
    if let Some(p) = checkpoint_path {
        let bytes = std::fs::read(p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Usage(format!("checkpoint {} not found", p.display()))
            } else {
                CliError::io(p)(e)
            }
        })?;
        checkpoint::decode_into(&bytes, &mut params)?;
    }
    create_dir(out)?;
    let start = Instant::now();
    let mut manifest = RunManifest::new("visualize", checkpoint_path, scene_seed, out);
    let warped = bilinear_sample(&scene.x_s, &scene.flow_gt)?;
    let generated = forward(
        &params,
        &cfg,
        &GeneratorInput::pose_transfer(&scene)?,
        variant,
    )?
    .0;
    let flow_rgb = flow_to_rgb(&scene.flow_gt)?;
    let panels = [
        scene.x_s.clone(),
        flow_rgb,
        warped,
        scene.occlusion.clone(),
        generated,
        scene.x_t.clone(),
    ];
    for (name, t) in VISUALIZE_PANELS.iter().zip(&panels) {
        let bytes = if name.ends_with(".pgm") {
            encode_pgm(t)?
        } else {
            encode_ppm(t)?
        };
        manifest.write_artifact(name, &bytes)?;
    }
    manifest.write_artifact("panels.ppm", &encode_ppm(&hstack(&panels)?)?)?;
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.finish()
}
