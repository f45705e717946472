//! Plain-text `key = value` run configuration.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use warpnorm_core::model::ModelConfig;
use warpnorm_core::normalize::NormVariant;
use warpnorm_core::synth::{Motion, SceneSpec, TextureKind, NUM_PARTS};
use warpnorm_core::train::{
    AblationConfig, DataSpec, LossWeights, MotionSource, StprConfig, TrainConfig,
};

use crate::error::{CliError, Result};

/// Parsed `key = value` lines. `#` starts a comment; blank lines are
/// skipped; keys may appear once.
#[derive(Debug, Clone)]
pub struct KvFile {
    label: String,
    entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(label: &str, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CliError::Config {
                path: label.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(err("empty key".into()));
            }
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key `{k}`")));
            }
            entries.push((k.to_string(), v.to_string(), i + 1));
        }
        Ok(KvFile {
            label: label.to_string(),
            entries,
        })
    }

    /// Reads `path`; a missing file is a usage error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::Usage(format!("config file {} not found", path.display()))
            } else {
                CliError::io(path)(e)
            }
        })?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn empty() -> Self {
        KvFile {
            label: "<defaults>".into(),
            entries: Vec::new(),
        }
    }

    fn err(&self, line: usize, msg: String) -> CliError {
        CliError::Config {
            path: self.label.clone(),
            line,
            msg,
        }
    }

    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, line) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(self.err(
                    *line,
                    format!("unknown key `{k}`; expected one of: {}", allowed.join(", ")),
                ));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    pub fn get<T: FromStr>(&self, key: &str, dst: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((v, line)) = self.raw(key) {
            *dst = v
                .parse()
                .map_err(|e: T::Err| self.err(line, format!("bad value for `{key}`: {e}")))?;
        }
        Ok(())
    }

    pub fn get_list<T: FromStr>(&self, key: &str, dst: &mut Vec<T>) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((v, line)) = self.raw(key) {
            *dst = v
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<_, T::Err>>()
                .map_err(|e| self.err(line, format!("bad list for `{key}`: {e}")))?;
        }
        Ok(())
    }

    fn get_textures(&self, dst: &mut [TextureKind; NUM_PARTS]) -> Result<()> {
        let mut v = dst.to_vec();
        self.get_list("textures", &mut v)?;
        let line = self.raw("textures").map_or(0, |(_, l)| l);
        *dst = v
            .try_into()
            .map_err(|_| self.err(line, format!("`textures` needs {NUM_PARTS} entries")))?;
        Ok(())
    }
}

const SCENE_KEYS: [&str; 4] = ["height", "width", "scales", "textures"];
const LOSS_KEYS: [&str; 4] = ["lambda1", "lambda2", "lambda3", "lambda4"];

fn scene_from(kv: &KvFile, scene: &mut SceneSpec) -> Result<()> {
    kv.get("height", &mut scene.height)?;
    kv.get("width", &mut scene.width)?;
    kv.get("scales", &mut scene.scales)?;
    kv.get_textures(&mut scene.textures)
}

fn weights_from(kv: &KvFile, w: &mut LossWeights) -> Result<()> {
    kv.get("lambda1", &mut w.lambda1)?;
    kv.get("lambda2", &mut w.lambda2)?;
    kv.get("lambda3", &mut w.lambda3)?;
    kv.get("lambda4", &mut w.lambda4)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

const ABLATION_KEYS: [&str; 13] = [
    "seed",
    "steps",
    "batch",
    "lr",
    "encoder_lr",
    "channels",
    "style_channels",
    "max_shift",
    "max_deg",
    "eval_scenes",
    "f1",
    "f2",
    "encoder_mode",
];

/// Ablation run settings plus output options.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub ablation: AblationConfig,
    /// Held-out scenes rendered as comparison grids.
    pub grid_scenes: usize,
}

impl Default for AblationRun {
    fn default() -> Self {
        AblationRun {
            ablation: AblationConfig::default(),
            grid_scenes: 3,
        }
    }
}

impl AblationRun {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut allowed: Vec<&str> = ABLATION_KEYS.to_vec();
        allowed.extend(SCENE_KEYS);
        allowed.extend(LOSS_KEYS);
        allowed.push("grid_scenes");
        kv.check_keys(&allowed)?;
        let mut run = AblationRun::default();
        let c = &mut run.ablation;
        kv.get("seed", &mut c.seed)?;
        kv.get("steps", &mut c.steps)?;
        kv.get("batch", &mut c.batch)?;
        kv.get("lr", &mut c.lr)?;
        kv.get("encoder_lr", &mut c.encoder_lr)?;
        kv.get_list("channels", &mut c.channels)?;
        kv.get_list("style_channels", &mut c.style_channels)?;
        kv.get("max_shift", &mut c.max_shift)?;
        kv.get("max_deg", &mut c.max_deg)?;
        kv.get("eval_scenes", &mut c.eval_scenes)?;
        kv.get::<Motion>("f1", &mut c.f1)?;
        kv.get::<Motion>("f2", &mut c.f2)?;
        kv.get("encoder_mode", &mut c.encoder_mode)?;
        scene_from(kv, &mut c.scene)?;
        weights_from(kv, &mut c.weights)?;
        kv.get("grid_scenes", &mut run.grid_scenes)?;
        c.weights.validate()?;
        c.scene.validate()?;
        Ok(run)
    }

    /// The effective configuration in the same format `from_kv` reads.
    pub fn to_kv(&self) -> String {
        let c = &self.ablation;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "steps = {}", c.steps);
        let _ = writeln!(s, "batch = {}", c.batch);
        let _ = writeln!(s, "lr = {}", c.lr);
        let _ = writeln!(s, "encoder_lr = {}", c.encoder_lr);
        scene_kv(&mut s, &c.scene);
        let _ = writeln!(s, "channels = {}", join(&c.channels));
        let _ = writeln!(s, "style_channels = {}", join(&c.style_channels));
        weights_kv(&mut s, &c.weights);
        let _ = writeln!(s, "max_shift = {}", c.max_shift);
        let _ = writeln!(s, "max_deg = {}", c.max_deg);
        let _ = writeln!(s, "eval_scenes = {}", c.eval_scenes);
        let _ = writeln!(s, "f1 = {}", c.f1);
        let _ = writeln!(s, "f2 = {}", c.f2);
        let _ = writeln!(s, "encoder_mode = {}", c.encoder_mode);
        let _ = writeln!(s, "grid_scenes = {}", self.grid_scenes);
        s
    }
}

fn scene_kv(s: &mut String, scene: &SceneSpec) {
    let _ = writeln!(s, "height = {}", scene.height);
    let _ = writeln!(s, "width = {}", scene.width);
    let _ = writeln!(s, "scales = {}", scene.scales);
    let _ = writeln!(s, "textures = {}", scene.textures_string());
}

fn weights_kv(s: &mut String, w: &LossWeights) {
    let _ = writeln!(s, "lambda1 = {}", w.lambda1);
    let _ = writeln!(s, "lambda2 = {}", w.lambda2);
    let _ = writeln!(s, "lambda3 = {}", w.lambda3);
    let _ = writeln!(s, "lambda4 = {}", w.lambda4);
}

const STPR_KEYS: [&str; 17] = [
    "seed",
    "pretrain_steps",
    "pretrain_lr",
    "steps",
    "lr",
    "batch",
    "variant",
    "adversarial",
    "critic_width",
    "freeze_encoders",
    "self_replacement",
    "channels",
    "style_channels",
    "max_shift",
    "max_deg",
    "eval_scenes",
    "pairs",
];

/// Pretraining plus part-replacement finetuning settings.
#[derive(Debug, Clone, PartialEq)]
pub struct StprRun {
    pub train: TrainConfig,
    pub stpr: StprConfig,
    /// Held-out before/after image pairs to write.
    pub pairs: usize,
}

impl Default for StprRun {
    fn default() -> Self {
        let train = TrainConfig {
            lr: 3e-3,
            adversarial: false,
            model: ModelConfig::default(),
            data: DataSpec::default(),
            ..TrainConfig::default()
        };
        let stpr = StprConfig {
            lr: 1e-3,
            ..StprConfig::default()
        };
        StprRun {
            train,
            stpr,
            pairs: 3,
        }
    }
}

impl StprRun {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut allowed: Vec<&str> = STPR_KEYS.to_vec();
        allowed.extend(SCENE_KEYS);
        allowed.extend(LOSS_KEYS);
        kv.check_keys(&allowed)?;
        let mut run = StprRun::default();
        let t = &mut run.train;
        kv.get("seed", &mut t.seed)?;
        kv.get("pretrain_steps", &mut t.steps)?;
        kv.get("pretrain_lr", &mut t.lr)?;
        kv.get("batch", &mut t.batch)?;
        kv.get::<NormVariant>("variant", &mut t.variant)?;
        kv.get("adversarial", &mut t.adversarial)?;
        kv.get("critic_width", &mut t.critic_width)?;
        kv.get_list("channels", &mut t.model.channels)?;
        kv.get_list("style_channels", &mut t.model.style_channels)?;
        kv.get("eval_scenes", &mut t.eval_scenes)?;
        let (mut max_shift, mut max_deg) = match t.data.train_motion {
            MotionSource::Random { max_shift, max_deg } => (max_shift, max_deg),
            MotionSource::Fixed(_) => (0.0, 0.0),
        };
        kv.get("max_shift", &mut max_shift)?;
        kv.get("max_deg", &mut max_deg)?;
        t.data.train_motion = MotionSource::Random { max_shift, max_deg };
        t.data.eval_motion = t.data.train_motion;
        scene_from(kv, &mut t.data.scene)?;
        t.model.height = t.data.scene.height;
        t.model.width = t.data.scene.width;
        t.model.scales = t.data.scene.scales;
        weights_from(kv, &mut t.weights)?;
        let s = &mut run.stpr;
        kv.get("steps", &mut s.steps)?;
        kv.get("lr", &mut s.lr)?;
        s.batch = run.train.batch;
        s.eval_scenes = run.train.eval_scenes;
        kv.get("freeze_encoders", &mut s.freeze_encoders)?;
        kv.get("self_replacement", &mut s.self_replacement)?;
        kv.get("pairs", &mut run.pairs)?;
        run.train.validate()?;
        Ok(run)
    }

    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "pretrain_steps = {}", t.steps);
        let _ = writeln!(s, "pretrain_lr = {}", t.lr);
        let _ = writeln!(s, "steps = {}", self.stpr.steps);
        let _ = writeln!(s, "lr = {}", self.stpr.lr);
        let _ = writeln!(s, "batch = {}", t.batch);
        let _ = writeln!(s, "variant = {}", t.variant);
        let _ = writeln!(s, "adversarial = {}", t.adversarial);
        let _ = writeln!(s, "critic_width = {}", t.critic_width);
        let _ = writeln!(s, "freeze_encoders = {}", self.stpr.freeze_encoders);
        let _ = writeln!(s, "self_replacement = {}", self.stpr.self_replacement);
        scene_kv(&mut s, &t.data.scene);
        let _ = writeln!(s, "channels = {}", join(&t.model.channels));
        let _ = writeln!(s, "style_channels = {}", join(&t.model.style_channels));
        weights_kv(&mut s, &t.weights);
        if let MotionSource::Random { max_shift, max_deg } = t.data.train_motion {
            let _ = writeln!(s, "max_shift = {max_shift}");
            let _ = writeln!(s, "max_deg = {max_deg}");
        }
        let _ = writeln!(s, "eval_scenes = {}", t.eval_scenes);
        let _ = writeln!(s, "pairs = {}", self.pairs);
        s
    }
}
