use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn version() -> String {
    match option_env!("WARPNORM_GIT_DESCRIBE") {
        Some(d) => d.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// One per run, written last as `manifest.txt` under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub version: String,
    pub wall_clock_secs: f64,
    /// File name and SHA-256 of every artifact, in write order.
    pub artifacts: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_path: Option<&Path>, seed: u64, out_dir: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            out_dir: out_dir.to_path_buf(),
            version: version(),
            wall_clock_secs: 0.0,
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` to `out_dir/name` and records its hash.
    pub fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.artifacts.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subcommand = {}", self.subcommand);
        let cfg = self
            .config_path
            .as_ref()
            .map_or("<defaults>".into(), |p| p.display().to_string());
        let _ = writeln!(s, "config = {cfg}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "wall_clock_secs = {:.3}", self.wall_clock_secs);
        for (name, hash) in &self.artifacts {
            let _ = writeln!(s, "artifact {name} sha256:{hash}");
        }
        s
    }

    pub fn finish(&self) -> Result<()> {
        let path = self.out_dir.join("manifest.txt");
        std::fs::write(&path, self.render()).map_err(CliError::io(&path))
    }
}
