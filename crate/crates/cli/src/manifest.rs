use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::Command;

/// Record of one invocation. `params_sha256` covers everything that
/// determines the output; paths, thread counts and timing are excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: Option<Config>,
    pub params: Command,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub params_sha256: String,
    pub duration_secs: f64,
}

#[derive(Serialize)]
struct Hashed<'a> {
    command: &'a str,
    config: &'a Option<Config>,
    params: &'a Command,
    seed: Option<u64>,
    version: &'a str,
}

pub fn params_sha256(command: &str, config: &Option<Config>, params: &Command) -> String {
    let body = Hashed {
        command,
        config,
        params,
        seed: params.seed(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let bytes = serde_json::to_vec(&body).expect("parameters serialize");
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(
        params: &Command,
        config_path: Option<PathBuf>,
        config: Option<Config>,
        outputs: Vec<PathBuf>,
        elapsed: Duration,
    ) -> Self {
        let command = params.name().to_string();
        Self {
            params_sha256: params_sha256(&command, &config, params),
            command,
            config_path,
            config,
            params: params.clone(),
            seed: params.seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
            duration_secs: elapsed.as_secs_f64(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Writes to `path`, or to stderr when there is none.
    pub fn write(&self, path: Option<&Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        match path {
            Some(p) => {
                std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
            }
            None => {
                writeln!(std::io::stderr(), "{text}")?;
                Ok(())
            }
        }
    }
}

/// Writes `body` to `path` or stdout.
pub fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}
