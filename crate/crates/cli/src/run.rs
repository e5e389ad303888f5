use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use factsum::kv;
use serde::{Deserialize, Serialize};

pub const RUN_ROOT_ENV: &str = "FACTSUM_RUN_ROOT";

/// 2 for runtime failures, 1 for everything the user can fix by changing inputs.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<factsum::Error>() {
            return match e {
                factsum::Error::Io { .. } | factsum::Error::Diverged { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// Output directory of one invocation, with its manifest entries.
pub struct RunDir {
    pub path: PathBuf,
    manifest: Vec<(String, String)>,
}

impl RunDir {
    pub fn create(explicit: Option<PathBuf>, command: &str) -> Result<Self> {
        let path = explicit.unwrap_or_else(|| {
            let root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "runs".into());
            root.join(command)
        });
        fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        Ok(RunDir {
            path,
            manifest: vec![
                ("command".to_string(), command.to_string()),
                ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ],
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
        self.manifest.push((format!("input.{key}"), abs.display().to_string()));
        Ok(())
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((format!("param.{key}"), value.to_string()));
    }

    pub fn output(&mut self, key: &str, file: &str) {
        self.manifest.push((format!("output.{key}"), file.to_string()));
    }

    pub fn write_text(&mut self, key: &str, file: &str, text: &str) -> Result<()> {
        let path = self.file(file);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.output(key, file);
        Ok(())
    }

    /// Writes the manifest; call last.
    pub fn finish(self) -> Result<()> {
        let path = self.path.join("manifest.txt");
        fs::write(&path, kv::render_flat(&self.manifest)).with_context(|| format!("writing {}", path.display()))
    }
}

/// Scalar entries of a manifest written by [`RunDir::finish`].
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let doc = kv::parse_file(path)?;
    Ok(doc.flat_scalars().into_iter().map(|(k, v, _)| (k, v)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub summary: String,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut text = String::new();
    for p in preds {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let f = fs::File::open(path).map_err(|e| factsum::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(p) => out.push(p),
            Err(e) => bail!("{}:{}: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}
