use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".esc.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Everything needed to repeat a command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Fully resolved configuration, defaults and flag overrides applied.
    pub config: serde_json::Value,
    /// sha256 of every input file, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub outputs: Vec<String>,
}

/// An output directory held exclusively for one command.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    lock: PathBuf,
}

impl RunDir {
    /// Creates the directory, takes its lock, and writes a `running` manifest.
    pub fn open(path: &Path, command: &str, argv: Vec<String>, config: serde_json::Value, inputs: &[PathBuf]) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                anyhow::Error::new(LockHeld(path.to_path_buf()))
            } else {
                anyhow::Error::new(e).context(format!("creating {}", lock.display()))
            }
        })?;
        writeln!(f, "{}", std::process::id())?;
        let input_digests = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), digest_path(p)?)))
            .collect::<Result<_>>()?;
        let run = Self {
            path: path.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                argv,
                config,
                input_digests,
                code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
                started_at: now(),
                finished_at: None,
                status: RunStatus::Running,
                error: None,
                outputs: Vec::new(),
            },
            lock,
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_owned());
        self.path.join(name)
    }

    pub fn finish(mut self, error: Option<&anyhow::Error>) -> Result<()> {
        self.manifest.finished_at = Some(now());
        self.manifest.status = if error.is_some() { RunStatus::Failed } else { RunStatus::Succeeded };
        self.manifest.error = error.map(|e| format!("{e:#}"));
        self.manifest.outputs.sort();
        self.manifest.outputs.dedup();
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.path.join(MANIFEST_FILE);
        let tmp = self.path.join(".manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.manifest)?)?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[derive(Debug)]
pub struct LockHeld(pub PathBuf);

impl std::fmt::Display for LockHeld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} is in use by another run (remove {} if that run is gone)",
            self.0.display(),
            self.0.join(LOCK_FILE).display()
        )
    }
}

impl std::error::Error for LockHeld {}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let raw = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(serde_json::from_str(&raw)?)
}

/// sha256 of a file, or of a directory's files in sorted order.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect(path, &mut files)?;
        files.sort();
        for f in files {
            h.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
            h.update(fs::read(&f)?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
