//! Run directory bookkeeping: every stage records the files it produced
//! in `run_manifest.json` together with its effective config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub stage: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// Paths relative to the run directory.
    pub files: BTreeMap<String, FileEntry>,
}

pub struct RunDir {
    pub root: PathBuf,
    stage: String,
    produced: Vec<PathBuf>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(zonegraph::Error::InvalidInput(format!("{}: {e}", path.display())))
}

impl RunDir {
    pub fn open(cfg: &RunConfig, stage: &str) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
        Ok(Self {
            root: cfg.out_dir.clone(),
            stage: stage.to_string(),
            produced: Vec::new(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// Note an output file, relative to the run directory.
    pub fn record(&mut self, rel: impl Into<PathBuf>) {
        self.produced.push(rel.into());
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(&rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.record(rel.as_ref());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("serialisable artifact");
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    /// Record the effective config and fold the produced files into the
    /// run manifest. Entries of earlier stages are kept.
    pub fn finish(mut self, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
        let cfg_rel = PathBuf::from(format!("config/{}.toml", self.stage));
        self.write(&cfg_rel, cfg.to_toml().as_bytes())?;
        let manifest_path = self.path(RUN_MANIFEST);
        let mut manifest = match fs::read_to_string(&manifest_path) {
            Ok(text) => {
                let m: RunManifest = serde_json::from_str(&text)
                    .map_err(|e| CliError::Core(zonegraph::Error::InvalidInput(format!("{}: {e}", manifest_path.display()))))?;
                if m.schema_version != RUN_SCHEMA_VERSION {
                    return Err(CliError::Core(zonegraph::Error::VersionMismatch {
                        what: RUN_MANIFEST.into(),
                        expected: RUN_SCHEMA_VERSION,
                        found: m.schema_version,
                    }));
                }
                m
            }
            Err(_) => RunManifest {
                schema_version: RUN_SCHEMA_VERSION,
                files: BTreeMap::new(),
            },
        };
        for rel in &self.produced {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            let key = rel.to_string_lossy().replace('\\', "/");
            manifest.files.insert(
                key,
                FileEntry {
                    stage: self.stage.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                },
            );
        }
        let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        s.push('\n');
        fs::write(&manifest_path, s).map_err(|e| io_err(&manifest_path, e))?;
        Ok(self.produced)
    }
}

/// Every file under `dir`, relative to `base`, sorted.
pub fn files_under(base: &Path, dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| e.path().strip_prefix(base).ok().map(Path::to_path_buf))
        .collect();
    out.sort();
    out
}
