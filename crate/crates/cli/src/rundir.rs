//! On-disk layout of a run directory.
//!
//! ```text
//! FORMAT                    format tag
//! config.toml               resolved configuration
//! split/train.csv, test.csv chronological split of the target ratings
//! seed-<s>/                 pipeline artifacts for one seed
//! reports/                  seeds.csv, summary.json, summary.txt
//! manifest.json             sha256 of every other file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FORMAT_TAG: &str = "dcdcsr-run v1";
pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Creates the directory and its format tag, or checks an existing tag.
    pub fn init(&self) -> Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("cannot create {}", self.root.display()))?;
        let tag = self.root.join("FORMAT");
        if tag.exists() {
            self.check_format()
        } else {
            fs::write(&tag, format!("{FORMAT_TAG}\n"))?;
            Ok(())
        }
    }

    pub fn check_format(&self) -> Result<()> {
        let tag = self.root.join("FORMAT");
        let found = fs::read_to_string(&tag).with_context(|| format!("{} is not a run directory", self.root.display()))?;
        if found.trim() != FORMAT_TAG {
            bail!("{}: unsupported run format {:?}", tag.display(), found.trim());
        }
        Ok(())
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("split/train.csv")
    }

    pub fn test(&self) -> PathBuf {
        self.root.join("split/test.csv")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Fails with the missing file's path unless every `path` exists.
    pub fn require(&self, paths: &[PathBuf], produced_by: &str) -> Result<()> {
        for p in paths {
            if !p.exists() {
                bail!("missing {}; run the `{produced_by}` stage first", p.display());
            }
        }
        Ok(())
    }

    /// Rewrites the manifest to cover every file currently in the directory.
    pub fn write_manifest(&self) -> Result<()> {
        let mut files = BTreeMap::new();
        collect(&self.root, &self.root, &mut files)?;
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let m = Manifest {
            format: FORMAT_TAG,
            created_unix: created,
            files,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest {
    format: &'static str,
    created_unix: u64,
    /// Relative path (with `/` separators) to hex sha256.
    files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            let rel = path.strip_prefix(root).expect("inside root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, sha256_file(&path)?);
        }
    }
    Ok(())
}
