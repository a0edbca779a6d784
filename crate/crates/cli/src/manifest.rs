use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

/// Record of one subcommand run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// `SOURCE_DATE_EPOCH` when set, so reruns can be byte-identical.
    pub created: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub arguments: Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, String>,
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).with_context(|| format!("{}: cannot read", path.display()))?;
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn basename(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn timestamp() -> Result<String> {
    let when = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(raw) => {
            let secs: i64 = raw.trim().parse().with_context(|| format!("SOURCE_DATE_EPOCH `{raw}` is not an integer"))?;
            DateTime::<Utc>::from_timestamp(secs, 0).with_context(|| format!("SOURCE_DATE_EPOCH {secs} is out of range"))?
        }
        Err(_) => Utc::now(),
    };
    Ok(when.to_rfc3339_opts(SecondsFormat::Secs, true))
}

/// Output directory that remembers what was written to it.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<OutDir> {
        std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create output directory", dir.display()))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write `name` through `f`, buffering and flushing.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("{}: cannot create", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush().with_context(|| format!("{}: flush failed", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        self.written.sort();
        self.written.dedup();
        for name in &self.written {
            manifest.outputs.insert(name.clone(), sha256_file(&self.path(name))?);
        }
        manifest.created = timestamp()?;
        self.write_json(MANIFEST_NAME, &manifest)
    }
}

pub fn manifest(subcommand: &str, seed: Option<u64>, config: Value, arguments: Value) -> RunManifest {
    RunManifest {
        tool: "modfuse",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: subcommand.to_string(),
        created: String::new(),
        seed,
        config,
        arguments,
        inputs: BTreeMap::new(),
        outputs: BTreeMap::new(),
        summary: Value::Null,
    }
}

impl RunManifest {
    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(
            role.to_string(),
            FileDigest {
                file: basename(path),
                sha256: sha256_file(path)?,
            },
        );
        Ok(())
    }
}
