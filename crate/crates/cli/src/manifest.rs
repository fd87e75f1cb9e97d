// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests: the arguments, seeds and file digests needed to
//! reproduce an output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Command line after the binary name.
    pub args: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(subcommand: &str, args: &[String]) -> Self {
        Manifest {
            tool: "convoprobe".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            args: args.to_vec(),
            seeds: BTreeMap::new(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, v: u64) -> &mut Self {
        self.seeds.insert(name.into(), v);
        self
    }

    pub fn param(&mut self, name: &str, v: impl ToString) -> &mut Self {
        self.parameters.insert(name.into(), v.to_string());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self, Failure> {
        let d = digest(path)?;
        self.inputs.push(d);
        Ok(self)
    }

    /// Digests `outputs` and writes the manifest beside the first one.
    pub fn finish(&mut self, outputs: &[&Path]) -> Result<PathBuf, Failure> {
        self.outputs = outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
        let path = manifest_path(outputs[0]);
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::stage("manifest", format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("bad manifest {}: {e}", path.display())))
    }
}

/// `<output>.manifest.json`, for files and directories alike.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn hash_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::stage("manifest", format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 of a file, or of the sorted `name<TAB>hash` listing of a directory.
pub fn digest(path: &Path) -> Result<FileDigest, Failure> {
    let sha256 = if path.is_dir() {
        let mut entries: Vec<(String, PathBuf)> = std::fs::read_dir(path)
            .map_err(|e| Failure::stage("manifest", format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
            .collect();
        entries.sort();
        let mut listing = String::new();
        for (name, p) in &entries {
            listing.push_str(&format!("{name}\t{}\n", hash_file(p)?));
        }
        hex::encode(Sha256::digest(listing.as_bytes()))
    } else {
        hash_file(path)?
    };
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_its_output() {
        assert_eq!(manifest_path(Path::new("out/data.jsonl")), PathBuf::from("out/data.jsonl.manifest.json"));
        assert_eq!(manifest_path(Path::new("prompts")), PathBuf::from("prompts.manifest.json"));
    }

    #[test]
    fn directory_digest_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        let a = digest(dir.path()).unwrap().sha256;
        std::fs::write(dir.path().join("x.txt"), "1").unwrap();
        let b = digest(dir.path()).unwrap().sha256;
        std::fs::write(dir.path().join("x.txt"), "2").unwrap();
        let c = digest(dir.path()).unwrap().sha256;
        assert!(a != b && b != c);
        assert_eq!(a, hex::encode(Sha256::digest(b"")));
    }
}
