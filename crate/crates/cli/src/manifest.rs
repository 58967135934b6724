//! `manifest.json`: what a run did, with which settings and inputs.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct FileRef {
    pub role: String,
    pub path: PathBuf,
    /// Hex SHA-256 of the file contents.
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub boundreg: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub status: &'static str,
    pub seed: Option<u64>,
    pub settings: serde_json::Value,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    pub versions: Versions,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, settings: serde_json::Value) -> Self {
        Manifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            status: "running",
            seed,
            settings,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions: Versions {
                boundreg: env!("CARGO_PKG_VERSION"),
                checkpoint_format: boundreg::checkpoint::FORMAT_VERSION,
            },
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> io::Result<()> {
        self.inputs.push(file_ref(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> io::Result<()> {
        self.outputs.push(file_ref(role, path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest always serializes");
        fs::write(dir.join("manifest.json"), text + "\n")
    }
}

fn file_ref(role: &str, path: &Path) -> io::Result<FileRef> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(FileRef {
        role: role.to_string(),
        path: path.to_path_buf(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}
