// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifest written next to every set of outputs.
//!
//! The manifest carries no timestamps or host details, so an identical
//! invocation reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::output::Staged;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    /// Path as given on the command line, or `<shipped>` for bundled data.
    pub path: String,
    pub sha256: String,
}

impl InputRecord {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn shipped(bytes: &[u8]) -> Self {
        Self {
            path: "<shipped>".into(),
            sha256: sha256_hex(bytes),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterventionRecord {
    pub layer: usize,
    pub head: usize,
    pub site: &'static str,
    pub alphas: Vec<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub inputs: BTreeMap<&'static str, InputRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionRecord>,
    pub options: BTreeMap<&'static str, serde_json::Value>,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            inputs: BTreeMap::new(),
            intervention: None,
            options: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn option(&mut self, key: &'static str, value: impl Serialize) {
        self.options
            .insert(key, serde_json::to_value(value).expect("option serializes"));
    }

    /// Records hashes of every staged file, then stages the manifest.
    pub fn stage_into(mut self, staged: &mut Staged) -> Result<(), CliError> {
        self.outputs = staged
            .files()
            .iter()
            .map(|(name, bytes)| OutputRecord {
                file: name.clone(),
                sha256: sha256_hex(bytes),
            })
            .collect();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        staged.add(MANIFEST_NAME, json)
    }
}
