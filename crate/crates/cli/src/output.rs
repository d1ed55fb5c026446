// SPDX-License-Identifier: MIT OR Apache-2.0

//! All-or-nothing output staging.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Files collected in memory and committed together.
#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn add(
        &mut self,
        name: impl Into<String>,
        bytes: impl Into<Vec<u8>>,
    ) -> Result<(), CliError> {
        let name = name.into();
        if self.files.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Usage(format!(
                "output `{name}` would be written twice"
            )));
        }
        self.files.push((name, bytes.into()));
        Ok(())
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    /// Writes every file under a temporary name, then renames them into
    /// place. On failure the temporaries are removed and nothing new is
    /// left in `dir`.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut temps = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (name, bytes) in &self.files {
                let tmp = dir.join(format!(".{name}.partial"));
                temps.push(tmp.clone());
                fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for t in &temps {
                let _ = fs::remove_file(t);
            }
            return Err(e);
        }
        let mut written = Vec::with_capacity(self.files.len());
        for ((name, _), tmp) in self.files.iter().zip(&temps) {
            let dest = dir.join(name);
            fs::rename(tmp, &dest).map_err(|e| CliError::io(&dest, e))?;
            written.push(dest);
        }
        Ok(written)
    }
}
