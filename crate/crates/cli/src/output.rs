//! Output directories with a manifest, and input readers that report bad
//! inputs as validation errors.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use riskineq::compare::DensityEstimate;
use riskineq::data::Predicate;
use riskineq::manifest::RunManifest;

use crate::error::{CliError, CliResult};

/// A directory of outputs. Every file written through it is hashed into
/// `manifest.json` by [`OutputDir::finish`].
pub struct OutputDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            manifest: RunManifest::new(command),
            files: Vec::new(),
        })
    }

    fn register(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn file(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.register(name);
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn csv(&mut self, name: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
        let path = self.register(name);
        Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.register(name);
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    pub fn density(&mut self, name: &str, d: &DensityEstimate) -> CliResult<()> {
        let path = self.register(name);
        d.write_csv(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    /// Records a file written by other means.
    pub fn adopt(&mut self, name: &str) {
        self.register(name);
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.manifest.add_input(role, path)?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        let names: Vec<&str> = self.files.iter().map(String::as_str).collect();
        self.manifest.add_outputs(&self.dir, &names)?;
        self.manifest.write(&self.dir.join("manifest.json"))?;
        Ok(())
    }
}

pub fn read_text(path: &Path, what: &str) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    serde_json::from_str(&read_text(path, what)?)
        .map_err(|e| CliError::Validation(format!("invalid {what} {}: {e}", path.display())))
}

pub fn predicate(text: &str, flag: &str) -> CliResult<Predicate> {
    text.parse::<Predicate>()
        .map_err(|e| CliError::Validation(format!("--{flag} `{text}`: {e}")))
}
