//! Subprocess contract shared by the external detector adapters: the image
//! path is appended to the configured command line, the adapter prints one
//! line of JSON on stdout, and a nonzero exit status signals failure.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use serde::de::DeserializeOwned;

use crate::datamodel::{save_image_png, LoadedImage};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct CommandAdapter {
    program: String,
    args: Vec<String>,
    // One call at a time per adapter instance.
    gate: Mutex<()>,
}

impl CommandAdapter {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            gate: Mutex::new(()),
        }
    }

    /// Splits a whitespace-separated command line (no quoting support).
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Detector("empty detector command".into()))?;
        Ok(Self::new(program, parts.collect()))
    }

    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Runs the adapter on `path` and parses its single-line JSON reply.
    pub fn run<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        let _guard = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(path)
            .output()
            .map_err(|e| Error::Detector(format!("cannot start `{}`: {e}", self.program)))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(Error::Detector(format!(
                "`{}` exited with {}: {}",
                self.command_line(),
                output.status,
                stderr.trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let line = stdout
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Detector(format!("`{}` printed nothing", self.command_line())))?;
        serde_json::from_str(line).map_err(|e| Error::Detector(format!("unparseable detector output: {e}")))
    }

    /// Runs the adapter on the image's source file, writing a temporary PNG
    /// of the working-resolution tensor when the image never came from disk.
    /// Also returns the `(height, width)` frame the reply's coordinates use.
    pub fn run_on_image<T: DeserializeOwned>(&self, image: &LoadedImage) -> Result<(T, (usize, usize))> {
        match &image.source {
            Some(path) => Ok((self.run(path)?, image.original_size())),
            None => {
                let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
                let path = dir.path().join("input.png");
                save_image_png(&path, &image.tensor)?;
                Ok((self.run(&path)?, (image.tensor.height(), image.tensor.width())))
            }
        }
    }
}
