//! Subprocess adapter for external systems under test.
//!
//! Contract: `<exe> <templateA> <templateB>` for matchers, `<exe> <image>`
//! for quality scorers, `<exe> <image>` for extractors. Matchers and quality
//! scorers print one ASCII decimal on stdout (leading/trailing whitespace
//! allowed); extractors print a template in the text format. Exit code 0
//! means success. Any wrapped SDK can satisfy this with a few lines of shim.

use crate::formats;
use crate::types::MinutiaeSet;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("failed to launch {exe}: {source}")]
    Spawn {
        exe: PathBuf,
        source: std::io::Error,
    },
    #[error("{exe} timed out after {seconds}s")]
    Timeout { exe: PathBuf, seconds: f64 },
    #[error("{exe} exited with status {status}")]
    NonZeroExit { exe: PathBuf, status: i32 },
    #[error("{exe} produced unparseable output: {output:?}")]
    UnparseableOutput { exe: PathBuf, output: String },
    #[error("{exe} produced an invalid template: {message}")]
    InvalidTemplate { exe: PathBuf, message: String },
    #[error("declared score range is empty: [{min}, {max}]")]
    EmptyScoreRange { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemRole {
    Matcher,
    Extractor,
    Quality,
}

/// An external executable evaluated through the subprocess protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSystem {
    pub name: String,
    pub executable: PathBuf,
    pub role: SystemRole,
    /// Declared score range, used for min-max normalization.
    pub score_min: f64,
    pub score_max: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_timeout() -> f64 {
    30.0
}

/// A raw adapter score, clamped into the declared range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawScore {
    pub value: f64,
    pub clamped: bool,
}

impl ExternalSystem {
    pub fn validate(&self) -> Result<(), AdapterError> {
        // the negated comparison also rejects NaN bounds
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.score_max > self.score_min) {
            return Err(AdapterError::EmptyScoreRange {
                min: self.score_min,
                max: self.score_max,
            });
        }
        Ok(())
    }

    /// Invoke a matcher on two serialized templates.
    pub fn match_external(&self, a: &Path, b: &Path) -> Result<RawScore, AdapterError> {
        let output = self.run(&[a, b])?;
        self.parse_score(&output)
    }

    /// Invoke a quality scorer on one image.
    pub fn quality_external(&self, image: &Path) -> Result<RawScore, AdapterError> {
        let output = self.run(&[image])?;
        self.parse_score(&output)
    }

    /// Invoke an extractor on one image; stdout carries a template.
    pub fn extract_external(&self, image: &Path) -> Result<MinutiaeSet, AdapterError> {
        let output = self.run(&[image])?;
        formats::parse_template(&output).map_err(|e| AdapterError::InvalidTemplate {
            exe: self.executable.clone(),
            message: e.to_string(),
        })
    }

    fn parse_score(&self, output: &str) -> Result<RawScore, AdapterError> {
        let trimmed = output.trim();
        let value: f64 = trimmed
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| AdapterError::UnparseableOutput {
                exe: self.executable.clone(),
                output: trimmed.chars().take(120).collect(),
            })?;
        let clamped = value < self.score_min || value > self.score_max;
        Ok(RawScore {
            value: value.clamp(self.score_min, self.score_max),
            clamped,
        })
    }

    fn run(&self, args: &[&Path]) -> Result<String, AdapterError> {
        let mut child = Command::new(&self.executable)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| AdapterError::Spawn {
                exe: self.executable.clone(),
                source,
            })?;

        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout.read_to_string(&mut buf);
            buf
        });

        let status = self.wait_with_timeout(&mut child)?;
        let output = reader.join().unwrap_or_default();

        if !status_success(status) {
            return Err(AdapterError::NonZeroExit {
                exe: self.executable.clone(),
                status,
            });
        }
        Ok(output)
    }

    /// Poll the child until exit or timeout; kill on timeout.
    fn wait_with_timeout(&self, child: &mut Child) -> Result<i32, AdapterError> {
        let deadline = Instant::now() + Duration::from_secs_f64(self.timeout_secs.max(0.01));
        loop {
            if let Some(status) = child.try_wait().ok().flatten() {
                return Ok(status.code().unwrap_or(-1));
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AdapterError::Timeout {
                    exe: self.executable.clone(),
                    seconds: self.timeout_secs,
                });
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

fn status_success(status: i32) -> bool {
    status == 0
}
