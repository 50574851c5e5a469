//! Log replay through the estimator.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::config::EstimatorConfig;
use crate::estimator::{Diagnostics, Estimator, EstimatorError};
use crate::stream::{write_trajectory_header, write_trajectory_row, LogReader, StreamError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("line {line}: {source}")]
    Frame { line: usize, source: EstimatorError },
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplaySummary {
    pub frames: usize,
    pub warnings: Vec<String>,
    /// Diagnostics after the last frame, if any frame was processed.
    pub last_diagnostics: Option<Diagnostics>,
}

/// Streams `log` through a fresh estimator, writing one trajectory row per
/// frame and, optionally, one diagnostics JSON line per frame.
pub fn run_replay<R: BufRead, W: Write>(
    log: R,
    config: &EstimatorConfig,
    mut trajectory: W,
    mut diagnostics: Option<&mut dyn Write>,
) -> Result<ReplaySummary, ReplayError> {
    let mut estimator = Estimator::new(config.clone())?;
    let mut summary = ReplaySummary::default();
    write_trajectory_header(&mut trajectory)?;
    for item in LogReader::new(log) {
        let (line, frame) = item?;
        let state = estimator.step(&frame).map_err(|source| ReplayError::Frame { line, source })?;
        write_trajectory_row(&mut trajectory, &state)?;
        if let Some(out) = diagnostics.as_deref_mut() {
            serde_json::to_writer(&mut *out, estimator.diagnostics()).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        summary.frames += 1;
    }
    trajectory.flush()?;
    if let Some(out) = diagnostics {
        out.flush()?;
    }
    if summary.frames == 0 {
        summary.warnings.push("log contains no frames; trajectory is empty".into());
    } else {
        summary.last_diagnostics = Some(estimator.diagnostics().clone());
    }
    Ok(summary)
}
