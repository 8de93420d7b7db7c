//! Experiment harness: configs, random instances, runners and result records.

pub mod config;
pub mod consistency;
pub mod diagnose;
pub mod estimate;
pub mod instances;
pub mod records;
pub mod simulate;
pub mod sweep;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};

/// Seed of one `(trial, M index)` cell.
pub fn trial_seed(master: u64, trial: usize, m_index: usize) -> u64 {
    derive_seed(master, &[tag::TRIAL, trial as u64, m_index as u64])
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))
}

/// Runs `f`, turning a panic into an error message.
pub(crate) fn isolate<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(match panic.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match panic.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".into(),
            },
        }),
    }
}

pub(crate) fn trace_path(dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    dir.map(|d| d.join(name))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
