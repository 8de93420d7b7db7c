use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub barrier_t: f64,
    pub decrement: f64,
    pub objective: f64,
    pub min_eigenvalue: f64,
}

/// Per-Newton-step solver trace as CSV.
pub struct TraceWriter {
    inner: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self { inner: csv::Writer::from_path(path)? })
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
