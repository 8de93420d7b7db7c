//! On-disk datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! snapshots/y_001.csv … y_NNN.csv   M rows × n columns, one agent per row
//! grams/g_001.csv … g_NNN.csv       n × n
//! ```
//!
//! Floats are written with 17 significant digits, so reading a dataset back
//! reproduces every value bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{gram_matrix, PermutationSchedule, StateBox};
use crate::error::{Error, Result};
use crate::lqr::{CostMatrix, SystemDynamics};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&r).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
            match Option::<Vec<Vec<f64>>>::deserialize(d)? {
                Some(r) => from_rows(&r).map(Some).map_err(serde::de::Error::custom),
                None => Ok(None),
            }
        }
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(m: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            m.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            Vec::<Vec<Vec<f64>>>::deserialize(d)?
                .iter()
                .map(|r| from_rows(r).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub agents: usize,
    pub seed: u64,
    pub dt: Option<f64>,
    pub bounds: Option<StateBox>,
    /// Bound used when sampling `Q̄`.
    pub phi: Option<f64>,
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    /// Noise covariance; absent for noiseless data.
    #[serde(with = "rows::option")]
    pub sigma: Option<DMatrix<f64>>,
    /// Absent for noiseless data or zero noise energy.
    pub snr_db: Option<f64>,
    #[serde(with = "rows::option")]
    pub q_true: Option<DMatrix<f64>>,
    pub permutations: Option<PermutationSchedule>,
    pub snapshots: Vec<String>,
    pub grams: Vec<String>,
}

/// Snapshots `Y_t` (n × M) and Gram matrices of one dataset, with its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub snapshots: Vec<DMatrix<f64>>,
    pub grams: Vec<DMatrix<f64>>,
}

/// Everything a dataset records besides the snapshots.
#[derive(Debug, Clone, Default)]
pub struct DatasetInfo {
    pub seed: u64,
    pub dt: Option<f64>,
    pub bounds: Option<StateBox>,
    pub phi: Option<f64>,
    pub sigma: Option<DMatrix<f64>>,
    pub snr_db: Option<f64>,
    pub q_true: Option<DMatrix<f64>>,
    pub permutations: Option<PermutationSchedule>,
}

fn snapshot_name(t: usize) -> String {
    format!("snapshots/y_{t:03}.csv")
}

fn gram_name(t: usize) -> String {
    format!("grams/g_{t:03}.csv")
}

impl Dataset {
    pub fn new(dyn_: &SystemDynamics, snapshots: Vec<DMatrix<f64>>, info: DatasetInfo) -> Result<Self> {
        let n = dyn_.n();
        let horizon = snapshots.len();
        if horizon < 2 {
            return Err(Error::Invalid("a dataset needs at least two snapshots".into()));
        }
        let agents = snapshots[0].ncols();
        if snapshots.iter().any(|y| y.nrows() != n || y.ncols() != agents) {
            return Err(Error::Dimension(format!("every snapshot must be {n}×{agents}")));
        }
        if let Some(s) = &info.sigma {
            if s.shape() != (n, n) {
                return Err(Error::Dimension(format!("Σ must be {n}×{n}")));
            }
        }
        if let Some(q) = &info.q_true {
            if q.shape() != (n, n) {
                return Err(Error::Dimension(format!("Q̄ must be {n}×{n}")));
            }
        }
        let grams = snapshots.iter().map(gram_matrix).collect();
        let manifest = DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            n,
            m: dyn_.m(),
            horizon,
            agents,
            seed: info.seed,
            dt: info.dt,
            bounds: info.bounds,
            phi: info.phi,
            a: dyn_.a().clone(),
            b: dyn_.b().clone(),
            sigma: info.sigma,
            snr_db: info.snr_db.filter(|s| s.is_finite()),
            q_true: info.q_true,
            permutations: info.permutations,
            snapshots: (1..=horizon).map(snapshot_name).collect(),
            grams: (1..=horizon).map(gram_name).collect(),
        };
        Ok(Self { manifest, snapshots, grams })
    }

    pub fn dynamics(&self) -> Result<SystemDynamics> {
        SystemDynamics::new(self.manifest.a.clone(), self.manifest.b.clone())
    }

    pub fn q_true(&self) -> Result<Option<CostMatrix>> {
        self.manifest.q_true.clone().map(CostMatrix::new).transpose()
    }

    pub fn sigma(&self) -> Option<&DMatrix<f64>> {
        self.manifest.sigma.as_ref()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("snapshots"))?;
        fs::create_dir_all(dir.join("grams"))?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        for (name, y) in self.manifest.snapshots.iter().zip(&self.snapshots) {
            write_csv(&dir.join(name), &y.transpose())?;
        }
        for (name, g) in self.manifest.grams.iter().zip(&self.grams) {
            write_csv(&dir.join(name), g)?;
        }
        Ok(())
    }

    /// Reads a dataset and checks every file against the manifest. Gram
    /// matrices come from the cached files.
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "dataset schema version {} is not supported (expected {DATASET_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let (n, agents, horizon) = (manifest.n, manifest.agents, manifest.horizon);
        if manifest.snapshots.len() != horizon || manifest.grams.len() != horizon {
            return Err(Error::Invalid("manifest file lists do not match the horizon".into()));
        }
        if manifest.a.shape() != (n, n) || manifest.b.shape() != (n, manifest.m) {
            return Err(Error::Dimension("manifest A or B has the wrong shape".into()));
        }
        for (name, mat) in [("sigma", &manifest.sigma), ("q_true", &manifest.q_true)] {
            if mat.as_ref().is_some_and(|s| s.shape() != (n, n)) {
                return Err(Error::Dimension(format!("manifest {name} must be {n}×{n}")));
            }
        }
        let snapshots = manifest
            .snapshots
            .iter()
            .map(|f| read_csv(&dir.join(f), agents, n).map(|m| m.transpose()))
            .collect::<Result<Vec<_>>>()?;
        let grams = manifest.grams.iter().map(|f| read_csv(&dir.join(f), n, n)).collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, snapshots, grams })
    }

    /// Largest entrywise difference between the cached and recomputed Grams.
    pub fn gram_mismatch(&self) -> f64 {
        self.snapshots
            .iter()
            .zip(&self.grams)
            .map(|(y, g)| (gram_matrix(y) - g).amax())
            .fold(0.0, f64::max)
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        std::iter::once(dir.join(MANIFEST_FILE))
            .chain(self.manifest.snapshots.iter().chain(&self.manifest.grams).map(|f| dir.join(f)))
            .collect()
    }
}

pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut count = 0;
    for record in reader.records() {
        let record = record?;
        if record.len() != cols {
            return Err(Error::Dimension(format!("{}: expected {cols} columns, found {}", path.display(), record.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Serde(format!("{}: cannot parse {field:?} as a number", path.display())))?;
            data.push(v);
        }
        count += 1;
    }
    if count != rows {
        return Err(Error::Dimension(format!("{}: expected {rows} rows, found {count}", path.display())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
