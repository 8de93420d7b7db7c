use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{smat, svec, svec_len};

/// Named symmetric-matrix variables stacked as consecutive `svec` segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdpVariableLayout {
    blocks: Vec<(String, usize)>,
    offsets: Vec<usize>,
    dim: usize,
}

impl SdpVariableLayout {
    pub fn new(blocks: Vec<(String, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for (_, side) in &blocks {
            offsets.push(dim);
            dim += svec_len(*side);
        }
        Self { blocks, offsets, dim }
    }

    /// `Q, P_1, …, P_{N−1}`, each `n×n`; `P_N` is identified with `Q`.
    pub fn ioc(n: usize, horizon: usize) -> Self {
        let mut blocks = vec![("Q".to_string(), n)];
        blocks.extend((1..horizon).map(|t| (format!("P{t}"), n)));
        Self::new(blocks)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn name(&self, block: usize) -> &str {
        &self.blocks[block].0
    }

    pub fn side(&self, block: usize) -> usize {
        self.blocks[block].1
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    /// Scalar index range of one block.
    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        let o = self.offsets[block];
        o..o + svec_len(self.blocks[block].1)
    }

    pub fn pack(&self, mats: &[DMatrix<f64>]) -> Result<DVector<f64>> {
        if mats.len() != self.blocks.len() {
            return Err(Error::Dimension(format!("expected {} blocks, got {}", self.blocks.len(), mats.len())));
        }
        let mut v = DVector::zeros(self.dim);
        for (k, m) in mats.iter().enumerate() {
            if m.shape() != (self.side(k), self.side(k)) {
                return Err(Error::Dimension(format!("block {} must be {}×{}", self.name(k), self.side(k), self.side(k))));
            }
            v.rows_mut(self.offsets[k], svec_len(self.side(k))).copy_from(&svec(m));
        }
        Ok(v)
    }

    pub fn unpack(&self, v: &DVector<f64>) -> Vec<DMatrix<f64>> {
        assert_eq!(v.len(), self.dim, "vector length differs from layout dimension");
        (0..self.blocks.len()).map(|k| smat(&v.as_slice()[self.range(k)], self.side(k))).collect()
    }

    pub fn block(&self, v: &DVector<f64>, block: usize) -> DMatrix<f64> {
        smat(&v.as_slice()[self.range(block)], self.side(block))
    }
}
