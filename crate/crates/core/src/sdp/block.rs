use nalgebra::{DMatrix, DVector};

use crate::linalg::{svec_len, sym_basis};

/// Affine symmetric-matrix map `F(x) = F₀ + Σ_k x_k F_k`, kept as a sparse
/// list of `(variable index, coefficient)` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn new(name: impl Into<String>, constant: DMatrix<f64>) -> Self {
        assert!(constant.is_square(), "LMI constant must be square");
        Self { name: name.into(), constant, terms: Vec::new() }
    }

    /// `X ⪰ 0` for the symmetric variable stored at `offset`.
    pub fn psd(name: impl Into<String>, offset: usize, side: usize) -> Self {
        let mut b = Self::new(name, DMatrix::zeros(side, side));
        b.add_linear_map(offset, side, |e| e.clone());
        b
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        assert_eq!(coeff.shape(), self.constant.shape(), "coefficient shape differs from block");
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, c)) => *c += coeff,
            None => self.terms.push((var, coeff)),
        }
    }

    /// Adds `X ↦ map(X)` for the `side×side` symmetric variable at `offset`,
    /// by evaluating `map` on each orthonormal basis matrix.
    pub fn add_linear_map(&mut self, offset: usize, side: usize, map: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) {
        for k in 0..svec_len(side) {
            let img = map(&sym_basis(side, k));
            if img.iter().any(|&v| v != 0.0) {
                self.add_term(offset + k, img);
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (v, c) in &self.terms {
            let xv = x[*v];
            if xv != 0.0 {
                f.zip_apply(c, |a, b| *a += xv * b);
            }
        }
        f
    }
}

/// `‖x[start..start+len]‖² ≤ radius_sq`, handled by the barrier `−log(radius_sq − ‖·‖²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrobeniusBall {
    pub start: usize,
    pub len: usize,
    pub radius_sq: f64,
}

impl FrobeniusBall {
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        self.radius_sq - x.rows(self.start, self.len).norm_squared()
    }
}
