//! Symmetric block-tridiagonal matrices and their block Cholesky factor.
//!
//! Storage is `diag[i] = H(i, i)` and `lower[i] = H(i + 1, i)`; the upper band is
//! implied by symmetry. Factorization, solves and the adjacent-pair covariance
//! recurrence all run in time linear in the number of blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{PipcError, Result};
use crate::gp_model::symmetrize;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonal {
    block: usize,
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(num_blocks: usize, block: usize) -> Self {
        Self {
            block,
            diag: vec![DMatrix::zeros(block, block); num_blocks],
            lower: vec![DMatrix::zeros(block, block); num_blocks.saturating_sub(1)],
        }
    }

    pub fn identity(num_blocks: usize, block: usize) -> Self {
        let mut m = Self::zeros(num_blocks, block);
        m.add_diagonal(1.0);
        m
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn dim(&self) -> usize {
        self.block * self.diag.len()
    }

    pub fn diag(&self, i: usize) -> &DMatrix<f64> {
        &self.diag[i]
    }

    pub fn diag_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.diag[i]
    }

    /// Block `(i + 1, i)`.
    pub fn lower(&self, i: usize) -> &DMatrix<f64> {
        &self.lower[i]
    }

    pub fn lower_mut(&mut self, i: usize) -> &mut DMatrix<f64> {
        &mut self.lower[i]
    }

    /// Adds `lambda · I` to every diagonal block.
    pub fn add_diagonal(&mut self, lambda: f64) {
        for d in &mut self.diag {
            for k in 0..self.block {
                d[(k, k)] += lambda;
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let b = self.block;
        let mut y = DVector::zeros(self.dim());
        for i in 0..self.num_blocks() {
            let xi = x.rows(i * b, b);
            let mut yi = &self.diag[i] * xi;
            if i > 0 {
                yi += &self.lower[i - 1] * x.rows((i - 1) * b, b);
            }
            if i + 1 < self.num_blocks() {
                yi += self.lower[i].tr_mul(&x.rows((i + 1) * b, b));
            }
            y.rows_mut(i * b, b).copy_from(&yi);
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let b = self.block;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (i, d) in self.diag.iter().enumerate() {
            m.view_mut((i * b, i * b), (b, b)).copy_from(d);
        }
        for (i, l) in self.lower.iter().enumerate() {
            m.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(l);
            m.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&l.transpose());
        }
        m
    }

    /// Block Cholesky `H = L Lᵀ` with `L` block lower-bidiagonal.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.num_blocks();
        let mut l_diag: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        let mut l_lower: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut pivot = self.diag[i].clone();
            if i > 0 {
                // L(i, i-1) = H(i, i-1) L(i-1, i-1)^-T
                let prev = &l_diag[i - 1];
                let sub = prev
                    .solve_lower_triangular(&self.lower[i - 1].transpose())
                    .ok_or(PipcError::RankDeficient { block: i - 1 })?
                    .transpose();
                pivot -= &sub * sub.transpose();
                l_lower.push(sub);
            }
            symmetrize(&mut pivot);
            let chol = pivot
                .cholesky()
                .ok_or(PipcError::RankDeficient { block: i })?;
            l_diag.push(chol.unpack());
        }
        Ok(BandedCholesky { block: self.block, l_diag, l_lower })
    }
}

/// Block Cholesky factor of a [`BlockTridiagonal`] matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    block: usize,
    l_diag: Vec<DMatrix<f64>>,
    l_lower: Vec<DMatrix<f64>>,
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let b = self.block;
        let n = self.l_diag.len();
        if rhs.len() != n * b {
            return Err(PipcError::DimensionMismatch {
                expected: n * b,
                got: rhs.len(),
                context: "banded solve rhs",
            });
        }
        let mut y = DVector::zeros(n * b);
        for i in 0..n {
            let mut r = rhs.rows(i * b, b).into_owned();
            if i > 0 {
                r -= &self.l_lower[i - 1] * y.rows((i - 1) * b, b);
            }
            let yi = self.l_diag[i]
                .solve_lower_triangular(&r)
                .ok_or(PipcError::RankDeficient { block: i })?;
            y.rows_mut(i * b, b).copy_from(&yi);
        }
        let mut x = DVector::zeros(n * b);
        for i in (0..n).rev() {
            let mut r = y.rows(i * b, b).into_owned();
            if i + 1 < n {
                r -= self.l_lower[i].tr_mul(&x.rows((i + 1) * b, b));
            }
            let xi = self.l_diag[i]
                .tr_solve_lower_triangular(&r)
                .ok_or(PipcError::RankDeficient { block: i })?;
            x.rows_mut(i * b, b).copy_from(&xi);
        }
        Ok(x)
    }

    /// Diagonal blocks `Σ(i, i)` and sub-diagonal blocks `Σ(i + 1, i)` of `H⁻¹`,
    /// by the backward recurrence on the factor.
    pub fn band_covariances(&self) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let b = self.block;
        let n = self.l_diag.len();
        let eye = DMatrix::<f64>::identity(b, b);
        let mut diag = vec![DMatrix::zeros(b, b); n];
        let mut lower = vec![DMatrix::zeros(b, b); n.saturating_sub(1)];
        for i in (0..n).rev() {
            let l_inv = self.l_diag[i]
                .solve_lower_triangular(&eye)
                .ok_or(PipcError::RankDeficient { block: i })?;
            let mut sii = l_inv.tr_mul(&l_inv);
            if i + 1 < n {
                // Σ(i, i+1) = -L_ii^-T L(i+1,i)^T Σ(i+1, i+1)
                let coupling = l_inv.tr_mul(&self.l_lower[i].transpose());
                let upper = -(&coupling * &diag[i + 1]);
                sii -= &coupling * upper.transpose();
                lower[i] = upper.transpose();
            }
            symmetrize(&mut sii);
            diag[i] = sii;
        }
        Ok((diag, lower))
    }
}

/// Solves `info · δ = rhs` for a block-tridiagonal positive-definite `info`.
pub fn solve_banded(info: &BlockTridiagonal, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    info.cholesky()?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_banded(n: usize, b: usize, seed: u64) -> BlockTridiagonal {
        // Deterministic pseudo-random fill, made diagonally dominant.
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = BlockTridiagonal::zeros(n, b);
        for i in 0..n.saturating_sub(1) {
            *m.lower_mut(i) = DMatrix::from_fn(b, b, |_, _| next());
        }
        for i in 0..n {
            let a = DMatrix::from_fn(b, b, |_, _| next());
            *m.diag_mut(i) = &a * a.transpose() + DMatrix::identity(b, b) * (2.0 * b as f64);
        }
        m
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let m = BlockTridiagonal::identity(4, 3);
        let rhs = DVector::from_fn(12, |i, _| i as f64 - 3.5);
        assert!((solve_banded(&m, &rhs).unwrap() - rhs).amax() < 1e-15);
    }

    #[test]
    fn mul_vec_matches_dense() {
        let m = spd_banded(5, 2, 3);
        let x = DVector::from_fn(10, |i, _| (i as f64).sin());
        assert!((m.mul_vec(&x) - m.to_dense() * &x).amax() < 1e-12);
    }

    #[test]
    fn band_covariances_match_dense_inverse() {
        let m = spd_banded(6, 3, 11);
        let inv = m.to_dense().try_inverse().unwrap();
        let (diag, lower) = m.cholesky().unwrap().band_covariances().unwrap();
        for i in 0..6 {
            assert!((inv.view((3 * i, 3 * i), (3, 3)) - &diag[i]).amax() < 1e-12);
        }
        for i in 0..5 {
            assert!((inv.view((3 * i + 3, 3 * i), (3, 3)) - &lower[i]).amax() < 1e-12);
        }
    }

    #[test]
    fn indefinite_pivot_reported() {
        let mut m = BlockTridiagonal::identity(3, 2);
        m.diag_mut(1)[(0, 0)] = -1.0;
        assert!(matches!(m.cholesky(), Err(PipcError::RankDeficient { block: 1 })));
    }
}
