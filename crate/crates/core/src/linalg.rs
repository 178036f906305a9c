//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// `G G^H + σ² I` held through the singular values of `G`.
///
/// The small eigenvalues are `σ² + s_i²` to full relative precision even when
/// the matrix is badly conditioned, which forming the sum explicitly loses.
#[derive(Debug, Clone)]
pub struct ShiftedGram {
    basis: CMat,
    gram_eigs: Vec<f64>,
    shift: f64,
}

impl ShiftedGram {
    pub fn new(factor: &CMat, shift: f64) -> Result<Self> {
        if !(shift > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("shift {shift:e}")));
        }
        let n = factor.nrows();
        let mut padded = CMat::zeros(n, factor.ncols().max(n));
        padded.columns_mut(0, factor.ncols()).copy_from(factor);
        let svd = padded.svd(true, false);
        let basis = svd
            .u
            .ok_or_else(|| Error::NotPositiveDefinite("SVD without left vectors".into()))?;
        let gram_eigs = svd.singular_values.iter().map(|s| s * s).collect();
        Ok(Self {
            basis,
            gram_eigs,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// `ln det(I + G G^H / σ²)`.
    pub fn log_gain(&self) -> f64 {
        self.gram_eigs
            .iter()
            .map(|e| (e / self.shift).ln_1p())
            .sum()
    }

    pub fn logdet(&self) -> f64 {
        self.dim() as f64 * self.shift.ln() + self.log_gain()
    }

    /// `x^H (G G^H + σ² I)^{-1} x`.
    pub fn inv_quad(&self, x: &CVec) -> f64 {
        let proj = self.basis.ad_mul(x);
        proj.iter()
            .zip(&self.gram_eigs)
            .map(|(p, e)| p.norm_sqr() / (e + self.shift))
            .sum()
    }

    /// `tr (G G^H + σ² I)^{-1}`.
    pub fn inv_trace(&self) -> f64 {
        self.gram_eigs.iter().map(|e| 1.0 / (e + self.shift)).sum()
    }

    /// `tr (G G^H + σ² I)^{-1} X X^H`.
    pub fn inv_trace_with(&self, x: &CMat) -> f64 {
        x.column_iter()
            .map(|col| self.inv_quad(&col.into_owned()))
            .sum()
    }
}

/// Real part of the trace.
pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Frobenius norm squared.
pub fn fro2(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm2(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols()))
            .copy_from(b);
        off += b.nrows();
    }
    out
}

/// Keeps the diagonal of a square matrix and zeros the rest.
pub fn diag_part(m: &CMat) -> CMat {
    CMat::from_diagonal(&m.diagonal())
}

/// Columns of `basis` (orthonormal, possibly fewer than `cols`) completed to
/// `cols` orthonormal columns with Gram–Schmidt against the canonical basis.
pub fn complete_orthonormal(basis: &CMat, cols: usize) -> CMat {
    let rows = basis.nrows();
    let mut out: Vec<CVec> = basis
        .column_iter()
        .take(cols)
        .map(|c| c.into_owned())
        .collect();
    let mut e = 0;
    while out.len() < cols && e < rows {
        let mut v = CVec::zeros(rows);
        v[e] = c(1.0, 0.0);
        for q in &out {
            let proj = q.dotc(&v);
            v -= q * proj;
        }
        let n = vec_norm2(&v).sqrt();
        if n > 1e-8 {
            out.push(v.unscale(n));
        }
        e += 1;
    }
    CMat::from_columns(&out)
}
