//! Complex matrices and vectors stored as ordered (re, im) pairs.
//!
//! Storage is column-major, so `vec(A)` (column stacking) is just the
//! underlying slice. The packed real layout used by the differentiable parts
//! of the crate is `[re(vec(A)), im(vec(A))]`: all real parts first, then all
//! imaginary parts.

use nalgebra::DMatrix;

pub type C64 = num_complex::Complex64;

/// Dense complex matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    /// Builds from column-major data; `data.len()` must equal `rows * cols`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> crate::Result<Self> {
        if data.len() != rows * cols {
            return Err(crate::Error::Dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[c * self.rows + r] = v;
    }

    /// Column-major entries; equals `vec(self)` by the column-stacking
    /// definition of vectorization.
    pub fn as_vec(&self) -> &[C64] {
        &self.data
    }

    pub fn col(&self, c: usize) -> &[C64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &CMat) -> crate::Result<CMat> {
        self.check_same_shape(other)?;
        Ok(CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &CMat) -> crate::Result<CMat> {
        self.check_same_shape(other)?;
        Ok(CMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    fn check_same_shape(&self, other: &CMat) -> crate::Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(crate::Error::Dimension(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &CMat) -> crate::Result<CMat> {
        if self.cols != other.rows {
            return Err(crate::Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for c in 0..other.cols {
            for k in 0..self.cols {
                let b = other.get(k, c);
                if b == C64::new(0.0, 0.0) {
                    continue;
                }
                let a_col = self.col(k);
                let out_col = &mut out.data[c * self.rows..(c + 1) * self.rows];
                for r in 0..self.rows {
                    out_col[r] += a_col[r] * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> crate::Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(crate::Error::Dimension(format!(
                "matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for (k, x) in v.iter().enumerate() {
            if *x == C64::new(0.0, 0.0) {
                continue;
            }
            let col = self.col(k);
            for r in 0..self.rows {
                out[r] += col[r] * x;
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for c in 0..self.cols {
            for r in 0..=c {
                let d = self.get(r, c) - self.get(c, r).conj();
                if d.norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Horizontal concatenation; all blocks must share the row count.
    pub fn hcat(blocks: &[CMat]) -> crate::Result<CMat> {
        let rows = blocks
            .first()
            .ok_or_else(|| crate::Error::Empty("hcat of zero blocks".into()))?
            .rows;
        let mut data = Vec::new();
        let mut cols = 0;
        for b in blocks {
            if b.rows != rows {
                return Err(crate::Error::Dimension(format!(
                    "hcat row mismatch: {} vs {}",
                    rows, b.rows
                )));
            }
            cols += b.cols;
            data.extend_from_slice(&b.data);
        }
        Ok(CMat { rows, cols, data })
    }

    /// Block-diagonal assembly.
    pub fn block_diag(blocks: &[CMat]) -> crate::Result<CMat> {
        if blocks.is_empty() {
            return Err(crate::Error::Empty("block_diag of zero blocks".into()));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = CMat::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for c in 0..b.cols {
                for r in 0..b.rows {
                    out.set(r0 + r, c0 + c, b.get(r, c));
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        Ok(out)
    }

    pub fn to_na(&self) -> DMatrix<C64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_na(m: &DMatrix<C64>) -> CMat {
        CMat {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }
}

/// Packs a complex vector as `[re..., im...]`.
pub fn pack_split(v: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * v.len());
    out.extend(v.iter().map(|c| c.re));
    out.extend(v.iter().map(|c| c.im));
    out
}

/// Inverse of [`pack_split`]; input length must be even.
pub fn unpack_split(r: &[f64]) -> Vec<C64> {
    let n = r.len() / 2;
    debug_assert_eq!(r.len(), 2 * n);
    (0..n).map(|i| C64::new(r[i], r[n + i])).collect()
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn matmul_against_hand_computed_product() {
        // [1+i, 2; 0, 1-i] * [1, 0; i, 1]
        let a = CMat::from_col_major(
            2,
            2,
            vec![c(1.0, 1.0), c(0.0, 0.0), c(2.0, 0.0), c(1.0, -1.0)],
        )
        .unwrap();
        let b = CMat::from_col_major(
            2,
            2,
            vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(1.0, 0.0)],
        )
        .unwrap();
        let p = a.matmul(&b).unwrap();
        assert_eq!(p.get(0, 0), c(1.0, 3.0));
        assert_eq!(p.get(1, 0), c(1.0, 1.0));
        assert_eq!(p.get(0, 1), c(2.0, 0.0));
        assert_eq!(p.get(1, 1), c(1.0, -1.0));
    }

    #[test]
    fn adjoint_conjugates_and_transposes() {
        let a = CMat::from_col_major(1, 2, vec![c(1.0, 2.0), c(3.0, -4.0)]).unwrap();
        let h = a.adjoint();
        assert_eq!(h.rows(), 2);
        assert_eq!(h.get(0, 0), c(1.0, -2.0));
        assert_eq!(h.get(1, 0), c(3.0, 4.0));
    }

    #[test]
    fn pack_unpack_round_trip() {
        let v = vec![c(1.0, -2.0), c(0.5, 3.0), c(-1.5, 0.0)];
        let packed = pack_split(&v);
        assert_eq!(packed, vec![1.0, 0.5, -1.5, -2.0, 3.0, 0.0]);
        assert_eq!(unpack_split(&packed), v);
    }

    #[test]
    fn block_diag_places_blocks() {
        let a = CMat::identity(2);
        let b = CMat::from_col_major(1, 1, vec![c(5.0, 0.0)]).unwrap();
        let d = CMat::block_diag(&[a, b]).unwrap();
        assert_eq!(d.rows(), 3);
        assert_eq!(d.cols(), 3);
        assert_eq!(d.get(2, 2), c(5.0, 0.0));
        assert_eq!(d.get(2, 0), c(0.0, 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = CMat::zeros(2, 3);
        let b = CMat::zeros(2, 2);
        assert!(a.matmul(&b).is_err());
        assert!(a.add(&b).is_err());
        assert!(a.matvec(&[c(1.0, 0.0); 2]).is_err());
    }
}
