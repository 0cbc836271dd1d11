//! Sinkhorn-Knopp projection onto doubly stochastic matrices and the
//! convex stream-mixing step built on it.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Mat64;

/// Finite square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(Mat64);

impl SquareMatrix {
    pub fn new(m: Mat64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                context: "square matrix",
                expected: m.rows(),
                got: m.cols(),
            });
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Mat64::from_rows(rows)?)
    }

    pub fn identity(dim: usize) -> Self {
        Self(Mat64::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0.get(r, c)
    }

    pub fn as_mat(&self) -> &Mat64 {
        &self.0
    }

    pub fn into_mat(self) -> Mat64 {
        self.0
    }

    pub fn matmul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        SquareMatrix::new(self.0.matmul(&other.0)?)
    }

    fn row_sum(&self, r: usize) -> f64 {
        self.0.row(r).iter().sum()
    }

    fn col_sum(&self, c: usize) -> f64 {
        (0..self.dim()).map(|r| self.0.get(r, c)).sum()
    }

    /// Largest absolute deviation of any row or column sum from 1.
    pub fn max_marginal_deviation(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.row_sum(i) - 1.0).abs().max((self.col_sum(i) - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub max_iters: usize,
    /// Bound on the max row/column sum deviation.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tolerance: 1e-9,
        }
    }
}

/// Alternating row/column normalisation of a strictly positive matrix.
pub fn sinkhorn_project(m: &SquareMatrix, cfg: SinkhornConfig) -> Result<SquareMatrix> {
    if cfg.max_iters == 0 || !(cfg.tolerance > 0.0) {
        return Err(Error::Parameter("sinkhorn needs max_iters >= 1 and tolerance > 0".into()));
    }
    if m.dim() == 0 {
        return Err(Error::Parameter("sinkhorn needs a non-empty matrix".into()));
    }
    if let Some(bad) = m.0.as_slice().iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(alloc::format!(
            "sinkhorn requires strictly positive finite entries, found {bad}"
        )));
    }
    let mut out = m.clone();
    let mut deviation = out.max_marginal_deviation();
    if deviation <= cfg.tolerance {
        return Ok(out);
    }
    let n = out.dim();
    for _ in 0..cfg.max_iters {
        for r in 0..n {
            let s = out.row_sum(r);
            for c in 0..n {
                let v = out.0.get(r, c) / s;
                out.0.set(r, c, v);
            }
        }
        for c in 0..n {
            let s = out.col_sum(c);
            for r in 0..n {
                let v = out.0.get(r, c) / s;
                out.0.set(r, c, v);
            }
        }
        deviation = out.max_marginal_deviation();
        if deviation <= cfg.tolerance {
            return Ok(out);
        }
    }
    Err(Error::Convergence {
        iterations: cfg.max_iters,
        deviation,
    })
}

/// Entries ≥ −tol and every row/column sum within `tol` of 1.
pub fn is_doubly_stochastic(m: &SquareMatrix, tol: f64) -> bool {
    m.0.as_slice().iter().all(|&v| v >= -tol) && m.max_marginal_deviation() <= tol
}

/// `M · features` for a `streams × width` feature block; every output stream
/// is a convex combination of the input streams.
pub fn mixed_residual_step(features: &Mat64, m: &SquareMatrix) -> Result<Mat64> {
    if m.dim() != features.rows() {
        return Err(Error::Dimension {
            context: "mixing matrix vs stream count",
            expected: features.rows(),
            got: m.dim(),
        });
    }
    if !is_doubly_stochastic(m, 1e-6) {
        return Err(Error::Precondition("mixing matrix is not doubly stochastic".into()));
    }
    m.0.matmul(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn doubly_stochastic_checks() {
        assert!(is_doubly_stochastic(&SquareMatrix::identity(3), 1e-12));
        let half = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(is_doubly_stochastic(&half, 1e-12));
        let off = SquareMatrix::from_rows(&[vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        assert!(!is_doubly_stochastic(&off, 1e-6));
    }

    #[test]
    fn fixed_point_and_all_ones() {
        let half = SquareMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(sinkhorn_project(&half, SinkhornConfig::default()).unwrap(), half);
        let ones = SquareMatrix::new(Mat64::from_vec(4, 4, vec![1.0; 16]).unwrap()).unwrap();
        let p = sinkhorn_project(&ones, SinkhornConfig::default()).unwrap();
        assert!(p.as_mat().as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rejects_zero_entries_and_reports_nonconvergence() {
        let z = SquareMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            sinkhorn_project(&z, SinkhornConfig::default()),
            Err(Error::Domain(_))
        ));
        let hard = SquareMatrix::from_rows(&[vec![1.0, 1e-6], vec![1.0, 1.0]]).unwrap();
        let cfg = SinkhornConfig { max_iters: 1, tolerance: 1e-15 };
        match sinkhorn_project(&hard, cfg) {
            Err(Error::Convergence { iterations, deviation }) => {
                assert_eq!(iterations, 1);
                assert!(deviation > 1e-15);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn mixing_identity_and_constants() {
        let f = Mat64::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(mixed_residual_step(&f, &SquareMatrix::identity(3)).unwrap(), f);
        let m = sinkhorn_project(
            &SquareMatrix::from_rows(&[
                vec![1.0, 2.0, 3.0],
                vec![0.5, 0.1, 2.0],
                vec![4.0, 1.0, 1.0],
            ])
            .unwrap(),
            SinkhornConfig::default(),
        )
        .unwrap();
        let c = Mat64::from_rows(&vec![vec![0.7, -1.3]; 3]).unwrap();
        let out = mixed_residual_step(&c, &m).unwrap();
        for r in 0..3 {
            assert!((out.get(r, 0) - 0.7).abs() < 1e-8);
            assert!((out.get(r, 1) + 1.3).abs() < 1e-8);
        }
        let bad = SquareMatrix::from_rows(&[vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let f2 = Mat64::zeros(2, 3);
        assert!(matches!(mixed_residual_step(&f2, &bad), Err(Error::Precondition(_))));
    }
}
