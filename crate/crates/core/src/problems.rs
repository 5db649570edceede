//! Reference spectra for validating the solver.
//!
//! Two independent sources: the closed-form eigenvalues of the 7-point
//! Laplacian, and a dense assembly followed by the Jacobi eigensolver.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::multivec::{sym_eig, MultiVector, SmallMatrix};
use crate::operators::{Grid3D, LinearOperator};

/// Largest operator dimension the dense oracle accepts by default.
pub const DENSE_ORACLE_LIMIT: usize = 600;

/// One eigenvalue of the grid Laplacian and its 1-based mode indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub value: f64,
    pub index: [usize; 3],
}

/// Every eigenvalue of the 7-point Laplacian on a grid, ascending.
#[derive(Clone, Debug)]
pub struct AnalyticSpectrum {
    grid: Grid3D,
    modes: Vec<Mode>,
}

impl AnalyticSpectrum {
    pub fn new(grid: Grid3D) -> Self {
        let modes = smallest_modes(grid, grid.len());
        Self { grid, modes }
    }

    pub fn grid(&self) -> Grid3D {
        self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn values(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.value).collect()
    }
}

/// `4 sin²(iπ / 2(n+1)) = 2 − 2 cos(iπ / (n+1))`, one axis' contribution.
///
/// The value is rational only when the cosine is 0 or ±½; those cases are
/// returned exactly instead of through `sin`.
fn axis_term(i: usize, n: usize) -> f64 {
    let q = n + 1;
    if 2 * i == q {
        return 2.0;
    }
    if 3 * i == q {
        return 1.0;
    }
    if 3 * i == 2 * q {
        return 3.0;
    }
    let s = (i as f64 * PI / (2.0 * q as f64)).sin();
    4.0 * s * s
}

/// Sums the three axis terms smallest-first so that permuted index
/// triples on a cube give bit-identical values.
fn mode_value(mut terms: [f64; 3]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms[0] + terms[1] + terms[2]
}

fn smallest_modes(grid: Grid3D, m: usize) -> Vec<Mode> {
    // axis terms increase with the index, so the m smallest need index <= m per axis
    let (mx, my, mz) = (grid.nx.min(m), grid.ny.min(m), grid.nz.min(m));
    let tx: Vec<f64> = (1..=mx).map(|i| axis_term(i, grid.nx)).collect();
    let ty: Vec<f64> = (1..=my).map(|j| axis_term(j, grid.ny)).collect();
    let tz: Vec<f64> = (1..=mz).map(|k| axis_term(k, grid.nz)).collect();
    let mut modes = Vec::with_capacity(mx * my * mz);
    for (i, &a) in tx.iter().enumerate() {
        for (j, &b) in ty.iter().enumerate() {
            for (k, &c) in tz.iter().enumerate() {
                modes.push(Mode {
                    value: mode_value([a, b, c]),
                    index: [i + 1, j + 1, k + 1],
                });
            }
        }
    }
    // ties ordered lexicographically by (i, j, k), which is the push order
    modes.sort_by(|a, b| a.value.total_cmp(&b.value));
    modes.truncate(m);
    modes
}

/// The `m` smallest Laplacian eigenvalues on `grid`, multiplicities kept.
pub fn exact_eigenvalues(grid: Grid3D, m: usize) -> Result<Vec<f64>> {
    exact_modes(grid, m).map(|modes| modes.into_iter().map(|m| m.value).collect())
}

pub fn exact_modes(grid: Grid3D, m: usize) -> Result<Vec<Mode>> {
    if m > grid.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {m} eigenvalues of a {}-point grid",
            grid.len()
        )));
    }
    Ok(smallest_modes(grid, m))
}

/// Dense matrix of `op`, one coordinate vector per column.
pub fn assemble_dense(op: &dyn LinearOperator) -> Result<SmallMatrix> {
    let n = op.dim();
    let identity = MultiVector::coordinate(n, &(0..n).collect::<Vec<_>>());
    let a = op.apply(&identity)?;
    SmallMatrix::from_col_major(n, n, a.into_vec())
}

/// All eigenvalues of a symmetric operator, ascending, by dense assembly.
pub fn dense_oracle_spectrum(op: &dyn LinearOperator, n_limit: usize) -> Result<Vec<f64>> {
    if op.dim() > n_limit {
        return Err(Error::InvalidArgument(format!(
            "dense oracle limited to dimension {n_limit}, operator has {}",
            op.dim()
        )));
    }
    let dense = assemble_dense(op)?;
    let (vals, _) = sym_eig(&dense)?;
    Ok(vals.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{laplacian3d, DiagonalOperator};

    #[test]
    fn single_point_grid() {
        let v = exact_eigenvalues(Grid3D::cube(1).unwrap(), 1).unwrap();
        assert_eq!(v, vec![6.0]);
    }

    #[test]
    fn two_cube_smallest_is_three() {
        let v = exact_eigenvalues(Grid3D::cube(2).unwrap(), 8).unwrap();
        assert_eq!(v[0], 3.0);
        assert_eq!(v[7], 9.0);
    }

    #[test]
    fn sixteen_cube_triple_multiplicity() {
        let modes = exact_modes(Grid3D::cube(16).unwrap(), 4).unwrap();
        assert_eq!(modes[0].index, [1, 1, 1]);
        assert_eq!(modes[1].value, modes[2].value);
        assert_eq!(modes[2].value, modes[3].value);
        assert_eq!(
            [modes[1].index, modes[2].index, modes[3].index],
            [[1, 1, 2], [1, 2, 1], [2, 1, 1]]
        );
    }

    #[test]
    fn full_spectrum_in_open_range() {
        let s = AnalyticSpectrum::new(Grid3D::new(3, 4, 5).unwrap());
        let v = s.values();
        assert_eq!(v.len(), 60);
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
        assert!(v.iter().all(|&x| x > 0.0 && x < 12.0));
        assert_eq!(exact_eigenvalues(s.grid(), 60).unwrap(), v);
    }

    #[test]
    fn out_of_range_request() {
        assert!(exact_eigenvalues(Grid3D::cube(2).unwrap(), 9).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let a = exact_eigenvalues(Grid3D::new(4, 5, 6).unwrap(), 120).unwrap();
        let b = exact_eigenvalues(Grid3D::new(6, 4, 5).unwrap(), 120).unwrap();
        let c = exact_eigenvalues(Grid3D::new(5, 6, 4).unwrap(), 120).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn clustered_grid_has_distinct_values() {
        let v = exact_eigenvalues(Grid3D::new(8, 9, 10).unwrap(), 720).unwrap();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dense_oracle_on_diagonal() {
        let op = DiagonalOperator::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(dense_oracle_spectrum(&op, 10).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(dense_oracle_spectrum(&op, 2).is_err());
    }

    #[test]
    fn dense_oracle_on_line() {
        let op = laplacian3d(Grid3D::new(3, 1, 1).unwrap());
        let v = dense_oracle_spectrum(&op, 10).unwrap();
        let s = |x: f64| x.sin() * x.sin();
        let expected = [4.0 + 4.0 * s(PI / 8.0), 6.0, 4.0 + 4.0 * s(3.0 * PI / 8.0)];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_oracle_matches_formula_on_four_cube() {
        let g = Grid3D::cube(4).unwrap();
        let dense = dense_oracle_spectrum(&laplacian3d(g), DENSE_ORACLE_LIMIT).unwrap();
        let exact = exact_eigenvalues(g, 64).unwrap();
        for (a, b) in dense.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-11 * b, "{a} vs {b}");
        }
    }
}
