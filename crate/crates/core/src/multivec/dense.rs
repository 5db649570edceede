//! Small dense matrices and the factorizations the Rayleigh–Ritz step needs.
//!
//! Everything here operates on matrices whose dimension is bounded by a few
//! times the block size, so plain `O(k³)` loops are used throughout.

use std::fmt;

use crate::error::{dim_mismatch, Error, Result};

/// Sweep cap for the cyclic Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Off-diagonal Frobenius norm threshold, relative to `‖G‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-14;

/// Dense column-major real matrix.
#[derive(Clone, PartialEq)]
pub struct SmallMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for SmallMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SmallMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.5e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for SmallMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SmallMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row slices (convenient for literals in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_mismatch("ragged rows"));
        }
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_mismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &SmallMatrix) -> Result<SmallMatrix> {
        if self.cols != rhs.rows {
            return Err(dim_mismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            for l in 0..self.cols {
                let b = rhs[(l, j)];
                if b == 0.0 {
                    continue;
                }
                for i in 0..self.rows {
                    out[(i, j)] += self[(i, l)] * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |self - other|` over all entries.
    pub fn max_abs_diff(&self, other: &SmallMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |G - Gᵀ|`; zero for non-square input is meaningless, so it panics.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst = 0.0f64;
        for j in 0..self.cols {
            for i in 0..j {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && self.asymmetry() <= 1e-12 * self.max_abs()
    }

    /// Copies the upper triangle onto the lower one.
    pub fn symmetrize_from_upper(&mut self) {
        assert!(self.is_square());
        for j in 0..self.cols {
            for i in 0..j {
                self[(j, i)] = self[(i, j)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> SmallMatrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut b = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &SmallMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for j in 0..block.cols {
            for i in 0..block.rows {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    /// Upper-triangular `R` with `RᵀR = G`, reading only the upper triangle of `G`.
    ///
    /// Fails with [`Error::NotSpd`] at the first pivot that is nonpositive or
    /// non-finite. Diagonal rescaling commutes with the factorization:
    /// `chol(D·G·D) = chol(G)·D` (bit-exact when `D` holds powers of two).
    pub fn cholesky(&self) -> Result<SmallMatrix> {
        if !self.is_square() {
            return Err(dim_mismatch("cholesky of a non-square matrix"));
        }
        let n = self.rows;
        let mut r = Self::zeros(n, n);
        for j in 0..n {
            let mut pivot = self[(j, j)];
            for k in 0..j {
                pivot -= r[(k, j)] * r[(k, j)];
            }
            if !pivot.is_finite() || pivot <= 0.0 {
                return Err(Error::NotSpd(j));
            }
            let rjj = pivot.sqrt();
            r[(j, j)] = rjj;
            for i in j + 1..n {
                let mut s = self[(j, i)];
                for k in 0..j {
                    s -= r[(k, j)] * r[(k, i)];
                }
                r[(j, i)] = s / rjj;
            }
        }
        Ok(r)
    }

    fn check_upper_nonsingular(&self) -> Result<()> {
        if !self.is_square() {
            return Err(dim_mismatch("triangular factor must be square"));
        }
        for i in 0..self.rows {
            if self[(i, i)] == 0.0 || !self[(i, i)].is_finite() {
                return Err(Error::Singular(i));
            }
        }
        Ok(())
    }

    /// Solves `R·Z = rhs` for upper-triangular `self`.
    pub fn solve_upper(&self, rhs: &SmallMatrix) -> Result<SmallMatrix> {
        self.check_upper_nonsingular()?;
        let n = self.rows;
        if rhs.rows != n {
            return Err(dim_mismatch("solve_upper rhs rows"));
        }
        let mut z = rhs.clone();
        for c in 0..rhs.cols {
            for i in (0..n).rev() {
                let mut s = z[(i, c)];
                for k in i + 1..n {
                    s -= self[(i, k)] * z[(k, c)];
                }
                z[(i, c)] = s / self[(i, i)];
            }
        }
        Ok(z)
    }

    /// Solves `Rᵀ·Z = rhs` for upper-triangular `self`.
    pub fn solve_upper_transposed(&self, rhs: &SmallMatrix) -> Result<SmallMatrix> {
        self.check_upper_nonsingular()?;
        let n = self.rows;
        if rhs.rows != n {
            return Err(dim_mismatch("solve_upper_transposed rhs rows"));
        }
        let mut z = rhs.clone();
        for c in 0..rhs.cols {
            for i in 0..n {
                let mut s = z[(i, c)];
                for k in 0..i {
                    s -= self[(k, i)] * z[(k, c)];
                }
                z[(i, c)] = s / self[(i, i)];
            }
        }
        Ok(z)
    }

    /// Computes `M·R⁻¹` for upper-triangular `r`.
    pub fn solve_right_upper(&self, r: &SmallMatrix) -> Result<SmallMatrix> {
        r.check_upper_nonsingular()?;
        if self.cols != r.rows {
            return Err(dim_mismatch("solve_right_upper"));
        }
        let mut z = self.clone();
        for j in 0..r.cols {
            for i in 0..self.rows {
                let mut s = z[(i, j)];
                for k in 0..j {
                    s -= z[(i, k)] * r[(k, j)];
                }
                z[(i, j)] = s / r[(j, j)];
            }
        }
        Ok(z)
    }
}

/// Ascending list of eigenvalue (Ritz value) approximations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagonalSpectrum(Vec<f64>);

impl DiagonalSpectrum {
    /// Wraps `values`, rejecting anything that is not nondecreasing.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt()))
        {
            return Err(Error::InvalidArgument(
                "spectrum must be nondecreasing".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_sorted_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        Self(values)
    }
}

impl std::ops::Index<usize> for DiagonalSpectrum {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Eigen-decomposition `G·Q = Q·diag(Λ)` of a symmetric matrix by cyclic Jacobi.
///
/// Only the upper triangle of `g` is read. Eigenvalues come back ascending;
/// ties keep their Jacobi output order.
pub fn sym_eig(g: &SmallMatrix) -> Result<(DiagonalSpectrum, SmallMatrix)> {
    if !g.is_square() {
        return Err(dim_mismatch("sym_eig of a non-square matrix"));
    }
    if g.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sym_eig input"));
    }
    let n = g.rows();
    let mut a = g.clone();
    a.symmetrize_from_upper();
    let mut v = SmallMatrix::identity(n);

    let threshold = JACOBI_REL_TOL * a.frobenius_norm();
    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, t);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > threshold {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut q = SmallMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            q[(i, dst)] = v[(i, src)];
        }
    }
    Ok((DiagonalSpectrum::from_sorted_unchecked(values), q))
}

fn off_diagonal_norm(a: &SmallMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..j {
            s += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// Applies the rotation annihilating `a[p][q]` as `A ← JᵀAJ`, `V ← VJ`.
fn rotate(a: &mut SmallMatrix, v: &mut SmallMatrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = a.rows();
    let apq = a[(p, q)];
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(r, p)];
        let arq = a[(r, q)];
        let new_p = c * arp - s * arq;
        let new_q = s * arp + c * arq;
        a[(r, p)] = new_p;
        a[(p, r)] = new_p;
        a[(r, q)] = new_q;
        a[(q, r)] = new_q;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}

/// Smallest `want` eigenpairs of the pencil `gram_a·C = gram_b·C·Λ`.
///
/// Reduces to a standard problem through `R = chol(gram_b)`; the returned
/// coefficient columns satisfy `Cᵀ·gram_b·C = I`. A Cholesky failure of
/// `gram_b` is returned unchanged so the caller can shrink its basis.
pub fn gen_sym_eig(
    gram_a: &SmallMatrix,
    gram_b: &SmallMatrix,
    want: usize,
) -> Result<(DiagonalSpectrum, SmallMatrix)> {
    if !gram_a.is_square() || gram_a.rows() != gram_b.rows() || !gram_b.is_square() {
        return Err(dim_mismatch("gen_sym_eig pencil shapes"));
    }
    let n = gram_a.rows();
    if want > n {
        return Err(Error::InvalidArgument(format!(
            "want {want} eigenpairs of a {n}x{n} pencil"
        )));
    }
    let r = gram_b.cholesky()?;
    let mut a = gram_a.clone();
    a.symmetrize_from_upper();
    // R⁻ᵀ·A·R⁻¹
    let reduced = r.solve_upper_transposed(&a.solve_right_upper(&r)?)?;
    let (vals, q) = sym_eig(&upper_symmetrized(reduced))?;
    let c = r.solve_upper(&q.block(0, 0, n, want))?;
    let vals = DiagonalSpectrum::from_sorted_unchecked(vals.values()[..want].to_vec());
    Ok((vals, c))
}

fn upper_symmetrized(mut m: SmallMatrix) -> SmallMatrix {
    // average rather than copy: the reduced matrix is only symmetric up to round-off
    let n = m.rows();
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}
