//! Dense blocks of column vectors and the block kernels built on them.

mod dense;

pub use dense::{
    gen_sym_eig, sym_eig, DiagonalSpectrum, SmallMatrix, JACOBI_MAX_SWEEPS, JACOBI_REL_TOL,
};

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{dim_mismatch, Error, Result};

/// `n × k` block of real column vectors stored column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiVector {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl MultiVector {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            data: vec![0.0; n * k],
        }
    }

    pub fn from_col_major(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "multivector row dimension must be >= 1".into(),
            ));
        }
        if data.len() != n * k {
            return Err(dim_mismatch(format!(
                "{} entries for an {n}x{k} multivector",
                data.len()
            )));
        }
        Ok(Self { n, k, data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(dim_mismatch("columns of unequal length"));
        }
        Self::from_col_major(n, columns.len(), columns.concat())
    }

    /// Unit coordinate vectors `e_i` for each requested index.
    pub fn coordinate(n: usize, indices: &[usize]) -> Self {
        let mut x = Self::zeros(n, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            x.col_mut(j)[i] = 1.0;
        }
        x
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact would yield nothing useful for k = 0 anyway
        self.data.chunks_exact(self.n.max(1)).take(self.k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.n]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.n] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn select_columns(&self, indices: &[usize]) -> MultiVector {
        let mut data = Vec::with_capacity(self.n * indices.len());
        for &j in indices {
            data.extend_from_slice(self.col(j));
        }
        MultiVector {
            n: self.n,
            k: indices.len(),
            data,
        }
    }

    /// Drops column `j`, shifting the later ones left.
    pub fn remove_column(&mut self, j: usize) {
        assert!(j < self.k);
        self.data.drain(j * self.n..(j + 1) * self.n);
        self.k -= 1;
    }

    pub fn hcat(blocks: &[&MultiVector]) -> Result<MultiVector> {
        let n = blocks.first().map_or(0, |b| b.n);
        if blocks.iter().any(|b| b.n != n) {
            return Err(dim_mismatch("hcat of blocks with different row counts"));
        }
        let k = blocks.iter().map(|b| b.k).sum();
        let mut data = Vec::with_capacity(n * k);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(MultiVector { n, k, data })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MultiVector) -> Result<()> {
        if (self.n, self.k) != (other.n, other.k) {
            return Err(dim_mismatch("axpy shapes"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale_columns(&mut self, factors: &[f64]) {
        assert_eq!(factors.len(), self.k);
        for (j, &f) in factors.iter().enumerate() {
            self.col_mut(j).iter_mut().for_each(|v| *v *= f);
        }
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        self.columns().map(|c| dot(c, c).sqrt()).collect()
    }

    /// `Xᵀ·Y` with entry `(i, j)` the dot product of column `i` of `self`
    /// and column `j` of `other`.
    pub fn gram(&self, other: &MultiVector) -> Result<SmallMatrix> {
        gram(self, other)
    }

    /// `X·C`.
    pub fn times(&self, c: &SmallMatrix) -> Result<MultiVector> {
        if self.k != c.rows() {
            return Err(dim_mismatch(format!(
                "{}x{} multivector times {}x{} matrix",
                self.n,
                self.k,
                c.rows(),
                c.cols()
            )));
        }
        let mut out = MultiVector::zeros(self.n, c.cols());
        for j in 0..c.cols() {
            let dst = &mut out.data[j * self.n..(j + 1) * self.n];
            for l in 0..self.k {
                let coef = c[(l, j)];
                if coef == 0.0 {
                    continue;
                }
                let src = &self.data[l * self.n..(l + 1) * self.n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * coef;
                }
            }
        }
        Ok(out)
    }

    /// `X·R⁻¹` for upper-triangular `R`, by column back-substitution.
    pub fn tri_solve_right(&self, r: &SmallMatrix) -> Result<MultiVector> {
        tri_solve_right(self, r)
    }

    /// `max |self - other|`.
    pub fn max_abs_diff(&self, other: &MultiVector) -> f64 {
        assert_eq!((self.n, self.k), (other.n, other.k));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Xᵀ·Y`. Each entry sums in row order, so `gram(X, Y) == gram(Y, X)ᵀ` exactly.
pub fn gram(x: &MultiVector, y: &MultiVector) -> Result<SmallMatrix> {
    if x.n != y.n {
        return Err(dim_mismatch(format!(
            "gram of {} rows against {} rows",
            x.n, y.n
        )));
    }
    let mut g = SmallMatrix::zeros(x.k, y.k);
    for j in 0..y.k {
        let yj = y.col(j);
        for i in 0..x.k {
            g[(i, j)] = dot(x.col(i), yj);
        }
    }
    Ok(g)
}

/// Replaces `x` by `x·c`; the column count becomes `c.cols()`.
pub fn update_in_place(x: &mut MultiVector, c: &SmallMatrix) -> Result<()> {
    *x = x.times(c)?;
    Ok(())
}

pub fn tri_solve_right(x: &MultiVector, r: &SmallMatrix) -> Result<MultiVector> {
    if !r.is_square() || r.rows() != x.k {
        return Err(dim_mismatch("tri_solve_right factor shape"));
    }
    for i in 0..r.rows() {
        if r[(i, i)] == 0.0 || !r[(i, i)].is_finite() {
            return Err(Error::Singular(i));
        }
    }
    let n = x.n;
    let mut z = x.clone();
    for j in 0..x.k {
        // z_j = (x_j - Σ_{i<j} z_i r_ij) / r_jj
        let (done, rest) = z.data.split_at_mut(j * n);
        let zj = &mut rest[..n];
        for i in 0..j {
            let rij = r[(i, j)];
            if rij == 0.0 {
                continue;
            }
            for (d, s) in zj.iter_mut().zip(&done[i * n..(i + 1) * n]) {
                *d -= s * rij;
            }
        }
        let inv = 1.0 / r[(j, j)];
        zj.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(z)
}

pub fn column_norms(x: &MultiVector) -> Vec<f64> {
    x.column_norms()
}

/// Reproducible `n × k` block with entries uniform in the open interval (−1, 1).
///
/// Uses xoshiro256++ seeded through SplitMix64; column-major fill order.
pub fn seeded_random_fill(n: usize, k: usize, seed: u64) -> MultiVector {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let data = (0..n * k)
        .map(|_| {
            // midpoint of a 2^-53 grid cell: strictly inside (0, 1)
            let u = ((rng.next_u64() >> 11) as f64 + 0.5) * SCALE;
            2.0 * u - 1.0
        })
        .collect();
    MultiVector { n, k, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gram(x: &MultiVector, y: &MultiVector) -> SmallMatrix {
        let mut g = SmallMatrix::zeros(x.ncols(), y.ncols());
        for i in 0..x.ncols() {
            for j in 0..y.ncols() {
                let mut s = 0.0;
                for r in 0..x.nrows() {
                    s += x.get(r, i) * y.get(r, j);
                }
                g[(i, j)] = s;
            }
        }
        g
    }

    #[test]
    fn gram_trivial_cases() {
        let e1 = MultiVector::coordinate(3, &[0]);
        assert_eq!(gram(&e1, &e1).unwrap(), SmallMatrix::identity(1));

        let x = MultiVector::coordinate(2, &[0, 1]);
        let y = MultiVector::from_columns(&[vec![3.0, 4.0]]).unwrap();
        let g = gram(&x, &y).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 1));
        assert_eq!((g[(0, 0)], g[(1, 0)]), (3.0, 4.0));
    }

    #[test]
    fn gram_matches_triple_loop() {
        let x = seeded_random_fill(5, 3, 11);
        let g = gram(&x, &x).unwrap();
        assert!(g.max_abs_diff(&naive_gram(&x, &x)) <= 1e-14);
        assert_eq!(g.asymmetry(), 0.0);
        // positive semidefinite: all eigenvalues nonnegative
        let (vals, _) = sym_eig(&g).unwrap();
        assert!(vals.values().iter().all(|&v| v >= -1e-14));
    }

    #[test]
    fn gram_dimension_mismatch() {
        let x = MultiVector::zeros(3, 1);
        let y = MultiVector::zeros(4, 1);
        assert!(matches!(gram(&x, &y), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn update_identity_and_permutation() {
        let x = seeded_random_fill(4, 2, 1);
        assert_eq!(x.times(&SmallMatrix::identity(2)).unwrap(), x);

        let mut e = MultiVector::coordinate(3, &[0, 1]);
        let swap = SmallMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        update_in_place(&mut e, &swap).unwrap();
        assert_eq!(e, MultiVector::coordinate(3, &[1, 0]));
        assert!(e.times(&SmallMatrix::identity(3)).is_err());
    }

    #[test]
    fn update_matches_triple_loop() {
        let x = seeded_random_fill(6, 3, 5);
        let c = SmallMatrix::from_col_major(3, 2, seeded_random_fill(6, 1, 6).into_vec()).unwrap();
        let y = x.times(&c).unwrap();
        for i in 0..6 {
            for j in 0..2 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += x.get(i, l) * c[(l, j)];
                }
                assert!((y.get(i, j) - s).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn tri_solve_right_cases() {
        let x = seeded_random_fill(5, 2, 2);
        assert_eq!(x.tri_solve_right(&SmallMatrix::identity(2)).unwrap(), x);

        let z = x
            .tri_solve_right(&SmallMatrix::from_diag(&[2.0, 4.0]))
            .unwrap();
        for i in 0..5 {
            assert_eq!(z.get(i, 0), x.get(i, 0) / 2.0);
            assert_eq!(z.get(i, 1), x.get(i, 1) / 4.0);
        }

        let r = SmallMatrix::from_rows(&[&[2.0, 1.0], &[0.0, 2.0]]).unwrap();
        let back = x.tri_solve_right(&r).unwrap().times(&r).unwrap();
        assert!(back.max_abs_diff(&x) <= 1e-13 * x.max_abs());

        let singular = SmallMatrix::from_diag(&[1.0, 0.0]);
        assert_eq!(x.tri_solve_right(&singular), Err(Error::Singular(1)));
    }

    #[test]
    fn norms_and_seeded_fill() {
        assert_eq!(
            MultiVector::coordinate(4, &[0, 2, 3]).column_norms(),
            vec![1.0; 3]
        );
        let v = MultiVector::from_columns(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(column_norms(&v), vec![5.0]);

        let a = seeded_random_fill(7, 3, 42);
        let b = seeded_random_fill(7, 3, 42);
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a.as_slice().iter().all(|&v| v > -1.0 && v < 1.0));
        assert_ne!(a, seeded_random_fill(7, 3, 43));
    }

    #[test]
    fn column_editing() {
        let mut x = seeded_random_fill(3, 4, 0);
        let keep = x.select_columns(&[0, 2, 3]);
        x.remove_column(1);
        assert_eq!(x, keep);
        let h = MultiVector::hcat(&[&keep, &keep]).unwrap();
        assert_eq!(h.ncols(), 6);
        assert_eq!(h.col(4), keep.col(1));
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn gram_transpose_is_exact(n in 1usize..40, kx in 0usize..6, ky in 0usize..6, seed in any::<u64>()) {
            let x = seeded_random_fill(n, kx.max(1), seed).select_columns(&(0..kx).collect::<Vec<_>>());
            let y = seeded_random_fill(n, ky.max(1), seed.wrapping_add(1)).select_columns(&(0..ky).collect::<Vec<_>>());
            prop_assert_eq!(gram(&x, &y).unwrap(), gram(&y, &x).unwrap().transpose());
        }

        #[test]
        fn tri_solve_undoes_update(n in 1usize..40, k in 1usize..8, seed in any::<u64>()) {
            let x = seeded_random_fill(n, k, seed);
            // upper triangular with a dominant diagonal
            let mut r = SmallMatrix::zeros(k, k);
            let entries = seeded_random_fill(k, k, seed ^ 1);
            for j in 0..k {
                for i in 0..=j {
                    r[(i, j)] = entries.get(i, j) * 0.5;
                }
                r[(j, j)] = 1.0 + entries.get(j, j).abs();
            }
            let mut y = x.clone();
            update_in_place(&mut y, &r).unwrap();
            let back = tri_solve_right(&y, &r).unwrap();
            prop_assert!(back.max_abs_diff(&x) <= 1e-12 * x.max_abs());
        }

        #[test]
        fn seeded_fill_in_open_interval(n in 1usize..50, k in 1usize..5, seed in any::<u64>()) {
            let x = seeded_random_fill(n, k, seed);
            prop_assert!(x.as_slice().iter().all(|v| v.abs() < 1.0));
            prop_assert_eq!(x, seeded_random_fill(n, k, seed));
        }
    }
}
