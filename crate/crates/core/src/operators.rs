//! Matrix-free operators `A`, `B` and preconditioners `T`.
//!
//! Operators act on whole [`MultiVector`] blocks. Everything here is
//! immutable after construction and re-entrant, so instances can be shared
//! across threads behind an `Arc`.

use std::sync::Arc;

use crate::error::{dim_mismatch, Error, Result};
use crate::multivec::{dot, MultiVector, SmallMatrix};

pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &MultiVector) -> Result<MultiVector>;

    fn is_symmetric(&self) -> bool {
        true
    }

    fn is_positive_definite(&self) -> bool {
        false
    }

    /// Main diagonal, when it is available without probing.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

pub trait Preconditioner: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, r: &MultiVector) -> Result<MultiVector>;

    /// Whether `apply` is a linear map. Fixed-step inner solvers are not.
    fn is_linear(&self) -> bool {
        true
    }

    fn describe(&self) -> String;
}

impl<T: LinearOperator + ?Sized> LinearOperator for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        (**self).apply(x)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn is_positive_definite(&self) -> bool {
        (**self).is_positive_definite()
    }
    fn diagonal(&self) -> Option<Vec<f64>> {
        (**self).diagonal()
    }
}

impl<T: Preconditioner + ?Sized> Preconditioner for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, r: &MultiVector) -> Result<MultiVector> {
        (**self).apply(r)
    }
    fn is_linear(&self) -> bool {
        (**self).is_linear()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

pub(crate) fn check_rows(expected: usize, x: &MultiVector, who: &str) -> Result<()> {
    if x.nrows() != expected {
        return Err(dim_mismatch(format!(
            "{who} of dimension {expected} applied to {} rows",
            x.nrows()
        )));
    }
    Ok(())
}

/// Interior grid of an `nx × ny × nz` box, lexicographic with `i` fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Grid3D {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Grid3D {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be >= 1, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }
}

/// Unscaled 7-point finite-difference Laplacian with homogeneous Dirichlet
/// boundaries: `(A x)_p = 6 x_p − Σ x_neighbor`.
#[derive(Clone, Debug)]
pub struct Laplacian3D {
    grid: Grid3D,
}

impl Laplacian3D {
    pub fn new(grid: Grid3D) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> Grid3D {
        self.grid
    }

    fn apply_column(&self, x: &[f64], y: &mut [f64]) {
        let Grid3D { nx, ny, nz } = self.grid;
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        for k in 0..nz {
            for j in 0..ny {
                let row = self.grid.index(0, j, k);
                for i in 0..nx {
                    let p = row + i;
                    let mut acc = 6.0 * x[p];
                    if i > 0 {
                        acc -= x[p - sx];
                    }
                    if i + 1 < nx {
                        acc -= x[p + sx];
                    }
                    if j > 0 {
                        acc -= x[p - sy];
                    }
                    if j + 1 < ny {
                        acc -= x[p + sy];
                    }
                    if k > 0 {
                        acc -= x[p - sz];
                    }
                    if k + 1 < nz {
                        acc -= x[p + sz];
                    }
                    y[p] = acc;
                }
            }
        }
    }
}

impl LinearOperator for Laplacian3D {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        check_rows(self.dim(), x, "laplacian")?;
        let mut y = MultiVector::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            self.apply_column(x.col(j), y.col_mut(j));
        }
        Ok(y)
    }

    fn is_positive_definite(&self) -> bool {
        true
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(vec![6.0; self.dim()])
    }
}

pub fn laplacian3d(grid: Grid3D) -> Laplacian3D {
    Laplacian3D::new(grid)
}

#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidArgument("empty diagonal".into()));
        }
        if diag.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("diagonal operator"));
        }
        Ok(Self { diag })
    }
}

impl LinearOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        check_rows(self.dim(), x, "diagonal operator")?;
        let mut y = x.clone();
        for j in 0..y.ncols() {
            for (v, d) in y.col_mut(j).iter_mut().zip(&self.diag) {
                *v *= d;
            }
        }
        Ok(y)
    }

    fn is_positive_definite(&self) -> bool {
        self.diag.iter().all(|&d| d > 0.0)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diag.clone())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityOperator {
    n: usize,
}

impl IdentityOperator {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        check_rows(self.n, x, "identity")?;
        Ok(x.clone())
    }

    fn is_positive_definite(&self) -> bool {
        true
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(vec![1.0; self.n])
    }
}

/// Explicit symmetric matrix. Used for small test problems and oracles.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    matrix: SmallMatrix,
}

impl DenseOperator {
    pub fn new(matrix: SmallMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.rows() == 0 {
            return Err(dim_mismatch("dense operator must be square and nonempty"));
        }
        if matrix.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense operator"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &SmallMatrix {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        check_rows(self.dim(), x, "dense operator")?;
        let n = self.dim();
        let mut y = MultiVector::zeros(n, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.col(c);
            let yc = y.col_mut(c);
            for (l, &xv) in xc.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (yi, a) in yc.iter_mut().zip(self.matrix.col(l)) {
                    *yi += a * xv;
                }
            }
        }
        Ok(y)
    }

    fn is_symmetric(&self) -> bool {
        self.matrix.is_symmetric()
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.matrix.diag())
    }
}

/// `A + α·B` (with `B = I` when absent).
pub struct ShiftedOperator {
    a: Arc<dyn LinearOperator>,
    b: Option<Arc<dyn LinearOperator>>,
    alpha: f64,
}

impl LinearOperator for ShiftedOperator {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        let mut y = self.a.apply(x)?;
        if self.alpha != 0.0 {
            match &self.b {
                Some(b) => y.axpy(self.alpha, &b.apply(x)?)?,
                None => y.axpy(self.alpha, x)?,
            }
        }
        Ok(y)
    }

    fn is_symmetric(&self) -> bool {
        self.a.is_symmetric() && self.b.as_ref().is_none_or(|b| b.is_symmetric())
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let mut d = self.a.diagonal()?;
        let bd = match &self.b {
            Some(b) => b.diagonal()?,
            None => vec![1.0; d.len()],
        };
        for (a, b) in d.iter_mut().zip(bd) {
            *a += self.alpha * b;
        }
        Some(d)
    }
}

pub fn shift_operator(
    a: Arc<dyn LinearOperator>,
    b: Option<Arc<dyn LinearOperator>>,
    alpha: f64,
) -> Result<ShiftedOperator> {
    if let Some(b) = &b {
        if b.dim() != a.dim() {
            return Err(dim_mismatch("shift operands differ in dimension"));
        }
    }
    Ok(ShiftedOperator { a, b, alpha })
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityPreconditioner {
    n: usize,
}

impl IdentityPreconditioner {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Preconditioner for IdentityPreconditioner {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &MultiVector) -> Result<MultiVector> {
        check_rows(self.n, r, "identity preconditioner")?;
        Ok(r.clone())
    }

    fn describe(&self) -> String {
        "none".into()
    }
}

/// `x ↦ D⁻¹x` with `D` the operator's diagonal.
#[derive(Clone, Debug)]
pub struct JacobiPreconditioner {
    diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(i) = diag.iter().position(|&d| !d.is_finite() || d <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "jacobi preconditioner needs a positive diagonal (entry {i} is {})",
                diag[i]
            )));
        }
        Ok(Self {
            diag: diag.to_vec(),
        })
    }

    /// Uses the operator's own diagonal; operators without one need [`Self::probe`].
    pub fn new(op: &dyn LinearOperator) -> Result<Self> {
        let diag = op.diagonal().ok_or_else(|| {
            Error::InvalidArgument(
                "operator does not expose its diagonal; use JacobiPreconditioner::probe".into(),
            )
        })?;
        Self::from_diagonal(&diag)
    }

    /// Extracts the diagonal by applying `op` to every coordinate vector (`n` applies).
    pub fn probe(op: &dyn LinearOperator) -> Result<Self> {
        let n = op.dim();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let e = MultiVector::coordinate(n, &[i]);
            diag.push(op.apply(&e)?.get(i, 0));
        }
        Self::from_diagonal(&diag)
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, r: &MultiVector) -> Result<MultiVector> {
        check_rows(self.dim(), r, "jacobi preconditioner")?;
        let mut y = r.clone();
        for j in 0..y.ncols() {
            for (v, d) in y.col_mut(j).iter_mut().zip(&self.diag) {
                *v /= d;
            }
        }
        Ok(y)
    }

    fn describe(&self) -> String {
        "jacobi".into()
    }
}

pub fn jacobi_preconditioner(op: &dyn LinearOperator) -> Result<JacobiPreconditioner> {
    JacobiPreconditioner::new(op)
}

/// Preconditioned conjugate gradients for `A x = b` from `x = 0`.
///
/// Stops after `max_iter` steps or once `‖b − A x‖ ≤ rtol·‖b‖`; an exactly
/// zero residual always stops. `rtol = 0` therefore runs the full step count.
pub fn pcg_solve(
    a: &dyn LinearOperator,
    m: &dyn Preconditioner,
    b: &[f64],
    max_iter: usize,
    rtol: f64,
) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n || m.dim() != n {
        return Err(dim_mismatch("pcg operands"));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("pcg needs max_iter >= 1".into()));
    }
    let column = |v: Vec<f64>| MultiVector::from_col_major(n, 1, v);

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    let stop = rtol * b_norm;
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut z = m.apply(&column(r.clone())?)?.into_vec();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let ap = a.apply(&column(p.clone())?)?.into_vec();
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Breakdown(it));
        }
        let alpha = rz / pap;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let r_norm = dot(&r, &r).sqrt();
        if r_norm == 0.0 || r_norm <= stop || it + 1 == max_iter {
            break;
        }
        z = m.apply(&column(r.clone())?)?.into_vec();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Ok(x)
}

/// `T·b` defined as a fixed number of PCG steps on `A x = b`, column by column.
///
/// This map is not linear in `b`, so the convergence theory for LOBPCG with
/// an SPD preconditioner does not cover it.
pub struct InnerPcgPreconditioner {
    a: Arc<dyn LinearOperator>,
    inner: Arc<dyn Preconditioner>,
    steps: usize,
}

impl InnerPcgPreconditioner {
    pub fn new(
        a: Arc<dyn LinearOperator>,
        inner: Arc<dyn Preconditioner>,
        steps: usize,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "inner pcg needs at least one step".into(),
            ));
        }
        if a.dim() != inner.dim() {
            return Err(dim_mismatch("inner preconditioner dimension"));
        }
        Ok(Self { a, inner, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

impl Preconditioner for InnerPcgPreconditioner {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, r: &MultiVector) -> Result<MultiVector> {
        check_rows(self.dim(), r, "inner pcg preconditioner")?;
        let mut out = MultiVector::zeros(r.nrows(), r.ncols());
        for j in 0..r.ncols() {
            let x = pcg_solve(
                self.a.as_ref(),
                self.inner.as_ref(),
                r.col(j),
                self.steps,
                0.0,
            )?;
            out.col_mut(j).copy_from_slice(&x);
        }
        Ok(out)
    }

    fn is_linear(&self) -> bool {
        false
    }

    fn describe(&self) -> String {
        format!("pcg:{}", self.steps)
    }
}

pub fn inner_pcg_preconditioner(
    a: Arc<dyn LinearOperator>,
    inner: Arc<dyn Preconditioner>,
    steps: usize,
) -> Result<InnerPcgPreconditioner> {
    InnerPcgPreconditioner::new(a, inner, steps)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::multivec::{gram, seeded_random_fill};
    use proptest::prelude::*;

    fn grid() -> impl Strategy<Value = Grid3D> {
        (1usize..7, 1usize..7, 1usize..7).prop_map(|(a, b, c)| Grid3D::new(a, b, c).unwrap())
    }

    proptest! {
        #[test]
        fn laplacian_is_linear(g in grid(), seed in any::<u64>(), alpha in -3.0f64..3.0) {
            let a = laplacian3d(g);
            let x = seeded_random_fill(g.len(), 2, seed);
            let y = seeded_random_fill(g.len(), 2, seed ^ 7);
            let mut z = x.clone();
            z.axpy(alpha, &y).unwrap();
            let mut expected = a.apply(&x).unwrap();
            expected.axpy(alpha, &a.apply(&y).unwrap()).unwrap();
            prop_assert!(a.apply(&z).unwrap().max_abs_diff(&expected) <= 1e-13 * (1.0 + alpha.abs()) * 12.0);
        }

        #[test]
        fn laplacian_is_symmetric(g in grid(), seed in any::<u64>()) {
            let a = laplacian3d(g);
            let x = seeded_random_fill(g.len(), 3, seed);
            let y = seeded_random_fill(g.len(), 2, seed ^ 9);
            let lhs = gram(&x, &a.apply(&y).unwrap()).unwrap();
            let rhs = gram(&a.apply(&x).unwrap(), &y).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-13 * lhs.max_abs().max(1.0));
        }

        #[test]
        fn jacobi_is_spd(g in grid(), seed in any::<u64>()) {
            let a = laplacian3d(g);
            let t = jacobi_preconditioner(&a).unwrap();
            let x = seeded_random_fill(g.len(), 3, seed);
            let tx = t.apply(&x).unwrap();
            let g_txx = gram(&x, &tx).unwrap();
            for j in 0..3 {
                prop_assert!(g_txx[(j, j)] > 0.0);
            }
            prop_assert!(g_txx.asymmetry() <= 1e-15 * g_txx.max_abs());
        }

        #[test]
        fn shift_adds_alpha_x(g in grid(), seed in any::<u64>(), alpha in -5.0f64..5.0) {
            let a: Arc<dyn LinearOperator> = Arc::new(laplacian3d(g));
            let s = shift_operator(a.clone(), None, alpha).unwrap();
            let x = seeded_random_fill(g.len(), 2, seed);
            let mut expected = a.apply(&x).unwrap();
            expected.axpy(alpha, &x).unwrap();
            prop_assert_eq!(s.apply(&x).unwrap(), expected);
        }
    }
}
