//! C ABI for `lobpcg-core`.
//!
//! Operators, preconditioners and reports are opaque heap handles created by
//! `lobpcg_*_new`-style constructors and released with the matching
//! `*_free`. Fallible calls return a [`LobpcgError`] code; constructors
//! return `NULL` instead. In both cases a description of the most recent
//! failure on the calling thread is available from
//! [`lobpcg_last_error_message`]. Panics never cross the boundary.
//!
//! Dense arrays are column-major `double` buffers, and all lengths are
//! element counts.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use lobpcg_core::lobpcg::{
    solve, solve_staged, ConvergenceMode, SolverConfig, SolverReport, SolverStatus,
};
use lobpcg_core::multivec::{MultiVector, SmallMatrix};
use lobpcg_core::operators::{
    laplacian3d, shift_operator, DenseOperator, DiagonalOperator, Grid3D, IdentityPreconditioner,
    InnerPcgPreconditioner, JacobiPreconditioner, LinearOperator, Preconditioner,
};
use lobpcg_core::problems::exact_eigenvalues;
use lobpcg_core::Error;

/// Result code of fallible calls.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LobpcgError {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Cholesky breakdown, non-finite values and similar numerical failures.
    Numerical = 4,
    /// A user callback returned a non-zero code.
    Callback = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Final state of a solve, see [`lobpcg_report_status`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LobpcgStatus {
    Converged = 0,
    MaxIterReached = 1,
    /// Converged after at least one basis fallback.
    BasisFallback = 2,
    Failed = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LobpcgConfig {
    pub block_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// 0 silent, 1 summary on stderr, 2 per-iteration log.
    pub verbosity: u32,
    /// Non-zero compares residuals against `tol * ||A x||`.
    pub relative_tol: c_int,
    /// Non-zero records orthonormality errors every iteration.
    pub track_invariants: c_int,
}

/// `y = op(x)` for an `n × k` column-major block. Return 0 on success.
pub type LobpcgApplyFn = Option<
    unsafe extern "C" fn(
        user: *mut c_void,
        x: *const f64,
        y: *mut f64,
        n: usize,
        k: usize,
    ) -> c_int,
>;

pub struct LobpcgOperator {
    inner: Arc<dyn LinearOperator>,
}

pub struct LobpcgPreconditioner {
    inner: Arc<dyn Preconditioner>,
}

pub struct LobpcgReport {
    inner: SolverReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn code_of(e: &Error) -> LobpcgError {
    match e {
        Error::DimensionMismatch(_) => LobpcgError::DimensionMismatch,
        Error::InvalidArgument(_) | Error::Io(_) | Error::Format(_) => LobpcgError::InvalidArgument,
        Error::Operator(_) => LobpcgError::Callback,
        Error::NotSpd(_)
        | Error::Singular(_)
        | Error::NoConvergence(_)
        | Error::Breakdown(_)
        | Error::NonFinite(_) => LobpcgError::Numerical,
    }
}

struct Failure(LobpcgError, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LobpcgError::NullPointer, format!("{what} is NULL"))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs `f`, recording any failure, and returns its error code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LobpcgError {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LobpcgError::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(p) => {
            set_last_error(format!("panic: {}", panic_message(p)));
            LobpcgError::Panic
        }
    }
}

/// Like [`guard`] for constructors: `NULL` on failure.
fn guard_new<T>(f: impl FnOnce() -> Result<T, Failure>) -> *mut T {
    let mut out = ptr::null_mut();
    guard(|| {
        out = Box::into_raw(Box::new(f()?));
        Ok(())
    });
    out
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return Err(Failure(
            LobpcgError::BufferTooSmall,
            format!("buffer holds {len} values, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null("output buffer"));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

struct Callback {
    f: unsafe extern "C" fn(*mut c_void, *const f64, *mut f64, usize, usize) -> c_int,
    user: *mut c_void,
    n: usize,
}

// The caller promises the callback may be invoked from any thread; the
// solver itself calls it from the thread that called `lobpcg_solve`.
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

impl Callback {
    fn call(&self, x: &MultiVector) -> lobpcg_core::Result<MultiVector> {
        if x.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "callback of dimension {} applied to {} rows",
                self.n,
                x.nrows()
            )));
        }
        let mut y = MultiVector::zeros(x.nrows(), x.ncols());
        let rc = unsafe {
            (self.f)(
                self.user,
                x.as_slice().as_ptr(),
                y.as_mut_slice().as_mut_ptr(),
                x.nrows(),
                x.ncols(),
            )
        };
        if rc != 0 {
            return Err(Error::Operator(format!("callback returned {rc}")));
        }
        Ok(y)
    }
}

impl LinearOperator for Callback {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &MultiVector) -> lobpcg_core::Result<MultiVector> {
        self.call(x)
    }
}

impl Preconditioner for Callback {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, r: &MultiVector) -> lobpcg_core::Result<MultiVector> {
        self.call(r)
    }

    fn describe(&self) -> String {
        "callback".into()
    }
}

fn callback(n: usize, f: LobpcgApplyFn, user: *mut c_void) -> Result<Callback, Failure> {
    let f = f.ok_or_else(|| null("callback"))?;
    if n == 0 {
        return Err(Failure(
            LobpcgError::InvalidArgument,
            "dimension must be positive".into(),
        ));
    }
    Ok(Callback { f, user, n })
}

/// Message of the last failure on this thread, or `NULL`. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn lobpcg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn lobpcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// 7-point Laplacian with Dirichlet boundaries on an `nx × ny × nz` grid.
#[no_mangle]
pub extern "C" fn lobpcg_operator_laplacian3d(
    nx: usize,
    ny: usize,
    nz: usize,
) -> *mut LobpcgOperator {
    guard_new(|| {
        Ok(LobpcgOperator {
            inner: Arc::new(laplacian3d(Grid3D::new(nx, ny, nz)?)),
        })
    })
}

/// # Safety
/// `diag` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_diagonal(
    diag: *const f64,
    n: usize,
) -> *mut LobpcgOperator {
    guard_new(|| {
        let d = slice_in(diag, n, "diag")?;
        Ok(LobpcgOperator {
            inner: Arc::new(DiagonalOperator::new(d.to_vec())?),
        })
    })
}

/// Symmetric `n × n` matrix, column-major.
///
/// # Safety
/// `values` must point to `n * n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_dense(
    values: *const f64,
    n: usize,
) -> *mut LobpcgOperator {
    guard_new(|| {
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Failure(LobpcgError::InvalidArgument, "n too large".into()))?;
        let v = slice_in(values, len, "values")?;
        let m = SmallMatrix::from_col_major(n, n, v.to_vec())?;
        Ok(LobpcgOperator {
            inner: Arc::new(DenseOperator::new(m)?),
        })
    })
}

/// Operator applied through `apply`; `user` is passed back unchanged.
///
/// # Safety
/// `apply` must be safe to call with `user` for as long as the handle and
/// anything built from it are alive.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_callback(
    n: usize,
    apply: LobpcgApplyFn,
    user: *mut c_void,
) -> *mut LobpcgOperator {
    guard_new(|| {
        Ok(LobpcgOperator {
            inner: Arc::new(callback(n, apply, user)?),
        })
    })
}

/// `A + alpha * B`, or `A + alpha * I` when `b` is `NULL`. The operands are
/// shared, so they may be freed independently of the result.
///
/// # Safety
/// `a` must be a live handle; `b` a live handle or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_shift(
    a: *const LobpcgOperator,
    b: *const LobpcgOperator,
    alpha: f64,
) -> *mut LobpcgOperator {
    guard_new(|| {
        let a = deref(a, "a")?.inner.clone();
        let b = b.as_ref().map(|b| b.inner.clone());
        Ok(LobpcgOperator {
            inner: Arc::new(shift_operator(a, b, alpha)?),
        })
    })
}

/// Dimension of `op`, 0 for `NULL`.
///
/// # Safety
/// `op` must be a live handle or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_dim(op: *const LobpcgOperator) -> usize {
    op.as_ref().map_or(0, |o| o.inner.dim())
}

/// Applies `op` to an `n × k` block.
///
/// # Safety
/// `x` and `y` must each hold `dim * k` doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_apply(
    op: *const LobpcgOperator,
    x: *const f64,
    y: *mut f64,
    k: usize,
) -> LobpcgError {
    guard(|| {
        let op = &deref(op, "op")?.inner;
        let n = op.dim();
        let xs = slice_in(x, n * k, "x")?;
        let ys = slice_out(y, n * k, n * k)?;
        if k == 0 {
            return Ok(());
        }
        let out = op.apply(&MultiVector::from_col_major(n, k, xs.to_vec())?)?;
        ys.copy_from_slice(out.as_slice());
        Ok(())
    })
}

/// # Safety
/// `op` must be a handle from this library or `NULL`, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_operator_free(op: *mut LobpcgOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// `T = diag(A)^-1`; needs an operator that knows its diagonal.
///
/// # Safety
/// `a` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_preconditioner_jacobi(
    a: *const LobpcgOperator,
) -> *mut LobpcgPreconditioner {
    guard_new(|| {
        let a = deref(a, "a")?;
        Ok(LobpcgPreconditioner {
            inner: Arc::new(JacobiPreconditioner::new(a.inner.as_ref())?),
        })
    })
}

/// `steps` iterations of PCG on `A y = r` from a zero guess, preconditioned
/// by `inner` (identity when `NULL`).
///
/// # Safety
/// `a` must be a live handle; `inner` a live handle or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_preconditioner_inner_pcg(
    a: *const LobpcgOperator,
    inner: *const LobpcgPreconditioner,
    steps: usize,
) -> *mut LobpcgPreconditioner {
    guard_new(|| {
        let a = deref(a, "a")?.inner.clone();
        let inner: Arc<dyn Preconditioner> = match inner.as_ref() {
            Some(p) => p.inner.clone(),
            None => Arc::new(IdentityPreconditioner::new(a.dim())),
        };
        Ok(LobpcgPreconditioner {
            inner: Arc::new(InnerPcgPreconditioner::new(a, inner, steps)?),
        })
    })
}

/// # Safety
/// As for [`lobpcg_operator_callback`].
#[no_mangle]
pub unsafe extern "C" fn lobpcg_preconditioner_callback(
    n: usize,
    apply: LobpcgApplyFn,
    user: *mut c_void,
) -> *mut LobpcgPreconditioner {
    guard_new(|| {
        Ok(LobpcgPreconditioner {
            inner: Arc::new(callback(n, apply, user)?),
        })
    })
}

/// # Safety
/// `t` must be a handle from this library or `NULL`, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_preconditioner_free(t: *mut LobpcgPreconditioner) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

#[no_mangle]
pub extern "C" fn lobpcg_config_default() -> LobpcgConfig {
    let d = SolverConfig::default();
    LobpcgConfig {
        block_size: d.block_size,
        tol: d.tol,
        max_iter: d.max_iter,
        seed: d.seed,
        verbosity: 0,
        relative_tol: 0,
        track_invariants: 0,
    }
}

fn solver_config(c: &LobpcgConfig) -> SolverConfig {
    SolverConfig {
        block_size: c.block_size,
        tol: c.tol,
        max_iter: c.max_iter,
        seed: c.seed,
        lock_history: true,
        verbosity: c.verbosity.min(u8::MAX as u32) as u8,
        convergence: if c.relative_tol != 0 {
            ConvergenceMode::Relative
        } else {
            ConvergenceMode::Absolute
        },
        track_invariants: c.track_invariants != 0,
    }
}

/// Smallest `cfg.block_size` eigenpairs of `A x = λ B x`.
///
/// `b = NULL` means `B = I`, `t = NULL` no preconditioning, `x0 = NULL` a
/// seeded random start (otherwise `dim * block_size` doubles). On success
/// `*out` receives a report even if the solve did not converge; check
/// [`lobpcg_report_status`].
///
/// # Safety
/// Handles must be live or `NULL` where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_solve(
    a: *const LobpcgOperator,
    b: *const LobpcgOperator,
    t: *const LobpcgPreconditioner,
    cfg: *const LobpcgConfig,
    x0: *const f64,
    out: *mut *mut LobpcgReport,
) -> LobpcgError {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let a = &deref(a, "a")?.inner;
        let cfg = solver_config(deref(cfg, "cfg")?);
        let b = b.as_ref().map(|b| b.inner.as_ref());
        let t = t.as_ref().map(|t| t.inner.as_ref());
        let x0 = if x0.is_null() {
            None
        } else {
            let n = a.dim();
            let len = n
                .checked_mul(cfg.block_size)
                .ok_or_else(|| Failure(LobpcgError::InvalidArgument, "block too large".into()))?;
            Some(MultiVector::from_col_major(
                n,
                cfg.block_size,
                slice_in(x0, len, "x0")?.to_vec(),
            )?)
        };
        let rep = solve(a.as_ref(), b, t, None, x0.as_ref(), &cfg)?;
        *out = Box::into_raw(Box::new(LobpcgReport { inner: rep }));
        Ok(())
    })
}

/// `total` eigenpairs in stages of `cfg.block_size`, each stage constrained
/// against the vectors found before it.
///
/// # Safety
/// As for [`lobpcg_solve`].
#[no_mangle]
pub unsafe extern "C" fn lobpcg_solve_staged(
    a: *const LobpcgOperator,
    b: *const LobpcgOperator,
    t: *const LobpcgPreconditioner,
    cfg: *const LobpcgConfig,
    total: usize,
    out: *mut *mut LobpcgReport,
) -> LobpcgError {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let a = &deref(a, "a")?.inner;
        let cfg = solver_config(deref(cfg, "cfg")?);
        let b = b.as_ref().map(|b| b.inner.as_ref());
        let t = t.as_ref().map(|t| t.inner.as_ref());
        let rep = solve_staged(a.as_ref(), b, t, total, cfg.block_size, &cfg)?;
        *out = Box::into_raw(Box::new(LobpcgReport { inner: rep }));
        Ok(())
    })
}

/// Number of eigenpairs held by `r`, 0 for `NULL`.
///
/// # Safety
/// `r` must be a live report or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_count(r: *const LobpcgReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.eigenvalues.len())
}

/// Length of each eigenvector, 0 for `NULL`.
///
/// # Safety
/// `r` must be a live report or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_dim(r: *const LobpcgReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.eigenvectors.nrows())
}

/// # Safety
/// `r` must be a live report or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_iterations(r: *const LobpcgReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.iterations_used)
}

/// # Safety
/// `r` must be a live report; `NULL` gives `Failed`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_status(r: *const LobpcgReport) -> LobpcgStatus {
    match r.as_ref().map(|r| &r.inner.status) {
        Some(SolverStatus::Converged) => LobpcgStatus::Converged,
        Some(SolverStatus::MaxIterReached) => LobpcgStatus::MaxIterReached,
        Some(SolverStatus::BasisFallback(_)) => LobpcgStatus::BasisFallback,
        Some(SolverStatus::Failed(_)) | None => LobpcgStatus::Failed,
    }
}

/// Number of basis fallbacks taken during the solve.
///
/// # Safety
/// `r` must be a live report or `NULL`.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_fallbacks(r: *const LobpcgReport) -> usize {
    r.as_ref().map_or(0, |r| r.inner.fallback_count)
}

/// Copies the ascending eigenvalues into `out` (`len >= count`).
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_eigenvalues(
    r: *const LobpcgReport,
    out: *mut f64,
    len: usize,
) -> LobpcgError {
    guard(|| {
        let v = deref(r, "report")?.inner.eigenvalues.values();
        slice_out(out, len, v.len())?.copy_from_slice(v);
        Ok(())
    })
}

/// Copies the final residual norms into `out` (`len >= count`).
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_residuals(
    r: *const LobpcgReport,
    out: *mut f64,
    len: usize,
) -> LobpcgError {
    guard(|| {
        let v = &deref(r, "report")?.inner.residual_norms;
        slice_out(out, len, v.len())?.copy_from_slice(v);
        Ok(())
    })
}

/// Copies the eigenvectors, column-major, into `out` (`len >= dim * count`).
///
/// # Safety
/// `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_eigenvectors(
    r: *const LobpcgReport,
    out: *mut f64,
    len: usize,
) -> LobpcgError {
    guard(|| {
        let v = deref(r, "report")?.inner.eigenvectors.as_slice();
        slice_out(out, len, v.len())?.copy_from_slice(v);
        Ok(())
    })
}

/// # Safety
/// `r` must be a report from this library or `NULL`, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_report_free(r: *mut LobpcgReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// The `m` smallest eigenvalues of the grid Laplacian, in closed form.
///
/// # Safety
/// `out` must hold `m` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lobpcg_exact_eigenvalues(
    nx: usize,
    ny: usize,
    nz: usize,
    m: usize,
    out: *mut f64,
) -> LobpcgError {
    guard(|| {
        let v = exact_eigenvalues(Grid3D::new(nx, ny, nz)?, m)?;
        slice_out(out, m, m)?.copy_from_slice(&v);
        Ok(())
    })
}
