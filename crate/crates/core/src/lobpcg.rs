//! Locally optimal block preconditioned conjugate gradient eigensolver.
//!
//! Computes the `m` smallest eigenpairs of `A x = λ B x` with `A` symmetric
//! and `B` symmetric positive definite, using only block applications of
//! `A`, `B` and the preconditioner `T`. Each iteration performs one block
//! application of each, on the active columns only.
//!
//! Deflation comes in two flavours:
//!
//! * hard locking through [`Constraints`]: iterates are kept `B`-orthogonal
//!   to a fixed block `Y` (see [`solve_staged`]);
//! * soft locking through the active index set: once a column's residual
//!   drops below the tolerance its residual leaves the trial subspace, while
//!   the vector itself keeps taking part in every Rayleigh–Ritz step.
//!
//! The trial basis is `[X, W_J, P_J]` where `W_J` and `P_J` are
//! `B`-orthonormalized blockwise by Cholesky, so the diagonal blocks of the
//! projected mass matrix are taken to be identities rather than computed.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::multivec::{gen_sym_eig, gram, seeded_random_fill, sym_eig, MultiVector, SmallMatrix};
use crate::operators::{LinearOperator, Preconditioner};

/// How a column's residual is compared against `tol`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMode {
    /// `‖A x − λ B x‖₂ ≤ tol`.
    #[default]
    Absolute,
    /// `‖A x − λ B x‖₂ ≤ tol · ‖A x‖₂`.
    Relative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub block_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the random initial block when no `X0` is supplied.
    pub seed: u64,
    /// Record per-column Ritz values and residual norms in the history.
    pub lock_history: bool,
    pub verbosity: u8,
    pub convergence: ConvergenceMode,
    /// Record `‖XᵀBX − I‖` and `‖YᵀBX‖` every iteration (costs one extra Gram product).
    pub track_invariants: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            block_size: 1,
            tol: 1e-6,
            max_iter: 100,
            seed: 1,
            lock_history: true,
            verbosity: 0,
            convergence: ConvergenceMode::Absolute,
            track_invariants: false,
        }
    }
}

impl SolverConfig {
    pub fn new(block_size: usize, tol: f64, max_iter: usize) -> Self {
        Self {
            block_size,
            tol,
            max_iter,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidArgument("block size must be >= 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Constraint block `Y` for hard locking, with `B·Y` and `chol(Yᵀ·B·Y)` cached.
#[derive(Clone, Debug)]
pub struct Constraints {
    y: MultiVector,
    by: MultiVector,
    chol: SmallMatrix,
}

impl Constraints {
    pub fn new(y: MultiVector, b: Option<&dyn LinearOperator>) -> Result<Self> {
        let by = match b {
            Some(b) => {
                if b.dim() != y.nrows() {
                    return Err(dim_mismatch("constraints and B differ in dimension"));
                }
                b.apply(&y)?
            }
            None => y.clone(),
        };
        let chol = gram(&y, &by)?.cholesky()?;
        Ok(Self { y, by, chol })
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn vectors(&self) -> &MultiVector {
        &self.y
    }

    /// `X − Y·(YᵀBY)⁻¹·(BY)ᵀX`, with the inverse applied by two triangular solves.
    pub fn apply(&self, x: &MultiVector) -> Result<MultiVector> {
        if x.nrows() != self.dim() {
            return Err(dim_mismatch("constraint projection"));
        }
        if self.is_empty() {
            return Ok(x.clone());
        }
        let coef = gram(&self.by, x)?;
        let coef = self
            .chol
            .solve_upper(&self.chol.solve_upper_transposed(&coef)?)?;
        let mut out = x.clone();
        out.axpy(-1.0, &self.y.times(&coef)?)?;
        Ok(out)
    }

    /// `max |(BY)ᵀ·X|`.
    pub fn orthogonality_error(&self, x: &MultiVector) -> Result<f64> {
        Ok(gram(&self.by, x)?.max_abs())
    }
}

pub fn apply_constraints(x: &MultiVector, constraints: &Constraints) -> Result<MultiVector> {
    constraints.apply(x)
}

/// Column scaling followed by `R⁻¹`, as produced by [`b_orthonormalize`].
///
/// Replaying it on `A·X` keeps that block consistent without applying `A`.
#[derive(Clone, Debug)]
pub struct BasisTransform {
    scale: Vec<f64>,
    r: SmallMatrix,
}

impl BasisTransform {
    pub fn apply(&self, v: &MultiVector) -> Result<MultiVector> {
        let mut v = v.clone();
        v.scale_columns(&self.scale);
        v.tri_solve_right(&self.r)
    }

    /// Upper-triangular `R` with `X = X'·R`.
    pub fn factor(&self) -> SmallMatrix {
        let mut r = self.r.clone();
        for (j, s) in self.scale.iter().enumerate() {
            for i in 0..r.rows() {
                r[(i, j)] /= s;
            }
        }
        r
    }
}

/// Cholesky-based `B`-orthonormalization: `X' = X·D·R⁻¹` with `D` scaling every
/// column to unit `B`-norm and `R = chol(D·XᵀBX·D)`.
///
/// Pass `bx = None` for `B = I`. Returns [`Error::NotSpd`] naming the first
/// column that is (numerically) dependent on its predecessors.
pub fn b_orthonormalize(
    x: &MultiVector,
    bx: Option<&MultiVector>,
) -> Result<(MultiVector, Option<MultiVector>, BasisTransform)> {
    let mut g = match bx {
        Some(bx) => {
            if (bx.nrows(), bx.ncols()) != (x.nrows(), x.ncols()) {
                return Err(dim_mismatch("X and BX shapes"));
            }
            gram(x, bx)?
        }
        None => gram(x, x)?,
    };
    let mut scale = Vec::with_capacity(x.ncols());
    for (j, d) in g.diag().into_iter().enumerate() {
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::NotSpd(j));
        }
        scale.push(1.0 / d.sqrt());
    }
    for j in 0..g.cols() {
        for i in 0..g.rows() {
            g[(i, j)] *= scale[i] * scale[j];
        }
    }
    let r = g.cholesky()?;
    let transform = BasisTransform { scale, r };
    let x = transform.apply(x)?;
    let bx = bx.map(|bx| transform.apply(bx)).transpose()?;
    Ok((x, bx, transform))
}

/// `max |XᵀBX − I|`.
pub fn orthonormality_error(x: &MultiVector, bx: Option<&MultiVector>) -> Result<f64> {
    let g = gram(x, bx.unwrap_or(x))?;
    Ok(g.max_abs_diff(&SmallMatrix::identity(g.rows())))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    /// The trial basis stayed rank deficient after every fallback.
    BasisDegeneracy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    /// Every column converged and no basis fallback was needed.
    Converged,
    /// Hit `max_iter` with some columns still active.
    MaxIterReached,
    /// Every column converged, after the given number of basis fallbacks.
    BasisFallback(usize),
    Failed(FailureReason),
}

impl SolverStatus {
    pub fn is_converged(&self) -> bool {
        matches!(
            self,
            SolverStatus::Converged | SolverStatus::BasisFallback(_)
        )
    }
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverStatus::Converged => write!(f, "converged"),
            SolverStatus::MaxIterReached => write!(f, "max_iter_reached"),
            SolverStatus::BasisFallback(n) => write!(f, "basis_fallback({n})"),
            SolverStatus::Failed(FailureReason::BasisDegeneracy) => {
                write!(f, "failed(basis_degeneracy)")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FallbackEvent {
    /// Cholesky of the direction block failed; this step used `[X, W_J]`.
    DroppedDirections,
    /// Residual columns removed from this step's basis (positions within `W_J`).
    DroppedResiduals(Vec<usize>),
}

/// One row of convergence history.
///
/// Record `i` describes the iterate after `i` Rayleigh–Ritz updates: its Ritz
/// values, residual norms, the active set after the locking test, and the
/// columns locked by that test. `fallbacks` lists basis repairs made in the
/// update that followed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Global index of this record's first column (nonzero in later stages of a staged solve).
    pub column_offset: usize,
    pub ritz_values: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub active: Vec<bool>,
    pub active_count: usize,
    pub locked: Vec<usize>,
    pub fallbacks: Vec<FallbackEvent>,
    pub b_orthonormality_error: Option<f64>,
    pub constraint_error: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ApplyCounts {
    /// Block applications of each operator.
    pub a_blocks: usize,
    pub b_blocks: usize,
    pub t_blocks: usize,
    /// Column vectors pushed through each operator.
    pub a_columns: usize,
    pub b_columns: usize,
    pub t_columns: usize,
}

#[derive(Clone, Debug)]
pub struct SolverReport {
    pub eigenvalues: crate::multivec::DiagonalSpectrum,
    pub eigenvectors: MultiVector,
    pub residual_norms: Vec<f64>,
    pub iterations_used: usize,
    pub converged: Vec<bool>,
    /// Iteration at which each column was soft locked, if it was.
    pub lock_iterations: Vec<Option<usize>>,
    pub history: Vec<IterationRecord>,
    pub fallback_count: usize,
    pub status: SolverStatus,
    pub applies: ApplyCounts,
    pub elapsed: Duration,
    /// Per-stage reports of a staged solve; empty otherwise.
    pub stages: Vec<SolverReport>,
}

impl SolverReport {
    pub fn converged_count(&self) -> usize {
        self.converged.iter().filter(|&&c| c).count()
    }

    pub fn max_residual(&self) -> f64 {
        self.residual_norms.iter().fold(0.0, |m, &r| m.max(r))
    }
}

struct Ops<'a> {
    a: &'a dyn LinearOperator,
    b: Option<&'a dyn LinearOperator>,
    t: Option<&'a dyn Preconditioner>,
    counts: ApplyCounts,
}

impl Ops<'_> {
    fn apply_a(&mut self, x: &MultiVector) -> Result<MultiVector> {
        self.counts.a_blocks += 1;
        self.counts.a_columns += x.ncols();
        let y = self.a.apply(x)?;
        check_output(&y, x, "A")?;
        Ok(y)
    }

    fn apply_b(&mut self, x: &MultiVector) -> Result<Option<MultiVector>> {
        let Some(b) = self.b else { return Ok(None) };
        self.counts.b_blocks += 1;
        self.counts.b_columns += x.ncols();
        let y = b.apply(x)?;
        check_output(&y, x, "B")?;
        Ok(Some(y))
    }

    fn apply_t(&mut self, x: MultiVector) -> Result<MultiVector> {
        let Some(t) = self.t else { return Ok(x) };
        self.counts.t_blocks += 1;
        self.counts.t_columns += x.ncols();
        let y = t.apply(&x)?;
        check_output(&y, &x, "T")?;
        Ok(y)
    }
}

fn check_output(y: &MultiVector, x: &MultiVector, who: &'static str) -> Result<()> {
    if (y.nrows(), y.ncols()) != (x.nrows(), x.ncols()) {
        return Err(dim_mismatch(format!(
            "operator {who} returned a block of the wrong shape"
        )));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite(who));
    }
    Ok(())
}

/// Search directions `P` with their images, all `n × m`.
struct Directions {
    p: MultiVector,
    ap: MultiVector,
    bp: Option<MultiVector>,
}

struct State {
    x: MultiVector,
    ax: MultiVector,
    bx: Option<MultiVector>,
    lambda: Vec<f64>,
    dirs: Option<Directions>,
    active: Vec<usize>,
}

enum Step {
    Updated(Vec<FallbackEvent>),
    Degenerate(Vec<FallbackEvent>),
}

/// Runs LOBPCG on the pencil `(A, B)`.
///
/// `b = None` means `B = I` (no mass-matrix products or storage), `t = None`
/// means no preconditioning. Without `x0` the initial block is
/// [`seeded_random_fill`] with `cfg.seed`.
///
/// Input errors are returned as `Err`; numerical trouble inside the
/// iteration is reported through [`SolverReport::status`].
pub fn solve(
    a: &dyn LinearOperator,
    b: Option<&dyn LinearOperator>,
    t: Option<&dyn Preconditioner>,
    constraints: Option<&Constraints>,
    x0: Option<&MultiVector>,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    let started = Instant::now();
    cfg.validate()?;
    let n = a.dim();
    let m = cfg.block_size;
    if b.is_some_and(|b| b.dim() != n) {
        return Err(dim_mismatch("A and B differ in dimension"));
    }
    if t.is_some_and(|t| t.dim() != n) {
        return Err(dim_mismatch("A and T differ in dimension"));
    }
    if constraints.is_some_and(|c| c.dim() != n) {
        return Err(dim_mismatch("A and constraints differ in dimension"));
    }
    let l = constraints.map_or(0, Constraints::len);
    if m + l > n {
        return Err(Error::InvalidArgument(format!(
            "block size {m} plus {l} constraints exceeds problem dimension {n}"
        )));
    }

    let mut ops = Ops {
        a,
        b,
        t,
        counts: ApplyCounts::default(),
    };

    let mut x = match x0 {
        Some(x0) => {
            if (x0.nrows(), x0.ncols()) != (n, m) {
                return Err(dim_mismatch(format!(
                    "initial block is {}x{}, expected {n}x{m}",
                    x0.nrows(),
                    x0.ncols()
                )));
            }
            if !x0.is_finite() {
                return Err(Error::NonFinite("initial block"));
            }
            x0.clone()
        }
        None => seeded_random_fill(n, m, cfg.seed),
    };

    // apply the constraints to X
    if let Some(c) = constraints {
        x = c.apply(&x)?;
    }

    // B-orthonormalize X
    let bx = ops.apply_b(&x)?;
    let (x, bx, _) = b_orthonormalize(&x, bx.as_ref()).map_err(|e| match e {
        Error::NotSpd(j) => {
            Error::InvalidArgument(format!("initial block is rank deficient at column {j}"))
        }
        e => e,
    })?;
    let ax = ops.apply_a(&x)?;

    // initial Ritz vectors
    let (lambda, tmp) = sym_eig(&gram(&x, &ax)?)?;
    let mut state = State {
        x: x.times(&tmp)?,
        ax: ax.times(&tmp)?,
        bx: bx.map(|bx| bx.times(&tmp)).transpose()?,
        lambda: lambda.into_vec(),
        dirs: None,
        active: (0..m).collect(),
    };

    let mut history = Vec::new();
    let mut lock_iterations = vec![None; m];
    let mut fallback_count = 0;
    let mut residual_norms;
    let mut status = SolverStatus::MaxIterReached;
    let mut k = 0;
    loop {
        // residuals of every column, locked ones included, for the history
        let residuals = residual_block(&state)?;
        residual_norms = residuals.column_norms();
        let thresholds: Vec<f64> = match cfg.convergence {
            ConvergenceMode::Absolute => vec![cfg.tol; m],
            ConvergenceMode::Relative => state
                .ax
                .column_norms()
                .iter()
                .map(|a| cfg.tol * a)
                .collect(),
        };

        // soft locking: indices only ever leave the active set
        let mut locked = Vec::new();
        state.active.retain(|&j| {
            let keep = residual_norms[j] > thresholds[j];
            if !keep {
                locked.push(j);
            }
            keep
        });
        for &j in &locked {
            lock_iterations[j] = Some(k);
        }

        let mut record = IterationRecord {
            iteration: k,
            column_offset: 0,
            ritz_values: Vec::new(),
            residual_norms: Vec::new(),
            active: Vec::new(),
            active_count: state.active.len(),
            locked,
            fallbacks: Vec::new(),
            b_orthonormality_error: None,
            constraint_error: None,
        };
        if cfg.lock_history {
            record.ritz_values = state.lambda.clone();
            record.residual_norms = residual_norms.clone();
            record.active = (0..m).map(|j| state.active.contains(&j)).collect();
        }
        if cfg.track_invariants {
            record.b_orthonormality_error =
                Some(orthonormality_error(&state.x, state.bx.as_ref())?);
            record.constraint_error = constraints
                .map(|c| c.orthogonality_error(&state.x))
                .transpose()?;
        }
        if cfg.verbosity >= 2 {
            eprintln!(
                "iter {k:4}  active {:3}  max resid {:.3e}  lambda[0] {:.12e}",
                state.active.len(),
                residual_norms.iter().fold(0.0f64, |a, &b| a.max(b)),
                state.lambda[0]
            );
        }
        history.push(record);

        if state.active.is_empty() {
            status = if fallback_count == 0 {
                SolverStatus::Converged
            } else {
                SolverStatus::BasisFallback(fallback_count)
            };
            break;
        }
        if k == cfg.max_iter {
            break;
        }

        let w = residuals.select_columns(&state.active);
        match iterate(&mut state, w, k, &mut ops, constraints)? {
            Step::Updated(events) => {
                fallback_count += events.len();
                history.last_mut().expect("record pushed above").fallbacks = events;
            }
            Step::Degenerate(events) => {
                fallback_count += events.len();
                history.last_mut().expect("record pushed above").fallbacks = events;
                status = SolverStatus::Failed(FailureReason::BasisDegeneracy);
                break;
            }
        }
        k += 1;
    }

    let thresholds_final = match cfg.convergence {
        ConvergenceMode::Absolute => vec![cfg.tol; m],
        ConvergenceMode::Relative => state
            .ax
            .column_norms()
            .iter()
            .map(|a| cfg.tol * a)
            .collect(),
    };
    let converged = residual_norms
        .iter()
        .zip(&thresholds_final)
        .map(|(r, t)| r <= t)
        .collect();
    if cfg.verbosity >= 1 {
        eprintln!("lobpcg: {status} after {k} iterations");
    }

    Ok(SolverReport {
        eigenvalues: crate::multivec::DiagonalSpectrum::new(state.lambda)?,
        eigenvectors: state.x,
        residual_norms,
        iterations_used: k,
        converged,
        lock_iterations,
        history,
        fallback_count,
        status,
        applies: ops.counts,
        elapsed: started.elapsed(),
        stages: Vec::new(),
    })
}

/// `AX − BX·Λ` over all columns.
fn residual_block(state: &State) -> Result<MultiVector> {
    let bx = state.bx.as_ref().unwrap_or(&state.x);
    let mut r = state.ax.clone();
    for (j, &lam) in state.lambda.iter().enumerate() {
        for (ri, bi) in r.col_mut(j).iter_mut().zip(bx.col(j)) {
            *ri -= lam * bi;
        }
    }
    Ok(r)
}

/// One pass from preconditioning the active residuals to the new Ritz vectors.
fn iterate(
    state: &mut State,
    w: MultiVector,
    k: usize,
    ops: &mut Ops<'_>,
    constraints: Option<&Constraints>,
) -> Result<Step> {
    let mut events = Vec::new();

    // precondition and constrain the residuals
    let mut w = ops.apply_t(w)?;
    if let Some(c) = constraints {
        w = c.apply(&w)?;
    }

    // B-orthonormalize W_J, dropping columns that are dependent on earlier ones
    let mut bw = ops.apply_b(&w)?;
    let mut original_pos: Vec<usize> = (0..w.ncols()).collect();
    let mut dropped = Vec::new();
    let (w, bw) = loop {
        if w.ncols() == 0 {
            if !dropped.is_empty() {
                events.push(FallbackEvent::DroppedResiduals(dropped));
            }
            return Ok(Step::Degenerate(events));
        }
        match b_orthonormalize(&w, bw.as_ref()) {
            Ok((w, bw, _)) => break (w, bw),
            Err(Error::NotSpd(j)) => {
                w.remove_column(j);
                if let Some(bw) = bw.as_mut() {
                    bw.remove_column(j);
                }
                dropped.push(original_pos.remove(j));
            }
            Err(e) => return Err(e),
        }
    };
    if !dropped.is_empty() {
        events.push(FallbackEvent::DroppedResiduals(dropped));
    }
    let aw = ops.apply_a(&w)?;

    // B-orthonormalize P_J, updating AP_J and BP_J without operator applies
    let mut dirs = None;
    if k > 0 {
        if let Some(prev) = &state.dirs {
            let p = prev.p.select_columns(&state.active);
            let bp = prev.bp.as_ref().map(|bp| bp.select_columns(&state.active));
            match b_orthonormalize(&p, bp.as_ref()) {
                Ok((p, bp, transform)) => {
                    let ap = transform.apply(&prev.ap.select_columns(&state.active))?;
                    dirs = Some(Directions { p, ap, bp });
                }
                Err(Error::NotSpd(_)) => events.push(FallbackEvent::DroppedDirections),
                Err(e) => return Err(e),
            }
        }
    }

    // Rayleigh–Ritz on [X, W_J, P_J]; without P_J if the projected pencil is singular
    let (gram_a, gram_b) = assemble_grams(state, &w, &aw, bw.as_ref(), dirs.as_ref())?;
    let m = state.x.ncols();
    let (lambda, c) = match gen_sym_eig(&gram_a, &gram_b, m) {
        Ok(sol) => sol,
        Err(Error::NotSpd(_)) if dirs.is_some() => {
            events.push(FallbackEvent::DroppedDirections);
            dirs = None;
            let size = m + w.ncols();
            match gen_sym_eig(
                &gram_a.block(0, 0, size, size),
                &gram_b.block(0, 0, size, size),
                m,
            ) {
                Ok(sol) => sol,
                Err(Error::NotSpd(_)) => return Ok(Step::Degenerate(events)),
                Err(e) => return Err(e),
            }
        }
        Err(Error::NotSpd(_)) => return Ok(Step::Degenerate(events)),
        Err(e) => return Err(e),
    };

    // Ritz vectors: P = W_J·C_W + P_J·C_P, X = X·C_X + P
    let mw = w.ncols();
    let c_x = c.block(0, 0, m, m);
    let c_w = c.block(m, 0, mw, m);
    let mut p = w.times(&c_w)?;
    let mut ap = aw.times(&c_w)?;
    let mut bp = bw.as_ref().map(|bw| bw.times(&c_w)).transpose()?;
    if let Some(d) = &dirs {
        let c_p = c.block(m + mw, 0, d.p.ncols(), m);
        p.axpy(1.0, &d.p.times(&c_p)?)?;
        ap.axpy(1.0, &d.ap.times(&c_p)?)?;
        if let (Some(bp), Some(dbp)) = (bp.as_mut(), d.bp.as_ref()) {
            bp.axpy(1.0, &dbp.times(&c_p)?)?;
        }
    }

    let mut x = state.x.times(&c_x)?;
    x.axpy(1.0, &p)?;
    let mut ax = state.ax.times(&c_x)?;
    ax.axpy(1.0, &ap)?;
    let bx = match (&state.bx, &bp) {
        (Some(bx), Some(bp)) => {
            let mut nbx = bx.times(&c_x)?;
            nbx.axpy(1.0, bp)?;
            Some(nbx)
        }
        _ => None,
    };

    state.x = x;
    state.ax = ax;
    state.bx = bx;
    state.lambda = lambda.into_vec();
    state.dirs = Some(Directions { p, ap, bp });
    Ok(Step::Updated(events))
}

/// Upper blocks of the projected pencil; lower triangles are left zero.
fn assemble_grams(
    state: &State,
    w: &MultiVector,
    aw: &MultiVector,
    bw: Option<&MultiVector>,
    dirs: Option<&Directions>,
) -> Result<(SmallMatrix, SmallMatrix)> {
    let m = state.x.ncols();
    let mw = w.ncols();
    let mp = dirs.map_or(0, |d| d.p.ncols());
    let size = m + mw + mp;
    let bw = bw.unwrap_or(w);

    let mut ga = SmallMatrix::zeros(size, size);
    let mut gb = SmallMatrix::identity(size);
    ga.set_block(0, 0, &SmallMatrix::from_diag(&state.lambda));
    ga.set_block(0, m, &gram(&state.x, aw)?);
    ga.set_block(m, m, &gram(w, aw)?);
    gb.set_block(0, m, &gram(&state.x, bw)?);
    if let Some(d) = dirs {
        let bp = d.bp.as_ref().unwrap_or(&d.p);
        ga.set_block(0, m + mw, &gram(&state.x, &d.ap)?);
        ga.set_block(m, m + mw, &gram(w, &d.ap)?);
        ga.set_block(m + mw, m + mw, &gram(&d.p, &d.ap)?);
        gb.set_block(0, m + mw, &gram(&state.x, bp)?);
        gb.set_block(m, m + mw, &gram(w, bp)?);
    }
    Ok((ga, gb))
}

/// Finds `total_wanted` eigenpairs by repeated solves of block size
/// `stage_block`, feeding each stage's eigenvectors into the constraints
/// of the next (hard locking).
///
/// The returned report concatenates the stages; per-stage reports are kept in
/// [`SolverReport::stages`]. A final stage still iterates a full block but
/// keeps only the pairs it needs.
pub fn solve_staged(
    a: &dyn LinearOperator,
    b: Option<&dyn LinearOperator>,
    t: Option<&dyn Preconditioner>,
    total_wanted: usize,
    stage_block: usize,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    if stage_block == 0 || total_wanted < stage_block {
        return Err(Error::InvalidArgument(format!(
            "staged solve needs 1 <= block ({stage_block}) <= total ({total_wanted})"
        )));
    }
    let started = Instant::now();
    let n = a.dim();
    let mut locked = MultiVector::zeros(n, 0);
    let mut stages = Vec::new();
    let mut values = Vec::new();
    while locked.ncols() < total_wanted {
        let stage_cfg = SolverConfig {
            block_size: stage_block,
            seed: cfg.seed.wrapping_add(stages.len() as u64),
            ..cfg.clone()
        };
        let constraints = Constraints::new(locked.clone(), b)?;
        let c = (!constraints.is_empty()).then_some(&constraints);
        let report = solve(a, b, t, c, None, &stage_cfg)?;
        let keep = stage_block.min(total_wanted - locked.ncols());
        let keep_idx: Vec<usize> = (0..keep).collect();
        locked = MultiVector::hcat(&[&locked, &report.eigenvectors.select_columns(&keep_idx)])?;
        values.extend_from_slice(&report.eigenvalues.values()[..keep]);
        let failed = matches!(report.status, SolverStatus::Failed(_));
        stages.push(report);
        if failed {
            break;
        }
    }
    combine_stages(stages, values, locked, stage_block, started.elapsed())
}

fn combine_stages(
    stages: Vec<SolverReport>,
    values: Vec<f64>,
    vectors: MultiVector,
    stage_block: usize,
    elapsed: Duration,
) -> Result<SolverReport> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let take = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();

    let mut residual_norms = Vec::new();
    let mut converged = Vec::new();
    let mut lock_iterations = Vec::new();
    let mut history = Vec::new();
    let mut applies = ApplyCounts::default();
    let mut iterations = 0;
    let mut fallback_count = 0;
    for (s, stage) in stages.iter().enumerate() {
        let keep = stage_block.min(values.len() - s * stage_block);
        residual_norms.extend_from_slice(&stage.residual_norms[..keep]);
        converged.extend_from_slice(&stage.converged[..keep]);
        lock_iterations.extend(
            stage.lock_iterations[..keep]
                .iter()
                .map(|l| l.map(|i| i + iterations)),
        );
        let skip = usize::from(s > 0);
        history.extend(stage.history.iter().skip(skip).map(|r| IterationRecord {
            iteration: r.iteration + iterations,
            column_offset: s * stage_block,
            ..r.clone()
        }));
        iterations += stage.iterations_used;
        fallback_count += stage.fallback_count;
        applies.a_blocks += stage.applies.a_blocks;
        applies.b_blocks += stage.applies.b_blocks;
        applies.t_blocks += stage.applies.t_blocks;
        applies.a_columns += stage.applies.a_columns;
        applies.b_columns += stage.applies.b_columns;
        applies.t_columns += stage.applies.t_columns;
    }

    let status = if let Some(failed) = stages
        .iter()
        .find(|s| matches!(s.status, SolverStatus::Failed(_)))
    {
        failed.status.clone()
    } else if stages.iter().all(|s| s.status.is_converged()) {
        if fallback_count == 0 {
            SolverStatus::Converged
        } else {
            SolverStatus::BasisFallback(fallback_count)
        }
    } else {
        SolverStatus::MaxIterReached
    };

    Ok(SolverReport {
        eigenvalues: crate::multivec::DiagonalSpectrum::new(take(&values))?,
        eigenvectors: vectors.select_columns(&order),
        residual_norms: take(&residual_norms),
        iterations_used: iterations,
        converged: order.iter().map(|&i| converged[i]).collect(),
        lock_iterations: order.iter().map(|&i| lock_iterations[i]).collect(),
        history,
        fallback_count,
        status,
        applies,
        elapsed,
        stages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{laplacian3d, DiagonalOperator, Grid3D, IdentityOperator};

    fn diag(values: impl IntoIterator<Item = f64>) -> DiagonalOperator {
        DiagonalOperator::new(values.into_iter().collect()).unwrap()
    }

    #[test]
    fn constraints_empty_is_identity() {
        let c = Constraints::new(MultiVector::zeros(4, 0), None).unwrap();
        let x = seeded_random_fill(4, 2, 3);
        assert_eq!(c.apply(&x).unwrap(), x);
    }

    #[test]
    fn constraints_orthogonal_projection() {
        let c = Constraints::new(MultiVector::coordinate(3, &[0]), None).unwrap();
        let x = MultiVector::from_columns(&[vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(c.apply(&x).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn constraints_projector_with_b() {
        let b = diag((1..=20).map(f64::from));
        let y = seeded_random_fill(20, 3, 7);
        let c = Constraints::new(y, Some(&b)).unwrap();
        let x = seeded_random_fill(20, 4, 8);
        let once = c.apply(&x).unwrap();
        assert!(c.orthogonality_error(&once).unwrap() <= 1e-11);
        let twice = c.apply(&once).unwrap();
        assert!(twice.max_abs_diff(&once) <= 1e-11);
    }

    #[test]
    fn constraints_reject_dependent_columns() {
        let y = MultiVector::from_columns(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(Constraints::new(y, None).map(|_| ()), Err(Error::NotSpd(1)));
    }

    #[test]
    fn b_orthonormalize_cases() {
        let e = MultiVector::coordinate(5, &[1, 3]);
        let (x, _, t) = b_orthonormalize(&e, None).unwrap();
        assert!(x.max_abs_diff(&e) <= 1e-13);
        assert!(t.factor().max_abs_diff(&SmallMatrix::identity(2)) <= 1e-13);

        let v = MultiVector::from_columns(&[vec![2.0, 0.0, 0.0]]).unwrap();
        let (x, _, t) = b_orthonormalize(&v, None).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(t.factor()[(0, 0)], 2.0);

        let b = diag((1..=30).map(f64::from));
        let x = seeded_random_fill(30, 4, 12);
        let bx = b.apply(&x).unwrap();
        let (xo, bxo, t) = b_orthonormalize(&x, Some(&bx)).unwrap();
        assert!(orthonormality_error(&xo, bxo.as_ref()).unwrap() <= 1e-11);
        assert!(xo.times(&t.factor()).unwrap().max_abs_diff(&x) <= 1e-13);
        assert!(bxo.unwrap().max_abs_diff(&b.apply(&xo).unwrap()) <= 1e-12);
    }

    #[test]
    fn b_orthonormalize_flags_dependence() {
        let x = MultiVector::from_columns(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(matches!(b_orthonormalize(&x, None), Err(Error::NotSpd(1))));
        let z = MultiVector::zeros(3, 1);
        assert!(matches!(b_orthonormalize(&z, None), Err(Error::NotSpd(0))));
    }

    #[test]
    fn diagonal_problem() {
        let a = diag((1..=10).map(f64::from));
        let cfg = SolverConfig::new(3, 1e-10, 100);
        let rep = solve(&a, None, None, None, None, &cfg).unwrap();
        // n = 10 with a 9-column basis leaves the residuals in a 1-D complement,
        // so some residual columns are legitimately dropped along the way
        assert!(rep.status.is_converged(), "{:?}", rep.status);
        for (v, e) in rep.eigenvalues.values().iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - e).abs() < 1e-10);
        }
        assert_eq!(rep.history.len(), rep.iterations_used + 1);
    }

    #[test]
    fn single_point_is_exact_immediately() {
        let a = laplacian3d(Grid3D::cube(1).unwrap());
        let rep = solve(&a, None, None, None, None, &SolverConfig::new(1, 1e-10, 5)).unwrap();
        assert_eq!(rep.iterations_used, 0);
        assert_eq!(rep.eigenvalues.values(), &[6.0]);
        assert_eq!(rep.history.len(), 1);
    }

    #[test]
    fn one_application_of_each_operator_per_iteration() {
        let a = diag((1..=40).map(f64::from));
        let b = diag((1..=40).map(|i| 1.0 + 0.01 * f64::from(i)));
        let t = crate::operators::jacobi_preconditioner(&a).unwrap();
        let cfg = SolverConfig::new(4, 1e-8, 200);
        let rep = solve(&a, Some(&b), Some(&t), None, None, &cfg).unwrap();
        assert!(rep.status.is_converged());
        let it = rep.iterations_used;
        // setup: one B and one A block; then one of each per iteration
        assert_eq!(rep.applies.a_blocks, it + 1);
        assert_eq!(rep.applies.b_blocks, it + 1);
        assert_eq!(rep.applies.t_blocks, it);
        let active: usize = rep.history[..it].iter().map(|r| r.active_count).sum();
        assert_eq!(rep.applies.t_columns, active);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = diag([1.0, 2.0, 3.0]);
        let cfg = SolverConfig::new(4, 1e-6, 10);
        assert!(matches!(
            solve(&a, None, None, None, None, &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let cfg = SolverConfig::new(1, -1.0, 10);
        assert!(solve(&a, None, None, None, None, &cfg).is_err());
        let cfg = SolverConfig::new(2, 1e-6, 10);
        let x0 = MultiVector::from_columns(&[vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            solve(&a, None, None, None, Some(&x0), &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let b = IdentityOperator::new(4);
        assert!(matches!(
            solve(&a, Some(&b), None, None, None, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn staged_diagonal() {
        let a = diag((1..=10).map(f64::from));
        let cfg = SolverConfig::new(3, 1e-9, 200);
        let rep = solve_staged(&a, None, None, 6, 3, &cfg).unwrap();
        assert_eq!(rep.stages.len(), 2);
        for (v, e) in rep.eigenvalues.values().iter().zip(1..=6) {
            assert!((v - f64::from(e)).abs() < 1e-8, "{v} vs {e}");
        }
        assert_eq!(rep.history.len(), rep.iterations_used + 1);
        assert!(solve_staged(&a, None, None, 2, 3, &cfg).is_err());
    }

    #[test]
    fn status_strings() {
        assert_eq!(SolverStatus::Converged.to_string(), "converged");
        assert_eq!(
            SolverStatus::BasisFallback(2).to_string(),
            "basis_fallback(2)"
        );
        assert_eq!(
            SolverStatus::Failed(FailureReason::BasisDegeneracy).to_string(),
            "failed(basis_degeneracy)"
        );
    }
}
