//! Batch driver behind the `lobpcg` binary.
//!
//! Builds a 7-point Laplacian from flags, solves for the smallest
//! eigenpairs, compares with the closed-form spectrum and writes text, JSON
//! and CSV reports. Flags are single-dash and some take several values
//! (`-n 20 20 20`), so they are parsed by hand.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lobpcg::{solve, Constraints, SolverConfig, SolverReport, SolverStatus};
use crate::multivec::MultiVector;
use crate::operators::{
    laplacian3d, Grid3D, IdentityPreconditioner, InnerPcgPreconditioner, JacobiPreconditioner,
    LinearOperator, Preconditioner,
};
use crate::problems::exact_eigenvalues;

pub const USAGE: &str = "\
usage: lobpcg [-lobpcg] [options]

  -n nx ny nz          grid size (default 10 10 10)
  -vrand m, -n_eigs m  block size, number of eigenpairs (default 1)
  -seed s              seed for the random initial block (default 1)
  -tol t               residual 2-norm tolerance (default 1e-6)
  -itr k               maximum outer iterations (default 100)
  -pcgitr p            0 applies the base preconditioner directly,
                       p >= 1 runs p inner PCG steps with it (default 0)
  -precond none|jacobi base preconditioner (default jacobi)
  -verb v              0 silent, 1 summary, 2 per-iteration log (default 1)
  -full_out 0|1        print the full convergence history (default 0)
  -json path           write the run record as JSON
  -csv path            write the history (or the sweep table) as CSV
  -constraints path    keep iterates orthogonal to vectors in a LOBX file
  -save_vecs path      write the computed eigenvectors as a LOBX file
  -sweep pcgitr|block v1,v2,...
                       repeat the solve over a list of values
";

/// Exit codes of [`main`].
pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasePrecond {
    None,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Pcgitr,
    Block,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Pcgitr => "pcgitr",
            SweepKind::Block => "block",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    pub grid: Grid3D,
    pub block_size: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub pcg_steps: usize,
    pub precond: BasePrecond,
    pub verbosity: u8,
    pub full_out: bool,
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub save_vecs: Option<PathBuf>,
    pub sweep: Option<(SweepKind, Vec<usize>)>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            grid: Grid3D {
                nx: 10,
                ny: 10,
                nz: 10,
            },
            block_size: 1,
            seed: 1,
            tol: 1e-6,
            max_iter: 100,
            pcg_steps: 0,
            precond: BasePrecond::Jacobi,
            verbosity: 1,
            full_out: false,
            json: None,
            csv: None,
            constraints: None,
            save_vecs: None,
            sweep: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Run(Options),
    Help,
}

fn usage_err(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn value<'a>(args: &'a [String], i: usize, flag: &str) -> Result<&'a str> {
    args.get(i)
        .map(String::as_str)
        .ok_or_else(|| usage_err(format!("{flag} expects a value")))
}

fn number<T: std::str::FromStr>(args: &[String], i: usize, flag: &str) -> Result<T> {
    let s = value(args, i, flag)?;
    s.parse()
        .map_err(|_| usage_err(format!("{flag}: cannot parse '{s}'")))
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<usize>> {
    let items: Vec<&str> = s
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if items.is_empty() {
        return Err(usage_err(format!("{flag}: empty value list")));
    }
    items
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| usage_err(format!("{flag}: cannot parse '{v}'")))
        })
        .collect()
}

/// Parses flags, not including the program name.
pub fn parse_args(args: &[String]) -> Result<Command> {
    let mut o = Options::default();
    let mut i = 0;
    while i < args.len() {
        let flag = args[i].as_str();
        match flag {
            "-h" | "-help" | "--help" => return Ok(Command::Help),
            "-lobpcg" => {}
            "-n" => {
                let nx = number(args, i + 1, flag)?;
                let ny = number(args, i + 2, flag)?;
                let nz = number(args, i + 3, flag)?;
                o.grid = Grid3D::new(nx, ny, nz)?;
                i += 3;
            }
            "-vrand" | "-n_eigs" => {
                o.block_size = number(args, i + 1, flag)?;
                i += 1;
            }
            "-seed" => {
                o.seed = number(args, i + 1, flag)?;
                i += 1;
            }
            "-tol" => {
                o.tol = number(args, i + 1, flag)?;
                i += 1;
            }
            "-itr" => {
                o.max_iter = number(args, i + 1, flag)?;
                i += 1;
            }
            "-pcgitr" => {
                o.pcg_steps = number(args, i + 1, flag)?;
                i += 1;
            }
            "-precond" => {
                o.precond = match value(args, i + 1, flag)? {
                    "none" => BasePrecond::None,
                    "jacobi" => BasePrecond::Jacobi,
                    other => return Err(usage_err(format!("-precond: unknown '{other}'"))),
                };
                i += 1;
            }
            "-verb" => {
                o.verbosity = number(args, i + 1, flag)?;
                i += 1;
            }
            "-full_out" => {
                o.full_out = match value(args, i + 1, flag)? {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(usage_err(format!(
                            "-full_out expects 0 or 1, got '{other}'"
                        )))
                    }
                };
                i += 1;
            }
            "-json" => {
                o.json = Some(value(args, i + 1, flag)?.into());
                i += 1;
            }
            "-csv" => {
                o.csv = Some(value(args, i + 1, flag)?.into());
                i += 1;
            }
            "-constraints" => {
                o.constraints = Some(value(args, i + 1, flag)?.into());
                i += 1;
            }
            "-save_vecs" => {
                o.save_vecs = Some(value(args, i + 1, flag)?.into());
                i += 1;
            }
            "-sweep" => {
                let kind = match value(args, i + 1, flag)? {
                    "pcgitr" => SweepKind::Pcgitr,
                    "block" => SweepKind::Block,
                    other => return Err(usage_err(format!("-sweep: unknown kind '{other}'"))),
                };
                let list = parse_list(args.get(i + 2).map(String::as_str).unwrap_or(""), flag)?;
                o.sweep = Some((kind, list));
                i += 2;
            }
            other => return Err(usage_err(format!("unknown flag '{other}'"))),
        }
        i += 1;
    }
    if o.block_size == 0 || o.block_size > o.grid.len() {
        return Err(usage_err(format!(
            "block size {} must lie in 1..={}",
            o.block_size,
            o.grid.len()
        )));
    }
    if !(o.tol.is_finite() && o.tol > 0.0) {
        return Err(usage_err("-tol must be positive"));
    }
    if let Some((SweepKind::Block, values)) = &o.sweep {
        if values.iter().any(|&m| m == 0 || m > o.grid.len()) {
            return Err(usage_err("-sweep block: sizes must lie in 1..=n"));
        }
    }
    Ok(Command::Run(o))
}

/// The flag values as echoed into the JSON record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub tol: f64,
    pub itr: usize,
    pub pcgitr: usize,
    pub precond: BasePrecond,
    /// `none`, `jacobi` or `pcg:<steps>`.
    pub preconditioner: String,
    pub verb: u8,
    pub full_out: bool,
    pub constraints: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: usize,
    pub ritz: f64,
    pub resid: f64,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub eigenvalues: Vec<f64>,
    pub analytic: Option<Vec<f64>>,
    pub rel_errors: Option<Vec<f64>>,
    pub iterations: usize,
    pub history: Vec<HistoryRow>,
    pub setup_sec: f64,
    pub solve_sec: f64,
    pub status: String,
}

impl RunRecord {
    pub fn max_rel_error(&self) -> Option<f64> {
        self.rel_errors
            .as_ref()
            .map(|e| e.iter().fold(0.0, |a: f64, &b| a.max(b)))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub report: SolverReport,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.report.status)
    }
}

pub fn exit_code(status: &SolverStatus) -> i32 {
    match status {
        SolverStatus::Converged | SolverStatus::BasisFallback(_) => EXIT_CONVERGED,
        SolverStatus::MaxIterReached => EXIT_PARTIAL,
        SolverStatus::Failed(_) => EXIT_ERROR,
    }
}

/// Preconditioner selected by `precond` and `pcg_steps`.
pub fn build_preconditioner(
    a: Arc<dyn LinearOperator>,
    precond: BasePrecond,
    pcg_steps: usize,
) -> Result<Arc<dyn Preconditioner>> {
    let base: Arc<dyn Preconditioner> = match precond {
        BasePrecond::None => Arc::new(IdentityPreconditioner::new(a.dim())),
        BasePrecond::Jacobi => Arc::new(JacobiPreconditioner::new(a.as_ref())?),
    };
    if pcg_steps == 0 {
        Ok(base)
    } else {
        Ok(Arc::new(InnerPcgPreconditioner::new(a, base, pcg_steps)?))
    }
}

fn history_rows(report: &SolverReport) -> Vec<HistoryRow> {
    let mut rows = Vec::new();
    for rec in &report.history {
        for (j, (&ritz, &resid)) in rec.ritz_values.iter().zip(&rec.residual_norms).enumerate() {
            rows.push(HistoryRow {
                iter: rec.iteration,
                j: rec.column_offset + j,
                ritz,
                resid,
                active: rec.active.get(j).copied().unwrap_or(false),
            });
        }
    }
    rows
}

/// Builds the problem, solves it and assembles the record. Writes no files.
pub fn run(o: &Options) -> Result<RunOutcome> {
    let setup = Instant::now();
    let a: Arc<dyn LinearOperator> = Arc::new(laplacian3d(o.grid));
    let t = build_preconditioner(a.clone(), o.precond, o.pcg_steps)?;
    let constraints = match &o.constraints {
        Some(path) => {
            let y = read_lobx(path)?;
            if y.nrows() != a.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "constraint file has {} rows, grid has {} points",
                    y.nrows(),
                    a.dim()
                )));
            }
            Some(Constraints::new(y, None)?)
        }
        None => None,
    };
    let setup_sec = setup.elapsed().as_secs_f64();

    let mut cfg = SolverConfig::new(o.block_size, o.tol, o.max_iter).with_seed(o.seed);
    cfg.lock_history = true;
    cfg.verbosity = if o.verbosity >= 2 { 2 } else { 0 };
    let report = solve(
        a.as_ref(),
        None,
        Some(t.as_ref()),
        constraints.as_ref(),
        None,
        &cfg,
    )?;

    let eigenvalues = report.eigenvalues.values().to_vec();
    // with constraints the computed pairs are not the smallest ones
    let analytic = match constraints {
        None => Some(exact_eigenvalues(o.grid, o.block_size)?),
        Some(_) => None,
    };
    let rel_errors = analytic.as_ref().map(|ex| {
        eigenvalues
            .iter()
            .zip(ex)
            .map(|(v, e)| ((v - e) / e).abs())
            .collect()
    });
    let record = RunRecord {
        config: RunConfig {
            nx: o.grid.nx,
            ny: o.grid.ny,
            nz: o.grid.nz,
            n: o.grid.len(),
            m: o.block_size,
            seed: o.seed,
            tol: o.tol,
            itr: o.max_iter,
            pcgitr: o.pcg_steps,
            precond: o.precond,
            preconditioner: t.describe(),
            verb: o.verbosity,
            full_out: o.full_out,
            constraints: o.constraints.as_ref().map(|p| p.display().to_string()),
        },
        eigenvalues,
        analytic,
        rel_errors,
        iterations: report.iterations_used,
        history: history_rows(&report),
        setup_sec,
        solve_sec: report.elapsed.as_secs_f64(),
        status: report.status.to_string(),
    };
    Ok(RunOutcome { record, report })
}

pub fn history_csv(record: &RunRecord) -> String {
    let mut s = String::from("iter,j,ritz,resid,active\n");
    for r in &record.history {
        let _ = writeln!(
            s,
            "{},{},{:e},{:e},{}",
            r.iter, r.j, r.ritz, r.resid, r.active
        );
    }
    s
}

/// Human-readable summary; the history block is included when `full_out`.
pub fn format_summary(record: &RunRecord, full_out: bool) -> String {
    let c = &record.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "grid {}x{}x{} (n = {}), m = {}, preconditioner {}, seed {}, tol {:e}",
        c.nx, c.ny, c.nz, c.n, c.m, c.preconditioner, c.seed, c.tol
    );
    let _ = writeln!(
        s,
        "status {}, {} iterations, setup {:.3} s, solve {:.3} s",
        record.status, record.iterations, record.setup_sec, record.solve_sec
    );
    let _ = writeln!(
        s,
        "{:>4}  {:>22}  {:>22}  {:>10}",
        "j", "eigenvalue", "analytic", "rel.error"
    );
    for (j, v) in record.eigenvalues.iter().enumerate() {
        match (&record.analytic, &record.rel_errors) {
            (Some(ex), Some(err)) => {
                let _ = writeln!(
                    s,
                    "{j:>4}  {v:>22.15e}  {:>22.15e}  {:>10.3e}",
                    ex[j], err[j]
                );
            }
            _ => {
                let _ = writeln!(s, "{j:>4}  {v:>22.15e}  {:>22}  {:>10}", "-", "-");
            }
        }
    }
    if let Some(e) = record.max_rel_error() {
        let _ = writeln!(s, "max relative error {e:.3e}");
    }
    if full_out {
        s.push_str("history\n");
        s.push_str(&history_csv(record));
    }
    s
}

const LOBX_MAGIC: &[u8; 4] = b"LOBX";
const LOBX_VERSION: u32 = 1;

/// Writes `x` as `LOBX`, version, `n`, `k` and column-major values, all
/// little-endian.
pub fn write_lobx(path: &Path, x: &MultiVector) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * x.as_slice().len());
    buf.extend_from_slice(LOBX_MAGIC);
    buf.extend_from_slice(&LOBX_VERSION.to_le_bytes());
    buf.extend_from_slice(&(x.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(x.ncols() as u64).to_le_bytes());
    for v in x.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_lobx(path: &Path) -> Result<MultiVector> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_lobx(&bytes)
}

pub fn parse_lobx(bytes: &[u8]) -> Result<MultiVector> {
    let bad = |msg: &str| Error::Format(format!("eigenvector file: {msg}"));
    if bytes.len() < 24 {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != LOBX_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != LOBX_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let k = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let count = usize::try_from(n)
        .ok()
        .zip(usize::try_from(k).ok())
        .and_then(|(n, k)| n.checked_mul(k))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = &bytes[24..];
    if Some(body.len()) != count.checked_mul(8) {
        return Err(bad(&format!(
            "expected {count} values, found {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    MultiVector::from_col_major(n as usize, k as usize, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: SweepKind,
    pub value: usize,
    pub iterations: usize,
    pub solve_sec: f64,
    pub status: String,
    pub max_rel_error: Option<f64>,
}

/// Repeats [`run`] for each value, varying either `pcg_steps` or the block
/// size. Runs sequentially so that timings do not interfere.
pub fn sweep(base: &Options, kind: SweepKind, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(usage_err("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&v| {
            let mut o = base.clone();
            o.constraints = None;
            match kind {
                SweepKind::Pcgitr => o.pcg_steps = v,
                SweepKind::Block => o.block_size = v,
            }
            let out = run(&o)?;
            Ok(SweepRow {
                kind,
                value: v,
                iterations: out.record.iterations,
                solve_sec: out.record.solve_sec,
                status: out.record.status.clone(),
                max_rel_error: out.record.max_rel_error(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("sweep,value,iterations,solve_sec,status,max_rel_error\n");
    for r in rows {
        let err = r
            .max_rel_error
            .map(|e| format!("{e:e}"))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{}",
            r.kind.name(),
            r.value,
            r.iterations,
            r.solve_sec,
            r.status,
            err
        );
    }
    s
}

fn execute(o: &Options, out: &mut dyn Write) -> Result<i32> {
    if let Some((kind, values)) = &o.sweep {
        let rows = sweep(o, *kind, values)?;
        let table = sweep_csv(&rows);
        if let Some(path) = &o.csv {
            fs::write(path, &table)?;
        }
        if o.verbosity >= 1 {
            out.write_all(table.as_bytes())?;
        }
        return Ok(EXIT_CONVERGED);
    }

    let outcome = run(o)?;
    if let Some(path) = &o.json {
        fs::write(path, outcome.record.to_json()?)?;
    }
    if let Some(path) = &o.csv {
        fs::write(path, history_csv(&outcome.record))?;
    }
    if let Some(path) = &o.save_vecs {
        write_lobx(path, &outcome.report.eigenvectors)?;
    }
    if o.verbosity >= 1 {
        out.write_all(format_summary(&outcome.record, o.full_out).as_bytes())?;
    }
    Ok(outcome.exit_code())
}

/// Runs the driver with `args` (program name excluded), writing reports to
/// `out` and diagnostics to `err`. Returns the process exit code.
pub fn main_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let opts = match parse_args(args) {
        Ok(Command::Help) => {
            let _ = out.write_all(USAGE.as_bytes());
            return EXIT_CONVERGED;
        }
        Ok(Command::Run(o)) => o,
        Err(e) => {
            let _ = writeln!(err, "lobpcg: {e}\n\n{USAGE}");
            return EXIT_ERROR;
        }
    };
    match execute(&opts, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "lobpcg: {e}");
            EXIT_ERROR
        }
    }
}

pub fn main(args: &[String]) -> i32 {
    main_with(args, &mut io::stdout().lock(), &mut io::stderr().lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn opts(s: &str) -> Options {
        match parse_args(&args(s)).unwrap() {
            Command::Run(o) => o,
            Command::Help => panic!("help"),
        }
    }

    #[test]
    fn paper_style_flags() {
        let o = opts("-lobpcg -n 128 128 128 -pcgitr 0 -vrand 10 -seed 2 -tol 1e-6 -itr 5 -verb 1");
        assert_eq!(o.grid, Grid3D::new(128, 128, 128).unwrap());
        assert_eq!(
            (o.block_size, o.seed, o.max_iter, o.pcg_steps, o.verbosity),
            (10, 2, 5, 0, 1)
        );
        assert_eq!(o.tol, 1e-6);
        assert_eq!(o.precond, BasePrecond::Jacobi);
    }

    #[test]
    fn vrand_and_n_eigs_are_synonyms() {
        assert_eq!(opts("-vrand 4"), opts("-n_eigs 4"));
    }

    #[test]
    fn malformed_flags() {
        for bad in [
            "-n 10 10",
            "-n 0 1 1",
            "-vrand",
            "-vrand x",
            "-tol -1",
            "-precond ilu",
            "-full_out 2",
            "-bogus",
            "-sweep pcgitr ,",
            "-sweep pcgitr",
            "-sweep size 1,2",
            "-n 2 2 2 -vrand 9",
            "-n 2 2 2 -sweep block 1,9",
        ] {
            assert!(parse_args(&args(bad)).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_lists() {
        let o = opts("-sweep pcgitr 0,1,2,5");
        assert_eq!(o.sweep, Some((SweepKind::Pcgitr, vec![0, 1, 2, 5])));
        let o = opts("-sweep block 1,2,4");
        assert_eq!(o.sweep, Some((SweepKind::Block, vec![1, 2, 4])));
    }

    #[test]
    fn help() {
        assert_eq!(parse_args(&args("-help")).unwrap(), Command::Help);
    }

    #[test]
    fn lobx_rejects_garbage() {
        assert!(parse_lobx(b"LOB").is_err());
        let mut bytes = b"XOBL".to_vec();
        bytes.resize(24, 0);
        assert!(matches!(parse_lobx(&bytes), Err(Error::Format(_))));
        let mut bytes = b"LOBX".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(parse_lobx(&bytes).is_err());
        bytes.extend_from_slice(&2.0f64.to_le_bytes());
        let x = parse_lobx(&bytes).unwrap();
        assert_eq!(x.col(0), &[1.0, 2.0]);
    }

    #[test]
    fn preconditioner_descriptors() {
        let a: Arc<dyn LinearOperator> = Arc::new(laplacian3d(Grid3D::cube(2).unwrap()));
        let d = |p, s| build_preconditioner(a.clone(), p, s).unwrap().describe();
        assert_eq!(d(BasePrecond::None, 0), "none");
        assert_eq!(d(BasePrecond::Jacobi, 0), "jacobi");
        assert_eq!(d(BasePrecond::Jacobi, 7), "pcg:7");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&SolverStatus::Converged), 0);
        assert_eq!(exit_code(&SolverStatus::BasisFallback(2)), 0);
        assert_eq!(exit_code(&SolverStatus::MaxIterReached), 2);
        assert_eq!(
            exit_code(&SolverStatus::Failed(
                crate::lobpcg::FailureReason::BasisDegeneracy
            )),
            1
        );
    }
}
