//! Manufactured solutions, broken-norm errors and convergence studies.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::{n_local_dofs, tabulate, DEFAULT_VOLUME_POINTS};
use crate::error::{Error, Result};
use crate::field::{NegLaplacian, Polynomial, ScalarField, Separable, SmoothField};
use crate::mesh::{MeshSpec, TensorMesh};
use crate::quadrature::QuadratureRule;
use crate::solver::{cg_solve, default_max_iter, SolveReport, DEFAULT_TOL};
use crate::space::{apply_dirichlet, assemble_with, build_dof_map, global_interpolate, DofMap, FeFunction};

pub const PROBLEM_NAMES: [&str; 4] = ["bubble", "sinsin", "zero", "linear"];

/// `-Δu = f` on the unit box with a known solution `u`.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub name: String,
    pub dim: usize,
    u: Arc<dyn SmoothField + Send>,
    homogeneous: bool,
}

impl std::fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ManufacturedProblem {
    pub fn new(name: impl Into<String>, dim: usize, u: Arc<dyn SmoothField + Send>, homogeneous: bool) -> Self {
        Self {
            name: name.into(),
            dim,
            u,
            homogeneous,
        }
    }

    /// Built-in problems:
    /// `bubble` `Π x_j(1-x_j)`, `sinsin` `Π sin(π x_j)`, `zero`, and
    /// `linear` `1 + Σ_j (j+1) x_j` (harmonic but not zero on the boundary).
    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("dimension must be at least 2, got {dim}")));
        }
        let (u, homogeneous): (Arc<dyn SmoothField + Send>, bool) = match name {
            "bubble" => (Arc::new(Separable::bubble(dim)), true),
            "sinsin" => (Arc::new(Separable::sines(dim)), true),
            "zero" => (Arc::new(Polynomial::zero(dim)), true),
            "linear" => {
                let coeffs: Vec<f64> = (1..=dim).map(|k| k as f64).collect();
                (Arc::new(Polynomial::affine(1.0, &coeffs)), false)
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown problem {other:?}; expected one of {PROBLEM_NAMES:?}"
                )))
            }
        };
        Ok(Self::new(name, dim, u, homogeneous))
    }

    pub fn u(&self) -> &(dyn SmoothField + Send) {
        self.u.as_ref()
    }

    /// `f = -Δu`.
    pub fn f(&self) -> NegLaplacian<'_, dyn SmoothField + Send> {
        NegLaplacian(self.u.as_ref())
    }

    /// Whether `u` vanishes on the boundary of the unit box.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }
}

/// Σ_K of a per-cell integral; cells are processed in parallel but summed in
/// cell order so the result is independent of the thread count.
fn sum_over_cells(n_cells: usize, per_cell: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let parts: Vec<f64> = (0..n_cells).into_par_iter().map(per_cell).collect();
    parts.iter().sum()
}

/// `‖exact - v‖_0` by per-cell Gauss quadrature.
pub fn l2_error(v: &FeFunction, exact: &(impl ScalarField + ?Sized), quad_points: usize) -> f64 {
    let mesh = v.mesh();
    let d = mesh.dim();
    let rule = QuadratureRule::tensor(d, quad_points);
    let n = n_local_dofs(d);
    sum_over_cells(mesh.n_cells(), |c| {
        let cell = mesh.cell_at(c);
        let coeffs = v.local_coeffs(c);
        let mut vals = vec![0.0; n];
        let mut grads = vec![0.0; n * d];
        let mut x = vec![0.0; d];
        let mut s = 0.0;
        for (xi, w) in rule.iter() {
            tabulate(&cell, xi, &mut vals, &mut grads);
            cell.to_physical_into(xi, &mut x);
            let vh: f64 = coeffs.iter().zip(&vals).map(|(a, b)| a * b).sum();
            let e = exact.value(&x) - vh;
            s += w * e * e;
        }
        s * cell.jacobian()
    })
    .sqrt()
}

/// `|exact - v|_{1,h}`, the broken `H^1` seminorm.
pub fn broken_h1_error(v: &FeFunction, exact: &(impl SmoothField + ?Sized), quad_points: usize) -> f64 {
    let mesh = v.mesh();
    let d = mesh.dim();
    let rule = QuadratureRule::tensor(d, quad_points);
    let n = n_local_dofs(d);
    sum_over_cells(mesh.n_cells(), |c| {
        let cell = mesh.cell_at(c);
        let coeffs = v.local_coeffs(c);
        let mut vals = vec![0.0; n];
        let mut grads = vec![0.0; n * d];
        let mut x = vec![0.0; d];
        let mut gu = vec![0.0; d];
        let mut s = 0.0;
        for (xi, w) in rule.iter() {
            tabulate(&cell, xi, &mut vals, &mut grads);
            cell.to_physical_into(xi, &mut x);
            exact.gradient(&x, &mut gu);
            for j in 0..d {
                let gh: f64 = (0..n).map(|r| coeffs[r] * grads[r * d + j]).sum();
                let e = gu[j] - gh;
                s += w * e * e;
            }
        }
        s * cell.jacobian()
    })
    .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `max(10 n, 1000)` for `n` unknowns.
    pub max_iter: Option<usize>,
    pub quad_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: None,
            quad_points: DEFAULT_VOLUME_POINTS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub uh: FeFunction,
    pub report: SolveReport,
    /// Unknowns after eliminating boundary vertex values.
    pub n_free: usize,
}

/// Assembles, constrains and solves the discrete problem on `mesh`.
pub fn solve(problem: &ManufacturedProblem, mesh: &TensorMesh, opts: &SolveOptions) -> Result<Solution> {
    if !problem.is_homogeneous() {
        return Err(Error::InvalidArgument(format!(
            "problem {:?} has non-zero boundary values; only homogeneous Dirichlet data is supported",
            problem.name
        )));
    }
    if mesh.dim() != problem.dim {
        return Err(Error::InvalidArgument(format!(
            "problem is {}-dimensional but the mesh is {}-dimensional",
            problem.dim,
            mesh.dim()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {}", opts.tol)));
    }
    let dofmap = Arc::new(build_dof_map(mesh));
    let f = problem.f();
    let system = apply_dirichlet(&assemble_with(&dofmap, &f, opts.quad_points), &dofmap);
    let n_free = system.free_dofs.len();
    let max_iter = opts.max_iter.unwrap_or_else(|| default_max_iter(n_free));
    let (x, report) = cg_solve(&system, opts.tol, max_iter);
    let uh = FeFunction::new(dofmap, system.expand(&x))?;
    Ok(Solution { uh, report, n_free })
}

/// Pairwise rates `log(e_{k-1}/e_k) / log(h_{k-1}/h_k)` and the least-squares
/// log-log slope over the last `m` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub pairwise: Vec<Option<f64>>,
    pub slope: Option<f64>,
}

pub fn estimate_rate(errors: &[f64], hs: &[f64], m: usize) -> RateEstimate {
    assert_eq!(errors.len(), hs.len());
    let pairwise = errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            (e[0] > 0.0 && e[1] > 0.0 && h[0] != h[1]).then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect();
    let start = errors.len().saturating_sub(m);
    let pts: Vec<(f64, f64)> = errors[start..]
        .iter()
        .zip(&hs[start..])
        .filter(|(e, h)| **e > 0.0 && **h > 0.0)
        .map(|(e, h)| (h.ln(), e.ln()))
        .collect();
    let slope = if pts.len() >= 2 && pts.len() == errors.len() - start {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    RateEstimate { pairwise, slope }
}

pub const CSV_HEADER: [&str; 8] = ["level", "h", "ndof", "err_l2", "err_h1", "rate_l2", "rate_h1", "lb_ratio"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub level: usize,
    pub h: f64,
    /// All global DOFs of `V_h`.
    pub ndof: usize,
    pub err_l2: f64,
    pub err_h1: f64,
    pub rate_l2: Option<f64>,
    pub rate_h1: Option<f64>,
    /// `err_l2 / h^2`.
    pub lb_ratio: f64,
    pub solver: SolveReport,
}

/// One CSV row; the solver report lives only in the JSON mirror.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub err_l2: f64,
    pub err_h1: f64,
    pub rate_l2: Option<f64>,
    pub rate_h1: Option<f64>,
    pub lb_ratio: f64,
}

impl From<&ConvergenceRecord> for CsvRecord {
    fn from(r: &ConvergenceRecord) -> Self {
        Self {
            level: r.level,
            h: r.h,
            ndof: r.ndof,
            err_l2: r.err_l2,
            err_h1: r.err_h1,
            rate_l2: r.rate_l2,
            rate_h1: r.rate_h1,
            lb_ratio: r.lb_ratio,
        }
    }
}

pub fn write_csv(records: &[ConvergenceRecord], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRecord::from(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[ConvergenceRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Runs `levels` solves on `spec`, `spec` refined once, twice, ...
pub fn run_study(
    problem: &ManufacturedProblem,
    spec: &MeshSpec,
    levels: usize,
    opts: &SolveOptions,
) -> Result<Vec<ConvergenceRecord>> {
    if levels < 2 {
        return Err(Error::InvalidArgument(format!("a study needs at least 2 levels, got {levels}")));
    }
    let mut records: Vec<ConvergenceRecord> = Vec::with_capacity(levels);
    for level in 0..levels {
        let mesh = spec.refined(level as u32)?.build()?;
        let sol = solve(problem, &mesh, opts)?;
        let h = mesh.mesh_size();
        let err_l2 = l2_error(&sol.uh, problem.u(), opts.quad_points);
        let err_h1 = broken_h1_error(&sol.uh, problem.u(), opts.quad_points);
        let (rate_l2, rate_h1) = match records.last() {
            Some(prev) => {
                let r = |e0: f64, e1: f64| estimate_rate(&[e0, e1], &[prev.h, h], 2).pairwise[0];
                (r(prev.err_l2, err_l2), r(prev.err_h1, err_h1))
            }
            None => (None, None),
        };
        records.push(ConvergenceRecord {
            level,
            h,
            ndof: sol.uh.dofmap().n_dofs(),
            err_l2,
            err_h1,
            rate_l2,
            rate_h1,
            lb_ratio: err_l2 / (h * h),
            solver: sol.report,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMetadata {
    pub mesh: MeshSpec,
    pub problem: String,
    pub levels: usize,
    pub quad_points: usize,
    pub solver_tol: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyDocument {
    pub metadata: StudyMetadata,
    pub records: Vec<ConvergenceRecord>,
}

/// Runs a study and wraps it with its metadata.
pub fn run_study_document(
    problem: &ManufacturedProblem,
    spec: &MeshSpec,
    levels: usize,
    opts: &SolveOptions,
) -> Result<StudyDocument> {
    let start = Instant::now();
    let records = run_study(problem, spec, levels, opts)?;
    Ok(StudyDocument {
        metadata: StudyMetadata {
            mesh: spec.clone(),
            problem: problem.name.clone(),
            levels,
            quad_points: opts.quad_points,
            solver_tol: opts.tol,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        records,
    })
}

/// `a_h(u - Π_h u, Π_h u)` with a 5-point rule per axis.
pub fn superclose_pairing(dofmap: &Arc<DofMap>, problem: &ManufacturedProblem) -> f64 {
    let u = problem.u();
    let pu = global_interpolate(dofmap, u);
    let mesh = dofmap.mesh();
    let d = mesh.dim();
    let n = n_local_dofs(d);
    let rule = QuadratureRule::tensor(d, DEFAULT_VOLUME_POINTS);
    sum_over_cells(mesh.n_cells(), |c| {
        let cell = mesh.cell_at(c);
        let coeffs = pu.local_coeffs(c);
        let mut vals = vec![0.0; n];
        let mut grads = vec![0.0; n * d];
        let mut x = vec![0.0; d];
        let mut gu = vec![0.0; d];
        let mut s = 0.0;
        for (xi, w) in rule.iter() {
            tabulate(&cell, xi, &mut vals, &mut grads);
            cell.to_physical_into(xi, &mut x);
            u.gradient(&x, &mut gu);
            for j in 0..d {
                let gp: f64 = (0..n).map(|r| coeffs[r] * grads[r * d + j]).sum();
                s += w * (gu[j] - gp) * gp;
            }
        }
        s * cell.jacobian()
    })
}
