//! Command-line interface: `solve`, `study`, `verify`, and `run` for a saved
//! configuration.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid
//! configuration or I/O failure, 3 the linear solver did not converge.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    broken_h1_error, l2_error, run_study_document, solve, write_csv, ManufacturedProblem, SolveOptions,
};
use crate::element::DEFAULT_VOLUME_POINTS;
use crate::error::Error;
use crate::field::{Factor, Separable};
use crate::lemmas::{self, LemmaReport, DEFAULT_SEED, IDENTITY_TOL};
use crate::mesh::{build_jittered, build_uniform, MeshFamily, MeshSpec};
use crate::solver::{SolveReport, DEFAULT_TOL};
use crate::space::DofMap;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Solve,
    Study,
    Verify,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Dimensions checked by `verify`.
    #[serde(default)]
    pub dims: Vec<usize>,
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    #[serde(default = "default_problem")]
    pub problem: String,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_quad")]
    pub quad_points: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// JSON result path (stdout when absent).
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// CSV path for `study` (stdout when absent).
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Where `solve` writes the discrete solution.
    #[serde(default)]
    pub solution: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inject_fault: bool,
}

fn default_dim() -> usize {
    2
}
fn default_problem() -> String {
    "sinsin".into()
}
fn default_levels() -> usize {
    5
}
fn default_quad() -> usize {
    DEFAULT_VOLUME_POINTS
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_trials() -> usize {
    100
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Parser)]
#[command(name = "morley", version, about = "Rectangular Morley element solver for the Poisson problem")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Solve one manufactured problem and report errors.
    Solve(SolveArgs),
    /// Run a refinement study and emit CSV (and optionally JSON).
    Study(StudyArgs),
    /// Check the element identities and lemmas numerically.
    Verify(VerifyArgs),
    /// Execute a saved RunConfig JSON file.
    Run { config: PathBuf },
}

#[derive(Debug, Args)]
struct ProblemArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// uniform:N | divisional:split=a/b,counts=x:y | pattern:1-4,level=L | jitter:N,amp=A,seed=S | file:<path>
    #[arg(long)]
    mesh: String,
    /// bubble | sinsin | zero | linear
    #[arg(long, default_value = "sinsin")]
    problem: String,
    /// Gauss points per axis for loads and errors.
    #[arg(long = "quad", default_value_t = DEFAULT_VOLUME_POINTS)]
    quad_points: usize,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: ProblemArgs,
    /// Write the discrete solution as JSON.
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    common: ProblemArgs,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Break the face orientation signs (tests that verification catches it).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    NotConverged,
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

/// Parses a mesh description for a `dim`-dimensional unit box.
pub fn parse_mesh(text: &str, dim: usize) -> crate::Result<MeshSpec> {
    let bad = |msg: &str| Error::InvalidArgument(format!("mesh {text:?}: {msg}"));
    let (kind, rest) = text.split_once(':').ok_or_else(|| bad("expected <family>:<parameters>"))?;
    let positive = |s: &str, what: &str| -> crate::Result<usize> {
        match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(bad(&format!("{what} must be a positive integer, got {s:?}"))),
        }
    };
    let params = |rest: &str| -> Vec<(String, String)> {
        rest.split(',')
            .map(|p| match p.split_once('=') {
                Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
                None => (String::new(), p.trim().to_string()),
            })
            .collect()
    };
    let family = match kind {
        "uniform" => MeshFamily::Uniform {
            n: vec![positive(rest, "N")?; dim],
        },
        "divisional" => {
            let mut splits = None;
            let mut counts = None;
            for (k, v) in params(rest) {
                match k.as_str() {
                    "split" => {
                        let s: Result<Vec<f64>, _> = v.split('/').map(|x| x.parse::<f64>()).collect();
                        splits = Some(s.map_err(|_| bad("split must be numbers separated by '/'"))?);
                    }
                    "counts" => {
                        counts = Some(v.split(':').map(|c| positive(c, "count")).collect::<crate::Result<Vec<_>>>()?);
                    }
                    _ => return Err(bad(&format!("unknown parameter {k:?}"))),
                }
            }
            let splits = splits.ok_or_else(|| bad("missing split="))?;
            let counts = counts.ok_or_else(|| bad("missing counts="))?;
            MeshFamily::Divisional {
                splits: vec![splits; dim],
                counts: vec![counts; dim],
            }
        }
        "pattern" => {
            let mut ratios = None;
            let mut level = None;
            for (k, v) in params(rest) {
                match k.as_str() {
                    "" => {
                        let r: Result<Vec<f64>, _> = v.split('-').map(|x| x.parse::<f64>()).collect();
                        ratios = Some(r.map_err(|_| bad("ratios must be numbers separated by '-'"))?);
                    }
                    "level" => level = Some(positive(&v, "level")?),
                    _ => return Err(bad(&format!("unknown parameter {k:?}"))),
                }
            }
            MeshFamily::Pattern {
                ratios: vec![ratios.ok_or_else(|| bad("missing ratios, e.g. pattern:1-4"))?; dim],
                level: level.ok_or_else(|| bad("missing level="))?,
            }
        }
        "jitter" => {
            let mut n = None;
            let mut amplitude = 0.2;
            let mut seed = DEFAULT_SEED;
            for (k, v) in params(rest) {
                match k.as_str() {
                    "" => n = Some(positive(&v, "N")?),
                    "amp" => amplitude = v.parse().map_err(|_| bad("amp must be a number"))?,
                    "seed" => seed = v.parse().map_err(|_| bad("seed must be an integer"))?,
                    _ => return Err(bad(&format!("unknown parameter {k:?}"))),
                }
            }
            MeshFamily::Jitter {
                n: vec![n.ok_or_else(|| bad("missing N"))?; dim],
                amplitude,
                seed,
            }
        }
        "file" => {
            let spec = MeshSpec::from_json(&std::fs::read_to_string(rest)?)?;
            if spec.dim != dim {
                return Err(bad(&format!("file describes a {}-dimensional mesh", spec.dim)));
            }
            return Ok(spec);
        }
        _ => return Err(bad("unknown family")),
    };
    Ok(MeshSpec::new(dim, family))
}

impl RunConfig {
    fn base(command: CommandKind) -> Self {
        Self {
            command,
            dim: default_dim(),
            dims: Vec::new(),
            mesh: None,
            problem: default_problem(),
            levels: default_levels(),
            quad_points: default_quad(),
            tol: default_tol(),
            max_iter: None,
            trials: default_trials(),
            seed: default_seed(),
            output: None,
            csv: None,
            solution: None,
            inject_fault: false,
        }
    }

    fn with_problem(command: CommandKind, a: ProblemArgs) -> crate::Result<Self> {
        let mut c = Self::base(command);
        c.dim = a.dim;
        c.mesh = Some(parse_mesh(&a.mesh, a.dim)?);
        c.problem = a.problem;
        c.quad_points = a.quad_points;
        c.tol = a.tol;
        c.max_iter = a.max_iter;
        c.output = a.output;
        Ok(c)
    }

    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            quad_points: self.quad_points,
        }
    }

    fn validate(&self) -> Result<(), Failure> {
        let invalid = |m: String| Err(Failure::Invalid(m));
        if self.command != CommandKind::Verify {
            if self.dim < 2 {
                return invalid(format!("dim must be at least 2, got {}", self.dim));
            }
            match &self.mesh {
                None => return invalid("no mesh given".into()),
                Some(m) if m.dim != self.dim => {
                    return invalid(format!("mesh is {}-dimensional but dim is {}", m.dim, self.dim))
                }
                _ => {}
            }
            if !(self.tol > 0.0) {
                return invalid(format!("tol must be positive, got {}", self.tol));
            }
            if self.quad_points == 0 {
                return invalid("quad must be at least 1".into());
            }
        }
        if self.command == CommandKind::Study && self.levels < 2 {
            return invalid(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.command == CommandKind::Verify {
            if self.dims.is_empty() || self.dims.iter().any(|&d| !(2..=4).contains(&d)) {
                return invalid(format!("dims must be chosen from 2, 3, 4; got {:?}", self.dims));
            }
            if self.trials == 0 {
                return invalid("trials must be at least 1".into());
            }
        }
        Ok(())
    }

    fn problem(&self) -> Result<ManufacturedProblem, Failure> {
        let p = ManufacturedProblem::by_name(&self.problem, self.dim)?;
        if !p.is_homogeneous() {
            return Err(Failure::Invalid(format!(
                "problem {:?} has non-zero boundary values and cannot be solved",
                self.problem
            )));
        }
        Ok(p)
    }
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveOutput {
    pub config: RunConfig,
    pub h: f64,
    pub ndof: usize,
    pub n_free: usize,
    pub err_l2: f64,
    pub err_h1: f64,
    pub solver: SolveReport,
}

fn cmd_solve(config: &RunConfig) -> Result<(), Failure> {
    let problem = config.problem()?;
    let mesh = config.mesh.as_ref().expect("validated").build()?;
    let opts = config.options();
    let sol = solve(&problem, &mesh, &opts)?;
    let out = SolveOutput {
        config: config.clone(),
        h: mesh.mesh_size(),
        ndof: sol.uh.dofmap().n_dofs(),
        n_free: sol.n_free,
        err_l2: l2_error(&sol.uh, problem.u(), opts.quad_points),
        err_h1: broken_h1_error(&sol.uh, problem.u(), opts.quad_points),
        solver: sol.report,
    };
    write_json(config.output.as_deref(), &out)?;
    if let Some(p) = &config.solution {
        std::fs::write(p, sol.uh.to_json()?)?;
    }
    if !sol.report.converged {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

fn cmd_study(config: &RunConfig) -> Result<(), Failure> {
    let problem = config.problem()?;
    let spec = config.mesh.as_ref().expect("validated");
    let doc = run_study_document(&problem, spec, config.levels, &config.options())?;
    match &config.csv {
        Some(p) => write_csv(&doc.records, std::fs::File::create(p)?)?,
        None => write_csv(&doc.records, std::io::stdout().lock())?,
    }
    if let Some(p) = &config.output {
        #[derive(Serialize)]
        struct Out<'a> {
            config: &'a RunConfig,
            #[serde(flatten)]
            doc: &'a crate::analysis::StudyDocument,
        }
        write_json(Some(p), &Out { config, doc: &doc })?;
    }
    if doc.records.iter().any(|r| !r.solver.converged) {
        return Err(Failure::NotConverged);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub config: RunConfig,
    pub reports: Vec<LemmaReport>,
    pub pass: bool,
}

/// All verification checks for one dimension, in a fixed order.
pub fn verify_dim(dim: usize, trials: usize, seed: u64, inject_fault: bool) -> crate::Result<Vec<LemmaReport>> {
    let mut reports = vec![
        lemmas::check_unisolvence(dim, trials, seed),
        lemmas::check_vertex_boundary(dim, trials, seed),
        lemmas::check_face_boundary(dim, trials, seed),
        lemmas::check_uniform_patches(dim, trials, seed)?,
        lemmas::check_theta_pairwise(dim, trials, seed),
        lemmas::check_theta_cross(dim, trials, seed),
        lemmas::check_expansion(dim, trials, seed),
    ];
    let n = match dim {
        2 => 4,
        3 => 3,
        _ => 2,
    };
    let mesh = build_uniform(&vec![(0.0, 1.0); dim], &vec![n; dim])?;
    reports.push(lemmas::check_stable_decomposition(&mesh, trials, seed));

    let mesh = build_jittered(&vec![(0.0, 1.0); dim], &vec![3; dim], 0.25, seed)?;
    let mut dofmap = DofMap::new(mesh);
    if inject_fault {
        dofmap = dofmap.with_face_sign_fault();
    }
    let field = Separable::new((0..dim).map(|j| Factor::Sine { k: 0.7 + 0.45 * j as f64 }).collect());
    let residual = lemmas::check_conformity(&Arc::new(dofmap), &field);
    reports.push(LemmaReport::new("conformity", dim, 1, seed, IDENTITY_TOL, residual));
    Ok(reports)
}

fn cmd_verify(config: &RunConfig) -> Result<(), Failure> {
    let mut reports = Vec::new();
    for &d in &config.dims {
        reports.extend(verify_dim(d, config.trials, config.seed, config.inject_fault)?);
    }
    let pass = reports.iter().all(|r| r.pass);
    write_json(
        config.output.as_deref(),
        &VerifyOutput {
            config: config.clone(),
            reports,
            pass,
        },
    )?;
    if pass {
        Ok(())
    } else {
        Err(Failure::CheckFailed)
    }
}

/// Executes a configuration and returns the process exit code.
pub fn execute(config: &RunConfig) -> i32 {
    let result = config.validate().and_then(|()| match config.command {
        CommandKind::Solve => cmd_solve(config),
        CommandKind::Study => cmd_study(config),
        CommandKind::Verify => cmd_verify(config),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: linear solver did not converge");
            EXIT_NOT_CONVERGED
        }
        Err(Failure::CheckFailed) => {
            eprintln!("verification failed");
            EXIT_CHECK_FAILED
        }
    }
}

fn configure_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("MORLEY_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("MORLEY_THREADS must be a positive integer, got {v:?}"))?;
        // ignore an already-initialised pool (e.g. repeated calls in one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_INVALID;
    }
    let config = match cli.command {
        Cmd::Solve(a) => RunConfig::with_problem(CommandKind::Solve, a.common).map(|mut c| {
            c.solution = a.solution;
            c
        }),
        Cmd::Study(a) => RunConfig::with_problem(CommandKind::Study, a.common).map(|mut c| {
            c.levels = a.levels;
            c.csv = a.csv;
            c
        }),
        Cmd::Verify(a) => {
            let mut c = RunConfig::base(CommandKind::Verify);
            c.dims = a.dims;
            c.trials = a.trials;
            c.seed = a.seed;
            c.output = a.output;
            c.inject_fault = a.inject_fault;
            Ok(c)
        }
        Cmd::Run { config } => std::fs::read_to_string(&config)
            .map_err(Error::from)
            .and_then(|t| Ok(serde_json::from_str::<RunConfig>(&t)?)),
    };
    match config {
        Ok(c) => execute(&c),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}
