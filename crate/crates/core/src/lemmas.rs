//! Numerical checks of the structural identities behind the error analysis:
//! boundary-integral orthogonality on cells and patches, the strengthened
//! Cauchy-Schwarz constant, stable decomposition, and consistency probes.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::ManufacturedProblem;
use crate::element::{
    dof_basis_matrix, dof_functionals, expansion_identity, face_quadrature, local_load,
    local_q1_interpolate, local_stiffness, n_local_dofs, n_vertex_dofs, tabulate, ExpansionForm,
    LocalFunction, DEFAULT_VOLUME_POINTS,
};
use crate::error::{Error, Result};
use crate::field::{Polynomial, ScalarField, SmoothField};
use crate::mesh::{Cell, TensorMesh};
use crate::quadrature::QuadratureRule;
use crate::space::{cell_energies, decompose, global_interpolate, DofMap, FeFunction};

pub const DEFAULT_SEED: u64 = 20_240_601;
/// Absolute tolerance for identities that hold exactly on order-one cells.
pub const IDENTITY_TOL: f64 = 1e-12;
pub const EXPANSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_residual: f64,
    pub pass: bool,
}

impl LemmaReport {
    pub fn new(lemma: &str, dim: usize, trials: usize, seed: u64, tolerance: f64, max_residual: f64) -> Self {
        Self {
            lemma: lemma.to_string(),
            dim,
            trials,
            seed,
            tolerance,
            max_residual,
            pass: max_residual <= tolerance,
        }
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

/// Random cell with centre in `[-1, 1]^d` and half-lengths in `[0.1, 1]`.
pub fn random_cell(rng: &mut impl Rng, dim: usize) -> Cell {
    Cell::new(
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..dim).map(|_| rng.gen_range(0.1..1.0)).collect(),
    )
    .expect("positive half-lengths")
}

pub fn random_affine(rng: &mut impl Rng, dim: usize) -> Polynomial {
    let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Polynomial::affine(rng.gen_range(-1.0..1.0), &c)
}

/// Random polynomial of total degree at most 3.
pub fn random_cubic(rng: &mut impl Rng, dim: usize) -> Polynomial {
    let terms = Polynomial::total_degree_exponents(dim, 3)
        .into_iter()
        .map(|e| (rng.gen_range(-1.0..1.0), e))
        .collect();
    Polynomial::new(dim, terms)
}

/// `max_i |Σ_F ∫_F g n_i ds|` over the boundary of `cell`, with a rule exact
/// for per-axis degree 7.
fn boundary_flux(cell: &Cell, g: impl Fn(&[f64]) -> f64) -> f64 {
    let d = cell.dim();
    let mut flux = vec![0.0; d];
    for f in 0..2 * d {
        let (axis, sign) = crate::element::face_axis_sign(f);
        for (x, w) in face_quadrature(cell, f, 4) {
            flux[axis] += sign * w * g(&x);
        }
    }
    max_of(flux.into_iter().map(f64::abs))
}

/// `max_i |∫_{∂K} p1 (φ - Π¹_K φ) n_i ds|` for `φ` in the vertex span.
pub fn vertex_boundary_residual(cell: &Cell, p1: &Polynomial, vertex_coeffs: &[f64]) -> f64 {
    let mut coeffs = vertex_coeffs.to_vec();
    coeffs.resize(n_local_dofs(cell.dim()), 0.0);
    let phi = LocalFunction::new(cell.clone(), coeffs);
    let q1 = local_q1_interpolate(cell, &phi);
    boundary_flux(cell, |x| p1.value(x) * (phi.value(x) - q1.value(x)))
}

/// `max_i |∫_{∂K} ψ n_i ds|` for `ψ` in the face span.
pub fn face_boundary_residual(cell: &Cell, face_coeffs: &[f64]) -> f64 {
    let mut coeffs = vec![0.0; n_vertex_dofs(cell.dim())];
    coeffs.extend_from_slice(face_coeffs);
    let psi = LocalFunction::new(cell.clone(), coeffs);
    boundary_flux(cell, |x| psi.value(x))
}

/// Two cells sharing a full face orthogonal to `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub axis: usize,
    /// Centre of the shared face.
    pub face_center: Vec<f64>,
    /// Half-lengths of the shared face along the other axes, in axis order.
    pub cross_half_lengths: Vec<f64>,
    /// Half-lengths of the left and right cells along `axis`.
    pub h_left: f64,
    pub h_right: f64,
}

impl PatchSpec {
    pub fn dim(&self) -> usize {
        self.face_center.len()
    }

    pub fn cells(&self) -> Result<(Cell, Cell)> {
        let d = self.dim();
        if self.axis >= d || self.cross_half_lengths.len() + 1 != d {
            return Err(Error::InvalidArgument("inconsistent patch geometry".into()));
        }
        let make = |h: f64, shift: f64| {
            let mut halves = self.cross_half_lengths.clone();
            halves.insert(self.axis, h);
            let mut center = self.face_center.clone();
            center[self.axis] += shift;
            Cell::new(center, halves)
        };
        Ok((make(self.h_left, -self.h_left)?, make(self.h_right, self.h_right)?))
    }

    pub fn is_uniform(&self) -> bool {
        (self.h_left - self.h_right).abs() <= 1e-10 * self.h_left.max(self.h_right)
    }
}

/// `max_i |∫_{∂ω_f} p1 ψ n_i ds|` for the patch function `ψ` of the shared
/// face, together with the sum of the absolute per-face contributions.
///
/// `ψ` is the global face basis function: `q` of the `+` face on the left
/// cell and minus `q` of the `-` face on the right cell. It vanishes on the
/// shared face, so summing both cell boundaries gives the patch boundary.
pub fn patch_residual(patch: &PatchSpec, p1: &Polynomial) -> Result<(f64, f64)> {
    let (left, right) = patch.cells()?;
    let d = patch.dim();
    let nv = n_vertex_dofs(d);
    let mut flux = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for (cell, local_face, coeff) in [(left, 2 * patch.axis, 1.0), (right, 2 * patch.axis + 1, -1.0)] {
        let psi = {
            let mut c = vec![0.0; n_local_dofs(d)];
            c[nv + local_face] = coeff;
            LocalFunction::new(cell.clone(), c)
        };
        for f in 0..2 * d {
            let (axis, sign) = crate::element::face_axis_sign(f);
            let part: f64 = face_quadrature(&cell, f, 4)
                .iter()
                .map(|(x, w)| sign * w * p1.value(x) * psi.value(x))
                .sum();
            flux[axis] += part;
            scale[axis] += part.abs();
        }
    }
    Ok((max_of(flux.into_iter().map(f64::abs)), max_of(scale)))
}

/// Random affine `p1` on a fixed patch; the residual is the worst trial.
pub fn check_patch_orthogonality(patch: &PatchSpec, trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = patch.dim();
    let polys: Vec<Polynomial> = (0..trials.max(1)).map(|_| random_affine(&mut rng, d)).collect();
    let mut worst: f64 = 0.0;
    for p in &polys {
        worst = worst.max(patch_residual(patch, p)?.0);
    }
    let lemma = if patch.is_uniform() { "patch_uniform" } else { "patch_nonuniform" };
    Ok(LemmaReport::new(lemma, d, trials, seed, IDENTITY_TOL, worst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    /// `max_{i≠j} |(∇q_i, ∇q_j)| / (‖∇q_i‖² + ‖∇q_j‖²)` over face basis pairs.
    pub pairwise: f64,
    /// `max |(∇φ, ∇ψ)| / (‖∇φ‖² + ‖∇ψ‖²)` over `φ` in the vertex span and
    /// `ψ` in the face span.
    pub cross: f64,
}

impl Theta {
    pub fn max(&self) -> f64 {
        self.pairwise.max(self.cross)
    }
}

/// `B^{±1/2}` restricted to eigenvalues above `rtol * λ_max`.
fn sym_inv_sqrt(m: DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let eig = m.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let n = eig.eigenvalues.len();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > rtol * lmax {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l.sqrt();
        }
    }
    out
}

pub fn compute_theta(cell: &Cell) -> Theta {
    theta_from_stiffness(cell.dim(), &local_stiffness(cell))
}

fn theta_from_stiffness(d: usize, a: &DMatrix<f64>) -> Theta {
    let nv = n_vertex_dofs(d);
    let nf = 2 * d;
    let mut pairwise: f64 = 0.0;
    for i in 0..nf {
        for j in 0..nf {
            if i != j {
                let (ii, jj) = (nv + i, nv + j);
                pairwise = pairwise.max(a[(ii, jj)].abs() / (a[(ii, ii)] + a[(jj, jj)]));
            }
        }
    }
    // max t|φBψ| / (t² φAφ + ψCψ) over t is |φBψ| / (2 sqrt(φAφ ψCψ))
    let gxx = a.view((0, 0), (nv, nv)).into_owned();
    let gxf = a.view((0, nv), (nv, nf)).into_owned();
    let gff = a.view((nv, nv), (nf, nf)).into_owned();
    let m = sym_inv_sqrt(gxx, 1e-12) * gxf * sym_inv_sqrt(gff, 1e-12);
    let cross = 0.5 * m.singular_values().max();
    Theta { pairwise, cross }
}

/// Per-cell slack `‖∇v‖² - (1 - 2θ̂_K)(‖∇v_X‖² + ‖∇v_F‖²)` for random
/// functions on `mesh`; the residual is the most negative slack (zero if
/// none is negative).
pub fn check_stable_decomposition(mesh: &TensorMesh, trials: usize, seed: u64) -> LemmaReport {
    let (min_slack, _) = stable_decomposition_slack(mesh, trials, seed);
    LemmaReport::new(
        "stable_decomposition",
        mesh.dim(),
        trials,
        seed,
        IDENTITY_TOL,
        (-min_slack).max(0.0),
    )
}

/// Smallest per-cell slack and smallest global slack (using the largest
/// per-cell θ̂) over all trials.
pub fn stable_decomposition_slack(mesh: &TensorMesh, trials: usize, seed: u64) -> (f64, f64) {
    let dofmap = Arc::new(DofMap::new(mesh.clone()));
    let thetas: Vec<f64> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| compute_theta(&mesh.cell_at(c)).max())
        .collect();
    let theta_max = max_of(thetas.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let funs: Vec<FeFunction> = (0..trials)
        .map(|_| {
            let c = (0..dofmap.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            FeFunction::new(Arc::clone(&dofmap), c).expect("length matches")
        })
        .collect();
    let mut min_cell = f64::INFINITY;
    let mut min_global = f64::INFINITY;
    for v in &funs {
        let dec = decompose(v);
        let (ev, ex, ef) = (cell_energies(v), cell_energies(&dec.vertex), cell_energies(&dec.face));
        for c in 0..ev.len() {
            min_cell = min_cell.min(ev[c] - (1.0 - 2.0 * thetas[c]) * (ex[c] + ef[c]));
        }
        let total = |e: &[f64]| e.iter().sum::<f64>();
        min_global = min_global.min(total(&ev) - (1.0 - 2.0 * theta_max) * (total(&ex) + total(&ef)));
    }
    (min_cell, min_global)
}

/// Largest normalised consistency functionals over the vertex and face
/// basis functions of `V_h0`.
///
/// `raw` is `|a_h(u, φ) - (f, φ)| / |φ|_{1,h}`; `scaled` further divides by
/// `|supp φ|^{1/2}`, which removes the `h^{d/2}` factor that the support size
/// contributes and leaves the `h`-power of the consistency estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyProbe {
    pub max_x: f64,
    pub max_f: f64,
    pub max_x_scaled: f64,
    pub max_f_scaled: f64,
}

pub fn consistency_probe(dofmap: &DofMap, problem: &ManufacturedProblem) -> ConsistencyProbe {
    let mesh = dofmap.mesh();
    let d = mesh.dim();
    let n = n_local_dofs(d);
    let u = problem.u();
    let f = problem.f();
    let rule = QuadratureRule::tensor(d, DEFAULT_VOLUME_POINTS);
    let locals: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cell = mesh.cell_at(c);
            let mut vals = vec![0.0; n];
            let mut grads = vec![0.0; n * d];
            let mut x = vec![0.0; d];
            let mut gu = vec![0.0; d];
            let mut au = vec![0.0; n];
            for (xi, w) in rule.iter() {
                tabulate(&cell, xi, &mut vals, &mut grads);
                cell.to_physical_into(xi, &mut x);
                u.gradient(&x, &mut gu);
                let wq = w * cell.jacobian();
                for r in 0..n {
                    au[r] += wq * (0..d).map(|j| gu[j] * grads[r * d + j]).sum::<f64>();
                }
            }
            let fl = local_load(&cell, &f, DEFAULT_VOLUME_POINTS);
            let residual: Vec<f64> = au.iter().zip(&fl).map(|(a, b)| a - b).collect();
            let stiff = local_stiffness(&cell);
            let diag = (0..n).map(|r| stiff[(r, r)]).collect();
            (residual, diag, cell.volume())
        })
        .collect();
    let total = dofmap.n_dofs();
    let mut residual = vec![0.0; total];
    let mut energy = vec![0.0; total];
    let mut support = vec![0.0; total];
    for (c, (res, diag, vol)) in locals.iter().enumerate() {
        for (r, &(g, s)) in dofmap.cell_dofs(c).iter().enumerate() {
            residual[g] += s * res[r];
            energy[g] += diag[r];
            support[g] += vol;
        }
    }
    let mut fixed = vec![false; total];
    for &g in dofmap.boundary_vertex_dofs() {
        fixed[g] = true;
    }
    let mut probe = ConsistencyProbe {
        max_x: 0.0,
        max_f: 0.0,
        max_x_scaled: 0.0,
        max_f_scaled: 0.0,
    };
    for g in (0..total).filter(|&g| !fixed[g]) {
        let e = residual[g].abs() / energy[g].sqrt();
        let es = e / support[g].sqrt();
        if dofmap.is_vertex_dof(g) {
            probe.max_x = probe.max_x.max(e);
            probe.max_x_scaled = probe.max_x_scaled.max(es);
        } else {
            probe.max_f = probe.max_f.max(e);
            probe.max_f_scaled = probe.max_f_scaled.max(es);
        }
    }
    probe
}

// Cell-level checks over random cells, as run by `verify`.

fn random_cells(dim: usize, trials: usize, seed: u64) -> (ChaCha8Rng, Vec<Cell>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = (0..trials).map(|_| random_cell(&mut rng, dim)).collect();
    (rng, cells)
}

/// `max |D_r(φ_s) - δ_rs|` over random cells.
pub fn check_unisolvence(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (_, cells) = random_cells(dim, trials, seed);
    let n = n_local_dofs(dim);
    let worst = max_of(
        cells
            .par_iter()
            .map(|c| (dof_basis_matrix(c) - DMatrix::<f64>::identity(n, n)).abs().max())
            .collect::<Vec<_>>(),
    );
    LemmaReport::new("unisolvence", dim, trials, seed, IDENTITY_TOL, worst)
}

pub fn check_vertex_boundary(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (mut rng, cells) = random_cells(dim, trials, seed);
    let worst = max_of(cells.iter().map(|cell| {
        let p1 = random_affine(&mut rng, dim);
        let phi: Vec<f64> = (0..n_vertex_dofs(dim)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        vertex_boundary_residual(cell, &p1, &phi)
    }));
    LemmaReport::new("boundary_vertex_class", dim, trials, seed, IDENTITY_TOL, worst)
}

pub fn check_face_boundary(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (mut rng, cells) = random_cells(dim, trials, seed);
    let worst = max_of(cells.iter().map(|cell| {
        let psi: Vec<f64> = (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        face_boundary_residual(cell, &psi)
    }));
    LemmaReport::new("boundary_face_class", dim, trials, seed, IDENTITY_TOL, worst)
}

/// Random uniform patches; each with one random affine `p1`.
pub fn check_uniform_patches(dim: usize, trials: usize, seed: u64) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let h = rng.gen_range(0.1..1.0);
        let patch = PatchSpec {
            axis: rng.gen_range(0..dim),
            face_center: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            cross_half_lengths: (1..dim).map(|_| rng.gen_range(0.1..1.0)).collect(),
            h_left: h,
            h_right: h,
        };
        worst = worst.max(patch_residual(&patch, &random_affine(&mut rng, dim))?.0);
    }
    Ok(LemmaReport::new("patch_uniform", dim, trials, seed, IDENTITY_TOL, worst))
}

/// `|θ_pairwise - 1/8|` on random cells.
pub fn check_theta_pairwise(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (_, cells) = random_cells(dim, trials, seed);
    let worst = max_of(cells.par_iter().map(|c| (compute_theta(c).pairwise - 0.125).abs()).collect::<Vec<_>>());
    LemmaReport::new("theta_pairwise", dim, trials, seed, IDENTITY_TOL, worst)
}

/// Largest `θ_cross` on random cells; passes when it stays below 1/2.
pub fn check_theta_cross(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (_, cells) = random_cells(dim, trials, seed);
    let worst = max_of(cells.par_iter().map(|c| compute_theta(c).cross).collect::<Vec<_>>());
    let mut report = LemmaReport::new("theta_cross", dim, trials, seed, 0.5, worst);
    report.pass = worst < 0.5;
    report
}

/// Relative residual of the expansion identity over random (cubic `u`,
/// `v ∈ P_M`, cell) triples.
pub fn check_expansion(dim: usize, trials: usize, seed: u64) -> LemmaReport {
    let (mut rng, cells) = random_cells(dim, trials, seed);
    let worst = max_of(cells.iter().map(|cell| {
        let u = random_cubic(&mut rng, dim);
        let v: Vec<f64> = (0..n_local_dofs(dim)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        expansion_identity(cell, &u, &v, ExpansionForm::Exact).relative_residual()
    }));
    LemmaReport::new("expansion_identity", dim, trials, seed, EXPANSION_TOL, worst)
}

/// Interpolates a smooth field on a graded mesh and compares every cell's
/// own DOF functionals with the signed shared coefficients.
pub fn check_conformity(dofmap: &Arc<DofMap>, field: &(impl SmoothField + ?Sized)) -> f64 {
    let v = global_interpolate(dofmap, field);
    let mesh = dofmap.mesh();
    max_of(
        (0..mesh.n_cells())
            .into_par_iter()
            .map(|c| {
                let local = dof_functionals(&mesh.cell_at(c), field);
                max_of(v.local_coeffs(c).iter().zip(&local).map(|(a, b)| (a - b).abs()))
            })
            .collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Factor, Separable};
    use crate::mesh::{build_pattern, build_uniform};
    use nalgebra::DVector;

    #[test]
    fn boundary_lemmas_on_random_cells() {
        for d in 2..=4 {
            assert!(check_vertex_boundary(d, 20, 1).pass);
            assert!(check_face_boundary(d, 20, 2).pass);
        }
    }

    #[test]
    fn vertex_boundary_needs_q1_correction() {
        // without subtracting Π¹φ the flux of p1 φ does not vanish
        let cell = Cell::reference(2);
        let p1 = Polynomial::affine(0.0, &[1.0, 0.0]);
        let phi = LocalFunction::basis(cell.clone(), 0);
        assert!(boundary_flux(&cell, |x| p1.value(x) * phi.value(x)) > 0.1);
        assert!(vertex_boundary_residual(&cell, &p1, &[1.0, 0.0, 0.0, 0.0]) < 1e-15);
    }

    fn patch(h_left: f64, h_right: f64) -> PatchSpec {
        PatchSpec {
            axis: 0,
            face_center: vec![0.2, -0.3],
            cross_half_lengths: vec![0.7],
            h_left,
            h_right,
        }
    }

    #[test]
    fn uniform_patch_is_orthogonal() {
        let r = check_patch_orthogonality(&patch(0.5, 0.5), 50, 3).unwrap();
        assert!(r.pass, "{r:?}");
        for d in 2..=4 {
            assert!(check_uniform_patches(d, 20, 4).unwrap().pass);
        }
    }

    #[test]
    fn nonuniform_patch_is_not() {
        let p1 = Polynomial::affine(0.3, &[0.4, 1.0]);
        let (res, scale) = patch_residual(&patch(1.0, 2.0), &p1).unwrap();
        assert!(res > 1e-3 * scale, "{res} {scale}");
        // ∫_K ψ is -|K|h/6 on the left cell and +|K|h/6 on the right one, so the
        // x_2-flux is c_2 (|K_R| h_R - |K_L| h_L) / 6 = (5.6 * 2 - 2.8 * 1) / 6
        assert!((res - 1.4).abs() < 1e-12, "{res}");
        let c = Polynomial::constant(2, 2.5);
        assert!(patch_residual(&patch(1.0, 2.0), &c).unwrap().0 < 1e-12);
    }

    #[test]
    fn theta_values() {
        let t = compute_theta(&Cell::reference(2));
        assert!((t.pairwise - 0.125).abs() < 1e-14);
        assert!(t.cross > 0.0 && t.cross < 0.5);
        for d in 2..=4 {
            assert!(check_theta_pairwise(d, 10, 5).pass);
            assert!(check_theta_cross(d, 10, 6).pass);
        }
    }

    #[test]
    fn theta_cross_is_scale_invariant() {
        let cell = Cell::new(vec![0.1, 0.4, -0.2], vec![0.3, 0.15, 0.7]).unwrap();
        let a = compute_theta(&cell);
        let b = compute_theta(&cell.scaled(2.0));
        assert!((a.cross - b.cross).abs() < 1e-12);
        assert!((a.pairwise - b.pairwise).abs() < 1e-12);
    }

    #[test]
    fn theta_cross_matches_sampled_ratios() {
        // sampled pairs can never exceed the generalized-eigenvalue maximum
        let cell = Cell::new(vec![0.0, 0.0], vec![0.4, 0.9]).unwrap();
        let theta = compute_theta(&cell).cross;
        let a = local_stiffness(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut best: f64 = 0.0;
        for _ in 0..20000 {
            let mut phi = DVector::zeros(8);
            let mut psi = DVector::zeros(8);
            for k in 0..4 {
                phi[k] = rng.gen_range(-1.0..1.0);
                psi[4 + k] = rng.gen_range(-1.0..1.0);
            }
            let b = (phi.transpose() * &a * &psi)[(0, 0)];
            let ea = (phi.transpose() * &a * &phi)[(0, 0)];
            let ec = (psi.transpose() * &a * &psi)[(0, 0)];
            // optimal relative scaling of phi
            let t = (ec / ea).sqrt();
            best = best.max((t * b).abs() / (t * t * ea + ec));
        }
        assert!(best <= theta + 1e-12);
        assert!(best > 0.9 * theta, "{best} {theta}");
    }

    #[test]
    fn stable_decomposition_holds() {
        let m2 = build_uniform(&[(0.0, 1.0); 2], &[4, 4]).unwrap();
        let r = check_stable_decomposition(&m2, 20, 7);
        assert!(r.pass, "{r:?}");
        let (_, global) = stable_decomposition_slack(&m2, 10, 9);
        assert!(global >= -1e-12);
    }

    #[test]
    fn vertex_only_function_has_full_slack() {
        let mesh = build_uniform(&[(0.0, 1.0); 2], &[2, 2]).unwrap();
        let dm = Arc::new(DofMap::new(mesh.clone()));
        let mut v = FeFunction::zeros(Arc::clone(&dm));
        v.coeffs[4] = 1.0;
        let e = cell_energies(&v);
        let theta: Vec<f64> = (0..4).map(|c| compute_theta(&mesh.cell_at(c)).max()).collect();
        for c in 0..4 {
            let slack = e[c] - (1.0 - 2.0 * theta[c]) * e[c];
            assert!((slack - 2.0 * theta[c] * e[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_solution_has_no_consistency_error() {
        for d in 2..=3 {
            let mesh = build_pattern(&vec![(0.0, 1.0); d], &vec![vec![1.0, 4.0]; d], 2).unwrap();
            let p = ManufacturedProblem::by_name("linear", d).unwrap();
            let probe = consistency_probe(&DofMap::new(mesh), &p);
            assert!(probe.max_x <= 1e-10 && probe.max_f <= 1e-10, "{probe:?}");
        }
    }

    #[test]
    fn consistency_probe_is_translation_invariant() {
        let p = ManufacturedProblem::by_name("sinsin", 2).unwrap();
        let m = build_uniform(&[(0.0, 1.0); 2], &[4, 4]).unwrap();
        let a = consistency_probe(&DofMap::new(m), &p);
        // sin(π(x+2)) = sin(πx): shifting the mesh by 2 composes u with the shift
        let m = build_uniform(&[(2.0, 3.0), (2.0, 3.0)], &[4, 4]).unwrap();
        let b = consistency_probe(&DofMap::new(m), &p);
        assert!((a.max_f - b.max_f).abs() < 1e-10 * a.max_f.max(1e-300));
        assert!((a.max_x - b.max_x).abs() < 1e-10 * a.max_x.max(1e-300));
    }

    #[test]
    fn expansion_check_passes() {
        assert!(check_expansion(2, 20, 10).pass);
        assert!(check_expansion(3, 10, 11).pass);
    }

    #[test]
    fn conformity_detects_sign_faults() {
        let mesh = build_pattern(&[(0.0, 1.0); 2], &[vec![1.0, 4.0], vec![1.0, 2.0]], 2).unwrap();
        let field = Separable::new(vec![Factor::Sine { k: 1.3 }, Factor::Sine { k: 0.7 }]);
        let good = Arc::new(DofMap::new(mesh));
        assert!(check_conformity(&good, &field) < 1e-12);
        let bad = Arc::new(good.as_ref().clone().with_face_sign_fault());
        assert!(check_conformity(&bad, &field) > 1e-3);
    }

    #[test]
    fn unisolvence_check() {
        assert!(check_unisolvence(2, 10, 12).pass);
    }
}
