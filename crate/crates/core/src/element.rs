//! Cell-local mathematics of the d-rectangular Morley element.
//!
//! On a cell `K = { x_c + ξ h }` the shape space is
//! `Q_1(K) + span{x_i^2, x_i^3}` with `2^d + 2d` degrees of freedom: the
//! values at the vertices, followed by the averages of the outward normal
//! derivative over the faces `F_1, ..., F_{2d}`. Face `2k` (0-based) is the
//! `ξ_k = +1` face and face `2k + 1` the `ξ_k = -1` face.
//!
//! All basis formulas are evaluated in reference coordinates; derivatives
//! pick up a factor `1 / h_i` per differentiation in `x_i`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{Polynomial, ScalarField, SmoothField};
use crate::mesh::{vertex_signs, Cell};
use crate::quadrature::QuadratureRule;

/// Points per axis of the rule used for the local stiffness matrix.
pub const STIFFNESS_POINTS: usize = 3;
/// Default points per axis for loads and error integrals.
pub const DEFAULT_VOLUME_POINTS: usize = 5;
/// Default points per axis for face averages.
pub const DEFAULT_FACE_POINTS: usize = 4;

pub fn n_vertex_dofs(dim: usize) -> usize {
    1 << dim
}

pub fn n_local_dofs(dim: usize) -> usize {
    (1 << dim) + 2 * dim
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalBasisIndex {
    /// Vertex `i`, `0 <= i < 2^d`, lexicographic in the vertex offsets.
    Vertex(usize),
    /// Face `j`, `0 <= j < 2d`.
    Face(usize),
}

impl LocalBasisIndex {
    /// Position in the local DOF vector (vertices first).
    pub fn flat(self, dim: usize) -> usize {
        match self {
            Self::Vertex(i) => i,
            Self::Face(j) => n_vertex_dofs(dim) + j,
        }
    }

    pub fn from_flat(dim: usize, r: usize) -> Self {
        let nv = n_vertex_dofs(dim);
        if r < nv {
            Self::Vertex(r)
        } else {
            Self::Face(r - nv)
        }
    }

    fn check(self, dim: usize) -> Result<()> {
        match self {
            Self::Vertex(i) if i >= n_vertex_dofs(dim) => Err(Error::BasisIndex(i)),
            Self::Face(j) if j >= 2 * dim => Err(Error::BasisIndex(j)),
            _ => Ok(()),
        }
    }
}

/// Axis and outward orientation (`+1` / `-1`) of local face `f`.
pub fn face_axis_sign(f: usize) -> (usize, f64) {
    (f / 2, if f % 2 == 0 { 1.0 } else { -1.0 })
}

// c(t) = t^3 - t and the two face profiles g+(t) = (t+1)^2 (t-1), g-(t) = (t+1)(t-1)^2
fn cubic_c(t: f64, m: usize) -> f64 {
    match m {
        0 => t * t * t - t,
        1 => 3.0 * t * t - 1.0,
        2 => 6.0 * t,
        3 => 6.0,
        _ => 0.0,
    }
}

fn profile_plus(t: f64, m: usize) -> f64 {
    match m {
        0 => (t + 1.0) * (t + 1.0) * (t - 1.0),
        1 => 3.0 * t * t + 2.0 * t - 1.0,
        2 => 6.0 * t + 2.0,
        3 => 6.0,
        _ => 0.0,
    }
}

fn profile_minus(t: f64, m: usize) -> f64 {
    match m {
        0 => (t + 1.0) * (t - 1.0) * (t - 1.0),
        1 => 3.0 * t * t - 2.0 * t - 1.0,
        2 => 6.0 * t - 2.0,
        3 => 6.0,
        _ => 0.0,
    }
}

/// `∂^alpha φ_r` at reference point `xi`; `alpha` is a derivative order in
/// physical coordinates.
pub(crate) fn basis_partial_ref(cell: &Cell, r: usize, xi: &[f64], alpha: &[usize]) -> f64 {
    let d = cell.dim();
    let h = cell.half_lengths();
    let scale: f64 = alpha
        .iter()
        .zip(h)
        .map(|(&a, &hj)| hj.powi(-(a as i32)))
        .product();
    let support: Vec<usize> = (0..d).filter(|&j| alpha[j] > 0).collect();
    match LocalBasisIndex::from_flat(d, r) {
        LocalBasisIndex::Vertex(v) => {
            let s = vertex_signs(d, v);
            let product: f64 = (0..d)
                .map(|j| match alpha[j] {
                    0 => 1.0 + s[j] * xi[j],
                    1 => s[j],
                    _ => 0.0,
                })
                .product();
            let cubic = match support.as_slice() {
                [] => (0..d).map(|j| s[j] * cubic_c(xi[j], 0)).sum(),
                [j] => s[*j] * cubic_c(xi[*j], alpha[*j]),
                _ => 0.0,
            };
            scale * (2.0 * product - cubic) / 2f64.powi(d as i32 + 1)
        }
        LocalBasisIndex::Face(f) => {
            let (k, sign) = face_axis_sign(f);
            if support.iter().any(|&j| j != k) {
                return 0.0;
            }
            let m = alpha[k];
            let g = if sign > 0.0 {
                profile_plus(xi[k], m)
            } else {
                -profile_minus(xi[k], m)
            };
            scale * h[k] / 4.0 * g
        }
    }
}

/// Values and gradients of every local basis function at reference point
/// `xi`; `grads` is row-major `[n_local_dofs x d]`.
pub(crate) fn tabulate(cell: &Cell, xi: &[f64], vals: &mut [f64], grads: &mut [f64]) {
    let d = cell.dim();
    let h = cell.half_lengths();
    let nv = n_vertex_dofs(d);
    let norm = 1.0 / 2f64.powi(d as i32 + 1);
    let mut a = [0.0f64; 16];
    for v in 0..nv {
        let mut product = 1.0;
        let mut cubic = 0.0;
        for j in 0..d {
            let s = if (v >> (d - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 };
            a[j] = 1.0 + s * xi[j];
            product *= a[j];
            cubic += s * cubic_c(xi[j], 0);
        }
        vals[v] = norm * (2.0 * product - cubic);
        for j in 0..d {
            let s = if (v >> (d - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 };
            let others: f64 = (0..d).filter(|&m| m != j).map(|m| a[m]).product();
            grads[v * d + j] = norm * (2.0 * s * others - s * cubic_c(xi[j], 1)) / h[j];
        }
    }
    for f in 0..2 * d {
        let r = nv + f;
        let (k, sign) = face_axis_sign(f);
        let row = &mut grads[r * d..(r + 1) * d];
        row.iter_mut().for_each(|g| *g = 0.0);
        if sign > 0.0 {
            vals[r] = h[k] / 4.0 * profile_plus(xi[k], 0);
            row[k] = profile_plus(xi[k], 1) / 4.0;
        } else {
            vals[r] = -h[k] / 4.0 * profile_minus(xi[k], 0);
            row[k] = -profile_minus(xi[k], 1) / 4.0;
        }
    }
}

/// `∂^deriv` of basis function `idx` at physical point `point`.
pub fn eval_basis(cell: &Cell, idx: LocalBasisIndex, point: &[f64], deriv: &[usize]) -> Result<f64> {
    let d = cell.dim();
    idx.check(d)?;
    if deriv.len() != d {
        return Err(Error::InvalidArgument(format!(
            "derivative multi-index has {} entries for dim {d}",
            deriv.len()
        )));
    }
    let order: usize = deriv.iter().sum();
    if order > 3 {
        return Err(Error::DerivativeOrder(order));
    }
    let xi = cell.to_reference(point);
    Ok(basis_partial_ref(cell, idx.flat(d), &xi, deriv))
}

/// Physical quadrature points and weights on local face `f` of `cell`;
/// the weights sum to the face measure.
pub fn face_quadrature(cell: &Cell, f: usize, points_per_axis: usize) -> Vec<(Vec<f64>, f64)> {
    let d = cell.dim();
    let (k, sign) = face_axis_sign(f);
    let rule = QuadratureRule::tensor(d - 1, points_per_axis);
    let jac = cell.face_measure(k) / 2f64.powi(d as i32 - 1);
    rule.iter()
        .map(|(eta, w)| {
            let mut xi = Vec::with_capacity(d);
            xi.extend_from_slice(&eta[..k]);
            xi.push(sign);
            xi.extend_from_slice(&eta[k..]);
            (cell.to_physical(&xi), w * jac)
        })
        .collect()
}

/// Face-averaged outward normal derivative of `field` over local face `f`.
pub fn face_normal_average(cell: &Cell, field: &(impl SmoothField + ?Sized), f: usize, points_per_axis: usize) -> f64 {
    let (k, sign) = face_axis_sign(f);
    let mut grad = vec![0.0; cell.dim()];
    let total: f64 = face_quadrature(cell, f, points_per_axis)
        .iter()
        .map(|(x, w)| {
            field.gradient(x, &mut grad);
            w * grad[k]
        })
        .sum();
    sign * total / cell.face_measure(k)
}

/// The DOF vector `D(v)`: vertex values, then outward normal-derivative
/// face averages computed with a tensor Gauss rule of `face_points` per axis.
pub fn dof_functionals_with(cell: &Cell, field: &(impl SmoothField + ?Sized), face_points: usize) -> Vec<f64> {
    let d = cell.dim();
    let mut out = Vec::with_capacity(n_local_dofs(d));
    for v in 0..n_vertex_dofs(d) {
        out.push(field.value(&cell.vertex(v)));
    }
    for f in 0..2 * d {
        out.push(face_normal_average(cell, field, f, face_points));
    }
    out
}

pub fn dof_functionals(cell: &Cell, field: &(impl SmoothField + ?Sized)) -> Vec<f64> {
    dof_functionals_with(cell, field, DEFAULT_FACE_POINTS)
}

/// A member of `P_M(K)` given by its coefficients in the local basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFunction {
    pub cell: Cell,
    pub coeffs: Vec<f64>,
}

impl LocalFunction {
    pub fn new(cell: Cell, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), n_local_dofs(cell.dim()));
        Self { cell, coeffs }
    }

    /// Single basis function `φ_r`.
    pub fn basis(cell: Cell, r: usize) -> Self {
        let mut coeffs = vec![0.0; n_local_dofs(cell.dim())];
        coeffs[r] = 1.0;
        Self { cell, coeffs }
    }

    pub fn partial_at(&self, point: &[f64], alpha: &[usize]) -> f64 {
        let xi = self.cell.to_reference(point);
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(r, c)| c * basis_partial_ref(&self.cell, r, &xi, alpha))
            .sum()
    }
}

impl ScalarField for LocalFunction {
    fn value(&self, x: &[f64]) -> f64 {
        self.partial_at(x, &vec![0; self.cell.dim()])
    }
}

impl SmoothField for LocalFunction {
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let d = self.cell.dim();
        let mut alpha = vec![0; d];
        for j in 0..d {
            alpha[j] = 1;
            grad[j] = self.partial_at(x, &alpha);
            alpha[j] = 0;
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let d = self.cell.dim();
        let mut alpha = vec![0; d];
        (0..d)
            .map(|j| {
                alpha[j] = 2;
                let v = self.partial_at(x, &alpha);
                alpha[j] = 0;
                v
            })
            .sum()
    }

    fn partial(&self, x: &[f64], alpha: &[usize]) -> Option<f64> {
        Some(self.partial_at(x, alpha))
    }
}

/// `Π_K field`; by duality its coefficients are the DOF functionals.
pub fn local_interpolate(cell: &Cell, field: &(impl SmoothField + ?Sized)) -> LocalFunction {
    LocalFunction::new(cell.clone(), dof_functionals(cell, field))
}

/// Multilinear (`Q_1`) nodal interpolant on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Q1Interpolant {
    pub cell: Cell,
    pub vertex_values: Vec<f64>,
}

impl ScalarField for Q1Interpolant {
    fn value(&self, x: &[f64]) -> f64 {
        let d = self.cell.dim();
        let xi = self.cell.to_reference(x);
        self.vertex_values
            .iter()
            .enumerate()
            .map(|(v, val)| {
                let s = vertex_signs(d, v);
                val * (0..d).map(|j| 0.5 * (1.0 + s[j] * xi[j])).product::<f64>()
            })
            .sum()
    }
}

/// `Π¹_K field`.
pub fn local_q1_interpolate(cell: &Cell, field: &(impl ScalarField + ?Sized)) -> Q1Interpolant {
    Q1Interpolant {
        cell: cell.clone(),
        vertex_values: (0..n_vertex_dofs(cell.dim()))
            .map(|v| field.value(&cell.vertex(v)))
            .collect(),
    }
}

/// `(∇φ_r, ∇φ_s)_K` with a tensor Gauss rule of `points` per axis.
pub fn local_stiffness_with(cell: &Cell, points: usize) -> DMatrix<f64> {
    let d = cell.dim();
    let n = n_local_dofs(d);
    let rule = QuadratureRule::tensor(d, points);
    let jac = cell.jacobian();
    let mut vals = vec![0.0; n];
    let mut grads = vec![0.0; n * d];
    let mut a = DMatrix::zeros(n, n);
    for (xi, w) in rule.iter() {
        tabulate(cell, xi, &mut vals, &mut grads);
        let wq = w * jac;
        for r in 0..n {
            let gr = &grads[r * d..(r + 1) * d];
            for s in r..n {
                let gs = &grads[s * d..(s + 1) * d];
                let dot: f64 = gr.iter().zip(gs).map(|(x, y)| x * y).sum();
                a[(r, s)] += wq * dot;
            }
        }
    }
    for r in 0..n {
        for s in 0..r {
            a[(r, s)] = a[(s, r)];
        }
    }
    a
}

/// Local stiffness with the minimal exact rule (3 points per axis).
pub fn local_stiffness(cell: &Cell) -> DMatrix<f64> {
    local_stiffness_with(cell, STIFFNESS_POINTS)
}

/// `∫_K f φ_r dx` for every local basis function.
pub fn local_load(cell: &Cell, f: &(impl ScalarField + ?Sized), quad_points_per_axis: usize) -> Vec<f64> {
    let d = cell.dim();
    let n = n_local_dofs(d);
    let rule = QuadratureRule::tensor(d, quad_points_per_axis.max(1));
    let jac = cell.jacobian();
    let mut vals = vec![0.0; n];
    let mut grads = vec![0.0; n * d];
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; n];
    for (xi, w) in rule.iter() {
        tabulate(cell, xi, &mut vals, &mut grads);
        cell.to_physical_into(xi, &mut x);
        let fw = w * jac * f.value(&x);
        for r in 0..n {
            b[r] += fw * vals[r];
        }
    }
    b
}

/// Coefficient convention for the right-hand side of the cubic expansion
/// identity `(∇(u - Π_K u), ∇v)_K = Σ_{i≠j} [A_ij ∫ ∂_i∂_j²u ∂_i v + B_ij ∫ ∂_i∂_j²u ∂_i³ v]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionForm {
    /// `A_ij = -h_j²/3`, `B_ij = h_i² h_j²/45`; holds exactly.
    Exact,
    /// `A_ij = -h_i h_j/3`, `B_ij = 2 h_i³ h_j/45`, as usually quoted. Only
    /// the leading coefficient agrees with `Exact`, and only when `h_i = h_j`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionTerms {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs|` plus the absolute values of every right-hand-side term.
    pub scale: f64,
}

impl ExpansionTerms {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn relative_residual(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.residual() / self.scale
        }
    }
}

/// Both sides of the expansion identity for a cubic `u` and `v ∈ P_M(K)`.
pub fn expansion_identity(cell: &Cell, u: &Polynomial, v: &[f64], form: ExpansionForm) -> ExpansionTerms {
    let d = cell.dim();
    let n = n_local_dofs(d);
    let h = cell.half_lengths();
    let pi_u = dof_functionals(cell, u);
    // per-axis degree of every integrand is at most 6
    let rule = QuadratureRule::tensor(d, 4);
    let jac = cell.jacobian();
    let mut vals = vec![0.0; n];
    let mut grads = vec![0.0; n * d];
    let mut x = vec![0.0; d];
    let mut grad_u = vec![0.0; d];
    let mut lhs = 0.0;
    let mut terms = vec![0.0; 2 * d * d];
    let mut alpha = vec![0usize; d];
    for (xi, w) in rule.iter() {
        tabulate(cell, xi, &mut vals, &mut grads);
        cell.to_physical_into(xi, &mut x);
        u.gradient(&x, &mut grad_u);
        let wq = w * jac;
        for i in 0..d {
            let (mut dpi, mut dv) = (0.0, 0.0);
            for r in 0..n {
                dpi += pi_u[r] * grads[r * d + i];
                dv += v[r] * grads[r * d + i];
            }
            lhs += wq * (grad_u[i] - dpi) * dv;
            alpha[i] = 3;
            let d3v: f64 = (0..n)
                .filter(|&r| v[r] != 0.0)
                .map(|r| v[r] * basis_partial_ref(cell, r, xi, &alpha))
                .sum();
            alpha[i] = 0;
            for j in 0..d {
                if j == i {
                    continue;
                }
                alpha[i] += 1;
                alpha[j] += 2;
                let d3u = u.derivative(&x, &alpha);
                alpha[i] -= 1;
                alpha[j] -= 2;
                terms[2 * (i * d + j)] += wq * d3u * dv;
                terms[2 * (i * d + j) + 1] += wq * d3u * d3v;
            }
        }
    }
    let mut rhs = 0.0;
    let mut scale = lhs.abs();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let (a, b) = match form {
                ExpansionForm::Exact => (-h[j] * h[j] / 3.0, h[i] * h[i] * h[j] * h[j] / 45.0),
                ExpansionForm::AsPrinted => (-h[i] * h[j] / 3.0, 2.0 * h[i].powi(3) * h[j] / 45.0),
            };
            let t1 = a * terms[2 * (i * d + j)];
            let t2 = b * terms[2 * (i * d + j) + 1];
            rhs += t1 + t2;
            scale += t1.abs() + t2.abs();
        }
    }
    ExpansionTerms { lhs, rhs, scale }
}

/// `|LHS - RHS|` of the (exact) cubic expansion identity.
pub fn expansion_residual(cell: &Cell, u: &Polynomial, v: &[f64]) -> f64 {
    expansion_identity(cell, u, v, ExpansionForm::Exact).residual()
}

/// Matrix `[D_r(φ_s)]`; the identity when the element is unisolvent.
pub fn dof_basis_matrix(cell: &Cell) -> DMatrix<f64> {
    let n = n_local_dofs(cell.dim());
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        let phi = LocalFunction::basis(cell.clone(), s);
        for (r, val) in dof_functionals(cell, &phi).into_iter().enumerate() {
            m[(r, s)] = val;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(rng: &mut impl Rng, d: usize) -> Cell {
        Cell::new(
            (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..d).map(|_| rng.gen_range(0.05..1.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn vertex_basis_is_nodal() {
        for d in 2..=4 {
            let cell = Cell::new(vec![0.3; d], (1..=d).map(|k| 0.1 * k as f64).collect()).unwrap();
            for i in 0..n_vertex_dofs(d) {
                for j in 0..n_vertex_dofs(d) {
                    let v = eval_basis(&cell, LocalBasisIndex::Vertex(i), &cell.vertex(j), &vec![0; d]).unwrap();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-14);
                }
            }
            for f in 0..2 * d {
                for j in 0..n_vertex_dofs(d) {
                    let v = eval_basis(&cell, LocalBasisIndex::Face(f), &cell.vertex(j), &vec![0; d]).unwrap();
                    assert!(v.abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn eval_basis_rejects_bad_input() {
        let cell = Cell::reference(2);
        let p = [0.0, 0.0];
        assert!(matches!(
            eval_basis(&cell, LocalBasisIndex::Vertex(0), &p, &[2, 2]),
            Err(Error::DerivativeOrder(4))
        ));
        assert!(eval_basis(&cell, LocalBasisIndex::Vertex(4), &p, &[0, 0]).is_err());
        assert!(eval_basis(&cell, LocalBasisIndex::Face(4), &p, &[0, 0]).is_err());
        assert!(eval_basis(&cell, LocalBasisIndex::Face(3), &p, &[3, 0]).is_ok());
    }

    // Independent restatement of the vertex basis: Σ_i p_i summed over all
    // sign vectors, product and cubic parts separately.
    fn partition_of_unity_oracle(d: usize, xi: &[f64]) -> f64 {
        let mut product_sum = 0.0;
        let mut cubic_sum = 0.0;
        for v in 0..(1usize << d) {
            let s: Vec<f64> = (0..d).map(|j| if v & (1 << j) != 0 { 1.0 } else { -1.0 }).collect();
            product_sum += (0..d).map(|j| 1.0 + s[j] * xi[j]).product::<f64>();
            cubic_sum += (0..d).map(|j| s[j] * xi[j] * (xi[j] * xi[j] - 1.0)).sum::<f64>();
        }
        (2.0 * product_sum - cubic_sum) / 2f64.powi(d as i32 + 1)
    }

    #[test]
    fn vertex_basis_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..=4 {
            let cell = random_cell(&mut rng, d);
            assert!((partition_of_unity_oracle(d, &vec![0.0; d]) - 1.0).abs() < 1e-15);
            for _ in 0..20 {
                let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x = cell.to_physical(&xi);
                let s: f64 = (0..n_vertex_dofs(d))
                    .map(|i| eval_basis(&cell, LocalBasisIndex::Vertex(i), &x, &vec![0; d]).unwrap())
                    .sum();
                assert!((s - 1.0).abs() < 1e-13);
                assert!((partition_of_unity_oracle(d, &xi) - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn unisolvence_on_random_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 2..=4 {
            for _ in 0..5 {
                let cell = random_cell(&mut rng, d);
                let m = dof_basis_matrix(&cell);
                let err = (m - DMatrix::identity(n_local_dofs(d), n_local_dofs(d))).abs().max();
                assert!(err < 1e-12, "d={d} err={err}");
            }
        }
    }

    #[test]
    fn dof_functionals_of_simple_fields() {
        let d = 2;
        let cell = Cell::reference(d);
        let one = Polynomial::constant(d, 1.0);
        assert_eq!(dof_functionals(&cell, &one), vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        for k in 0..d {
            let mut c = vec![0.0; d];
            c[k] = 1.0;
            let xk = Polynomial::affine(0.0, &c);
            let dofs = dof_functionals(&cell, &xk);
            for v in 0..4 {
                assert_eq!(dofs[v], cell.vertex_signs(v)[k]);
            }
            for f in 0..2 * d {
                let expect = if f == 2 * k {
                    1.0
                } else if f == 2 * k + 1 {
                    -1.0
                } else {
                    0.0
                };
                assert!((dofs[4 + f] - expect).abs() < 1e-15, "k={k} f={f}");
            }
        }
    }

    #[test]
    fn interpolation_reproduces_shape_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 2..=3 {
            let cell = random_cell(&mut rng, d);
            let coeffs: Vec<f64> = (0..n_local_dofs(d)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = LocalFunction::new(cell.clone(), coeffs.clone());
            let pv = local_interpolate(&cell, &v);
            for (a, b) in pv.coeffs.iter().zip(&coeffs) {
                assert!((a - b).abs() < 1e-12);
            }
            // x_1^3 and x_1 x_2 both lie in P_M(K)
            for u in [
                Polynomial::monomial(1.0, {
                    let mut e = vec![0; d];
                    e[0] = 3;
                    e
                }),
                Polynomial::monomial(1.0, {
                    let mut e = vec![0; d];
                    e[0] = 1;
                    e[1] = 1;
                    e
                }),
            ] {
                let pu = local_interpolate(&cell, &u);
                for _ in 0..10 {
                    let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let x = cell.to_physical(&xi);
                    assert!((pu.value(&x) - u.value(&x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interpolation_residual_for_field_outside_shape_space() {
        // x1^2 x2 is not in P_M; compare Π_K with a least-squares fit that
        // matches the same DOFs: solve [D(φ_s)] c = D(u) with a dense solver.
        let cell = Cell::reference(2);
        let u = Polynomial::monomial(1.0, vec![2, 1]);
        let pu = local_interpolate(&cell, &u);
        let m = dof_basis_matrix(&cell);
        let rhs = nalgebra::DVector::from_vec(dof_functionals(&cell, &u));
        let fit = m.svd(true, true).solve(&rhs, 1e-14).unwrap();
        for (a, b) in fit.iter().zip(&pu.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
        let x = [0.3, -0.4];
        assert!((u.value(&x) - pu.value(&x)).abs() > 1e-3);
    }

    #[test]
    fn interpolation_is_a_projection() {
        let u = crate::field::Separable::sines(2);
        let cell = Cell::new(vec![0.4, 0.55], vec![0.1, 0.05]).unwrap();
        let once = local_interpolate(&cell, &u);
        let twice = local_interpolate(&cell, &once);
        for (a, b) in once.coeffs.iter().zip(&twice.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn q1_interpolant() {
        let cell = Cell::reference(2);
        let lin = Polynomial::affine(0.5, &[1.0, -2.0]);
        let q = local_q1_interpolate(&cell, &lin);
        assert!((q.value(&[0.2, 0.7]) - lin.value(&[0.2, 0.7])).abs() < 1e-15);
        let sq = Polynomial::monomial(1.0, vec![2, 0]);
        assert!((local_q1_interpolate(&cell, &sq).value(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        let p0 = LocalFunction::basis(cell.clone(), 0);
        let q = local_q1_interpolate(&cell, &p0);
        for v in 0..4 {
            let x = cell.vertex(v);
            assert!((q.value(&x) - p0.value(&x)).abs() < 1e-15);
        }
        assert!((q.value(&[0.3, 0.1]) - p0.value(&[0.3, 0.1])).abs() > 1e-3);
    }

    #[test]
    fn stiffness_reference_values() {
        let a = local_stiffness(&Cell::reference(2));
        let q1 = 4;
        assert!((a[(q1, q1)] - 8.0 / 15.0).abs() < 1e-14);
        let ratio = a[(q1, q1 + 1)].abs() / (a[(q1, q1)] + a[(q1 + 1, q1 + 1)]);
        assert!((ratio - 0.125).abs() < 1e-14);
        assert!(a[(q1, q1 + 2)].abs() < 1e-15);
    }

    #[test]
    fn stiffness_symmetric_with_constant_kernel_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in 2..=4 {
            let cell = random_cell(&mut rng, d);
            let a = local_stiffness(&cell);
            let n = n_local_dofs(d);
            let mut ones = nalgebra::DVector::zeros(n);
            for v in 0..n_vertex_dofs(d) {
                ones[v] = 1.0;
            }
            assert!((&a * &ones).abs().max() < 1e-12 * a.abs().max());
            assert!((&a - a.transpose()).abs().max() == 0.0);
            let a5 = local_stiffness_with(&cell, 5);
            assert!((&a - &a5).abs().max() <= 1e-13 * a.abs().max().max(1.0));
            // positive semidefinite with a one-dimensional kernel
            let eig = a.clone().symmetric_eigen();
            let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            ev.sort_by(f64::total_cmp);
            assert!(ev[0].abs() < 1e-12 * ev[n - 1]);
            assert!(ev[1] > 1e-8 * ev[n - 1]);
        }
    }

    #[test]
    fn load_vector_values() {
        let zero = |_: &[f64]| 0.0;
        assert!(local_load(&Cell::reference(2), &zero, 5).iter().all(|&b| b == 0.0));
        let one = |_: &[f64]| 1.0;
        for d in 2..=3 {
            let b = local_load(&Cell::reference(d), &one, 5);
            let vsum: f64 = b[..n_vertex_dofs(d)].iter().sum();
            assert!((vsum - 2f64.powi(d as i32)).abs() < 1e-13);
        }
        // ∫ q_1 over [-1,1]^d = (1/4)(-4/3) 2^(d-1)
        let b2 = local_load(&Cell::reference(2), &one, 5);
        assert!((b2[4] + 2.0 / 3.0).abs() < 1e-14);
        let b3 = local_load(&Cell::reference(3), &one, 5);
        assert!((b3[8] + 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps: f64 = 1e-6;
        for d in 2..=3 {
            let cell = random_cell(&mut rng, d);
            let n = n_local_dofs(d);
            let xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let mut vals = vec![0.0; n];
            let mut grads = vec![0.0; n * d];
            tabulate(&cell, &xi, &mut vals, &mut grads);
            let x = cell.to_physical(&xi);
            for r in 0..n {
                let phi = LocalFunction::basis(cell.clone(), r);
                assert!((phi.value(&x) - vals[r]).abs() < 1e-14);
                for j in 0..d {
                    let mut a = x.clone();
                    let mut b = x.clone();
                    a[j] += eps;
                    b[j] -= eps;
                    let fd = (phi.value(&a) - phi.value(&b)) / (2.0 * eps);
                    let scale = 1.0 + grads[r * d + j].abs();
                    assert!((fd - grads[r * d + j]).abs() < 1e-6 * scale, "r={r} j={j}");
                }
            }
        }
    }

    #[test]
    fn expansion_identity_examples() {
        let cell = Cell::reference(2);
        let v: Vec<f64> = (0..8).map(|k| (k as f64 * 0.37).sin()).collect();
        let u = Polynomial::monomial(1.0, vec![3, 0]);
        assert!(expansion_residual(&cell, &u, &v) < 1e-14);
        let u = Polynomial::monomial(1.0, vec![2, 1]);
        let t = expansion_identity(&cell, &u, &v, ExpansionForm::Exact);
        assert!(t.residual() < 1e-12, "{t:?}");
        assert!(t.lhs.abs() > 1e-3);
    }
}
