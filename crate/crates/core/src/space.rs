//! Global Morley spaces `V_h` and `V_h0` on a tensor mesh: DOF numbering
//! with face orientation signs, interpolation, assembly and constraints.
//!
//! Global numbering: vertex DOFs first, in lexicographic vertex order; then
//! face DOFs grouped by normal axis, each group lexicographic in the face
//! grid. A face DOF is the average of `∂v/∂x_axis`, i.e. of the normal
//! derivative for the positive axis direction. A cell sees it with sign
//! `+1` on its upper face along that axis and `-1` on its lower face.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::{
    self, face_normal_average, local_load, local_stiffness, n_local_dofs, n_vertex_dofs,
    LocalFunction, DEFAULT_FACE_POINTS, DEFAULT_VOLUME_POINTS,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, SmoothField};
use crate::mesh::{FaceId, MeshSpec, TensorMesh};
use crate::solver::CsrMatrix;

pub const DOF_ORDERING: &str = "vertex-major/axis-major-faces/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    mesh: TensorMesh,
    n_vertex_dofs: usize,
    n_face_dofs: usize,
    face_offsets: Vec<usize>,
    stride: usize,
    local_to_global: Vec<(usize, f64)>,
    boundary_vertex_dofs: Vec<usize>,
}

pub fn build_dof_map(mesh: &TensorMesh) -> DofMap {
    DofMap::new(mesh.clone())
}

impl DofMap {
    pub fn new(mesh: TensorMesh) -> Self {
        let d = mesh.dim();
        let n_vertex_dofs = mesh.n_vertices();
        let mut face_offsets = Vec::with_capacity(d);
        let mut acc = n_vertex_dofs;
        for axis in 0..d {
            face_offsets.push(acc);
            acc += mesh.face_grid(axis).len();
        }
        let n_face_dofs = acc - n_vertex_dofs;
        let stride = n_local_dofs(d);
        let cells = mesh.cell_grid();
        let vgrid = mesh.vertex_grid();
        let mut local_to_global = Vec::with_capacity(cells.len() * stride);
        for c in 0..cells.len() {
            let m = cells.multi(c);
            for v in 0..element::n_vertex_dofs(d) {
                let vm: Vec<usize> = (0..d).map(|j| m[j] + ((v >> (d - 1 - j)) & 1)).collect();
                local_to_global.push((vgrid.linear(&vm), 1.0));
            }
            for f in 0..2 * d {
                let (k, sign) = element::face_axis_sign(f);
                let mut idx = m.clone();
                if sign > 0.0 {
                    idx[k] += 1;
                }
                let g = face_offsets[k] + mesh.face_grid(k).linear(&idx);
                local_to_global.push((g, sign));
            }
        }
        let dims = vgrid.dims().to_vec();
        let boundary_vertex_dofs = (0..vgrid.len())
            .filter(|&g| {
                vgrid
                    .multi(g)
                    .iter()
                    .zip(&dims)
                    .any(|(&i, &n)| i == 0 || i + 1 == n)
            })
            .collect();
        Self {
            mesh,
            n_vertex_dofs,
            n_face_dofs,
            face_offsets,
            stride,
            local_to_global,
            boundary_vertex_dofs,
        }
    }

    /// A deliberately broken copy whose lower-face signs are `+1`; used to
    /// check that the conformity test catches orientation faults.
    pub fn with_face_sign_fault(mut self) -> Self {
        let nv = n_vertex_dofs(self.mesh.dim());
        for chunk in self.local_to_global.chunks_mut(self.stride) {
            for entry in &mut chunk[nv..] {
                entry.1 = 1.0;
            }
        }
        self
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn n_vertex_dofs(&self) -> usize {
        self.n_vertex_dofs
    }

    pub fn n_face_dofs(&self) -> usize {
        self.n_face_dofs
    }

    pub fn n_dofs(&self) -> usize {
        self.n_vertex_dofs + self.n_face_dofs
    }

    pub fn n_cells(&self) -> usize {
        self.local_to_global.len() / self.stride
    }

    /// `(global index, sign)` for each local basis function of cell `c`.
    pub fn cell_dofs(&self, c: usize) -> &[(usize, f64)] {
        &self.local_to_global[c * self.stride..(c + 1) * self.stride]
    }

    pub fn boundary_vertex_dofs(&self) -> &[usize] {
        &self.boundary_vertex_dofs
    }

    pub fn is_vertex_dof(&self, g: usize) -> bool {
        g < self.n_vertex_dofs
    }

    pub fn vertex_dof(&self, multi: &[usize]) -> usize {
        self.mesh.vertex_grid().linear(multi)
    }

    pub fn face_dof(&self, face: &FaceId) -> usize {
        self.face_offsets[face.axis] + self.mesh.face_grid(face.axis).linear(&face.grid_index())
    }

    /// The face carrying global DOF `g`, if `g` is a face DOF.
    pub fn face_of_dof(&self, g: usize) -> Option<FaceId> {
        if g < self.n_vertex_dofs || g >= self.n_dofs() {
            return None;
        }
        let axis = self.face_offsets.iter().rposition(|&o| o <= g)?;
        let idx = self.mesh.face_grid(axis).multi(g - self.face_offsets[axis]);
        Some(FaceId::from_grid_index(axis, idx))
    }
}

/// An element of `V_h`: vertex values, then positive-axis face averages of
/// the normal derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    dofmap: Arc<DofMap>,
    pub coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeFunctionDoc {
    mesh: MeshSpec,
    ordering: String,
    coefficients: Vec<f64>,
}

impl FeFunction {
    pub fn new(dofmap: Arc<DofMap>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != dofmap.n_dofs() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for {} DOFs",
                coeffs.len(),
                dofmap.n_dofs()
            )));
        }
        Ok(Self { dofmap, coeffs })
    }

    pub fn zeros(dofmap: Arc<DofMap>) -> Self {
        let n = dofmap.n_dofs();
        Self {
            dofmap,
            coeffs: vec![0.0; n],
        }
    }

    pub fn dofmap(&self) -> &Arc<DofMap> {
        &self.dofmap
    }

    pub fn mesh(&self) -> &TensorMesh {
        self.dofmap.mesh()
    }

    /// Coefficients of the restriction to cell `c` in the local basis.
    pub fn local_coeffs(&self, c: usize) -> Vec<f64> {
        self.dofmap
            .cell_dofs(c)
            .iter()
            .map(|&(g, s)| s * self.coeffs[g])
            .collect()
    }

    pub fn local_function(&self, c: usize) -> LocalFunction {
        LocalFunction::new(self.mesh().cell_at(c), self.local_coeffs(c))
    }

    /// `∂^deriv v(point)`, evaluated in the cell returned by mesh location.
    pub fn evaluate(&self, point: &[f64], deriv: &[usize]) -> Result<f64> {
        let multi = self.mesh().locate(point)?;
        let c = self.mesh().cell_grid().linear(&multi);
        let local = self.local_function(c);
        let idx = element::LocalBasisIndex::Vertex(0);
        // validates the derivative order
        element::eval_basis(&local.cell, idx, point, deriv)?;
        Ok(local.partial_at(point, deriv))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = FeFunctionDoc {
            mesh: MeshSpec::explicit(self.mesh()),
            ordering: DOF_ORDERING.to_string(),
            coefficients: self.coeffs.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FeFunctionDoc = serde_json::from_str(text)?;
        if doc.ordering != DOF_ORDERING {
            return Err(Error::InvalidArgument(format!(
                "unsupported DOF ordering {:?}",
                doc.ordering
            )));
        }
        let mesh = doc.mesh.build()?;
        Self::new(Arc::new(DofMap::new(mesh)), doc.coefficients)
    }
}

/// `Π_h field`: every global DOF functional evaluated once.
pub fn global_interpolate(dofmap: &Arc<DofMap>, field: &(impl SmoothField + ?Sized)) -> FeFunction {
    let mesh = dofmap.mesh();
    let vgrid = mesh.vertex_grid();
    let mut coeffs: Vec<f64> = (0..vgrid.len())
        .into_par_iter()
        .map(|g| field.value(&mesh.vertex_coords(&vgrid.multi(g))))
        .collect();
    let faces: Vec<FaceId> = mesh.faces().collect();
    let face_vals: Vec<f64> = faces
        .par_iter()
        .map(|face| {
            let (lower, upper) = mesh.face_cells(face);
            // the upper cell sees this face as its lower (-1) face
            match (upper, lower) {
                (Some(m), _) => -face_normal_average(&mesh.cell(&m), field, 2 * face.axis + 1, DEFAULT_FACE_POINTS),
                (None, Some(m)) => face_normal_average(&mesh.cell(&m), field, 2 * face.axis, DEFAULT_FACE_POINTS),
                (None, None) => unreachable!("every face has a neighbouring cell"),
            }
        })
        .collect();
    coeffs.extend(face_vals);
    FeFunction {
        dofmap: Arc::clone(dofmap),
        coeffs,
    }
}

/// Linear system over a subset of the global DOFs.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Global index of each unknown.
    pub free_dofs: Vec<usize>,
    pub n_global: usize,
}

impl SparseSystem {
    /// Scatters a vector of unknowns into a global coefficient vector (zero
    /// at eliminated DOFs).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_global];
        for (&g, &v) in self.free_dofs.iter().zip(x) {
            out[g] = v;
        }
        out
    }
}

/// Global stiffness matrix and load vector over all of `V_h`.
pub fn assemble(dofmap: &DofMap, f: &(impl ScalarField + ?Sized)) -> SparseSystem {
    assemble_with(dofmap, f, DEFAULT_VOLUME_POINTS)
}

pub fn assemble_with(dofmap: &DofMap, f: &(impl ScalarField + ?Sized), quad_points: usize) -> SparseSystem {
    let mesh = dofmap.mesh();
    let n = dofmap.n_dofs();
    let locals: Vec<_> = (0..dofmap.n_cells())
        .into_par_iter()
        .map(|c| {
            let cell = mesh.cell_at(c);
            (local_stiffness(&cell), local_load(&cell, f, quad_points))
        })
        .collect();
    let nl = n_local_dofs(dofmap.dim());
    let mut triplets = Vec::with_capacity(locals.len() * nl * nl);
    let mut rhs = vec![0.0; n];
    for (c, (a, b)) in locals.iter().enumerate() {
        let dofs = dofmap.cell_dofs(c);
        for (r, &(gr, sr)) in dofs.iter().enumerate() {
            rhs[gr] += sr * b[r];
            for (s, &(gs, ss)) in dofs.iter().enumerate() {
                triplets.push((gr, gs, sr * ss * a[(r, s)]));
            }
        }
    }
    SparseSystem {
        matrix: CsrMatrix::from_triplets(n, triplets),
        rhs,
        free_dofs: (0..n).collect(),
        n_global: n,
    }
}

/// Eliminates the boundary vertex DOFs (homogeneous data); every face DOF,
/// boundary faces included, stays an unknown.
pub fn apply_dirichlet(system: &SparseSystem, dofmap: &DofMap) -> SparseSystem {
    let mut fixed = vec![false; system.n_global];
    for &g in dofmap.boundary_vertex_dofs() {
        fixed[g] = true;
    }
    let keep: Vec<usize> = (0..system.free_dofs.len())
        .filter(|&i| !fixed[system.free_dofs[i]])
        .collect();
    SparseSystem {
        matrix: system.matrix.submatrix(&keep),
        rhs: keep.iter().map(|&i| system.rhs[i]).collect(),
        free_dofs: keep.iter().map(|&i| system.free_dofs[i]).collect(),
        n_global: system.n_global,
    }
}

/// `v = v_X + v_F`, with `v_F` further split face by face.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub vertex: FeFunction,
    pub face: FeFunction,
    /// One function per face DOF with a nonzero coefficient, keyed by global
    /// DOF index.
    pub per_face: BTreeMap<usize, FeFunction>,
}

pub fn decompose(v: &FeFunction) -> Decomposition {
    let nv = v.dofmap.n_vertex_dofs();
    let mut vertex = v.clone();
    vertex.coeffs[nv..].iter_mut().for_each(|c| *c = 0.0);
    let mut face = v.clone();
    face.coeffs[..nv].iter_mut().for_each(|c| *c = 0.0);
    let per_face = (nv..v.coeffs.len())
        .filter(|&g| v.coeffs[g] != 0.0)
        .map(|g| {
            let mut single = FeFunction::zeros(Arc::clone(&v.dofmap));
            single.coeffs[g] = v.coeffs[g];
            (g, single)
        })
        .collect();
    Decomposition {
        vertex,
        face,
        per_face,
    }
}

/// `|v|_{1,K}^2` for every cell, from the exact local stiffness matrix.
pub fn cell_energies(v: &FeFunction) -> Vec<f64> {
    (0..v.dofmap.n_cells())
        .into_par_iter()
        .map(|c| {
            let a = local_stiffness(&v.mesh().cell_at(c));
            let x = nalgebra::DVector::from_vec(v.local_coeffs(c));
            (x.transpose() * a * &x)[(0, 0)]
        })
        .collect()
}
