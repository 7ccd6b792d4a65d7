//! Tensor-product box meshes of a box domain in `R^d`.
//!
//! A mesh is the product of `d` axis partitions. Cells, vertices, and the
//! per-axis face grids are enumerated lexicographically by multi-index: the
//! first axis varies slowest. Faces are numbered axis-major: every face
//! normal to axis 0 first, then axis 1, and so on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when comparing cell widths.
const WIDTH_RTOL: f64 = 1e-10;

/// Strictly increasing breakpoints along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AxisPartition {
    breakpoints: Vec<f64>,
}

impl AxisPartition {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidMesh(format!(
                "an axis partition needs at least 2 breakpoints, got {}",
                breakpoints.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidMesh("non-finite breakpoint".into()));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMesh(format!(
                "breakpoints must be strictly increasing ({} >= {})",
                w[0], w[1]
            )));
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn n_cells(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn lo(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn hi(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Width of cell `k` along this axis.
    pub fn width(&self, k: usize) -> f64 {
        self.breakpoints[k + 1] - self.breakpoints[k]
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_width(&self) -> f64 {
        self.widths().fold(0.0, f64::max)
    }

    /// Index of the cell containing `x`; a point on a shared breakpoint goes
    /// to the cell with the smaller index.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * (self.hi() - self.lo());
        if x < self.lo() - tol || x > self.hi() + tol {
            return None;
        }
        let below = self.breakpoints.partition_point(|&b| b < x);
        Some(below.saturating_sub(1).min(self.n_cells() - 1))
    }
}

/// Row-major (last axis fastest) multi-index arithmetic over a box of
/// extents `dims`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexGrid {
    dims: Vec<usize>,
}

impl IndexGrid {
    pub fn new(dims: Vec<usize>) -> Self {
        Self { dims }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dims.len());
        multi
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi(&self, mut linear: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            out[axis] = linear % self.dims[axis];
            linear /= self.dims[axis];
        }
        out
    }
}

/// One d-rectangle `{ x_c + xi * h : xi in [-1, 1]^d }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    center: Vec<f64>,
    half_lengths: Vec<f64>,
}

impl Cell {
    pub fn new(center: Vec<f64>, half_lengths: Vec<f64>) -> Result<Self> {
        if center.is_empty() || center.len() != half_lengths.len() {
            return Err(Error::InvalidArgument(
                "cell center and half-lengths must have the same nonzero length".into(),
            ));
        }
        if half_lengths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "half-lengths must be positive, got {half_lengths:?}"
            )));
        }
        Ok(Self {
            center,
            half_lengths,
        })
    }

    /// The reference cell `[-1, 1]^dim`.
    pub fn reference(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            half_lengths: vec![1.0; dim],
        }
    }

    /// Cell spanning `[lo_j, hi_j]` along every axis.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let half = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        Self::new(center, half)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn half_lengths(&self) -> &[f64] {
        &self.half_lengths
    }

    pub fn volume(&self) -> f64 {
        self.half_lengths.iter().map(|h| 2.0 * h).product()
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.half_lengths
            .iter()
            .map(|h| 4.0 * h * h)
            .sum::<f64>()
            .sqrt()
    }

    /// Measure of a face normal to `axis`.
    pub fn face_measure(&self, axis: usize) -> f64 {
        self.volume() / (2.0 * self.half_lengths[axis])
    }

    /// Jacobian determinant of the map from `[-1,1]^d`.
    pub fn jacobian(&self) -> f64 {
        self.half_lengths.iter().product()
    }

    pub fn to_physical(&self, xi: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.to_physical_into(xi, &mut x);
        x
    }

    pub fn to_physical_into(&self, xi: &[f64], x: &mut [f64]) {
        for j in 0..self.dim() {
            x[j] = self.center[j] + xi[j] * self.half_lengths[j];
        }
    }

    pub fn to_reference(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| (x[j] - self.center[j]) / self.half_lengths[j])
            .collect()
    }

    /// Reference signs of local vertex `v`: axis `j` is `+1` when bit
    /// `d-1-j` of `v` is set, so vertices are lexicographic in their offsets.
    pub fn vertex_signs(&self, v: usize) -> Vec<f64> {
        vertex_signs(self.dim(), v)
    }

    pub fn vertex(&self, v: usize) -> Vec<f64> {
        self.to_physical(&self.vertex_signs(v))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        (0..self.dim()).all(|j| (x[j] - self.center[j]).abs() <= self.half_lengths[j] * (1.0 + tol))
    }

    /// Same shape translated and scaled about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center: self.center.iter().map(|c| c * factor).collect(),
            half_lengths: self.half_lengths.iter().map(|h| h * factor).collect(),
        }
    }
}

pub(crate) fn vertex_signs(dim: usize, v: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| if (v >> (dim - 1 - j)) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// One (d-1)-face: normal axis, breakpoint layer along that axis, and the
/// cell slot in the remaining axes (in increasing axis order).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaceId {
    pub axis: usize,
    pub layer: usize,
    pub cross_index: Vec<usize>,
}

impl FaceId {
    /// Full d-dimensional multi-index with `layer` inserted at `axis`.
    pub fn grid_index(&self) -> Vec<usize> {
        let mut idx = self.cross_index.clone();
        idx.insert(self.axis, self.layer);
        idx
    }

    pub fn from_grid_index(axis: usize, mut idx: Vec<usize>) -> Self {
        let layer = idx.remove(axis);
        Self {
            axis,
            layer,
            cross_index: idx,
        }
    }
}

impl std::fmt::Display for FaceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "face(axis={}, layer={}, cross={:?})",
            self.axis, self.layer, self.cross_index
        )
    }
}

/// Axis-aligned tensor-product partition of a box in `R^d`, `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMesh {
    partitions: Vec<AxisPartition>,
}

impl TensorMesh {
    pub fn new(partitions: Vec<AxisPartition>) -> Result<Self> {
        if partitions.len() < 2 {
            return Err(Error::InvalidMesh(format!(
                "dimension must be at least 2, got {}",
                partitions.len()
            )));
        }
        Ok(Self { partitions })
    }

    pub fn from_breakpoints(breakpoints: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            breakpoints
                .into_iter()
                .map(AxisPartition::new)
                .collect::<Result<_>>()?,
        )
    }

    pub fn dim(&self) -> usize {
        self.partitions.len()
    }

    pub fn partitions(&self) -> &[AxisPartition] {
        &self.partitions
    }

    pub fn partition(&self, axis: usize) -> &AxisPartition {
        &self.partitions[axis]
    }

    pub fn cells_per_axis(&self) -> Vec<usize> {
        self.partitions.iter().map(AxisPartition::n_cells).collect()
    }

    pub fn cell_grid(&self) -> IndexGrid {
        IndexGrid::new(self.cells_per_axis())
    }

    pub fn vertex_grid(&self) -> IndexGrid {
        IndexGrid::new(self.partitions.iter().map(|p| p.n_cells() + 1).collect())
    }

    /// Grid of faces normal to `axis` (extent `n_axis + 1` along `axis`).
    pub fn face_grid(&self, axis: usize) -> IndexGrid {
        let mut dims = self.cells_per_axis();
        dims[axis] += 1;
        IndexGrid::new(dims)
    }

    pub fn n_cells(&self) -> usize {
        self.cell_grid().len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_grid().len()
    }

    pub fn n_faces(&self) -> usize {
        (0..self.dim()).map(|j| self.face_grid(j).len()).sum()
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.partitions.iter().map(|p| (p.lo(), p.hi())).collect()
    }

    pub fn domain_volume(&self) -> f64 {
        self.partitions.iter().map(|p| p.hi() - p.lo()).product()
    }

    pub fn cell(&self, multi: &[usize]) -> Cell {
        let mut center = Vec::with_capacity(self.dim());
        let mut half = Vec::with_capacity(self.dim());
        for (p, &k) in self.partitions.iter().zip(multi) {
            let b = p.breakpoints();
            center.push(0.5 * (b[k] + b[k + 1]));
            half.push(0.5 * (b[k + 1] - b[k]));
        }
        Cell {
            center,
            half_lengths: half,
        }
    }

    pub fn cell_at(&self, linear: usize) -> Cell {
        self.cell(&self.cell_grid().multi(linear))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let grid = self.cell_grid();
        (0..grid.len()).map(move |c| self.cell(&grid.multi(c)))
    }

    pub fn vertex_coords(&self, multi: &[usize]) -> Vec<f64> {
        self.partitions
            .iter()
            .zip(multi)
            .map(|(p, &k)| p.breakpoints()[k])
            .collect()
    }

    /// All faces in global (axis-major, lexicographic) order.
    pub fn faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        (0..self.dim()).flat_map(move |axis| {
            let grid = self.face_grid(axis);
            (0..grid.len()).map(move |f| FaceId::from_grid_index(axis, grid.multi(f)))
        })
    }

    fn check_face(&self, face: &FaceId) -> Result<()> {
        let ok = face.axis < self.dim()
            && face.cross_index.len() + 1 == self.dim()
            && face.layer <= self.partitions[face.axis].n_cells()
            && face
                .grid_index()
                .iter()
                .zip(self.face_grid(face.axis).dims())
                .all(|(i, n)| i < n);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("{face} is not a face of this mesh")))
        }
    }

    pub fn is_interior(&self, face: &FaceId) -> bool {
        face.layer > 0 && face.layer < self.partitions[face.axis].n_cells()
    }

    /// Cells below and above `face` along its axis (either may be absent on
    /// the boundary).
    pub fn face_cells(&self, face: &FaceId) -> (Option<Vec<usize>>, Option<Vec<usize>>) {
        let n = self.partitions[face.axis].n_cells();
        let idx = face.grid_index();
        let lower = (face.layer > 0).then(|| {
            let mut m = idx.clone();
            m[face.axis] -= 1;
            m
        });
        let upper = (face.layer < n).then_some(idx);
        (lower, upper)
    }

    /// Whether the two cells sharing an interior face have equal measure.
    pub fn is_uniform_patch(&self, face: &FaceId) -> Result<bool> {
        self.check_face(face)?;
        if !self.is_interior(face) {
            return Err(Error::BoundaryFace(face.to_string()));
        }
        let p = &self.partitions[face.axis];
        let left = p.width(face.layer - 1);
        let right = p.width(face.layer);
        Ok((left - right).abs() <= WIDTH_RTOL * left.max(right))
    }

    /// Largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        self.partitions
            .iter()
            .map(|p| p.max_width().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest ratio of longest to shortest edge over all cells.
    pub fn max_aspect_ratio(&self) -> f64 {
        let grid = self.cell_grid();
        (0..grid.len())
            .map(|c| {
                let cell = self.cell(&grid.multi(c));
                let h = cell.half_lengths();
                let max = h.iter().cloned().fold(0.0, f64::max);
                let min = h.iter().cloned().fold(f64::INFINITY, f64::min);
                max / min
            })
            .fold(0.0, f64::max)
    }

    /// Multi-index of the cell containing `x`; points on shared faces go to
    /// the cell with the smaller index.
    pub fn locate(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dim() {
            return Err(Error::PointOutside(x.to_vec()));
        }
        self.partitions
            .iter()
            .zip(x)
            .map(|(p, &xi)| p.locate(xi).ok_or_else(|| Error::PointOutside(x.to_vec())))
            .collect()
    }
}

fn check_domain(domain: &[(f64, f64)]) -> Result<()> {
    for (j, &(lo, hi)) in domain.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidMesh(format!(
                "axis {j}: degenerate interval [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn equispaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 })
        .collect()
}

/// Equispaced mesh with `n[j]` cells along axis `j`.
pub fn build_uniform(domain: &[(f64, f64)], n: &[usize]) -> Result<TensorMesh> {
    check_domain(domain)?;
    if domain.len() != n.len() {
        return Err(Error::InvalidMesh("domain and cell counts differ in length".into()));
    }
    if let Some(j) = n.iter().position(|&k| k == 0) {
        return Err(Error::InvalidMesh(format!("axis {j}: zero cell count")));
    }
    TensorMesh::from_breakpoints(
        domain
            .iter()
            .zip(n)
            .map(|(&(lo, hi), &k)| equispaced(lo, hi, k))
            .collect(),
    )
}

/// Mesh that is uniform inside each block of a per-axis subdivision.
///
/// `splits[j]` are the interior block interfaces along axis `j`;
/// `counts[j]` has one cell count per block (`splits[j].len() + 1` entries).
pub fn build_divisionally_uniform(
    domain: &[(f64, f64)],
    splits: &[Vec<f64>],
    counts: &[Vec<usize>],
) -> Result<TensorMesh> {
    check_domain(domain)?;
    if splits.len() != domain.len() || counts.len() != domain.len() {
        return Err(Error::InvalidMesh(
            "splits and counts must be given for every axis".into(),
        ));
    }
    let mut breakpoints = Vec::with_capacity(domain.len());
    for (j, &(lo, hi)) in domain.iter().enumerate() {
        let s = &splits[j];
        if counts[j].len() != s.len() + 1 {
            return Err(Error::InvalidMesh(format!(
                "axis {j}: {} splits need {} block counts, got {}",
                s.len(),
                s.len() + 1,
                counts[j].len()
            )));
        }
        if counts[j].iter().any(|&c| c == 0) {
            return Err(Error::InvalidMesh(format!("axis {j}: zero per-block count")));
        }
        let mut edges = Vec::with_capacity(s.len() + 2);
        edges.push(lo);
        for &x in s {
            if !(x > lo && x < hi) || x <= *edges.last().unwrap() {
                return Err(Error::InvalidMesh(format!(
                    "axis {j}: split {x} not strictly inside ({lo}, {hi}) or not increasing"
                )));
            }
            edges.push(x);
        }
        edges.push(hi);
        let mut b = vec![lo];
        for (block, &c) in counts[j].iter().enumerate() {
            let pts = equispaced(edges[block], edges[block + 1], c);
            b.extend_from_slice(&pts[1..]);
        }
        breakpoints.push(b);
    }
    TensorMesh::from_breakpoints(breakpoints)
}

/// Shape-regular but non-uniform mesh: every axis repeats a weight pattern
/// `level` times (e.g. weights `1:4` give alternating narrow/wide cells).
pub fn build_pattern(domain: &[(f64, f64)], ratios: &[Vec<f64>], level: usize) -> Result<TensorMesh> {
    check_domain(domain)?;
    if ratios.len() != domain.len() {
        return Err(Error::InvalidMesh("a weight pattern is needed for every axis".into()));
    }
    if level == 0 {
        return Err(Error::InvalidMesh("pattern level must be at least 1".into()));
    }
    let mut breakpoints = Vec::with_capacity(domain.len());
    for (j, (&(lo, hi), w)) in domain.iter().zip(ratios).enumerate() {
        if w.is_empty() || w.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidMesh(format!(
                "axis {j}: pattern weights must be nonempty and positive"
            )));
        }
        let total: f64 = w.iter().sum::<f64>() * level as f64;
        let mut acc = 0.0;
        let mut b = vec![lo];
        let n = w.len() * level;
        for k in 0..n {
            acc += w[k % w.len()];
            b.push(if k + 1 == n { hi } else { lo + (hi - lo) * acc / total });
        }
        breakpoints.push(b);
    }
    TensorMesh::from_breakpoints(breakpoints)
}

/// Uniform mesh whose interior breakpoints are shifted by a seeded random
/// fraction of the spacing, `|shift| <= amplitude * spacing`, `amplitude < 0.5`.
pub fn build_jittered(domain: &[(f64, f64)], n: &[usize], amplitude: f64, seed: u64) -> Result<TensorMesh> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(Error::InvalidMesh(format!(
            "jitter amplitude must lie in [0, 0.5), got {amplitude}"
        )));
    }
    let base = build_uniform(domain, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let breakpoints = base
        .partitions()
        .iter()
        .map(|p| {
            let b = p.breakpoints();
            let n = b.len() - 1;
            let h = p.width(0);
            (0..=n)
                .map(|k| {
                    if k == 0 || k == n || amplitude == 0.0 {
                        b[k]
                    } else {
                        b[k] + rng.gen_range(-amplitude..amplitude) * h
                    }
                })
                .collect()
        })
        .collect();
    TensorMesh::from_breakpoints(breakpoints)
}

/// Mesh family parameters, as read from a JSON mesh document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum MeshFamily {
    Uniform { n: Vec<usize> },
    #[serde(alias = "divisionally_uniform")]
    Divisional {
        splits: Vec<Vec<f64>>,
        counts: Vec<Vec<usize>>,
    },
    Pattern { ratios: Vec<Vec<f64>>, level: usize },
    Jitter { n: Vec<usize>, amplitude: f64, seed: u64 },
    Explicit { breakpoints: Vec<Vec<f64>> },
}

/// `{ "dim": 2, "family": "uniform", "n": [8, 8], "domain": [[0,1],[0,1]] }`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[f64; 2]>>,
    #[serde(flatten)]
    pub family: MeshFamily,
}

impl MeshSpec {
    pub fn new(dim: usize, family: MeshFamily) -> Self {
        Self {
            dim,
            domain: None,
            family,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Explicit spec reproducing `mesh` exactly.
    pub fn explicit(mesh: &TensorMesh) -> Self {
        Self::new(
            mesh.dim(),
            MeshFamily::Explicit {
                breakpoints: mesh
                    .partitions()
                    .iter()
                    .map(|p| p.breakpoints().to_vec())
                    .collect(),
            },
        )
    }

    pub fn domain_box(&self) -> Vec<(f64, f64)> {
        match &self.domain {
            Some(d) => d.iter().map(|[a, b]| (*a, *b)).collect(),
            None => vec![(0.0, 1.0); self.dim],
        }
    }

    fn check_len<T>(&self, what: &str, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::InvalidMesh(format!(
                "{what} has {} entries for dim {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<TensorMesh> {
        let domain = self.domain_box();
        self.check_len("domain", &domain)?;
        match &self.family {
            MeshFamily::Uniform { n } => {
                self.check_len("n", n)?;
                build_uniform(&domain, n)
            }
            MeshFamily::Divisional { splits, counts } => {
                self.check_len("splits", splits)?;
                build_divisionally_uniform(&domain, splits, counts)
            }
            MeshFamily::Pattern { ratios, level } => {
                self.check_len("ratios", ratios)?;
                build_pattern(&domain, ratios, *level)
            }
            MeshFamily::Jitter { n, amplitude, seed } => {
                self.check_len("n", n)?;
                build_jittered(&domain, n, *amplitude, *seed)
            }
            MeshFamily::Explicit { breakpoints } => {
                self.check_len("breakpoints", breakpoints)?;
                let mesh = TensorMesh::from_breakpoints(breakpoints.clone())?;
                if self.domain.is_some() && mesh.domain() != domain {
                    return Err(Error::InvalidMesh(
                        "explicit breakpoints do not span the stated domain".into(),
                    ));
                }
                Ok(mesh)
            }
        }
    }

    /// The same family refined `2^steps` times along every axis.
    pub fn refined(&self, steps: u32) -> Result<Self> {
        let f = 1usize << steps;
        let family = match &self.family {
            MeshFamily::Uniform { n } => MeshFamily::Uniform {
                n: n.iter().map(|k| k * f).collect(),
            },
            MeshFamily::Divisional { splits, counts } => MeshFamily::Divisional {
                splits: splits.clone(),
                counts: counts
                    .iter()
                    .map(|c| c.iter().map(|k| k * f).collect())
                    .collect(),
            },
            MeshFamily::Pattern { ratios, level } => MeshFamily::Pattern {
                ratios: ratios.clone(),
                level: level * f,
            },
            MeshFamily::Jitter { n, amplitude, seed } => MeshFamily::Jitter {
                n: n.iter().map(|k| k * f).collect(),
                amplitude: *amplitude,
                seed: *seed,
            },
            MeshFamily::Explicit { .. } => {
                if steps == 0 {
                    self.family.clone()
                } else {
                    return Err(Error::InvalidMesh(
                        "explicit meshes cannot be refined into a family".into(),
                    ));
                }
            }
        };
        Ok(Self {
            dim: self.dim,
            domain: self.domain.clone(),
            family,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(d: usize) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); d]
    }

    #[test]
    fn uniform_counts() {
        let m = build_uniform(&unit(2), &[2, 2]).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices(), m.n_faces()), (4, 9, 12));
        for c in m.cells() {
            assert_eq!(c.half_lengths(), &[0.25, 0.25]);
        }
        let m = build_uniform(&unit(3), &[1, 1, 1]).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices(), m.n_faces()), (1, 8, 6));
    }

    #[test]
    fn uniform_rejects_bad_input() {
        assert!(build_uniform(&unit(2), &[0, 2]).is_err());
        assert!(build_uniform(&[(0.0, 1.0), (1.0, 1.0)], &[2, 2]).is_err());
        assert!(build_uniform(&unit(1), &[2]).is_err());
    }

    #[test]
    fn divisional_spacings() {
        let d = &[(0.0, 1.0), (0.0, 1.0)];
        let m = build_divisionally_uniform(d, &[vec![0.3], vec![]], &[vec![3, 7], vec![4]]).unwrap();
        for w in m.partition(0).widths() {
            assert!((w - 0.1).abs() < 1e-14);
        }
        let m = build_divisionally_uniform(d, &[vec![0.25], vec![]], &[vec![1, 3], vec![4]]).unwrap();
        for w in m.partition(0).widths() {
            assert!((w - 0.25).abs() < 1e-14);
        }
        let m = build_divisionally_uniform(d, &[vec![0.3], vec![0.3]], &[vec![2, 2], vec![2, 2]]).unwrap();
        let w: Vec<f64> = m.partition(0).widths().collect();
        let expect = [0.15, 0.15, 0.35, 0.35];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        // the interface face (layer 2) is not a uniform patch, a block-interior one is
        let iface = FaceId { axis: 0, layer: 2, cross_index: vec![0] };
        assert!(!m.is_uniform_patch(&iface).unwrap());
        let inner = FaceId { axis: 0, layer: 1, cross_index: vec![3] };
        assert!(m.is_uniform_patch(&inner).unwrap());
    }

    #[test]
    fn divisional_rejects_bad_split() {
        let d = &[(0.0, 1.0), (0.0, 1.0)];
        assert!(build_divisionally_uniform(d, &[vec![1.3], vec![]], &[vec![1, 1], vec![1]]).is_err());
        assert!(build_divisionally_uniform(d, &[vec![0.3], vec![]], &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn pattern_breakpoints() {
        let d = &[(0.0, 1.0), (0.0, 1.0)];
        let r = vec![vec![1.0, 4.0], vec![1.0, 4.0]];
        let m = build_pattern(d, &r, 1).unwrap();
        assert_eq!(m.partition(0).breakpoints(), &[0.0, 0.2, 1.0]);
        let m = build_pattern(d, &r, 2).unwrap();
        let expect = [0.0, 0.1, 0.5, 0.6, 1.0];
        for (a, b) in m.partition(0).breakpoints().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let f = FaceId { axis: 0, layer: 1, cross_index: vec![0] };
        assert!(!m.is_uniform_patch(&f).unwrap());
        assert!(build_pattern(d, &[vec![1.0, 0.0], vec![1.0]], 1).is_err());
    }

    #[test]
    fn pattern_aspect_ratio_is_level_independent() {
        let r = vec![vec![1.0, 4.0], vec![1.0, 4.0]];
        for level in 1..=6 {
            let m = build_pattern(&unit(2), &r, level).unwrap();
            assert!((m.max_aspect_ratio() - 4.0).abs() < 1e-9, "level {level}");
        }
    }

    #[test]
    fn mesh_size_examples() {
        let m = build_uniform(&unit(2), &[2, 2]).unwrap();
        assert!((m.mesh_size() - 0.5f64.hypot(0.5)).abs() < 1e-15);
        let m = build_uniform(&unit(2), &[4, 2]).unwrap();
        assert!((m.mesh_size() - 0.3125f64.sqrt()).abs() < 1e-15);
        let m = build_pattern(&unit(2), &[vec![1.0, 4.0], vec![1.0, 4.0]], 1).unwrap();
        assert!((m.mesh_size() - 0.8f64.hypot(0.8)).abs() < 1e-15);
    }

    #[test]
    fn uniform_patches_and_boundary_faces() {
        let m = build_uniform(&unit(3), &[3, 2, 4]).unwrap();
        for f in m.faces() {
            if m.is_interior(&f) {
                assert!(m.is_uniform_patch(&f).unwrap());
            } else {
                assert!(matches!(m.is_uniform_patch(&f), Err(Error::BoundaryFace(_))));
            }
        }
    }

    #[test]
    fn face_adjacency_counts() {
        let m = build_pattern(&unit(3), &vec![vec![1.0, 2.0]; 3], 2).unwrap();
        let mut touches = vec![0usize; m.n_cells()];
        let grid = m.cell_grid();
        for f in m.faces() {
            let (lo, hi) = m.face_cells(&f);
            let k = lo.iter().count() + hi.iter().count();
            assert_eq!(k, if m.is_interior(&f) { 2 } else { 1 });
            for c in lo.into_iter().chain(hi) {
                touches[grid.linear(&c)] += 1;
            }
        }
        assert!(touches.iter().all(|&t| t == 6));
    }

    #[test]
    fn volumes_sum_to_domain() {
        let m = build_jittered(&[(0.0, 2.0), (-1.0, 1.0), (0.0, 0.5)], &[5, 4, 3], 0.3, 7).unwrap();
        let v: f64 = m.cells().map(|c| c.volume()).sum();
        assert!((v - m.domain_volume()).abs() <= 1e-12 * m.domain_volume());
    }

    #[test]
    fn doubling_halves_half_lengths() {
        let spec = MeshSpec::new(2, MeshFamily::Uniform { n: vec![3, 5] });
        let a = spec.build().unwrap();
        let b = spec.refined(1).unwrap().build().unwrap();
        let ha = a.cell(&[0, 0]);
        for c in b.cells() {
            for j in 0..2 {
                assert!((c.half_lengths()[j] * 2.0 - ha.half_lengths()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn locate_prefers_smaller_index() {
        let m = build_uniform(&unit(2), &[4, 4]).unwrap();
        assert_eq!(m.locate(&[0.25, 0.0]).unwrap(), vec![0, 0]);
        assert_eq!(m.locate(&[0.26, 1.0]).unwrap(), vec![1, 3]);
        assert!(m.locate(&[1.1, 0.5]).is_err());
    }

    #[test]
    fn index_grid_is_lexicographic() {
        let g = IndexGrid::new(vec![2, 3, 4]);
        let mut prev: Option<Vec<usize>> = None;
        for l in 0..g.len() {
            let m = g.multi(l);
            assert_eq!(g.linear(&m), l);
            if let Some(p) = prev {
                assert!(p < m);
            }
            prev = Some(m);
        }
    }

    #[test]
    fn mesh_spec_json() {
        let text = r#"{ "dim": 2, "family": "divisional", "splits": [[0.3],[0.3]],
                        "counts": [[2,2],[2,2]], "domain": [[0,1],[0,1]] }"#;
        let spec = MeshSpec::from_json(text).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.cells_per_axis(), vec![4, 4]);
        let text = r#"{ "dim": 2, "family": "explicit", "breakpoints": [[0,0.5,1],[0,1]] }"#;
        let m = MeshSpec::from_json(text).unwrap().build().unwrap();
        assert_eq!(m.n_cells(), 2);
        let again = MeshSpec::from_json(&MeshSpec::explicit(&m).to_json().unwrap()).unwrap();
        assert_eq!(again.build().unwrap(), m);
        assert!(MeshSpec::from_json(r#"{ "dim": 3, "family": "uniform", "n": [2,2] }"#)
            .unwrap()
            .build()
            .is_err());
    }
}
