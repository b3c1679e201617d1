//! Spatial discretization: node sets, cell measures and the homogeneous
//! Neumann Laplacian.
//!
//! Intervals and rectangles use vertex-centred grids with trapezoid weights.
//! The disk is a staircase mask: the cell centres of a uniform Cartesian grid
//! that fall strictly inside the circle, each carrying the full cell area.
//!
//! The Laplacian `L` is assembled from a symmetric edge-based stiffness matrix
//! `K` with `K = -M L`, where `M` is the diagonal of cell measures. `L` itself
//! is symmetric only in the `M`-weighted inner product; `K` is symmetric and
//! positive semi-definite with the constants as its kernel.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("resolution too small: need at least 3 nodes per axis, got {0}")]
    ResolutionTooSmall(usize),
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("field belongs to a different domain")]
    DomainMismatch,
    #[error("field has {got} values but the domain has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field value at node {node} is not finite")]
    NonFinite { node: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Interval {
        start: f64,
        end: f64,
        nodes: usize,
    },
    Rectangle {
        origin: [f64; 2],
        size: [f64; 2],
        nodes: [usize; 2],
    },
    /// `cells` is the number of grid cells across the diameter.
    Disk {
        center: [f64; 2],
        radius: f64,
        cells: usize,
    },
}

impl DomainSpec {
    pub fn unit_interval(nodes: usize) -> Self {
        DomainSpec::Interval {
            start: 0.0,
            end: 1.0,
            nodes,
        }
    }

    pub fn unit_square(nx: usize, ny: usize) -> Self {
        DomainSpec::Rectangle {
            origin: [0.0, 0.0],
            size: [1.0, 1.0],
            nodes: [nx, ny],
        }
    }

    /// Disk whose cell size is as close as possible to `cell_size`.
    pub fn disk_with_cell_size(center: [f64; 2], radius: f64, cell_size: f64) -> Self {
        let cells = ((2.0 * radius / cell_size).round() as usize).max(1);
        DomainSpec::Disk {
            center,
            radius,
            cells,
        }
    }

    /// Continuum measure of the domain (length or area).
    pub fn measure(&self) -> f64 {
        match self {
            DomainSpec::Interval { start, end, .. } => end - start,
            DomainSpec::Rectangle { size, .. } => size[0] * size[1],
            DomainSpec::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }

    fn validate(&self) -> Result<(), GridError> {
        let check_n = |n: usize| {
            if n < 3 {
                Err(GridError::ResolutionTooSmall(n))
            } else {
                Ok(())
            }
        };
        let check_len = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(GridError::InvalidExtent(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            DomainSpec::Interval { start, end, nodes } => {
                check_n(*nodes)?;
                check_len(end - start, "interval length")
            }
            DomainSpec::Rectangle { size, nodes, .. } => {
                check_n(nodes[0])?;
                check_n(nodes[1])?;
                check_len(size[0], "rectangle width")?;
                check_len(size[1], "rectangle height")
            }
            DomainSpec::Disk { radius, cells, .. } => {
                check_n(*cells)?;
                check_len(*radius, "disk radius")
            }
        }
    }
}

/// Compressed sparse row matrix over domain nodes.
///
/// Within each row the off-diagonal entries come first and the diagonal entry
/// is stored last, so that the product with a constant vector reproduces the
/// exact cancellation used to build zero-row-sum operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Build from per-row `(column, value)` lists, stored in the given order.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseOperator {
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        Self::from_rows(diag.iter().enumerate().map(|(i, &d)| vec![(i, d)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    /// `y = A x`, summing each row in storage order.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row(i).filter(|&(c, _)| c == i).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    /// Largest absolute row sum; a Gershgorin-type bound on the spectrum.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// One value per node of a specific [`DiscreteDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain_id: u64,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(dom: &DiscreteDomain, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != dom.len() {
            return Err(GridError::LengthMismatch {
                expected: dom.len(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node });
        }
        Ok(ScalarField {
            domain_id: dom.id(),
            values,
        })
    }

    pub fn constant(dom: &DiscreteDomain, value: f64) -> Self {
        assert!(value.is_finite());
        ScalarField {
            domain_id: dom.id(),
            values: vec![value; dom.len()],
        }
    }

    pub fn from_fn(dom: &DiscreteDomain, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        Self::new(dom, dom.coords().iter().map(|&[x, y]| f(x, y)).collect())
    }

    pub fn domain_id(&self) -> u64 {
        self.domain_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First node attaining the minimum.
    pub fn argmin(&self) -> usize {
        let m = self.min();
        self.values.iter().position(|&v| v == m).unwrap_or(0)
    }

    /// First node attaining the maximum.
    pub fn argmax(&self) -> usize {
        let m = self.max();
        self.values.iter().position(|&v| v == m).unwrap_or(0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Pointwise map on the same domain; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ScalarField, GridError> {
        self.zip_map_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(
        &self,
        other: &ScalarField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ScalarField, GridError> {
        self.check_same(other)?;
        self.zip_map_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64, GridError> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn check_same(&self, other: &ScalarField) -> Result<(), GridError> {
        if self.domain_id != other.domain_id || self.values.len() != other.values.len() {
            Err(GridError::DomainMismatch)
        } else {
            Ok(())
        }
    }

    fn zip_map_values(&self, values: Vec<f64>) -> Result<ScalarField, GridError> {
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { node });
        }
        Ok(ScalarField {
            domain_id: self.domain_id,
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteDomain {
    spec: DomainSpec,
    dim: usize,
    spacing: [f64; 2],
    coords: Vec<[f64; 2]>,
    lattice: Vec<[usize; 2]>,
    cell: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    boundary: Vec<bool>,
    laplacian: SparseOperator,
    stiffness: SparseOperator,
    id: u64,
}

impl DiscreteDomain {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    /// Spatial dimension, 1 or 2.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Lattice index `(i, j)` of each node; `j = 0` in one dimension.
    pub fn lattice_index(&self) -> &[[usize; 2]] {
        &self.lattice
    }

    pub fn cell_measures(&self) -> &[f64] {
        &self.cell
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    /// Largest grid spacing.
    pub fn mesh_size(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0].max(self.spacing[1])
        }
    }

    /// Sum of all cell measures.
    pub fn total_measure(&self) -> f64 {
        self.cell.iter().sum()
    }

    /// The Neumann Laplacian `L`.
    pub fn laplacian(&self) -> &SparseOperator {
        &self.laplacian
    }

    /// The symmetric positive semi-definite operator `K = -M L`.
    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    /// Node nearest to a point (first one on ties).
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in self.coords.iter().enumerate() {
            let d = (c[0] - x).powi(2) + (c[1] - y).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    /// Nodes within `radius` graph steps of `node`, including it.
    pub fn graph_ball(&self, node: usize, radius: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        dist[node] = 0;
        queue.push_back(node);
        while let Some(k) = queue.pop_front() {
            out.push(k);
            if dist[k] == radius {
                continue;
            }
            for &nb in &self.neighbors[k] {
                if dist[nb] == usize::MAX {
                    dist[nb] = dist[k] + 1;
                    queue.push_back(nb);
                }
            }
        }
        out
    }

    /// Graph distance from every node to the nearest node of `sources`
    /// (`usize::MAX` when there is none).
    fn distance_to(&self, sources: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for (k, d) in dist.iter_mut().enumerate() {
            if sources(k) {
                *d = 0;
                queue.push_back(k);
            }
        }
        while let Some(k) = queue.pop_front() {
            for &nb in &self.neighbors[k] {
                if dist[nb] == usize::MAX {
                    dist[nb] = dist[k] + 1;
                    queue.push_back(nb);
                }
            }
        }
        dist
    }

    /// Nodes of `mask` whose whole `cells`-step neighbourhood lies in `mask`.
    pub fn mask_interior(&self, mask: &[bool], cells: usize) -> Vec<bool> {
        let outside = self.distance_to(|k| !mask[k]);
        (0..self.len()).map(|k| mask[k] && outside[k] > cells).collect()
    }

    /// Nodes within `cells` steps of a node with the opposite mask value.
    pub fn mask_collar(&self, mask: &[bool], cells: usize) -> Vec<bool> {
        let to_false = self.distance_to(|k| !mask[k]);
        let to_true = self.distance_to(|k| mask[k]);
        (0..self.len())
            .map(|k| if mask[k] { to_false[k] <= cells } else { to_true[k] <= cells })
            .collect()
    }
}

pub fn build_domain(spec: &DomainSpec) -> Result<DiscreteDomain, GridError> {
    spec.validate()?;
    let mut coords = Vec::new();
    let mut lattice = Vec::new();
    let mut cell = Vec::new();
    // Undirected edges (a, b, coupling) with coupling = face length / spacing.
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let (dim, spacing, boundary);

    match *spec {
        DomainSpec::Interval { start, end, nodes } => {
            dim = 1;
            let h = (end - start) / (nodes - 1) as f64;
            spacing = [h, 0.0];
            for i in 0..nodes {
                let x = if i == nodes - 1 { end } else { start + i as f64 * h };
                coords.push([x, 0.0]);
                lattice.push([i, 0]);
                cell.push(if i == 0 || i == nodes - 1 { 0.5 * h } else { h });
                if i + 1 < nodes {
                    edges.push((i, i + 1, 1.0 / h));
                }
            }
            boundary = (0..nodes).map(|i| i == 0 || i == nodes - 1).collect::<Vec<_>>();
        }
        DomainSpec::Rectangle {
            origin,
            size,
            nodes,
        } => {
            dim = 2;
            let [nx, ny] = nodes;
            let hx = size[0] / (nx - 1) as f64;
            let hy = size[1] / (ny - 1) as f64;
            spacing = [hx, hy];
            let wx = |i: usize| if i == 0 || i == nx - 1 { 0.5 * hx } else { hx };
            let wy = |j: usize| if j == 0 || j == ny - 1 { 0.5 * hy } else { hy };
            let idx = |i: usize, j: usize| j * nx + i;
            let mut bnd = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                let y = if j == ny - 1 { origin[1] + size[1] } else { origin[1] + j as f64 * hy };
                for i in 0..nx {
                    let x = if i == nx - 1 { origin[0] + size[0] } else { origin[0] + i as f64 * hx };
                    coords.push([x, y]);
                    lattice.push([i, j]);
                    cell.push(wx(i) * wy(j));
                    bnd.push(i == 0 || j == 0 || i == nx - 1 || j == ny - 1);
                    if i + 1 < nx {
                        edges.push((idx(i, j), idx(i + 1, j), wy(j) / hx));
                    }
                    if j + 1 < ny {
                        edges.push((idx(i, j), idx(i, j + 1), wx(i) / hy));
                    }
                }
            }
            boundary = bnd;
        }
        DomainSpec::Disk {
            center,
            radius,
            cells,
        } => {
            dim = 2;
            let h = 2.0 * radius / cells as f64;
            spacing = [h, h];
            let lo = [center[0] - radius, center[1] - radius];
            let mut index = vec![usize::MAX; cells * cells];
            for j in 0..cells {
                let y = lo[1] + (j as f64 + 0.5) * h;
                for i in 0..cells {
                    let x = lo[0] + (i as f64 + 0.5) * h;
                    let (dx, dy) = (x - center[0], y - center[1]);
                    if dx * dx + dy * dy < radius * radius {
                        index[j * cells + i] = coords.len();
                        coords.push([x, y]);
                        lattice.push([i, j]);
                        cell.push(h * h);
                    }
                }
            }
            for (k, &[i, j]) in lattice.iter().enumerate() {
                if i + 1 < cells && index[j * cells + i + 1] != usize::MAX {
                    edges.push((k, index[j * cells + i + 1], 1.0));
                }
                if j + 1 < cells && index[(j + 1) * cells + i] != usize::MAX {
                    edges.push((k, index[(j + 1) * cells + i], 1.0));
                }
            }
            let mut degree = vec![0usize; coords.len()];
            for &(a, b, _) in &edges {
                degree[a] += 1;
                degree[b] += 1;
            }
            boundary = degree.iter().map(|&d| d < 4).collect();
        }
    }

    let n = coords.len();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &edges {
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    }
    for row in &mut adjacency {
        row.sort_by_key(|&(c, _)| c);
    }
    let neighbors: Vec<Vec<usize>> = adjacency
        .iter()
        .map(|row| row.iter().map(|&(c, _)| c).collect())
        .collect();
    if let Some(k) = neighbors.iter().position(Vec::is_empty) {
        return Err(GridError::InvalidExtent(format!(
            "node {k} has no neighbours; refine the grid"
        )));
    }

    let stiffness = zero_row_sum_operator(&adjacency, |_, w| -w);
    let laplacian = zero_row_sum_operator(&adjacency, |i, w| w / cell[i]);

    let mut hasher = DefaultHasher::new();
    format!("{spec:?}").hash(&mut hasher);
    n.hash(&mut hasher);
    let id = hasher.finish();

    Ok(DiscreteDomain {
        spec: spec.clone(),
        dim,
        spacing,
        coords,
        lattice,
        cell,
        neighbors,
        boundary,
        laplacian,
        stiffness,
        id,
    })
}

/// Rows `(off-diagonals..., diagonal)` with the diagonal equal to minus the
/// in-order sum of the off-diagonals.
fn zero_row_sum_operator(
    adjacency: &[Vec<(usize, f64)>],
    weight: impl Fn(usize, f64) -> f64,
) -> SparseOperator {
    let rows = adjacency
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut out: Vec<(usize, f64)> = row.iter().map(|&(c, w)| (c, weight(i, w))).collect();
            let mut sum = 0.0;
            for &(_, v) in &out {
                sum += v;
            }
            out.push((i, -sum));
            out
        })
        .collect();
    SparseOperator::from_rows(rows)
}

pub fn assemble_neumann_laplacian(dom: &DiscreteDomain) -> SparseOperator {
    dom.laplacian.clone()
}

pub fn integrate(dom: &DiscreteDomain, f: &ScalarField) -> Result<f64, GridError> {
    if f.domain_id() != dom.id() || f.len() != dom.len() {
        return Err(GridError::DomainMismatch);
    }
    Ok(weighted_sum(dom.cell_measures(), f.values()))
}

/// `sum_k w_k f_k`, in node order.
pub fn weighted_sum(weights: &[f64], f: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (w, v) in weights.iter().zip(f) {
        acc += w * v;
    }
    acc
}

/// Write `x,y,value` rows (`x,value` in one dimension) in node order.
pub fn write_field_csv<W: Write>(
    dom: &DiscreteDomain,
    values: &[f64],
    mut out: W,
) -> io::Result<()> {
    if dom.dim() == 1 {
        writeln!(out, "x,value")?;
        for (c, v) in dom.coords().iter().zip(values) {
            writeln!(out, "{:e},{:e}", c[0], v)?;
        }
    } else {
        writeln!(out, "x,y,value")?;
        for (c, v) in dom.coords().iter().zip(values) {
            writeln!(out, "{:e},{:e},{:e}", c[0], c[1], v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn interval_weights() {
        let dom = build_domain(&DomainSpec::unit_interval(5)).unwrap();
        assert_eq!(dom.spacing()[0], 0.25);
        assert_eq!(dom.cell_measures(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
        assert!(dom.is_boundary(0) && dom.is_boundary(4) && !dom.is_boundary(2));
    }

    #[test]
    fn square_node_count_and_measure() {
        let dom = build_domain(&DomainSpec::unit_square(4, 4)).unwrap();
        assert_eq!(dom.len(), 16);
        let one = ScalarField::constant(&dom, 1.0);
        assert!(close(integrate(&dom, &one).unwrap(), 1.0, 1e-15));
        // node ordering: x fastest
        assert_eq!(dom.lattice_index()[1], [1, 0]);
        assert_eq!(dom.lattice_index()[4], [0, 1]);
    }

    #[test]
    fn resolution_too_small() {
        assert_eq!(
            build_domain(&DomainSpec::unit_interval(2)).unwrap_err(),
            GridError::ResolutionTooSmall(2)
        );
        assert!(build_domain(&DomainSpec::Interval { start: 1.0, end: 0.0, nodes: 5 }).is_err());
        assert!(build_domain(&DomainSpec::Disk { center: [0.0, 0.0], radius: 1.0, cells: 2 }).is_err());
    }

    /// Brute-force count of cell centres inside the unit circle.
    fn count_inside(h: f64) -> usize {
        let n = (2.0 / h).round() as usize;
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let x = -1.0 + (i as f64 + 0.5) * h;
                let y = -1.0 + (j as f64 + 0.5) * h;
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn disk_node_count() {
        let dom = build_domain(&DomainSpec::disk_with_cell_size([0.0, 0.0], 1.0, 0.1)).unwrap();
        assert_eq!(dom.len(), count_inside(0.1));
        let expected = std::f64::consts::PI / 0.01;
        assert!((dom.len() as f64 - expected).abs() / expected < 0.05);
        for k in 0..dom.len() {
            assert!(!dom.neighbors(k).is_empty());
        }
    }

    #[test]
    fn disk_area_within_two_percent() {
        let dom = build_domain(&DomainSpec::disk_with_cell_size([0.0, 0.0], 1.0, 0.05)).unwrap();
        let one = ScalarField::constant(&dom, 1.0);
        let area = integrate(&dom, &one).unwrap();
        assert!(close(area, count_inside(0.05) as f64 * 0.0025, 1e-12));
        assert!((area - std::f64::consts::PI).abs() / std::f64::consts::PI < 0.02);
    }

    #[test]
    fn linear_function_integrates_exactly() {
        let dom = build_domain(&DomainSpec::unit_interval(101)).unwrap();
        let f = ScalarField::from_fn(&dom, |x, _| x).unwrap();
        assert!(close(integrate(&dom, &f).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn integrate_rejects_foreign_field() {
        let a = build_domain(&DomainSpec::unit_interval(5)).unwrap();
        let b = build_domain(&DomainSpec::unit_interval(7)).unwrap();
        let f = ScalarField::constant(&b, 1.0);
        assert_eq!(integrate(&a, &f), Err(GridError::DomainMismatch));
    }

    #[test]
    fn three_node_stencil() {
        let dom = build_domain(&DomainSpec::unit_interval(3)).unwrap();
        let h2 = 0.25;
        let l = dom.laplacian();
        assert_eq!(l.get(0, 0), -2.0 / h2);
        assert_eq!(l.get(0, 1), 2.0 / h2);
        assert_eq!(l.get(0, 2), 0.0);
        assert_eq!(l.get(1, 0), 1.0 / h2);
        assert_eq!(l.get(1, 1), -2.0 / h2);
        assert_eq!(l.get(1, 2), 1.0 / h2);
        assert_eq!(l.get(2, 1), 2.0 / h2);
    }

    fn all_domains() -> Vec<DiscreteDomain> {
        vec![
            build_domain(&DomainSpec::unit_interval(17)).unwrap(),
            build_domain(&DomainSpec::Rectangle { origin: [-1.0, 0.0], size: [2.0, 1.0], nodes: [9, 6] }).unwrap(),
            build_domain(&DomainSpec::disk_with_cell_size([0.0, 0.0], 1.0, 0.2)).unwrap(),
        ]
    }

    #[test]
    fn constants_in_kernel_and_zero_row_sums() {
        for dom in all_domains() {
            let ones = vec![1.0; dom.len()];
            assert!(dom.laplacian().mul(&ones).iter().all(|&v| v == 0.0));
            assert!(dom.stiffness().mul(&ones).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn discrete_divergence_theorem_and_symmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for dom in all_domains() {
            let m = dom.cell_measures();
            for _ in 0..5 {
                let f: Vec<f64> = (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g: Vec<f64> = (0..dom.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lf = dom.laplacian().mul(&f);
                let lg = dom.laplacian().mul(&g);
                let scale: f64 = lf.iter().map(|v| v.abs()).sum::<f64>() * m[0].max(1e-300);
                assert!(weighted_sum(m, &lf).abs() <= 1e-12 * scale.max(1.0));
                let a: f64 = (0..dom.len()).map(|k| m[k] * lf[k] * g[k]).sum();
                let b: f64 = (0..dom.len()).map(|k| m[k] * f[k] * lg[k]).sum();
                assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "{a} vs {b}");
            }
            let k = dom.stiffness();
            for i in 0..dom.len() {
                for (j, v) in k.row(i) {
                    assert_eq!(v, k.get(j, i));
                }
            }
        }
    }

    #[test]
    fn quadratic_is_reproduced_in_the_interior() {
        let dom = build_domain(&DomainSpec::Rectangle { origin: [-1.0, -1.0], size: [2.0, 2.0], nodes: [41, 41] }).unwrap();
        let f: Vec<f64> = dom.coords().iter().map(|c| c[0] * c[0] + c[1] * c[1]).collect();
        let lf = dom.laplacian().mul(&f);
        for (k, v) in lf.iter().enumerate() {
            if !dom.is_boundary(k) {
                assert!((v - 4.0).abs() < 1e-9, "{v}");
            }
        }
    }

    fn interior_error(n: usize) -> f64 {
        let dom = build_domain(&DomainSpec::unit_square(n, n)).unwrap();
        let f: Vec<f64> = dom.coords().iter().map(|c| (2.0 * c[0]).sin() * (3.0 * c[1]).cos()).collect();
        let lf = dom.laplacian().mul(&f);
        (0..dom.len())
            .filter(|&k| !dom.is_boundary(k))
            .map(|k| {
                let [x, y] = dom.coords()[k];
                (lf[k] + 13.0 * (2.0 * x).sin() * (3.0 * y).cos()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_order_convergence() {
        let coarse = interior_error(17);
        let fine = interior_error(33);
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn masks_interior_and_collar() {
        let dom = build_domain(&DomainSpec::unit_interval(11)).unwrap();
        let mask: Vec<bool> = dom.coords().iter().map(|c| c[0] < 0.45).collect();
        let interior = dom.mask_interior(&mask, 2);
        assert_eq!(
            interior,
            vec![true, true, true, false, false, false, false, false, false, false, false]
        );
        let collar = dom.mask_collar(&mask, 1);
        assert_eq!(collar.iter().filter(|&&c| c).count(), 2);
    }

    #[test]
    fn field_csv_layout() {
        let dom = build_domain(&DomainSpec::unit_interval(3)).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&dom, &[1.0, 2.0, 0.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,value\n0e0,1e0\n5e-1,2e0\n1e0,5e-1\n");
        let sq = build_domain(&DomainSpec::unit_square(3, 3)).unwrap();
        let mut buf = Vec::new();
        write_field_csv(&sq, &[0.0; 9], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,y,value\n0e0,0e0,0e0\n"));
    }

    #[test]
    fn field_rejects_non_finite() {
        let dom = build_domain(&DomainSpec::unit_interval(3)).unwrap();
        assert_eq!(
            ScalarField::new(&dom, vec![0.0, f64::NAN, 1.0]),
            Err(GridError::NonFinite { node: 1 })
        );
        assert!(ScalarField::new(&dom, vec![0.0]).is_err());
    }
}
