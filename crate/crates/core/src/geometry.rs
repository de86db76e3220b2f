//! Structured mesh and discrete calculus on a flat cylinder.
//!
//! The spatial domain is the cylinder surface `S^1 x (0, H)`: periodic in the
//! horizontal direction `x` with circumference `L`, bounded in the vertical
//! direction `y` by two boundary circles at `y = 0` and `y = H`. The boundary
//! therefore consists of two rings, each a copy of `S^1`, and the outward
//! normal is `-e_y` on the bottom ring and `+e_y` on the top ring.
//!
//! Nodes form a tensor grid with `n_x` columns and `n_y + 2` rows:
//!
//! ```text
//!   row n_y+1   o--o--o--o   top boundary ring     (y = H)
//!   row n_y     .  .  .  .   interior
//!   ...
//!   row 1       .  .  .  .   interior
//!   row 0       o--o--o--o   bottom boundary ring  (y = 0)
//! ```
//!
//! Conventions used throughout the crate:
//!
//! * column spacing `dx = L / n_x` (periodic, no duplicated seam column),
//!   row spacing `dy = H / (n_y + 1)`;
//! * node `(i, j)` sits at `x = i*dx`, `y = j*dy` and has flat index
//!   `j * n_x + i`;
//! * bulk quadrature weight `dx*dy` on interior rows and `dx*dy/2` on the two
//!   boundary rows, so the weights sum exactly to the area `L*H`;
//! * ring quadrature weight `dx` per boundary node, so each ring sums to `L`.
//!
//! A [`BulkField`] stores one value per node, rows 0..n_y+1. A
//! [`BoundaryField`] stores one value per boundary node, bottom ring then top
//! ring. [`CoupledField`] is a bulk field whose boundary rows are read as the
//! boundary component; this mirrors the continuous pairing `(y, y_Gamma)` with
//! `y_Gamma = y` restricted to the boundary.

use crate::error::ModelError;

/// Structured mesh on the flat cylinder `S^1 x (0, H)`.
///
/// Construct with [`build_mesh`]; the constructor validates the resolution
/// and precomputes the spacings.
#[derive(Debug, Clone)]
pub struct Mesh {
    n_x: usize,
    n_y: usize,
    circumference: f64,
    height: f64,
    dx: f64,
    dy: f64,
}

/// Builds a mesh with `n_x` columns, `n_y` interior rows, and the given
/// circumference and height.
///
/// Requires `n_x >= 4` (the periodic second difference needs distinct
/// neighbours), `n_y >= 3` (the one-sided normal-derivative stencil reaches
/// two rows into the interior from each ring), and positive dimensions.
pub fn build_mesh(
    n_x: usize,
    n_y: usize,
    circumference: f64,
    height: f64,
) -> Result<Mesh, ModelError> {
    if n_x < 4 {
        return Err(ModelError::InvalidMesh(format!(
            "n_x = {n_x}, need at least 4 columns for the periodic stencil"
        )));
    }
    if n_y < 3 {
        return Err(ModelError::InvalidMesh(format!(
            "n_y = {n_y}, need at least 3 interior rows for the boundary stencils"
        )));
    }
    if !(circumference.is_finite() && circumference > 0.0) {
        return Err(ModelError::InvalidMesh(format!(
            "circumference must be positive and finite, got {circumference}"
        )));
    }
    if !(height.is_finite() && height > 0.0) {
        return Err(ModelError::InvalidMesh(format!(
            "height must be positive and finite, got {height}"
        )));
    }
    Ok(Mesh {
        n_x,
        n_y,
        circumference,
        height,
        dx: circumference / n_x as f64,
        dy: height / (n_y + 1) as f64,
    })
}

impl Mesh {
    /// Number of columns (periodic direction).
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Number of interior rows.
    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Total number of rows, `n_y + 2`, including both boundary rings.
    pub fn rows(&self) -> usize {
        self.n_y + 2
    }

    /// Index of the top boundary row, `n_y + 1`.
    pub fn top_row(&self) -> usize {
        self.n_y + 1
    }

    /// Total number of nodes, `(n_y + 2) * n_x`.
    pub fn n_nodes(&self) -> usize {
        self.rows() * self.n_x
    }

    /// Number of boundary nodes, `2 * n_x`.
    pub fn n_boundary_nodes(&self) -> usize {
        2 * self.n_x
    }

    /// Column spacing `L / n_x`.
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Row spacing `H / (n_y + 1)`.
    pub fn dy(&self) -> f64 {
        self.dy
    }

    /// Circumference `L` of the periodic direction.
    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    /// Height `H` of the cylinder.
    pub fn height(&self) -> f64 {
        self.height
    }

    /// Domain area `L * H`.
    pub fn area(&self) -> f64 {
        self.circumference * self.height
    }

    /// Total boundary length `2 * L` (two rings).
    pub fn boundary_length(&self) -> f64 {
        2.0 * self.circumference
    }

    /// Whether row `j` is one of the two boundary rings.
    pub fn is_boundary_row(&self, j: usize) -> bool {
        j == 0 || j == self.top_row()
    }

    /// Bulk quadrature weight of any node in row `j`: `dx*dy` on interior
    /// rows, `dx*dy/2` on the boundary rows. The weights sum exactly to the
    /// area.
    pub fn bulk_weight(&self, j: usize) -> f64 {
        if self.is_boundary_row(j) {
            0.5 * self.dx * self.dy
        } else {
            self.dx * self.dy
        }
    }

    /// Ring quadrature weight of a boundary node: `dx` on both rings.
    pub fn ring_weight(&self) -> f64 {
        self.dx
    }

    /// Flat index of node `(i, j)`.
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n_x && j < self.rows());
        j * self.n_x + i
    }

    /// `x`-coordinate of column `i`.
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// `y`-coordinate of row `j`.
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }
}

/// Ring selector for boundary data: the ring at `y = 0` or the ring at `y = H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ring {
    Bottom,
    Top,
}

/// Scalar field on all mesh nodes, stored row-major (`idx = j*n_x + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct BulkField {
    n_x: usize,
    rows: usize,
    values: Vec<f64>,
}

impl BulkField {
    /// All-zero field on `mesh`.
    pub fn zeros(mesh: &Mesh) -> Self {
        BulkField {
            n_x: mesh.n_x(),
            rows: mesh.rows(),
            values: vec![0.0; mesh.n_nodes()],
        }
    }

    /// Constant field on `mesh`.
    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        BulkField {
            n_x: mesh.n_x(),
            rows: mesh.rows(),
            values: vec![value; mesh.n_nodes()],
        }
    }

    /// Field sampled from a function of the node coordinates `(x, y)`.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = BulkField::zeros(mesh);
        for j in 0..mesh.rows() {
            for i in 0..mesh.n_x() {
                out.values[mesh.idx(i, j)] = f(mesh.x(i), mesh.y(j));
            }
        }
        out
    }

    /// Field wrapping an existing value vector of length `rows * n_x`.
    pub fn from_values(mesh: &Mesh, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != mesh.n_nodes() {
            return Err(ModelError::ShapeMismatch {
                context: "BulkField::from_values",
                expected: (mesh.rows(), mesh.n_x()),
                got: (values.len() / mesh.n_x().max(1), values.len() % mesh.n_x().max(1)),
            });
        }
        Ok(BulkField {
            n_x: mesh.n_x(),
            rows: mesh.rows(),
            values,
        })
    }

    /// Whether the field shape matches `mesh`.
    pub fn conforms(&self, mesh: &Mesh) -> bool {
        self.n_x == mesh.n_x() && self.rows == mesh.rows()
    }

    /// Value at node `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.n_x && j < self.rows);
        self.values[j * self.n_x + i]
    }

    /// Sets the value at node `(i, j)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n_x && j < self.rows);
        self.values[j * self.n_x + i] = value;
    }

    /// Flat read-only view of the values, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat mutable view of the values, row-major.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Number of columns.
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Number of rows (including boundary rows).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Largest absolute value over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &BulkField) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
    }

    /// In-place multiplication by a scalar.
    pub fn scale(&mut self, scale: f64) {
        for a in self.values.iter_mut() {
            *a *= scale;
        }
    }
}

/// Scalar field on the two boundary rings, bottom ring first, then top ring,
/// each stored by column index.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryField {
    n_x: usize,
    values: Vec<f64>,
}

impl BoundaryField {
    /// All-zero boundary field on `mesh`.
    pub fn zeros(mesh: &Mesh) -> Self {
        BoundaryField {
            n_x: mesh.n_x(),
            values: vec![0.0; mesh.n_boundary_nodes()],
        }
    }

    /// Constant boundary field on `mesh`.
    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        BoundaryField {
            n_x: mesh.n_x(),
            values: vec![value; mesh.n_boundary_nodes()],
        }
    }

    /// Boundary field sampled from a function of `(ring, x)`.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(Ring, f64) -> f64) -> Self {
        let mut out = BoundaryField::zeros(mesh);
        for i in 0..mesh.n_x() {
            out.values[i] = f(Ring::Bottom, mesh.x(i));
            out.values[mesh.n_x() + i] = f(Ring::Top, mesh.x(i));
        }
        out
    }

    /// Boundary field wrapping an existing value vector of length `2 * n_x`.
    pub fn from_values(mesh: &Mesh, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != mesh.n_boundary_nodes() {
            return Err(ModelError::ShapeMismatch {
                context: "BoundaryField::from_values",
                expected: (2, mesh.n_x()),
                got: (values.len() / mesh.n_x().max(1), values.len() % mesh.n_x().max(1)),
            });
        }
        Ok(BoundaryField {
            n_x: mesh.n_x(),
            values,
        })
    }

    /// Whether the field shape matches `mesh`.
    pub fn conforms(&self, mesh: &Mesh) -> bool {
        self.n_x == mesh.n_x()
    }

    /// Value at column `i` of the given ring.
    pub fn at(&self, ring: Ring, i: usize) -> f64 {
        debug_assert!(i < self.n_x);
        match ring {
            Ring::Bottom => self.values[i],
            Ring::Top => self.values[self.n_x + i],
        }
    }

    /// Sets the value at column `i` of the given ring.
    pub fn set(&mut self, ring: Ring, i: usize, value: f64) {
        debug_assert!(i < self.n_x);
        match ring {
            Ring::Bottom => self.values[i] = value,
            Ring::Top => self.values[self.n_x + i] = value,
        }
    }

    /// Flat read-only view: bottom ring, then top ring.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat mutable view: bottom ring, then top ring.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Number of columns per ring.
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    /// Largest absolute value over both rings.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &BoundaryField) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
    }

    /// In-place multiplication by a scalar.
    pub fn scale(&mut self, scale: f64) {
        for a in self.values.iter_mut() {
            *a *= scale;
        }
    }
}

/// Coupled unknown `(y, y_Gamma)` with the trace identification built in:
/// a single bulk field whose boundary rows are the boundary component.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledField {
    bulk: BulkField,
}

impl CoupledField {
    /// All-zero coupled field.
    pub fn zeros(mesh: &Mesh) -> Self {
        CoupledField {
            bulk: BulkField::zeros(mesh),
        }
    }

    /// Constant coupled field (same constant in the bulk and on the rings).
    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        CoupledField {
            bulk: BulkField::constant(mesh, value),
        }
    }

    /// Coupled field sampled from a function of `(x, y)`; the boundary
    /// component is the sample on the boundary rows, so the pair is
    /// trace-compatible by construction.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        CoupledField {
            bulk: BulkField::from_fn(mesh, f),
        }
    }

    /// Wraps a bulk field as a coupled field.
    pub fn from_bulk(bulk: BulkField) -> Self {
        CoupledField { bulk }
    }

    /// Bulk component (all rows).
    pub fn bulk(&self) -> &BulkField {
        &self.bulk
    }

    /// Mutable bulk component.
    pub fn bulk_mut(&mut self) -> &mut BulkField {
        &mut self.bulk
    }

    /// Copies the boundary rows out as a standalone boundary field.
    pub fn boundary(&self, mesh: &Mesh) -> BoundaryField {
        trace(self, mesh)
    }

    /// Whether the field shape matches `mesh`.
    pub fn conforms(&self, mesh: &Mesh) -> bool {
        self.bulk.conforms(mesh)
    }

    /// Value at node `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.bulk.at(i, j)
    }

    /// Sets the value at node `(i, j)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.bulk.set(i, j, value);
    }

    /// Flat read-only view of all node values.
    pub fn values(&self) -> &[f64] {
        self.bulk.values()
    }

    /// Flat mutable view of all node values.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.bulk.values_mut()
    }

    /// Largest absolute value over all nodes.
    pub fn max_abs(&self) -> f64 {
        self.bulk.max_abs()
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &CoupledField) {
        self.bulk.axpy(scale, &other.bulk);
    }
}

fn check_bulk_shapes(
    context: &'static str,
    mesh: &Mesh,
    fields: &[&BulkField],
) -> Result<(), ModelError> {
    for f in fields {
        if !f.conforms(mesh) {
            return Err(ModelError::ShapeMismatch {
                context,
                expected: (mesh.rows(), mesh.n_x()),
                got: (f.rows(), f.n_x()),
            });
        }
    }
    Ok(())
}

fn check_boundary_shapes(
    context: &'static str,
    mesh: &Mesh,
    fields: &[&BoundaryField],
) -> Result<(), ModelError> {
    for f in fields {
        if !f.conforms(mesh) {
            return Err(ModelError::ShapeMismatch {
                context,
                expected: (2, mesh.n_x()),
                got: (2, f.n_x()),
            });
        }
    }
    Ok(())
}

/// Discrete `L^2` inner product over the cylinder surface:
/// `sum_{i,j} w_j * a(i,j) * b(i,j)` with the bulk quadrature weights
/// (`dx*dy` interior, `dx*dy/2` on the boundary rows).
pub fn inner_bulk(a: &BulkField, b: &BulkField, mesh: &Mesh) -> Result<f64, ModelError> {
    check_bulk_shapes("inner_bulk", mesh, &[a, b])?;
    Ok(dot_bulk(mesh, a.values(), b.values()))
}

/// Discrete `L^2` inner product over both boundary rings:
/// `sum dx * a * b` over all `2 * n_x` boundary nodes.
pub fn inner_boundary(a: &BoundaryField, b: &BoundaryField, mesh: &Mesh) -> Result<f64, ModelError> {
    check_boundary_shapes("inner_boundary", mesh, &[a, b])?;
    Ok(dot_boundary(mesh, a.values(), b.values()))
}

/// Unchecked bulk inner product on flat value slices.
pub(crate) fn dot_bulk(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let n_x = mesh.n_x();
    let mut total = 0.0;
    for j in 0..mesh.rows() {
        let w = mesh.bulk_weight(j);
        let mut row = 0.0;
        for i in 0..n_x {
            row += a[j * n_x + i] * b[j * n_x + i];
        }
        total += w * row;
    }
    total
}

/// Unchecked boundary inner product on flat value slices (bottom then top).
pub(crate) fn dot_boundary(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let w = mesh.ring_weight();
    let mut total = 0.0;
    for k in 0..mesh.n_boundary_nodes() {
        total += a[k] * b[k];
    }
    w * total
}

/// Five-point discrete Laplacian on the interior rows, periodic in `x`:
///
/// ```text
/// (Lap f)(i,j) = (f(i+1,j) - 2 f(i,j) + f(i-1,j)) / dx^2
///              + (f(i,j+1) - 2 f(i,j) + f(i,j-1)) / dy^2,   1 <= j <= n_y.
/// ```
///
/// The output is zero on the two boundary rows; the boundary dynamics carry
/// their own surface operator ([`apply_boundary_laplacian`]) and the coupling
/// enters through [`normal_derivative`]. Acting on fields that vanish on the
/// boundary rows the operator is symmetric and negative semidefinite with
/// respect to [`inner_bulk`]; its `x`-mode symbol has magnitude
/// `(2/dx^2) * (1 - cos(2 pi k dx / L))`.
pub fn apply_interior_laplacian(f: &BulkField, mesh: &Mesh) -> Result<BulkField, ModelError> {
    check_bulk_shapes("apply_interior_laplacian", mesh, &[f])?;
    let mut out = BulkField::zeros(mesh);
    let n_x = mesh.n_x();
    let inv_dx2 = 1.0 / (mesh.dx() * mesh.dx());
    let inv_dy2 = 1.0 / (mesh.dy() * mesh.dy());
    for j in 1..=mesh.n_y() {
        for i in 0..n_x {
            let left = f.at((i + n_x - 1) % n_x, j);
            let right = f.at((i + 1) % n_x, j);
            let down = f.at(i, j - 1);
            let up = f.at(i, j + 1);
            let center = f.at(i, j);
            let lap = (right - 2.0 * center + left) * inv_dx2
                + (up - 2.0 * center + down) * inv_dy2;
            out.set(i, j, lap);
        }
    }
    Ok(out)
}

/// Discrete Laplace-Beltrami operator on the two boundary rings: the periodic
/// second difference along each ring,
///
/// ```text
/// (Lap_G g)(i) = (g(i+1) - 2 g(i) + g(i-1)) / dx^2 .
/// ```
///
/// Symmetric and negative semidefinite with respect to [`inner_boundary`];
/// the mode-`k` eigenvalue is `-(2/dx^2) * (1 - cos(2 pi k dx / L))`.
pub fn apply_boundary_laplacian(g: &BoundaryField, mesh: &Mesh) -> Result<BoundaryField, ModelError> {
    check_boundary_shapes("apply_boundary_laplacian", mesh, &[g])?;
    let mut out = BoundaryField::zeros(mesh);
    let n_x = mesh.n_x();
    let inv_dx2 = 1.0 / (mesh.dx() * mesh.dx());
    for ring in [Ring::Bottom, Ring::Top] {
        for i in 0..n_x {
            let left = g.at(ring, (i + n_x - 1) % n_x);
            let right = g.at(ring, (i + 1) % n_x);
            let center = g.at(ring, i);
            out.set(ring, i, (right - 2.0 * center + left) * inv_dx2);
        }
    }
    Ok(out)
}

/// Outward normal derivative of a bulk field on the two rings, using the
/// one-sided three-node stencil (exact for fields quadratic in `y`):
///
/// ```text
/// bottom (n = -e_y):  (3 f(i,0) - 4 f(i,1)     + f(i,2)    ) / (2 dy)
/// top    (n = +e_y):  (3 f(i,m) - 4 f(i,m-1)   + f(i,m-2)  ) / (2 dy),  m = n_y + 1.
/// ```
pub fn normal_derivative(f: &BulkField, mesh: &Mesh) -> Result<BoundaryField, ModelError> {
    check_bulk_shapes("normal_derivative", mesh, &[f])?;
    let mut out = BoundaryField::zeros(mesh);
    let m = mesh.top_row();
    let inv_2dy = 1.0 / (2.0 * mesh.dy());
    for i in 0..mesh.n_x() {
        let bottom = (3.0 * f.at(i, 0) - 4.0 * f.at(i, 1) + f.at(i, 2)) * inv_2dy;
        let top = (3.0 * f.at(i, m) - 4.0 * f.at(i, m - 1) + f.at(i, m - 2)) * inv_2dy;
        out.set(Ring::Bottom, i, bottom);
        out.set(Ring::Top, i, top);
    }
    Ok(out)
}

/// Restriction of a coupled field to its boundary rows, as a boundary field
/// (bottom ring = row 0, top ring = row `n_y + 1`).
pub fn trace(f: &CoupledField, mesh: &Mesh) -> BoundaryField {
    debug_assert!(f.conforms(mesh));
    let mut out = BoundaryField::zeros(mesh);
    let m = mesh.top_row();
    for i in 0..mesh.n_x() {
        out.set(Ring::Bottom, i, f.at(i, 0));
        out.set(Ring::Top, i, f.at(i, m));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mesh_8x4() -> Mesh {
        build_mesh(8, 4, 1.0, 1.0).unwrap()
    }

    #[test]
    fn build_mesh_computes_spacings() {
        let m = mesh_8x4();
        assert_eq!(m.dx(), 0.125);
        assert_eq!(m.dy(), 0.2);
        assert_eq!(m.rows(), 6);
        assert_eq!(m.n_nodes(), 48);

        let m = build_mesh(4, 3, 2.0, 0.5).unwrap();
        assert_eq!(m.dx(), 0.5);
        assert_eq!(m.dy(), 0.125);
    }

    #[test]
    fn build_mesh_rejects_bad_resolution() {
        assert!(matches!(
            build_mesh(3, 4, 1.0, 1.0),
            Err(ModelError::InvalidMesh(_))
        ));
        assert!(matches!(
            build_mesh(8, 2, 1.0, 1.0),
            Err(ModelError::InvalidMesh(_))
        ));
        assert!(matches!(
            build_mesh(8, 4, 0.0, 1.0),
            Err(ModelError::InvalidMesh(_))
        ));
        assert!(matches!(
            build_mesh(8, 4, 1.0, -2.0),
            Err(ModelError::InvalidMesh(_))
        ));
    }

    #[test]
    fn bulk_weights_sum_to_area_exactly() {
        for (nx, ny, l, h) in [(8, 4, 1.0, 1.0), (16, 6, 3.0, 0.7), (5, 3, 2.5, 0.11)] {
            let m = build_mesh(nx, ny, l, h).unwrap();
            let mut total = 0.0;
            for j in 0..m.rows() {
                total += m.bulk_weight(j) * m.n_x() as f64;
            }
            assert!(
                (total - m.area()).abs() <= 1e-14 * m.area(),
                "weights sum {total} vs area {}",
                m.area()
            );
        }
    }

    #[test]
    fn inner_bulk_of_constants_gives_area() {
        let m = mesh_8x4();
        let one = BulkField::constant(&m, 1.0);
        let v = inner_bulk(&one, &one, &m).unwrap();
        assert!((v - 1.0).abs() <= 1e-15);

        let zero = BulkField::zeros(&m);
        assert_eq!(inner_bulk(&one, &zero, &m).unwrap(), 0.0);
    }

    #[test]
    fn inner_boundary_of_constants_gives_ring_length() {
        let m = mesh_8x4();
        let one = BoundaryField::constant(&m, 1.0);
        let v = inner_boundary(&one, &one, &m).unwrap();
        assert!((v - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn inner_products_match_dense_quadrature() {
        let m = build_mesh(7, 5, 1.7, 0.9).unwrap();
        let a = BulkField::from_fn(&m, |x, y| (x * 3.1).sin() + y * y);
        let b = BulkField::from_fn(&m, |x, y| x - 0.3 * y + 0.2);

        // Independent summation building each weight from scratch.
        let mut expected = 0.0;
        for j in 0..m.rows() {
            let w = if j == 0 || j == m.rows() - 1 {
                0.5 * m.dx() * m.dy()
            } else {
                m.dx() * m.dy()
            };
            for i in 0..m.n_x() {
                expected += w * a.at(i, j) * b.at(i, j);
            }
        }
        let got = inner_bulk(&a, &b, &m).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected.abs().max(1.0));

        let ga = BoundaryField::from_fn(&m, |r, x| match r {
            Ring::Bottom => x * x,
            Ring::Top => -x,
        });
        let gb = BoundaryField::from_fn(&m, |_, x| 1.0 + x);
        let mut expected_b = 0.0;
        for i in 0..m.n_x() {
            expected_b += m.dx() * ga.at(Ring::Bottom, i) * gb.at(Ring::Bottom, i);
            expected_b += m.dx() * ga.at(Ring::Top, i) * gb.at(Ring::Top, i);
        }
        let got_b = inner_boundary(&ga, &gb, &m).unwrap();
        assert!((got_b - expected_b).abs() <= 1e-14 * expected_b.abs().max(1.0));
    }

    #[test]
    fn inner_bulk_rejects_shape_mismatch() {
        let m = mesh_8x4();
        let other = build_mesh(6, 4, 1.0, 1.0).unwrap();
        let a = BulkField::constant(&m, 1.0);
        let b = BulkField::constant(&other, 1.0);
        assert!(matches!(
            inner_bulk(&a, &b, &m),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn interior_laplacian_annihilates_constants_and_linear_profiles() {
        let m = mesh_8x4();
        let c = BulkField::constant(&m, 4.2);
        let lap = apply_interior_laplacian(&c, &m).unwrap();
        assert_eq!(lap.max_abs(), 0.0);

        // Linear in y: second differences vanish identically.
        let lin = BulkField::from_fn(&m, |_, y| 3.0 * y - 1.0);
        let lap = apply_interior_laplacian(&lin, &m).unwrap();
        assert!(lap.max_abs() <= 1e-13);
    }

    #[test]
    fn interior_laplacian_reproduces_periodic_mode_symbol() {
        let m = build_mesh(16, 5, 2.0, 1.0).unwrap();
        let l = m.circumference();
        let f = BulkField::from_fn(&m, |x, _| (2.0 * PI * x / l).cos());
        let lap = apply_interior_laplacian(&f, &m).unwrap();
        let symbol = (2.0 / (m.dx() * m.dx())) * (1.0 - (2.0 * PI * m.dx() / l).cos());
        for j in 1..=m.n_y() {
            for i in 0..m.n_x() {
                let expected = -symbol * f.at(i, j);
                assert!(
                    (lap.at(i, j) - expected).abs() <= 1e-11,
                    "mode symbol mismatch at ({i},{j})"
                );
            }
        }
        // Boundary rows are untouched placeholders.
        for i in 0..m.n_x() {
            assert_eq!(lap.at(i, 0), 0.0);
            assert_eq!(lap.at(i, m.top_row()), 0.0);
        }
    }

    #[test]
    fn boundary_laplacian_reproduces_ring_mode_eigenvalue() {
        let m = build_mesh(16, 4, 2.0, 1.0).unwrap();
        let l = m.circumference();
        for k in [1_usize, 2, 3] {
            let g = BoundaryField::from_fn(&m, |_, x| (2.0 * PI * k as f64 * x / l).cos());
            let lap = apply_boundary_laplacian(&g, &m).unwrap();
            let eig = -(2.0 / (m.dx() * m.dx()))
                * (1.0 - (2.0 * PI * k as f64 * m.dx() / l).cos());
            for i in 0..m.n_x() {
                for ring in [Ring::Bottom, Ring::Top] {
                    assert!(
                        (lap.at(ring, i) - eig * g.at(ring, i)).abs() <= 1e-10,
                        "ring eigenvalue mismatch at mode {k}"
                    );
                }
            }
            assert!(eig < 0.0);
        }

        let c = BoundaryField::constant(&m, -2.0);
        assert_eq!(apply_boundary_laplacian(&c, &m).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn boundary_laplacian_satisfies_green_identity() {
        // <-Lap_G v, w> equals the sum of forward-difference products, exactly
        // up to roundoff: summation by parts on each periodic ring.
        let m = build_mesh(9, 4, 1.3, 0.8).unwrap();
        let v = BoundaryField::from_fn(&m, |r, x| match r {
            Ring::Bottom => (x * 5.0).sin() + 0.3,
            Ring::Top => x * x - 1.0,
        });
        let w = BoundaryField::from_fn(&m, |r, x| match r {
            Ring::Bottom => (x * 2.0).cos(),
            Ring::Top => 0.5 - x,
        });
        let lap_v = apply_boundary_laplacian(&v, &m).unwrap();
        let lhs = -inner_boundary(&lap_v, &w, &m).unwrap();

        let n_x = m.n_x();
        let mut rhs = 0.0;
        for ring in [Ring::Bottom, Ring::Top] {
            for i in 0..n_x {
                let ip = (i + 1) % n_x;
                rhs += (v.at(ring, ip) - v.at(ring, i)) * (w.at(ring, ip) - w.at(ring, i));
            }
        }
        rhs /= m.dx();
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
            "Green identity: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn normal_derivative_is_exact_for_quadratics_in_y() {
        let m = build_mesh(8, 5, 1.0, 0.9).unwrap();
        let (a, b, c) = (1.7, -0.6, 0.25);
        let f = BulkField::from_fn(&m, |_, y| a * y * y + b * y + c);
        let nd = normal_derivative(&f, &m).unwrap();
        let h = m.height();
        for i in 0..m.n_x() {
            // d/dy at y=0 is b; outward normal is -e_y on the bottom ring.
            assert!((nd.at(Ring::Bottom, i) - (-b)).abs() <= 1e-12);
            // d/dy at y=H is 2aH + b; outward normal is +e_y on the top ring.
            assert!((nd.at(Ring::Top, i) - (2.0 * a * h + b)).abs() <= 1e-12);
        }

        let constant = BulkField::constant(&m, 3.0);
        assert_eq!(normal_derivative(&constant, &m).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn trace_reads_the_boundary_rows() {
        let m = mesh_8x4();
        let f = CoupledField::from_fn(&m, |x, y| x + 10.0 * y);
        let tr = trace(&f, &m);
        for i in 0..m.n_x() {
            assert_eq!(tr.at(Ring::Bottom, i), f.at(i, 0));
            assert_eq!(tr.at(Ring::Top, i), f.at(i, m.top_row()));
        }
    }

    #[test]
    fn interior_laplacian_is_symmetric_negative_semidefinite_on_zero_trace_fields() {
        // On fields vanishing on the boundary rows the interior five-point
        // operator is self-adjoint for the bulk product and <Lap f, f> <= 0.
        let m = build_mesh(10, 6, 1.9, 1.2).unwrap();
        let zero_trace = |f: &mut BulkField| {
            for i in 0..m.n_x() {
                f.set(i, 0, 0.0);
                f.set(i, m.top_row(), 0.0);
            }
        };
        let mut f = BulkField::from_fn(&m, |x, y| (x * 4.0).sin() * y + 0.2 * x);
        let mut g = BulkField::from_fn(&m, |x, y| (y * 3.0).cos() - x * 0.7);
        zero_trace(&mut f);
        zero_trace(&mut g);

        let lap_f = apply_interior_laplacian(&f, &m).unwrap();
        let lap_g = apply_interior_laplacian(&g, &m).unwrap();
        let fg = inner_bulk(&lap_f, &g, &m).unwrap();
        let gf = inner_bulk(&f, &lap_g, &m).unwrap();
        assert!((fg - gf).abs() <= 1e-12 * fg.abs().max(1.0));

        let ff = inner_bulk(&lap_f, &f, &m).unwrap();
        assert!(ff <= 1e-12);
    }

    proptest! {
        #[test]
        fn laplacians_are_linear(
            seed_a in -2.0_f64..2.0,
            seed_b in -2.0_f64..2.0,
            alpha in -3.0_f64..3.0,
            beta in -3.0_f64..3.0,
        ) {
            let m = build_mesh(8, 4, 1.0, 1.0).unwrap();
            let f = BulkField::from_fn(&m, |x, y| (x * 7.0 + seed_a).sin() + y * seed_b);
            let g = BulkField::from_fn(&m, |x, y| (y * 5.0 + seed_b).cos() - x * seed_a);

            let mut combo = f.clone();
            combo.scale(alpha);
            combo.axpy(beta, &g);

            let lap_combo = apply_interior_laplacian(&combo, &m).unwrap();
            let mut expected = apply_interior_laplacian(&f, &m).unwrap();
            expected.scale(alpha);
            expected.axpy(beta, &apply_interior_laplacian(&g, &m).unwrap());

            for (u, v) in lap_combo.values().iter().zip(expected.values().iter()) {
                prop_assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }

        #[test]
        fn boundary_laplacian_is_symmetric(
            phase in 0.0_f64..6.28,
            amp in 0.1_f64..2.0,
        ) {
            let m = build_mesh(12, 3, 2.0, 1.0).unwrap();
            let v = BoundaryField::from_fn(&m, |_, x| amp * (x * 3.0 + phase).sin());
            let w = BoundaryField::from_fn(&m, |r, x| match r {
                Ring::Bottom => (x * 6.0).cos(),
                Ring::Top => x - 1.0,
            });
            let lap_v = apply_boundary_laplacian(&v, &m).unwrap();
            let lap_w = apply_boundary_laplacian(&w, &m).unwrap();
            let a = inner_boundary(&lap_v, &w, &m).unwrap();
            let b = inner_boundary(&v, &lap_w, &m).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));

            let vv = inner_boundary(&lap_v, &v, &m).unwrap();
            prop_assert!(vv <= 1e-12);
        }
    }
}
