//! Assembly of the coupled spatial operator and the implicit step matrices.
//!
//! The strong-form operator `L` acts on a coupled nodal vector as
//!
//! * interior rows: `-Lap` (negated five-point Laplacian, periodic in `x`);
//! * boundary rows: `-Lap_G + d_n`, the negated ring Laplacian plus the
//!   one-sided three-node normal-derivative stencil reaching two rows into
//!   the interior.
//!
//! An implicit Euler step with frozen curvature solves
//! `E z = rhs` with `E = I/dt + L + diag(lambda)`, where `lambda` holds the
//! potential curvature `f''` at interior nodes and `f_Gamma''` at boundary
//! nodes. `L` annihilates constants (the normal stencil weights sum to zero),
//! so spatially constant states stay exactly constant whenever the two
//! potentials agree.

use crate::geometry::Mesh;
use crate::potentials::PotentialPair;

use super::linalg::BandedMatrix;

/// Assembly bandwidth: the normal-derivative stencil reaches two rows, i.e.
/// `2 * n_x` positions in the flat ordering.
pub(crate) fn bandwidth(mesh: &Mesh) -> usize {
    2 * mesh.n_x()
}

/// Builds `E = inv_dt * I + L + diag(lambda)` in banded storage.
pub(crate) fn assemble_step_matrix(mesh: &Mesh, inv_dt: f64, lambda: &[f64]) -> BandedMatrix {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let kl = bandwidth(mesh);
    let mut mat = BandedMatrix::new(mesh.n_nodes(), kl, kl);

    let inv_dx2 = 1.0 / (mesh.dx() * mesh.dx());
    let inv_dy2 = 1.0 / (mesh.dy() * mesh.dy());
    let inv_2dy = 1.0 / (2.0 * mesh.dy());

    for j in 0..=m {
        for i in 0..n_x {
            let row = mesh.idx(i, j);
            let left = mesh.idx((i + n_x - 1) % n_x, j);
            let right = mesh.idx((i + 1) % n_x, j);
            if j == 0 {
                mat.set(row, row, inv_dt + 2.0 * inv_dx2 + 3.0 * inv_2dy + lambda[row]);
                mat.add(row, left, -inv_dx2);
                mat.add(row, right, -inv_dx2);
                mat.set(row, mesh.idx(i, 1), -4.0 * inv_2dy);
                mat.set(row, mesh.idx(i, 2), inv_2dy);
            } else if j == m {
                mat.set(row, row, inv_dt + 2.0 * inv_dx2 + 3.0 * inv_2dy + lambda[row]);
                mat.add(row, left, -inv_dx2);
                mat.add(row, right, -inv_dx2);
                mat.set(row, mesh.idx(i, m - 1), -4.0 * inv_2dy);
                mat.set(row, mesh.idx(i, m - 2), inv_2dy);
            } else {
                mat.set(
                    row,
                    row,
                    inv_dt + 2.0 * inv_dx2 + 2.0 * inv_dy2 + lambda[row],
                );
                mat.add(row, left, -inv_dx2);
                mat.add(row, right, -inv_dx2);
                mat.set(row, mesh.idx(i, j - 1), -inv_dy2);
                mat.set(row, mesh.idx(i, j + 1), -inv_dy2);
            }
        }
    }
    mat
}

/// Applies the strong-form spatial operator: `out = L z`.
pub(crate) fn apply_operator(mesh: &Mesh, z: &[f64], out: &mut [f64]) {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let inv_dx2 = 1.0 / (mesh.dx() * mesh.dx());
    let inv_dy2 = 1.0 / (mesh.dy() * mesh.dy());
    let inv_2dy = 1.0 / (2.0 * mesh.dy());

    for j in 0..=m {
        for i in 0..n_x {
            let row = mesh.idx(i, j);
            let left = z[mesh.idx((i + n_x - 1) % n_x, j)];
            let right = z[mesh.idx((i + 1) % n_x, j)];
            let center = z[row];
            let horizontal = -(right - 2.0 * center + left) * inv_dx2;
            out[row] = if j == 0 {
                horizontal
                    + (3.0 * center - 4.0 * z[mesh.idx(i, 1)] + z[mesh.idx(i, 2)]) * inv_2dy
            } else if j == m {
                horizontal
                    + (3.0 * center - 4.0 * z[mesh.idx(i, m - 1)] + z[mesh.idx(i, m - 2)])
                        * inv_2dy
            } else {
                let down = z[mesh.idx(i, j - 1)];
                let up = z[mesh.idx(i, j + 1)];
                horizontal - (up - 2.0 * center + down) * inv_dy2
            };
        }
    }
}

/// Nodal reaction derivative of the requested order: `f^(order)` at interior
/// nodes, `f_Gamma^(order)` at boundary nodes. Values must already satisfy
/// the domain guard of the singular kind.
pub(crate) fn nodal_potential_derivative(
    mesh: &Mesh,
    pots: &PotentialPair,
    order: u32,
    z: &[f64],
    out: &mut [f64],
) {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let eval = |spec: &crate::potentials::PotentialSpec, r: f64| match order {
        1 => spec.d1(r),
        2 => spec.d2(r),
        3 => spec.d3(r),
        _ => unreachable!("solver reaction terms use orders 1-3"),
    };
    for j in 0..=m {
        let spec = if j == 0 || j == m {
            &pots.surface
        } else {
            &pots.bulk
        };
        for i in 0..n_x {
            let row = j * n_x + i;
            out[row] = eval(spec, z[row]);
        }
    }
}

/// Dynamic node weight: interior cell `dx*dy`, ring node `dx`. This is the
/// diagonal of the weighting that turns the strong-form equations into the
/// discrete weak form (and the adjoint multipliers back into fields).
pub(crate) fn node_weight(mesh: &Mesh, j: usize) -> f64 {
    if mesh.is_boundary_row(j) {
        mesh.ring_weight()
    } else {
        mesh.dx() * mesh.dy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_mesh;
    use crate::potentials::PotentialSpec;

    #[test]
    fn assembled_matrix_matches_operator_application() {
        let mesh = build_mesh(6, 4, 1.3, 0.9).unwrap();
        let n = mesh.n_nodes();
        let lambda: Vec<f64> = (0..n).map(|k| 0.1 * (k as f64).sin()).collect();
        let inv_dt = 12.5;
        let mat = assemble_step_matrix(&mesh, inv_dt, &lambda);

        let z: Vec<f64> = (0..n).map(|k| ((k as f64) * 0.37).cos()).collect();
        let mut via_matrix = vec![0.0; n];
        mat.apply(&z, &mut via_matrix);

        let mut l_z = vec![0.0; n];
        apply_operator(&mesh, &z, &mut l_z);
        for row in 0..n {
            let expected = inv_dt * z[row] + l_z[row] + lambda[row] * z[row];
            assert!(
                (via_matrix[row] - expected).abs() <= 1e-11 * expected.abs().max(1.0),
                "row {row}: {} vs {}",
                via_matrix[row],
                expected
            );
        }
    }

    #[test]
    fn operator_annihilates_constants() {
        let mesh = build_mesh(8, 5, 2.0, 1.1).unwrap();
        let z = vec![3.7; mesh.n_nodes()];
        let mut out = vec![1.0; mesh.n_nodes()];
        apply_operator(&mesh, &z, &mut out);
        for v in out {
            assert!(v.abs() <= 1e-11, "constants must be in the kernel of L");
        }
    }

    #[test]
    fn interior_rows_reproduce_negated_laplacian() {
        let mesh = build_mesh(8, 4, 1.0, 1.0).unwrap();
        let f = crate::geometry::BulkField::from_fn(&mesh, |x, y| (x * 6.0).sin() + y * y);
        let lap = crate::geometry::apply_interior_laplacian(&f, &mesh).unwrap();
        let mut out = vec![0.0; mesh.n_nodes()];
        apply_operator(&mesh, f.values(), &mut out);
        for j in 1..=mesh.n_y() {
            for i in 0..mesh.n_x() {
                let got = out[mesh.idx(i, j)];
                let expected = -lap.at(i, j);
                assert!((got - expected).abs() <= 1e-11 * expected.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nodal_derivative_dispatches_by_row() {
        let mesh = build_mesh(4, 3, 1.0, 1.0).unwrap();
        let pots = crate::potentials::PotentialPair {
            bulk: PotentialSpec::quartic(),
            surface: PotentialSpec::regular_as_printed(),
        };
        let z = vec![0.5; mesh.n_nodes()];
        let mut out = vec![0.0; mesh.n_nodes()];
        nodal_potential_derivative(&mesh, &pots, 1, &z, &mut out);
        // Quartic f' at 0.5 is 0.125 - 0.5 = -0.375; regular f' is -0.25.
        for j in 0..mesh.rows() {
            for i in 0..mesh.n_x() {
                let v = out[mesh.idx(i, j)];
                if mesh.is_boundary_row(j) {
                    assert!((v - (-0.25)).abs() <= 1e-15);
                } else {
                    assert!((v - (-0.375)).abs() <= 1e-15);
                }
            }
        }
    }
}
