//! Deterministic serialization of fields, reports, and the run manifest.
//!
//! Field files are plain-text CSV with the fixed header
//! `row,col,t_index,value`; every file ships with a `.desc` sidecar stating
//! the mesh and grid parameters and how `t_index` is to be read. Reports are
//! `key = value` text with a stable key order. Floats are printed with 17
//! significant digits so a double round-trips losslessly; identical inputs
//! therefore produce byte-identical files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ac_control::{AdjointTrajectory, BoundaryField, BulkField, ControlPair, Mesh, TimeGrid, Trajectory};
use sha2::{Digest, Sha256};

/// Lossless text form of a double: 17 significant digits, scientific.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// How the `t_index` column of a field file is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeConvention {
    /// `t_index = n` is the time level `t_n = n dt`, `n = 0..=n_t`.
    Levels,
    /// `t_index = s` is the slab `(t_s, t_{s+1}]`, `s = 0..n_t`.
    Slabs,
    /// Slabs `0..n_t` plus the pointwise terminal datum at `t_index = n_t`.
    SlabsPlusTerminal,
}

impl TimeConvention {
    fn as_str(self) -> &'static str {
        match self {
            TimeConvention::Levels => "levels",
            TimeConvention::Slabs => "slabs",
            TimeConvention::SlabsPlusTerminal => "slabs_plus_terminal",
        }
    }
}

const CSV_HEADER: &str = "row,col,t_index,value";

/// Renders bulk fields (all mesh rows) as CSV, one block per `t_index`.
pub fn render_bulk_csv<'a>(mesh: &Mesh, fields: impl Iterator<Item = &'a BulkField>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (t, field) in fields.enumerate() {
        let values = field.values();
        for j in 0..mesh.rows() {
            for i in 0..mesh.n_x() {
                out.push_str(&format!("{j},{i},{t},{}\n", fmt_float(values[mesh.idx(i, j)])));
            }
        }
    }
    out
}

/// Renders boundary fields as CSV; `row` is the mesh row of the ring
/// (0 for the bottom ring, `n_y + 1` for the top).
pub fn render_boundary_csv<'a>(
    mesh: &Mesh,
    fields: impl Iterator<Item = &'a BoundaryField>,
) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let top = mesh.top_row();
    for (t, field) in fields.enumerate() {
        let values = field.values();
        for i in 0..mesh.n_x() {
            out.push_str(&format!("0,{i},{t},{}\n", fmt_float(values[i])));
        }
        for i in 0..mesh.n_x() {
            out.push_str(&format!("{top},{i},{t},{}\n", fmt_float(values[mesh.n_x() + i])));
        }
    }
    out
}

/// CSV of the bulk component of a state trajectory (time levels).
pub fn render_trajectory_bulk(mesh: &Mesh, traj: &Trajectory) -> String {
    render_bulk_csv(mesh, traj.states.iter().map(|s| s.bulk()))
}

/// CSV of the boundary trace of a state trajectory (time levels).
pub fn render_trajectory_boundary(mesh: &Mesh, traj: &Trajectory) -> String {
    let rings: Vec<BoundaryField> = traj.states.iter().map(|s| s.boundary(mesh)).collect();
    render_boundary_csv(mesh, rings.iter())
}

/// CSV of the bulk control slabs.
pub fn render_control_bulk(mesh: &Mesh, u: &ControlPair) -> String {
    render_bulk_csv(mesh, u.bulk.iter())
}

/// CSV of the boundary control slabs.
pub fn render_control_boundary(mesh: &Mesh, u: &ControlPair) -> String {
    render_boundary_csv(mesh, u.boundary.iter())
}

/// CSV of the bulk adjoint: slab fields plus the terminal datum.
pub fn render_adjoint_bulk(mesh: &Mesh, adj: &AdjointTrajectory) -> String {
    render_bulk_csv(mesh, adj.states.iter().map(|s| s.bulk()))
}

/// CSV of the boundary adjoint: slab fields plus the terminal datum.
pub fn render_adjoint_boundary(mesh: &Mesh, adj: &AdjointTrajectory) -> String {
    let rings: Vec<BoundaryField> = adj.states.iter().map(|s| s.boundary(mesh)).collect();
    render_boundary_csv(mesh, rings.iter())
}

/// Sidecar descriptor for one field file.
pub fn render_descriptor(
    field: &str,
    component: &str,
    convention: TimeConvention,
    mesh: &Mesh,
    grid: &TimeGrid,
) -> String {
    let pairs = [
        ("field", field.to_string()),
        ("component", component.to_string()),
        ("format", "csv(row,col,t_index,value)".to_string()),
        ("time_convention", convention.as_str().to_string()),
        ("n_x", mesh.n_x().to_string()),
        ("n_y", mesh.n_y().to_string()),
        ("rows", mesh.rows().to_string()),
        ("length", fmt_float(mesh.circumference())),
        ("height", fmt_float(mesh.height())),
        ("dx", fmt_float(mesh.dx())),
        ("dy", fmt_float(mesh.dy())),
        ("t_final", fmt_float(grid.t_final())),
        ("n_t", grid.n_t().to_string()),
        ("dt", fmt_float(grid.dt())),
    ];
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Renders a report: `key = value` lines in the given (stable) order.
pub fn render_report(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Lowercase hex SHA-256 digest, as written into the manifest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Writes an output bundle under one root directory and finishes with a
/// manifest listing every file with its SHA-256 digest.
pub struct OutputWriter {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputWriter {
    /// Creates (or reuses) the output directory.
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputWriter {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes one file at `rel` (forward-slash relative path) and records
    /// its digest for the manifest.
    pub fn write(&mut self, rel: &str, content: &str) -> io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        self.files.push((rel.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    /// Writes a field CSV together with its sidecar descriptor.
    pub fn write_field(
        &mut self,
        name: &str,
        component: &str,
        convention: TimeConvention,
        mesh: &Mesh,
        grid: &TimeGrid,
        csv: &str,
    ) -> io::Result<()> {
        self.write(&format!("{name}.csv"), csv)?;
        self.write(
            &format!("{name}.desc"),
            &render_descriptor(name, component, convention, mesh, grid),
        )
    }

    /// Writes `manifest.txt` last: metadata lines, then one
    /// `file = <sha256>  <path>` line per emitted file, sorted by path.
    pub fn finish(mut self, meta: &[(&str, String)]) -> io::Result<()> {
        let mut out = render_report(meta);
        self.files.sort();
        for (rel, digest) in &self.files {
            out.push_str(&format!("file = {digest}  {rel}\n"));
        }
        let path = self.root.join("manifest.txt");
        fs::write(path, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ac_control::{build_mesh, CoupledField};

    #[test]
    fn floats_round_trip_losslessly() {
        for v in [
            0.1,
            -3.0,
            1.0 / 3.0,
            6.02e23,
            -1.7976931348623157e308,
            5e-324,
            0.0,
        ] {
            let s = fmt_float(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    #[test]
    fn bulk_csv_lists_every_node_of_every_level() {
        let mesh = build_mesh(4, 3, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.1, 2).unwrap();
        let traj = Trajectory {
            states: vec![CoupledField::constant(&mesh, 0.5); grid.n_t() + 1],
        };
        let csv = render_trajectory_bulk(&mesh, &traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "row,col,t_index,value");
        assert_eq!(lines.len(), 1 + 3 * mesh.rows() * mesh.n_x());
        assert_eq!(lines[1], "0,0,0,5.0000000000000000e-1");
        // Last line is the last node of the last level.
        assert_eq!(
            lines[lines.len() - 1],
            format!("{},{},2,5.0000000000000000e-1", mesh.rows() - 1, mesh.n_x() - 1)
        );
    }

    #[test]
    fn boundary_csv_uses_the_mesh_row_indices() {
        let mesh = build_mesh(4, 3, 1.0, 1.0).unwrap();
        let f = BoundaryField::from_fn(&mesh, |ring, _| match ring {
            ac_control::Ring::Bottom => -1.0,
            ac_control::Ring::Top => 1.0,
        });
        let csv = render_boundary_csv(&mesh, std::iter::once(&f));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * mesh.n_x());
        assert!(lines[1].starts_with("0,0,0,-1."));
        assert!(lines[1 + mesh.n_x()].starts_with("4,0,0,1."));
    }

    #[test]
    fn manifest_lists_digests_for_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::create(dir.path()).unwrap();
        w.write("b.txt", "bravo").unwrap();
        w.write("a/a.txt", "alpha").unwrap();
        w.finish(&[("subcommand", "test".to_string())]).unwrap();

        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines[0], "subcommand = test");
        // Sorted by path, each with a 64-hex digest.
        assert!(lines[1].starts_with("file = "));
        assert!(lines[1].ends_with("  a/a.txt"));
        assert!(lines[2].ends_with("  b.txt"));
        let digest = lines[1]
            .strip_prefix("file = ")
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap();
        assert_eq!(digest.len(), 64);
        assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
