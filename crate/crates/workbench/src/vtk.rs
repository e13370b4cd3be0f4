//! Legacy ASCII VTK export of a tetrahedral mesh with per-element scalar
//! arrays, enough for ParaView or VisIt to color elements by estimator
//! contributions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tetfem::mesh::Mesh;
use tetfem::{Error, Result};

/// Render the mesh and cell arrays as one legacy VTK dataset.
pub fn vtk_string(mesh: &Mesh, title: &str, cell_data: &[(String, Vec<f64>)]) -> Result<String> {
    if title.contains('\n') || title.len() > 255 {
        return Err(Error::InvalidArgument("vtk title must be one short line".into()));
    }
    for (name, values) in cell_data {
        if values.len() != mesh.tets.len() {
            return Err(Error::InvalidArgument(format!(
                "cell array {name:?} has {} entries for {} elements",
                values.len(),
                mesh.tets.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "cell array name {name:?} must be nonempty without whitespace"
            )));
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z);
    }
    let nt = mesh.tets.len();
    let _ = writeln!(s, "CELLS {nt} {}", 5 * nt);
    for t in &mesh.tets {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "10");
    }
    if !cell_data.is_empty() {
        let _ = writeln!(s, "CELL_DATA {nt}");
        for (name, values) in cell_data {
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in values {
                let _ = writeln!(s, "{v:.16e}");
            }
        }
    }
    Ok(s)
}

pub fn export_vtk(
    mesh: &Mesh,
    title: &str,
    cell_data: &[(String, Vec<f64>)],
    path: &Path,
) -> Result<()> {
    let s = vtk_string(mesh, title, cell_data)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, s)?;
    Ok(())
}
