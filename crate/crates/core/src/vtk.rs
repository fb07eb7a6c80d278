//! Legacy VTK `STRUCTURED_POINTS` export (ASCII) for visualization.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField3, VectorField3};

pub fn write_structured_points<W: Write>(
    mut out: W,
    title: &str,
    spec: &GridSpec,
    scalars: &[(&str, &ScalarField3)],
    vectors: &[(&str, &VectorField3)],
) -> Result<()> {
    for (name, f) in scalars {
        if f.spec() != spec {
            return Err(Error::SpecMismatch {
                left: format!("grid {:?}", spec.dims),
                right: format!("scalar `{name}` {:?}", f.spec().dims),
            });
        }
    }
    for (name, f) in vectors {
        if f.spec() != spec {
            return Err(Error::SpecMismatch {
                left: format!("grid {:?}", spec.dims),
                right: format!("vector `{name}` {:?}", f.spec().dims),
            });
        }
    }
    let io = |e| Error::io("<vtk>", e);
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let [nx, ny, nz] = spec.dims;
    let [ox, oy, oz] = spec.origin;
    let [sx, sy, sz] = spec.spacing;
    write!(
        out,
        "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\n\
         DIMENSIONS {nx} {ny} {nz}\nORIGIN {ox} {oy} {oz}\nSPACING {sx} {sy} {sz}\nPOINT_DATA {}\n",
        spec.len()
    )
    .map_err(io)?;
    for (name, f) in scalars {
        writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default").map_err(io)?;
        for v in f.values() {
            writeln!(out, "{v}").map_err(io)?;
        }
    }
    for (name, f) in vectors {
        writeln!(out, "VECTORS {name} double").map_err(io)?;
        for v in f.values() {
            writeln!(out, "{} {} {}", v[0], v[1], v[2]).map_err(io)?;
        }
    }
    Ok(())
}

pub fn save_structured_points(
    path: &Path,
    title: &str,
    spec: &GridSpec,
    scalars: &[(&str, &ScalarField3)],
    vectors: &[(&str, &VectorField3)],
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_structured_points(&mut w, title, spec, scalars, vectors)?;
    w.flush().map_err(|e| Error::io(path, e))
}
