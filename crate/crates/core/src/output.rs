//! CSV and legacy VTK writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::geom::CVec3;
use crate::mesh::TetMesh;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A table cell: a float, an integer, text, or empty.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::F(v) => fmt_f64(*v),
            Self::I(v) => v.to_string(),
            Self::S(s) => s.clone(),
            Self::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::I(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::S(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Self::Empty, Self::F)
    }
}

/// Writes a header and rows to a fresh CSV file.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r.iter().map(Cell::render)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e.into(),
        other => std::io::Error::other(format!("{other:?}")).into(),
    }
}

/// Writes `mesh` as a legacy ASCII unstructured grid with complex cell
/// vectors split into `<name>_re` and `<name>_im`.
pub fn write_vtk(path: &Path, mesh: &TetMesh, title: &str, fields: &[(&str, &[CVec3])]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_vertices())?;
    for p in &mesh.vertices {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    let nt = mesh.n_tets();
    writeln!(w, "CELLS {} {}", nt, 5 * nt)?;
    for t in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "10")?;
    }
    writeln!(w, "CELL_DATA {nt}")?;
    for (name, values) in fields {
        for (part, get) in [("re", 0usize), ("im", 1)] {
            writeln!(w, "VECTORS {name}_{part} double")?;
            for v in values.iter() {
                let c = v.map(|z| if get == 0 { z.re } else { z.im });
                writeln!(w, "{} {} {}", c[0], c[1], c[2])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CZERO3;
    use crate::mesh::{build_box_mesh, BoxDomain};

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn vtk_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_box_mesh(BoxDomain::unit_cube(), 1).unwrap();
        let p = dir.path().join("m.vtk");
        let v = vec![CZERO3; mesh.n_tets()];
        write_vtk(&p, &mesh, "t", &[("e", &v)]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.contains("POINTS 8 double"));
        assert!(text.contains("CELLS 6 30"));
        assert!(text.contains("VECTORS e_im double"));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_csv(&p, &["a", "b_c"], &[vec![Cell::I(3), Cell::F(0.5)], vec![Cell::Empty, "x".into()]]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "a,b_c\n3,5.0000000000000000e-1\n,x\n");
    }
}
