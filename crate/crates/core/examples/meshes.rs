//! Kuhn meshes of a box and of the periodic unit cell.

use maxwell_hmm::mesh::{build_box_mesh, build_periodic_cube_mesh, BoxDomain};

fn main() -> maxwell_hmm::Result<()> {
    let domain = BoxDomain::new([0.0, 0.0, 0.0], [2.0, 1.0, 1.0])?;
    for n in [1, 2, 4] {
        let m = build_box_mesh(domain, n)?;
        let volume: f64 = m.volumes.iter().sum();
        println!(
            "box n={n}: {} vertices, {} edges ({} on the boundary), {} faces ({} interior), {} tets, volume {volume}",
            m.n_vertices(),
            m.edges.len(),
            m.n_boundary_edges(),
            m.faces.len(),
            m.interior_faces().count(),
            m.n_tets()
        );
    }
    for n in [2, 4] {
        let c = build_periodic_cube_mesh(n)?;
        println!(
            "cell n={n}: {} master vertices, {} faces (all interior: {}), {} tets",
            c.n_masters(),
            c.faces.len(),
            c.faces.iter().all(|f| f.is_interior()),
            c.n_tets()
        );
    }
    Ok(())
}
