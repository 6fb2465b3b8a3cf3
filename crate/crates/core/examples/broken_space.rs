// Resolving triangulations and the broken P1 dof map on each level.

use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let h = Hierarchy::build(build_cantor_network(4), 0.5, EnergyForm::default(), Source::Constant(1.0), 4)?;
    for k in 1..=h.max_level() {
        let (mesh, dofs) = (h.mesh(k), h.dofmap(k));
        println!(
            "level {k}: h={} triangles={} vertices={} dofs={} interface edges={} cells={}",
            mesh.h(),
            mesh.triangle_count(),
            mesh.vertex_count(),
            dofs.total_dofs(),
            dofs.interface_edges().len(),
            h.partition(k).invariant_count(),
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
