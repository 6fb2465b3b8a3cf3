// Writes a level solution as VTK and the operator as Matrix Market.

use fractal_homog::cli::{build_hierarchy, export_solution, ExperimentConfig};
use fractal_homog::assembly::write_matrix_market;
use fractal_homog::solve::{solve_reference, ReferenceOptions};
use fractal_homog::Result;

pub fn run_example() -> Result<(usize, usize)> {
    let cfg = ExperimentConfig { k_max: Some(3), ..ExperimentConfig::default() };
    let h = build_hierarchy(&cfg, 3)?;
    let u = solve_reference(&h.energy(3).matrix, h.load(3), &ReferenceOptions::default())?;
    let mut vtk = Vec::new();
    export_solution(&u, h.mesh(3), h.dofmap(3), &mut vtk)?;
    let mut mtx = Vec::new();
    write_matrix_market(h.energy(3), &mut mtx).expect("writing to memory");
    println!("vtk: {} bytes, matrix market: {} bytes", vtk.len(), mtx.len());
    Ok((vtk.len(), mtx.len()))
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
