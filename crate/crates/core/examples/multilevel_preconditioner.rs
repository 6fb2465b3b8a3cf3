// PCG with the multilevel preconditioner against plain CG.

use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::solve::{pcg, IdentityPreconditioner, PcgOptions, PreconditionerConfig, ReferenceOptions, StopRule};
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let k = 5;
    let h = Hierarchy::build(build_cantor_network(k), 0.5, EnergyForm::default(), Source::Constant(1.0), k)?;
    let exact = fractal_homog::solve::solve_reference(&h.energy(k).matrix, h.load(k), &ReferenceOptions::default())?;
    let opts = PcgOptions { rule: StopRule::Steps(8), max_iterations: 8, min_iterations: 0, exact: Some(&exact), norm: None };
    let x0 = vec![0.0; exact.len()];
    let precond = h.preconditioner(k, PreconditionerConfig::default())?;
    let (_, multilevel) = pcg(&h.energy(k).matrix, h.load(k), &precond, &x0, &opts)?;
    let (_, plain) = pcg(&h.energy(k).matrix, h.load(k), &IdentityPreconditioner, &x0, &opts)?;
    println!("level {k}: {} patches on the top level", precond.patch_count(k as usize - 1));
    println!("average reduction: multilevel {:.3}, plain CG {:.3}", multilevel.average_reduction.unwrap_or(f64::NAN), plain.average_reduction.unwrap_or(f64::NAN));
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
