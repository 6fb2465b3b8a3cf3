// Solves the discrete interface problem and reports the energy norm.

use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::solve::{dense_solve, ReferenceOptions};
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let h = Hierarchy::build(build_cantor_network(5), 0.5, EnergyForm::default(), Source::Constant(1.0), 5)?;
    let refs = h.reference_solutions(&ReferenceOptions::default())?;
    for (k, u) in (1..).zip(&refs) {
        println!("level {k}: dofs={} |u|_E={:.6}", u.len(), h.energy(k).quadratic_form(u).sqrt());
    }
    let dense = dense_solve(&h.energy(2).matrix, h.load(2))?;
    let diff = dense.iter().zip(&refs[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("sparse vs dense at level 2: max difference {diff:e}");
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
