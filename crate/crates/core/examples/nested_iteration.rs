// Nested iteration: coarse-to-fine PCG until the algebraic error is below
// the discretization difference to the next level.

use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::solve::{nested_iteration, NestedOptions, ReferenceOptions};
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let h = Hierarchy::build(build_cantor_network(6), 0.5, EnergyForm::default(), Source::Constant(1.0), 6)?;
    let refs = h.reference_solutions(&ReferenceOptions::default())?;
    let report = nested_iteration(&h, 5, Some(&refs), &NestedOptions::default())?;
    for l in &report.levels {
        println!("level {}: {} steps, error {:.3e}, bound {:.3e}", l.level, l.steps, l.error.unwrap_or(f64::NAN), l.bound.unwrap_or(f64::NAN));
    }
    println!("max steps {}", report.max_steps());
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
