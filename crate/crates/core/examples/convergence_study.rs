// Homogenization error estimates e_K against a reference level and their
// geometric fit.

use fractal_homog::analysis::convergence_study;
use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::solve::ReferenceOptions;
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let k_ref = 5;
    let h = Hierarchy::build(build_cantor_network(k_ref + 1), 0.5, EnergyForm::default(), Source::Constant(1.0), k_ref + 1)?;
    let refs = h.reference_solutions(&ReferenceOptions::default())?;
    let study = convergence_study(&h, &refs, k_ref)?;
    for (k, e) in study.levels.iter().zip(&study.errors) {
        println!("K={k} e_K={e:.4e}");
    }
    println!("fit factor {:.4} (residual {:.2e})", study.fit_factor, study.fit_residual);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
