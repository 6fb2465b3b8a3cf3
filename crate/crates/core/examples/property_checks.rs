// Randomized checks of the norm, trace and Galerkin inequalities.

use fractal_homog::analysis::{run_property_suite, PropertySuiteConfig};
use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::Result;

pub fn run_example() -> Result<bool> {
    let h = Hierarchy::build(build_cantor_network(3), 0.5, EnergyForm::default(), Source::Constant(1.0), 3)?;
    let cfg = PropertySuiteConfig { samples: 50, seed: 2018, max_level: 3 };
    let outcomes = run_property_suite(&h, None, &cfg)?;
    for o in &outcomes {
        println!("{:<24} worst {:.3e} threshold {:.1e} {}", o.check, o.worst, o.threshold, if o.pass { "pass" } else { "FAIL" });
    }
    Ok(outcomes.iter().all(|o| o.pass))
}

fn main() -> Result<()> {
    run_example().map(|_| ())
}
