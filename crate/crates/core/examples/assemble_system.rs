// Assembles the energy operator and load vector and checks symmetry.

use fractal_homog::assembly::{EnergyForm, Source};
use fractal_homog::geometry::build_cantor_network;
use fractal_homog::problem::Hierarchy;
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let form = EnergyForm::default();
    let h = Hierarchy::build(build_cantor_network(3), 0.5, form.clone(), Source::Affine([1.0, 0.5, -0.5]), 3)?;
    let net = h.network();
    for k in 1..=3 {
        println!("weight w_{k} = {}", form.weight(k, net));
    }
    let m = &h.energy(3).matrix;
    let asym = m.triplets().map(|(i, j, v)| (v - m.get(j, i)).abs()).fold(0.0, f64::max);
    let load: f64 = h.load(3).iter().sum();
    println!("level 3: n={} nnz={} max asymmetry={asym:e} total load={load:.6}", m.nrows(), m.nnz());
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
