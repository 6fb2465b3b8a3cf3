// Builds the Cantor and layered networks and prints per-level statistics.

use fractal_homog::geometry::{build_cantor_network, build_layered_network, network_stats, LayeredNetworkConfig};
use fractal_homog::Result;

pub fn run_example() -> Result<()> {
    let cantor = build_cantor_network(4);
    let layered = build_layered_network(&LayeredNetworkConfig::default(), 3)?;
    for net in [&cantor, &layered] {
        let stats = network_stats(net)?;
        println!("{} network, {} facets", stats.kind, stats.total_facets());
        for l in &stats.levels {
            println!("  k={} facets={} length={:.4} d_k={:.4} C_k={}", l.level, l.facet_count, l.total_length, l.d_k, l.crossing_constant);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
