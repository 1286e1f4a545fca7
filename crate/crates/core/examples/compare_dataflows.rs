//! Run all three dataflows on one layer against the row-stationary baseline
//! and print the report in every output format.

use dataflow_sim::harness::{cmd_compare, CompareOptions, Config, Format};
use dataflow_sim::{ConvType, Dataflow, LayerSpec};

fn main() -> dataflow_sim::Result<()> {
    let layer = LayerSpec::new(ConvType::Transposed, 4, 23, 23, 3, 4, 2).named("toy-backward");
    let opts = CompareOptions {
        baseline: Dataflow::RowStationary,
        ..CompareOptions::default()
    };
    let report = cmd_compare(&layer, &opts, &Config::default())?;
    print!("{}", report.render(Format::Table));
    println!();
    print!("{}", report.render(Format::Csv));
    let eco = report.layers[0].result(Dataflow::EcoFlow).expect("ran");
    println!("\necoflow: {:.2}x faster, {:.2}x the energy", eco.speedup, eco.energy_ratio);
    Ok(())
}
