//! Sweep the output-network bus width and the PE queue depth for one layer.

use dataflow_sim::harness::{cmd_sweep, CompareOptions, Config, Format};
use dataflow_sim::{Dataflow, LayerSpec};

fn main() -> dataflow_sim::Result<()> {
    let layer: LayerSpec = "4x19x19/k3/f4/s2/transposed".parse()?;
    let opts = CompareOptions {
        dataflows: vec![Dataflow::EcoFlow],
        baseline: Dataflow::RowStationary,
        seed: 1,
    };
    let config = Config::default();
    for (key, values) in [("noc.gon_bits", ["16", "64", "256"]), ("array.queue_depth", ["1", "4", "16"])] {
        let values: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let report = cmd_sweep(&layer, key, &values, &opts, &config)?;
        print!("{}", report.render(Format::Table));
        println!();
    }
    Ok(())
}
