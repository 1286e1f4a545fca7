//! Per-layer comparison plus the end-to-end network estimate, saved as a
//! JSON report and re-rendered from disk.

use dataflow_sim::harness::{
    amdahl_end_to_end, cmd_report, CompareOptions, Config, Format, NetworkLayer, NetworkSpec, Report,
};
use dataflow_sim::{Dataflow, LayerSpec};

fn main() -> dataflow_sim::Result<()> {
    let layer = |s: &str| -> LayerSpec { s.parse().expect("valid spec") };
    let net = NetworkSpec {
        name: "toy-training".into(),
        batch: 1,
        layers: vec![
            NetworkLayer { layer: layer("4x17x17/k3/f4/s2/transposed"), fraction: 0.3 },
            NetworkLayer { layer: layer("4x17x17/k3/f4/s2/dilated"), fraction: 0.3 },
        ],
        illustrative: true,
    };
    let opts = CompareOptions {
        dataflows: vec![Dataflow::EcoFlow],
        baseline: Dataflow::RowStationary,
        seed: 1,
    };
    let report = cmd_report(&[], std::slice::from_ref(&net), &opts, &Config::default())?;
    print!("{}", report.render(Format::Table));

    let path = std::env::temp_dir().join("dfsim-example-report.json");
    std::fs::write(&path, report.to_json())?;
    let back = Report::from_json(&std::fs::read_to_string(&path)?)?;
    assert_eq!(back, report);

    // Amdahl by hand: 40% of the time is untouched.
    let e2e = amdahl_end_to_end(&net, &[4.0, 2.0])?;
    println!("\nwith layer speedups 4x and 2x the network runs {e2e:.3}x faster");
    Ok(())
}
