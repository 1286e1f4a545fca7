//! Simulate a compiled layer with a cycle trace, check it against the
//! oracle and print per-PE and per-network activity.

use dataflow_sim::harness::operands;
use dataflow_sim::memory::{account_energy, EnergyModel};
use dataflow_sim::oracle::reference_output;
use dataflow_sim::sim::trace::{capture, parse_line};
use dataflow_sim::{compile, ArrayConfig, Dataflow, LayerSpec};

fn main() -> dataflow_sim::Result<()> {
    let layer: LayerSpec = "2x11x11/k3/f2/s2/dilated".parse()?;
    let cfg = ArrayConfig::default();
    let (a, b) = operands(&layer, 7, false);
    let compiled = compile(&layer, Dataflow::EcoFlow, &cfg)?;
    let (res, trace) = capture(&compiled, &a, &b, &cfg)?;

    let want = reference_output(&layer, &a, &b)?;
    let err = want.iter().zip(&res.output).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
    println!("{}: {} cycles, {:.1} us, utilization {:.2}, max error {err:e}", layer.label(), res.cycles, res.runtime_us, res.utilization);
    println!("events: {:?}", res.events);
    println!("stalls: {:?}", res.stalls);

    let e = account_energy(&res, &EnergyModel::default());
    println!("energy pJ: dram {} gb {} spad {} alu {} noc {} total {}", e.dram, e.gbuff, e.spad, e.alu, e.noc, e.total);

    let p = res.pe_stats(0, 0);
    println!("PE(0,0): busy {} gated {} idle {} stalled {}", p.busy, p.gated, p.idle, p.stall);

    let macs = trace.lines().filter_map(parse_line).filter(|l| l.source.starts_with("PE") && l.event.contains("MAC")).count();
    println!("\ntrace has {} lines, {macs} MAC events; first lines:", trace.lines().count());
    for line in trace.lines().take(8) {
        println!("  {line}");
    }
    Ok(())
}
