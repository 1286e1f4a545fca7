//! Compile a layer for each dataflow, save the program file, load it back
//! and inspect a PE's micro-op stream.

use dataflow_sim::compiler::program::PROGRAM_FORMAT;
use dataflow_sim::sim::trace::describe;
use dataflow_sim::{compile, ArrayConfig, CompiledLayer, Dataflow};

fn main() -> dataflow_sim::Result<()> {
    let layer = "4x15x15/k3/f4/s2/transposed".parse()?;
    let cfg = ArrayConfig::default();
    for df in Dataflow::ALL {
        let c = compile(&layer, df, &cfg)?;
        println!(
            "{:<8} passes {:>2}  macs {:>6}  padded-zero macs {:>6}  fold {}",
            df.name(),
            c.passes.len(),
            c.stats.total_macs,
            c.stats.structural_zero_macs,
            c.stats.group_factor
        );
    }

    let c = compile(&layer, Dataflow::EcoFlow, &cfg)?;
    let path = std::env::temp_dir().join("dfsim-example-program.json");
    c.save(&path)?;
    let back = CompiledLayer::load(&path)?;
    assert_eq!(back, c);
    println!("\nsaved {} ({PROGRAM_FORMAT}), {} bytes", path.display(), std::fs::metadata(&path)?.len());

    let prog = &back.passes[0].programs[0];
    println!("first micro-ops of PE({},{}):", prog.row, prog.col);
    for op in prog.ops.iter().filter(|o| !o.is_idle()).take(6) {
        println!("  {}", describe(op));
    }
    Ok(())
}
