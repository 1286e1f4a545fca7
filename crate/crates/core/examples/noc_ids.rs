//! Row and column ID sizing of the multicast network, and the IDs the
//! compiler actually programs for a layer.

use dataflow_sim::noc::{configure, id_bits_required, row_ids_required};
use dataflow_sim::{compile, ArrayConfig, Dataflow, LayerSpec};

fn main() -> dataflow_sim::Result<()> {
    println!("{:>3} {:>3} {:>8} {:>8}", "K", "S", "row IDs", "ID bits");
    for (k, s) in [(3, 1), (3, 2), (5, 1), (5, 2), (7, 2), (11, 4)] {
        println!("{k:>3} {s:>3} {:>8} {:>8}", row_ids_required(k, s), id_bits_required(k, s));
    }

    let cfg = ArrayConfig::default();
    let layer: LayerSpec = "2x15x15/k3/f2/s2/transposed".parse()?;
    let c = compile(&layer, Dataflow::EcoFlow, &cfg)?;
    let pass = &c.passes[0];
    let ids = configure(&pass.groups, cfg.noc_for(Dataflow::EcoFlow))?;
    println!(
        "\n{}: {} multicast groups, at most {} row IDs per bus and {} column IDs per PE, {} tag bits",
        layer.label(),
        pass.groups.groups.len(),
        ids.max_row_slots(),
        ids.max_col_slots(),
        ids.bits_used()
    );
    Ok(())
}
