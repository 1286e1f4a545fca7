//! Parse a configuration with overrides and named layers, show validation
//! errors and render the fully resolved file.

use dataflow_sim::harness::{find_layer, parse_config};

const TEXT: &str = r#"
schema = "dfsim-config/1"

[array]
rows = 12
cols = 14
quantize16 = true

[noc]
gon_bits = 128

[energy]
dram_pj = 180.0

[[layers]]
name = "my-backward"
conv_type = "transposed"
channels = 4
in_h = 21
in_w = 21
k = 5
num_filters = 8
stride = 2
"#;

fn main() -> dataflow_sim::Result<()> {
    let config = parse_config(TEXT)?;
    println!("array {}x{}, 16-bit {}", config.array.rows, config.array.cols, config.array.quantize16);
    println!("layer lookup: {}", find_layer("my-backward", &config)?.label());

    for bad in ["[array]\nrows = 0\n", "[noc]\ngon_bitz = 8\n", "schema = \"other/2\"\n"] {
        println!("rejected: {}", parse_config(bad).unwrap_err());
    }

    let tweaked = config.with_param("noc.gon_bits", "32")?;
    println!("\nresolved config after noc.gon_bits=32:\n{}", tweaked.to_toml());
    Ok(())
}
