//! Padding arithmetic and zero-product fractions of the naive transposed
//! and dilated formulations, for a toy layer and the built-in corpus.

use dataflow_sim::harness::corpus;
use dataflow_sim::oracle::{naive_product_counts, padding_report, zero_mult_fraction};
use dataflow_sim::{ConvType, LayerSpec};

fn main() {
    // 5x5 input, 3x3 filter, stride 2: a 2x2 error plane.
    let toy = LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2);
    let p = padding_report(&toy);
    let (total, zeros) = naive_product_counts(&toy);
    println!(
        "toy layer: inner {} outer {} padded {}x{}; {} of {total} products are live ({:.2} zero)",
        p.inner_count,
        p.outer_count,
        p.padded_h,
        p.padded_w,
        total - zeros,
        p.zero_mult_fraction
    );

    println!("\n{:<36} {:>10}", "corpus layer", "zero frac");
    for l in corpus() {
        if l.conv_type != ConvType::Direct {
            println!("{:<36} {:>10.4}", l.name, zero_mult_fraction(&l));
        }
    }
}
