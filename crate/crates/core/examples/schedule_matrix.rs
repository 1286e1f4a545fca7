//! Build the zero-free transposed schedule for one error plane step by
//! step and print which output each PE accumulates.

use dataflow_sim::compiler::schedule::{
    apply_grouping, assign_columns, check_verticality, circular_shift, label_multiplicity, label_products, symbolic_outer_product,
};

fn dump(title: &str, m: &dataflow_sim::compiler::schedule::ScheduleMatrix) {
    println!("{title} ({}x{} PEs)", m.pe_rows, m.pe_cols);
    for r in 0..m.pe_rows {
        for c in 0..m.pe_cols {
            let items: Vec<String> = m
                .pe(r, c)
                .iter()
                .map(|p| match p.label {
                    Some(l) => format!("w{}e{}>{}{}", p.w_index, p.e_index, l.row, l.col),
                    None => format!("w{}e{}>-", p.w_index, p.e_index),
                })
                .collect();
            println!("  PE({r},{c}): {}", items.join(" "));
        }
    }
}

fn main() -> dataflow_sim::Result<()> {
    let (k, s, errors) = (3, 2, (2, 2));
    let m = symbolic_outer_product(k, errors)?;
    let m = label_products(m, s)?;
    let (oh, ow, count) = label_multiplicity(&m);
    println!("{} products land on a {oh}x{ow} output plane:", count.iter().sum::<usize>());
    for row in count.chunks(ow) {
        println!("  {row:?}");
    }

    let m = assign_columns(m, 16, 16)?;
    let shifted = circular_shift(m, k, s);
    dump("after the circular shift", &shifted);
    match check_verticality(&shifted) {
        Ok(()) => println!("every output's products share one PE column"),
        Err(l) => println!("output ({}, {}) is split across columns", l.row, l.col),
    }

    // Fold onto a budget smaller than the error plane.
    let grouped = apply_grouping(shifted, 1, 2);
    println!("grouped onto {}x{} PEs, fold {:?}", grouped.pe_rows, grouped.pe_cols, grouped.group_factor);
    Ok(())
}
