//! Schedule and compiled-program invariants over random geometries.

use std::collections::BTreeMap;

use dataflow_sim::compiler::program::{Send, Stream};
use dataflow_sim::compiler::schedule::{
    apply_expansion, apply_grouping, check_verticality, symbolic_dilated, transposed_schedule, ScheduleMatrix,
};
use dataflow_sim::noc::{configure, id_bits_required, row_ids_required};
use dataflow_sim::oracle::naive_product_counts;
use dataflow_sim::{compile, ArrayConfig, CompiledLayer, ConvType, Dataflow, LayerSpec};
use proptest::prelude::*;

fn per_label(m: &ScheduleMatrix) -> BTreeMap<(usize, usize), usize> {
    let mut out = BTreeMap::new();
    for p in m.columns.iter().flatten() {
        let l = p.label.expect("every product is labelled");
        *out.entry((l.row, l.col)).or_insert(0) += 1;
    }
    out
}

fn small_layer() -> impl Strategy<Value = LayerSpec> {
    (1usize..=5, 1usize..=3, 0usize..=6, 0usize..=6, 1usize..=3, 1usize..=3, 0usize..3).prop_map(
        |(k, s, dh, dw, c, f, t)| {
            let conv = [ConvType::Direct, ConvType::Transposed, ConvType::Dilated][t];
            LayerSpec::new(conv, c, k + dh, k + dw, k, f, s)
        },
    )
}

fn compiled(layer: &LayerSpec, df: Dataflow) -> CompiledLayer {
    compile(layer, df, &ArrayConfig::default()).expect("small layers compile")
}

/// Outputs with at least one accumulation term. Transposed outputs that
/// fall between strided error positions have none and stay zero.
fn covered_outputs(layer: &LayerSpec) -> usize {
    if layer.conv_type != ConvType::Transposed {
        return layer.out_len();
    }
    let (he, we) = layer.out_dims();
    let (oh, ow) = layer.transposed_dims();
    let (k, s) = (layer.k, layer.stride);
    let axis = |len: usize, n: usize| (0..len).filter(|&o| (0..n).any(|a| o >= s * a && o - s * a < k)).count();
    axis(oh, he) * axis(ow, we) * layer.channels * layer.batch
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transposed_schedule_is_vertical_and_complete(k in 1usize..=6, s in 1usize..=4, he in 1usize..=7, we in 1usize..=7) {
        let m = transposed_schedule(k, s, (he, we), 13, 15).unwrap();
        prop_assert!(check_verticality(&m).is_ok());
        prop_assert_eq!(m.product_count(), k * k * he * we);
        // each output gets one product per (error, filter) pair that lands on it
        let counts = per_label(&m);
        for ((r, c), n) in counts {
            let axis = |o: usize, len: usize| (0..len).filter(|a| o >= s * a && o - s * a < k).count();
            prop_assert_eq!(n, axis(r, he) * axis(c, we));
        }
    }

    #[test]
    fn broadcast_order_depends_on_kernel_and_stride_only(k in 1usize..=6, s in 1usize..=4, a in 1usize..=7, b in 1usize..=7) {
        let x = transposed_schedule(k, s, (a, b), 13, 15).unwrap();
        let y = transposed_schedule(k, s, (b, a), 4, 4).unwrap();
        prop_assert_eq!(x.broadcast_order(), y.broadcast_order());
    }

    #[test]
    fn grouping_conserves_products(k in 1usize..=4, s in 1usize..=3, he in 2usize..=9, we in 2usize..=9, r in 1usize..=4, c in 1usize..=4) {
        let full = transposed_schedule(k, s, (he, we), 16, 16).unwrap();
        let folded = apply_grouping(full.clone(), r, c);
        prop_assert!(folded.pe_rows <= r && folded.pe_cols <= c);
        prop_assert_eq!(per_label(&folded), per_label(&full));
    }

    #[test]
    fn dilated_schedule_conserves_products(k in 1usize..=5, s in 1usize..=3, he in 1usize..=5, we in 1usize..=5, extra in 0usize..3, v in 1usize..=3) {
        let (h, w) = (s * (he - 1) + k + extra, s * (we - 1) + k);
        let m = symbolic_dilated(k, s, (he, we), (h, w)).unwrap();
        let inside = (0..k * k)
            .map(|uv| (0..he * we).filter(|ab| s * (ab / we) + uv / k < h && s * (ab % we) + uv % k < w).count())
            .sum::<usize>();
        prop_assert_eq!(m.product_count(), inside);
        let expanded = apply_expansion(m.clone(), v);
        prop_assert_eq!(per_label(&expanded), per_label(&m));
        prop_assert!(check_verticality(&expanded).is_ok());
    }

    #[test]
    fn ecoflow_is_zero_free_and_baselines_pay_padding(layer in small_layer()) {
        let eco = compiled(&layer, Dataflow::EcoFlow);
        prop_assert_eq!(eco.stats.structural_zero_macs, 0);
        prop_assert_eq!(eco.stats.total_macs, layer.useful_macs());
        let (_, zeros) = naive_product_counts(&layer);
        let want = zeros * (layer.channels * layer.num_filters * layer.batch) as u64;
        for df in [Dataflow::RowStationary, Dataflow::Matmul] {
            prop_assert_eq!(compiled(&layer, df).stats.structural_zero_macs, want, "{}", df.name());
        }
    }

    #[test]
    fn every_slot_leaves_once_and_groups_reach_exactly_their_members(layer in small_layer()) {
        let c = compiled(&layer, Dataflow::EcoFlow);
        // delivery exactness only; slot capacity is a separate sizing question
        let mut noc = ArrayConfig::default().noc_for(Dataflow::EcoFlow).clone();
        (noc.row_id_slots, noc.col_id_slots, noc.id_bits) = (usize::MAX, usize::MAX, 32);
        let mut written = Vec::new();
        for pass in &c.passes {
            for p in &pass.programs {
                let outs = p.ops.iter().filter(|o| matches!(o.send, Some(Send::WriteOut { .. }))).count();
                prop_assert_eq!(outs, p.out_addrs.len());
                written.extend(p.out_addrs.iter().copied());
            }
            let ids = configure(&pass.groups, &noc).unwrap();
            for g in &pass.groups.groups {
                prop_assert_eq!(ids.reach(g.stream, ids.tags[&g.id]), g.members.clone());
                prop_assert!(matches!(g.stream, Stream::Weight | Stream::Input));
            }
        }
        // every output with at least one term is written; repeats are partial sums
        written.sort_unstable();
        written.dedup();
        prop_assert_eq!(written.len(), covered_outputs(&layer));
    }

    #[test]
    fn program_files_round_trip(layer in small_layer(), df in 0usize..3) {
        let c = compiled(&layer, Dataflow::ALL[df]);
        prop_assert_eq!(CompiledLayer::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}

#[test]
fn id_sizing_reference_points() {
    assert_eq!((row_ids_required(7, 2), id_bits_required(7, 2)), (4, 4));
    assert_eq!(row_ids_required(5, 1), 5);
    assert_eq!(id_bits_required(11, 4), 5);
}

#[test]
fn compilation_is_deterministic() {
    let layer = LayerSpec::new(ConvType::Transposed, 3, 13, 13, 3, 2, 2);
    for df in Dataflow::ALL {
        assert_eq!(compiled(&layer, df), compiled(&layer, df));
    }
}
