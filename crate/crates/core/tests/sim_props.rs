//! Simulator behaviour over random small layers: functional agreement with
//! the oracle, per-PE cycle accounting, determinism and gating counts.

use dataflow_sim::harness::{operands, Config};
use dataflow_sim::harness::run::{max_abs_diff, tolerance};
use dataflow_sim::memory::{energy_of, EnergyModel};
use dataflow_sim::oracle::{naive_product_counts, reference_output};
use dataflow_sim::sim::EventCounters;
use dataflow_sim::{simulate_layer, ArrayConfig, ConvType, Dataflow, LayerSpec};
use proptest::prelude::*;

fn small_layer() -> impl Strategy<Value = LayerSpec> {
    (1usize..=4, 1usize..=3, 0usize..=5, 0usize..=5, 1usize..=2, 1usize..=2, 0usize..3, 1usize..=2).prop_map(
        |(k, s, dh, dw, c, f, t, batch)| {
            let conv = [ConvType::Direct, ConvType::Transposed, ConvType::Dilated][t];
            LayerSpec::new(conv, c, k + dh, k + dw, k, f, s).with_batch(batch)
        },
    )
}

fn dataflow() -> impl Strategy<Value = Dataflow> {
    (0usize..3).prop_map(|i| Dataflow::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn output_matches_oracle(layer in small_layer(), df in dataflow(), seed in 0u64..1000) {
        let cfg = ArrayConfig::default();
        let (a, b) = operands(&layer, seed, false);
        let want = reference_output(&layer, &a, &b).unwrap();
        let (_, res) = simulate_layer(&layer, df, &cfg, &a, &b).unwrap();
        prop_assert!(max_abs_diff(&res.output, &want) <= 1e-4, "{} {}", df.name(), layer.label());
    }

    #[test]
    fn cycle_accounting_and_determinism(layer in small_layer(), df in dataflow()) {
        let cfg = ArrayConfig::default();
        let (a, b) = operands(&layer, 3, false);
        let (_, r1) = simulate_layer(&layer, df, &cfg, &a, &b).unwrap();
        let (_, r2) = simulate_layer(&layer, df, &cfg, &a, &b).unwrap();
        prop_assert_eq!(&r1, &r2);
        for p in &r1.pe {
            prop_assert_eq!(p.busy + p.gated + p.idle, r1.cycles);
            prop_assert!(p.stall <= p.busy);
        }
        prop_assert!((0.0..=1.0).contains(&r1.utilization));
        prop_assert_eq!(r1.events.macs, layer.useful_macs());
    }

    #[test]
    fn padded_zeros_are_gated_not_computed(layer in small_layer()) {
        let cfg = ArrayConfig::default();
        let (a, b) = operands(&layer, 9, false);
        let (_, zeros) = naive_product_counts(&layer);
        let want = zeros * (layer.channels * layer.num_filters * layer.batch) as u64;
        let (_, rs) = simulate_layer(&layer, Dataflow::RowStationary, &cfg, &a, &b).unwrap();
        prop_assert_eq!(rs.events.gated_macs, want);
        let (_, eco) = simulate_layer(&layer, Dataflow::EcoFlow, &cfg, &a, &b).unwrap();
        prop_assert_eq!(eco.events.gated_macs, 0);
    }

    #[test]
    fn quantized_mode_stays_within_tolerance(layer in small_layer(), df in dataflow()) {
        let mut cfg = ArrayConfig::default();
        cfg.quantize16 = true;
        let (a, b) = operands(&layer, 4, true);
        let want = reference_output(&layer, &a, &b).unwrap();
        let (_, res) = simulate_layer(&layer, df, &cfg, &a, &b).unwrap();
        prop_assert!(max_abs_diff(&res.output, &want) <= tolerance(&want, true));
    }

    #[test]
    fn energy_is_linear_in_events(x in prop::array::uniform15(0u64..10_000), y in prop::array::uniform15(0u64..10_000)) {
        let ev = |v: [u64; 15]| EventCounters {
            macs: v[0], gated_macs: v[1], adds: v[2], rf_reads: v[3], rf_writes: v[4],
            gb_reads: v[5], gb_writes: v[6], gb_conflicts: v[7], dram_reads: v[8], dram_writes: v[9],
            noc_gin_wide: v[10], noc_gin_narrow: v[11], noc_gon: v[12], noc_local: v[13], noc_forward: v[14],
        };
        let sum: [u64; 15] = std::array::from_fn(|i| x[i] + y[i]);
        let m = EnergyModel::default();
        let (ex, ey, es) = (energy_of(&ev(x), &m), energy_of(&ev(y), &m), energy_of(&ev(sum), &m));
        prop_assert!((ex.total + ey.total - es.total).abs() <= 1e-9 * es.total.max(1.0));
        let parts = es.dram + es.gbuff + es.spad + es.alu + es.noc;
        prop_assert!((parts - es.total).abs() <= 1e-9 * es.total.max(1.0));
    }
}

#[test]
fn mismatched_array_is_rejected() {
    let layer = LayerSpec::new(ConvType::Transposed, 1, 7, 7, 3, 1, 2);
    let cfg = Config::default().array;
    let c = dataflow_sim::compile(&layer, Dataflow::EcoFlow, &cfg).unwrap();
    let (a, b) = operands(&layer, 1, false);
    let small = cfg.clone().with_dims(4, 4);
    assert!(dataflow_sim::run(&c, &a, &b, &small).is_err());
}
