//! Compare, sweep and network-report workflows.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compiler::program::CompiledLayer;
use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::harness::corpus::{amdahl_end_to_end, NetworkSpec};
use crate::harness::report::{DataflowResult, EndToEnd, LayerReport, Report};
use crate::layer::{Dataflow, LayerSpec};
use crate::memory::account_energy;
use crate::oracle;
use crate::sim::{run_with, simulate_layer, RunOptions, SimResult};
use crate::tensor::quantize16;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub dataflows: Vec<Dataflow>,
    /// Speedups and energy ratios are relative to this dataflow; it is run
    /// even when missing from `dataflows`.
    pub baseline: Dataflow,
    /// Seed of the random operand tensors.
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            dataflows: Dataflow::ALL.to_vec(),
            baseline: Dataflow::Matmul,
            seed: 1,
        }
    }
}

/// Uniform operands in [-1, 1), rounded to 16 bits when the array is.
pub fn operands(layer: &LayerSpec, seed: u64, quantize: bool) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f32> {
        (0..n)
            .map(|_| {
                let v: f32 = rng.gen_range(-1.0..1.0);
                if quantize {
                    quantize16(v)
                } else {
                    v
                }
            })
            .collect()
    };
    let a = draw(layer.a_len());
    let b = draw(layer.b_len());
    (a, b)
}

/// Allowed absolute deviation from the oracle, scaled by output magnitude.
pub fn tolerance(reference: &[f32], quantized: bool) -> f32 {
    let peak = reference.iter().fold(0f32, |m, v| m.max(v.abs()));
    let rel = if quantized { 1e-2 } else { 1e-4 };
    rel * (1.0 + peak)
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    if a.len() != b.len() {
        return f32::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max)
}

fn ordered(opts: &CompareOptions) -> Vec<Dataflow> {
    let mut list = Vec::new();
    for &d in &opts.dataflows {
        if !list.contains(&d) {
            list.push(d);
        }
    }
    if !list.contains(&opts.baseline) {
        list.push(opts.baseline);
    }
    list
}

/// Simulate `layer` under every dataflow concurrently, in list order.
fn run_all(layer: &LayerSpec, list: &[Dataflow], config: &Config, a: &[f32], b: &[f32]) -> Vec<Result<(CompiledLayer, SimResult)>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = list
            .iter()
            .map(|&df| s.spawn(move || simulate_layer(layer, df, &config.array, a, b)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Mismatch("simulation thread panicked".into()))))
            .collect()
    })
}

fn compare_layer(layer: &LayerSpec, opts: &CompareOptions, config: &Config, variant: Option<String>) -> Result<LayerReport> {
    layer.validate()?;
    let list = ordered(opts);
    let quant = config.array.quantize16;
    let (a, b) = operands(layer, opts.seed, quant);
    let reference = oracle::reference_output(layer, &a, &b)?;
    let tol = tolerance(&reference, quant);
    let mut sims = Vec::new();
    let mut worst = 0f32;
    for (df, res) in list.iter().zip(run_all(layer, &list, config, &a, &b)) {
        let (compiled, sim) = res?;
        let err = max_abs_diff(&sim.output, &reference);
        if !(err <= tol) {
            return Err(Error::Mismatch(format!(
                "{} on {}: output differs from the oracle by {err} (tolerance {tol})",
                df.name(),
                layer.label()
            )));
        }
        worst = worst.max(err);
        sims.push((*df, compiled.passes.len(), sim));
    }
    let base = sims.iter().find(|s| s.0 == opts.baseline).expect("baseline was run");
    let base_cycles = base.2.cycles as f64;
    let base_energy = account_energy(&base.2, &config.energy).total;
    let results = sims
        .iter()
        .map(|(df, passes, sim)| result_of(*df, *passes, sim, config, base_cycles, base_energy))
        .collect();
    Ok(LayerReport {
        variant,
        layer: layer.clone(),
        results,
        max_abs_error: worst,
    })
}

fn result_of(df: Dataflow, passes: usize, sim: &SimResult, config: &Config, base_cycles: f64, base_energy: f64) -> DataflowResult {
    let energy = account_energy(sim, &config.energy);
    DataflowResult {
        dataflow: df,
        cycles: sim.cycles,
        runtime_us: sim.runtime_us,
        utilization: sim.utilization,
        speedup: ratio(base_cycles, sim.cycles as f64),
        energy_ratio: ratio(energy.total, base_energy),
        energy,
        macs: sim.events.macs,
        gated_macs: sim.events.gated_macs,
        dram_reads: sim.events.dram_reads,
        dram_writes: sim.events.dram_writes,
        passes,
        stalls: sim.stalls,
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Run every requested dataflow on one layer, check each against the
/// oracle (and so against each other) and normalize to the baseline.
pub fn cmd_compare(layer: &LayerSpec, opts: &CompareOptions, config: &Config) -> Result<Report> {
    let mut report = Report::new(opts.baseline);
    report.layers.push(compare_layer(layer, opts, config, None)?);
    Ok(report)
}

/// Run an already compiled program on seeded operands, optionally writing
/// a trace, and check the output against the oracle.
pub fn cmd_simulate(compiled: &CompiledLayer, seed: u64, config: &Config, trace: Option<&mut dyn Write>) -> Result<Report> {
    let layer = &compiled.layer;
    let quant = config.array.quantize16;
    let (a, b) = operands(layer, seed, quant);
    let reference = oracle::reference_output(layer, &a, &b)?;
    let sim = run_with(compiled, &a, &b, &config.array, &RunOptions::default(), trace)?;
    let err = max_abs_diff(&sim.output, &reference);
    let tol = tolerance(&reference, quant);
    if !(err <= tol) {
        return Err(Error::Mismatch(format!(
            "{} on {}: output differs from the oracle by {err} (tolerance {tol})",
            compiled.dataflow.name(),
            layer.label()
        )));
    }
    let energy = account_energy(&sim, &config.energy).total;
    let mut report = Report::new(compiled.dataflow);
    report.layers.push(LayerReport {
        variant: None,
        layer: layer.clone(),
        results: vec![result_of(compiled.dataflow, compiled.passes.len(), &sim, config, sim.cycles as f64, energy)],
        max_abs_error: err,
    });
    Ok(report)
}

/// Compare one layer under each value of a config parameter (`section.key`).
pub fn cmd_sweep(layer: &LayerSpec, key: &str, values: &[String], opts: &CompareOptions, config: &Config) -> Result<Report> {
    let mut report = Report::new(opts.baseline);
    for v in values {
        let cfg = config.with_param(key, v)?;
        report.layers.push(compare_layer(layer, opts, &cfg, Some(format!("{key}={v}")))?);
    }
    Ok(report)
}

/// Compare the given layers plus every layer of `networks`, then add the
/// end-to-end estimate of each network for each dataflow.
pub fn cmd_report(layers: &[LayerSpec], networks: &[NetworkSpec], opts: &CompareOptions, config: &Config) -> Result<Report> {
    let mut report = Report::new(opts.baseline);
    let mut all: Vec<LayerSpec> = layers.to_vec();
    for n in networks {
        n.validate()?;
        for l in &n.layers {
            if !all.contains(&l.layer) {
                all.push(l.layer.clone());
            }
        }
    }
    for l in &all {
        report.layers.push(compare_layer(l, opts, config, None)?);
    }
    for n in networks {
        for df in ordered(opts) {
            let speedups: Vec<f64> = n
                .layers
                .iter()
                .map(|nl| {
                    report
                        .layers
                        .iter()
                        .find(|r| r.layer == nl.layer)
                        .and_then(|r| r.result(df))
                        .map(|r| r.speedup)
                        .expect("network layer compared")
                })
                .collect();
            report.end_to_end.push(EndToEnd {
                network: n.name.clone(),
                dataflow: df,
                speedup: amdahl_end_to_end(n, &speedups)?,
                illustrative: n.illustrative,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::ConvType;

    #[test]
    fn self_comparison_is_unity() {
        let layer = LayerSpec::new(ConvType::Direct, 1, 6, 6, 3, 1, 1);
        for df in Dataflow::ALL {
            let opts = CompareOptions {
                dataflows: vec![df],
                baseline: df,
                seed: 3,
            };
            let r = cmd_compare(&layer, &opts, &Config::default()).unwrap();
            let res = &r.layers[0].results;
            assert_eq!(res.len(), 1);
            assert_eq!(res[0].speedup, 1.0);
            assert_eq!(res[0].energy_ratio, 1.0);
        }
    }

    #[test]
    fn baseline_added_when_missing() {
        let layer = LayerSpec::new(ConvType::Transposed, 1, 7, 7, 3, 1, 2);
        let opts = CompareOptions {
            dataflows: vec![Dataflow::EcoFlow],
            baseline: Dataflow::RowStationary,
            seed: 1,
        };
        let r = cmd_compare(&layer, &opts, &Config::default()).unwrap();
        let names: Vec<Dataflow> = r.layers[0].results.iter().map(|x| x.dataflow).collect();
        assert_eq!(names, vec![Dataflow::EcoFlow, Dataflow::RowStationary]);
    }

    #[test]
    fn sweep_labels_variants() {
        let layer = LayerSpec::new(ConvType::Direct, 1, 6, 6, 3, 1, 1);
        let opts = CompareOptions {
            dataflows: vec![Dataflow::EcoFlow],
            baseline: Dataflow::EcoFlow,
            seed: 1,
        };
        let vals = vec!["2".to_string(), "8".to_string()];
        let r = cmd_sweep(&layer, "array.queue_depth", &vals, &opts, &Config::default()).unwrap();
        assert_eq!(r.layers.len(), 2);
        assert_eq!(r.layers[1].variant.as_deref(), Some("array.queue_depth=8"));
    }

    #[test]
    fn simulate_matches_compare() {
        let layer = LayerSpec::new(ConvType::Dilated, 2, 7, 7, 3, 2, 2);
        let cfg = Config::default();
        let compiled = crate::compile(&layer, Dataflow::EcoFlow, &cfg.array).unwrap();
        let mut trace = Vec::new();
        let s = cmd_simulate(&compiled, 5, &cfg, Some(&mut trace)).unwrap();
        let opts = CompareOptions {
            dataflows: vec![Dataflow::EcoFlow],
            baseline: Dataflow::EcoFlow,
            seed: 5,
        };
        let c = cmd_compare(&layer, &opts, &cfg).unwrap();
        assert_eq!(s.layers[0].results[0].cycles, c.layers[0].results[0].cycles);
        assert!(!trace.is_empty());
    }
}
