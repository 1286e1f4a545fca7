//! The acceptance suite: ten numbered checks over the oracle, compiler,
//! simulator and harness, shared by `dfsim validate` and the `acceptance`
//! test target.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compiler::builder::check_pass;
use crate::compiler::ecoflow::{dilated_plane_schedule, transposed_plane_schedule};
use crate::compiler::schedule::{check_verticality, Label, ScheduleMatrix};
use crate::compiler::compile;
use crate::compiler::program::CompiledLayer;
use crate::error::Result;
use crate::harness::config::Config;
use crate::harness::corpus::{amdahl_end_to_end, corpus, corpus_layers, NetworkLayer, NetworkSpec};
use crate::harness::report::Report;
use crate::harness::run::{cmd_compare, max_abs_diff, operands, CompareOptions};
use crate::layer::{ConvType, Dataflow, LayerSpec};
use crate::noc::{id_bits_required, row_ids_required};
use crate::oracle::{naive_product_counts, padding_report, reference_output, zero_mult_fraction};
use crate::sim::simulate_layer;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// 0 is the configuration check, 1..=10 the numbered criteria.
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(id: u8, name: &'static str, failures: Vec<String>, ok: String) -> Self {
        let passed = failures.is_empty();
        Outcome {
            id,
            name,
            passed,
            detail: if passed { ok } else { failures.join("; ") },
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    /// Random geometries for the equivalence and invariant checks; each is
    /// run as every convolution type under every dataflow.
    pub random_layers: usize,
    pub seed: u64,
    /// Test hook: corrupt one simulated output so the equivalence check
    /// must report it.
    pub inject_mismatch: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            random_layers: 50,
            seed: 2024,
            inject_mismatch: false,
        }
    }
}

/// Configuration check followed by criteria 1 through 10.
pub fn cmd_validate(config: &Config, opts: &ValidateOptions) -> Vec<Outcome> {
    let cfg_check = config.array.validate().and_then(|_| config.energy.validate());
    let mut out = vec![Outcome::new(
        0,
        "configuration",
        cfg_check.err().map(|e| e.to_string()).into_iter().collect(),
        "array, network, memory and energy parameters valid".into(),
    )];
    if !out[0].passed {
        return out;
    }
    out.extend(criteria(config, opts));
    out
}

pub fn criteria(config: &Config, opts: &ValidateOptions) -> Vec<Outcome> {
    let (c5, c6) = equivalence_and_invariants(config, opts);
    let (c7, c8) = speedups_and_energy(config);
    vec![
        padding(),
        zero_fractions(),
        noc_ids(),
        zero_freedom(config),
        c5,
        c6,
        c7,
        c8,
        determinism(config),
        amdahl(),
    ]
}

fn err<T>(r: Result<T>, what: &str, failures: &mut Vec<String>) -> Option<T> {
    r.map_err(|e| failures.push(format!("{what}: {e}"))).ok()
}

/// 2x2 errors, 3x3 filter, stride 2: the single-plane example layer.
fn example_layer() -> LayerSpec {
    LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2)
}

pub fn padding() -> Outcome {
    let p = padding_report(&example_layer());
    let mut f = Vec::new();
    if (p.inner_count, p.outer_count) != (5, 40) {
        f.push(format!("N=2 K=3 S=2 gives inner {} outer {}, want 5 and 40", p.inner_count, p.outer_count));
    }
    Outcome::new(1, "padding counts", f, format!("inner {} outer {}", p.inner_count, p.outer_count))
}

pub fn zero_fractions() -> Outcome {
    let mut f = Vec::new();
    let mut lowest = f64::INFINITY;
    let mut n = 0;
    for l in corpus().iter().filter(|l| l.conv_type == ConvType::Transposed && l.stride == 2) {
        let z = zero_mult_fraction(l);
        lowest = lowest.min(z);
        n += 1;
        if z <= 0.70 {
            f.push(format!("{} zero fraction {z:.4} <= 0.70", l.label()));
        }
    }
    let (total, zeros) = naive_product_counts(&example_layer());
    if (total, total - zeros) != (225, 36) {
        f.push(format!("example layer has {} of {total} live products, want 36 of 225", total - zeros));
    }
    let z = zero_mult_fraction(&example_layer());
    if (z - 0.84).abs() > 1e-12 {
        f.push(format!("example layer fraction {z}, want 0.84"));
    }
    Outcome::new(
        2,
        "zero-multiplication fractions",
        f,
        format!("{n} stride-2 layers, lowest {lowest:.4}; example {z:.2}"),
    )
}

pub fn noc_ids() -> Outcome {
    let got = [row_ids_required(7, 2), id_bits_required(7, 2), row_ids_required(5, 1), id_bits_required(11, 4)];
    let mut f = Vec::new();
    if got != [4, 4, 5, 5] {
        f.push(format!("(K7S2 ids, bits, K5S1 ids, K11S4 bits) = {got:?}, want [4, 4, 5, 5]"));
    }
    Outcome::new(3, "NoC ID sizing", f, "K7/S2: 4 IDs x 4 bits; K5/S1: 5 IDs; K11/S4: 5 bits".into())
}

/// Zero-freedom of every zero-free compile and the exact padded-zero count
/// of the baselines.
pub fn zero_freedom(config: &Config) -> Outcome {
    let mut f = Vec::new();
    let mut products = 0u64;
    let layers = corpus();
    for l in &layers {
        if let Some(c) = err(compile(l, Dataflow::EcoFlow, &config.array), &l.label(), &mut f) {
            products += c.stats.total_macs;
            if c.stats.structural_zero_macs != 0 {
                f.push(format!("{}: {} zero products", l.label(), c.stats.structural_zero_macs));
            }
        }
    }
    let probe = corpus_layers()[2].desk(ConvType::Transposed);
    let (_, zeros) = naive_product_counts(&probe);
    let want = zeros * (probe.channels * probe.num_filters * probe.batch) as u64;
    for df in [Dataflow::RowStationary, Dataflow::Matmul] {
        if let Some(c) = err(compile(&probe, df, &config.array), &probe.label(), &mut f) {
            if c.stats.structural_zero_macs != want {
                f.push(format!(
                    "{} on {}: {} zero products, oracle count {want}",
                    df.name(),
                    probe.label(),
                    c.stats.structural_zero_macs
                ));
            }
        }
    }
    Outcome::new(
        4,
        "zero-freedom",
        f,
        format!(
            "{} corpus layers, {products} products, none zero; baselines carry {want} padded zeros on {}",
            layers.len(),
            probe.label()
        ),
    )
}

/// Random desk-scale geometry: K <= 7, S <= 4, N <= 16, channels <= 4.
pub fn random_layer(rng: &mut ChaCha8Rng, conv: ConvType) -> LayerSpec {
    let k = rng.gen_range(1..=7);
    let s = rng.gen_range(1..=4);
    let n = rng.gen_range(k..=16);
    let m = rng.gen_range(k..=16);
    let c = rng.gen_range(1..=4);
    let f = rng.gen_range(1..=4);
    LayerSpec::new(conv, c, n, m, k, f, s)
}

/// Oracle accumulation terms per output element of one plane:
/// `(broadcast index, multicast index)` pairs in schedule numbering.
fn oracle_terms(layer: &LayerSpec) -> BTreeMap<Label, Vec<(usize, usize)>> {
    let (he, we) = layer.out_dims();
    let (k, s) = (layer.k, layer.stride);
    let mut terms: BTreeMap<Label, Vec<(usize, usize)>> = BTreeMap::new();
    match layer.conv_type {
        ConvType::Transposed => {
            // stride-1 correlation of the padded errors with the rotated filter
            let (ph, pw) = (s * (he - 1) + 1 + 2 * (k - 1), s * (we - 1) + 1 + 2 * (k - 1));
            let live = |p: usize, n: usize| p >= k - 1 && (p - (k - 1)) % s == 0 && (p - (k - 1)) / s < n;
            for y in 0..ph - k + 1 {
                for x in 0..pw - k + 1 {
                    for i in 0..k {
                        for j in 0..k {
                            if live(y + i, he) && live(x + j, we) {
                                let (a, b) = ((y + i - (k - 1)) / s, (x + j - (k - 1)) / s);
                                let w = (k - 1 - i) * k + (k - 1 - j);
                                terms.entry(Label { row: y, col: x }).or_default().push((w, a * we + b));
                            }
                        }
                    }
                }
            }
        }
        _ => {
            for u in 0..k {
                for v in 0..k {
                    for a in 0..he {
                        for b in 0..we {
                            let (y, x) = (s * a + u, s * b + v);
                            if y < layer.in_h && x < layer.in_w {
                                terms.entry(Label { row: u, col: v }).or_default().push((a * we + b, y * layer.in_w + x));
                            }
                        }
                    }
                }
            }
        }
    }
    for t in terms.values_mut() {
        t.sort_unstable();
    }
    terms
}

fn schedule_checks(layer: &LayerSpec, m: &ScheduleMatrix, f: &mut Vec<String>) {
    let name = layer.label();
    if let Err(l) = check_verticality(m) {
        f.push(format!("{name}: label ({}, {}) is not on one contiguous column run", l.row, l.col));
    }
    let want = oracle_terms(layer);
    let mut got: BTreeMap<Label, Vec<(usize, usize)>> = BTreeMap::new();
    for p in m.columns.iter().flatten() {
        match p.label {
            Some(l) => got.entry(l).or_default().push((p.w_index, p.e_index)),
            None => f.push(format!("{name}: unlabelled product")),
        }
    }
    for t in got.values_mut() {
        t.sort_unstable();
    }
    let expected: usize = want.values().map(Vec::len).sum();
    if m.product_count() != expected {
        f.push(format!("{name}: {} products, oracle has {expected} terms", m.product_count()));
    }
    if layer.conv_type == ConvType::Transposed {
        let (he, we) = layer.out_dims();
        if m.product_count() != layer.k * layer.k * he * we {
            f.push(format!("{name}: product count is not K^2 x errors"));
        }
    }
    if got != want {
        f.push(format!("{name}: per-label product multisets differ from the oracle terms"));
    }
}

fn compiled_checks(layer: &LayerSpec, df: Dataflow, c: &CompiledLayer, f: &mut Vec<String>) {
    let name = format!("{} on {}", df.name(), layer.label());
    for (i, p) in c.passes.iter().enumerate() {
        if let Err(e) = check_pass(p) {
            f.push(format!("{name} pass {i}: {e}"));
        }
    }
    let live = c.stats.total_macs - c.stats.structural_zero_macs;
    if live != layer.useful_macs() {
        f.push(format!("{name}: {live} live products, layer has {}", layer.useful_macs()));
    }
    if df == Dataflow::EcoFlow && c.stats.structural_zero_macs != 0 {
        f.push(format!("{name}: zero products in a zero-free schedule"));
    }
}

/// Criteria 5 and 6 over one shared random corpus.
pub fn equivalence_and_invariants(config: &Config, opts: &ValidateOptions) -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut f5, mut f6) = (Vec::new(), Vec::new());
    let (mut runs, mut worst) = (0usize, 0f32);
    let mut injected = opts.inject_mismatch;
    for _ in 0..opts.random_layers {
        let base = random_layer(&mut rng, ConvType::Direct);
        for conv in [ConvType::Direct, ConvType::Transposed, ConvType::Dilated] {
            let layer = base.clone().with_type(conv);
            match conv {
                ConvType::Transposed => {
                    if let Some(m) = err(transposed_plane_schedule(&layer, &config.array), &layer.label(), &mut f6) {
                        schedule_checks(&layer, &m, &mut f6);
                    }
                }
                ConvType::Dilated => {
                    if let Some(m) = err(dilated_plane_schedule(&layer, &config.array), &layer.label(), &mut f6) {
                        schedule_checks(&layer, &m, &mut f6);
                    }
                }
                ConvType::Direct => {}
            }
            let (a, b) = operands(&layer, rng.gen(), false);
            let Some(reference) = err(reference_output(&layer, &a, &b), &layer.label(), &mut f5) else {
                continue;
            };
            for df in Dataflow::ALL {
                let what = format!("{} on {}", df.name(), layer.label());
                let Some((compiled, mut sim)) = err(simulate_layer(&layer, df, &config.array, &a, &b), &what, &mut f5) else {
                    continue;
                };
                compiled_checks(&layer, df, &compiled, &mut f6);
                if injected {
                    sim.output[0] += 1.0;
                    injected = false;
                }
                let e = max_abs_diff(&sim.output, &reference);
                runs += 1;
                worst = worst.max(e);
                if !(e <= 1e-4) {
                    f5.push(format!("{what}: max |diff| {e:.3e} > 1e-4"));
                }
            }
        }
    }
    let n = opts.random_layers;
    (
        Outcome::new(
            5,
            "functional equivalence",
            f5,
            format!("{n} geometries, {runs} simulations, worst |diff| {worst:.2e}"),
        ),
        Outcome::new(
            6,
            "compiler invariants",
            f6,
            format!("verticality, completeness and conservation hold on {n} geometries"),
        ),
    )
}

fn pair(layer: &LayerSpec, config: &Config) -> Result<Report> {
    let opts = CompareOptions {
        dataflows: vec![Dataflow::EcoFlow, Dataflow::RowStationary],
        baseline: Dataflow::RowStationary,
        seed: 1,
    };
    cmd_compare(layer, &opts, config)
}

/// Criteria 7 and 8 on desk-scale corpus layers.
pub fn speedups_and_energy(config: &Config) -> (Outcome, Outcome) {
    let all = corpus_layers();
    let find = |net: &str, layer: &str| all.iter().find(|c| c.network == net && c.layer == layer).expect("corpus layer");
    let cases = [
        (find("resnet50", "conv3").desk(ConvType::Transposed), 3.0),
        (find("alexnet", "conv1").desk(ConvType::Transposed), 8.0),
        (find("resnet50", "conv3").desk(ConvType::Dilated), 2.5),
    ];
    let (mut f7, mut f8) = (Vec::new(), Vec::new());
    let mut seen = Vec::new();
    let mut energy_note = String::new();
    for (i, (layer, target)) in cases.iter().enumerate() {
        let Some(r) = err(pair(layer, config), &layer.label(), &mut f7) else {
            if i == 0 {
                f8.push("energy layer did not run".into());
            }
            continue;
        };
        let eco = r.layers[0].result(Dataflow::EcoFlow).expect("ran");
        let rs = r.layers[0].result(Dataflow::RowStationary).expect("ran");
        seen.push(format!("{} {:.2}x (>= {target})", layer.label(), eco.speedup));
        if !(eco.speedup >= *target) {
            f7.push(format!("{}: speedup {:.3} < {target}", layer.label(), eco.speedup));
        }
        if i == 0 {
            if !(eco.energy.total < rs.energy.total) {
                f8.push(format!("total energy {:.4e} pJ is not below {:.4e}", eco.energy.total, rs.energy.total));
            }
            let spread = (eco.energy.dram - rs.energy.dram).abs() / rs.energy.dram.max(f64::MIN_POSITIVE);
            if !(spread <= 0.05) {
                f8.push(format!("DRAM energy differs by {:.1}%", spread * 100.0));
            }
            energy_note = format!(
                "{}: total {:.3e} vs {:.3e} pJ, DRAM {:.3e} vs {:.3e} pJ",
                layer.label(),
                eco.energy.total,
                rs.energy.total,
                eco.energy.dram,
                rs.energy.dram
            );
        }
    }
    (
        Outcome::new(7, "speedups over row stationary", f7, seen.join(", ")),
        Outcome::new(8, "energy trends", f8, energy_note),
    )
}

pub fn determinism(config: &Config) -> Outcome {
    let layer = corpus_layers()
        .iter()
        .find(|c| c.network == "inception")
        .expect("corpus layer")
        .desk(ConvType::Transposed);
    let opts = CompareOptions::default();
    let mut f = Vec::new();
    let a = err(cmd_compare(&layer, &opts, config), &layer.label(), &mut f);
    let b = err(cmd_compare(&layer, &opts, config), &layer.label(), &mut f);
    let mut bytes = 0;
    if let (Some(a), Some(b)) = (a, b) {
        let (ja, jb) = (a.to_json(), b.to_json());
        bytes = ja.len();
        if ja != jb {
            f.push("two compare runs produced different JSON".into());
        }
    }
    Outcome::new(9, "determinism", f, format!("two compare reports on {} identical ({bytes} bytes)", layer.label()))
}

pub fn amdahl() -> Outcome {
    let layer = example_layer();
    let net = NetworkSpec {
        name: "synthetic".into(),
        batch: 1,
        layers: [0.5, 0.3]
            .iter()
            .map(|&fraction| NetworkLayer {
                layer: layer.clone(),
                fraction,
            })
            .collect(),
        illustrative: true,
    };
    let mut f = Vec::new();
    let got = amdahl_end_to_end(&net, &[4.0, 2.0]).unwrap_or(f64::NAN);
    if !((got - 2.105).abs() <= 1e-3) {
        f.push(format!("estimate {got}, want 2.105"));
    }
    Outcome::new(10, "Amdahl end-to-end estimate", f, format!("{{0.5 -> 4x, 0.3 -> 2x}} gives {got:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        for o in [padding(), zero_fractions(), noc_ids(), amdahl()] {
            assert!(o.passed, "{}", o.line());
        }
    }

    #[test]
    fn small_random_corpus_passes_and_injection_is_caught() {
        let cfg = Config::default();
        let opts = ValidateOptions {
            random_layers: 2,
            ..Default::default()
        };
        let (c5, c6) = equivalence_and_invariants(&cfg, &opts);
        assert!(c5.passed && c6.passed, "{}\n{}", c5.line(), c6.line());
        let bad = ValidateOptions {
            inject_mismatch: true,
            ..opts
        };
        assert!(!equivalence_and_invariants(&cfg, &bad).0.passed);
    }

    #[test]
    fn bad_config_fails_first_check() {
        let mut cfg = Config::default();
        cfg.energy.gb_pj = f64::NAN;
        let out = cmd_validate(&cfg, &ValidateOptions::default());
        assert_eq!(out.len(), 1);
        assert!(!out[0].passed);
    }
}
