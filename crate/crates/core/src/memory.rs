//! Global buffer, DRAM, energy accounting and processing-pass planning.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::compiler::{set_geometry, SetGeometry};
use crate::error::{Error, Result};
use crate::layer::{ConvType, Dataflow, LayerSpec};
use crate::noc::Network;
use crate::sim::{ArrayConfig, EventCounters, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbConfig {
    pub capacity_bytes: usize,
    pub banks: usize,
}

impl Default for GbConfig {
    fn default() -> Self {
        Self {
            capacity_bytes: 108 * 1024,
            banks: 27,
        }
    }
}

/// Banked global buffer with one read and one write port per bank.
#[derive(Debug, Clone)]
pub struct GlobalBuffer {
    pub config: GbConfig,
    read_free: Vec<u64>,
    write_free: Vec<u64>,
    pub reads: u64,
    pub writes: u64,
    pub conflicts: u64,
}

impl GlobalBuffer {
    pub fn new(config: GbConfig) -> Self {
        let banks = config.banks.max(1);
        Self {
            config,
            read_free: vec![0; banks],
            write_free: vec![0; banks],
            reads: 0,
            writes: 0,
            conflicts: 0,
        }
    }

    pub fn bank_of(&self, addr: u32) -> usize {
        addr as usize % self.read_free.len()
    }

    /// Book a port on `bank` at or after `cycle`; returns the cycle granted.
    pub fn gb_access(&mut self, bank: usize, kind: AccessKind, cycle: u64) -> u64 {
        let port = match kind {
            AccessKind::Read => &mut self.read_free[bank],
            AccessKind::Write => &mut self.write_free[bank],
        };
        let granted = cycle.max(*port);
        if granted > cycle {
            self.conflicts += 1;
        }
        *port = granted + 1;
        match kind {
            AccessKind::Read => self.reads += 1,
            AccessKind::Write => self.writes += 1,
        }
        granted
    }

    /// Whether `bank`'s port of `kind` is free at `cycle`.
    pub fn port_free(&self, bank: usize, kind: AccessKind, cycle: u64) -> bool {
        match kind {
            AccessKind::Read => self.read_free[bank] <= cycle,
            AccessKind::Write => self.write_free[bank] <= cycle,
        }
    }

    pub fn capacity_words(&self, word_bits: usize) -> usize {
        self.config.capacity_bytes * 8 / word_bits
    }
}

/// DRAM abstracted to a fixed latency and a bandwidth cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramModel {
    pub latency_cycles: u64,
    pub bytes_per_cycle: f64,
}

impl Default for DramModel {
    fn default() -> Self {
        // 1866 MT/s x 8 B per transfer, seen from a 200 MHz core clock
        Self {
            latency_cycles: 100,
            bytes_per_cycle: 1866.0e6 * 8.0 / 200.0e6,
        }
    }
}

impl DramModel {
    pub fn validate(&self) -> Result<()> {
        if self.latency_cycles == 0 || self.bytes_per_cycle.is_nan() || self.bytes_per_cycle <= 0.0 {
            return Err(Error::Config("dram latency and bandwidth must be > 0".into()));
        }
        Ok(())
    }
}

/// Running DRAM channel state inside one simulation.
#[derive(Debug, Clone)]
pub struct DramChannel {
    pub model: DramModel,
    busy_until: f64,
    pub reads: u64,
    pub writes: u64,
}

impl DramChannel {
    pub fn new(model: DramModel) -> Self {
        Self {
            model,
            busy_until: 0.0,
            reads: 0,
            writes: 0,
        }
    }

    /// Issue a transfer at `cycle`; returns the cycle the data is available.
    pub fn dram_access(&mut self, bytes: usize, kind: AccessKind, cycle: u64) -> u64 {
        let start = self.busy_until.max(cycle as f64);
        self.busy_until = start + bytes as f64 / self.model.bytes_per_cycle;
        match kind {
            AccessKind::Read => self.reads += 1,
            AccessKind::Write => self.writes += 1,
        }
        self.busy_until.ceil() as u64 + self.model.latency_cycles
    }
}

/// Per-event energies in pJ per 16-bit word.
///
/// These are 45nm-class defaults meant to be edited; they set relative costs
/// (DRAM >> GB > NoC > RF ~ MAC), not absolute silicon numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    pub dram_pj: f64,
    pub gb_pj: f64,
    pub spad_pj: f64,
    pub mac_pj: f64,
    pub add_pj: f64,
    pub gin_pj: f64,
    pub gon_pj: f64,
    pub local_pj: f64,
    pub forward_pj: f64,
    /// Multiplier applied to every cost (1.4 approximates 45nm -> 65nm).
    pub tech_scale: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            dram_pj: 200.0,
            gb_pj: 6.0,
            spad_pj: 1.0,
            mac_pj: 1.0,
            add_pj: 0.4,
            gin_pj: 2.0,
            gon_pj: 2.0,
            local_pj: 1.0,
            forward_pj: 1.0,
            tech_scale: 1.0,
        }
    }
}

impl EnergyModel {
    pub fn zero() -> Self {
        Self {
            dram_pj: 0.0,
            gb_pj: 0.0,
            spad_pj: 0.0,
            mac_pj: 0.0,
            add_pj: 0.0,
            gin_pj: 0.0,
            gon_pj: 0.0,
            local_pj: 0.0,
            forward_pj: 0.0,
            tech_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("dram_pj", self.dram_pj),
            ("gb_pj", self.gb_pj),
            ("spad_pj", self.spad_pj),
            ("mac_pj", self.mac_pj),
            ("add_pj", self.add_pj),
            ("gin_pj", self.gin_pj),
            ("gon_pj", self.gon_pj),
            ("local_pj", self.local_pj),
            ("forward_pj", self.forward_pj),
            ("tech_scale", self.tech_scale),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("energy.{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn noc_pj(&self, net: Network) -> f64 {
        match net {
            Network::GinWide | Network::GinNarrow => self.gin_pj,
            Network::Gon => self.gon_pj,
            Network::Local => self.local_pj,
            Network::Forward => self.forward_pj,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dram: f64,
    pub gbuff: f64,
    pub spad: f64,
    pub alu: f64,
    pub noc: f64,
    pub total: f64,
}

/// Energy of a counter set: each category is counters x unit cost.
pub fn energy_of(ev: &EventCounters, model: &EnergyModel) -> EnergyBreakdown {
    let s = model.tech_scale;
    let dram = (ev.dram_reads + ev.dram_writes) as f64 * model.dram_pj * s;
    let gbuff = (ev.gb_reads + ev.gb_writes) as f64 * model.gb_pj * s;
    let spad = (ev.rf_reads + ev.rf_writes) as f64 * model.spad_pj * s;
    let alu = (ev.macs as f64 * model.mac_pj + ev.adds as f64 * model.add_pj) * s;
    let noc = Network::ALL
        .iter()
        .map(|n| ev.noc(*n) as f64 * model.noc_pj(*n))
        .sum::<f64>()
        * s;
    EnergyBreakdown {
        dram,
        gbuff,
        spad,
        alu,
        noc,
        total: dram + gbuff + spad + alu + noc,
    }
}

pub fn account_energy(result: &SimResult, model: &EnergyModel) -> EnergyBreakdown {
    energy_of(&result.events, model)
}

/// Average power in mW for an energy total in pJ over `cycles` at `clock_mhz`.
pub fn power_mw(total_pj: f64, cycles: u64, clock_mhz: f64) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    let seconds = cycles as f64 / (clock_mhz * 1e6);
    total_pj * 1e-12 / seconds * 1e3
}

/// Processing-pass parameters.
///
/// A pass runs `n x r x t` PE sets at once: `n` samples, `t` output planes
/// sharing the same operand planes (`p = t` planes per pass), and `r` sets
/// splitting the reduction, each chaining `q` reduction planes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassPlan {
    pub n: usize,
    pub r: usize,
    pub t: usize,
    pub q: usize,
    pub p: usize,
    pub passes: usize,
    pub set_rows: usize,
    pub set_cols: usize,
    /// Top-left corner of every set slot used by a full pass.
    pub placements: Vec<(usize, usize)>,
    /// Whether the layer's operands and psums fit in the global buffer.
    pub gb_resident: bool,
    pub estimated_pj: u64,
}

/// One PE set's work within a pass: an output plane and its reduction terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetTask {
    pub sample: usize,
    pub plane: usize,
    pub reductions: Vec<usize>,
}

/// Decomposition of a layer into output planes and reduction terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposition {
    pub samples: usize,
    pub planes: usize,
    pub reductions: usize,
}

impl Decomposition {
    pub fn of(layer: &LayerSpec) -> Self {
        match layer.conv_type {
            ConvType::Direct => Self {
                samples: layer.batch,
                planes: layer.num_filters,
                reductions: layer.channels,
            },
            ConvType::Transposed => Self {
                samples: layer.batch,
                planes: layer.channels,
                reductions: layer.num_filters,
            },
            ConvType::Dilated => Self {
                samples: 1,
                planes: layer.num_filters * layer.channels,
                reductions: layer.batch,
            },
        }
    }
}

/// Plane index of the primary operand (A) and secondary operand (B) used by
/// one (sample, output plane, reduction term) triple.
pub fn operand_planes(layer: &LayerSpec, sample: usize, plane: usize, red: usize) -> (usize, usize) {
    match layer.conv_type {
        // A[n][c], B[f][c]
        ConvType::Direct => (sample * layer.channels + red, plane * layer.channels + red),
        // A[n][f], B[f][c]
        ConvType::Transposed => (sample * layer.num_filters + red, red * layer.channels + plane),
        // A[n][c], B[n][f]
        ConvType::Dilated => {
            let (f, c) = dilated_plane(layer, plane);
            (red * layer.channels + c, red * layer.num_filters + f)
        }
    }
}

/// `(f, c)` of a dilated output plane. Planes are channel-major, so sets
/// that run together share one ifmap channel.
pub fn dilated_plane(layer: &LayerSpec, plane: usize) -> (usize, usize) {
    (plane % layer.num_filters, plane / layer.num_filters)
}

/// Output plane index within the output tensor.
pub fn output_plane(layer: &LayerSpec, sample: usize, plane: usize) -> usize {
    match layer.conv_type {
        ConvType::Direct => sample * layer.num_filters + plane,
        ConvType::Transposed => sample * layer.channels + plane,
        ConvType::Dilated => {
            let (f, c) = dilated_plane(layer, plane);
            f * layer.channels + c
        }
    }
}

impl PassPlan {
    pub fn sets_per_pass(&self) -> usize {
        self.n * self.r * self.t
    }

    /// Enumerate passes as lists of set tasks.
    pub fn enumerate(&self, d: Decomposition) -> Vec<Vec<SetTask>> {
        let mut out = Vec::new();
        let span = self.r * self.q;
        for s0 in (0..d.samples).step_by(self.n) {
            for p0 in (0..d.planes).step_by(self.p) {
                for r0 in (0..d.reductions).step_by(span) {
                    let mut pass = Vec::new();
                    for sample in s0..(s0 + self.n).min(d.samples) {
                        for plane in p0..(p0 + self.p).min(d.planes) {
                            for ri in 0..self.r {
                                let lo = r0 + ri * self.q;
                                let hi = (lo + self.q).min(r0 + span).min(d.reductions);
                                if lo < hi {
                                    pass.push(SetTask {
                                        sample,
                                        plane,
                                        reductions: (lo..hi).collect(),
                                    });
                                }
                            }
                        }
                    }
                    out.push(pass);
                }
            }
        }
        out
    }
}

/// Modeled traffic of a plan, in words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanTraffic {
    pub a_words: u64,
    pub b_words: u64,
    pub psum_writes: u64,
    pub psum_acc_reads: u64,
}

/// Count operand feeds and psum writes of `plan` by walking its passes.
/// Sets in one pass that share an operand plane receive it by one multicast.
pub fn plan_traffic(layer: &LayerSpec, plan: &PassPlan, geo: &SetGeometry) -> PlanTraffic {
    let d = Decomposition::of(layer);
    let mut t = PlanTraffic::default();
    let out_plane_words = {
        let (_, _, h, w) = layer.out_shape();
        (h * w) as u64
    };
    let mut written: BTreeSet<usize> = BTreeSet::new();
    for pass in plan.enumerate(d) {
        let mut a_planes = BTreeSet::new();
        let mut b_planes = BTreeSet::new();
        for task in &pass {
            for &red in &task.reductions {
                let (a, b) = operand_planes(layer, task.sample, task.plane, red);
                a_planes.insert(a);
                b_planes.insert(b);
            }
            let o = output_plane(layer, task.sample, task.plane);
            let writes = out_plane_words * geo.partial_writes_per_chain as u64;
            t.psum_writes += writes;
            if !written.insert(o) {
                t.psum_acc_reads += writes;
            } else {
                t.psum_acc_reads += writes - out_plane_words;
            }
        }
        t.a_words += a_planes.len() as u64 * geo.a_words_per_plane;
        t.b_words += b_planes.len() as u64 * geo.b_words_per_plane;
    }
    t
}

/// Exhaustive search over feasible `(n, r, t, q)` minimizing modeled energy.
/// Ties go to fewer passes, then to the lexicographically smallest `(n, r, t, q)`.
pub fn plan_passes(
    layer: &LayerSpec,
    dataflow: Dataflow,
    array: &ArrayConfig,
    energy: &EnergyModel,
) -> Result<PassPlan> {
    layer.validate()?;
    let geo = set_geometry(layer, dataflow, array)?;
    let d = Decomposition::of(layer);
    if geo.whole_array {
        let mut plan = PassPlan {
            n: d.samples,
            r: 1,
            t: d.planes,
            q: d.reductions,
            p: d.planes,
            passes: 1,
            set_rows: geo.rows,
            set_cols: geo.cols,
            placements: vec![(0, 0)],
            gb_resident: gb_resident(layer, array, 1),
            estimated_pj: 0,
        };
        let tr = plan_traffic(layer, &plan, &geo);
        plan.estimated_pj = (((tr.a_words + tr.b_words) as f64 * (energy.gin_pj + energy.gb_pj)) * energy.tech_scale) as u64;
        return Ok(plan);
    }
    let slots = geo.slots(array);
    if slots == 0 {
        return Err(Error::Plan(format!(
            "a {}x{} PE set does not fit the {}x{} array",
            geo.rows, geo.cols, array.rows, array.cols
        )));
    }
    if geo.max_chain == 0 {
        return Err(Error::Plan("register files cannot hold a single reduction plane".into()));
    }
    let mut best: Option<(u64, usize, [usize; 4], PassPlan)> = None;
    for n in 1..=d.samples {
        for t in 1..=d.planes {
            if n * t > slots {
                break;
            }
            if geo.plane_block.is_some_and(|b| b % t != 0) {
                continue;
            }
            for r in 1..=d.reductions {
                if n * t * r > slots {
                    break;
                }
                for q in 1..=geo.max_chain.min(d.reductions) {
                    if (r - 1) * q >= d.reductions {
                        break;
                    }
                    let resident = gb_resident(layer, array, n * t);
                    let mut plan = PassPlan {
                        n,
                        r,
                        t,
                        q,
                        p: t,
                        passes: d.samples.div_ceil(n) * d.planes.div_ceil(t) * d.reductions.div_ceil(r * q),
                        set_rows: geo.rows,
                        set_cols: geo.cols,
                        placements: Vec::new(),
                        gb_resident: resident,
                        estimated_pj: 0,
                    };
                    let tr = plan_traffic(layer, &plan, &geo);
                    let s = energy.tech_scale;
                    let gin = (tr.a_words + tr.b_words) as f64 * energy.gin_pj;
                    let gb = (tr.a_words + tr.psum_writes + tr.psum_acc_reads) as f64 * energy.gb_pj;
                    let gon = tr.psum_writes as f64 * energy.gon_pj;
                    let dram = if resident { 0.0 } else { tr.a_words as f64 * energy.dram_pj };
                    let pj = ((gin + gb + gon + dram) * s).round() as u64;
                    plan.estimated_pj = pj;
                    let key = [n, r, t, q];
                    let better = match &best {
                        None => true,
                        Some((bp, bpasses, bkey, _)) => (pj, plan.passes, key) < (*bp, *bpasses, *bkey),
                    };
                    if better {
                        best = Some((pj, plan.passes, key, plan));
                    }
                }
            }
        }
    }
    let mut plan = best
        .map(|b| b.3)
        .ok_or_else(|| Error::Plan("no (n, r, t, q) combination satisfies the array capacity".into()))?;
    plan.placements = geo.placements(array, plan.sets_per_pass());
    Ok(plan)
}

/// Both operands plus the output planes accumulated concurrently fit the
/// global buffer. Finished planes drain to DRAM and free their space.
pub fn gb_resident(layer: &LayerSpec, array: &ArrayConfig, planes_in_flight: usize) -> bool {
    let (_, _, h, w) = layer.out_shape();
    let words = layer.a_len() + layer.b_len() + planes_in_flight * h * w;
    words <= GlobalBuffer::new(array.gb.clone()).capacity_words(array.noc.word_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_bank_reads_serialize() {
        let mut gb = GlobalBuffer::new(GbConfig::default());
        assert_eq!(gb.gb_access(3, AccessKind::Read, 10), 10);
        assert_eq!(gb.gb_access(3, AccessKind::Read, 10), 11);
        assert_eq!(gb.gb_access(4, AccessKind::Read, 10), 10);
        assert_eq!(gb.gb_access(3, AccessKind::Write, 10), 10);
        assert_eq!(gb.conflicts, 1);
    }

    #[test]
    fn dram_latency_and_bandwidth() {
        let mut d = DramChannel::new(DramModel {
            latency_cycles: 100,
            bytes_per_cycle: 2.0,
        });
        assert_eq!(d.dram_access(2, AccessKind::Read, 0), 101);
        assert_eq!(d.dram_access(4, AccessKind::Read, 0), 103);
    }

    #[test]
    fn zero_model_gives_zero_energy() {
        let ev = EventCounters {
            macs: 10,
            dram_reads: 4,
            gb_reads: 7,
            ..Default::default()
        };
        let e = energy_of(&ev, &EnergyModel::zero());
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn spad_cost_is_linear() {
        let ev = EventCounters {
            macs: 10,
            rf_reads: 40,
            rf_writes: 12,
            gb_reads: 5,
            ..Default::default()
        };
        let m = EnergyModel::default();
        let mut m2 = m.clone();
        m2.spad_pj *= 2.0;
        let (a, b) = (energy_of(&ev, &m), energy_of(&ev, &m2));
        assert_eq!(b.spad, 2.0 * a.spad);
        assert_eq!((a.dram, a.gbuff, a.alu, a.noc), (b.dram, b.gbuff, b.alu, b.noc));
    }

    #[test]
    fn enumerate_covers_every_term_once() {
        let d = Decomposition {
            samples: 2,
            planes: 3,
            reductions: 5,
        };
        let plan = PassPlan {
            n: 1,
            r: 2,
            t: 2,
            q: 2,
            p: 2,
            passes: 0,
            set_rows: 1,
            set_cols: 1,
            placements: vec![],
            gb_resident: true,
            estimated_pj: 0,
        };
        let mut seen = BTreeSet::new();
        for pass in plan.enumerate(d) {
            assert!(pass.len() <= plan.sets_per_pass());
            for t in pass {
                for r in t.reductions {
                    assert!(seen.insert((t.sample, t.plane, r)));
                }
            }
        }
        assert_eq!(seen.len(), 2 * 3 * 5);
    }
}
