//! Cycle-level PE array simulator.

mod engine;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::Dataflow;
use crate::memory::{DramModel, GbConfig};
use crate::noc::{Network, NocConfig};

pub use engine::{run, run_with, simulate_layer, RunOptions};

/// Accelerator parameters. Defaults describe a 13x15 array at 200 MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub clock_mhz: f64,
    /// Input-operand register file entries per PE.
    pub ifmap_rf: usize,
    /// Weight-operand register file entries per PE.
    pub filter_rf: usize,
    /// Partial-sum slots per PE.
    pub psum_rf: usize,
    /// Depth of every PE-side queue and GON output queue.
    pub queue_depth: usize,
    pub mult_latency: u32,
    pub add_latency: u32,
    pub clock_gating: bool,
    /// Round every product and sum to 16-bit storage precision.
    pub quantize16: bool,
    /// Vertical expansion factor for filter-gradient PE sets.
    pub expansion: usize,
    /// Network used by the zero-free dataflow.
    pub noc: NocConfig,
    /// Network used by the row-stationary and systolic baselines.
    pub baseline_noc: NocConfig,
    pub gb: GbConfig,
    pub dram: DramModel,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            rows: 13,
            cols: 15,
            clock_mhz: 200.0,
            ifmap_rf: 75,
            filter_rf: 224,
            psum_rf: 24,
            queue_depth: 8,
            mult_latency: 2,
            add_latency: 1,
            clock_gating: true,
            quantize16: false,
            expansion: 1,
            noc: NocConfig::ecoflow(),
            baseline_noc: NocConfig::eyeriss(),
            gb: GbConfig::default(),
            dram: DramModel::default(),
        }
    }
}

impl ArrayConfig {
    pub fn with_dims(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn noc_for(&self, dataflow: Dataflow) -> &NocConfig {
        match dataflow {
            Dataflow::EcoFlow => &self.noc,
            _ => &self.baseline_noc,
        }
    }

    /// Cycles from a MAC issue until its result can leave the slot.
    pub fn mac_latency(&self) -> u32 {
        self.mult_latency + self.add_latency
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rows", self.rows),
            ("cols", self.cols),
            ("ifmap_rf", self.ifmap_rf),
            ("filter_rf", self.filter_rf),
            ("psum_rf", self.psum_rf),
            ("queue_depth", self.queue_depth),
            ("expansion", self.expansion),
            ("gb.banks", self.gb.banks),
            ("gb.capacity_bytes", self.gb.capacity_bytes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("array.{name} must be > 0")));
            }
        }
        for (name, v) in [("ifmap_rf", self.ifmap_rf), ("filter_rf", self.filter_rf), ("psum_rf", self.psum_rf)] {
            if v > 256 {
                return Err(Error::Config(format!("array.{name} = {v} exceeds the 256-entry register encoding")));
            }
        }
        if !(self.clock_mhz > 0.0) {
            return Err(Error::Config("array.clock_mhz must be > 0".into()));
        }
        if self.mult_latency == 0 || self.add_latency == 0 {
            return Err(Error::Config("array.mult_latency and array.add_latency must be >= 1".into()));
        }
        self.noc.validate()?;
        self.baseline_noc.validate()?;
        self.dram.validate()
    }
}

/// Event counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounters {
    pub macs: u64,
    pub gated_macs: u64,
    pub adds: u64,
    pub rf_reads: u64,
    pub rf_writes: u64,
    pub gb_reads: u64,
    pub gb_writes: u64,
    pub gb_conflicts: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub noc_gin_wide: u64,
    pub noc_gin_narrow: u64,
    pub noc_gon: u64,
    pub noc_local: u64,
    pub noc_forward: u64,
}

/// Stalled PE-cycles by the first unmet condition: a missing operand word,
/// a partial sum not yet arrived or computed, or a full destination queue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBreakdown {
    pub operand: u64,
    pub psum: u64,
    pub backpressure: u64,
}

impl EventCounters {
    pub fn noc(&self, net: Network) -> u64 {
        match net {
            Network::GinWide => self.noc_gin_wide,
            Network::GinNarrow => self.noc_gin_narrow,
            Network::Gon => self.noc_gon,
            Network::Local => self.noc_local,
            Network::Forward => self.noc_forward,
        }
    }

    pub fn add_noc(&mut self, net: Network, n: u64) {
        match net {
            Network::GinWide => self.noc_gin_wide += n,
            Network::GinNarrow => self.noc_gin_narrow += n,
            Network::Gon => self.noc_gon += n,
            Network::Local => self.noc_local += n,
            Network::Forward => self.noc_forward += n,
        }
    }
}

/// Per-PE cycle accounting; `busy + gated + idle` equals the run's cycles.
/// `stall` is the part of `busy` spent waiting on an interlock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeStats {
    pub busy: u64,
    pub gated: u64,
    pub idle: u64,
    pub stall: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub cycles: u64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major per-PE accounting.
    pub pe: Vec<PeStats>,
    pub events: EventCounters,
    pub stalls: StallBreakdown,
    pub output: Vec<f32>,
    /// Mean busy-and-not-stalled fraction over PEs that ran any program.
    pub utilization: f64,
    pub runtime_us: f64,
}

impl SimResult {
    pub fn pe_stats(&self, row: usize, col: usize) -> PeStats {
        self.pe[row * self.cols + col]
    }
}
