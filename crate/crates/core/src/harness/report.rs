//! Comparison reports and their table, CSV and JSON renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{Dataflow, LayerSpec};
use crate::memory::EnergyBreakdown;
use crate::sim::StallBreakdown;

pub const REPORT_FORMAT: &str = "dfsim-report/1";
pub const CSV_VERSION: &str = "dfsim-csv/1";

/// CSV columns, in order. Changing this list requires a new [`CSV_VERSION`].
pub const CSV_COLUMNS: [&str; 22] = [
    "version",
    "variant",
    "layer",
    "conv_type",
    "dataflow",
    "cycles",
    "runtime_us",
    "utilization",
    "speedup",
    "energy_ratio",
    "energy_dram_pj",
    "energy_gbuff_pj",
    "energy_spad_pj",
    "energy_alu_pj",
    "energy_noc_pj",
    "energy_total_pj",
    "macs",
    "gated_macs",
    "dram_reads",
    "dram_writes",
    "passes",
    "stall_cycles",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown output format `{s}` (table, csv, json)"))),
        }
    }
}

/// Metrics of one dataflow on one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowResult {
    pub dataflow: Dataflow,
    pub cycles: u64,
    pub runtime_us: f64,
    pub utilization: f64,
    pub energy: EnergyBreakdown,
    /// Baseline cycles over these cycles.
    pub speedup: f64,
    /// This energy over the baseline energy.
    pub energy_ratio: f64,
    pub macs: u64,
    pub gated_macs: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub passes: usize,
    pub stalls: StallBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// Config override this row was run under, e.g. `noc.gon_bits=32`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub layer: LayerSpec,
    pub results: Vec<DataflowResult>,
    /// Largest output difference between any dataflow and the oracle.
    pub max_abs_error: f32,
}

impl LayerReport {
    pub fn result(&self, dataflow: Dataflow) -> Option<&DataflowResult> {
        self.results.iter().find(|r| r.dataflow == dataflow)
    }
}

/// Network speedup of one dataflow over the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub network: String,
    pub dataflow: Dataflow,
    pub speedup: f64,
    pub illustrative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub baseline: Dataflow,
    pub layers: Vec<LayerReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub end_to_end: Vec<EndToEnd>,
}

impl Report {
    pub fn new(baseline: Dataflow) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            baseline,
            layers: Vec::new(),
            end_to_end: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if r.format != REPORT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported report format `{}` (expected `{REPORT_FORMAT}`)",
                r.format
            )));
        }
        Ok(r)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        for l in &self.layers {
            for r in &l.results {
                let e = &r.energy;
                let row = [
                    CSV_VERSION.to_string(),
                    l.variant.clone().unwrap_or_default(),
                    l.layer.label(),
                    l.layer.conv_type.to_string(),
                    r.dataflow.to_string(),
                    r.cycles.to_string(),
                    r.runtime_us.to_string(),
                    r.utilization.to_string(),
                    r.speedup.to_string(),
                    r.energy_ratio.to_string(),
                    e.dram.to_string(),
                    e.gbuff.to_string(),
                    e.spad.to_string(),
                    e.alu.to_string(),
                    e.noc.to_string(),
                    e.total.to_string(),
                    r.macs.to_string(),
                    r.gated_macs.to_string(),
                    r.dram_reads.to_string(),
                    r.dram_writes.to_string(),
                    r.passes.to_string(),
                    (r.stalls.operand + r.stalls.psum + r.stalls.backpressure).to_string(),
                ];
                w.write_record(&row).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<34} {:<8} {:>10} {:>10} {:>6} {:>8} {:>12} {:>8}",
            "layer", "dataflow", "cycles", "runtime_us", "util", "speedup", "energy_pJ", "e_ratio"
        );
        for l in &self.layers {
            let name = match &l.variant {
                Some(v) => format!("{} [{v}]", l.layer.label()),
                None => l.layer.label(),
            };
            for r in &l.results {
                let _ = writeln!(
                    out,
                    "{:<34} {:<8} {:>10} {:>10.1} {:>6.2} {:>8.2} {:>12.4e} {:>8.3}",
                    name,
                    r.dataflow.name(),
                    r.cycles,
                    r.runtime_us,
                    r.utilization,
                    r.speedup,
                    r.energy.total,
                    r.energy_ratio
                );
            }
        }
        if !self.end_to_end.is_empty() {
            let _ = writeln!(out, "\nend-to-end speedup vs {}", self.baseline.name());
            for e in &self.end_to_end {
                let tag = if e.illustrative { " (illustrative fractions)" } else { "" };
                let _ = writeln!(out, "{:<34} {:<8} {:>8.3}{tag}", e.network, e.dataflow.name(), e.speedup);
            }
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.to_table(),
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Write to `path`, or stdout when `None`.
pub fn emit_report(report: &Report, format: Format, path: Option<&std::path::Path>) -> Result<()> {
    let text = report.render(format);
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::ConvType;

    fn sample() -> Report {
        let energy = EnergyBreakdown {
            dram: 1.0,
            gbuff: 2.0,
            spad: 3.0,
            alu: 4.0,
            noc: 5.0,
            total: 15.0,
        };
        let mut r = Report::new(Dataflow::Matmul);
        r.layers.push(LayerReport {
            variant: None,
            layer: LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2),
            results: vec![DataflowResult {
                dataflow: Dataflow::Matmul,
                cycles: 10,
                runtime_us: 0.05,
                utilization: 0.5,
                energy,
                speedup: 1.0,
                energy_ratio: 1.0,
                macs: 9,
                gated_macs: 0,
                dram_reads: 3,
                dram_writes: 25,
                passes: 1,
                stalls: StallBreakdown::default(),
            }],
            max_abs_error: 0.0,
        });
        r
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }

    #[test]
    fn csv_header_is_fixed() {
        let csv = sample().to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(header, CSV_COLUMNS.join(","));
        assert!(csv.lines().nth(1).unwrap().starts_with(CSV_VERSION));
    }

    #[test]
    fn csv_energy_columns_sum_to_total() {
        let csv = sample().to_csv();
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        let h = rd.headers().unwrap().clone();
        let col = |name: &str| h.iter().position(|c| c == name).unwrap();
        for rec in rd.records() {
            let rec = rec.unwrap();
            let get = |n: &str| rec[col(n)].parse::<f64>().unwrap();
            let parts = ["energy_dram_pj", "energy_gbuff_pj", "energy_spad_pj", "energy_alu_pj", "energy_noc_pj"];
            let sum: f64 = parts.iter().map(|p| get(p)).sum();
            assert!((sum - get("energy_total_pj")).abs() < 1e-9);
        }
    }

    #[test]
    fn foreign_format_rejected() {
        let text = sample().to_json().replace(REPORT_FORMAT, "other/9");
        assert!(Report::from_json(&text).is_err());
    }
}
