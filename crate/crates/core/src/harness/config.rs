//! Configuration files.
//!
//! A config is TOML with an optional `schema = "dfsim-config/1"` key and the
//! sections `[array]`, `[noc]`, `[baseline_noc]`, `[gb]`, `[dram]`,
//! `[energy]` plus any number of `[[layers]]` tables. Every key is optional;
//! missing keys take the built-in defaults, unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::memory::{DramModel, EnergyModel, GbConfig};
use crate::noc::NocConfig;
use crate::sim::ArrayConfig;

pub const CONFIG_SCHEMA: &str = "dfsim-config/1";

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub array: ArrayConfig,
    pub energy: EnergyModel,
    /// Extra layers addressable by name from the command line.
    pub layers: Vec<LayerSpec>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            array: ArrayConfig::default(),
            energy: EnergyModel::default(),
            layers: Vec::new(),
        }
    }
}

/// Scalar `[array]` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ArraySection {
    rows: usize,
    cols: usize,
    clock_mhz: f64,
    ifmap_rf: usize,
    filter_rf: usize,
    psum_rf: usize,
    queue_depth: usize,
    mult_latency: u32,
    add_latency: u32,
    clock_gating: bool,
    quantize16: bool,
    expansion: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self::from(&ArrayConfig::default())
    }
}

impl From<&ArrayConfig> for ArraySection {
    fn from(a: &ArrayConfig) -> Self {
        Self {
            rows: a.rows,
            cols: a.cols,
            clock_mhz: a.clock_mhz,
            ifmap_rf: a.ifmap_rf,
            filter_rf: a.filter_rf,
            psum_rf: a.psum_rf,
            queue_depth: a.queue_depth,
            mult_latency: a.mult_latency,
            add_latency: a.add_latency,
            clock_gating: a.clock_gating,
            quantize16: a.quantize16,
            expansion: a.expansion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default = "schema")]
    schema: String,
    #[serde(default)]
    array: ArraySection,
    #[serde(default = "NocConfig::ecoflow")]
    noc: NocConfig,
    #[serde(default = "NocConfig::eyeriss")]
    baseline_noc: NocConfig,
    #[serde(default)]
    gb: GbConfig,
    #[serde(default)]
    dram: DramModel,
    #[serde(default)]
    energy: EnergyModel,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    layers: Vec<LayerSpec>,
}

fn schema() -> String {
    CONFIG_SCHEMA.to_string()
}

impl ConfigFile {
    fn resolve(self) -> Result<Config> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "schema: unsupported `{}` (expected `{CONFIG_SCHEMA}`)",
                self.schema
            )));
        }
        let s = self.array;
        let array = ArrayConfig {
            rows: s.rows,
            cols: s.cols,
            clock_mhz: s.clock_mhz,
            ifmap_rf: s.ifmap_rf,
            filter_rf: s.filter_rf,
            psum_rf: s.psum_rf,
            queue_depth: s.queue_depth,
            mult_latency: s.mult_latency,
            add_latency: s.add_latency,
            clock_gating: s.clock_gating,
            quantize16: s.quantize16,
            expansion: s.expansion,
            noc: self.noc,
            baseline_noc: self.baseline_noc,
            gb: self.gb,
            dram: self.dram,
        };
        array.validate()?;
        self.energy.validate()?;
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| Error::Config(format!("layers[{i}]: {e}")))?;
        }
        Ok(Config {
            array,
            energy: self.energy,
            layers: self.layers,
        })
    }

    fn of(c: &Config) -> Self {
        Self {
            schema: schema(),
            array: ArraySection::from(&c.array),
            noc: c.array.noc.clone(),
            baseline_noc: c.array.baseline_noc.clone(),
            gb: c.array.gb.clone(),
            dram: c.array.dram.clone(),
            energy: c.energy.clone(),
            layers: c.layers.clone(),
        }
    }
}

/// Parse and validate config text. The empty string yields the defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    file.resolve()
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

impl Config {
    /// Complete TOML rendering; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::of(self)).expect("config serializes")
    }

    /// Override one key given as `section.key`, e.g. `array.rows` or
    /// `noc.gon_bits`. The value is parsed as TOML (`8`, `true`, `1.5`).
    pub fn with_param(&self, key: &str, value: &str) -> Result<Config> {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("parameter `{key}` must look like section.key")))?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own rendering parses");
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .map_err(|_| Error::Config(format!("{key}: cannot parse value `{value}`")))?
            .remove("v")
            .expect("key present");
        let table = doc
            .get_mut(section)
            .and_then(|t| t.as_table_mut())
            .ok_or_else(|| Error::Config(format!("unknown section `{section}`")))?;
        if !table.contains_key(field) {
            return Err(Error::Config(format!("unknown key `{field}` in section `{section}`")));
        }
        table.insert(field.to_string(), parsed);
        parse_config(&toml::to_string(&doc).expect("table serializes"))
    }

    /// Layer from the config's own `[[layers]]` list.
    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!((c.array.rows, c.array.cols), (13, 15));
        assert_eq!(c.array.clock_mhz, 200.0);
        assert_eq!(c.array.gb.capacity_bytes, 108 * 1024);
        assert_eq!(c.array.gb.banks, 27);
        assert_eq!(c.array.queue_depth, 8);
    }

    #[test]
    fn override_rows() {
        let c = parse_config("[array]\nrows = 2\n").unwrap();
        assert_eq!((c.array.rows, c.array.cols), (2, 15));
    }

    #[test]
    fn zero_stride_layer_rejected() {
        let text = r#"
[[layers]]
name = "bad"
conv_type = "direct"
channels = 1
in_h = 5
in_w = 5
k = 3
num_filters = 1
stride = 0
"#;
        let e = parse_config(text).unwrap_err().to_string();
        assert!(e.contains("layers[0]") && e.contains("stride"), "{e}");
    }

    #[test]
    fn unknown_key_names_the_field() {
        let e = parse_config("[array]\nrowz = 3\n").unwrap_err().to_string();
        assert!(e.contains("rowz"), "{e}");
    }

    #[test]
    fn wrong_schema_rejected() {
        let e = parse_config("schema = \"dfsim-config/0\"\n").unwrap_err().to_string();
        assert!(e.contains("schema"), "{e}");
    }

    #[test]
    fn invalid_energy_rejected() {
        let e = parse_config("[energy]\ndram_pj = -1.0\n").unwrap_err().to_string();
        assert!(e.contains("energy.dram_pj"), "{e}");
    }

    #[test]
    fn round_trip_and_param() {
        let c = parse_config("[noc]\ngon_bits = 128\n").unwrap();
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
        let d = c.with_param("array.queue_depth", "4").unwrap();
        assert_eq!(d.array.queue_depth, 4);
        assert_eq!(d.array.noc.gon_bits, 128);
        assert!(c.with_param("array.nope", "1").is_err());
        assert!(c.with_param("array.rows", "0").is_err());
    }
}
