//! Built-in layer corpus, network descriptions and the end-to-end estimate.
//!
//! Corpus layers are stored at their published size and shrunk for desk
//! runs by dividing channel and filter counts by [`DESK_DIVISOR`]. Spatial
//! size, kernel and stride are never changed, so padding, shifts and
//! multicast patterns are those of the full layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::Config;
use crate::layer::{ConvType, LayerSpec};

pub const DESK_DIVISOR: usize = 8;

/// One published layer and the convolutions evaluated on it.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayer {
    pub network: &'static str,
    pub layer: &'static str,
    /// Full-size geometry.
    pub full: LayerSpec,
    pub kinds: &'static [ConvType],
}

const BACKWARD: &[ConvType] = &[ConvType::Transposed, ConvType::Dilated];
const GENERATOR: &[ConvType] = &[ConvType::Transposed];

fn entry(network: &'static str, layer: &'static str, c: usize, n: usize, k: usize, f: usize, s: usize, kinds: &'static [ConvType]) -> CorpusLayer {
    CorpusLayer {
        network,
        layer,
        full: LayerSpec::new(kinds[0], c, n, n, k, f, s),
        kinds,
    }
}

/// Every shipped layer. Generator layers are upsampling convolutions run
/// forward, described by the geometry of the convolution they invert.
pub fn corpus_layers() -> Vec<CorpusLayer> {
    vec![
        // 227 rather than 224: the only unpadded input that gives 55x55.
        entry("alexnet", "conv1", 3, 227, 11, 64, 4, BACKWARD),
        entry("alexnet", "conv2", 64, 31, 5, 192, 1, BACKWARD),
        entry("resnet50", "conv3", 128, 57, 3, 128, 2, BACKWARD),
        entry("shufflenet", "conv2", 58, 57, 3, 58, 2, BACKWARD),
        entry("shufflenet", "conv5", 232, 7, 1, 232, 1, BACKWARD),
        entry("inception", "conv3", 192, 17, 3, 320, 2, BACKWARD),
        entry("xception", "conv3", 728, 29, 3, 1, 2, BACKWARD),
        entry("mobilenet", "conv5", 512, 15, 3, 1, 2, BACKWARD),
        entry("cyclegan", "disc-conv3", 64, 114, 4, 128, 2, BACKWARD),
        entry("cyclegan", "gen-tconv1", 128, 113, 3, 256, 2, GENERATOR),
        entry("pix2pix", "disc-conv6", 128, 130, 4, 256, 2, BACKWARD),
        entry("pix2pix", "gen-tconv41", 128, 130, 4, 512, 2, GENERATOR),
    ]
}

/// Channels and filters divided by [`DESK_DIVISOR`], at least one each.
pub fn desk_scale(full: &LayerSpec) -> LayerSpec {
    LayerSpec {
        channels: (full.channels / DESK_DIVISOR).max(1),
        num_filters: (full.num_filters / DESK_DIVISOR).max(1),
        ..full.clone()
    }
}

impl CorpusLayer {
    pub fn base_name(&self) -> String {
        format!("{}-{}", self.network, self.layer)
    }

    /// Desk-scale layer for one convolution kind, named `network-layer/kind`.
    pub fn desk(&self, kind: ConvType) -> LayerSpec {
        desk_scale(&self.full.clone().with_type(kind)).named(format!("{}/{kind}", self.base_name()))
    }
}

/// All desk-scale corpus layers, one per (layer, kind).
pub fn corpus() -> Vec<LayerSpec> {
    corpus_layers()
        .iter()
        .flat_map(|c| c.kinds.iter().map(move |&k| c.desk(k)))
        .collect()
}

/// Resolve a layer argument: a `[[layers]]` entry of the config, a corpus
/// name such as `resnet50-conv3/transposed`, or an inline `CxHxW/kK/fF/sS/type`.
pub fn find_layer(name: &str, config: &Config) -> Result<LayerSpec> {
    if let Some(l) = config.layer(name) {
        return Ok(l.clone());
    }
    if let Some(l) = corpus().into_iter().find(|l| l.name == name) {
        return Ok(l);
    }
    name.parse::<LayerSpec>().map_err(|_| {
        Error::Layer(format!(
            "`{name}` is neither a configured layer, a corpus layer nor an inline CxHxW/kK/fF/sS/type spec"
        ))
    })
}

/// Layer of a network with its share of end-to-end time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayer {
    pub layer: LayerSpec,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub batch: usize,
    pub layers: Vec<NetworkLayer>,
    /// Fractions are made up for demonstration, not measured.
    pub illustrative: bool,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for l in &self.layers {
            if !(0.0..=1.0).contains(&l.fraction) {
                return Err(Error::Config(format!(
                    "network {}: fraction {} of {} is outside [0, 1]",
                    self.name,
                    l.fraction,
                    l.layer.label()
                )));
            }
            sum += l.fraction;
        }
        if sum > 1.0 + 1e-9 {
            return Err(Error::Config(format!("network {}: fractions sum to {sum} > 1", self.name)));
        }
        Ok(())
    }

    pub fn conv_fraction(&self) -> f64 {
        self.layers.iter().map(|l| l.fraction).sum()
    }
}

fn network(name: &str, parts: &[(&str, f64)]) -> NetworkSpec {
    let all = corpus();
    NetworkSpec {
        name: name.to_string(),
        batch: 1,
        layers: parts
            .iter()
            .map(|(n, f)| NetworkLayer {
                layer: all.iter().find(|l| l.name == *n).expect("corpus layer").clone(),
                fraction: *f,
            })
            .collect(),
        illustrative: true,
    }
}

/// Shipped networks. Their time fractions are invented placeholders; supply
/// measured profiles for real estimates.
pub fn networks() -> Vec<NetworkSpec> {
    vec![
        network(
            "cnn-training-illustrative",
            &[
                ("resnet50-conv3/transposed", 0.20),
                ("resnet50-conv3/dilated", 0.20),
                ("shufflenet-conv2/transposed", 0.10),
                ("shufflenet-conv2/dilated", 0.10),
                ("inception-conv3/transposed", 0.05),
                ("inception-conv3/dilated", 0.05),
            ],
        ),
        network(
            "gan-illustrative",
            &[
                ("cyclegan-disc-conv3/transposed", 0.15),
                ("cyclegan-disc-conv3/dilated", 0.15),
                ("cyclegan-gen-tconv1/transposed", 0.30),
            ],
        ),
    ]
}

pub fn find_network(name: &str) -> Result<NetworkSpec> {
    networks()
        .into_iter()
        .find(|n| n.name == name)
        .ok_or_else(|| Error::Config(format!("unknown network `{name}`")))
}

/// Amdahl's law over the network's layers: `1 / ((1 - sum f) + sum f/s)`.
pub fn amdahl_end_to_end(network: &NetworkSpec, per_layer_speedups: &[f64]) -> Result<f64> {
    network.validate()?;
    if per_layer_speedups.len() != network.layers.len() {
        return Err(Error::Config(format!(
            "network {} has {} layers but {} speedups were given",
            network.name,
            network.layers.len(),
            per_layer_speedups.len()
        )));
    }
    let rest = 1.0 - network.conv_fraction();
    let scaled: f64 = network.layers.iter().zip(per_layer_speedups).map(|(l, s)| l.fraction / s).sum();
    Ok(1.0 / (rest + scaled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(fractions: &[f64]) -> NetworkSpec {
        NetworkSpec {
            name: "synthetic".into(),
            batch: 1,
            layers: fractions
                .iter()
                .map(|&f| NetworkLayer {
                    layer: LayerSpec::new(ConvType::Direct, 1, 4, 4, 3, 1, 1),
                    fraction: f,
                })
                .collect(),
            illustrative: true,
        }
    }

    #[test]
    fn amdahl_cases() {
        let one = amdahl_end_to_end(&synthetic(&[0.5, 0.3]), &[1.0, 1.0]).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let four = amdahl_end_to_end(&synthetic(&[1.0]), &[4.0]).unwrap();
        assert!((four - 4.0).abs() < 1e-12);
        let mixed = amdahl_end_to_end(&synthetic(&[0.5, 0.3]), &[4.0, 2.0]).unwrap();
        assert!((mixed - 1.0 / 0.475).abs() < 1e-12);
    }

    #[test]
    fn fractions_checked() {
        assert!(synthetic(&[0.7, 0.4]).validate().is_err());
        assert!(synthetic(&[-0.1]).validate().is_err());
        assert!(amdahl_end_to_end(&synthetic(&[0.5]), &[2.0, 2.0]).is_err());
    }

    #[test]
    fn desk_rule_keeps_geometry() {
        for c in corpus_layers() {
            for &k in c.kinds {
                let d = c.desk(k);
                d.validate().unwrap();
                assert_eq!((d.in_h, d.k, d.stride), (c.full.in_h, c.full.k, c.full.stride));
                assert_eq!(d.out_dims(), c.full.out_dims());
                assert_eq!(d.channels, (c.full.channels / DESK_DIVISOR).max(1));
            }
        }
    }

    #[test]
    fn published_ofmap_sizes() {
        let want = [55, 27, 28, 28, 7, 8, 14, 7, 56, 56, 64, 64];
        let got: Vec<usize> = corpus_layers().iter().map(|c| c.full.out_dims().0).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn lookup() {
        let cfg = Config::default();
        assert_eq!(find_layer("resnet50-conv3/dilated", &cfg).unwrap().channels, 16);
        assert_eq!(find_layer("2x9x9/k3/f2/s2/direct", &cfg).unwrap().k, 3);
        assert!(find_layer("nonsense", &cfg).is_err());
        for n in networks() {
            n.validate().unwrap();
        }
    }
}
