//! Layer descriptions shared by the oracle, compiler and harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    /// Forward pass: ifmap * filter -> ofmap.
    Direct,
    /// Input gradients: errors scattered through the filter.
    Transposed,
    /// Filter gradients: ifmap correlated with the stride-dilated errors.
    Dilated,
}

impl fmt::Display for ConvType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvType::Direct => "direct",
            ConvType::Transposed => "transposed",
            ConvType::Dilated => "dilated",
        })
    }
}

impl FromStr for ConvType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ConvType::Direct),
            "transposed" => Ok(ConvType::Transposed),
            "dilated" => Ok(ConvType::Dilated),
            _ => Err(Error::Layer(format!("unknown conv type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataflow {
    /// Zero-padding-free dataflow.
    EcoFlow,
    /// Eyeriss-style row stationary.
    #[serde(rename = "rs")]
    RowStationary,
    /// im2col lowering onto an output-stationary systolic array.
    Matmul,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::EcoFlow, Dataflow::RowStationary, Dataflow::Matmul];

    pub fn name(self) -> &'static str {
        match self {
            Dataflow::EcoFlow => "ecoflow",
            Dataflow::RowStationary => "rs",
            Dataflow::Matmul => "matmul",
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataflow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecoflow" | "eco" => Ok(Dataflow::EcoFlow),
            "rs" | "row_stationary" | "row-stationary" => Ok(Dataflow::RowStationary),
            "matmul" | "tpu" | "systolic" => Ok(Dataflow::Matmul),
            _ => Err(Error::Layer(format!("unknown dataflow `{s}`"))),
        }
    }
}

/// A convolutional layer described by its forward-pass geometry.
///
/// `conv_type` selects which of the three convolutions is computed:
/// the forward ofmap, the input gradients, or the filter gradients.
/// The error maps consumed by the backward convolutions have the
/// forward ofmap's dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub num_filters: usize,
    pub stride: usize,
    pub conv_type: ConvType,
    #[serde(default = "one")]
    pub batch: usize,
    /// Explicit forward ofmap size, overriding `floor((N-K)/S)+1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_override: Option<(usize, usize)>,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn new(
        conv_type: ConvType,
        channels: usize,
        in_h: usize,
        in_w: usize,
        k: usize,
        num_filters: usize,
        stride: usize,
    ) -> Self {
        Self {
            name: String::new(),
            channels,
            in_h,
            in_w,
            k,
            num_filters,
            stride,
            conv_type,
            batch: 1,
            out_override: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_out(mut self, h: usize, w: usize) -> Self {
        self.out_override = Some((h, w));
        self
    }

    pub fn with_type(mut self, conv_type: ConvType) -> Self {
        self.conv_type = conv_type;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Layer(format!("{}: {m}", self.label())));
        if self.stride == 0 {
            return bad("stride must be >= 1");
        }
        if self.k == 0 {
            return bad("kernel size must be >= 1");
        }
        if self.channels == 0 || self.num_filters == 0 || self.batch == 0 {
            return bad("channels, filters and batch must be >= 1");
        }
        if self.in_h == 0 || self.in_w == 0 {
            return bad("ifmap dims must be >= 1");
        }
        match self.out_override {
            Some((h, w)) if h == 0 || w == 0 => bad("explicit ofmap dims must be >= 1"),
            None if self.in_h < self.k || self.in_w < self.k => bad("kernel larger than ifmap"),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        if self.name.is_empty() {
            let batch = if self.batch > 1 { format!("/b{}", self.batch) } else { String::new() };
            format!(
                "{}x{}x{}/k{}/f{}/s{}/{}{batch}",
                self.channels, self.in_h, self.in_w, self.k, self.num_filters, self.stride, self.conv_type
            )
        } else {
            self.name.clone()
        }
    }

    /// Forward ofmap (= error map) dimensions.
    pub fn out_dims(&self) -> (usize, usize) {
        self.out_override.unwrap_or((
            (self.in_h - self.k) / self.stride + 1,
            (self.in_w - self.k) / self.stride + 1,
        ))
    }

    /// Input-gradient plane dims produced by the transposed convolution.
    pub fn transposed_dims(&self) -> (usize, usize) {
        let (eh, ew) = self.out_dims();
        (self.stride * (eh - 1) + self.k, self.stride * (ew - 1) + self.k)
    }

    /// Shape of the primary operand tensor `[batch][planes][h][w]`.
    pub fn a_shape(&self) -> (usize, usize, usize, usize) {
        let (eh, ew) = self.out_dims();
        match self.conv_type {
            ConvType::Direct | ConvType::Dilated => (self.batch, self.channels, self.in_h, self.in_w),
            ConvType::Transposed => (self.batch, self.num_filters, eh, ew),
        }
    }

    /// Shape of the secondary operand: the filter bank, or the errors for dilated.
    pub fn b_shape(&self) -> (usize, usize, usize, usize) {
        let (eh, ew) = self.out_dims();
        match self.conv_type {
            ConvType::Direct | ConvType::Transposed => (self.num_filters, self.channels, self.k, self.k),
            ConvType::Dilated => (self.batch, self.num_filters, eh, ew),
        }
    }

    /// Output tensor shape `[d0][d1][h][w]`.
    pub fn out_shape(&self) -> (usize, usize, usize, usize) {
        let (eh, ew) = self.out_dims();
        match self.conv_type {
            ConvType::Direct => (self.batch, self.num_filters, eh, ew),
            ConvType::Transposed => {
                let (th, tw) = self.transposed_dims();
                (self.batch, self.channels, th, tw)
            }
            ConvType::Dilated => (self.num_filters, self.channels, self.k, self.k),
        }
    }

    pub fn a_len(&self) -> usize {
        let (a, b, c, d) = self.a_shape();
        a * b * c * d
    }

    pub fn b_len(&self) -> usize {
        let (a, b, c, d) = self.b_shape();
        a * b * c * d
    }

    pub fn out_len(&self) -> usize {
        let (a, b, c, d) = self.out_shape();
        a * b * c * d
    }

    /// Useful (non-padding) multiply count.
    pub fn useful_macs(&self) -> u64 {
        let (eh, ew) = self.out_dims();
        let k2 = (self.k * self.k) as u64;
        let planes = (self.batch * self.channels * self.num_filters) as u64;
        match self.conv_type {
            ConvType::Direct | ConvType::Transposed => planes * k2 * (eh * ew) as u64,
            ConvType::Dilated => {
                let mut n = 0u64;
                for a in 0..eh {
                    for u in 0..self.k {
                        if self.stride * a + u < self.in_h {
                            for b in 0..ew {
                                for v in 0..self.k {
                                    if self.stride * b + v < self.in_w {
                                        n += 1;
                                    }
                                }
                            }
                        }
                    }
                }
                planes * n
            }
        }
    }
}

/// Parses the anonymous [`LayerSpec::label`] form
/// `CxHxW/kK/fF/sS/type`, optionally followed by `/bB` for the batch.
impl FromStr for LayerSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Layer(format!("cannot parse layer `{s}` (expected CxHxW/kK/fF/sS/type[/bB])"));
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 5 && parts.len() != 6 {
            return Err(bad());
        }
        let dims: Vec<usize> = parts[0].split('x').map(|d| d.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else { return Err(bad()) };
        let field = |p: &str, tag: char| -> Result<usize> { p.strip_prefix(tag).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        let mut l = LayerSpec::new(
            parts[4].parse()?,
            c,
            h,
            w,
            field(parts[1], 'k')?,
            field(parts[2], 'f')?,
            field(parts[3], 's')?,
        );
        if let Some(b) = parts.get(5) {
            l.batch = field(b, 'b')?;
        }
        l.validate()?;
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_geometries() {
        let l = LayerSpec::new(ConvType::Transposed, 128, 57, 57, 3, 128, 2);
        assert_eq!(l.out_dims(), (28, 28));
        assert_eq!(l.transposed_dims(), (57, 57));
        let toy = LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2);
        assert_eq!(toy.out_dims(), (2, 2));
        assert_eq!(toy.transposed_dims(), (5, 5));
    }

    #[test]
    fn rejects_zero_stride() {
        let l = LayerSpec::new(ConvType::Direct, 1, 4, 4, 2, 1, 0);
        assert!(l.validate().is_err());
    }

    #[test]
    fn label_round_trip() {
        let l = LayerSpec::new(ConvType::Dilated, 16, 57, 57, 3, 16, 2);
        assert_eq!(l.label().parse::<LayerSpec>().unwrap(), l);
        let b: LayerSpec = "2x9x9/k3/f4/s2/transposed/b3".parse().unwrap();
        assert_eq!(b.batch, 3);
        assert!("2x9/k3/f4/s2/direct".parse::<LayerSpec>().is_err());
        assert!("2x9x9/k3/f4/s0/direct".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("tpu".parse::<Dataflow>().unwrap(), Dataflow::Matmul);
        assert_eq!("dilated".parse::<ConvType>().unwrap(), ConvType::Dilated);
        assert!("sparse".parse::<Dataflow>().is_err());
    }
}
