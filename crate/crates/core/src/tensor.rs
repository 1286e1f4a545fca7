//! Dense tensors used by the oracle and the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Round a value to the nearest IEEE half-precision number.
pub fn quantize16(v: f32) -> f32 {
    half::f16::from_f32(v).to_f32()
}

/// A `channels x height x width` feature map stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Single-channel map from nested rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(1, h, w, rows.concat())
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }
}

/// Square filter bank stored as `[out_channels][in_channels][k][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub in_channels: usize,
    pub out_channels: usize,
    pub k: usize,
    pub data: Vec<f32>,
}

impl Filter {
    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            k,
            data: vec![0.0; in_channels * out_channels * k * k],
        }
    }

    pub fn from_vec(out_channels: usize, in_channels: usize, k: usize, data: Vec<f32>) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || k == 0 {
            return Err(Error::Shape("filter dims must be >= 1".into()));
        }
        if data.len() != in_channels * out_channels * k * k {
            return Err(Error::Shape(format!(
                "filter {out_channels}x{in_channels}x{k}x{k} needs {} values, got {}",
                in_channels * out_channels * k * k,
                data.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            k,
            data,
        })
    }

    /// Single 1x1-channel filter from nested rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("filters must be square".into()));
        }
        Self::from_vec(1, 1, k, rows.concat())
    }

    #[inline]
    pub fn idx(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        ((o * self.in_channels + i) * self.k + u) * self.k + v
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, u: usize, v: usize) -> f32 {
        self.data[self.idx(o, i, u, v)]
    }

    #[inline]
    pub fn set(&mut self, o: usize, i: usize, u: usize, v: usize, val: f32) {
        let j = self.idx(o, i, u, v);
        self.data[j] = val;
    }
}
