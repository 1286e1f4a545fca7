//! Reference semantics for direct, transposed and dilated convolution, plus
//! the padding arithmetic that the naive dataflows pay for.
//!
//! The padding closed forms are stated for square `N x N` maps; the per-axis
//! variants used for non-square maps apply the same construction independently
//! to rows and columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{ConvType, LayerSpec};
use crate::tensor::{FeatureMap, Filter};

/// Cross-correlation of every ifmap channel with the matching filter plane,
/// summed over channels per output filter.
pub fn direct_conv(ifmap: &FeatureMap, filter: &Filter, stride: usize) -> Result<FeatureMap> {
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    if filter.in_channels != ifmap.channels {
        return Err(Error::Shape(format!(
            "filter expects {} input channels, ifmap has {}",
            filter.in_channels, ifmap.channels
        )));
    }
    let k = filter.k;
    if ifmap.height < k || ifmap.width < k {
        return Err(Error::Shape(format!(
            "{k}x{k} filter does not fit a {}x{} ifmap",
            ifmap.height, ifmap.width
        )));
    }
    let oh = (ifmap.height - k) / stride + 1;
    let ow = (ifmap.width - k) / stride + 1;
    let mut out = FeatureMap::zeros(filter.out_channels, oh, ow);
    for f in 0..filter.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0f32;
                for c in 0..ifmap.channels {
                    for u in 0..k {
                        for v in 0..k {
                            acc += ifmap.get(c, stride * y + u, stride * x + v) * filter.get(f, c, u, v);
                        }
                    }
                }
                out.set(f, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// Reverse every `k x k` plane along both axes.
pub fn rotate180(filter: &Filter) -> Filter {
    let k = filter.k;
    let mut out = filter.clone();
    for o in 0..filter.out_channels {
        for i in 0..filter.in_channels {
            for u in 0..k {
                for v in 0..k {
                    out.set(o, i, u, v, filter.get(o, i, k - 1 - u, k - 1 - v));
                }
            }
        }
    }
    out
}

/// Side length of an error map after inner (`S-1` per gap) and outer (`K-1`) padding.
pub fn padded_side(n: usize, k: usize, s: usize) -> usize {
    s * (n - 1) + 1 + 2 * (k - 1)
}

/// Insert `S-1` zero rows/cols between error elements and a `K-1` zero border.
pub fn pad_for_transpose(errors: &FeatureMap, k: usize, s: usize) -> FeatureMap {
    let ph = padded_side(errors.height, k, s);
    let pw = padded_side(errors.width, k, s);
    let mut out = FeatureMap::zeros(errors.channels, ph, pw);
    for c in 0..errors.channels {
        for a in 0..errors.height {
            for b in 0..errors.width {
                out.set(c, k - 1 + s * a, k - 1 + s * b, errors.get(c, a, b));
            }
        }
    }
    out
}

/// Inner padding elements `[S(N-1)+1]^2 - N^2`.
pub fn inner_padding_count(n: usize, s: usize) -> usize {
    let side = s * (n - 1) + 1;
    side * side - n * n
}

/// Outer padding elements `4(K-1)[S(N-1)+1] + 4(K-1)^2`.
pub fn outer_padding_count(n: usize, k: usize, s: usize) -> usize {
    let side = s * (n - 1) + 1;
    4 * (k - 1) * side + 4 * (k - 1) * (k - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingReport {
    pub inner_count: usize,
    pub outer_count: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    pub zero_mult_fraction: f64,
}

/// Padding arithmetic for one error plane of a layer (per-axis for non-square maps).
pub fn padding_report(layer: &LayerSpec) -> PaddingReport {
    let (eh, ew) = layer.out_dims();
    let (k, s) = (layer.k, layer.stride);
    let (ih, iw) = (s * (eh - 1) + 1, s * (ew - 1) + 1);
    let (ph, pw) = match layer.conv_type {
        ConvType::Transposed => (ih + 2 * (k - 1), iw + 2 * (k - 1)),
        _ => (ih, iw),
    };
    let inner = ih * iw - eh * ew;
    let outer = ph * pw - ih * iw;
    PaddingReport {
        inner_count: inner,
        outer_count: outer,
        padded_h: ph,
        padded_w: pw,
        zero_mult_fraction: zero_mult_fraction(layer),
    }
}

/// Transposed convolution: the padded errors correlated with the rotated filter.
///
/// `errors` holds one plane per forward filter; `filter` is the forward filter
/// bank `[F][C][K][K]`. The result has one plane per forward input channel.
pub fn transposed_conv(errors: &FeatureMap, filter: &Filter, s: usize) -> Result<FeatureMap> {
    if errors.channels != filter.out_channels {
        return Err(Error::Shape(format!(
            "errors have {} planes but filter has {} output channels",
            errors.channels, filter.out_channels
        )));
    }
    if s == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    let k = filter.k;
    let rot = rotate180(filter);
    // swap roles: output channels of the gradient are the forward input channels
    let mut back = Filter::zeros(filter.in_channels, filter.out_channels, k);
    for f in 0..filter.out_channels {
        for c in 0..filter.in_channels {
            for u in 0..k {
                for v in 0..k {
                    back.set(c, f, u, v, rot.get(f, c, u, v));
                }
            }
        }
    }
    direct_conv(&pad_for_transpose(errors, k, s), &back, 1)
}

/// Insert `S-1` zero rows/cols between elements (no border).
pub fn dilate(errors: &FeatureMap, s: usize) -> FeatureMap {
    let dh = s * (errors.height - 1) + 1;
    let dw = s * (errors.width - 1) + 1;
    let mut out = FeatureMap::zeros(errors.channels, dh, dw);
    for c in 0..errors.channels {
        for a in 0..errors.height {
            for b in 0..errors.width {
                out.set(c, s * a, s * b, errors.get(c, a, b));
            }
        }
    }
    out
}

/// Filter gradients: the ifmap correlated with the stride-dilated errors.
///
/// Produces a `k x k` gradient per (error plane, ifmap channel). Ifmap
/// positions past the bottom/right edge read as zero.
pub fn dilated_conv(ifmap: &FeatureMap, errors: &FeatureMap, s: usize, k: usize) -> Result<Filter> {
    if s == 0 || k == 0 {
        return Err(Error::Shape("stride and kernel size must be >= 1".into()));
    }
    let kernel = dilate(errors, s);
    let (eh, ew) = (kernel.height + k - 1, kernel.width + k - 1);
    // zero-extend the ifmap so every k x k output position is defined
    let mut ext = FeatureMap::zeros(ifmap.channels, eh.max(ifmap.height), ew.max(ifmap.width));
    for c in 0..ifmap.channels {
        for y in 0..ifmap.height {
            for x in 0..ifmap.width {
                ext.set(c, y, x, ifmap.get(c, y, x));
            }
        }
    }
    let mut grad = Filter::zeros(errors.channels, ifmap.channels, k);
    for f in 0..errors.channels {
        for c in 0..ifmap.channels {
            for u in 0..k {
                for v in 0..k {
                    let mut acc = 0.0f32;
                    for i in 0..kernel.height {
                        for j in 0..kernel.width {
                            acc += ext.get(c, u + i, v + j) * kernel.get(f, i, j);
                        }
                    }
                    grad.set(f, c, u, v, acc);
                }
            }
        }
    }
    Ok(grad)
}

/// Fraction of multiplications in the naive padded schedule whose padded
/// operand is a structural zero. Counted over the schedule, not closed form.
pub fn zero_mult_fraction(layer: &LayerSpec) -> f64 {
    let (total, zeros) = naive_product_counts(layer);
    if total == 0 {
        0.0
    } else {
        zeros as f64 / total as f64
    }
}

/// (total, structural-zero) product counts of the naive schedule for one
/// (sample, channel, filter) plane.
pub fn naive_product_counts(layer: &LayerSpec) -> (u64, u64) {
    let (eh, ew) = layer.out_dims();
    let (k, s) = (layer.k, layer.stride);
    match layer.conv_type {
        ConvType::Direct => {
            let n = (eh * ew * k * k) as u64;
            (n, 0)
        }
        ConvType::Transposed => {
            let (ph, pw) = (padded_side(eh, k, s), padded_side(ew, k, s));
            let live = |p: usize, n: usize| p >= k - 1 && (p - (k - 1)) % s == 0 && (p - (k - 1)) / s < n;
            let (oh, ow) = (ph - k + 1, pw - k + 1);
            let (mut total, mut zeros) = (0u64, 0u64);
            for y in 0..oh {
                for x in 0..ow {
                    for u in 0..k {
                        for v in 0..k {
                            total += 1;
                            if !(live(y + u, eh) && live(x + v, ew)) {
                                zeros += 1;
                            }
                        }
                    }
                }
            }
            (total, zeros)
        }
        ConvType::Dilated => {
            let (dh, dw) = (s * (eh - 1) + 1, s * (ew - 1) + 1);
            let (mut total, mut zeros) = (0u64, 0u64);
            for u in 0..k {
                for v in 0..k {
                    for i in 0..dh {
                        for j in 0..dw {
                            total += 1;
                            let kernel_live = i % s == 0 && j % s == 0;
                            let input_live = u + i < layer.in_h && v + j < layer.in_w;
                            if !(kernel_live && input_live) {
                                zeros += 1;
                            }
                        }
                    }
                }
            }
            (total, zeros)
        }
    }
}

/// Reference output for a whole layer given its flat operand tensors
/// (layouts from [`LayerSpec::a_shape`] / [`LayerSpec::b_shape`]).
pub fn reference_output(layer: &LayerSpec, a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    layer.validate()?;
    if a.len() != layer.a_len() || b.len() != layer.b_len() {
        return Err(Error::Shape(format!(
            "operands have {}/{} values, layer needs {}/{}",
            a.len(),
            b.len(),
            layer.a_len(),
            layer.b_len()
        )));
    }
    let (_, ap, ah, aw) = layer.a_shape();
    let a_plane = ap * ah * aw;
    let mut out = Vec::with_capacity(layer.out_len());
    match layer.conv_type {
        ConvType::Direct | ConvType::Transposed => {
            let filter = Filter::from_vec(layer.num_filters, layer.channels, layer.k, b.to_vec())?;
            for n in 0..layer.batch {
                let fm = FeatureMap::from_vec(ap, ah, aw, a[n * a_plane..(n + 1) * a_plane].to_vec())?;
                let o = if layer.conv_type == ConvType::Direct {
                    let (oh, ow) = layer.out_dims();
                    let r = direct_conv(&fm, &filter, layer.stride)?;
                    if (r.height, r.width) != (oh, ow) {
                        return Err(Error::Shape("explicit ofmap dims disagree with direct conv".into()));
                    }
                    r
                } else {
                    transposed_conv(&fm, &filter, layer.stride)?
                };
                out.extend_from_slice(&o.data);
            }
        }
        ConvType::Dilated => {
            let (_, bp, bh, bw) = layer.b_shape();
            let b_plane = bp * bh * bw;
            let mut acc = vec![0.0f32; layer.out_len()];
            for n in 0..layer.batch {
                let fm = FeatureMap::from_vec(ap, ah, aw, a[n * a_plane..(n + 1) * a_plane].to_vec())?;
                let e = FeatureMap::from_vec(bp, bh, bw, b[n * b_plane..(n + 1) * b_plane].to_vec())?;
                let g = dilated_conv(&fm, &e, layer.stride, layer.k)?;
                for (o, v) in acc.iter_mut().zip(g.data) {
                    *o += v;
                }
            }
            out = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f32]]) -> FeatureMap {
        FeatureMap::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_filter() {
        let x = fm(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let w = Filter::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(direct_conv(&x, &w, 1).unwrap(), x);
    }

    #[test]
    fn four_by_four_stride_two() {
        let x = FeatureMap::from_vec(1, 4, 4, (0..16).map(|v| v as f32).collect()).unwrap();
        let w = Filter::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = direct_conv(&x, &w, 2).unwrap();
        assert_eq!((y.height, y.width), (2, 2));
        assert_eq!(y.data, vec![5.0, 9.0, 21.0, 25.0]);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let x = FeatureMap::zeros(2, 4, 4);
        let w = Filter::zeros(1, 1, 2);
        assert!(matches!(direct_conv(&x, &w, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn rotate_small() {
        let w = Filter::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(rotate180(&w).data, vec![4.0, 3.0, 2.0, 1.0]);
        let one = Filter::from_rows(&[vec![7.0]]).unwrap();
        assert_eq!(rotate180(&one), one);
    }

    #[test]
    fn padding_of_small_plane() {
        assert_eq!(inner_padding_count(2, 2), 5);
        assert_eq!(outer_padding_count(2, 3, 2), 40);
        let e = FeatureMap::from_vec(1, 2, 2, vec![1.0; 4]).unwrap();
        let p = pad_for_transpose(&e, 3, 2);
        assert_eq!((p.height, p.width), (7, 7));
        assert_eq!(p.data.iter().filter(|v| **v == 0.0).count(), 45);
    }

    #[test]
    fn stride_one_has_no_inner_padding() {
        for n in 1..20 {
            assert_eq!(inner_padding_count(n, 1), 0);
        }
    }

    #[test]
    fn transposed_output_dims() {
        let e = FeatureMap::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Filter::from_vec(1, 1, 3, (1..=9).map(|v| v as f32).collect()).unwrap();
        let g = transposed_conv(&e, &w, 2).unwrap();
        assert_eq!((g.height, g.width), (5, 5));
        let z = transposed_conv(&FeatureMap::zeros(1, 2, 2), &w, 2).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn filter_gradient_dims() {
        let x = FeatureMap::from_vec(1, 5, 4, (0..20).map(|v| v as f32).collect()).unwrap();
        let e = FeatureMap::from_vec(1, 2, 2, vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        let g = dilated_conv(&x, &e, 2, 3).unwrap();
        assert_eq!((g.out_channels, g.in_channels, g.k), (1, 1, 3));
    }

    #[test]
    fn dilation_one_is_direct_conv() {
        let x = FeatureMap::from_vec(1, 5, 5, (0..25).map(|v| (v % 7) as f32).collect()).unwrap();
        let e = FeatureMap::from_vec(1, 3, 3, (0..9).map(|v| v as f32 - 4.0).collect()).unwrap();
        let g = dilated_conv(&x, &e, 1, 3).unwrap();
        let w = Filter::from_vec(1, 1, 3, e.data.clone()).unwrap();
        let d = direct_conv(&x, &w, 1).unwrap();
        assert_eq!(g.data, d.data);
    }

    #[test]
    fn toy_zero_fraction() {
        let l = LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2);
        assert_eq!(naive_product_counts(&l), (225, 189));
        assert!((zero_mult_fraction(&l) - 0.84).abs() < 1e-12);
    }

    #[test]
    fn direct_has_no_zero_products() {
        let l = LayerSpec::new(ConvType::Direct, 1, 8, 8, 3, 1, 2);
        assert_eq!(zero_mult_fraction(&l), 0.0);
    }
}
