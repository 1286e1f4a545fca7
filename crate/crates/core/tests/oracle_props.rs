//! Reference convolutions against independent scatter/gather loops, and
//! the padding arithmetic against explicit zero counting.

use dataflow_sim::oracle::{
    dilated_conv, direct_conv, inner_padding_count, outer_padding_count, pad_for_transpose, rotate180,
    transposed_conv, zero_mult_fraction,
};
use dataflow_sim::tensor::{FeatureMap, Filter};
use dataflow_sim::{ConvType, LayerSpec};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4i8..=4, n).prop_map(|v| v.into_iter().map(f32::from).collect())
}

/// Errors, filter bank and stride of a small transposed problem.
fn transposed_case() -> impl Strategy<Value = (FeatureMap, Filter, usize)> {
    (1usize..=3, 1usize..=3, 1usize..=4, 1usize..=4, 1usize..=4, 1usize..=3).prop_flat_map(|(c, f, k, eh, ew, s)| {
        (values(f * eh * ew), values(f * c * k * k)).prop_map(move |(e, w)| {
            (
                FeatureMap::from_vec(f, eh, ew, e).unwrap(),
                Filter::from_vec(f, c, k, w).unwrap(),
                s,
            )
        })
    })
}

proptest! {
    #[test]
    fn transposed_equals_scatter((e, w, s) in transposed_case()) {
        let k = w.k;
        let (oh, ow) = (s * (e.height - 1) + k, s * (e.width - 1) + k);
        let mut want = vec![0f32; w.in_channels * oh * ow];
        for f in 0..w.out_channels {
            for c in 0..w.in_channels {
                for a in 0..e.height {
                    for b in 0..e.width {
                        for u in 0..k {
                            for v in 0..k {
                                want[(c * oh + s * a + u) * ow + s * b + v] += e.get(f, a, b) * w.get(f, c, u, v);
                            }
                        }
                    }
                }
            }
        }
        let got = transposed_conv(&e, &w, s).unwrap();
        prop_assert_eq!((got.channels, got.height, got.width), (w.in_channels, oh, ow));
        prop_assert_eq!(got.data, want);
    }

    #[test]
    fn dilated_equals_gather((e, w, s) in transposed_case(), extra in 0usize..3) {
        // reuse the generator: `w` only fixes channel count and kernel size
        let (c, k) = (w.in_channels, w.k);
        let (h, wd) = (s * (e.height - 1) + k + extra, s * (e.width - 1) + k);
        let x = FeatureMap::from_vec(c, h, wd, (0..c * h * wd).map(|i| ((i * 7) % 5) as f32 - 2.0).collect()).unwrap();
        let got = dilated_conv(&x, &e, s, k).unwrap();
        for f in 0..e.channels {
            for ci in 0..c {
                for u in 0..k {
                    for v in 0..k {
                        let mut acc = 0f32;
                        for a in 0..e.height {
                            for b in 0..e.width {
                                acc += x.get(ci, s * a + u, s * b + v) * e.get(f, a, b);
                            }
                        }
                        prop_assert_eq!(got.get(f, ci, u, v), acc);
                    }
                }
            }
        }
    }

    #[test]
    fn direct_with_unit_stride_slides_every_position(rows in 3usize..7, k in 1usize..=3) {
        let x = FeatureMap::from_vec(1, rows, rows, (0..rows * rows).map(|i| i as f32).collect()).unwrap();
        let mut w = Filter::zeros(1, 1, k);
        w.set(0, 0, 0, 0, 1.0);
        let y = direct_conv(&x, &w, 1).unwrap();
        prop_assert_eq!(y.height, rows - k + 1);
        for r in 0..y.height {
            for c in 0..y.width {
                prop_assert_eq!(y.get(0, r, c), x.get(0, r, c));
            }
        }
    }

    #[test]
    fn rotate_is_an_involution(w in values(9)) {
        let f = Filter::from_vec(1, 1, 3, w).unwrap();
        prop_assert_eq!(rotate180(&rotate180(&f)), f);
    }

    #[test]
    fn padded_zeros_match_counts(n in 1usize..12, k in 1usize..8, s in 1usize..5) {
        let ones = FeatureMap::from_vec(1, n, n, vec![1.0; n * n]).unwrap();
        let padded = pad_for_transpose(&ones, k, s);
        let zeros = padded.data.iter().filter(|v| **v == 0.0).count();
        prop_assert_eq!(zeros, inner_padding_count(n, s) + outer_padding_count(n, k, s));
        prop_assert_eq!(inner_padding_count(n, 1), 0);
    }

    #[test]
    fn zero_fraction_grows_with_stride(n in 2usize..8, k in 1usize..6) {
        let mut last = -1.0;
        for s in 1..=4 {
            let side = s * (n - 1) + k;
            let z = zero_mult_fraction(&LayerSpec::new(ConvType::Transposed, 1, side, side, k, 1, s));
            prop_assert!((0.0..=1.0).contains(&z));
            prop_assert!(z >= last, "stride {s}: {z} < {last}");
            last = z;
        }
    }
}
