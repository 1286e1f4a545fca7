//! Dataflow compilers: layer -> passes of per-PE micro-op programs.

pub mod builder;
pub mod ecoflow;
pub mod program;
pub mod row_stationary;
pub mod schedule;
pub mod systolic;

use crate::compiler::program::{CompiledLayer, Operand, ScheduleStats, Stream, PROGRAM_FORMAT};
use crate::error::{Error, Result};
use crate::layer::{ConvType, Dataflow, LayerSpec};
use crate::memory::{plan_passes, Decomposition, EnergyModel, PassPlan};
use crate::sim::ArrayConfig;

/// Global-buffer word layout of one layer: operands, materialized zeros, outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddrMap {
    pub a_base: u32,
    pub b_base: u32,
    pub zin_base: u32,
    pub zfilt_base: u32,
    pub out_base: u32,
}

impl AddrMap {
    pub fn of(layer: &LayerSpec) -> Self {
        let g = PlaneGeometry::of(layer);
        let (na, nb) = plane_counts(layer);
        let a_base = 0u32;
        let b_base = layer.a_len() as u32;
        let zin_base = b_base + layer.b_len() as u32;
        let zfilt_base = zin_base + (na * g.vin_h * g.vin_w) as u32;
        let out_base = zfilt_base + (nb * g.kr * g.kc) as u32;
        Self {
            a_base,
            b_base,
            zin_base,
            zfilt_base,
            out_base,
        }
    }
}

/// Number of primary and secondary operand planes.
pub fn plane_counts(layer: &LayerSpec) -> (usize, usize) {
    let (a0, a1, _, _) = layer.a_shape();
    let (b0, b1, _, _) = layer.b_shape();
    (a0 * a1, b0 * b1)
}

/// The layer as an explicitly padded single-plane correlation:
/// `out[y][x] = sum in[s y + i][s x + j] * filt[i][j]` over a `kr x kc` kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneGeometry {
    pub kr: usize,
    pub kc: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub vin_h: usize,
    pub vin_w: usize,
}

impl PlaneGeometry {
    pub fn of(layer: &LayerSpec) -> Self {
        let (k, s) = (layer.k, layer.stride);
        let (eh, ew) = layer.out_dims();
        match layer.conv_type {
            ConvType::Direct => Self {
                kr: k,
                kc: k,
                oh: eh,
                ow: ew,
                stride: s,
                vin_h: layer.in_h,
                vin_w: layer.in_w,
            },
            ConvType::Transposed => {
                let (oh, ow) = layer.transposed_dims();
                Self {
                    kr: k,
                    kc: k,
                    oh,
                    ow,
                    stride: 1,
                    vin_h: oh + k - 1,
                    vin_w: ow + k - 1,
                }
            }
            ConvType::Dilated => {
                let (dh, dw) = (s * (eh - 1) + 1, s * (ew - 1) + 1);
                Self {
                    kr: dh,
                    kc: dw,
                    oh: k,
                    ow: k,
                    stride: 1,
                    vin_h: k - 1 + dh,
                    vin_w: k - 1 + dw,
                }
            }
        }
    }
}

/// Element `(row, col)` of primary operand plane `plane` in the padded view.
pub fn input_at(layer: &LayerSpec, map: &AddrMap, g: &PlaneGeometry, plane: usize, row: usize, col: usize) -> (Operand, u32) {
    let zero = || {
        (
            Operand::Zero,
            map.zin_base + ((plane * g.vin_h + row) * g.vin_w + col) as u32,
        )
    };
    let (_, _, ah, aw) = layer.a_shape();
    let live = match layer.conv_type {
        ConvType::Direct | ConvType::Dilated => (row < ah && col < aw).then_some((row, col)),
        ConvType::Transposed => {
            let (k, s) = (layer.k, layer.stride);
            let lift = |p: usize, n: usize| {
                (p >= k - 1 && (p - (k - 1)) % s == 0 && (p - (k - 1)) / s < n).then(|| (p - (k - 1)) / s)
            };
            lift(row, ah).zip(lift(col, aw))
        }
    };
    match live {
        Some((r, c)) => {
            let idx = ((plane * ah + r) * aw + c) as u32;
            (Operand::A(idx), map.a_base + idx)
        }
        None => zero(),
    }
}

/// Element `(i, j)` of the kernel for secondary operand plane `plane`:
/// the filter, the rotated filter, or the stride-dilated errors.
pub fn filter_at(layer: &LayerSpec, map: &AddrMap, g: &PlaneGeometry, plane: usize, i: usize, j: usize) -> (Operand, u32) {
    let (_, _, bh, bw) = layer.b_shape();
    let live = match layer.conv_type {
        ConvType::Direct => Some((i, j)),
        ConvType::Transposed => Some((layer.k - 1 - i, layer.k - 1 - j)),
        ConvType::Dilated => {
            let s = layer.stride;
            (i % s == 0 && j % s == 0).then_some((i / s, j / s))
        }
    };
    match live {
        Some((r, c)) => {
            let idx = ((plane * bh + r) * bw + c) as u32;
            (Operand::B(idx), map.b_base + idx)
        }
        None => (
            Operand::Zero,
            map.zfilt_base + ((plane * g.kr + i) * g.kc + j) as u32,
        ),
    }
}

/// Stream carried by the wide GIN sub-bus.
pub fn wide_stream(conv: ConvType) -> Stream {
    match conv {
        ConvType::Direct | ConvType::Dilated => Stream::Weight,
        ConvType::Transposed => Stream::Input,
    }
}

/// Shape and resource limits of one PE set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Most reduction planes one set can chain without reloading psums.
    pub max_chain: usize,
    pub a_words_per_plane: u64,
    pub b_words_per_plane: u64,
    /// Partial-sum writes of each output element per chain.
    pub partial_writes_per_chain: usize,
    /// Whole-array sets (systolic): exactly one per pass.
    pub whole_array: bool,
    /// Planes of one pass must lie in one aligned block of this many.
    pub plane_block: Option<usize>,
}

impl SetGeometry {
    pub fn slots(&self, array: &ArrayConfig) -> usize {
        if self.rows == 0 || self.cols == 0 || self.rows > array.rows || self.cols > array.cols {
            return 0;
        }
        (array.rows / self.rows) * (array.cols / self.cols)
    }

    /// Top-left corners of the first `count` sets, packed left to right
    /// from the origin, then downward.
    pub fn placements(&self, array: &ArrayConfig, count: usize) -> Vec<(usize, usize)> {
        let per_row = (array.cols / self.cols.max(1)).max(1);
        (0..count)
            .map(|i| ((i / per_row) * self.rows, (i % per_row) * self.cols))
            .collect()
    }
}

pub fn set_geometry(layer: &LayerSpec, dataflow: Dataflow, array: &ArrayConfig) -> Result<SetGeometry> {
    layer.validate()?;
    let (_, _, ah, aw) = layer.a_shape();
    let (_, _, bh, bw) = layer.b_shape();
    let k = layer.k;
    let (eh, ew) = layer.out_dims();
    let unlimited = Decomposition::of(layer).reductions;
    match (dataflow, layer.conv_type) {
        (Dataflow::EcoFlow, ConvType::Transposed) => {
            let (gr, gc) = schedule::group_factors(eh, ew, array.rows, array.cols);
            // every error word of the set stays resident for the whole sweep
            let resident = gr * gc;
            if resident > array.filter_rf {
                return Err(Error::Resource {
                    resource: "filter register file",
                    required: resident,
                    available: array.filter_rf,
                });
            }
            Ok(SetGeometry {
                rows: eh.div_ceil(gr),
                cols: ew.div_ceil(gc),
                max_chain: (array.filter_rf / resident).min(unlimited),
                a_words_per_plane: (ah * aw) as u64,
                b_words_per_plane: (bh * bw) as u64,
                partial_writes_per_chain: 1,
                whole_array: false,
                plane_block: None,
            })
        }
        (Dataflow::EcoFlow, ConvType::Dilated) => {
            let v = array.expansion.max(1);
            let rows = k * v;
            let (gr, gc) = schedule::group_factors(rows, k, array.rows, array.cols);
            if gr > 1 && v > 1 {
                return Err(Error::Plan(format!(
                    "expansion {v} makes the {k}x{k} gradient set taller than the array"
                )));
            }
            Ok(SetGeometry {
                rows: rows.div_ceil(gr),
                cols: k.div_ceil(gc),
                max_chain: unlimited,
                a_words_per_plane: (ah * aw) as u64,
                b_words_per_plane: (eh * ew) as u64,
                partial_writes_per_chain: 1,
                whole_array: false,
                plane_block: Some(layer.num_filters),
            })
        }
        (Dataflow::Matmul, _) => Ok(SetGeometry {
            rows: array.rows,
            cols: array.cols,
            max_chain: unlimited,
            a_words_per_plane: (ah * aw) as u64,
            b_words_per_plane: (bh * bw) as u64,
            partial_writes_per_chain: 1,
            whole_array: true,
            plane_block: None,
        }),
        _ => {
            let g = PlaneGeometry::of(layer);
            let rows = g.kr.min(array.rows);
            let cols = g.oh.min(array.cols);
            let by_filter = array.filter_rf / g.kc;
            let by_input = array.ifmap_rf / (g.kc + g.stride);
            Ok(SetGeometry {
                rows,
                cols,
                max_chain: by_filter.min(by_input),
                a_words_per_plane: (g.vin_h * g.vin_w) as u64,
                b_words_per_plane: (g.kr * g.kc) as u64,
                partial_writes_per_chain: g.kr.div_ceil(rows),
                whole_array: false,
                plane_block: None,
            })
        }
    }
}

/// Compile with the plan chosen by [`plan_passes`] under default energies.
pub fn compile(layer: &LayerSpec, dataflow: Dataflow, cfg: &ArrayConfig) -> Result<CompiledLayer> {
    let plan = plan_passes(layer, dataflow, cfg, &EnergyModel::default())?;
    compile_with_plan(layer, dataflow, cfg, plan)
}

pub fn compile_with_plan(layer: &LayerSpec, dataflow: Dataflow, cfg: &ArrayConfig, plan: PassPlan) -> Result<CompiledLayer> {
    layer.validate()?;
    cfg.validate()?;
    let d = Decomposition::of(layer);
    let tasks = plan.enumerate(d);
    let mut stats = ScheduleStats {
        pe_sets: plan.sets_per_pass(),
        group_factor: 1,
        expansion_factor: 1,
        ..Default::default()
    };
    let mut passes = Vec::new();
    match (dataflow, layer.conv_type) {
        (Dataflow::EcoFlow, ConvType::Transposed) => {
            let mut hint = ecoflow::TransposedHint::default();
            for pass_tasks in &tasks {
                let (p, s, g) = ecoflow::compile_transposed_pass(layer, cfg, &plan, pass_tasks, &mut hint)?;
                stats.total_macs += s.macs;
                stats.structural_zero_macs += s.zero_macs;
                stats.group_factor = g;
                passes.push(p);
            }
        }
        (Dataflow::EcoFlow, ConvType::Dilated) => {
            for pass_tasks in &tasks {
                let (p, s, g) = ecoflow::compile_dilated_pass(layer, cfg, &plan, pass_tasks)?;
                stats.total_macs += s.macs;
                stats.structural_zero_macs += s.zero_macs;
                stats.group_factor = g;
                stats.expansion_factor = cfg.expansion.max(1);
                passes.push(p);
            }
        }
        (Dataflow::Matmul, _) => {
            let (p, s) = systolic::compile_matmul_lowered(layer, cfg)?;
            stats.total_macs += s.macs;
            stats.structural_zero_macs += s.zero_macs;
            passes.push(p);
        }
        _ => {
            for pass_tasks in &tasks {
                for (p, s) in row_stationary::compile_rs_pass(layer, dataflow, cfg, &plan, pass_tasks)? {
                    stats.total_macs += s.macs;
                    stats.structural_zero_macs += s.zero_macs;
                    passes.push(p);
                }
            }
        }
    }
    for p in &passes {
        builder::check_pass(p)?;
    }
    Ok(CompiledLayer {
        format: PROGRAM_FORMAT.to_string(),
        layer: layer.clone(),
        dataflow,
        array: (cfg.rows, cfg.cols),
        plan,
        stats,
        passes,
    })
}

/// Distinct-label id: `out_flat` tagged with a set/segment discriminator.
pub(crate) fn label_id(out_flat: usize, tag: usize) -> u64 {
    ((tag as u64) << 40) | out_flat as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_padded_view_matches_oracle_padding() {
        let layer = LayerSpec::new(ConvType::Transposed, 1, 5, 5, 3, 1, 2);
        let g = PlaneGeometry::of(&layer);
        let map = AddrMap::of(&layer);
        let (eh, ew) = layer.out_dims();
        assert_eq!((g.vin_h, g.vin_w), (crate::oracle::padded_side(eh, 3, 2), crate::oracle::padded_side(ew, 3, 2)));
        let live = (0..g.vin_h)
            .flat_map(|r| (0..g.vin_w).map(move |c| (r, c)))
            .filter(|&(r, c)| !input_at(&layer, &map, &g, 0, r, c).0.is_zero())
            .count();
        assert_eq!(live, eh * ew);
    }

    #[test]
    fn zero_addresses_are_distinct_from_operands() {
        let layer = LayerSpec::new(ConvType::Dilated, 2, 7, 7, 3, 2, 2);
        let g = PlaneGeometry::of(&layer);
        let map = AddrMap::of(&layer);
        let (op, addr) = filter_at(&layer, &map, &g, 1, 1, 0);
        assert!(op.is_zero());
        assert!(addr >= map.zfilt_base && addr < map.out_base);
        let (op, addr) = filter_at(&layer, &map, &g, 1, 2, 2);
        assert_eq!(op, Operand::B(addr - map.b_base));
    }

    #[test]
    fn placements_pack_left_to_right() {
        let g = SetGeometry {
            rows: 3,
            cols: 5,
            max_chain: 1,
            a_words_per_plane: 1,
            b_words_per_plane: 1,
            partial_writes_per_chain: 1,
            whole_array: false,
            plane_block: None,
        };
        let cfg = ArrayConfig::default();
        assert_eq!(g.slots(&cfg), 12);
        assert_eq!(g.placements(&cfg, 4), vec![(0, 0), (0, 5), (0, 10), (3, 0)]);
    }
}
