//! Row-stationary baseline on the explicitly padded problem.
//!
//! PE `(i, j)` of a set keeps kernel row `i` and computes output row `j` as a
//! 1D correlation against input row `s j + i`; psums of one output row
//! accumulate upward and the top PE writes them out. Kernels taller than the
//! array and output planes wider than it are cut into segments that run as
//! consecutive passes. Padding zeros flow through as ordinary operands.

use crate::compiler::builder::{BuildStats, PassBuilder};
use crate::compiler::program::{Pass, Stream};
use crate::compiler::{filter_at, input_at, label_id, wide_stream, AddrMap, PlaneGeometry};
use crate::error::Result;
use crate::layer::{Dataflow, LayerSpec};
use crate::memory::{operand_planes, output_plane, PassPlan, SetTask};
use crate::sim::ArrayConfig;

pub fn compile_rs_pass(
    layer: &LayerSpec,
    dataflow: Dataflow,
    cfg: &ArrayConfig,
    plan: &PassPlan,
    tasks: &[SetTask],
) -> Result<Vec<(Pass, BuildStats)>> {
    let noc = cfg.noc_for(dataflow);
    let g = PlaneGeometry::of(layer);
    let map = AddrMap::of(layer);
    let (rows, cols) = (plan.set_rows, plan.set_cols);
    let (row_segs, col_segs) = (g.kr.div_ceil(rows), g.oh.div_ceil(cols));
    let mut out = Vec::new();
    for rs in 0..row_segs {
        for cs in 0..col_segs {
            let mut b = PassBuilder::new(cfg, noc.hop_latency, wide_stream(layer.conv_type));
            for (si, task) in tasks.iter().enumerate() {
                let (r0, c0) = plan.placements[si];
                let q = task.reductions.len();
                let valid_rows = rows.min(g.kr - rs * rows);
                for j in 0..cols {
                    let y = cs * cols + j;
                    if y >= g.oh {
                        break;
                    }
                    let out_row = output_plane(layer, task.sample, task.plane) * g.oh * g.ow + y * g.ow;
                    for x in 0..g.ow {
                        let label = label_id(out_row + x, si);
                        for i in 0..valid_rows {
                            let ig = rs * rows + i;
                            let pe = (r0 + i, c0 + j);
                            for (ri, &red) in task.reductions.iter().enumerate() {
                                let (ap, bp) = operand_planes(layer, task.sample, task.plane, red);
                                for jj in 0..g.kc {
                                    let word = ((x * q + ri) * g.kc + jj) as u32;
                                    let (wop, waddr) = filter_at(layer, &map, &g, bp, ig, jj);
                                    let (xop, xaddr) = input_at(layer, &map, &g, ap, g.stride * y + ig, g.stride * x + jj);
                                    let wm = b.msg(Stream::Weight, wop, waddr, 0);
                                    let xm = b.msg(Stream::Input, xop, xaddr, 0);
                                    b.mac(pe, word, wm, xm, label);
                                }
                            }
                        }
                        let pes = (0..valid_rows).rev().map(|i| (r0 + i, c0 + j)).collect();
                        b.chain(label, pes, map.out_base + (out_row + x) as u32);
                    }
                }
            }
            out.push(b.finish()?);
        }
    }
    Ok(out)
}
