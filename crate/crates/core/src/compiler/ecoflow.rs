//! Zero-free compilation of transposed and dilated convolutions.
//!
//! Transposed: one PE per error element, the filter is broadcast one weight
//! per step and same-label products meet in a column after the circular
//! shift. Dilated: one PE per filter gradient, errors are broadcast and
//! ifmap elements multicast to every PE that consumes them.

use std::collections::{BTreeMap, BTreeSet};

use crate::compiler::builder::{BuildStats, PassBuilder};
use crate::compiler::program::{Operand, Pass, Stream};
use crate::compiler::schedule::{self, ScheduleMatrix};
use crate::compiler::{label_id, wide_stream, AddrMap};
use crate::error::{Error, Result};
use crate::layer::{ConvType, Dataflow, LayerSpec};
use crate::memory::{dilated_plane, operand_planes, PassPlan, SetTask};
use crate::sim::ArrayConfig;

/// Per-plane schedule used for every set of a transposed layer.
pub fn transposed_plane_schedule(layer: &LayerSpec, cfg: &ArrayConfig) -> Result<ScheduleMatrix> {
    schedule::transposed_schedule(layer.k, layer.stride, layer.out_dims(), cfg.rows, cfg.cols)
}

/// Per-plane schedule used for every set of a dilated layer.
pub fn dilated_plane_schedule(layer: &LayerSpec, cfg: &ArrayConfig) -> Result<ScheduleMatrix> {
    let m = schedule::symbolic_dilated(layer.k, layer.stride, layer.out_dims(), (layer.in_h, layer.in_w))?;
    let v = cfg.expansion.max(1);
    let m = if v > 1 { m } else { schedule::apply_grouping(m, cfg.rows, cfg.cols) };
    Ok(schedule::apply_expansion(m, v))
}

fn psum_pressure(e: &Error) -> bool {
    matches!(e, Error::Resource { resource, .. } if resource.contains("psum"))
}

pub fn compile_transposed_pass(
    layer: &LayerSpec,
    cfg: &ArrayConfig,
    plan: &PassPlan,
    tasks: &[SetTask],
    hint: &mut TransposedHint,
) -> Result<(Pass, BuildStats, usize)> {
    if layer.conv_type != ConvType::Transposed {
        return Err(Error::Unsupported(format!("{} layer on the transposed compiler", layer.conv_type)));
    }
    let m = transposed_plane_schedule(layer, cfg)?;
    let k = layer.k;
    let mut last = None;
    // Too many live labels: shrink the block of filter positions swept per
    // reduction, then sweep the filter rows in chunks whose partial sums
    // accumulate in the global buffer.
    let g = m.fold();
    let mut blocks = vec![k * k];
    let narrow = cfg.psum_rf * 3 / 4;
    if narrow > 0 && narrow < k * k {
        blocks.push(narrow);
    }
    let attempts: Vec<(usize, usize)> = (1..=k).flat_map(|c| blocks.iter().map(move |&b| (c, b))).collect();
    for (i, &(chunks, bl)) in attempts.iter().enumerate().skip(hint.attempt) {
        // errors stay resident across chunks unless their register file overflows
        let mut res = Err(Error::Unsupported(String::new()));
        if !(hint.refetch && i == hint.attempt) {
            res = transposed_with_chunks(layer, cfg, plan, tasks, &m, chunks, bl, false);
        }
        let retry = hint.refetch && i == hint.attempt
            || matches!(&res, Err(Error::Resource { resource, .. }) if resource.contains("filter"));
        let mut refetch = false;
        if retry {
            res = transposed_with_chunks(layer, cfg, plan, tasks, &m, chunks, bl, true);
            refetch = true;
        }
        match res {
            Err(e) if psum_pressure(&e) => last = Some(e),
            Ok((p, s)) => {
                *hint = TransposedHint { attempt: i, refetch };
                return Ok((p, s, g));
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Unsupported("no transposed mapping attempt left".into())))
}

/// Mapping choice of the previous pass of a layer. Later passes start their
/// search there, since passes of one layer have the same shape or a smaller one.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransposedHint {
    attempt: usize,
    refetch: bool,
}

fn transposed_with_chunks(
    layer: &LayerSpec,
    cfg: &ArrayConfig,
    plan: &PassPlan,
    tasks: &[SetTask],
    m: &ScheduleMatrix,
    chunks: usize,
    block: usize,
    refetch: bool,
) -> Result<(Pass, BuildStats)> {
    let noc = cfg.noc_for(Dataflow::EcoFlow);
    let map = AddrMap::of(layer);
    let (k, g) = (layer.k, m.fold());
    let (eh, ew) = layer.out_dims();
    let (oh, ow) = layer.transposed_dims();
    let cu = k.div_ceil(chunks);
    // Errors stay put for the whole sweep, so they take the larger filter
    // register file and the wide sub-bus; weights pass through briefly.
    let mut b = PassBuilder::new(cfg, noc.hop_latency, Stream::Weight);
    for (si, task) in tasks.iter().enumerate() {
        let (r0, c0) = plan.placements[si];
        let q = task.reductions.len() as u32;
        let mut base = 0u32;
        for ch in 0..chunks {
            let (ulo, uhi) = (ch * cu, ((ch + 1) * cu).min(k));
            if ulo >= uhi {
                break;
            }
            let per = uhi - ulo;
            let span = per * k;
            let mut chains: BTreeMap<u64, (usize, BTreeSet<usize>, u32)> = BTreeMap::new();
            for (idx, col) in m.columns.iter().enumerate() {
                let pe = (r0 + idx / m.pe_cols, c0 + idx % m.pe_cols);
                for p in col {
                    let (w_idx, slot) = (p.order / g, p.order % g);
                    let (u, v) = (w_idx % k, w_idx / k);
                    if u < ulo || u >= uhi {
                        continue;
                    }
                    let pos = v * per + (u - ulo);
                    // block-major, then reduction, then position in block
                    let blk = pos / block;
                    let bsz = block.min(span - blk * block);
                    let (a, bb) = p.origin;
                    let l = p.label.expect("labelled schedule");
                    let out_flat = ((task.sample * layer.channels + task.plane) * oh + l.row) * ow + l.col;
                    let label = label_id(out_flat, si * chunks + ch);
                    for (fi, &f) in task.reductions.iter().enumerate() {
                        let word = base + (slot * q as usize * span + blk * block * q as usize + fi * bsz + pos % block) as u32;
                        let (ap, bp) = operand_planes(layer, task.sample, task.plane, f);
                        let widx = ((bp * k + u) * k + v) as u32;
                        let eidx = ((ap * eh + a) * ew + bb) as u32;
                        let wm = b.msg(Stream::Input, Operand::B(widx), map.b_base + widx, (ch * g + slot) as u32);
                        let epoch = if refetch { ch as u32 } else { 0 };
                        let em = b.msg(Stream::Weight, Operand::A(eidx), map.a_base + eidx, epoch);
                        b.mac(pe, word, em, wm, label);
                    }
                    chains
                        .entry(label)
                        .or_insert((pe.1, BTreeSet::new(), map.out_base + out_flat as u32))
                        .1
                        .insert(pe.0);
                }
            }
            for (label, (col, rows, addr)) in chains {
                b.chain(label, rows.iter().rev().map(|r| (*r, col)).collect(), addr);
            }
            base += (g * span) as u32 * q;
        }
    }
    b.finish()
}

pub fn compile_dilated_pass(
    layer: &LayerSpec,
    cfg: &ArrayConfig,
    plan: &PassPlan,
    tasks: &[SetTask],
) -> Result<(Pass, BuildStats, usize)> {
    if layer.conv_type != ConvType::Dilated {
        return Err(Error::Unsupported(format!("{} layer on the dilated compiler", layer.conv_type)));
    }
    let m = dilated_plane_schedule(layer, cfg)?;
    // Ifmap words multicast across rows can outlive the register file on
    // large maps; fall back to per-row multicast, which bounds lifetimes.
    match dilated_with_mode(layer, cfg, plan, tasks, &m, false) {
        Err(Error::Resource { resource, .. }) if resource.contains("ifmap") => {
            dilated_with_mode(layer, cfg, plan, tasks, &m, true).map(|(p, s)| (p, s, m.fold()))
        }
        r => r.map(|(p, s)| (p, s, m.fold())),
    }
}

fn dilated_with_mode(
    layer: &LayerSpec,
    cfg: &ArrayConfig,
    plan: &PassPlan,
    tasks: &[SetTask],
    m: &ScheduleMatrix,
    row_local: bool,
) -> Result<(Pass, BuildStats)> {
    let noc = cfg.noc_for(Dataflow::EcoFlow);
    let map = AddrMap::of(layer);
    let k = layer.k;
    let (eh, ew) = layer.out_dims();
    let (ih, iw) = (layer.in_h, layer.in_w);
    let period = m.columns.iter().flatten().map(|p| p.order + 1).max().unwrap_or(0) as u32;
    let mut b = PassBuilder::new(cfg, noc.hop_latency, wide_stream(layer.conv_type));
    for (si, task) in tasks.iter().enumerate() {
        let (r0, c0) = plan.placements[si];
        let (f, c) = dilated_plane(layer, task.plane);
        let mut chains: BTreeMap<u64, (usize, BTreeSet<usize>, u32)> = BTreeMap::new();
        for (idx, col) in m.columns.iter().enumerate() {
            let pe = (r0 + idx / m.pe_cols, c0 + idx % m.pe_cols);
            let epoch = if row_local { pe.0 as u32 + 1 } else { 0 };
            for p in col {
                let l = p.label.expect("labelled schedule");
                let out_flat = ((f * layer.channels + c) * k + l.row) * k + l.col;
                let label = label_id(out_flat, si);
                let (a, bb) = (p.w_index / ew, p.w_index % ew);
                let (y, x) = (p.e_index / iw, p.e_index % iw);
                for (ri, &n) in task.reductions.iter().enumerate() {
                    let word = ri as u32 * period + p.order as u32;
                    let (ap, bp) = operand_planes(layer, task.sample, task.plane, n);
                    let eidx = ((bp * eh + a) * ew + bb) as u32;
                    let aidx = ((ap * ih + y) * iw + x) as u32;
                    let wm = b.msg(Stream::Weight, Operand::B(eidx), map.b_base + eidx, 0);
                    let xm = b.msg(Stream::Input, Operand::A(aidx), map.a_base + aidx, epoch);
                    b.mac(pe, word, wm, xm, label);
                }
                chains
                    .entry(label)
                    .or_insert((pe.1, BTreeSet::new(), map.out_base + out_flat as u32))
                    .1
                    .insert(pe.0);
            }
        }
        for (label, (col, rows, addr)) in chains {
            b.chain(label, rows.iter().rev().map(|r| (*r, col)).collect(), addr);
        }
    }
    b.finish()
}
