//! im2col lowering onto an output-stationary systolic array.
//!
//! `C[M x N] = A[M x Kr] B[Kr x N]` runs in `R x C` output tiles. Row `i` of a
//! tile receives A from the left edge, column `j` receives B from the top;
//! both are forwarded to the neighbour, skewed one word per hop, and every
//! PE writes its finished output over GON while the next tile streams in.

use std::collections::BTreeMap;

use crate::compiler::builder::BuildStats;
use crate::compiler::program::{Coord, FeedMsg, Mac, MulticastGroupTable, Operand, Pass, PeProgram, Send, Stream};
use crate::compiler::{filter_at, input_at, wide_stream, AddrMap, PlaneGeometry};
use crate::error::{Error, Result};
use crate::layer::{ConvType, LayerSpec};
use crate::sim::ArrayConfig;

/// A lowered GEMM: operand and output addressing for each `(m, k, n)`.
pub struct Gemm<'a> {
    pub m: usize,
    pub kr: usize,
    pub n: usize,
    pub a: Box<dyn Fn(usize, usize) -> (Operand, u32) + 'a>,
    pub b: Box<dyn Fn(usize, usize) -> (Operand, u32) + 'a>,
    pub out: Box<dyn Fn(usize, usize) -> u32 + 'a>,
}

/// im2col view of a layer over its explicitly padded problem.
pub fn lower(layer: &LayerSpec) -> Gemm<'_> {
    let g = PlaneGeometry::of(layer);
    let map = AddrMap::of(layer);
    let (kk, s) = (g.kr * g.kc, g.stride);
    let (c, f) = (layer.channels, layer.num_filters);
    let pix = g.oh * g.ow;
    match layer.conv_type {
        // m = (n, y, x); k = (c, i, j); n = f
        ConvType::Direct | ConvType::Transposed => {
            let (reds, outs) = if layer.conv_type == ConvType::Direct { (c, f) } else { (f, c) };
            Gemm {
                m: layer.batch * pix,
                kr: reds * kk,
                n: outs,
                a: Box::new(move |m, k| {
                    let (smp, p) = (m / pix, m % pix);
                    let (red, ij) = (k / kk, k % kk);
                    let ap = smp * if layer.conv_type == ConvType::Direct { c } else { f } + red;
                    input_at(layer, &map, &g, ap, s * (p / g.ow) + ij / g.kc, s * (p % g.ow) + ij % g.kc)
                }),
                b: Box::new(move |k, n| {
                    let (red, ij) = (k / kk, k % kk);
                    let bp = if layer.conv_type == ConvType::Direct { n * c + red } else { red * c + n };
                    filter_at(layer, &map, &g, bp, ij / g.kc, ij % g.kc)
                }),
                out: Box::new(move |m, n| map.out_base + (((m / pix) * outs + n) * pix + m % pix) as u32),
            }
        }
        // m = (c, u, v); k = (n, i, j); n = f
        ConvType::Dilated => Gemm {
            m: c * pix,
            kr: layer.batch * kk,
            n: f,
            a: Box::new(move |m, k| {
                let (ch, p) = (m / pix, m % pix);
                let (smp, ij) = (k / kk, k % kk);
                input_at(layer, &map, &g, smp * c + ch, p / g.ow + ij / g.kc, p % g.ow + ij % g.kc)
            }),
            b: Box::new(move |k, n| {
                let (smp, ij) = (k / kk, k % kk);
                filter_at(layer, &map, &g, smp * f + n, ij / g.kc, ij % g.kc)
            }),
            out: Box::new(move |m, n| map.out_base + ((n * c + m / pix) * pix + m % pix) as u32),
        },
    }
}

pub fn compile_matmul_lowered(layer: &LayerSpec, cfg: &ArrayConfig) -> Result<(Pass, BuildStats)> {
    compile_gemm(&lower(layer), cfg, wide_stream(layer.conv_type))
}

/// Output-stationary systolic program for an arbitrary lowered GEMM.
pub fn compile_gemm(gemm: &Gemm<'_>, cfg: &ArrayConfig, wide: Stream) -> Result<(Pass, BuildStats)> {
    let (rows, cols) = (cfg.rows, cfg.cols);
    let kr = gemm.kr;
    if kr == 0 || gemm.m == 0 || gemm.n == 0 {
        return Err(Error::Shape("empty GEMM".into()));
    }
    let lat = cfg.mac_latency() as usize;
    let nslots = ((kr + lat).div_ceil(kr) + 1).min(cfg.psum_rf);
    if nslots < 2 && kr <= lat {
        return Err(Error::Resource {
            resource: "psum register file".into(),
            required: 2,
            available: cfg.psum_rf,
        });
    }
    let tiles_m = gemm.m.div_ceil(rows);
    let tiles_n = gemm.n.div_ceil(cols);
    let mut progs: BTreeMap<Coord, PeProgram> = BTreeMap::new();
    let mut stats = BuildStats::default();
    // (deadline word, pe, msg) per stream
    let mut feeds: Vec<(usize, Stream, Coord, FeedMsg)> = Vec::new();
    let mut groups = MulticastGroupTable::default();
    let mut gindex = BTreeMap::new();
    for tm in 0..tiles_m {
        for tn in 0..tiles_n {
            let tau = tm * tiles_n + tn;
            let (m0, n0) = (tm * rows, tn * cols);
            let rm = rows.min(gemm.m - m0);
            let cn = cols.min(gemm.n - n0);
            let slot = (tau % nslots) as u8;
            for i in 0..rm {
                for j in 0..cn {
                    let pe = (i, j);
                    let prog = progs.entry(pe).or_insert_with(|| PeProgram::new(i, j));
                    for k in 0..kr {
                        let word = tau * kr + k + i + j;
                        let op = prog.at(word);
                        op.load_w = Some(0);
                        op.load_in = Some(0);
                        op.mac = Some(Mac { w: 0, x: 0, slot });
                        op.fwd_in = j + 1 < cn;
                        op.fwd_w = i + 1 < rm;
                        let (ao, _) = (gemm.a)(m0 + i, k);
                        let (bo, _) = (gemm.b)(k, n0 + j);
                        stats.macs += 1;
                        if ao.is_zero() || bo.is_zero() {
                            stats.zero_macs += 1;
                        }
                    }
                    let mut w = tau * kr + kr - 1 + i + j + lat;
                    while prog.at(w).send.is_some() {
                        w += 1;
                    }
                    prog.at(w).send = Some(Send::WriteOut { slot });
                    prog.out_addrs.push((gemm.out)(m0 + i, n0 + j));
                }
            }
            for i in 0..rm {
                let gid = groups.intern(Stream::Input, vec![(i, 0)], &mut gindex);
                for k in 0..kr {
                    let (src, gb_addr) = (gemm.a)(m0 + i, k);
                    feeds.push((tau * kr + k + i, Stream::Input, (i, 0), FeedMsg { group: gid, src, gb_addr }));
                }
            }
            for j in 0..cn {
                let gid = groups.intern(Stream::Weight, vec![(0, j)], &mut gindex);
                for k in 0..kr {
                    let (src, gb_addr) = (gemm.b)(k, n0 + j);
                    feeds.push((tau * kr + k + j, Stream::Weight, (0, j), FeedMsg { group: gid, src, gb_addr }));
                }
            }
        }
    }
    feeds.sort_by_key(|f| (f.0, f.1, f.2));
    let mut pass = Pass::empty(true, wide);
    for (_, stream, _, msg) in feeds {
        match stream {
            Stream::Weight => pass.weight_feed.push(msg),
            Stream::Input => pass.input_feed.push(msg),
        }
    }
    let subs = groups.subscriptions();
    for (pe, p) in progs.iter_mut() {
        p.subscriptions = subs.get(pe).cloned().unwrap_or_default();
        // out_addrs were pushed tile by tile; sends are in the same order
        debug_assert_eq!(
            p.ops.iter().filter(|o| o.send.is_some()).count(),
            p.out_addrs.len()
        );
    }
    pass.groups = groups;
    pass.programs = progs.into_values().collect();
    Ok((pass, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavefront_of_2x2() {
        let cfg = ArrayConfig::default().with_dims(2, 2);
        let gemm = Gemm {
            m: 2,
            kr: 2,
            n: 2,
            a: Box::new(|m, k| (Operand::A((m * 2 + k) as u32), (m * 2 + k) as u32)),
            b: Box::new(|k, n| (Operand::B((k * 2 + n) as u32), 10 + (k * 2 + n) as u32)),
            out: Box::new(|m, n| 100 + (m * 2 + n) as u32),
        };
        let (pass, stats) = compile_gemm(&gemm, &cfg, Stream::Input).unwrap();
        assert_eq!(stats.macs, 8);
        let p11 = pass.programs.iter().find(|p| (p.row, p.col) == (1, 1)).unwrap();
        // first MAC of PE (1,1) is two hops behind PE (0,0)
        assert!(p11.ops[..2].iter().all(|o| o.is_idle()));
        assert!(p11.ops[2].mac.is_some() && p11.ops[3].mac.is_some());
        assert!(!p11.ops[2].fwd_in && !p11.ops[2].fwd_w);
        let p00 = &pass.programs[0];
        assert!(p00.ops[0].fwd_in && p00.ops[0].fwd_w);
        assert_eq!(pass.input_feed.len(), 4);
        assert_eq!(pass.weight_feed.len(), 4);
    }
}
