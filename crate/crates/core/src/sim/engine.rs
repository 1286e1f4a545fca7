//! The per-cycle simulation loop.
//!
//! Every cycle the feeders push operand words onto the GIN, the GON arbiter
//! drains PE output queues into the global buffer, and each PE tries to
//! issue its next FSM word. A word issues only when all its inputs are
//! present and all its destinations have room; otherwise the PE stalls.

use std::collections::VecDeque;
use std::io::Write;

use crate::compiler::program::{CompiledLayer, FeedMsg, MicroOp, Operand, Pass, Send, Stream};
use crate::compiler::{compile, AddrMap};
use crate::error::{Error, Result};
use crate::layer::{Dataflow, LayerSpec};
use crate::memory::{AccessKind, DramChannel, GlobalBuffer};
use crate::noc::{Network, NocConfig};
use crate::sim::{ArrayConfig, EventCounters, PeStats, SimResult, StallBreakdown};
use crate::tensor::quantize16;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Abort once this many cycles have elapsed.
    pub max_cycles: Option<u64>,
}

type Queue = VecDeque<(f32, u64)>;

/// Feed messages examined per stream and cycle. A blocked message holds
/// back later messages to any of its members, so per-PE order is kept.
const FEED_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy)]
struct Psum {
    value: f32,
    ready_at: u64,
}

struct PeState {
    pass: usize,
    prog: Option<usize>,
    pc: usize,
    wreg: Vec<f32>,
    ireg: Vec<f32>,
    slots: Vec<Psum>,
    qw: Queue,
    qi: Queue,
    ql: Queue,
    outq: VecDeque<(f32, u32, u64)>,
    out_ptr: usize,
    used: bool,
}

impl PeState {
    fn new(cfg: &ArrayConfig) -> Self {
        Self {
            pass: 0,
            prog: None,
            pc: 0,
            wreg: vec![0.0; cfg.filter_rf],
            ireg: vec![0.0; cfg.ifmap_rf],
            slots: vec![Psum { value: 0.0, ready_at: 0 }; cfg.psum_rf],
            qw: Queue::new(),
            qi: Queue::new(),
            ql: Queue::new(),
            outq: VecDeque::new(),
            out_ptr: 0,
            used: false,
        }
    }

    fn queue(&self, s: Stream) -> &Queue {
        match s {
            Stream::Weight => &self.qw,
            Stream::Input => &self.qi,
        }
    }

    fn queue_mut(&mut self, s: Stream) -> &mut Queue {
        match s {
            Stream::Weight => &mut self.qw,
            Stream::Input => &mut self.qi,
        }
    }
}

#[derive(Clone, Copy)]
enum Push {
    Weight,
    Input,
    Local,
}

/// Compile and simulate a layer on the given operands.
pub fn simulate_layer(layer: &LayerSpec, dataflow: Dataflow, cfg: &ArrayConfig, a: &[f32], b: &[f32]) -> Result<(CompiledLayer, SimResult)> {
    let compiled = compile(layer, dataflow, cfg)?;
    let result = run(&compiled, a, b, cfg)?;
    Ok((compiled, result))
}

pub fn run(compiled: &CompiledLayer, a: &[f32], b: &[f32], cfg: &ArrayConfig) -> Result<SimResult> {
    run_with(compiled, a, b, cfg, &RunOptions::default(), None)
}

struct Sim<'a, 't> {
    cfg: &'a ArrayConfig,
    noc: &'a NocConfig,
    a: &'a [f32],
    b: &'a [f32],
    map: AddrMap,
    gb_resident: bool,
    gb: GlobalBuffer,
    dram: DramChannel,
    fetched_a: Vec<bool>,
    fetched_b: Vec<bool>,
    out: Vec<f32>,
    written: Vec<bool>,
    ev: EventCounters,
    stalls: StallBreakdown,
    stats: Vec<PeStats>,
    pes: Vec<PeState>,
    cycle: u64,
    trace: Option<&'t mut dyn Write>,
}

impl<'a, 't> Sim<'a, 't> {
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cfg.cols + c
    }

    fn value(&self, src: Operand) -> f32 {
        let v = match src {
            Operand::A(i) => self.a[i as usize],
            Operand::B(i) => self.b[i as usize],
            Operand::Zero => 0.0,
        };
        if self.cfg.quantize16 {
            quantize16(v)
        } else {
            v
        }
    }

    fn trace(&mut self, line: std::fmt::Arguments<'_>) -> Result<()> {
        if let Some(t) = self.trace.as_mut() {
            writeln!(t, "{} {}", self.cycle, line)?;
        }
        Ok(())
    }

    /// Mark the first message of every not-yet-fetched operand in a feed;
    /// those words stream in from DRAM instead of the global buffer.
    fn first_touches(&mut self, feed: impl Iterator<Item = FeedMsg>) -> Vec<bool> {
        feed.map(|m| {
                let flag = match m.src {
                    Operand::A(i) => &mut self.fetched_a[i as usize],
                    Operand::B(i) => &mut self.fetched_b[i as usize],
                    Operand::Zero => return false,
                };
                !std::mem::replace(flag, true)
            })
            .collect()
    }
}

pub fn run_with<'a, 't>(
    compiled: &'a CompiledLayer,
    a: &'a [f32],
    b: &'a [f32],
    cfg: &'a ArrayConfig,
    opts: &RunOptions,
    trace: Option<&'t mut dyn Write>,
) -> Result<SimResult> {
    let layer = &compiled.layer;
    cfg.validate()?;
    if (cfg.rows, cfg.cols) != compiled.array {
        return Err(Error::Config(format!(
            "program compiled for a {}x{} array, config describes {}x{}",
            compiled.array.0, compiled.array.1, cfg.rows, cfg.cols
        )));
    }
    if a.len() != layer.a_len() || b.len() != layer.b_len() {
        return Err(Error::Shape(format!(
            "operands have {}/{} values, layer needs {}/{}",
            a.len(),
            b.len(),
            layer.a_len(),
            layer.b_len()
        )));
    }
    let noc = cfg.noc_for(compiled.dataflow);
    let mut sim = Sim {
        cfg,
        noc,
        a,
        b,
        map: AddrMap::of(layer),
        gb_resident: compiled.plan.gb_resident,
        gb: GlobalBuffer::new(cfg.gb.clone()),
        dram: DramChannel::new(cfg.dram.clone()),
        fetched_a: vec![false; a.len()],
        fetched_b: vec![false; b.len()],
        out: vec![0.0; layer.out_len()],
        written: vec![false; layer.out_len()],
        ev: EventCounters::default(),
        stalls: StallBreakdown::default(),
        stats: vec![PeStats::default(); cfg.rows * cfg.cols],
        pes: (0..cfg.rows * cfg.cols).map(|_| PeState::new(cfg)).collect(),
        cycle: 0,
        trace,
    };
    simulate_passes(&mut sim, &compiled.passes, opts)?;
    // final outputs leave through DRAM
    let out_words = layer.out_len() as u64;
    sim.ev.gb_reads += out_words;
    sim.ev.dram_writes += out_words;
    let bytes = (out_words as usize) * noc.word_bits.div_ceil(8);
    let done = sim.dram.dram_access(bytes, AccessKind::Write, sim.cycle);
    let total = done.max(sim.cycle);
    for (i, st) in sim.stats.iter_mut().enumerate() {
        let _ = i;
        st.idle += total - sim.cycle;
    }
    sim.cycle = total;
    sim.ev.gb_conflicts = sim.gb.conflicts;
    let used: Vec<usize> = (0..sim.pes.len()).filter(|&i| sim.pes[i].used).collect();
    let utilization = if used.is_empty() || total == 0 {
        0.0
    } else {
        used.iter()
            .map(|&i| (sim.stats[i].busy - sim.stats[i].stall) as f64 / total as f64)
            .sum::<f64>()
            / used.len() as f64
    };
    Ok(SimResult {
        cycles: total,
        rows: cfg.rows,
        cols: cfg.cols,
        pe: sim.stats,
        events: sim.ev,
        stalls: sim.stalls,
        output: sim.out,
        utilization,
        runtime_us: total as f64 / cfg.clock_mhz,
    })
}

fn fault(cycle: u64, row: usize, col: usize, reason: impl Into<String>) -> Error {
    Error::SimFault {
        cycle,
        row,
        col,
        reason: reason.into(),
    }
}

/// Run all passes back to back. A PE moves on to its next pass program as
/// soon as it finishes the current one; feeds are the passes' feeds in order.
fn simulate_passes(sim: &mut Sim<'_, '_>, passes: &[Pass], opts: &RunOptions) -> Result<()> {
    let cfg = sim.cfg;
    let (rows, cols) = (cfg.rows, cfg.cols);
    let depth = cfg.queue_depth;
    let hop = sim.noc.hop_latency.max(1);
    let npass = passes.len();
    // program index of every PE in every pass
    let mut prog_of: Vec<Vec<Option<usize>>> = vec![vec![None; rows * cols]; npass];
    for (pi, pass) in passes.iter().enumerate() {
        for (i, p) in pass.programs.iter().enumerate() {
            if p.row >= rows || p.col >= cols {
                return Err(fault(sim.cycle, p.row, p.col, "program placed outside the array"));
            }
            let idx = sim.idx(p.row, p.col);
            prog_of[pi][idx] = Some(i);
            sim.pes[idx].used = true;
        }
        for g in &pass.groups.groups {
            for &(r, c) in &g.members {
                if r >= rows || c >= cols {
                    return Err(fault(sim.cycle, r, c, format!("multicast group {} reaches outside the array", g.id)));
                }
            }
        }
    }
    for (idx, pe) in sim.pes.iter_mut().enumerate() {
        pe.pass = 0;
        pe.prog = prog_of.first().and_then(|p| p[idx]);
        pe.pc = 0;
        pe.out_ptr = 0;
    }
    // member PE indices and touched buses per pass and group
    let members: Vec<Vec<Vec<usize>>> = passes
        .iter()
        .map(|pass| {
            pass.groups
                .groups
                .iter()
                .map(|g| g.members.iter().map(|&(r, c)| r * cols + c).collect())
                .collect()
        })
        .collect();
    let buses: Vec<Vec<Vec<usize>>> = passes
        .iter()
        .map(|pass| {
            pass.groups
                .groups
                .iter()
                .map(|g| {
                    let mut r: Vec<usize> = if pass.systolic {
                        g.members.iter().map(|&(r, c)| r * cols + c).collect()
                    } else {
                        g.members.iter().map(|&(r, _)| r).collect()
                    };
                    r.sort_unstable();
                    r.dedup();
                    r
                })
                .collect()
        })
        .collect();
    let concat = |f: fn(&Pass) -> &Vec<FeedMsg>| -> Vec<(usize, FeedMsg)> {
        passes
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| f(p).iter().map(move |m| (pi, *m)))
            .collect()
    };
    let weight_feed = concat(|p| &p.weight_feed);
    let input_feed = concat(|p| &p.input_feed);
    let feeds: [(&[(usize, FeedMsg)], Stream); 2] = [(&weight_feed, Stream::Weight), (&input_feed, Stream::Input)];
    let mut head = [0usize; 2];
    let first = [
        sim.first_touches(weight_feed.iter().map(|f| f.1)),
        sim.first_touches(input_feed.iter().map(|f| f.1)),
    ];
    let mut issued = [vec![false; weight_feed.len()], vec![false; input_feed.len()]];
    let mut dram_at: [Vec<Option<u64>>; 2] = [vec![None; weight_feed.len()], vec![None; input_feed.len()]];
    let word_bytes = sim.noc.word_bits.div_ceil(8);
    let lane_cap = |pass: &Pass, s: Stream| -> (usize, Network) {
        if pass.systolic {
            (1, Network::GinWide)
        } else if s == pass.wide {
            (sim.noc.words_per_cycle(Network::GinWide), Network::GinWide)
        } else {
            (sim.noc.words_per_cycle(Network::GinNarrow), Network::GinNarrow)
        }
    };
    let gon_cap = sim.noc.words_per_cycle(Network::Gon).max(1);
    let nbus = rows * cols;
    let mut lane_used = vec![[0usize; 2]; nbus];
    let mut pe_blocked = vec![false; rows * cols];
    let stall_limit = (depth * rows * cols) as u64 + cfg.dram.latency_cycles + 64;
    let mut started = 0usize;
    if npass > 0 {
        started = 1;
        sim.trace(format_args!("PASS 0 begin"))?;
    }
    let mut stagnant = 0u64;
    let mut pushes: Vec<(usize, Push, f32, u64)> = Vec::new();
    let mut reserved = vec![[0usize; 3]; rows * cols];

    loop {
        let now = sim.cycle;
        if let Some(max) = opts.max_cycles {
            if now >= max {
                return Err(Error::SimFault {
                    cycle: now,
                    row: 0,
                    col: 0,
                    reason: format!("cycle budget of {max} exhausted"),
                });
            }
        }
        let mut progress = false;
        let mut waiting = false;

        // 1. operand feeds
        for l in lane_used.iter_mut() {
            *l = [0, 0];
        }
        // the two streams take turns at first claim on buffer ports
        for turn in 0..2 {
            let si = (turn + now as usize) % 2;
            let (feed, stream) = &feeds[si];
            for bb in pe_blocked.iter_mut() {
                *bb = false;
            }
            let end = (head[si] + FEED_WINDOW).min(feed.len());
            for pos in head[si]..end {
                if issued[si][pos] {
                    continue;
                }
                let (pi, msg) = feed[pos];
                let gid = msg.group as usize;
                let bus = &buses[pi][gid];
                let group = &members[pi][gid];
                let (cap, net) = lane_cap(&passes[pi], *stream);
                let free = !group.iter().any(|&x| pe_blocked[x])
                    && bus.iter().all(|&x| lane_used[x][si] < cap)
                    && group.iter().all(|&m| sim.pes[m].queue(*stream).len() < depth);
                let fresh = first[si][pos];
                let mut ok = free;
                if ok && fresh {
                    let t = *dram_at[si][pos]
                        .get_or_insert_with(|| sim.dram.dram_access(word_bytes, AccessKind::Read, 0));
                    if t > now {
                        waiting = true;
                        ok = false;
                    }
                }
                let bank = sim.gb.bank_of(msg.gb_addr);
                if ok && !fresh && !sim.gb.port_free(bank, AccessKind::Read, now) {
                    waiting = true;
                    ok = false;
                }
                if !ok {
                    // later words for these PEs must not overtake this one
                    for &x in group {
                        pe_blocked[x] = true;
                    }
                    continue;
                }
                if fresh {
                    sim.ev.dram_reads += 1;
                    sim.ev.gb_writes += 1;
                } else {
                    sim.gb.gb_access(bank, AccessKind::Read, now);
                    sim.ev.gb_reads += 1;
                    if !sim.gb_resident && matches!(msg.src, Operand::A(_)) {
                        sim.ev.dram_reads += 1;
                    }
                }
                let v = sim.value(msg.src);
                for &m in group {
                    sim.pes[m].queue_mut(*stream).push_back((v, now + hop));
                }
                for &x in bus {
                    lane_used[x][si] += 1;
                }
                sim.ev.add_noc(net, bus.len() as u64);
                if sim.trace.is_some() {
                    sim.trace(format_args!(
                        "GIN {net:?} group {gid} -> {} PEs {:?} = {v}",
                        group.len(),
                        msg.src
                    ))?;
                }
                issued[si][pos] = true;
                progress = true;
            }
            while head[si] < feed.len() && issued[si][head[si]] {
                head[si] += 1;
            }
        }

        // 2. GON: oldest requests first, ties to the lower PE index
        let mut cands: Vec<(u64, usize)> = sim
            .pes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.outq.front().map(|o| (o.2, i)))
            .filter(|&(t, _)| t < now)
            .collect();
        cands.sort_unstable();
        let mut sent = 0;
        for (_, i) in cands {
            if sent == gon_cap {
                break;
            }
            let (v, addr, _) = *sim.pes[i].outq.front().expect("candidate");
            let bank = sim.gb.bank_of(addr);
            let off = addr
                .checked_sub(sim.map.out_base)
                .map(|o| o as usize)
                .filter(|&o| o < sim.out.len())
                .ok_or_else(|| fault(now, i / cols, i % cols, format!("write-out to address {addr} outside the output region")))?;
            let acc = sim.written[off];
            if !sim.gb.port_free(bank, AccessKind::Write, now) || (acc && !sim.gb.port_free(bank, AccessKind::Read, now)) {
                waiting = true;
                continue;
            }
            sim.gb.gb_access(bank, AccessKind::Write, now);
            sim.ev.gb_writes += 1;
            if acc {
                sim.gb.gb_access(bank, AccessKind::Read, now);
                sim.ev.gb_reads += 1;
            }
            sim.written[off] = true;
            sim.out[off] += v;
            if cfg.quantize16 {
                sim.out[off] = quantize16(sim.out[off]);
            }
            sim.ev.noc_gon += 1;
            sim.pes[i].outq.pop_front();
            sent += 1;
            progress = true;
            if sim.trace.is_some() {
                sim.trace(format_args!("GON PE({},{}) -> gb[{addr}] += {v}", i / cols, i % cols))?;
            }
        }

        // 3. PEs
        for r in reserved.iter_mut() {
            *r = [0, 0, 0];
        }
        pushes.clear();
        let mut running = false;
        for idx in 0..rows * cols {
            let (r, c) = (idx / cols, idx % cols);
            // step into the next pass that has work for this PE
            loop {
                let pe = &mut sim.pes[idx];
                let done = match pe.prog {
                    Some(i) => pe.pc >= passes[pe.pass].programs[i].ops.len(),
                    None => true,
                };
                if !done || pe.pass >= npass {
                    break;
                }
                pe.pass += 1;
                pe.pc = 0;
                pe.out_ptr = 0;
                pe.prog = prog_of.get(pe.pass).and_then(|p| p[idx]);
                if pe.prog.is_some() && pe.pass >= started {
                    started = pe.pass + 1;
                    let n = pe.pass;
                    sim.trace(format_args!("PASS {n} begin"))?;
                }
            }
            if !sim.pes[idx].outq.is_empty() {
                running = true;
            }
            let Some(pi) = sim.pes[idx].prog else {
                sim.stats[idx].idle += 1;
                continue;
            };
            let pass = &passes[sim.pes[idx].pass];
            let prog = &pass.programs[pi];
            running = true;
            let op: MicroOp = prog.ops[sim.pes[idx].pc];
            if op.is_idle() {
                sim.stats[idx].idle += 1;
                sim.pes[idx].pc += 1;
                progress = true;
                continue;
            }
            // readiness
            let pe = &sim.pes[idx];
            let head_ok = |q: &Queue| q.front().is_some_and(|&(_, t)| t <= now);
            let mut time_wait = false;
            let (mut operand, mut psum, mut blocked) = (false, false, false);
            if op.load_w.is_some() && !head_ok(&pe.qw) {
                operand = true;
                time_wait |= !pe.qw.is_empty();
            }
            if op.load_in.is_some() && !head_ok(&pe.qi) {
                operand = true;
                time_wait |= !pe.qi.is_empty();
            }
            if op.recv.is_some() && !head_ok(&pe.ql) {
                psum = true;
                time_wait |= !pe.ql.is_empty();
            }
            if let Some(send) = op.send {
                let slot = send.slot() as usize;
                if slot >= pe.slots.len() {
                    return Err(fault(now, r, c, format!("psum slot {slot} beyond the {}-entry psum file", pe.slots.len())));
                }
                if pe.slots[slot].ready_at > now {
                    psum = true;
                    time_wait = true;
                }
                match send {
                    Send::PassUp { .. } => {
                        if r == 0 {
                            return Err(fault(now, r, c, "pass-up from the top row"));
                        }
                        let up = idx - cols;
                        if sim.pes[up].ql.len() + reserved[up][2] >= depth {
                            blocked = true;
                        }
                    }
                    Send::WriteOut { .. } => {
                        if pe.outq.len() >= depth {
                            blocked = true;
                        }
                    }
                }
            }
            if op.fwd_w {
                if r + 1 >= rows {
                    return Err(fault(now, r, c, "forward below the bottom row"));
                }
                let dn = idx + cols;
                if sim.pes[dn].qw.len() + reserved[dn][0] >= depth {
                    blocked = true;
                }
            }
            if op.fwd_in {
                if c + 1 >= cols {
                    return Err(fault(now, r, c, "forward past the right edge"));
                }
                let rt = idx + 1;
                if sim.pes[rt].qi.len() + reserved[rt][1] >= depth {
                    blocked = true;
                }
            }
            if operand || psum || blocked {
                let st = &mut sim.stats[idx];
                st.busy += 1;
                st.stall += 1;
                if operand {
                    sim.stalls.operand += 1;
                } else if psum {
                    sim.stalls.psum += 1;
                } else {
                    sim.stalls.backpressure += 1;
                }
                waiting |= time_wait;
                continue;
            }
            // execute
            progress = true;
            let quant = cfg.quantize16;
            let gating = cfg.clock_gating;
            let pe = &mut sim.pes[idx];
            let mut ev_rf_r = 0u64;
            let mut ev_rf_w = 0u64;
            if let Some(reg) = op.load_w {
                let (v, _) = pe.qw.pop_front().expect("checked");
                *pe.wreg
                    .get_mut(reg as usize)
                    .ok_or_else(|| fault(now, r, c, format!("filter register {reg} overflows the register file")))? = v;
                ev_rf_w += 1;
            }
            if let Some(reg) = op.load_in {
                let (v, _) = pe.qi.pop_front().expect("checked");
                *pe.ireg
                    .get_mut(reg as usize)
                    .ok_or_else(|| fault(now, r, c, format!("ifmap register {reg} overflows the register file")))? = v;
                ev_rf_w += 1;
            }
            let mut send_val = None;
            if let Some(send) = op.send {
                let s = &mut pe.slots[send.slot() as usize];
                send_val = Some(s.value);
                s.value = 0.0;
                ev_rf_r += 1;
            }
            if let Some(slot) = op.recv {
                let (v, _) = pe.ql.pop_front().expect("checked");
                let s = pe
                    .slots
                    .get_mut(slot as usize)
                    .ok_or_else(|| fault(now, r, c, format!("psum slot {slot} overflows the psum file")))?;
                s.value += v;
                if quant {
                    s.value = quantize16(s.value);
                }
                s.ready_at = s.ready_at.max(now + cfg.add_latency as u64);
                sim.ev.adds += 1;
                ev_rf_r += 1;
                ev_rf_w += 1;
            }
            let mut gated = false;
            if let Some(m) = op.mac {
                let w = *pe
                    .wreg
                    .get(m.w as usize)
                    .ok_or_else(|| fault(now, r, c, format!("filter register {} overflows the register file", m.w)))?;
                let x = *pe
                    .ireg
                    .get(m.x as usize)
                    .ok_or_else(|| fault(now, r, c, format!("ifmap register {} overflows the register file", m.x)))?;
                let s = pe
                    .slots
                    .get_mut(m.slot as usize)
                    .ok_or_else(|| fault(now, r, c, format!("psum slot {} overflows the psum file", m.slot)))?;
                if gating && (w == 0.0 || x == 0.0) {
                    gated = true;
                    sim.ev.gated_macs += 1;
                } else {
                    let p = if quant { quantize16(w * x) } else { w * x };
                    s.value += p;
                    if quant {
                        s.value = quantize16(s.value);
                    }
                    s.ready_at = s.ready_at.max(now + cfg.mac_latency() as u64);
                    sim.ev.macs += 1;
                    ev_rf_r += 3;
                    ev_rf_w += 1;
                }
            }
            if let (Some(send), Some(v)) = (op.send, send_val) {
                match send {
                    Send::PassUp { .. } => {
                        pushes.push((idx - cols, Push::Local, v, now + hop));
                        reserved[idx - cols][2] += 1;
                        sim.ev.noc_local += 1;
                    }
                    Send::WriteOut { .. } => {
                        let addr = *prog
                            .out_addrs
                            .get(pe.out_ptr)
                            .ok_or_else(|| fault(now, r, c, "write-out without an address"))?;
                        pe.out_ptr += 1;
                        pe.outq.push_back((v, addr, now));
                    }
                }
            }
            if op.fwd_w {
                let reg = op.load_w.or(op.mac.map(|m| m.w)).unwrap_or(0) as usize;
                let v = pe.wreg[reg];
                pushes.push((idx + cols, Push::Weight, v, now + 1));
                reserved[idx + cols][0] += 1;
                sim.ev.noc_forward += 1;
            }
            if op.fwd_in {
                let reg = op.load_in.or(op.mac.map(|m| m.x)).unwrap_or(0) as usize;
                let v = pe.ireg[reg];
                pushes.push((idx + 1, Push::Input, v, now + 1));
                reserved[idx + 1][1] += 1;
                sim.ev.noc_forward += 1;
            }
            pe.pc += 1;
            sim.ev.rf_reads += ev_rf_r;
            sim.ev.rf_writes += ev_rf_w;
            let st = &mut sim.stats[idx];
            if gated {
                st.gated += 1;
            } else {
                st.busy += 1;
            }
            if sim.trace.is_some() {
                sim.trace(format_args!("PE({r},{c}) {}", describe(&op)))?;
            }
        }
        for &(t, kind, v, at) in &pushes {
            let q = match kind {
                Push::Weight => &mut sim.pes[t].qw,
                Push::Input => &mut sim.pes[t].qi,
                Push::Local => &mut sim.pes[t].ql,
            };
            q.push_back((v, at));
        }

        sim.cycle += 1;
        let feeds_done = head[0] == weight_feed.len() && head[1] == input_feed.len();
        if !running && sim.pes.iter().all(|p| p.outq.is_empty()) {
            if !feeds_done {
                return Err(fault(now, 0, 0, "programs finished with operand words still queued for delivery"));
            }
            if let Some(i) = sim.pes.iter().position(|p| !p.qw.is_empty() || !p.qi.is_empty() || !p.ql.is_empty()) {
                return Err(fault(now, i / cols, i % cols, "programs finished with unconsumed words in a PE queue"));
            }
            return Ok(());
        }
        if progress || waiting || !pushes.is_empty() {
            stagnant = 0;
        } else {
            stagnant += 1;
            if stagnant > stall_limit {
                return Err(Error::Deadlock {
                    cycle: now,
                    report: deadlock_report(sim, passes, head, [weight_feed.len(), input_feed.len()]),
                });
            }
        }
    }
}

fn deadlock_report(sim: &Sim<'_, '_>, passes: &[Pass], head: [usize; 2], len: [usize; 2]) -> String {
    let mut s = format!("feed heads: weight {}/{}, input {}/{}", head[0], len[0], head[1], len[1]);
    for (i, pe) in sim.pes.iter().enumerate() {
        let Some(pi) = pe.prog else { continue };
        let n = passes[pe.pass].programs[pi].ops.len();
        s.push_str(&format!(
            "; PE({},{}) pass {} pc {}/{} qw {} qi {} ql {} out {}",
            i / sim.cfg.cols,
            i % sim.cfg.cols,
            pe.pass,
            pe.pc,
            n,
            pe.qw.len(),
            pe.qi.len(),
            pe.ql.len(),
            pe.outq.len()
        ));
    }
    s
}

/// One-line text form of a micro-op, used by traces.
pub fn describe(op: &MicroOp) -> String {
    let mut parts = Vec::new();
    if let Some(r) = op.load_w {
        parts.push(format!("LOAD_W w{r}"));
    }
    if let Some(r) = op.load_in {
        parts.push(format!("LOAD_IN x{r}"));
    }
    if let Some(s) = op.recv {
        parts.push(format!("RECV p{s}"));
    }
    if let Some(m) = op.mac {
        parts.push(format!("MAC w{} x{} p{}", m.w, m.x, m.slot));
    }
    match op.send {
        Some(Send::PassUp { slot }) => parts.push(format!("PASS_UP p{slot}")),
        Some(Send::WriteOut { slot }) => parts.push(format!("WRITE_OUT p{slot}")),
        None => {}
    }
    if op.fwd_w {
        parts.push("FWD_W".into());
    }
    if op.fwd_in {
        parts.push("FWD_IN".into());
    }
    if parts.is_empty() {
        "IDLE".into()
    } else {
        parts.join(" | ")
    }
}
