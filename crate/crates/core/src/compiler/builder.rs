//! Turns per-PE MAC placements into complete FSM programs for one pass.
//!
//! The dataflow compilers only decide which product runs on which PE at which
//! word and how partial sums travel. This module derives the rest: the global
//! feed order, when each PE pops its queues, register and psum-slot
//! allocation, and the timing of pass-up and write-out ops.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rustc_hash::FxHashMap as HashMap;

use crate::compiler::program::{Coord, FeedMsg, Mac, MicroOp, MulticastGroupTable, Operand, Pass, PeProgram, Send, Stream};
use crate::error::{Error, Result};
use crate::sim::ArrayConfig;

pub type MsgId = u32;

#[derive(Debug, Clone)]
struct Msg {
    stream: Stream,
    src: Operand,
    gb_addr: u32,
    /// First and last use word per member.
    members: BTreeMap<Coord, (u32, u32)>,
}

#[derive(Debug, Clone, Copy)]
struct MacDecl {
    word: u32,
    w: MsgId,
    x: MsgId,
    label: u64,
}

#[derive(Debug, Clone, Copy)]
struct LabelUse {
    first: u32,
    last: u32,
    chained: bool,
}

#[derive(Debug, Default)]
struct PeBuild {
    macs: Vec<MacDecl>,
    labels: HashMap<u64, LabelUse>,
}

#[derive(Debug, Clone)]
struct Chain {
    label: u64,
    /// Bottom PE first; the last entry writes the value out.
    pes: Vec<Coord>,
    addr: u32,
}

/// Free-slot search over one op field of one PE.
#[derive(Debug, Default)]
struct FieldUse(Vec<bool>);

impl FieldUse {
    fn take_from(&mut self, from: u32) -> u32 {
        let mut w = from as usize;
        loop {
            if w >= self.0.len() {
                self.0.resize(w + 64, false);
            }
            if !self.0[w] {
                self.0[w] = true;
                return w as u32;
            }
            w += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub macs: u64,
    pub zero_macs: u64,
}

pub struct PassBuilder<'a> {
    cfg: &'a ArrayConfig,
    hop_latency: u32,
    wide: Stream,
    systolic: bool,
    msgs: Vec<Msg>,
    index: HashMap<(Stream, u32, u32), MsgId>,
    /// Row-major over the array; PEs outside it go to `outside`.
    grid: Vec<PeBuild>,
    outside: BTreeMap<Coord, PeBuild>,
    chains: Vec<Chain>,
}

impl<'a> PassBuilder<'a> {
    pub fn new(cfg: &'a ArrayConfig, hop_latency: u64, wide: Stream) -> Self {
        Self {
            cfg,
            hop_latency: hop_latency as u32,
            wide,
            systolic: false,
            msgs: Vec::new(),
            index: HashMap::default(),
            grid: (0..cfg.rows * cfg.cols).map(|_| PeBuild::default()).collect(),
            outside: BTreeMap::new(),
            chains: Vec::new(),
        }
    }

    /// Message carrying the word at `gb_addr`. Requests with the same
    /// `(stream, gb_addr, epoch)` share one multicast.
    pub fn msg(&mut self, stream: Stream, src: Operand, gb_addr: u32, epoch: u32) -> MsgId {
        let next = self.msgs.len() as MsgId;
        let id = *self.index.entry((stream, gb_addr, epoch)).or_insert(next);
        if id == next {
            self.msgs.push(Msg {
                stream,
                src,
                gb_addr,
                members: BTreeMap::new(),
            });
        }
        id
    }

    /// Place `w x` on `pe` at `word`, accumulating into `label`.
    pub fn mac(&mut self, pe: Coord, word: u32, w: MsgId, x: MsgId, label: u64) {
        for m in [w, x] {
            let e = self.msgs[m as usize].members.entry(pe).or_insert((word, word));
            e.0 = e.0.min(word);
            e.1 = e.1.max(word);
        }
        let b = if pe.0 < self.cfg.rows && pe.1 < self.cfg.cols {
            &mut self.grid[pe.0 * self.cfg.cols + pe.1]
        } else {
            self.outside.entry(pe).or_default()
        };
        b.macs.push(MacDecl { word, w, x, label });
        let l = b.labels.entry(label).or_insert(LabelUse {
            first: word,
            last: word,
            chained: false,
        });
        l.first = l.first.min(word);
        l.last = l.last.max(word);
    }

    /// Accumulate `label` from `pes[0]` upward; the last PE writes `addr`.
    pub fn chain(&mut self, label: u64, pes: Vec<Coord>, addr: u32) {
        self.chains.push(Chain { label, pes, addr });
    }

    pub fn finish(self) -> Result<(Pass, BuildStats)> {
        let PassBuilder {
            cfg,
            hop_latency,
            wide,
            systolic,
            msgs,
            grid,
            outside,
            chains,
            ..
        } = self;
        let mut builds: BTreeMap<Coord, PeBuild> = outside;
        for (i, b) in grid.into_iter().enumerate() {
            if !b.macs.is_empty() {
                builds.insert((i / cfg.cols, i % cfg.cols), b);
            }
        }

        let mut stats = BuildStats::default();
        for b in builds.values() {
            stats.macs += b.macs.len() as u64;
            stats.zero_macs += b
                .macs
                .iter()
                .filter(|m| msgs[m.w as usize].src.is_zero() || msgs[m.x as usize].src.is_zero())
                .count() as u64;
        }

        // All members of a multicast pop it at the same word: its first use,
        // or earlier when a later message already holds that word on some
        // member. Feeding in that common order keeps every queue in step
        // with its PE, so the lowest-progress PE can always advance.
        let deadline: Vec<u32> = msgs
            .iter()
            .map(|m| m.members.values().map(|u| u.0).min().unwrap_or(u32::MAX))
            .collect();
        let mut by_deadline: Vec<MsgId> = (0..msgs.len() as MsgId).filter(|&m| deadline[m as usize] != u32::MAX).collect();
        by_deadline.sort_by_key(|&m| Reverse((deadline[m as usize], m)));
        let mut pos = vec![0i64; msgs.len()];
        let mut lowest: HashMap<(Coord, Stream), i64> = HashMap::default();
        let mut min_pos = 0i64;
        for &m in &by_deadline {
            let msg = &msgs[m as usize];
            let mut p = deadline[m as usize] as i64;
            for pe in msg.members.keys() {
                if let Some(&l) = lowest.get(&(*pe, msg.stream)) {
                    p = p.min(l - 1);
                }
            }
            for pe in msg.members.keys() {
                lowest.insert((*pe, msg.stream), p);
            }
            pos[m as usize] = p;
            min_pos = min_pos.min(p);
        }
        let mut order = by_deadline;
        order.sort_by_key(|&m| (pos[m as usize], m));
        let mut per_pe: BTreeMap<(Coord, Stream), Vec<(MsgId, i64, u32)>> = BTreeMap::new();
        for &m in &order {
            let msg = &msgs[m as usize];
            for (pe, u) in &msg.members {
                per_pe.entry((*pe, msg.stream)).or_default().push((m, pos[m as usize], u.1));
            }
        }
        let offset = (-min_pos) as u32;

        // Register allocation over [load, last use].
        let mut regs: HashMap<(Coord, MsgId), u8> = HashMap::default();
        let mut loads: BTreeMap<Coord, Vec<(u32, Stream, u8)>> = BTreeMap::new();
        for ((pe, stream), list) in &per_pe {
            let (cap, name) = match stream {
                Stream::Weight => (cfg.filter_rf, "filter register file"),
                Stream::Input => (cfg.ifmap_rf, "ifmap register file"),
            };
            let mut free: BinaryHeap<Reverse<u8>> = (0..cap.min(256)).map(|r| Reverse(r as u8)).collect();
            let mut active: BinaryHeap<Reverse<(u32, u8)>> = BinaryHeap::new();
            let mut peak = 0usize;
            for &(m, pos, last) in list {
                let at = (pos + offset as i64) as u32;
                let last = last + offset;
                while let Some(Reverse((end, r))) = active.peek().copied() {
                    if end < at {
                        active.pop();
                        free.push(Reverse(r));
                    } else {
                        break;
                    }
                }
                let Some(Reverse(r)) = free.pop() else {
                    peak = peak.max(active.len() + 1);
                    continue;
                };
                active.push(Reverse((last, r)));
                peak = peak.max(active.len());
                regs.insert((*pe, m), r);
                loads.entry(*pe).or_default().push((at, *stream, r));
            }
            if peak > cap {
                return Err(Error::Resource {
                    resource: name.into(),
                    required: peak,
                    available: cap,
                });
            }
        }

        for b in builds.values_mut() {
            for m in &mut b.macs {
                m.word += offset;
            }
            for l in b.labels.values_mut() {
                l.first += offset;
                l.last += offset;
            }
        }

        // Psum movement.
        let lat = cfg.mac_latency();
        let add = cfg.add_latency;
        let mut recv_use: HashMap<Coord, FieldUse> = HashMap::default();
        let mut send_use: HashMap<Coord, FieldUse> = HashMap::default();
        let mut recv_ops: BTreeMap<Coord, Vec<(u32, u64)>> = BTreeMap::new();
        let mut send_ops: BTreeMap<Coord, Vec<(u32, u64, Option<u32>)>> = BTreeMap::new();
        // (pe, label) -> live interval of its slot
        let mut live: BTreeMap<Coord, Vec<(u32, u32, u64)>> = BTreeMap::new();

        let mut chain_order: Vec<usize> = (0..chains.len()).collect();
        let chain_key = |c: &Chain| -> u32 {
            c.pes
                .iter()
                .filter_map(|p| builds.get(p).and_then(|b| b.labels.get(&c.label)).map(|l| l.last))
                .max()
                .unwrap_or(0)
        };
        let keys: Vec<u32> = chains.iter().map(chain_key).collect();
        chain_order.sort_by_key(|&i| (keys[i], i));

        for &ci in &chain_order {
            let c = &chains[ci];
            if c.pes.is_empty() {
                return Err(Error::Plan(format!("label {} has an empty accumulation chain", c.label)));
            }
            for w in c.pes.windows(2) {
                if w[1].1 != w[0].1 || w[1].0 + 1 != w[0].0 {
                    return Err(Error::Plan(format!(
                        "label {} passes from {:?} to {:?}, which is not the PE directly above",
                        c.label, w[0], w[1]
                    )));
                }
            }
            let mut arrival: Option<u32> = None;
            for (i, pe) in c.pes.iter().enumerate() {
                let mine = builds.get_mut(pe).and_then(|b| b.labels.get_mut(&c.label));
                let (first, last) = match mine {
                    Some(l) => {
                        if l.chained {
                            return Err(Error::Plan(format!("label {} is chained twice on {:?}", c.label, pe)));
                        }
                        l.chained = true;
                        (Some(l.first), Some(l.last))
                    }
                    None => (None, None),
                };
                let mut ready = last.map(|l| l + lat);
                let mut start = first;
                if let Some(t) = arrival {
                    let r = recv_use.entry(*pe).or_default().take_from(t);
                    recv_ops.entry(*pe).or_default().push((r, c.label));
                    ready = Some(ready.unwrap_or(0).max(r + add));
                    start = Some(start.map_or(r, |s| s.min(r)));
                }
                let (Some(ready), Some(start)) = (ready, start) else {
                    return Err(Error::Plan(format!("label {} has no contribution on {:?}", c.label, pe)));
                };
                let s = send_use.entry(*pe).or_default().take_from(ready);
                let top = i + 1 == c.pes.len();
                send_ops.entry(*pe).or_default().push((s, c.label, top.then_some(c.addr)));
                live.entry(*pe).or_default().push((start, s, c.label));
                arrival = Some(s + hop_latency);
            }
        }
        for (pe, b) in &builds {
            if let Some((label, _)) = b.labels.iter().find(|(_, l)| !l.chained) {
                return Err(Error::Plan(format!("label {label} on {pe:?} is never written out")));
            }
        }

        // Slot allocation.
        let mut slots: HashMap<(Coord, u64), u8> = HashMap::default();
        for (pe, ivs) in live.iter_mut() {
            ivs.sort_unstable();
            let cap = cfg.psum_rf;
            let mut free: BinaryHeap<Reverse<u8>> = (0..cap.min(256)).map(|r| Reverse(r as u8)).collect();
            let mut active: BinaryHeap<Reverse<(u32, u8)>> = BinaryHeap::new();
            let mut peak = 0usize;
            for &(start, end, label) in ivs.iter() {
                while let Some(Reverse((e, r))) = active.peek().copied() {
                    if e < start {
                        active.pop();
                        free.push(Reverse(r));
                    } else {
                        break;
                    }
                }
                match free.pop() {
                    Some(Reverse(r)) => {
                        active.push(Reverse((end, r)));
                        peak = peak.max(active.len());
                        slots.insert((*pe, label), r);
                    }
                    None => peak = peak.max(active.len() + 1),
                }
            }
            if peak > cap {
                return Err(Error::Resource {
                    resource: "psum register file".into(),
                    required: peak,
                    available: cap,
                });
            }
        }

        // Emit programs.
        let mut programs: BTreeMap<Coord, PeProgram> = BTreeMap::new();
        let coords: Vec<Coord> = builds.keys().chain(loads.keys()).chain(send_ops.keys()).copied().collect();
        for pe in coords {
            programs.entry(pe).or_insert_with(|| PeProgram::new(pe.0, pe.1));
        }
        let clash = |pe: Coord, word: u32, what: &str| Error::Plan(format!("two {what} ops on {pe:?} at word {word}"));
        for (pe, list) in &loads {
            let p = programs.get_mut(pe).expect("program");
            for &(at, stream, r) in list {
                let op = p.at(at as usize);
                let field = match stream {
                    Stream::Weight => &mut op.load_w,
                    Stream::Input => &mut op.load_in,
                };
                if field.replace(r).is_some() {
                    return Err(clash(*pe, at, "load"));
                }
            }
        }
        for (pe, b) in &builds {
            let p = programs.get_mut(pe).expect("program");
            for m in &b.macs {
                let mac = Mac {
                    w: regs[&(*pe, m.w)],
                    x: regs[&(*pe, m.x)],
                    slot: slots[&(*pe, m.label)],
                };
                if p.at(m.word as usize).mac.replace(mac).is_some() {
                    return Err(clash(*pe, m.word, "MAC"));
                }
            }
        }
        for (pe, list) in &recv_ops {
            let p = programs.get_mut(pe).expect("program");
            for &(w, label) in list {
                p.at(w as usize).recv = Some(slots[&(*pe, label)]);
            }
        }
        for (pe, list) in send_ops.iter_mut() {
            list.sort_unstable();
            let p = programs.get_mut(pe).expect("program");
            for &(w, label, addr) in list.iter() {
                let slot = slots[&(*pe, label)];
                p.at(w as usize).send = Some(match addr {
                    Some(a) => {
                        p.out_addrs.push(a);
                        Send::WriteOut { slot }
                    }
                    None => Send::PassUp { slot },
                });
            }
        }

        // Multicast groups and feeds.
        let mut pass = Pass::empty(systolic, wide);
        let mut groups = MulticastGroupTable::default();
        let mut gindex = BTreeMap::new();
        for &m in &order {
            let msg = &msgs[m as usize];
            let members: Vec<Coord> = msg.members.keys().copied().collect();
            let group = groups.intern(msg.stream, members, &mut gindex);
            let feed = FeedMsg {
                group,
                src: msg.src,
                gb_addr: msg.gb_addr,
            };
            match msg.stream {
                Stream::Weight => pass.weight_feed.push(feed),
                Stream::Input => pass.input_feed.push(feed),
            }
        }
        let subs = groups.subscriptions();
        for (pe, p) in programs.iter_mut() {
            p.subscriptions = subs.get(pe).cloned().unwrap_or_default();
        }
        pass.groups = groups;
        pass.programs = programs.into_values().collect();
        Ok((pass, stats))
    }
}

/// Check that each PE pops exactly the feed messages addressed to it, in
/// feed order, and that every `WriteOut` has an address.
pub fn check_pass(pass: &Pass) -> Result<()> {
    if pass.systolic {
        return Ok(());
    }
    let index: HashMap<Coord, usize> = pass.programs.iter().enumerate().map(|(i, p)| ((p.row, p.col), i)).collect();
    // words sent to each program, weight then input
    let mut sent = vec![[0usize; 2]; pass.programs.len()];
    for (k, feed) in [&pass.weight_feed, &pass.input_feed].into_iter().enumerate() {
        for f in feed {
            let g = pass.groups.get(f.group);
            let want = if k == 0 { Stream::Weight } else { Stream::Input };
            if g.stream != want {
                continue;
            }
            for m in &g.members {
                match index.get(m) {
                    Some(&i) => sent[i][k] += 1,
                    None => return Err(Error::Plan(format!("PE ({}, {}) is sent words but has no program", m.0, m.1))),
                }
            }
        }
    }
    for (p, sent) in pass.programs.iter().zip(&sent) {
        let pops = [
            p.ops.iter().filter(|o| o.load_w.is_some()).count(),
            p.ops.iter().filter(|o| o.load_in.is_some()).count(),
        ];
        for (k, stream) in [Stream::Weight, Stream::Input].into_iter().enumerate() {
            if sent[k] != pops[k] {
                return Err(Error::Plan(format!(
                    "PE ({}, {}) pops {} {stream:?} words but is sent {}",
                    p.row, p.col, pops[k], sent[k]
                )));
            }
        }
        let writes = p
            .ops
            .iter()
            .filter(|o| matches!(o.send, Some(Send::WriteOut { .. })))
            .count();
        if writes != p.out_addrs.len() {
            return Err(Error::Plan(format!(
                "PE ({}, {}) has {writes} write-outs but {} addresses",
                p.row,
                p.col,
                p.out_addrs.len()
            )));
        }
    }
    Ok(())
}

/// Trim trailing IDLE words.
pub fn trim(program: &mut PeProgram) {
    while program.ops.last().is_some_and(MicroOp::is_idle) {
        program.ops.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pe_write_direct() {
        let cfg = ArrayConfig::default();
        let mut b = PassBuilder::new(&cfg, 1, Stream::Input);
        let w = b.msg(Stream::Weight, Operand::B(0), 100, 0);
        let x = b.msg(Stream::Input, Operand::A(0), 0, 0);
        b.mac((0, 0), 0, w, x, 7);
        b.chain(7, vec![(0, 0)], 500);
        let (pass, stats) = b.finish().unwrap();
        assert_eq!(stats.macs, 1);
        let p = &pass.programs[0];
        assert_eq!(p.out_addrs, vec![500]);
        assert!(p.ops[0].load_w.is_some() && p.ops[0].load_in.is_some() && p.ops[0].mac.is_some());
        assert_eq!(p.ops[3].send, Some(Send::WriteOut { slot: 0 }));
        check_pass(&pass).unwrap();
    }

    #[test]
    fn pass_up_waits_for_pipeline() {
        let cfg = ArrayConfig::default();
        let mut b = PassBuilder::new(&cfg, 1, Stream::Input);
        let w = b.msg(Stream::Weight, Operand::B(0), 100, 0);
        let x0 = b.msg(Stream::Input, Operand::A(0), 0, 0);
        let x1 = b.msg(Stream::Input, Operand::A(1), 1, 0);
        b.mac((1, 0), 0, w, x0, 1);
        b.mac((0, 0), 0, w, x1, 1);
        b.chain(1, vec![(1, 0), (0, 0)], 9);
        let (pass, _) = b.finish().unwrap();
        let bottom = pass.programs.iter().find(|p| p.row == 1).unwrap();
        let top = pass.programs.iter().find(|p| p.row == 0).unwrap();
        assert_eq!(bottom.ops[3].send, Some(Send::PassUp { slot: 0 }));
        assert_eq!(top.ops[4].recv, Some(0));
        assert_eq!(top.ops[5].send, Some(Send::WriteOut { slot: 0 }));
        assert_eq!(pass.weight_feed.len(), 1);
        assert_eq!(pass.groups.get(pass.weight_feed[0].group).members.len(), 2);
    }

    #[test]
    fn non_vertical_chain_rejected() {
        let cfg = ArrayConfig::default();
        let mut b = PassBuilder::new(&cfg, 1, Stream::Input);
        let w = b.msg(Stream::Weight, Operand::B(0), 100, 0);
        let x = b.msg(Stream::Input, Operand::A(0), 0, 0);
        b.mac((1, 0), 0, w, x, 1);
        b.mac((0, 1), 0, w, x, 1);
        b.chain(1, vec![(1, 0), (0, 1)], 9);
        assert!(b.finish().is_err());
    }

    #[test]
    fn register_pressure_is_reported() {
        let cfg = ArrayConfig {
            ifmap_rf: 2,
            ..ArrayConfig::default()
        };
        let mut b = PassBuilder::new(&cfg, 1, Stream::Input);
        let w = b.msg(Stream::Weight, Operand::B(0), 100, 0);
        // three inputs broadcast at word 0 but used late on one PE
        let xs: Vec<_> = (0..3).map(|i| b.msg(Stream::Input, Operand::A(i), i, 0)).collect();
        for (i, &x) in xs.iter().enumerate() {
            b.mac((0, 0), i as u32, w, x, 1);
            b.mac((0, 1), 10 - i as u32, w, x, 2);
        }
        b.chain(1, vec![(0, 0)], 0);
        b.chain(2, vec![(0, 1)], 1);
        match b.finish() {
            Err(Error::Resource { resource, .. }) => assert!(resource.contains("ifmap")),
            other => panic!("{other:?}"),
        }
    }
}
