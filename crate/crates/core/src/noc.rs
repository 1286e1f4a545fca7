//! On-chip network parameters, multicast ID sizing and ID configuration.
//!
//! The input network (GIN) is a Y-bus feeding one X-bus per PE row. Each
//! X-bus stores a list of row IDs and each PE a list of column IDs; a word
//! tagged `(row_id, col_id)` is accepted by a PE when its X-bus holds the
//! row ID and the PE holds the column ID.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::compiler::program::{Coord, MulticastGroupTable, Stream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    /// GIN wide sub-bus: filters (forward), errors (input gradients),
    /// ifmaps (filter gradients).
    GinWide,
    /// GIN narrow sub-bus: the other operand of each convolution type.
    GinNarrow,
    /// Global output network to the global buffer.
    Gon,
    /// Vertical point-to-point psum links.
    Local,
    /// Neighbour forwarding links of the systolic array.
    Forward,
}

impl Network {
    pub const ALL: [Network; 5] = [
        Network::GinWide,
        Network::GinNarrow,
        Network::Gon,
        Network::Local,
        Network::Forward,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NocConfig {
    pub gin_wide_bits: usize,
    pub gin_narrow_bits: usize,
    pub gon_bits: usize,
    pub local_bits: usize,
    /// Width of one data word on every network.
    pub word_bits: usize,
    pub hop_latency: u64,
    pub row_id_slots: usize,
    pub col_id_slots: usize,
    pub id_bits: usize,
}

impl Default for NocConfig {
    fn default() -> Self {
        Self::ecoflow()
    }
}

impl NocConfig {
    /// Baseline widths: GIN 64 + 16, GON 64, Local 64.
    pub fn eyeriss() -> Self {
        Self {
            gin_wide_bits: 64,
            gin_narrow_bits: 16,
            gon_bits: 64,
            local_bits: 64,
            word_bits: 16,
            hop_latency: 1,
            row_id_slots: 1,
            col_id_slots: 1,
            id_bits: 8,
        }
    }

    /// Extended network: GIN 80 + 32 with multi-ID multicast.
    ///
    /// The ID register file is sized for the shipped layer corpus, which
    /// includes full-array mappings that need more than the per-layer
    /// minimum returned by [`row_ids_required`].
    pub fn ecoflow() -> Self {
        Self {
            gin_wide_bits: 80,
            gin_narrow_bits: 32,
            row_id_slots: 16,
            col_id_slots: 16,
            id_bits: 12,
            ..Self::eyeriss()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("gin_wide_bits", self.gin_wide_bits),
            ("gin_narrow_bits", self.gin_narrow_bits),
            ("gon_bits", self.gon_bits),
            ("local_bits", self.local_bits),
            ("word_bits", self.word_bits),
        ];
        for (name, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("noc.{name} must be > 0")));
            }
        }
        for (name, w) in widths.iter().take(4) {
            if *w < self.word_bits {
                return Err(Error::Config(format!(
                    "noc.{name} ({w}) is narrower than one {}-bit word",
                    self.word_bits
                )));
            }
        }
        if self.hop_latency == 0 {
            return Err(Error::Config("noc.hop_latency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gin_total_bits(&self) -> usize {
        self.gin_wide_bits + self.gin_narrow_bits
    }

    pub fn words_per_cycle(&self, net: Network) -> usize {
        let bits = match net {
            Network::GinWide => self.gin_wide_bits,
            Network::GinNarrow => self.gin_narrow_bits,
            Network::Gon => self.gon_bits,
            Network::Local | Network::Forward => self.local_bits,
        };
        (bits / self.word_bits).max(1)
    }

    /// ID register bits added per PE and per X-bus beyond a single ID.
    pub fn extra_id_bits(&self, rows: usize, cols: usize) -> usize {
        let per_pe = self.col_id_slots.saturating_sub(1) * self.id_bits;
        let per_row = self.row_id_slots.saturating_sub(1) * self.id_bits;
        per_pe * rows * cols + per_row * rows
    }
}

/// Row IDs each X-bus must hold for a `k x k` filter at stride `s`: `ceil(k/s)`.
pub fn row_ids_required(k: usize, s: usize) -> usize {
    k.div_ceil(s)
}

/// Bits per row ID: `ceil(log2(2k - s))`, the number of groups in a row.
pub fn id_bits_required(k: usize, s: usize) -> usize {
    let groups = (2 * k).saturating_sub(s).max(1);
    ceil_log2(groups)
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Cycles to move `payload_bits` over a bus `bus_bits` wide.
pub fn transfer_cycles(payload_bits: usize, bus_bits: usize, hop_latency: u64) -> u64 {
    assert!(bus_bits > 0, "bus width must be > 0");
    payload_bits.div_ceil(bus_bits) as u64 * hop_latency
}

/// Row/column ID register contents realizing a multicast group table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdAssignment {
    /// Row IDs stored by each X-bus, per sub-bus.
    pub row_ids: BTreeMap<(Stream, usize), Vec<u32>>,
    /// Column IDs stored by each PE, per sub-bus.
    pub col_ids: BTreeMap<(Stream, Coord), Vec<u32>>,
    /// Tag assigned to each group id.
    pub tags: BTreeMap<u32, (u32, u32)>,
}

impl IdAssignment {
    /// PEs that accept a word tagged `(row_id, col_id)`.
    pub fn reach(&self, stream: Stream, tag: (u32, u32)) -> Vec<Coord> {
        let mut out: Vec<Coord> = self
            .col_ids
            .iter()
            .filter(|((s, pe), cols)| {
                *s == stream
                    && cols.contains(&tag.1)
                    && self.row_ids.get(&(stream, pe.0)).is_some_and(|r| r.contains(&tag.0))
            })
            .map(|((_, pe), _)| *pe)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn max_row_slots(&self) -> usize {
        self.row_ids.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_col_slots(&self) -> usize {
        self.col_ids.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn bits_used(&self) -> usize {
        let max = self
            .tags
            .values()
            .map(|(r, c)| (*r).max(*c) as usize)
            .max()
            .unwrap_or(0);
        ceil_log2(max + 1)
    }
}

/// Assign ID tags so every group of one stream is reachable exactly.
///
/// Row IDs name distinct sets of rows; column IDs name distinct member sets
/// and are reused between member sets that never share an X-bus.
pub fn configure(groups: &MulticastGroupTable, noc: &NocConfig) -> Result<IdAssignment> {
    let mut asg = IdAssignment::default();
    let mut row_set_ids: BTreeMap<BTreeSet<usize>, u32> = BTreeMap::new();
    let mut member_ids: BTreeMap<(Stream, Vec<Coord>), u32> = BTreeMap::new();
    // column ids already used on each X-bus, per stream
    let mut used_on_row: BTreeMap<(Stream, usize), BTreeSet<u32>> = BTreeMap::new();

    for g in &groups.groups {
        let rows: BTreeSet<usize> = g.members.iter().map(|m| m.0).collect();
        let next = row_set_ids.len() as u32;
        let rid = *row_set_ids.entry(rows.clone()).or_insert(next);
        let key = (g.stream, g.members.clone());
        let cid = if let Some(c) = member_ids.get(&key) {
            *c
        } else {
            let mut c = 0u32;
            while rows
                .iter()
                .any(|r| used_on_row.get(&(g.stream, *r)).is_some_and(|s| s.contains(&c)))
            {
                c += 1;
            }
            for r in &rows {
                used_on_row.entry((g.stream, *r)).or_default().insert(c);
            }
            member_ids.insert(key, c);
            c
        };
        asg.tags.insert(g.id, (rid, cid));
        for r in &rows {
            let list = asg.row_ids.entry((g.stream, *r)).or_default();
            if !list.contains(&rid) {
                list.push(rid);
            }
        }
        for m in &g.members {
            let list = asg.col_ids.entry((g.stream, *m)).or_default();
            if !list.contains(&cid) {
                list.push(cid);
            }
        }
    }

    let row_slots = asg.max_row_slots();
    let col_slots = asg.max_col_slots();
    if row_slots > noc.row_id_slots {
        return Err(Error::Noc(format!(
            "an X-bus needs {row_slots} row IDs but only {} slots are configured",
            noc.row_id_slots
        )));
    }
    if col_slots > noc.col_id_slots {
        return Err(Error::Noc(format!(
            "a PE needs {col_slots} column IDs but only {} slots are configured",
            noc.col_id_slots
        )));
    }
    let bits = asg.bits_used();
    if bits > noc.id_bits {
        return Err(Error::Noc(format!(
            "IDs need {bits} bits but registers are {} bits wide",
            noc.id_bits
        )));
    }
    Ok(asg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_sizing_matches_reported_networks() {
        // ResNet-50: 7x7 stride 2 -> four 4-bit IDs
        assert_eq!(row_ids_required(7, 2), 4);
        assert_eq!(id_bits_required(7, 2), 4);
        // AlexNet: slots from 5x5 s1, width from 11x11 s4 -> five 5-bit IDs
        assert_eq!(row_ids_required(5, 1), 5);
        assert_eq!(id_bits_required(11, 4), 5);
        assert_eq!(row_ids_required(1, 1), 1);
        assert_eq!(id_bits_required(1, 1), 0);
    }

    #[test]
    fn transfer_ceiling() {
        assert_eq!(transfer_cycles(64, 64, 1), 1);
        assert_eq!(transfer_cycles(80, 80, 1), 1);
        assert_eq!(transfer_cycles(128, 64, 1), 2);
    }

    #[test]
    fn gin_is_forty_percent_wider() {
        let (e, x) = (NocConfig::eyeriss(), NocConfig::ecoflow());
        assert_eq!((e.gin_total_bits(), x.gin_total_bits()), (80, 112));
        assert_eq!(x.gin_total_bits() * 10, e.gin_total_bits() * 14);
        assert_eq!((e.gon_bits, e.local_bits), (x.gon_bits, x.local_bits));
    }

    #[test]
    fn broadcast_group_reaches_everyone() {
        let mut t = MulticastGroupTable::default();
        let mut idx = BTreeMap::new();
        let all: Vec<Coord> = (0..3).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
        let id = t.intern(Stream::Weight, all.clone(), &mut idx);
        let a = configure(&t, &NocConfig::ecoflow()).unwrap();
        assert_eq!(a.reach(Stream::Weight, a.tags[&id]), all);
    }

    #[test]
    fn capacity_error_names_requirement() {
        let mut t = MulticastGroupTable::default();
        let mut idx = BTreeMap::new();
        for c in 0..3 {
            t.intern(Stream::Input, vec![(0, 0), (0, c + 1)], &mut idx);
        }
        let mut noc = NocConfig::eyeriss();
        noc.col_id_slots = 2;
        let err = configure(&t, &noc).unwrap_err();
        assert!(err.to_string().contains("needs 3 column IDs"), "{err}");
    }
}
