//! Compiler output: per-PE micro-op programs, multicast groups and the
//! operand feed streams the global buffer pushes onto the input network.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{Dataflow, LayerSpec};
use crate::memory::PassPlan;

/// Program file format tag. Bumped whenever a field changes meaning.
pub const PROGRAM_FORMAT: &str = "dfsim-program/1";

pub type Reg = u8;
pub type Slot = u8;
pub type Coord = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mac {
    pub w: Reg,
    pub x: Reg,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Send {
    /// Send the slot to the PE above over the local link and clear it.
    PassUp { slot: Slot },
    /// Send the slot over GON to the next address in the PE's write list,
    /// accumulating into the global buffer.
    WriteOut { slot: Slot },
}

impl Send {
    pub fn slot(self) -> Slot {
        match self {
            Send::PassUp { slot } | Send::WriteOut { slot } => slot,
        }
    }
}

/// One FSM word. Every field is optional; an all-empty word is IDLE.
///
/// At most one word issues per PE per cycle. Loads pop the head of the
/// filter/input queue into a register file entry. `recv` pops the local
/// link queue and adds it into a slot through the psum adder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroOp {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_w: Option<Reg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_in: Option<Reg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mac: Option<Mac>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recv: Option<Slot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub send: Option<Send>,
    /// Systolic only: forward the loaded weight to the PE below.
    #[serde(default, skip_serializing_if = "is_false")]
    pub fwd_w: bool,
    /// Systolic only: forward the loaded input to the PE on the right.
    #[serde(default, skip_serializing_if = "is_false")]
    pub fwd_in: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl MicroOp {
    pub fn is_idle(&self) -> bool {
        *self == MicroOp::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeProgram {
    pub row: usize,
    pub col: usize,
    pub ops: Vec<MicroOp>,
    /// Multicast groups this PE accepts, in no particular order.
    pub subscriptions: Vec<u32>,
    /// Global buffer addresses consumed in order by `WriteOut` ops.
    pub out_addrs: Vec<u32>,
}

impl PeProgram {
    pub fn new(row: usize, col: usize) -> Self {
        Self {
            row,
            col,
            ops: Vec::new(),
            subscriptions: Vec::new(),
            out_addrs: Vec::new(),
        }
    }

    pub fn mac_count(&self) -> usize {
        self.ops.iter().filter(|o| o.mac.is_some()).count()
    }

    /// Word at `idx`, growing the stream with IDLE words as needed.
    pub fn at(&mut self, idx: usize) -> &mut MicroOp {
        if self.ops.len() <= idx {
            self.ops.resize(idx + 1, MicroOp::default());
        }
        &mut self.ops[idx]
    }
}

/// Which PE-side queue a multicast delivers into. `Weight` words land in
/// the filter register file, `Input` words in the ifmap register file; a
/// compiler may route either operand through either port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stream {
    Weight,
    Input,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticastGroup {
    pub id: u32,
    pub stream: Stream,
    pub members: Vec<Coord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticastGroupTable {
    pub groups: Vec<MulticastGroup>,
}

impl MulticastGroupTable {
    /// Id of the group with exactly `members` on `stream`, creating it if needed.
    pub fn intern(&mut self, stream: Stream, mut members: Vec<Coord>, index: &mut BTreeMap<(Stream, Vec<Coord>), u32>) -> u32 {
        members.sort_unstable();
        members.dedup();
        if let Some(id) = index.get(&(stream, members.clone())) {
            return *id;
        }
        let id = self.groups.len() as u32;
        index.insert((stream, members.clone()), id);
        self.groups.push(MulticastGroup { id, stream, members });
        id
    }

    pub fn get(&self, id: u32) -> &MulticastGroup {
        &self.groups[id as usize]
    }

    /// Group ids each PE subscribes to.
    pub fn subscriptions(&self) -> BTreeMap<Coord, Vec<u32>> {
        let mut out: BTreeMap<Coord, Vec<u32>> = BTreeMap::new();
        for g in &self.groups {
            for m in &g.members {
                out.entry(*m).or_default().push(g.id);
            }
        }
        out
    }
}

/// Where a fed word comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    /// Primary operand tensor (ifmap or errors) at a flat index.
    A(u32),
    /// Secondary operand tensor (filter, or errors for dilated) at a flat index.
    B(u32),
    /// Structural zero materialized by padding.
    Zero,
}

impl Operand {
    pub fn is_zero(self) -> bool {
        matches!(self, Operand::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedMsg {
    pub group: u32,
    pub src: Operand,
    /// Global buffer word address the value is read from (bank = addr % banks).
    pub gb_addr: u32,
}

/// One processing pass: every program runs concurrently, the pass ends when
/// all of them have finished and their outputs have been committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pass {
    pub programs: Vec<PeProgram>,
    pub groups: MulticastGroupTable,
    /// Feed order of each PE-side queue.
    pub weight_feed: Vec<FeedMsg>,
    pub input_feed: Vec<FeedMsg>,
    /// Stream carried by the wide GIN sub-bus; the other rides the narrow one.
    pub wide: Stream,
    /// Edge-fed systolic array instead of the row/column-ID multicast bus.
    pub systolic: bool,
}

impl Pass {
    pub fn empty(systolic: bool, wide: Stream) -> Self {
        Self {
            programs: Vec::new(),
            groups: MulticastGroupTable::default(),
            weight_feed: Vec::new(),
            input_feed: Vec::new(),
            wide,
            systolic,
        }
    }
}

/// Static counts gathered while compiling, used by the zero-freedom checks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStats {
    pub total_macs: u64,
    pub structural_zero_macs: u64,
    pub pe_sets: usize,
    pub group_factor: usize,
    pub expansion_factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledLayer {
    pub format: String,
    pub layer: LayerSpec,
    pub dataflow: Dataflow,
    pub array: (usize, usize),
    pub plan: PassPlan,
    pub stats: ScheduleStats,
    pub passes: Vec<Pass>,
}

impl CompiledLayer {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: CompiledLayer = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        if c.format != PROGRAM_FORMAT {
            return Err(Error::Format(format!(
                "unsupported program format `{}` (expected `{PROGRAM_FORMAT}`)",
                c.format
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
